//! Enumerate every binary assignment of the worked example, solve the
//! fixed-binary QP at each leaf and compare with the tightening heuristic.
//!
//!     cargo run --example exhaustive_oracle

use dmiqp::model::example1;
use dmiqp::oracle::solve_exhaustive;
use dmiqp::tighten::{solve_centralized, TightenConfig};

fn main() -> dmiqp::Result<()> {
    let problem = example1();
    let oracle = solve_exhaustive(&problem, 1 << 20)?;
    println!("{} leaves", oracle.enumerated);
    for leaf in &oracle.leaves {
        let obj = if leaf.feasible {
            format!("{:.6}", leaf.objective)
        } else {
            "infeasible".into()
        };
        println!("  {:?} {obj}", leaf.assignment);
    }
    println!(
        "best {:?} at {:.6}",
        oracle.best_binaries(),
        oracle.best_objective
    );

    let heur = solve_centralized(&problem, &TightenConfig::default())?;
    let same = oracle.best_binaries().as_deref() == Some(&heur.flat_binaries()[..]);
    println!(
        "heuristic {:?} at {:.6}, matches oracle: {same}",
        heur.flat_binaries(),
        heur.objective
    );
    Ok(())
}
