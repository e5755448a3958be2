//! Solve the four-agent worked example with the centralized tightening loop
//! and print the relaxed trajectory of each iteration.
//!
//!     cargo run --example centralized_example1

use dmiqp::model::example1;
use dmiqp::tighten::{solve_centralized, TightenConfig};

fn main() -> dmiqp::Result<()> {
    let problem = example1();
    let report = solve_centralized(&problem, &TightenConfig::default())?;

    println!("{:>4} {:>12} {:>10}", "t", "objective", "int dist");
    for e in &report.trace {
        println!("{:>4} {:>12.6} {:>10.2e}", e.t, e.obj, e.int_dist);
    }
    println!();
    println!("status      {:?}", report.status);
    println!("iterations  {}", report.iterations);
    println!("objective   {:.6}", report.objective);
    println!("binaries    {:?}", report.flat_binaries());
    println!("continuous  {:?}", report.continuous(&problem));
    println!("M never increased: {}", report.m_non_increasing());
    for (key, seq) in report.m_sequences() {
        println!("  M[{key}]: {:.4} -> {:.4}", seq[0], seq[seq.len() - 1]);
    }
    Ok(())
}
