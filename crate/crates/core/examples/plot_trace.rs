//! Render the relaxed iterates of the worked example to an SVG file.
//!
//!     cargo run --example plot_trace -- trace.svg

use dmiqp::model::example1;
use dmiqp::plot::trace_svg;
use dmiqp::tighten::{solve_centralized, TightenConfig};

fn main() -> dmiqp::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "example1_trace.svg".into());
    let problem = example1();
    let report = solve_centralized(&problem, &TightenConfig::default())?;
    let cols: Vec<Vec<usize>> = problem
        .agents
        .iter()
        .map(|a| a.binary_cols.clone())
        .collect();
    std::fs::write(&out, trace_svg(&report, Some(&cols))?)?;
    println!("wrote {out}");
    Ok(())
}
