//! Simulate 40 s of mixed traffic and draw the time-space diagram of each
//! lane with its light state.
//!
//!     cargo run --example time_space_diagram -- diagram.svg

use dmiqp::plot::trajectory_svg;
use dmiqp::sim::{run, SimConfig};

fn main() -> dmiqp::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "time_space.svg".into());
    let cfg = SimConfig {
        duration: 80,
        seed: 3,
        ..SimConfig::default()
    };
    let psi = cfg.psi;
    let result = run(cfg)?;
    std::fs::write(&out, trajectory_svg(&result.trajectory, Some(psi))?)?;
    println!("{} vehicles exited; wrote {out}", result.summary.exited);
    Ok(())
}
