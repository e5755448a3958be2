//! Short receding-horizon run of the mixed-traffic simulator. Arguments:
//! penetration rate (default 0.5) and number of steps (default 60).
//!
//!     cargo run --example closed_loop_sim -- 1.0 120

use dmiqp::sim::{run, SimConfig};

fn main() -> dmiqp::Result<()> {
    let mut args = std::env::args().skip(1);
    let penetration = args.next().and_then(|a| a.parse().ok()).unwrap_or(0.5);
    let duration = args.next().and_then(|a| a.parse().ok()).unwrap_or(60);
    let cfg = SimConfig {
        penetration,
        duration,
        record_trajectory: false,
        ..SimConfig::default()
    };
    let result = run(cfg)?;
    println!("{}", serde_json::to_string_pretty(&result.summary)?);
    for inc in result.incidents.iter().take(10) {
        println!("{inc:?}");
    }
    Ok(())
}
