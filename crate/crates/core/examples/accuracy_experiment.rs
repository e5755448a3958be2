//! Small version of the accuracy experiment: random instances solved by the
//! heuristic and by exhaustive enumeration. Pass the instance count as the
//! first argument (default 20).
//!
//!     cargo run --example accuracy_experiment -- 50

use dmiqp::oracle::{accuracy_experiment, AccuracyConfig};

fn main() -> dmiqp::Result<()> {
    let count = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(20);
    let cfg = AccuracyConfig::new(42, count, 4);
    let report = accuracy_experiment(&cfg)?;
    report.write_csv(std::io::stdout())?;
    match report.match_fraction() {
        Some(f) => eprintln!("matched {:.1}% of {count}", 100.0 * f),
        None => eprintln!("no instances"),
    }
    if let Some(gap) = report.mean_gap_mismatch() {
        eprintln!("mean objective gap on misses: {gap:.4}");
    }
    Ok(())
}
