use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SimSummary, VehicleRecord};
use crate::error::Result;

/// One row of the trajectory file. Rows with `kind == "light"` carry only the
/// lane's light state; vehicle rows (`cav`/`hdv`) carry the vehicle state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: i64,
    pub time: f64,
    pub kind: String,
    pub id: Option<u64>,
    pub lane: usize,
    pub light: u8,
    pub p: Option<f64>,
    pub v: Option<f64>,
    pub u: Option<f64>,
}

pub fn write_records_csv(path: &Path, records: &[VehicleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record([
            "id",
            "kind",
            "lane",
            "t_enter",
            "t_exit",
            "travel_time",
            "total_accel",
        ])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_json(path: &Path, summary: &SimSummary) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(summary)? + "\n")?;
    Ok(())
}

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
