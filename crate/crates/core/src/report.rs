use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::model::{MiqpProblem, RowRef, Solution, SolveStatus};

/// Version of the JSON layout written by [`SolveReport::to_json`].
pub const REPORT_VERSION: u32 = 1;

/// Key under which a big-M entry's value is recorded: `agent/row/col`, with
/// local rows written `L<k>` and coupling rows `C<k>`.
pub fn m_key(agent: usize, row: RowRef, col: usize) -> String {
    match row {
        RowRef::Local(k) => format!("{agent}/L{k}/{col}"),
        RowRef::Coupling(k) => format!("{agent}/C{k}/{col}"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t: usize,
    pub obj: f64,
    pub int_dist: f64,
    #[serde(rename = "M")]
    pub m: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primal_res: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_res: Option<f64>,
    /// Per-agent relaxed iterate after this iteration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Centralized,
    Distributed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub version: u32,
    pub mode: Mode,
    pub status: SolveStatus,
    pub objective: f64,
    pub binaries: Vec<Vec<u8>>,
    pub x: Vec<Vec<f64>>,
    /// Whether the tightening loop met its exit test before `t_max`.
    pub converged: bool,
    /// Tightening iterations.
    pub iterations: usize,
    /// Iterations of the fixed-binary stage (1 for a single centralized QP).
    pub stage2_iterations: usize,
    pub trace: Vec<TraceEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stage2_trace: Vec<TraceEntry>,
}

impl SolveReport {
    pub(crate) fn empty(mode: Mode, status: SolveStatus) -> Self {
        Self {
            version: REPORT_VERSION,
            mode,
            status,
            objective: f64::NAN,
            binaries: Vec::new(),
            x: Vec::new(),
            converged: false,
            iterations: 0,
            stage2_iterations: 0,
            trace: Vec::new(),
            stage2_trace: Vec::new(),
        }
    }

    pub fn solution(&self) -> Solution {
        Solution {
            x: self
                .x
                .iter()
                .map(|v| DVector::from_vec(v.clone()))
                .collect(),
            binaries: self.binaries.clone(),
            objective: self.objective,
            status: self.status,
        }
    }

    pub fn flat_binaries(&self) -> Vec<u8> {
        self.binaries.iter().flatten().copied().collect()
    }

    /// Flattened continuous part: every non-binary column in agent order.
    pub fn continuous(&self, p: &MiqpProblem) -> Vec<f64> {
        self.x
            .iter()
            .zip(&p.agents)
            .flat_map(|(x, blk)| {
                x.iter()
                    .enumerate()
                    .filter(|(j, _)| !blk.binary_cols.contains(j))
                    .map(|(_, v)| *v)
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// The value sequence of each big-M entry across the tightening trace.
    pub fn m_sequences(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for e in &self.trace {
            for (k, v) in &e.m {
                out.entry(k.clone()).or_default().push(*v);
            }
        }
        out
    }

    /// True when no recorded big-M value ever increases.
    pub fn m_non_increasing(&self) -> bool {
        self.m_sequences()
            .values()
            .all(|s| s.windows(2).all(|w| w[1] <= w[0]))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Snapshot of every big-M value in `p`.
pub(crate) fn m_snapshot(p: &MiqpProblem) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (i, blk) in p.agents.iter().enumerate() {
        for e in &blk.bigm {
            out.insert(m_key(i, e.row, e.col), e.m_current);
        }
    }
    out
}

/// Largest distance of any binary column value to `{0, 1}`.
pub(crate) fn int_dist(p: &MiqpProblem, x: &[DVector<f64>]) -> f64 {
    p.agents
        .iter()
        .zip(x)
        .flat_map(|(blk, xi)| blk.binary_cols.iter().map(move |&c| xi[c]))
        .map(|y| y.abs().min((1.0 - y).abs()))
        .fold(0.0, f64::max)
}

pub(crate) fn to_rows(x: &[DVector<f64>]) -> Vec<Vec<f64>> {
    x.iter().map(|v| v.iter().copied().collect()).collect()
}
