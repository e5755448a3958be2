//! Multi-agent MIQP in standard form.
//!
//! Each agent `i` owns a variable block `x_i` with objective
//! `x_i' Q_i x_i / 2 + q_i' x_i + c_i`, local rows `A_i x_i <= b_i`, variable
//! bounds, and a column slice `C_i` of the shared coupling rows
//! `sum_i C_i x_i <= d`. Equalities are stored as pairs of opposite `<=` rows.
//!
//! Big-M rows keep their current `M` inside the matrices: a [`Polarity::Delta`]
//! entry `phi(x) <= M * delta` is stored as coefficient `-M` on the binary
//! column, a [`Polarity::OneMinusDelta`] entry `phi(x) <= M * (1 - delta)` as
//! coefficient `+M` with `+M` folded into the right-hand side.

mod io;

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{problem_from_json, problem_to_json, read_problem, write_problem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// `phi(x) <= M * delta`: enforced when the binary is 0.
    Delta,
    /// `phi(x) <= M * (1 - delta)`: enforced when the binary is 1.
    OneMinusDelta,
}

impl Polarity {
    /// Coefficient stored on the binary column for a given `M`.
    pub fn coefficient(self, m: f64) -> f64 {
        match self {
            Polarity::Delta => -m,
            Polarity::OneMinusDelta => m,
        }
    }

    /// Amount of `M` folded into the right-hand side.
    pub fn rhs_offset(self, m: f64) -> f64 {
        match self {
            Polarity::Delta => 0.0,
            Polarity::OneMinusDelta => m,
        }
    }

    /// Activation level of the relaxation: how "on" the big-M slack is.
    pub fn activation(self, y: f64) -> f64 {
        match self {
            Polarity::Delta => y,
            Polarity::OneMinusDelta => 1.0 - y,
        }
    }
}

/// A row owned by an agent: one of its local rows or a shared coupling row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RowRef {
    Local(usize),
    Coupling(usize),
}

impl fmt::Display for RowRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowRef::Local(r) => write!(f, "local row {r}"),
            RowRef::Coupling(r) => write!(f, "coupling row {r}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BigMEntry {
    pub row: RowRef,
    pub col: usize,
    pub polarity: Polarity,
    pub m_current: f64,
    pub m_initial: f64,
}

impl BigMEntry {
    pub fn new(row: RowRef, col: usize, polarity: Polarity, m: f64) -> Self {
        Self {
            row,
            col,
            polarity,
            m_current: m,
            m_initial: m,
        }
    }
}

/// A row moved into the objective as `weight * max(0, row violation)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftRow {
    pub row: RowRef,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentBlock {
    pub q_mat: DMatrix<f64>,
    pub q_vec: DVector<f64>,
    pub constant: f64,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// This agent's columns of the coupling rows (`m_c x n_i`).
    pub c: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub binary_cols: Vec<usize>,
    /// Former binary columns after [`MiqpProblem::relax`]; continuous in `[0, 1]`.
    pub relaxed_cols: Vec<usize>,
    pub bigm: Vec<BigMEntry>,
    pub soft: Vec<SoftRow>,
}

impl AgentBlock {
    /// An agent with `n` unbounded continuous variables, zero objective and no rows.
    pub fn new(n: usize, coupling_rows: usize) -> Self {
        Self {
            q_mat: DMatrix::zeros(n, n),
            q_vec: DVector::zeros(n),
            constant: 0.0,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            c: DMatrix::zeros(coupling_rows, n),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
            binary_cols: Vec::new(),
            relaxed_cols: Vec::new(),
            bigm: Vec::new(),
            soft: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.q_vec.len()
    }

    pub fn m_local(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q_mat * x)) + self.q_vec.dot(x) + self.constant
    }

    /// Append a local row `coeffs . x <= rhs`; returns its index.
    pub fn push_row(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        let n = self.n();
        let m = self.a.nrows();
        let mut a = self.a.clone().insert_row(m, 0.0);
        for &(j, v) in coeffs {
            debug_assert!(j < n);
            a[(m, j)] += v;
        }
        self.a = a;
        self.b = self.b.clone().insert_row(m, rhs);
        m
    }

    /// Mark `col` binary with bounds `[0, 1]`.
    pub fn mark_binary(&mut self, col: usize) {
        self.lower[col] = 0.0;
        self.upper[col] = 1.0;
        if !self.binary_cols.contains(&col) {
            self.binary_cols.push(col);
        }
    }

    /// Columns that big-M entries may reference: binaries and relaxed binaries.
    pub fn switch_cols(&self) -> impl Iterator<Item = usize> + '_ {
        self.binary_cols
            .iter()
            .chain(self.relaxed_cols.iter())
            .copied()
    }

    /// Rows of this agent holding at least one big-M entry, ordered.
    pub fn bigm_rows(&self) -> BTreeSet<RowRef> {
        self.bigm.iter().map(|e| e.row).collect()
    }

    /// Coupling rows with a nonzero coefficient in this agent's slice.
    pub fn touched_coupling_rows(&self) -> Vec<usize> {
        (0..self.c.nrows())
            .filter(|&r| self.c.row(r).iter().any(|v| *v != 0.0))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiqpProblem {
    pub agents: Vec<AgentBlock>,
    pub d: DVector<f64>,
    /// Number of coupling equalities represented as paired rows.
    pub coupling_eq_count: usize,
}

impl MiqpProblem {
    pub fn new(agents: Vec<AgentBlock>, d: DVector<f64>) -> Self {
        Self {
            agents,
            d,
            coupling_eq_count: 0,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn m_coupling(&self) -> usize {
        self.d.len()
    }

    pub fn total_vars(&self) -> usize {
        self.agents.iter().map(AgentBlock::n).sum()
    }

    pub fn total_binaries(&self) -> usize {
        self.agents.iter().map(|a| a.binary_cols.len()).sum()
    }

    pub fn objective(&self, x: &[DVector<f64>]) -> f64 {
        self.agents
            .iter()
            .zip(x)
            .map(|(a, xi)| a.objective(xi))
            .sum()
    }

    /// Objective plus the weighted violation of every soft row.
    pub fn penalized_objective(&self, x: &[DVector<f64>]) -> f64 {
        let mut cx = DVector::zeros(self.m_coupling());
        for (blk, xi) in self.agents.iter().zip(x) {
            cx += &blk.c * xi;
        }
        let mut total = self.objective(x);
        for (blk, xi) in self.agents.iter().zip(x) {
            for s in &blk.soft {
                let viol = match s.row {
                    RowRef::Local(r) => blk.a.row(r).transpose().dot(xi) - blk.b[r],
                    RowRef::Coupling(r) => cx[r] - self.d[r],
                };
                total += s.weight * viol.max(0.0);
            }
        }
        total
    }

    /// Set the `M` of one big-M entry, keeping coefficient and right-hand side in sync.
    pub fn set_m(&mut self, agent: usize, entry: usize, m_new: f64) {
        let e = self.agents[agent].bigm[entry].clone();
        let shift = e.polarity.rhs_offset(m_new) - e.polarity.rhs_offset(e.m_current);
        let coeff = e.polarity.coefficient(m_new);
        match e.row {
            RowRef::Local(r) => {
                let blk = &mut self.agents[agent];
                blk.a[(r, e.col)] = coeff;
                blk.b[r] += shift;
            }
            RowRef::Coupling(r) => {
                self.agents[agent].c[(r, e.col)] = coeff;
                self.d[r] += shift;
            }
        }
        self.agents[agent].bigm[entry].m_current = m_new;
    }

    /// Put every big-M entry back to its initial `M`.
    pub fn restore_initial_m(&mut self) {
        for i in 0..self.agents.len() {
            for k in 0..self.agents[i].bigm.len() {
                let m0 = self.agents[i].bigm[k].m_initial;
                if self.agents[i].bigm[k].m_current != m0 {
                    self.set_m(i, k, m0);
                }
            }
        }
    }

    /// Agents sharing at least one nonzero coupling row, per agent, ordered.
    pub fn neighbor_map(&self) -> Vec<Vec<usize>> {
        let touched: Vec<BTreeSet<usize>> = self
            .agents
            .iter()
            .map(|a| a.touched_coupling_rows().into_iter().collect())
            .collect();
        (0..self.agents.len())
            .map(|i| {
                (0..self.agents.len())
                    .filter(|&j| j != i && !touched[i].is_disjoint(&touched[j]))
                    .collect()
            })
            .collect()
    }

    /// Structural check. Returns every violation found; empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.agents.is_empty() {
            out.push(Violation::problem(ViolationKind::Empty, "no agents"));
        }
        let mc = self.d.len();
        if self.d.iter().any(|v| v.is_nan()) {
            out.push(Violation::problem(
                ViolationKind::NonFinite,
                "d contains NaN",
            ));
        }
        if self.coupling_eq_count * 2 > mc {
            out.push(Violation::problem(
                ViolationKind::Dimension,
                format!(
                    "coupling_eq_count {} needs {} paired rows but only {mc} coupling rows exist",
                    self.coupling_eq_count,
                    2 * self.coupling_eq_count
                ),
            ));
        }
        for (i, blk) in self.agents.iter().enumerate() {
            validate_agent(i, blk, mc, &mut out);
        }
        out
    }

    /// Structural validation as a `Result`.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }

    /// Drop integrality: binary columns become continuous in `[0, 1]`.
    pub fn relax(&self) -> MiqpProblem {
        let mut p = self.clone();
        for blk in &mut p.agents {
            let cols = std::mem::take(&mut blk.binary_cols);
            for c in cols {
                blk.lower[c] = 0.0;
                blk.upper[c] = 1.0;
                if !blk.relaxed_cols.contains(&c) {
                    blk.relaxed_cols.push(c);
                }
            }
        }
        p
    }

    /// Check a candidate against every local, coupling, bound and integrality
    /// condition, with big-M rows evaluated at their initial `M`.
    pub fn check_feasible(&self, s: &Solution, tol: f64) -> Result<FeasibilityReport> {
        if s.x.len() != self.agents.len() {
            return Err(Error::Dimension(format!(
                "solution has {} agent blocks, problem has {}",
                s.x.len(),
                self.agents.len()
            )));
        }
        for (i, (blk, xi)) in self.agents.iter().zip(&s.x).enumerate() {
            if xi.len() != blk.n() {
                return Err(Error::Dimension(format!(
                    "agent {i}: solution has {} entries, block has {}",
                    xi.len(),
                    blk.n()
                )));
            }
        }
        let mut p = self.clone();
        p.restore_initial_m();

        let mut worst: Option<Infeasibility> = None;
        let mut note = |kind: InfeasibilityKind, amount: f64| {
            if amount > worst.as_ref().map_or(0.0, |w| w.amount) {
                worst = Some(Infeasibility { kind, amount });
            }
        };
        for (i, (blk, xi)) in p.agents.iter().zip(&s.x).enumerate() {
            let soft: BTreeSet<RowRef> = blk.soft.iter().map(|s| s.row).collect();
            let ax = &blk.a * xi;
            for r in 0..blk.m_local() {
                if !soft.contains(&RowRef::Local(r)) {
                    note(
                        InfeasibilityKind::LocalRow { agent: i, row: r },
                        ax[r] - blk.b[r],
                    );
                }
            }
            for j in 0..blk.n() {
                note(
                    InfeasibilityKind::Bound { agent: i, col: j },
                    (blk.lower[j] - xi[j]).max(xi[j] - blk.upper[j]),
                );
            }
            for &j in &blk.binary_cols {
                let v = xi[j];
                note(
                    InfeasibilityKind::Integrality { agent: i, col: j },
                    v.abs().min((1.0 - v).abs()),
                );
            }
        }
        let soft_coupling: BTreeSet<usize> = p
            .agents
            .iter()
            .flat_map(|a| a.soft.iter())
            .filter_map(|s| match s.row {
                RowRef::Coupling(r) => Some(r),
                RowRef::Local(_) => None,
            })
            .collect();
        let mut cx = DVector::zeros(p.m_coupling());
        for (blk, xi) in p.agents.iter().zip(&s.x) {
            cx += &blk.c * xi;
        }
        for r in 0..p.m_coupling() {
            if !soft_coupling.contains(&r) {
                note(InfeasibilityKind::CouplingRow { row: r }, cx[r] - p.d[r]);
            }
        }
        let feasible = worst.as_ref().map_or(true, |w| w.amount <= tol);
        Ok(FeasibilityReport { feasible, worst })
    }
}

fn validate_agent(i: usize, blk: &AgentBlock, mc: usize, out: &mut Vec<Violation>) {
    let n = blk.q_vec.len();
    let dim = |msg: String| Violation::agent(i, ViolationKind::Dimension, msg);
    let before = out.len();
    if blk.q_mat.nrows() != n || blk.q_mat.ncols() != n {
        out.push(dim(format!(
            "Q is {}x{}, expected {n}x{n}",
            blk.q_mat.nrows(),
            blk.q_mat.ncols()
        )));
    }
    if blk.a.ncols() != n || blk.a.nrows() != blk.b.len() {
        out.push(dim(format!(
            "A is {}x{} with b of length {}, expected ?x{n} matching b",
            blk.a.nrows(),
            blk.a.ncols(),
            blk.b.len()
        )));
    }
    if blk.c.nrows() != mc || blk.c.ncols() != n {
        out.push(dim(format!(
            "C is {}x{}, expected {mc}x{n}",
            blk.c.nrows(),
            blk.c.ncols()
        )));
    }
    if blk.lower.len() != n || blk.upper.len() != n {
        out.push(dim(format!(
            "bounds have lengths {}/{}, expected {n}",
            blk.lower.len(),
            blk.upper.len()
        )));
    }
    if out.len() > before {
        return;
    }

    let finite_data = blk.q_mat.iter().all(|v| v.is_finite())
        && blk.q_vec.iter().all(|v| v.is_finite())
        && blk.a.iter().all(|v| v.is_finite())
        && blk.c.iter().all(|v| v.is_finite())
        && blk.b.iter().all(|v| !v.is_nan())
        && blk.constant.is_finite();
    if !finite_data {
        out.push(Violation::agent(
            i,
            ViolationKind::NonFinite,
            "non-finite matrix or vector entry",
        ));
    }

    // Symmetry and PSD of Q.
    let scale = blk.q_mat.amax();
    let asym = (&blk.q_mat - blk.q_mat.transpose()).amax();
    if asym > 1e-9 * scale.max(1.0) {
        out.push(Violation::agent(
            i,
            ViolationKind::NotSymmetric,
            format!("Q asymmetric by {asym:e}"),
        ));
    } else if n > 0 && finite_data && scale > 0.0 {
        let sym = (&blk.q_mat + blk.q_mat.transpose()) * 0.5;
        let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
        if min_eig < -1e-8 * scale {
            out.push(Violation::agent(
                i,
                ViolationKind::NotPsd,
                format!("Q has eigenvalue {min_eig}"),
            ));
        }
    }

    for j in 0..n {
        if blk.lower[j].is_nan() || blk.upper[j].is_nan() || blk.lower[j] > blk.upper[j] {
            out.push(Violation::agent(
                i,
                ViolationKind::Bounds,
                format!("column {j} has bounds [{}, {}]", blk.lower[j], blk.upper[j]),
            ));
        }
    }

    let mut seen = BTreeSet::new();
    for &c in blk.binary_cols.iter().chain(&blk.relaxed_cols) {
        if c >= n {
            out.push(Violation::agent(
                i,
                ViolationKind::Binary,
                format!("binary column {c} out of range"),
            ));
        } else if !seen.insert(c) {
            out.push(Violation::agent(
                i,
                ViolationKind::Binary,
                format!("column {c} listed twice as binary"),
            ));
        } else if blk.lower[c] != 0.0 || blk.upper[c] != 1.0 {
            out.push(Violation::agent(
                i,
                ViolationKind::Binary,
                format!(
                    "binary column {c} has bounds [{}, {}], expected [0, 1]",
                    blk.lower[c], blk.upper[c]
                ),
            ));
        }
    }

    let mut pairs = BTreeSet::new();
    for (k, e) in blk.bigm.iter().enumerate() {
        let reg =
            |msg: String| Violation::agent(i, ViolationKind::BigM, format!("entry {k}: {msg}"));
        let row_ok = match e.row {
            RowRef::Local(r) => r < blk.m_local(),
            RowRef::Coupling(r) => r < mc,
        };
        if !row_ok {
            out.push(reg(format!("{} out of range", e.row)));
            continue;
        }
        if e.col >= n || !seen.contains(&e.col) {
            out.push(reg(format!("column {} is not binary", e.col)));
            continue;
        }
        if !pairs.insert((e.row, e.col)) {
            out.push(reg(format!("duplicate ({}, column {})", e.row, e.col)));
        }
        if !(e.m_current > 0.0 && e.m_current <= e.m_initial && e.m_initial.is_finite()) {
            out.push(reg(format!(
                "M must satisfy 0 < M_current <= M_initial, got {} / {}",
                e.m_current, e.m_initial
            )));
            continue;
        }
        let stored = match e.row {
            RowRef::Local(r) => blk.a[(r, e.col)],
            RowRef::Coupling(r) => blk.c[(r, e.col)],
        };
        let expected = e.polarity.coefficient(e.m_current);
        if (stored - expected).abs() > 1e-12 * e.m_current.max(1.0) {
            out.push(reg(format!(
                "coefficient {stored} on column {} does not match {expected}",
                e.col
            )));
        }
    }

    let bigm_rows = blk.bigm_rows();
    for s in &blk.soft {
        let row_ok = match s.row {
            RowRef::Local(r) => r < blk.m_local(),
            RowRef::Coupling(r) => r < mc,
        };
        if !row_ok || !(s.weight > 0.0) || bigm_rows.contains(&s.row) {
            out.push(Violation::agent(
                i,
                ViolationKind::Soft,
                format!(
                    "soft {} with weight {} is out of range, non-positive, or a big-M row",
                    s.row, s.weight
                ),
            ));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationKind {
    Empty,
    Dimension,
    NonFinite,
    NotSymmetric,
    NotPsd,
    Bounds,
    Binary,
    BigM,
    Soft,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub agent: Option<usize>,
    pub kind: ViolationKind,
    pub detail: String,
}

impl Violation {
    fn problem(kind: ViolationKind, detail: impl Into<String>) -> Self {
        Self {
            agent: None,
            kind,
            detail: detail.into(),
        }
    }

    fn agent(i: usize, kind: ViolationKind, detail: impl Into<String>) -> Self {
        Self {
            agent: Some(i),
            kind,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.agent {
            Some(i) => write!(f, "agent {i}: {:?}: {}", self.kind, self.detail),
            None => write!(f, "{:?}: {}", self.kind, self.detail),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolveStatus {
    /// Tightening converged and the continuous part is optimal for the recovered binaries.
    OptimalMi,
    /// A feasible mixed-integer point, without the convergence guarantee above.
    FeasibleMi,
    /// Only a relaxed iterate is available.
    RelaxedOnly,
    Infeasible,
    MaxIter,
}

impl SolveStatus {
    pub fn is_mixed_integer(self) -> bool {
        matches!(self, SolveStatus::OptimalMi | SolveStatus::FeasibleMi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    /// Full per-agent vectors, binary columns included.
    pub x: Vec<DVector<f64>>,
    /// Per-agent values of `binary_cols`, in that order.
    pub binaries: Vec<Vec<u8>>,
    pub objective: f64,
    pub status: SolveStatus,
}

impl Solution {
    /// Flatten the binary assignment in agent order.
    pub fn flat_binaries(&self) -> Vec<u8> {
        self.binaries.iter().flatten().copied().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InfeasibilityKind {
    LocalRow { agent: usize, row: usize },
    CouplingRow { row: usize },
    Bound { agent: usize, col: usize },
    Integrality { agent: usize, col: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Infeasibility {
    pub kind: InfeasibilityKind,
    pub amount: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Largest positive violation, if any.
    pub worst: Option<Infeasibility>,
}

/// The four-agent worked example: `min x'x + q'x` with `x <= [5, 12, 9, 6]`,
/// `x - M delta <= 0`, `sum x <= 20`, `sum delta <= 3`, agent `i` owning
/// `(x_i, delta_i)`.
pub fn example1() -> MiqpProblem {
    const Q: [f64; 4] = [-30.0, -20.0, -24.0, -10.0];
    const UB: [f64; 4] = [5.0, 12.0, 9.0, 6.0];
    const M: f64 = 1e3;
    let agents = (0..4)
        .map(|i| {
            let mut blk = AgentBlock::new(2, 2);
            blk.q_mat[(0, 0)] = 2.0;
            blk.q_vec[0] = Q[i];
            blk.mark_binary(1);
            blk.push_row(&[(0, 1.0)], UB[i]);
            let r = blk.push_row(&[(0, 1.0), (1, -M)], 0.0);
            blk.bigm
                .push(BigMEntry::new(RowRef::Local(r), 1, Polarity::Delta, M));
            blk.c[(0, 0)] = 1.0;
            blk.c[(1, 1)] = 1.0;
            blk
        })
        .collect();
    MiqpProblem::new(agents, DVector::from_vec(vec![20.0, 3.0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sol(x: [f64; 4], delta: [f64; 4]) -> Solution {
        Solution {
            x: (0..4)
                .map(|i| DVector::from_vec(vec![x[i], delta[i]]))
                .collect(),
            binaries: delta.iter().map(|d| vec![*d as u8]).collect(),
            objective: 0.0,
            status: SolveStatus::FeasibleMi,
        }
    }

    #[test]
    fn example1_is_valid() {
        let p = example1();
        assert!(p.validate().is_empty(), "{:?}", p.validate());
        assert_eq!(p.total_binaries(), 4);
        assert_eq!(p.m_coupling(), 2);
    }

    #[test]
    fn negative_eigenvalue_is_one_psd_violation() {
        let mut p = example1();
        p.agents[2].q_mat[(0, 0)] = -1.0;
        let v = p.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::NotPsd);
        assert_eq!(v[0].agent, Some(2));
    }

    #[test]
    fn bigm_on_continuous_column_is_registry_violation() {
        let mut p = example1();
        p.agents[0].bigm[0].col = 0;
        let v = p.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::BigM);
    }

    #[test]
    fn duplicate_bigm_and_bad_m_are_reported() {
        let mut p = example1();
        let e = p.agents[1].bigm[0].clone();
        p.agents[1].bigm.push(e);
        p.agents[3].bigm[0].m_current = 2e3;
        let kinds: Vec<_> = p.validate().iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::BigM, ViolationKind::BigM]);
    }

    #[test]
    fn dimension_mismatch_detected() {
        let mut p = example1();
        p.agents[0].c = DMatrix::zeros(3, 2);
        let v = p.validate();
        assert_eq!(v[0].kind, ViolationKind::Dimension);
    }

    #[test]
    fn relax_keeps_data_and_opens_binaries() {
        let p = example1();
        let r = p.relax();
        assert_eq!(p.total_binaries(), 4);
        assert_eq!(r.total_binaries(), 0);
        for blk in &r.agents {
            assert_eq!(blk.relaxed_cols, vec![1]);
            assert_eq!((blk.lower[1], blk.upper[1]), (0.0, 1.0));
        }
        assert!(r.validate().is_empty());
        assert_eq!(r.relax(), r);
    }

    #[test]
    fn relax_without_binaries_is_identity() {
        let mut blk = AgentBlock::new(2, 0);
        blk.q_mat[(0, 0)] = 1.0;
        let p = MiqpProblem::new(vec![blk], DVector::zeros(0));
        assert_eq!(p.relax(), p);
    }

    #[test]
    fn relax_all_binary_is_box_qp() {
        let mut blk = AgentBlock::new(3, 0);
        for j in 0..3 {
            blk.mark_binary(j);
        }
        let r = MiqpProblem::new(vec![blk], DVector::zeros(0)).relax();
        assert!(r.agents[0].lower.iter().all(|v| *v == 0.0));
        assert!(r.agents[0].upper.iter().all(|v| *v == 1.0));
        assert_eq!(r.agents[0].m_local(), 0);
    }

    #[test]
    fn reference_solution_is_feasible() {
        let p = example1();
        let rep = p
            .check_feasible(&sol([5.0, 6.5, 8.5, 0.0], [1.0, 1.0, 1.0, 0.0]), 1e-6)
            .unwrap();
        assert!(rep.feasible, "{rep:?}");
    }

    #[test]
    fn overfull_solution_violates_coupling() {
        let p = example1();
        let rep = p
            .check_feasible(&sol([5.0, 12.0, 9.0, 6.0], [1.0; 4]), 1e-6)
            .unwrap();
        assert!(!rep.feasible);
        let worst = rep.worst.unwrap();
        assert_eq!(worst.kind, InfeasibilityKind::CouplingRow { row: 0 });
        assert_eq!(worst.amount, 12.0);
    }

    #[test]
    fn fractional_binary_violates_integrality() {
        let p = example1();
        let rep = p
            .check_feasible(&sol([0.0; 4], [0.5, 0.0, 0.0, 0.0]), 1e-6)
            .unwrap();
        assert!(!rep.feasible);
        assert!(matches!(
            rep.worst.unwrap().kind,
            InfeasibilityKind::Integrality { agent: 0, col: 1 }
        ));
    }

    #[test]
    fn check_feasible_rejects_wrong_shape() {
        let p = example1();
        let mut s = sol([0.0; 4], [0.0; 4]);
        s.x.pop();
        assert!(p.check_feasible(&s, 1e-6).is_err());
    }

    #[test]
    fn set_m_tracks_coefficient_and_rhs() {
        let mut blk = AgentBlock::new(2, 0);
        blk.mark_binary(1);
        let r = blk.push_row(&[(0, -1.0), (1, 100.0)], 100.0 - 3.0);
        blk.bigm.push(BigMEntry::new(
            RowRef::Local(r),
            1,
            Polarity::OneMinusDelta,
            100.0,
        ));
        let mut p = MiqpProblem::new(vec![blk], DVector::zeros(0));
        assert!(p.validate().is_empty());
        p.set_m(0, 0, 40.0);
        assert_eq!(p.agents[0].a[(0, 1)], 40.0);
        assert_eq!(p.agents[0].b[0], 37.0);
        assert!(p.validate().is_empty());
        p.restore_initial_m();
        assert_eq!(p.agents[0].b[0], 97.0);
    }

    #[test]
    fn neighbor_map_from_shared_rows() {
        let mut p = example1();
        p.agents[3].c.fill(0.0);
        let nb = p.neighbor_map();
        assert_eq!(nb[0], vec![1, 2]);
        assert!(nb[3].is_empty());
    }
}
