//! Convex QP subproblems.
//!
//! Problems have the form
//!
//! ```text
//! minimize   x'Qx/2 + q'x + c + sum_{r in P} w_r * max(0, a_r x - b_r)
//! subject to a_r x <= b_r   for rows r not in P
//!            lower <= x <= upper
//! ```
//!
//! Each penalty row gets a nonnegative auxiliary variable so the problem stays
//! a smooth QP. Rows that appear as exact opposite pairs are passed to the
//! interior-point backend as equalities. After the backend returns, an
//! active-set polish re-solves the equality-constrained QP on the detected
//! active set whenever that brings the KKT residual under the tolerance.

mod backend;
mod polish;
mod stack;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub use stack::{solve_penalized_relaxation, stack, StackLayout};

#[derive(Clone, Debug, PartialEq)]
pub struct QpSpec {
    pub q_mat: DMatrix<f64>,
    pub q_vec: DVector<f64>,
    pub constant: f64,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Rows of `a` moved into the objective as `w * max(0, a x - b)`.
    pub penalty_rows: Vec<usize>,
    pub penalty_weights: Vec<f64>,
}

impl QpSpec {
    /// Unconstrained QP over `n = q.len()` free variables.
    pub fn new(q_mat: DMatrix<f64>, q_vec: DVector<f64>) -> Self {
        let n = q_vec.len();
        Self {
            q_mat,
            q_vec,
            constant: 0.0,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
            penalty_rows: Vec::new(),
            penalty_weights: Vec::new(),
        }
    }

    pub fn with_rows(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a = a;
        self.b = b;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_penalty(mut self, rows: Vec<usize>, weights: Vec<f64>) -> Self {
        self.penalty_rows = rows;
        self.penalty_weights = weights;
        self
    }

    pub fn n(&self) -> usize {
        self.q_vec.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.n();
        let dims_ok = self.q_mat.shape() == (n, n)
            && self.a.ncols() == n
            && self.a.nrows() == self.b.len()
            && self.lower.len() == n
            && self.upper.len() == n
            && self.penalty_rows.len() == self.penalty_weights.len();
        if !dims_ok {
            return Err(Error::Dimension(format!(
                "QP with n = {n}: Q {:?}, A {:?}, b {}, bounds {}/{}, {} penalty rows with {} weights",
                self.q_mat.shape(),
                self.a.shape(),
                self.b.len(),
                self.lower.len(),
                self.upper.len(),
                self.penalty_rows.len(),
                self.penalty_weights.len()
            )));
        }
        let mut seen = vec![false; self.m()];
        for (&r, &w) in self.penalty_rows.iter().zip(&self.penalty_weights) {
            if r >= self.m() || seen[r] {
                return Err(Error::Dimension(format!(
                    "penalty row {r} out of range or repeated"
                )));
            }
            seen[r] = true;
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Parameter(format!(
                    "penalty weight {w} on row {r} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Smooth part of the objective.
    pub fn smooth_objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q_mat * x)) + self.q_vec.dot(x) + self.constant
    }

    /// Weighted sum of positive penalty-row violations.
    pub fn penalty(&self, x: &DVector<f64>) -> f64 {
        self.penalty_rows
            .iter()
            .zip(&self.penalty_weights)
            .map(|(&r, &w)| w * (self.a.row(r).dot(&x.transpose()) - self.b[r]).max(0.0))
            .sum::<f64>()
            + 0.0
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.smooth_objective(x) + self.penalty(x)
    }

    /// Largest violation of hard rows and bounds.
    pub fn hard_violation(&self, x: &DVector<f64>) -> f64 {
        let mut pen = vec![false; self.m()];
        for &r in &self.penalty_rows {
            pen[r] = true;
        }
        let ax = &self.a * x;
        let rows = (0..self.m())
            .filter(|&r| !pen[r])
            .map(|r| ax[r] - self.b[r])
            .fold(0.0_f64, f64::max);
        let bounds = (0..self.n())
            .map(|j| (self.lower[j] - x[j]).max(x[j] - self.upper[j]))
            .fold(0.0_f64, f64::max);
        rows.max(bounds)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QpStatus {
    Solved,
    PrimalInfeasible,
    /// Iteration limit or inaccurate termination; `x` is the best iterate.
    MaxIter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpResult {
    pub x: DVector<f64>,
    /// Full objective, penalty included.
    pub objective: f64,
    pub penalty: f64,
    pub kkt_residual: f64,
    pub status: QpStatus,
    /// Multipliers of the rows of `A`, nonnegative. Penalty-row multipliers lie in `[0, w]`.
    pub row_duals: DVector<f64>,
    /// Multipliers of `x >= lower` and `x <= upper`.
    pub lower_duals: DVector<f64>,
    pub upper_duals: DVector<f64>,
    pub iterations: u32,
    pub polished: bool,
}

impl QpResult {
    pub fn is_usable(&self) -> bool {
        self.status != QpStatus::PrimalInfeasible
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: u32,
    pub polish: bool,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20_000,
            polish: true,
        }
    }
}

pub fn solve_qp(spec: &QpSpec, tol: f64, max_iter: u32) -> Result<QpResult> {
    solve_qp_with(
        spec,
        &QpOptions {
            tol,
            max_iter,
            ..QpOptions::default()
        },
    )
}

/// Absolute row violation a polished point may always have.
const POLISH_FEAS_TOL: f64 = 1e-9;

pub fn solve_qp_with(spec: &QpSpec, opts: &QpOptions) -> Result<QpResult> {
    spec.check()?;
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Parameter(format!(
            "QP tol {} and max_iter {} must be positive",
            opts.tol, opts.max_iter
        )));
    }
    let smooth = backend::Smooth::build(spec);
    if smooth.trivially_infeasible() {
        return Ok(infeasible(spec));
    }
    let raw = smooth.solve(opts);
    if raw.status == QpStatus::PrimalInfeasible {
        return Ok(infeasible(spec));
    }
    let mut best = raw;
    let mut polished = false;
    if opts.polish && smooth.nz() > 0 {
        if let Some(p) = polish::polish(&smooth, &best) {
            // The relative residual is scaled by the largest row, so a big-M
            // row can hide an absolute violation; never trade feasibility.
            let viol_ok =
                smooth.max_violation(&p.z) <= smooth.max_violation(&best.z).max(POLISH_FEAS_TOL);
            if p.residual < best.residual && viol_ok {
                best = p;
                polished = true;
            }
        }
    }
    let status = if best.residual <= opts.tol {
        QpStatus::Solved
    } else {
        QpStatus::MaxIter
    };
    Ok(smooth.finish(spec, best, status, polished))
}

fn infeasible(spec: &QpSpec) -> QpResult {
    let n = spec.n();
    let x = DVector::from_fn(n, |j, _| {
        let (l, u) = (spec.lower[j], spec.upper[j]);
        if l.is_finite() {
            l
        } else if u.is_finite() {
            u
        } else {
            0.0
        }
    });
    QpResult {
        objective: spec.objective(&x),
        penalty: spec.penalty(&x),
        x,
        kkt_residual: f64::INFINITY,
        status: QpStatus::PrimalInfeasible,
        row_duals: DVector::zeros(spec.m()),
        lower_duals: DVector::zeros(n),
        upper_duals: DVector::zeros(n),
        iterations: 0,
        polished: false,
    }
}

/// KKT residual of `(x, duals)` for `spec`, recomputed from scratch.
///
/// The value is the largest of the relative primal infeasibility, the
/// stationarity error, complementarity and dual-sign violation.
pub fn kkt_residual(spec: &QpSpec, r: &QpResult) -> f64 {
    let smooth = backend::Smooth::build(spec);
    let (z, y) = smooth.lift(spec, r);
    smooth.residual(&z, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn one_dimensional_active_bound_row() {
        let spec =
            QpSpec::new(dmatrix![2.0], dvector![-10.0]).with_rows(dmatrix![1.0], dvector![3.0]);
        let r = solve_qp(&spec, 1e-8, 20_000).unwrap();
        assert_eq!(r.status, QpStatus::Solved);
        assert!((r.x[0] - 3.0).abs() < 1e-9);
        assert!((r.objective + 21.0).abs() < 1e-8);
        // Stationarity: 2x - 10 + lambda = 0.
        assert!((r.row_duals[0] - 4.0).abs() < 1e-7);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let spec = QpSpec::new(dmatrix![1.0], dvector![0.0])
            .with_rows(dmatrix![1.0; -1.0], dvector![0.0, -1.0]);
        let r = solve_qp(&spec, 1e-8, 20_000).unwrap();
        assert_eq!(r.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn penalty_row_instead_of_infeasible() {
        let spec = QpSpec::new(dmatrix![1.0], dvector![0.0])
            .with_rows(dmatrix![1.0; -1.0], dvector![0.0, -1.0])
            .with_penalty(vec![0], vec![1.0]);
        let r = solve_qp(&spec, 1e-8, 20_000).unwrap();
        assert_eq!(r.status, QpStatus::Solved);
        assert!((r.x[0] - 1.0).abs() < 1e-8);
        assert!((r.penalty - 1.0).abs() < 1e-8);
        assert!((r.objective - 1.5).abs() < 1e-8);
    }

    #[test]
    fn paired_rows_become_equality() {
        // min x^2 + y^2 with x + y = 2.
        let spec = QpSpec::new(DMatrix::identity(2, 2) * 2.0, dvector![0.0, 0.0])
            .with_rows(dmatrix![1.0, 1.0; -1.0, -1.0], dvector![2.0, -2.0]);
        let r = solve_qp(&spec, 1e-8, 20_000).unwrap();
        assert_eq!(r.status, QpStatus::Solved);
        assert!((r.x[0] - 1.0).abs() < 1e-9 && (r.x[1] - 1.0).abs() < 1e-9);
        assert!(r.row_duals.iter().all(|v| *v >= 0.0));
        assert!((r.row_duals[1] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn fixed_bounds_and_duals() {
        let spec = QpSpec::new(DMatrix::identity(2, 2), dvector![-1.0, 1.0])
            .with_bounds(dvector![0.5, 0.0], dvector![0.5, 10.0]);
        let r = solve_qp(&spec, 1e-8, 20_000).unwrap();
        assert_eq!(r.status, QpStatus::Solved);
        assert!((r.x[0] - 0.5).abs() < 1e-10);
        assert!(r.x[1].abs() < 1e-9);
        assert!((r.lower_duals[1] - 1.0).abs() < 1e-7);
        assert!(kkt_residual(&spec, &r) <= 1e-8);
    }

    #[test]
    fn infinite_rows_are_ignored() {
        let spec = QpSpec::new(dmatrix![1.0], dvector![-1.0])
            .with_rows(dmatrix![1.0], dvector![f64::INFINITY]);
        let r = solve_qp(&spec, 1e-8, 20_000).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dimension_errors() {
        let spec =
            QpSpec::new(dmatrix![1.0], dvector![0.0]).with_rows(dmatrix![1.0, 2.0], dvector![1.0]);
        assert!(solve_qp(&spec, 1e-8, 10).is_err());
    }

    #[test]
    fn empty_problem() {
        let spec = QpSpec::new(DMatrix::zeros(0, 0), DVector::zeros(0));
        let r = solve_qp(&spec, 1e-8, 10).unwrap();
        assert_eq!(r.status, QpStatus::Solved);
        assert_eq!(r.x.len(), 0);
    }
}
