use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{AdmmParams, AdmmState};
use crate::error::Result;
use crate::model::{MiqpProblem, RowRef};
use crate::qp::{solve_qp_with, QpSpec, QpStatus};

const EMPTY_ROW_TOL: f64 = 1e-9;

/// Output of one agent's x-minimization.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentStep {
    pub x: DVector<f64>,
    pub w: DVector<f64>,
    pub status: QpStatus,
}

/// The allocation each agent would pick with no coupling columns:
/// the minimizer of `beta/2 |w - w_i|^2 + rho/2 |w - v|^2`.
pub(crate) fn allocation_target(i: usize, state: &AdmmState, params: &AdmmParams) -> DVector<f64> {
    let (rho, beta) = (params.rho, params.beta);
    let mut others = DVector::zeros(state.d.len());
    for (j, wj) in state.w.iter().enumerate() {
        if j != i {
            others += wj;
        }
    }
    let v = &state.d - others - &state.lambda[i] / rho;
    (&state.w[i] * beta + v * rho) / (beta + rho)
}

/// Proximal x-minimization for agent `i`, reading only the state of the
/// previous round.
///
/// Rows of the coupling block that agent `i` does not touch reduce to
/// `0 <= w_q + shift_q` and are solved in closed form; the rest form a QP
/// over `(x_i, w_i[touched])`. When `penalize_bigm` is set, big-M rows become
/// penalty rows as in the centralized relaxation.
pub fn agent_step(
    i: usize,
    state: &AdmmState,
    p: &MiqpProblem,
    params: &AdmmParams,
    penalize_bigm: bool,
) -> Result<AgentStep> {
    let blk = &p.agents[i];
    let n = blk.n();
    let ml = blk.m_local();
    let shift = &state.shift[i];
    let target = allocation_target(i, state, params);
    let touched = blk.touched_coupling_rows();
    let k = touched.len();

    let mut w = DVector::from_fn(target.len(), |q, _| target[q].max(-shift[q]));

    let mut q_mat = DMatrix::zeros(n + k, n + k);
    q_mat.view_mut((0, 0), (n, n)).copy_from(&blk.q_mat);
    let mut q_vec = DVector::zeros(n + k);
    q_vec.rows_mut(0, n).copy_from(&blk.q_vec);
    let curv = params.beta + params.rho;
    for (a, &r) in touched.iter().enumerate() {
        q_mat[(n + a, n + a)] = curv;
        q_vec[n + a] = -curv * target[r];
    }

    let mut a = DMatrix::zeros(ml + k, n + k);
    a.view_mut((0, 0), (ml, n)).copy_from(&blk.a);
    let mut b = DVector::zeros(ml + k);
    b.rows_mut(0, ml).copy_from(&blk.b);
    let mut row_of = BTreeMap::new();
    for (t, &r) in touched.iter().enumerate() {
        for j in 0..n {
            a[(ml + t, j)] = blk.c[(r, j)];
        }
        a[(ml + t, n + t)] = -1.0;
        b[ml + t] = shift[r];
        row_of.insert(r, ml + t);
    }
    let spec_row = |rr: RowRef| match rr {
        RowRef::Local(r) => Some(r),
        RowRef::Coupling(r) => row_of.get(&r).copied(),
    };
    let mut penalty: BTreeMap<usize, f64> = BTreeMap::new();
    for s in &blk.soft {
        if let Some(r) = spec_row(s.row) {
            penalty.insert(r, s.weight);
        }
    }
    if penalize_bigm {
        for e in &blk.bigm {
            if let Some(r) = spec_row(e.row) {
                penalty.insert(r, params.penalty_weight);
            }
        }
    }
    let (prow, pw): (Vec<usize>, Vec<f64>) = penalty.into_iter().unzip();

    let mut lower = DVector::from_element(n + k, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(n + k, f64::INFINITY);
    lower.rows_mut(0, n).copy_from(&blk.lower);
    upper.rows_mut(0, n).copy_from(&blk.upper);

    // Rows left without coefficients only carry substitution round-off.
    for r in 0..a.nrows() {
        if a.row(r).iter().all(|v| *v == 0.0) && b[r] < 0.0 && b[r] > -EMPTY_ROW_TOL {
            b[r] = 0.0;
        }
    }
    let spec = QpSpec::new(q_mat, q_vec)
        .with_rows(a, b)
        .with_bounds(lower, upper)
        .with_penalty(prow, pw);
    let res = solve_qp_with(&spec, &params.qp_options())?;
    let x = res.x.rows(0, n).into_owned();
    for (t, &r) in touched.iter().enumerate() {
        w[r] = res.x[n + t];
    }
    Ok(AgentStep {
        x,
        w,
        status: res.status,
    })
}

/// Allocations summing to `d` exactly. On every coupling row each touching
/// agent gets its current usage `(C_i x_i)_q` plus a share of the capacity the
/// touching agents leave unused, in proportion to its own slack
/// `w_iq - (C_i x_i)_q`; a negative remainder is split evenly. Agents that do
/// not touch a row keep their allocation. Each agent needs the usage and slack
/// of its neighbors on shared rows.
pub(crate) fn balanced_allocations(state: &AdmmState, p: &MiqpProblem) -> Vec<DVector<f64>> {
    let mc = state.d.len();
    let touched: Vec<Vec<usize>> = p.agents.iter().map(|b| b.touched_coupling_rows()).collect();
    let usage: Vec<DVector<f64>> = p
        .agents
        .iter()
        .zip(&state.x_bar)
        .map(|(b, x)| &b.c * x)
        .collect();
    let slack: Vec<DVector<f64>> = state
        .w
        .iter()
        .zip(&usage)
        .map(|(w, u)| (w - u).map(|s| s.max(0.0)))
        .collect();
    let mut remainder = state.d.clone();
    let mut count = vec![0usize; mc];
    let mut total = vec![0.0_f64; mc];
    for i in 0..p.n_agents() {
        let mut is_touched = vec![false; mc];
        for &r in &touched[i] {
            is_touched[r] = true;
            count[r] += 1;
            total[r] += slack[i][r];
            remainder[r] -= usage[i][r];
        }
        for r in (0..mc).filter(|&r| !is_touched[r]) {
            remainder[r] -= state.w[i][r];
        }
    }
    let mut w = state.w.clone();
    for (i, rows) in touched.iter().enumerate() {
        for &r in rows {
            let share = if remainder[r] >= 0.0 && total[r] > 0.0 {
                slack[i][r] / total[r]
            } else {
                1.0 / count[r] as f64
            };
            w[i][r] = usage[i][r] + remainder[r] * share;
        }
    }
    w
}

/// Agent `i`'s best `x_i` with its allocation held fixed at `w_i`.
pub fn restore_step(
    i: usize,
    w_i: &DVector<f64>,
    p: &MiqpProblem,
    params: &AdmmParams,
) -> Result<(DVector<f64>, QpStatus)> {
    let blk = &p.agents[i];
    let n = blk.n();
    let ml = blk.m_local();
    let touched = blk.touched_coupling_rows();
    let k = touched.len();

    let mut a = DMatrix::zeros(ml + k, n);
    a.view_mut((0, 0), (ml, n)).copy_from(&blk.a);
    let mut b = DVector::zeros(ml + k);
    b.rows_mut(0, ml).copy_from(&blk.b);
    let mut row_of = BTreeMap::new();
    for (t, &r) in touched.iter().enumerate() {
        a.row_mut(ml + t).copy_from(&blk.c.row(r));
        b[ml + t] = w_i[r];
        row_of.insert(r, ml + t);
    }
    let mut penalty: BTreeMap<usize, f64> = BTreeMap::new();
    for s in &blk.soft {
        let r = match s.row {
            RowRef::Local(r) => Some(r),
            RowRef::Coupling(r) => row_of.get(&r).copied(),
        };
        if let Some(r) = r {
            penalty.insert(r, s.weight);
        }
    }
    let (prow, pw): (Vec<usize>, Vec<f64>) = penalty.into_iter().unzip();

    // Substitute columns with equal bounds so backend noise in them cannot
    // leak into rows through large coefficients.
    let mut q_mat = blk.q_mat.clone();
    let mut q_vec = blk.q_vec.clone();
    let fixed: Vec<usize> = (0..n).filter(|&j| blk.lower[j] == blk.upper[j]).collect();
    for &j in &fixed {
        let v = blk.lower[j];
        b -= a.column(j) * v;
        a.column_mut(j).fill(0.0);
        q_vec += q_mat.column(j) * v;
        let diag = q_mat[(j, j)].max(1.0);
        q_mat.column_mut(j).fill(0.0);
        q_mat.row_mut(j).fill(0.0);
        q_mat[(j, j)] = diag;
        q_vec[j] = -diag * v;
    }
    // Rows left without coefficients only carry substitution round-off.
    for r in 0..a.nrows() {
        if a.row(r).iter().all(|v| *v == 0.0) && b[r] < 0.0 && b[r] > -EMPTY_ROW_TOL {
            b[r] = 0.0;
        }
    }
    let spec = QpSpec::new(q_mat, q_vec)
        .with_rows(a, b)
        .with_bounds(blk.lower.clone(), blk.upper.clone())
        .with_penalty(prow, pw);
    let mut res = solve_qp_with(&spec, &params.qp_options())?;
    for &j in &fixed {
        res.x[j] = blk.lower[j];
    }
    Ok((res.x, res.status))
}
