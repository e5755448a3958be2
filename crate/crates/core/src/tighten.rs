//! Sequential big-M tightening around a convex relaxation.
//!
//! Each round solves the relaxation with every big-M row as a unit-weight
//! penalty, then shrinks the `M` of each entry whose binary is still
//! fractional: `M <- M * max(xi, a)`, where `a` is the binary's activation
//! (`y` for `phi <= M*delta`, `1 - y` for `phi <= M*(1 - delta)`). Once every
//! binary is within `eps` of `{0, 1}` the binaries are fixed and the
//! continuous part is re-solved with the original `M` values.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{BigMEntry, MiqpProblem, RowRef, SolveStatus};
use crate::qp::{self, QpOptions, QpResult, QpStatus, StackLayout};
use crate::report::{int_dist, m_snapshot, to_rows, Mode, SolveReport, TraceEntry};

/// Feasibility tolerance used to classify mixed-integer results.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TightenConfig {
    pub xi: f64,
    pub eps: f64,
    pub t_max: usize,
    pub qp_tol: f64,
    pub qp_max_iter: u32,
    /// Weight of each big-M penalty row in the relaxation.
    pub penalty_weight: f64,
    /// Record per-agent iterates in the trace.
    pub record_x: bool,
    /// Run the active-set polish after each QP solve.
    pub polish: bool,
}

impl Default for TightenConfig {
    fn default() -> Self {
        Self {
            xi: 0.01,
            eps: 1e-3,
            t_max: 100,
            qp_tol: 1e-8,
            qp_max_iter: 20_000,
            penalty_weight: 1.0,
            record_x: true,
            polish: true,
        }
    }
}

impl TightenConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::Parameter(format!(
                "xi = {} must lie in (0, 1)",
                self.xi
            )));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::Parameter(format!(
                "eps = {} must lie in (0, 0.5)",
                self.eps
            )));
        }
        if self.t_max == 0 || !(self.qp_tol > 0.0) || !(self.penalty_weight > 0.0) {
            return Err(Error::Parameter(
                "t_max, qp_tol and penalty_weight must be positive".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn qp_options(&self) -> QpOptions {
        QpOptions {
            tol: self.qp_tol,
            max_iter: self.qp_max_iter,
            polish: self.polish,
        }
    }
}

/// New `M` for one entry given the relaxed value `y` of its binary.
pub fn update_m(entry: &BigMEntry, y: f64, xi: f64, eps: f64) -> Result<f64> {
    if !(y >= -eps && y <= 1.0 + eps) {
        return Err(Error::RelaxedOutOfRange {
            col: entry.col,
            value: y,
        });
    }
    if y.abs().min((1.0 - y).abs()) < eps {
        return Ok(entry.m_current);
    }
    let a = entry.polarity.activation(y).clamp(0.0, 1.0);
    Ok(entry.m_current * xi.max(a))
}

/// Apply [`update_m`] to every entry of `agent` using its relaxed iterate `x`.
pub(crate) fn tighten_agent(
    p: &mut MiqpProblem,
    agent: usize,
    x: &DVector<f64>,
    xi: f64,
    eps: f64,
) -> Result<()> {
    for k in 0..p.agents[agent].bigm.len() {
        let e = &p.agents[agent].bigm[k];
        let m_new = update_m(e, x[e.col], xi, eps)?;
        if m_new != e.m_current {
            p.set_m(agent, k, m_new);
        }
    }
    Ok(())
}

/// Round each binary of a relaxed iterate.
///
/// Values within `eps` of 0 or 1 are rounded. Otherwise the binary takes the
/// first value in `0, 1` for which all of its big-M rows hold at the current
/// iterate with the original `M`; if neither does, the value with the smaller
/// worst violation wins, again preferring 0 on ties.
pub fn recover_binaries(p: &MiqpProblem, x: &[DVector<f64>], eps: f64) -> Vec<Vec<u8>> {
    let mut orig = p.clone();
    orig.restore_initial_m();
    orig.agents
        .iter()
        .enumerate()
        .map(|(i, blk)| {
            blk.binary_cols
                .iter()
                .map(|&c| {
                    let y = x[i][c];
                    if y.abs() <= eps {
                        0
                    } else if (1.0 - y).abs() <= eps {
                        1
                    } else {
                        let v0 = activity_violation(&orig, x, i, c, 0.0);
                        let v1 = activity_violation(&orig, x, i, c, 1.0);
                        u8::from(v1 < v0 && v0 > 0.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// Worst violation over the big-M rows controlled by `(agent, col)` when that
/// binary is set to `value` and every other variable keeps its iterate value.
fn activity_violation(
    p: &MiqpProblem,
    x: &[DVector<f64>],
    agent: usize,
    col: usize,
    value: f64,
) -> f64 {
    let blk = &p.agents[agent];
    let mut worst = 0.0_f64;
    for e in blk.bigm.iter().filter(|e| e.col == col) {
        let (lhs, rhs) = match e.row {
            RowRef::Local(r) => {
                let mut s = 0.0;
                for j in 0..blk.n() {
                    let v = if j == col { value } else { x[agent][j] };
                    s += blk.a[(r, j)] * v;
                }
                (s, blk.b[r])
            }
            RowRef::Coupling(r) => {
                let mut s = 0.0;
                for (k, other) in p.agents.iter().enumerate() {
                    for j in 0..other.n() {
                        let v = if k == agent && j == col {
                            value
                        } else {
                            x[k][j]
                        };
                        s += other.c[(r, j)] * v;
                    }
                }
                (s, p.d[r])
            }
        };
        let tol = FEAS_TOL * (1.0 + rhs.abs());
        let viol = lhs - rhs;
        if viol > tol {
            worst = worst.max(viol);
        }
    }
    worst
}

/// Copy of `p` with original `M` values and binaries fixed as bounds.
pub fn fix_binaries(p: &MiqpProblem, binaries: &[Vec<u8>]) -> Result<MiqpProblem> {
    if binaries.len() != p.n_agents() {
        return Err(Error::Dimension(format!(
            "{} binary blocks for {} agents",
            binaries.len(),
            p.n_agents()
        )));
    }
    let mut fixed = p.clone();
    fixed.restore_initial_m();
    for (blk, bits) in fixed.agents.iter_mut().zip(binaries) {
        if bits.len() != blk.binary_cols.len() {
            return Err(Error::Dimension(format!(
                "{} binary values for {} binary columns",
                bits.len(),
                blk.binary_cols.len()
            )));
        }
        for (&c, &v) in blk.binary_cols.iter().zip(bits) {
            blk.lower[c] = f64::from(v);
            blk.upper[c] = f64::from(v);
        }
        blk.binary_cols.clear();
        blk.relaxed_cols.clear();
    }
    Ok(fixed)
}

/// Solve the continuous QP left after fixing the binaries, with original `M`.
pub fn second_stage(
    p: &MiqpProblem,
    binaries: &[Vec<u8>],
    opts: &QpOptions,
) -> Result<(QpResult, StackLayout)> {
    let fixed = fix_binaries(p, binaries)?;
    let (spec, layout) = qp::stack(&fixed, None)?;
    let mut res = qp::solve_qp_with(&spec, opts)?;
    // Fixed columns are exact; remove backend noise.
    for (i, blk) in p.agents.iter().enumerate() {
        for (&c, &v) in blk.binary_cols.iter().zip(&binaries[i]) {
            res.x[layout.col(i, c)] = f64::from(v);
        }
    }
    Ok((res, layout))
}

/// Decide the final status and fill the mixed-integer part of a report.
pub(crate) fn finish_report(
    p: &MiqpProblem,
    report: &mut SolveReport,
    relaxed: &[DVector<f64>],
    binaries: Vec<Vec<u8>>,
    stage2: Option<(Vec<DVector<f64>>, f64, bool)>,
) -> Result<()> {
    report.binaries = binaries;
    match stage2 {
        Some((x, obj, accurate)) => {
            let mut sol = report.solution();
            sol.x = x.clone();
            let feasible = p.check_feasible(&sol, FEAS_TOL)?.feasible;
            report.x = to_rows(&x);
            report.objective = obj;
            report.status = match (feasible, report.converged && accurate) {
                (true, true) => SolveStatus::OptimalMi,
                (true, false) => SolveStatus::FeasibleMi,
                (false, true) => SolveStatus::RelaxedOnly,
                (false, false) => SolveStatus::MaxIter,
            };
            if !feasible {
                report.x = to_rows(relaxed);
            }
        }
        None => {
            report.x = to_rows(relaxed);
            report.objective = p.objective(relaxed);
            report.status = if report.converged {
                SolveStatus::RelaxedOnly
            } else {
                SolveStatus::MaxIter
            };
        }
    }
    Ok(())
}

/// Centralized tightening loop followed by binary recovery and the fixed-binary re-solve.
pub fn solve_centralized(p: &MiqpProblem, cfg: &TightenConfig) -> Result<SolveReport> {
    p.ensure_valid()?;
    cfg.check()?;
    let opts = cfg.qp_options();
    let mut work = p.clone();
    let mut report = SolveReport::empty(Mode::Centralized, SolveStatus::MaxIter);
    let mut last: Option<Vec<DVector<f64>>> = None;

    for t in 1..=cfg.t_max {
        let weights = vec![cfg.penalty_weight; bigm_row_count(&work)?];
        let (res, layout) = qp::solve_penalized_relaxation(&work, &weights, &opts)?;
        if res.status == QpStatus::PrimalInfeasible {
            log::info!("relaxation with penalized big-M rows is infeasible at t = {t}");
            report.status = SolveStatus::Infeasible;
            report.iterations = t;
            return Ok(report);
        }
        let xs = layout.split(&res.x);
        let dist = int_dist(&work, &xs);
        report.trace.push(TraceEntry {
            t,
            obj: res.objective,
            int_dist: dist,
            m: m_snapshot(&work),
            primal_res: None,
            dual_res: None,
            x: if cfg.record_x {
                to_rows(&xs)
            } else {
                Vec::new()
            },
        });
        report.iterations = t;
        log::debug!(
            "t = {t}: objective {:.6}, int_dist {:.3e}",
            res.objective,
            dist
        );
        if dist <= cfg.eps {
            report.converged = true;
            last = Some(xs);
            break;
        }
        for i in 0..work.n_agents() {
            tighten_agent(&mut work, i, &xs[i], cfg.xi, cfg.eps)?;
        }
        last = Some(xs);
    }

    let relaxed = last.expect("t_max >= 1");
    let binaries = recover_binaries(p, &relaxed, cfg.eps);
    let (res, layout) = second_stage(p, &binaries, &opts)?;
    report.stage2_iterations = 1;
    let stage2 = res.is_usable().then(|| {
        (
            layout.split(&res.x),
            res.objective,
            res.status == QpStatus::Solved,
        )
    });
    finish_report(p, &mut report, &relaxed, binaries, stage2)?;
    Ok(report)
}

fn bigm_row_count(p: &MiqpProblem) -> Result<usize> {
    Ok(qp::stack(p, None)?.1.bigm_rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example1, AgentBlock, Polarity};
    use nalgebra::DMatrix;

    fn entry(m: f64, polarity: Polarity) -> BigMEntry {
        BigMEntry::new(RowRef::Local(0), 0, polarity, m)
    }

    #[test]
    fn update_rule_cases() {
        let e = entry(1000.0, Polarity::Delta);
        assert_eq!(update_m(&e, 0.5, 0.01, 1e-3).unwrap(), 500.0);
        assert_eq!(update_m(&e, 0.005, 0.01, 1e-3).unwrap(), 10.0);
        assert_eq!(update_m(&e, 1.0, 0.01, 1e-3).unwrap(), 1000.0);
        assert_eq!(update_m(&e, 0.0004, 0.01, 1e-3).unwrap(), 1000.0);
        assert!(update_m(&e, 1.1, 0.01, 1e-3).is_err());
    }

    #[test]
    fn one_minus_uses_activation() {
        let e = entry(1000.0, Polarity::OneMinusDelta);
        assert_eq!(update_m(&e, 0.75, 0.01, 1e-3).unwrap(), 250.0);
        assert_eq!(update_m(&e, 0.999, 0.01, 1e-3).unwrap(), 1000.0 * 0.01);
    }

    #[test]
    fn recover_rounds_and_tie_breaks() {
        let p = example1();
        let mut xs: Vec<DVector<f64>> = (0..4).map(|_| DVector::from_vec(vec![0.0, 0.0])).collect();
        xs[0][1] = 0.9997;
        xs[1][1] = 0.5; // x = 0 satisfies x <= M*0
        xs[2] = DVector::from_vec(vec![3.0, 0.5]); // needs delta = 1
        assert_eq!(
            recover_binaries(&p, &xs, 1e-3),
            vec![vec![1], vec![0], vec![1], vec![0]]
        );
    }

    #[test]
    fn second_stage_all_closed() {
        let p = example1();
        let (r, _) = second_stage(
            &p,
            &[vec![0], vec![0], vec![0], vec![0]],
            &QpOptions::default(),
        )
        .unwrap();
        assert_eq!(r.status, QpStatus::Solved);
        assert!(r.x.amax() < 1e-9);
        assert!(r.objective.abs() < 1e-9);
    }

    #[test]
    fn second_stage_inconsistent_assignment() {
        // Sum delta <= 3 cannot hold with all four switched on.
        let p = example1();
        let (r, _) = second_stage(
            &p,
            &[vec![1], vec![1], vec![1], vec![1]],
            &QpOptions::default(),
        )
        .unwrap();
        assert_eq!(r.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn example1_centralized() {
        let r = solve_centralized(&example1(), &TightenConfig::default()).unwrap();
        assert_eq!(r.status, SolveStatus::OptimalMi);
        assert_eq!(r.flat_binaries(), vec![1, 1, 1, 0]);
        let x = r.continuous(&example1());
        for (a, b) in x.iter().zip([5.0, 6.5, 8.5, 0.0]) {
            assert!((a - b).abs() < 1e-4, "{x:?}");
        }
        assert!((r.objective + 344.5).abs() < 1e-6);
        assert!(r.iterations <= 24);
        assert!(r.m_non_increasing());
    }

    #[test]
    fn no_binaries_single_iteration() {
        let mut blk = AgentBlock::new(2, 0);
        blk.q_mat = DMatrix::identity(2, 2);
        blk.q_vec = DVector::from_vec(vec![-1.0, -2.0]);
        let p = MiqpProblem::new(vec![blk], DVector::zeros(0));
        let r = solve_centralized(&p, &TightenConfig::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.status, SolveStatus::OptimalMi);
        assert!((r.objective + 2.5).abs() < 1e-9);
    }

    #[test]
    fn integral_relaxation_keeps_m() {
        // min (x - 2)^2 - 10 delta with x <= 10 delta: delta = 1 is already optimal in the relaxation.
        let mut blk = AgentBlock::new(2, 0);
        blk.q_mat[(0, 0)] = 2.0;
        blk.q_vec = DVector::from_vec(vec![-4.0, -10.0]);
        blk.mark_binary(1);
        blk.push_row(&[(0, 1.0), (1, -10.0)], 0.0);
        blk.bigm
            .push(BigMEntry::new(RowRef::Local(0), 1, Polarity::Delta, 10.0));
        let p = MiqpProblem::new(vec![blk], DVector::zeros(0));
        let r = solve_centralized(&p, &TightenConfig::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.flat_binaries(), vec![1]);
        assert!(r.m_sequences().values().all(|s| s == &vec![10.0]));
    }

    #[test]
    fn bigm_free_rows_untouched() {
        let p = example1();
        let mut work = p.clone();
        let xs: Vec<DVector<f64>> = (0..4).map(|_| DVector::from_vec(vec![1.0, 0.3])).collect();
        for i in 0..4 {
            tighten_agent(&mut work, i, &xs[i], 0.01, 1e-3).unwrap();
        }
        for (a, b) in p.agents.iter().zip(&work.agents) {
            assert_eq!(a.a.row(0), b.a.row(0));
            assert_eq!(a.a[(1, 0)], b.a[(1, 0)]);
            assert_eq!(a.c, b.c);
            assert_eq!(b.bigm[0].m_current, 300.0);
        }
    }
}
