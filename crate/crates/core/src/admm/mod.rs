//! Distributed tightening with proximal Jacobi ADMM.
//!
//! The coupling rows `sum_i C_i x_i <= d` are split with allocation variables
//! `w_i`, `sum_i w_i = d`, so that each agent solves
//!
//! ```text
//! min f_i(x_i) + beta/2 |w_i - w_i^t|^2 + rho/2 |w_i - (d - sum_{j != i} w_j^t) + lambda^t / rho|^2
//! s.t. A_i x_i <= b_i,  C_i x_i <= w_i
//! ```
//!
//! in parallel, followed by `lambda += gamma * rho * (sum_i w_i - d)`. In the
//! first stage every agent tightens its own big-M entries right after its
//! local step. The second stage fixes the recovered binaries, restores the
//! original `M` values and runs the same iteration until the primal and dual
//! residuals are small.

mod step;
mod transcript;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{MiqpProblem, RowRef, SolveStatus};
use crate::qp::{QpOptions, QpStatus};
use crate::report::{int_dist, m_snapshot, to_rows, Mode, SolveReport, TraceEntry};
use crate::tighten::{finish_report, fix_binaries, recover_binaries, tighten_agent};

pub use step::{agent_step, restore_step, AgentStep};
pub use transcript::{IterRecord, JsonLines, Recorder, Silent, Transcript};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LoopMode {
    /// Tighten after every ADMM iteration.
    SingleLoop,
    /// Run ADMM until its residuals drop below `inner_tol` (or `inner_max`
    /// iterations pass), then tighten once.
    TwoLoop { inner_tol: f64, inner_max: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmmParams {
    pub rho: f64,
    pub beta: f64,
    pub gamma: f64,
    pub t_max: usize,
    pub eps: f64,
    pub xi: f64,
    /// Exit threshold on both residuals in the fixed-binary stage.
    pub stage2_tol: f64,
    pub stage2_max_iter: usize,
    pub qp_tol: f64,
    pub qp_max_iter: u32,
    pub penalty_weight: f64,
    /// Shrink big-M values in the first stage. Off turns the first stage into
    /// plain ADMM on the penalized relaxation.
    pub tighten: bool,
    pub loop_mode: LoopMode,
    /// Skip the convergence gate on `beta`.
    pub override_gate: bool,
    pub record_x: bool,
    /// Run the active-set polish after each QP solve.
    pub polish: bool,
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self {
            rho: 0.1,
            beta: 0.5,
            gamma: 1.0,
            t_max: 300,
            eps: 1e-3,
            xi: 0.01,
            stage2_tol: 1e-7,
            stage2_max_iter: 5000,
            qp_tol: 1e-8,
            qp_max_iter: 20_000,
            penalty_weight: 1.0,
            tighten: true,
            loop_mode: LoopMode::SingleLoop,
            override_gate: false,
            record_x: true,
            polish: true,
        }
    }
}

impl AdmmParams {
    /// Parameters checked against the gate for `agents` agents.
    pub fn new(rho: f64, beta: f64, gamma: f64, agents: usize) -> Result<Self> {
        let p = Self {
            rho,
            beta,
            gamma,
            ..Self::default()
        };
        p.check(agents)?;
        Ok(p)
    }

    /// The lower bound `rho * (N / (2 - gamma) - 1)` that `beta` must exceed.
    pub fn gate_bound(&self, agents: usize) -> f64 {
        self.rho * (agents as f64 / (2.0 - self.gamma) - 1.0)
    }

    pub fn check(&self, agents: usize) -> Result<()> {
        if !(self.rho > 0.0 && self.beta > 0.0) {
            return Err(Error::Parameter(format!(
                "rho = {} and beta = {} must be positive",
                self.rho, self.beta
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 2.0) {
            return Err(Error::Parameter(format!(
                "gamma = {} must lie in (0, 2)",
                self.gamma
            )));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) || !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::Parameter(format!(
                "eps = {} must lie in (0, 0.5) and xi = {} in (0, 1)",
                self.eps, self.xi
            )));
        }
        if self.t_max == 0 || !(self.stage2_tol > 0.0) || !(self.penalty_weight > 0.0) {
            return Err(Error::Parameter(
                "t_max, stage2_tol and penalty_weight must be positive".into(),
            ));
        }
        let bound = self.gate_bound(agents);
        if !self.override_gate && !(self.beta > bound) {
            return Err(Error::ConvergenceGate {
                beta: self.beta,
                bound,
                agents,
            });
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

#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    pub w: Vec<DVector<f64>>,
    /// One copy of the multiplier per agent.
    pub lambda: Vec<DVector<f64>>,
    pub x_bar: Vec<DVector<f64>>,
    pub t: usize,
    /// Total the allocations must sum to.
    pub d: DVector<f64>,
    /// Per-agent right-hand-side change of coupling rows caused by tightening
    /// `phi <= M (1 - delta)` entries: agent `i` enforces `C_i x_i <= w_i + shift_i`.
    pub shift: Vec<DVector<f64>>,
    pub neighbors: Vec<Vec<usize>>,
}

impl AdmmState {
    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda[0]
    }

    /// `sum_i w_i`, accumulated in agent order.
    pub fn sum_w(&self) -> DVector<f64> {
        let mut s = DVector::zeros(self.d.len());
        for w in &self.w {
            s += w;
        }
        s
    }

    pub fn primal_residual(&self) -> f64 {
        (self.sum_w() - &self.d).amax()
    }
}

/// Equal split of `d` among the agents with zero multipliers.
pub fn split_coupling(p: &MiqpProblem) -> AdmmState {
    let n = p.n_agents();
    let mc = p.m_coupling();
    let share = &p.d / n as f64;
    AdmmState {
        w: vec![share; n],
        lambda: vec![DVector::zeros(mc); n],
        x_bar: p
            .agents
            .iter()
            .map(|b| DVector::from_fn(b.n(), |j, _| 0.0_f64.clamp(b.lower[j], b.upper[j])))
            .collect(),
        t: 0,
        d: p.d.clone(),
        shift: vec![DVector::zeros(mc); n],
        neighbors: p.neighbor_map(),
    }
}

/// `lambda + gamma * rho * (sum_i w_i - d)`, applied to every agent's copy.
pub fn dual_update(state: &mut AdmmState, params: &AdmmParams) -> DVector<f64> {
    let step = (state.sum_w() - &state.d) * (params.gamma * params.rho);
    for l in &mut state.lambda {
        *l += &step;
    }
    state.lambda[0].clone()
}

/// Right-hand-side shift of agent `i`'s coupling rows in `work` relative to `base`.
fn coupling_shift(work: &MiqpProblem, base: &MiqpProblem, i: usize) -> DVector<f64> {
    let mut s = DVector::zeros(work.m_coupling());
    for (e, e0) in work.agents[i].bigm.iter().zip(&base.agents[i].bigm) {
        if let RowRef::Coupling(r) = e.row {
            s[r] += e.polarity.rhs_offset(e.m_current) - e0.polarity.rhs_offset(e0.m_current);
        }
    }
    s
}

struct Round {
    x: Vec<DVector<f64>>,
    dx: f64,
    primal: f64,
    dual: f64,
}

/// One synchronous round: all local steps, allocation exchange, dual update.
/// Returns `None` if some agent's subproblem is infeasible.
fn round(
    st: &mut AdmmState,
    work: &MiqpProblem,
    params: &AdmmParams,
    penalize_bigm: bool,
    transcript: &mut dyn Transcript,
) -> Result<Option<Round>> {
    let steps = (0..work.n_agents())
        .map(|i| agent_step(i, st, work, params, penalize_bigm))
        .collect::<Result<Vec<_>>>()?;
    if let Some(i) = steps
        .iter()
        .position(|s| s.status == QpStatus::PrimalInfeasible)
    {
        log::info!("agent {i} subproblem infeasible at round {}", st.t + 1);
        return Ok(None);
    }
    st.t += 1;
    for (i, s) in steps.iter().enumerate() {
        for &j in &st.neighbors[i] {
            transcript.message(st.t, i, j, &s.w);
        }
    }
    let mut dx = 0.0_f64;
    let mut dw = 0.0_f64;
    let mut x = Vec::with_capacity(steps.len());
    for (i, s) in steps.into_iter().enumerate() {
        dx = dx.max((&s.x - &st.x_bar[i]).amax());
        dw = dw.max((&s.w - &st.w[i]).amax());
        st.w[i] = s.w;
        x.push(s.x);
    }
    st.x_bar = x.clone();
    dual_update(st, params);
    Ok(Some(Round {
        x,
        dx,
        primal: st.primal_residual(),
        dual: params.rho * dw,
    }))
}

/// Distributed solve with a silent transcript.
pub fn solve_distributed(p: &MiqpProblem, params: &AdmmParams) -> Result<SolveReport> {
    solve_distributed_with(p, params, &mut Silent)
}

pub fn solve_distributed_with(
    p: &MiqpProblem,
    params: &AdmmParams,
    transcript: &mut dyn Transcript,
) -> Result<SolveReport> {
    p.ensure_valid()?;
    params.check(p.n_agents())?;
    let mut report = SolveReport::empty(Mode::Distributed, SolveStatus::MaxIter);
    let mut work = p.clone();
    let mut st = split_coupling(p);

    let mut outer_ok = true;
    let mut inner_count = 0;
    let mut inner_done = false;
    while st.t < params.t_max {
        let m_before = m_snapshot(&work);
        let Some(r) = round(&mut st, &work, params, params.tighten, transcript)? else {
            outer_ok = false;
            break;
        };
        inner_count += 1;
        let dist = int_dist(&work, &r.x);
        let obj = work.objective(&r.x);
        transcript.iteration(&IterRecord {
            stage: 1,
            t: st.t,
            primal_res: r.primal,
            dual_res: r.dual,
            int_dist: dist,
            obj,
        });
        report.trace.push(TraceEntry {
            t: st.t,
            obj,
            int_dist: dist,
            m: m_before,
            primal_res: Some(r.primal),
            dual_res: Some(r.dual),
            x: if params.record_x {
                to_rows(&r.x)
            } else {
                Vec::new()
            },
        });
        log::debug!(
            "stage 1 t = {}: primal {:.2e} dual {:.2e} int_dist {:.2e} dx {:.2e}",
            st.t,
            r.primal,
            r.dual,
            dist,
            r.dx
        );
        // The step test needs a previous iterate, so round 1 never exits.
        let settled = st.t >= 2 && r.dx <= params.eps;
        let tighten_now = match params.loop_mode {
            LoopMode::SingleLoop => true,
            LoopMode::TwoLoop {
                inner_tol,
                inner_max,
            } => {
                inner_done = (settled && r.primal <= inner_tol && r.dual <= inner_tol)
                    || inner_count >= inner_max;
                inner_done
            }
        };
        if dist <= params.eps && settled && (params.loop_mode == LoopMode::SingleLoop || inner_done)
        {
            report.converged = true;
            break;
        }
        if params.tighten && tighten_now {
            for i in 0..work.n_agents() {
                tighten_agent(&mut work, i, &r.x[i], params.xi, params.eps)?;
                st.shift[i] = coupling_shift(&work, p, i);
            }
            inner_count = 0;
        }
    }
    report.iterations = st.t;
    if !outer_ok {
        report.status = SolveStatus::Infeasible;
        return Ok(report);
    }

    let relaxed = st.x_bar.clone();
    let binaries = recover_binaries(p, &relaxed, params.eps);
    let fixed = fix_binaries(p, &binaries)?;
    st.d = fixed.d.clone();
    for s in &mut st.shift {
        s.fill(0.0);
    }
    let mut stage2_ok = true;
    let mut stage2_converged = false;
    let t0 = st.t;
    while st.t - t0 < params.stage2_max_iter {
        let Some(r) = round(&mut st, &fixed, params, false, transcript)? else {
            stage2_ok = false;
            break;
        };
        let obj = fixed.objective(&r.x);
        transcript.iteration(&IterRecord {
            stage: 2,
            t: st.t - t0,
            primal_res: r.primal,
            dual_res: r.dual,
            int_dist: 0.0,
            obj,
        });
        report.stage2_trace.push(TraceEntry {
            t: st.t - t0,
            obj,
            int_dist: 0.0,
            m: m_snapshot(&fixed),
            primal_res: Some(r.primal),
            dual_res: Some(r.dual),
            x: Vec::new(),
        });
        if r.primal <= params.stage2_tol && r.dual <= params.stage2_tol {
            stage2_converged = true;
            break;
        }
    }
    report.stage2_iterations = st.t - t0;
    if stage2_ok {
        // Closing round: allocations summing to d exactly, x re-solved locally.
        let w = step::balanced_allocations(&st, &fixed);
        let restored = (0..fixed.n_agents())
            .map(|i| restore_step(i, &w[i], &fixed, params))
            .collect::<Result<Vec<_>>>()?;
        if restored.iter().all(|(_, s)| *s == QpStatus::Solved) {
            st.x_bar = restored.into_iter().map(|(x, _)| x).collect();
            st.w = w;
        } else {
            log::info!("allocation restoration failed; keeping the last stage-2 iterate");
        }
    }
    let stage2 = stage2_ok.then(|| {
        let mut x = st.x_bar.clone();
        for (i, blk) in p.agents.iter().enumerate() {
            for (&c, &v) in blk.binary_cols.iter().zip(&binaries[i]) {
                x[i][c] = f64::from(v);
            }
        }
        let obj = fixed.penalized_objective(&x);
        (x, obj, stage2_converged)
    });
    finish_report(p, &mut report, &relaxed, binaries, stage2)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example1, AgentBlock};
    use crate::tighten::{solve_centralized, TightenConfig};
    use nalgebra::DMatrix;

    fn params() -> AdmmParams {
        AdmmParams::new(0.1, 0.5, 1.0, 4).unwrap()
    }

    #[test]
    fn gate_is_strict() {
        let e = AdmmParams::new(0.1, 0.3, 1.0, 4).unwrap_err();
        assert!(matches!(e, Error::ConvergenceGate { agents: 4, .. }));
        assert!(AdmmParams::new(0.1, 0.30001, 1.0, 4).is_ok());
        assert!(matches!(
            AdmmParams::new(0.1, 0.5, 0.0, 4),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            AdmmParams::new(0.1, 0.5, 2.0, 4),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn split_is_equal_share() {
        let st = split_coupling(&example1());
        for w in &st.w {
            assert_eq!(w.as_slice(), &[5.0, 0.75]);
        }
        assert!(st.primal_residual() < 1e-15);
        assert!(st.lambda.iter().all(|l| l.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn single_agent_gets_all_of_d() {
        let mut p = example1();
        p.agents.truncate(1);
        let st = split_coupling(&p);
        assert_eq!(st.w[0], p.d);
    }

    #[test]
    fn agent_without_coupling_has_no_neighbors() {
        let mut p = example1();
        p.agents[2].c.fill(0.0);
        let st = split_coupling(&p);
        assert!(st.neighbors[2].is_empty());
        assert!(!st.neighbors[0].contains(&2));
    }

    #[test]
    fn balanced_allocations_sum_to_d_and_cover_usage() {
        let p = example1();
        let mut st = split_coupling(&p);
        for (i, x) in st.x_bar.iter_mut().enumerate() {
            x.fill(0.1 * (i + 1) as f64);
        }
        st.w[0][0] += 0.3;
        st.w[2][1] -= 0.7;
        let w = step::balanced_allocations(&st, &p);
        let mut sum = DVector::zeros(p.m_coupling());
        for wi in &w {
            sum += wi;
        }
        assert!((sum - &p.d).amax() < 1e-12);
        let usage_fits = p.agents.iter().zip(&w).zip(&st.x_bar).all(|((b, wi), x)| {
            let u = &b.c * x;
            b.touched_coupling_rows()
                .iter()
                .all(|&r| u[r] <= wi[r] + 1e-12)
        });
        assert!(usage_fits);
    }

    #[test]
    fn dual_update_formula() {
        let mut st = split_coupling(&example1());
        assert_eq!(dual_update(&mut st, &params()), DVector::zeros(2));
        st.w[0][0] += 1.0;
        st.w[0][1] -= 2.0;
        let l = dual_update(&mut st, &params());
        assert!((l[0] - 0.1).abs() < 1e-15 && (l[1] + 0.2).abs() < 1e-15);
        assert!(st.lambda.iter().all(|c| c == &l));
    }

    #[test]
    fn step_is_pure() {
        let p = example1();
        let st = split_coupling(&p);
        let a = agent_step(1, &st, &p, &params(), true).unwrap();
        let b = agent_step(1, &st, &p, &params(), true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uncoupled_agent_local_optimum() {
        // One agent with no coupling columns: x is its local optimum and w
        // follows the closed form, clipped at zero.
        let mut blk = AgentBlock::new(1, 1);
        blk.q_mat = DMatrix::from_element(1, 1, 2.0);
        blk.q_vec[0] = -4.0;
        let mut other = AgentBlock::new(1, 1);
        other.q_mat = DMatrix::from_element(1, 1, 1.0);
        other.c[(0, 0)] = 1.0;
        let p = MiqpProblem::new(vec![blk, other], DVector::from_vec(vec![4.0]));
        let par = AdmmParams::new(0.1, 0.5, 1.0, 2).unwrap();
        let mut st = split_coupling(&p);
        st.lambda = vec![DVector::from_vec(vec![0.3]); 2];
        let s = agent_step(0, &st, &p, &par, true).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-9);
        // v = 4 - 2 - 3 = -1; (0.5*2 + 0.1*(-1)) / 0.6 = 1.5
        assert!((s.w[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn example1_distributed() {
        let p = example1();
        let r = solve_distributed(&p, &params()).unwrap();
        assert_eq!(r.flat_binaries(), vec![1, 1, 1, 0]);
        assert_eq!(r.status, SolveStatus::OptimalMi);
        let x = r.continuous(&p);
        for (a, b) in x.iter().zip([5.0, 6.5, 8.5, 0.0]) {
            assert!((a - b).abs() < 1e-3, "{x:?}");
        }
        assert!(r.iterations <= 100, "{}", r.iterations);
        assert!(r.m_non_increasing());
    }

    #[test]
    fn decoupled_converges_fast() {
        let agents = (0..3)
            .map(|i| {
                let mut blk = AgentBlock::new(2, 0);
                blk.q_mat = DMatrix::identity(2, 2);
                blk.q_vec = DVector::from_vec(vec![-(i as f64), 1.0]);
                blk.push_row(&[(0, 1.0), (1, 1.0)], 0.5);
                blk
            })
            .collect();
        let p = MiqpProblem::new(agents, DVector::zeros(0));
        let r = solve_distributed(&p, &AdmmParams::new(0.1, 0.5, 1.0, 3).unwrap()).unwrap();
        assert_eq!(r.status, SolveStatus::OptimalMi);
        assert!(r.iterations <= 2, "{}", r.iterations);
        let c = solve_centralized(&p, &TightenConfig::default()).unwrap();
        assert!((r.objective - c.objective).abs() < 1e-9);
    }

    #[test]
    fn recorder_sees_neighbor_messages() {
        let p = example1();
        let mut rec = Recorder::default();
        let r = solve_distributed_with(&p, &params(), &mut rec).unwrap();
        let total = r.iterations + r.stage2_iterations;
        assert_eq!(rec.messages.len(), total * 4 * 3);
        assert_eq!(rec.records.len(), total);
    }
}
