use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use super::{
    can_stop, count_conflicts, lane_priority, predict_hdv, IntersectionScenario, VehicleKind,
};
use crate::error::{Error, Result};
use crate::model::{AgentBlock, BigMEntry, MiqpProblem, Polarity, RowRef, SoftRow};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompileOptions {
    /// Replace every initial `M` by the supremum of its row over the variable
    /// box (positions are boxed by their reachable range).
    pub bound_derived_m: bool,
    /// Linear cost on every lateral binary. Without it these binaries are
    /// free whenever their rows are slack, and an interior-point relaxation
    /// returns them at fractional values that tightening cannot resolve.
    pub lateral_cost: f64,
    /// Order every crossing CAV pair first come, first served and keep the
    /// later vehicle out of its conflict zone for the whole horizon. Only a
    /// vehicle that can still stop before its line is held back.
    pub lateral_order: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            bound_derived_m: false,
            lateral_cost: 0.1,
            lateral_order: false,
        }
    }
}

/// Columns of one traffic light controller agent.
#[derive(Clone, Debug, PartialEq)]
pub struct TlcVars {
    pub agent: usize,
    pub lane: usize,
    pub kappa: usize,
    /// `s(k0 + 1) ..= s(k0 + H)`.
    pub s: Vec<usize>,
    /// Lateral binaries `(vehicle, c, e)` for each CAV of this lane that has a
    /// lateral conflict.
    pub lateral: Vec<(usize, Vec<usize>, Vec<usize>)>,
}

/// Columns of one CAV agent: `p(k), v(k)` for `k = 1..=H` and `u(k - 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CavVars {
    pub agent: usize,
    pub vehicle: usize,
    pub p: Vec<usize>,
    pub v: Vec<usize>,
    pub u: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarMap {
    pub horizon: usize,
    /// Indexed by lane index.
    pub tlc: Vec<TlcVars>,
    pub cav: Vec<CavVars>,
    /// Vehicles carrying the red-light stop rows.
    pub red_stop: Vec<usize>,
    /// Lane pairs with the "not both green" rows.
    pub no_conflict: Vec<(usize, usize)>,
    /// CAV pairs on conflicting lanes with lateral rows.
    pub lateral_pairs: Vec<(usize, usize)>,
    /// Rear-end rows of CAVs following an HDV prediction.
    pub hdv_rear_rows: Vec<(usize, RowRef)>,
    /// CAVs held before their conflict zone by `lateral_order`.
    pub held: Vec<usize>,
}

impl VarMap {
    pub fn cav_of(&self, vehicle: usize) -> Option<&CavVars> {
        self.cav.iter().find(|c| c.vehicle == vehicle)
    }

    /// First acceleration of every CAV, as `(vehicle, u(k0))`.
    pub fn first_controls(&self, x: &[DVector<f64>]) -> Vec<(usize, f64)> {
        self.cav
            .iter()
            .map(|c| (c.vehicle, x[c.agent][c.u[0]]))
            .collect()
    }

    /// Rounded light plan `s_l(k0 + 1 ..= k0 + H)` per lane.
    pub fn light_plan(&self, x: &[DVector<f64>]) -> Vec<Vec<u8>> {
        self.tlc
            .iter()
            .map(|t| t.s.iter().map(|&c| u8::from(x[t.agent][c] > 0.5)).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Compiled {
    pub problem: MiqpProblem,
    pub vars: VarMap,
}

impl Compiled {
    /// Move the rear-end rows against HDV predictions into the objective.
    pub fn soften_hdv(mut self, weight: f64) -> Result<Self> {
        self.problem = soften(&self.problem, &self.vars.hdv_rear_rows, weight)?;
        Ok(self)
    }
}

pub fn compile(scn: &IntersectionScenario) -> Result<Compiled> {
    compile_with(scn, &CompileOptions::default())
}

/// Coupling rows collected before the agents' column slices exist.
#[derive(Default)]
struct CouplingRows {
    coeffs: Vec<Vec<(usize, usize, f64)>>,
    d: Vec<f64>,
}

impl CouplingRows {
    fn push(&mut self, coeffs: Vec<(usize, usize, f64)>, rhs: f64) -> usize {
        self.coeffs.push(coeffs);
        self.d.push(rhs);
        self.d.len() - 1
    }
}

fn push_eq(blk: &mut AgentBlock, coeffs: &[(usize, f64)], rhs: f64) {
    blk.push_row(coeffs, rhs);
    let neg: Vec<(usize, f64)> = coeffs.iter().map(|&(j, v)| (j, -v)).collect();
    blk.push_row(&neg, -rhs);
}

/// Local row `phi(x) <= M * delta` (or `M * (1 - delta)`), given `phi(x) = coeffs . x - base`.
fn push_local_bigm(
    blk: &mut AgentBlock,
    coeffs: &[(usize, f64)],
    base: f64,
    bin: usize,
    pol: Polarity,
    m: f64,
) {
    let mut row = coeffs.to_vec();
    row.push((bin, pol.coefficient(m)));
    let r = blk.push_row(&row, base + pol.rhs_offset(m));
    blk.bigm.push(BigMEntry::new(RowRef::Local(r), bin, pol, m));
}

pub fn compile_with(scn: &IntersectionScenario, opts: &CompileOptions) -> Result<Compiled> {
    scn.validate()?;
    if !(opts.lateral_cost >= 0.0 && opts.lateral_cost.is_finite()) {
        return Err(Error::Parameter(format!(
            "lateral_cost = {} must be >= 0",
            opts.lateral_cost
        )));
    }
    let prm = &scn.params;
    let h = prm.horizon;
    let m_big = prm.big_m;
    let dt = prm.dt;
    let n_lanes = scn.lanes.len();
    let lane_of: Vec<usize> = scn
        .vehicles
        .iter()
        .map(|v| scn.lane_index(v.lane).expect("validated"))
        .collect();
    let is_cav = |k: usize| scn.vehicles[k].kind == VehicleKind::Cav;

    // Lateral CAV pairs: both vehicles still before their conflict exit.
    let mut lateral_pairs = Vec::new();
    for (l, m) in scn.conflict_pairs() {
        for a in scn.lane_vehicles(l) {
            for b in scn.lane_vehicles(m) {
                let pending =
                    |k: usize, lane: usize| is_cav(k) && scn.vehicles[k].p < scn.lanes[lane].phi;
                if pending(a, l) && pending(b, m) {
                    lateral_pairs.push((a, b));
                }
            }
        }
    }
    let lateral_cavs: BTreeSet<usize> = lateral_pairs.iter().flat_map(|&(a, b)| [a, b]).collect();

    let mut agents = Vec::new();
    let mut tlc = Vec::with_capacity(n_lanes);
    for l in 0..n_lanes {
        let lats: Vec<usize> = scn
            .lane_vehicles(l)
            .into_iter()
            .filter(|k| lateral_cavs.contains(k))
            .collect();
        let n = 1 + h + 2 * h * lats.len();
        let mut blk = AgentBlock::new(n, 0);
        let kappa = 0;
        blk.lower[kappa] = 1.0;
        blk.upper[kappa] = (h + 1) as f64;
        let s: Vec<usize> = (1..=h).collect();
        let mut lateral = Vec::new();
        for (t, &k) in lats.iter().enumerate() {
            let base = 1 + h + 2 * h * t;
            lateral.push((
                k,
                (base..base + h).collect::<Vec<_>>(),
                (base + h..base + 2 * h).collect(),
            ));
        }
        for c in 1..n {
            blk.mark_binary(c);
        }
        for c in 1 + h..n {
            blk.q_vec[c] = opts.lateral_cost;
        }
        let gamma = lane_priority(scn, l);
        for &c in &s {
            blk.q_vec[c] = -gamma;
        }

        // Light model: the light has switched at step j exactly when
        // j >= floor(kappa), i.e. kappa < j + 1.
        let eps = prm.eps_strict;
        let s0 = scn.lanes[l].light;
        for j in 1..=h {
            let col = s[j - 1];
            let jj = (j + 1) as f64;
            // switched  =>  kappa - (j + 1) + eps <= 0
            // unchanged =>  (j + 1) - kappa <= 0
            let (pol_switched, pol_unchanged) = if s0 == 0 {
                (Polarity::OneMinusDelta, Polarity::Delta)
            } else {
                (Polarity::Delta, Polarity::OneMinusDelta)
            };
            push_local_bigm(
                &mut blk,
                &[(kappa, 1.0)],
                jj - eps,
                col,
                pol_switched,
                m_big,
            );
            push_local_bigm(&mut blk, &[(kappa, -1.0)], -jj, col, pol_unchanged, m_big);
        }

        let lane_vs = scn.lane_vehicles(l);
        let all_cav = !lane_vs.is_empty() && lane_vs.iter().all(|&k| is_cav(k));
        if !all_cav {
            let since = (scn.lanes[l].last_switch - scn.k0) as f64;
            let lo = (prm.delta_min + since).min((h + 1) as f64);
            let hi = (prm.delta_max + since).max(1.0);
            blk.push_row(&[(kappa, -1.0)], -lo);
            blk.push_row(&[(kappa, 1.0)], hi);
        }
        tlc.push(TlcVars {
            agent: agents.len(),
            lane: l,
            kappa,
            s,
            lateral,
        });
        agents.push(blk);
    }

    let mut cav = Vec::new();
    for (k, veh) in scn.vehicles.iter().enumerate() {
        if veh.kind != VehicleKind::Cav {
            continue;
        }
        let mut blk = AgentBlock::new(3 * h, 0);
        let p: Vec<usize> = (0..h).collect();
        let v: Vec<usize> = (h..2 * h).collect();
        let u: Vec<usize> = (2 * h..3 * h).collect();
        for t in 0..h {
            let steps = (t + 1) as f64 * dt;
            blk.lower[p[t]] = veh.p + steps * prm.v_min;
            blk.upper[p[t]] = veh.p + steps * prm.v_max;
            blk.lower[v[t]] = prm.v_min;
            blk.upper[v[t]] = prm.v_max;
            blk.lower[u[t]] = prm.u_min;
            blk.upper[u[t]] = prm.u_max;
            blk.q_vec[p[t]] = -prm.w_p;
            blk.q_mat[(v[t], v[t])] = 2.0 * prm.w_v;
            blk.q_vec[v[t]] = -2.0 * prm.w_v * prm.v_max;
            blk.q_mat[(u[t], u[t])] = 2.0 * prm.w_u;
        }
        blk.constant = h as f64 * prm.w_v * prm.v_max * prm.v_max;

        let half = 0.5 * dt * dt;
        push_eq(&mut blk, &[(p[0], 1.0), (u[0], -half)], veh.p + dt * veh.v);
        push_eq(&mut blk, &[(v[0], 1.0), (u[0], -dt)], veh.v);
        for t in 1..h {
            push_eq(
                &mut blk,
                &[
                    (p[t], 1.0),
                    (p[t - 1], -1.0),
                    (v[t - 1], -dt),
                    (u[t], -half),
                ],
                0.0,
            );
            push_eq(&mut blk, &[(v[t], 1.0), (v[t - 1], -1.0), (u[t], -dt)], 0.0);
        }
        cav.push(CavVars {
            agent: agents.len(),
            vehicle: k,
            p,
            v,
            u,
        });
        agents.push(blk);
    }
    let cav_index: BTreeMap<usize, usize> = cav
        .iter()
        .enumerate()
        .map(|(i, c)| (c.vehicle, i))
        .collect();

    let mut rows = CouplingRows::default();
    let mut coupling_bigm: Vec<(usize, usize, usize, Polarity)> = Vec::new();
    let mut hdv_rear_rows = Vec::new();

    // Not both green while an HDV is involved in a crossing conflict.
    let mut no_conflict = Vec::new();
    for (l, m) in scn.conflict_pairs() {
        if count_conflicts(scn, l, m)? == 0 {
            continue;
        }
        no_conflict.push((l, m));
        for j in 0..h {
            rows.push(
                vec![
                    (tlc[l].agent, tlc[l].s[j], 1.0),
                    (tlc[m].agent, tlc[m].s[j], 1.0),
                ],
                1.0,
            );
        }
    }

    // Red-light stop for the first CAV of each lane that can still stop.
    let mut red_stop = Vec::new();
    for l in 0..n_lanes {
        let psi = scn.lanes[l].psi;
        let first = scn.lane_vehicles(l).into_iter().find(|&k| {
            let v = &scn.vehicles[k];
            is_cav(k) && v.p < psi && can_stop(v.p, v.v, psi, prm.u_min)
        });
        if let Some(k) = first {
            red_stop.push(k);
            let cv = &cav[cav_index[&k]];
            let t = &tlc[l];
            for j in 0..h {
                let r = rows.push(
                    vec![(cv.agent, cv.p[j], 1.0), (t.agent, t.s[j], -m_big)],
                    psi,
                );
                coupling_bigm.push((t.agent, r, t.s[j], Polarity::Delta));
            }
        }
    }

    // Rear-end safety against the vehicle ahead on the same lane.
    for l in 0..n_lanes {
        let vs = scn.lane_vehicles(l);
        for w in vs.windows(2) {
            let (lead, k) = (w[0], w[1]);
            if !is_cav(k) {
                continue;
            }
            let cv = cav[cav_index[&k]].clone();
            if is_cav(lead) {
                let lv = &cav[cav_index[&lead]];
                for j in 0..h {
                    rows.push(
                        vec![
                            (cv.agent, cv.p[j], 1.0),
                            (cv.agent, cv.v[j], prm.tau),
                            (lv.agent, lv.p[j], -1.0),
                        ],
                        -prm.d_min,
                    );
                }
            } else {
                let (pred, _) = predict_hdv(&scn.vehicles[lead], prm, h);
                let blk = &mut agents[cv.agent];
                for j in 0..h {
                    let r =
                        blk.push_row(&[(cv.p[j], 1.0), (cv.v[j], prm.tau)], pred[j] - prm.d_min);
                    hdv_rear_rows.push((cv.agent, RowRef::Local(r)));
                }
            }
        }
    }

    // Lateral safety: `c = 0` keeps the CAV before the zone, `e = 0` keeps it
    // past the zone, and each conflicting pair needs one of the four at 0.
    for t in &tlc {
        let (psi, phi) = (scn.lanes[t.lane].psi, scn.lanes[t.lane].phi);
        for (k, c, e) in &t.lateral {
            let cv = &cav[cav_index[k]];
            for j in 0..h {
                let r = rows.push(vec![(cv.agent, cv.p[j], 1.0), (t.agent, c[j], -m_big)], psi);
                coupling_bigm.push((t.agent, r, c[j], Polarity::Delta));
                let r = rows.push(
                    vec![(cv.agent, cv.p[j], -1.0), (t.agent, e[j], -m_big)],
                    -phi,
                );
                coupling_bigm.push((t.agent, r, e[j], Polarity::Delta));
            }
        }
    }
    let lateral_cols = |k: usize| -> (usize, &Vec<usize>, &Vec<usize>) {
        let t = &tlc[lane_of[k]];
        let (_, c, e) = t
            .lateral
            .iter()
            .find(|(v, _, _)| *v == k)
            .expect("lateral CAV");
        (t.agent, c, e)
    };
    for &(a, b) in &lateral_pairs {
        let (ta, ca, ea) = lateral_cols(a);
        let (tb, cb, eb) = lateral_cols(b);
        for j in 0..h {
            rows.push(
                vec![
                    (ta, ca[j], 1.0),
                    (ta, ea[j], 1.0),
                    (tb, cb[j], 1.0),
                    (tb, eb[j], 1.0),
                ],
                3.0,
            );
        }
    }

    let mut held = BTreeSet::new();
    if opts.lateral_order {
        let stoppable = |k: usize| {
            let (v, psi) = (&scn.vehicles[k], scn.lanes[lane_of[k]].psi);
            v.p < psi && can_stop(v.p, v.v, psi, prm.u_min)
        };
        let gap = |k: usize| scn.lanes[lane_of[k]].psi - scn.vehicles[k].p;
        for &(a, b) in &lateral_pairs {
            let later = match (stoppable(a), stoppable(b)) {
                (true, true) if gap(a) <= gap(b) => b,
                (true, true) => a,
                (true, false) => a,
                (false, true) => b,
                (false, false) => continue,
            };
            held.insert(later);
        }
        for &k in &held {
            let t = &tlc[lane_of[k]];
            let (_, c, _) = t
                .lateral
                .iter()
                .find(|(v, _, _)| *v == k)
                .expect("lateral CAV");
            for &col in c {
                agents[t.agent].push_row(&[(col, 1.0)], 0.0);
            }
        }
    }

    let mc = rows.d.len();
    for blk in &mut agents {
        blk.c = DMatrix::zeros(mc, blk.n());
    }
    for (r, coeffs) in rows.coeffs.iter().enumerate() {
        for &(i, j, v) in coeffs {
            agents[i].c[(r, j)] += v;
        }
    }
    for (i, r, col, pol) in coupling_bigm {
        agents[i]
            .bigm
            .push(BigMEntry::new(RowRef::Coupling(r), col, pol, m_big));
    }

    let mut problem = MiqpProblem::new(agents, DVector::from_vec(rows.d));
    if opts.bound_derived_m {
        bound_derived_m(&mut problem);
    }
    problem.ensure_valid()?;
    Ok(Compiled {
        problem,
        vars: VarMap {
            horizon: h,
            tlc,
            cav,
            red_stop,
            no_conflict,
            lateral_pairs,
            hdv_rear_rows,
            held: held.into_iter().collect(),
        },
    })
}

/// Set every big-M entry's initial and current `M` to the supremum of its
/// row's continuous part over the variable bounds, when that supremum is
/// finite and below the current value. Rows that can never be violated get
/// a small positive floor so that `M` stays positive.
const M_FLOOR: f64 = 1e-3;

pub(crate) fn bound_derived_m(p: &mut MiqpProblem) {
    for i in 0..p.agents.len() {
        for k in 0..p.agents[i].bigm.len() {
            let e = p.agents[i].bigm[k].clone();
            let mut sup = 0.0;
            let mut add = |coef: f64, lo: f64, hi: f64| {
                if coef != 0.0 {
                    sup += (coef * lo).max(coef * hi);
                }
            };
            let base = match e.row {
                RowRef::Local(r) => {
                    let blk = &p.agents[i];
                    for j in 0..blk.n() {
                        if j != e.col {
                            add(blk.a[(r, j)], blk.lower[j], blk.upper[j]);
                        }
                    }
                    blk.b[r]
                }
                RowRef::Coupling(r) => {
                    for (a, blk) in p.agents.iter().enumerate() {
                        for j in 0..blk.n() {
                            if !(a == i && j == e.col) {
                                add(blk.c[(r, j)], blk.lower[j], blk.upper[j]);
                            }
                        }
                    }
                    p.d[r]
                }
            };
            let sup_phi = sup - (base - e.polarity.rhs_offset(e.m_current));
            if sup_phi.is_finite() && sup_phi < e.m_current {
                let m = sup_phi.max(M_FLOOR);
                p.set_m(i, k, m);
                p.agents[i].bigm[k].m_initial = m;
            }
        }
    }
}

/// Move the selected rows into the objective as weighted max-penalties.
pub fn soften(p: &MiqpProblem, rows: &[(usize, RowRef)], weight: f64) -> Result<MiqpProblem> {
    if !(weight.is_finite() && weight > 0.0) {
        return Err(Error::Parameter(format!(
            "soft weight {weight} must be positive"
        )));
    }
    let mut out = p.clone();
    for &(agent, row) in rows {
        let Some(blk) = out.agents.get_mut(agent) else {
            return Err(Error::Dimension(format!("soften: no agent {agent}")));
        };
        let exists = match row {
            RowRef::Local(r) => r < blk.m_local(),
            RowRef::Coupling(r) => r < blk.c.nrows(),
        };
        if !exists {
            return Err(Error::Dimension(format!(
                "soften: agent {agent} has no {row}"
            )));
        }
        match blk.soft.iter_mut().find(|s| s.row == row) {
            Some(s) => s.weight = weight,
            None => blk.soft.push(SoftRow { row, weight }),
        }
    }
    Ok(out)
}
