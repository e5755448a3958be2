//! Generators and independent oracles shared by the integration tests and the
//! acceptance harness.
#![allow(dead_code)]

use dmiqp::intersection::{
    compile_with, CompileOptions, Compiled, IntersectionScenario, Lane, ScenarioParams, Vehicle,
    VehicleKind,
};
use dmiqp::model::{AgentBlock, MiqpProblem, Solution, SolveStatus};
use dmiqp::qp::QpSpec;
use dmiqp::tighten::{solve_centralized, TightenConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

// ---------------------------------------------------------------------------
// Small dense QPs and an active-set enumeration oracle.

/// Strictly convex QP with `n <= 4` variables, up to 4 rows and a mix of
/// finite and infinite bounds. Feasible by construction: the rows are built
/// around a point inside the box.
pub fn random_qp<R: Rng>(rng: &mut R) -> QpSpec {
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(0..=4);
    let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let q = &l * l.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.1..1.0);
    let c = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let lower = DVector::from_fn(n, |i, _| {
        if rng.gen_bool(0.7) {
            x0[i] - rng.gen_range(0.0..2.0)
        } else {
            f64::NEG_INFINITY
        }
    });
    let upper = DVector::from_fn(n, |i, _| {
        if rng.gen_bool(0.7) {
            x0[i] + rng.gen_range(0.0..2.0)
        } else {
            f64::INFINITY
        }
    });
    let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-2.0..2.0));
    let b = DVector::from_fn(m, |r, _| (a.row(r) * &x0)[0] + rng.gen_range(0.0..1.0));
    QpSpec::new(q, c).with_rows(a, b).with_bounds(lower, upper)
}

/// Global minimizer of a strictly convex QP by enumerating every candidate
/// active set: each feasible equality-constrained stationary point is a
/// candidate, and the optimum is the cheapest one.
pub fn active_set_oracle(spec: &QpSpec) -> Option<(DVector<f64>, f64)> {
    let n = spec.q_mat.nrows();
    // All constraints as g x <= h.
    let mut g: Vec<DVector<f64>> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    for r in 0..spec.a.nrows() {
        g.push(spec.a.row(r).transpose());
        h.push(spec.b[r]);
    }
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        if spec.upper[j].is_finite() {
            g.push(e.clone());
            h.push(spec.upper[j]);
        }
        if spec.lower[j].is_finite() {
            g.push(-e);
            h.push(-spec.lower[j]);
        }
    }
    let total = g.len();
    let feasible = |x: &DVector<f64>| (0..total).all(|k| g[k].dot(x) <= h[k] + 1e-9);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << total) {
        let act: Vec<usize> = (0..total).filter(|k| mask >> k & 1 == 1).collect();
        if act.len() > n {
            continue;
        }
        let k = act.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&spec.q_mat);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&spec.q_vec));
        for (i, &c) in act.iter().enumerate() {
            for j in 0..n {
                kkt[(n + i, j)] = g[c][j];
                kkt[(j, n + i)] = g[c][j];
            }
            rhs[n + i] = h[c];
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else {
            continue;
        };
        if (&kkt * &sol - &rhs).amax() > 1e-8 {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        if !feasible(&x) {
            continue;
        }
        let obj = 0.5 * x.dot(&(&spec.q_mat * &x)) + spec.q_vec.dot(&x);
        if best.as_ref().is_none_or(|b| obj < b.1) {
            best = Some((x, obj));
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Convex multi-agent instances.

/// `agents` blocks with a PD quadratic, a box, one local row, and two
/// coupling rows that hold at a known interior point. No binaries.
pub fn random_convex<R: Rng>(rng: &mut R, agents: usize) -> MiqpProblem {
    const MC: usize = 2;
    let mut blocks = Vec::new();
    let mut d = DVector::zeros(MC);
    for _ in 0..agents {
        let n = rng.gen_range(1..=3);
        let mut blk = AgentBlock::new(n, MC);
        let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        blk.q_mat = &l * l.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.5..2.0);
        blk.q_vec = DVector::from_fn(n, |_, _| rng.gen_range(-10.0..10.0));
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(0.0..3.0));
        for j in 0..n {
            blk.lower[j] = x0[j] - rng.gen_range(0.5..3.0);
            blk.upper[j] = x0[j] + rng.gen_range(0.5..3.0);
        }
        let row: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
        let lhs: f64 = row.iter().map(|&(j, a)| a * x0[j]).sum();
        blk.push_row(&row, lhs + rng.gen_range(0.1..1.0));
        for r in 0..MC {
            for j in 0..n {
                blk.c[(r, j)] = rng.gen_range(0.0..1.0);
            }
            d[r] += (blk.c.row(r) * &x0)[0];
        }
        blocks.push(blk);
    }
    for r in 0..MC {
        d[r] += rng.gen_range(0.1..1.0);
    }
    MiqpProblem::new(blocks, d)
}

// ---------------------------------------------------------------------------
// Intersection scenarios.

pub fn snapshot_params<R: Rng>(rng: &mut R) -> ScenarioParams {
    ScenarioParams {
        horizon: rng.gen_range(4..=8),
        eps_strict: 0.05,
        ..ScenarioParams::default()
    }
}

/// Two crossing lanes (sometimes a third, uncontested lane) with 0-2
/// vehicles each, spaced so that the initial state is rear-end safe.
pub fn random_scenario<R: Rng>(rng: &mut R) -> IntersectionScenario {
    let params = snapshot_params(rng);
    let n_lanes = if rng.gen_bool(0.25) { 3 } else { 2 };
    let mut lanes = Vec::new();
    for id in 0..n_lanes {
        lanes.push(Lane {
            id,
            psi: 150.0,
            phi: 170.0,
            light: 0,
            last_switch: -rng.gen_range(0..60),
            conflicts: match id {
                0 => vec![1],
                1 => vec![0],
                _ => vec![],
            },
        });
    }
    // At most one green among the crossing pair.
    match rng.gen_range(0..3) {
        0 => lanes[0].light = 1,
        1 => lanes[1].light = 1,
        _ => {}
    }
    if n_lanes == 3 {
        lanes[2].light = rng.gen_range(0..=1);
    }
    let mut vehicles = Vec::new();
    let mut id = 0;
    for lane in 0..n_lanes {
        let count = rng.gen_range(0..=2);
        let mut p = rng.gen_range(100.0..165.0);
        for _ in 0..count {
            let v: f64 = rng.gen_range(2.0..14.0);
            let kind = if rng.gen_bool(0.65) {
                VehicleKind::Cav
            } else {
                VehicleKind::Hdv
            };
            vehicles.push(Vehicle {
                id,
                lane,
                kind,
                p,
                v,
                u_last: 0.0,
            });
            id += 1;
            p -= params.d_min + params.tau * 15.0 + rng.gen_range(2.0..20.0);
            if p < 0.0 {
                break;
            }
        }
    }
    IntersectionScenario {
        k0: 0,
        params,
        lanes,
        vehicles,
    }
}

pub fn snapshot_options() -> CompileOptions {
    CompileOptions {
        bound_derived_m: true,
        ..CompileOptions::default()
    }
}

/// Compile and solve a snapshot the way the closed loop does.
pub fn solve_snapshot(scn: &IntersectionScenario) -> dmiqp::Result<(Compiled, Option<Solution>)> {
    let compiled = compile_with(scn, &snapshot_options())?.soften_hdv(1e3)?;
    for xi in [0.01, 0.5, 0.8] {
        let cfg = TightenConfig {
            xi,
            penalty_weight: 1e3,
            record_x: false,
            ..TightenConfig::default()
        };
        match solve_centralized(&compiled.problem, &cfg) {
            Ok(r) if r.status.is_mixed_integer() => {
                let sol = r.solution();
                return Ok((compiled, Some(sol)));
            }
            Ok(_) | Err(dmiqp::Error::RelaxedOutOfRange { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok((compiled, None))
}

/// Floor semantics of the light: step `j` (1-based) has switched away from
/// the initial state exactly when `kappa < j + 1`.
pub fn expected_lights(s0: u8, kappa: f64, horizon: usize) -> Vec<u8> {
    (1..=horizon)
        .map(|j| if kappa < (j + 1) as f64 { 1 - s0 } else { s0 })
        .collect()
}

/// Light-model check for one lane: for every `kappa` on a grid the floor
/// assignment satisfies the compiled rows, and flipping any single light
/// violates them.
pub fn check_light_model(h: usize, s0: u8, eps: f64, bound_m: bool) -> Result<usize, String> {
    let params = ScenarioParams {
        horizon: h,
        eps_strict: eps,
        ..ScenarioParams::default()
    };
    let scn = IntersectionScenario {
        k0: 0,
        lanes: vec![Lane {
            id: 0,
            psi: 150.0,
            phi: 170.0,
            light: s0,
            last_switch: -(params.delta_min as i64) - 5,
            conflicts: vec![],
        }],
        params,
        vehicles: vec![],
    };
    let opts = CompileOptions {
        bound_derived_m: bound_m,
        ..CompileOptions::default()
    };
    let c = compile_with(&scn, &opts).map_err(|e| e.to_string())?;
    let tlc = &c.vars.tlc[0];
    let p = &c.problem;
    let mut checked = 0;
    let mut kappa = 1.0;
    while kappa <= (h + 1) as f64 + 1e-12 {
        let in_gap = (1..=h).any(|j| kappa > (j + 1) as f64 - eps && kappa < (j + 1) as f64);
        if !in_gap {
            let lights = expected_lights(s0, kappa, h);
            let mut x = DVector::zeros(p.agents[tlc.agent].n());
            x[tlc.kappa] = kappa;
            for (j, &col) in tlc.s.iter().enumerate() {
                x[col] = f64::from(lights[j]);
            }
            let feasible = |x: &DVector<f64>| -> Result<bool, String> {
                let blk = &p.agents[tlc.agent];
                let bins = blk
                    .binary_cols
                    .iter()
                    .map(|&c| x[c].round() as u8)
                    .collect();
                let sol = Solution {
                    x: vec![x.clone()],
                    binaries: vec![bins],
                    objective: 0.0,
                    status: SolveStatus::FeasibleMi,
                };
                Ok(p.check_feasible(&sol, 1e-9)
                    .map_err(|e| e.to_string())?
                    .feasible)
            };
            if !feasible(&x)? {
                return Err(format!(
                    "H={h} s0={s0} kappa={kappa}: floor lights {lights:?} rejected"
                ));
            }
            for j in 0..h {
                let mut y = x.clone();
                y[tlc.s[j]] = 1.0 - y[tlc.s[j]];
                if feasible(&y)? {
                    return Err(format!(
                        "H={h} s0={s0} kappa={kappa}: flipped light {j} accepted"
                    ));
                }
            }
            checked += 1;
        }
        kappa += 0.125;
    }
    Ok(checked)
}

/// Position of `vehicle` at every horizon step of a solution.
pub fn positions(c: &Compiled, sol: &Solution, vehicle: usize) -> Vec<f64> {
    let cv = c.vars.cav_of(vehicle).expect("CAV");
    cv.p.iter().map(|&j| sol.x[cv.agent][j]).collect()
}

/// At most one CAV of each crossing pair is strictly inside its conflict zone
/// at any step.
pub fn check_lateral(
    scn: &IntersectionScenario,
    c: &Compiled,
    sol: &Solution,
) -> Result<(), String> {
    for &(a, b) in &c.vars.lateral_pairs {
        let la = &scn.lanes[scn.lane_index(scn.vehicles[a].lane).unwrap()];
        let lb = &scn.lanes[scn.lane_index(scn.vehicles[b].lane).unwrap()];
        let (pa, pb) = (positions(c, sol, a), positions(c, sol, b));
        for k in 0..pa.len() {
            let inside = |p: f64, l: &Lane| p > l.psi + 1e-6 && p < l.phi - 1e-6;
            if inside(pa[k], la) && inside(pb[k], lb) {
                return Err(format!(
                    "vehicles {a} and {b} both inside at step {}: {:.3}, {:.3}",
                    k + 1,
                    pa[k],
                    pb[k]
                ));
            }
        }
    }
    Ok(())
}

/// The CAV carrying the stop rows never passes the line while its light is red.
pub fn check_red_light(
    scn: &IntersectionScenario,
    c: &Compiled,
    sol: &Solution,
) -> Result<(), String> {
    for &k in &c.vars.red_stop {
        let l = scn.lane_index(scn.vehicles[k].lane).unwrap();
        let t = &c.vars.tlc[l];
        let p = positions(c, sol, k);
        for j in 0..p.len() {
            let s = sol.x[t.agent][t.s[j]].round();
            if s == 0.0 && p[j] > scn.lanes[l].psi + 1e-6 {
                return Err(format!(
                    "vehicle {k} at {:.4} past the line on red at step {}",
                    p[j],
                    j + 1
                ));
            }
        }
    }
    Ok(())
}

/// Removing every HDV from a gated crossing pair removes its no-conflict rows.
pub fn check_gating(scn: &IntersectionScenario) -> Result<bool, String> {
    let opts = snapshot_options();
    let c = compile_with(scn, &opts).map_err(|e| e.to_string())?;
    let h = scn.params.horizon;
    let gated = !c.vars.no_conflict.is_empty();
    let mut stripped = scn.clone();
    let pair_lanes: Vec<usize> = c
        .vars
        .no_conflict
        .iter()
        .flat_map(|&(l, m)| [scn.lanes[l].id, scn.lanes[m].id])
        .collect();
    stripped
        .vehicles
        .retain(|v| !(v.kind == VehicleKind::Hdv && pair_lanes.contains(&v.lane)));
    let s = compile_with(&stripped, &opts).map_err(|e| e.to_string())?;
    if !s.vars.no_conflict.is_empty() {
        return Err(format!(
            "gating rows survive without HDVs: {:?}",
            s.vars.no_conflict
        ));
    }
    let removed = c.problem.m_coupling() - s.problem.m_coupling();
    let expected = c.vars.no_conflict.len() * h;
    if removed != expected {
        return Err(format!(
            "removed {removed} coupling rows, expected {expected}"
        ));
    }
    // Without any HDV in the scenario there are no gated pairs to begin with.
    if scn.vehicles.iter().all(|v| v.kind == VehicleKind::Cav) && gated {
        return Err("gating rows without any HDV".into());
    }
    Ok(gated)
}
