//! Compile one snapshot of a two-lane signalized intersection into the
//! distributed MIQP form and solve it: one light agent per lane, one agent
//! per CAV, and an HDV whose trajectory is predicted.
//!
//!     cargo run --example intersection_snapshot

use dmiqp::intersection::{
    compile_with, CompileOptions, IntersectionScenario, Lane, ScenarioParams, Vehicle, VehicleKind,
};
use dmiqp::tighten::{solve_centralized, TightenConfig};

fn main() -> dmiqp::Result<()> {
    let params = ScenarioParams {
        horizon: 10,
        eps_strict: 0.05,
        ..ScenarioParams::default()
    };
    let lane = |id, light, conflicts| Lane {
        id,
        psi: 150.0,
        phi: 170.0,
        light,
        last_switch: -100,
        conflicts,
    };
    let veh = |id, lane, kind, p, v| Vehicle {
        id,
        lane,
        kind,
        p,
        v,
        u_last: 0.0,
    };
    let scn = IntersectionScenario {
        k0: 0,
        params,
        lanes: vec![lane(0, 1, vec![1]), lane(1, 0, vec![0])],
        vehicles: vec![
            veh(1, 0, VehicleKind::Cav, 110.0, 12.0),
            veh(2, 0, VehicleKind::Hdv, 90.0, 12.0),
            veh(3, 1, VehicleKind::Cav, 120.0, 10.0),
        ],
    };
    println!("{}", scn.to_json()?);

    let opts = CompileOptions {
        bound_derived_m: true,
        ..CompileOptions::default()
    };
    let compiled = compile_with(&scn, &opts)?.soften_hdv(1e3)?;
    let p = &compiled.problem;
    println!(
        "{} agents, {} variables, {} binaries",
        p.n_agents(),
        p.total_vars(),
        p.total_binaries()
    );

    let cfg = TightenConfig {
        penalty_weight: 1e3,
        record_x: false,
        ..TightenConfig::default()
    };
    let report = solve_centralized(p, &cfg)?;
    println!(
        "status {:?} after {} iterations",
        report.status, report.iterations
    );
    if !report.status.is_mixed_integer() {
        return Ok(());
    }
    let x = report.solution().x;
    for (l, plan) in compiled.vars.light_plan(&x).iter().enumerate() {
        println!("lane {l} lights: {plan:?}");
    }
    for c in &compiled.vars.cav {
        let pos: Vec<String> =
            c.p.iter()
                .map(|&j| format!("{:.1}", x[c.agent][j]))
                .collect();
        println!(
            "vehicle {} positions: {}",
            scn.vehicles[c.vehicle].id,
            pos.join(" ")
        );
    }
    for (v, u) in compiled.vars.first_controls(&x) {
        println!("vehicle {} applies u = {u:.3}", scn.vehicles[v].id);
    }
    Ok(())
}
