mod common;

use common::{
    check_gating, check_lateral, check_light_model, check_red_light, random_scenario,
    solve_snapshot,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn light_rows_follow_floor_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut points = 0;
    for _ in 0..100 {
        let h = rng.gen_range(2..=20);
        let s0 = rng.gen_range(0..=1);
        let eps = [1e-3, 0.05, 0.1][rng.gen_range(0..3)];
        points += check_light_model(h, s0, eps, rng.gen_bool(0.5)).unwrap();
    }
    assert!(points > 1000);
}

#[test]
fn lateral_safety_and_red_light_compliance() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut solved = 0;
    let mut with_pairs = 0;
    for case in 0..100 {
        let scn = random_scenario(&mut rng);
        let (c, sol) = solve_snapshot(&scn).unwrap();
        let Some(sol) = sol else { continue };
        solved += 1;
        with_pairs += usize::from(!c.vars.lateral_pairs.is_empty());
        let report = c.problem.check_feasible(&sol, 1e-6).unwrap();
        assert!(report.feasible, "case {case}: {:?}", report.worst);
        check_lateral(&scn, &c, &sol).unwrap_or_else(|e| panic!("case {case}: {e}"));
        check_red_light(&scn, &c, &sol).unwrap_or_else(|e| panic!("case {case}: {e}"));
    }
    assert!(solved >= 80, "only {solved} of 100 snapshots solved");
    assert!(
        with_pairs >= 10,
        "only {with_pairs} solved snapshots had crossing CAVs"
    );
}

#[test]
fn conflict_rows_need_an_hdv() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut gated = 0;
    for case in 0..100 {
        let scn = random_scenario(&mut rng);
        gated += usize::from(check_gating(&scn).unwrap_or_else(|e| panic!("case {case}: {e}")));
    }
    assert!(gated >= 10, "only {gated} scenarios exercised the gate");
}
