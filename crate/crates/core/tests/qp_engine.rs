mod common;

use common::{active_set_oracle, random_qp};
use dmiqp::qp::{kkt_residual, solve_qp, QpStatus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_active_set_enumeration_on_random_qps() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let spec = random_qp(&mut rng);
        let (x_ref, obj_ref) = active_set_oracle(&spec).expect("feasible by construction");
        let r = solve_qp(&spec, 1e-9, 10_000).unwrap();
        assert_eq!(r.status, QpStatus::Solved, "case {case}");
        assert!(
            r.kkt_residual <= 1e-8,
            "case {case}: kkt {}",
            r.kkt_residual
        );
        assert!(
            (r.objective - obj_ref).abs() <= 1e-6,
            "case {case}: {} vs {obj_ref}",
            r.objective
        );
        assert!(
            (&r.x - &x_ref).amax() <= 1e-5,
            "case {case}: x {} vs {}",
            r.x,
            x_ref
        );
    }
}

#[test]
fn reported_residual_is_recomputable() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let spec = random_qp(&mut rng);
        let r = solve_qp(&spec, 1e-9, 10_000).unwrap();
        assert!((kkt_residual(&spec, &r) - r.kkt_residual).abs() <= 1e-12);
    }
}
