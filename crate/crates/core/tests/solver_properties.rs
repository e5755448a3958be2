use dmiqp::admm::{solve_distributed, AdmmParams};
use dmiqp::model::{BigMEntry, MiqpProblem, Polarity, RowRef};
use dmiqp::oracle::{random_instance, solve_exhaustive, GeneratorConfig};
use dmiqp::report::SolveReport;
use dmiqp::tighten::{solve_centralized, update_m, TightenConfig};
use dmiqp::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64) -> MiqpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_instance(&mut rng, &GeneratorConfig::new(4))
}

/// A mixed-integer answer is feasible and never beats the enumerated optimum.
fn check_against_oracle(p: &MiqpProblem, r: &SolveReport) -> Result<(), TestCaseError> {
    prop_assert!(r.m_non_increasing());
    if r.status.is_mixed_integer() {
        let rep = p.check_feasible(&r.solution(), 1e-6).unwrap();
        prop_assert!(rep.feasible, "{:?}", rep.worst);
        let oracle = solve_exhaustive(p, 20).unwrap();
        prop_assert!(
            r.objective >= oracle.best_objective - 1e-6,
            "{} < {}",
            r.objective,
            oracle.best_objective
        );
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn centralized_is_monotone_and_sound(seed in any::<u64>()) {
        let p = instance(seed);
        let cfg = TightenConfig { record_x: false, ..TightenConfig::default() };
        check_against_oracle(&p, &solve_centralized(&p, &cfg).unwrap())?;
    }

    #[test]
    fn distributed_is_monotone_and_sound(seed in any::<u64>()) {
        let p = instance(seed);
        let params = AdmmParams { record_x: false, ..AdmmParams::default() };
        check_against_oracle(&p, &solve_distributed(&p, &params).unwrap())?;
    }
}

proptest! {
    #[test]
    fn update_never_raises_m(m in 1e-3..1e4f64, y in 0.0..=1.0f64, xi in 1e-3..0.999f64, one_minus in any::<bool>()) {
        let pol = if one_minus { Polarity::OneMinusDelta } else { Polarity::Delta };
        let e = BigMEntry::new(RowRef::Local(0), 0, pol, m);
        let m_new = update_m(&e, y, xi, 1e-3).unwrap();
        prop_assert!(m_new <= m);
        prop_assert!(m_new >= xi * m * (1.0 - 1e-12));
    }

    #[test]
    fn gate_is_a_strict_inequality(rho in 0.01..5.0f64, gamma in 0.05..1.95f64, agents in 1usize..12) {
        let bound = rho * (agents as f64 / (2.0 - gamma) - 1.0);
        if bound > 0.0 {
            let at = AdmmParams::new(rho, bound, gamma, agents);
            let rejected = matches!(at, Err(Error::ConvergenceGate { .. }));
            prop_assert!(rejected);
        }
        let above = bound.max(0.0) + 1e-6;
        prop_assert!(AdmmParams::new(rho, above, gamma, agents).is_ok());
    }

    #[test]
    fn relaxed_values_outside_the_box_are_errors(y in 1.01..10.0f64) {
        let e = BigMEntry::new(RowRef::Local(0), 0, Polarity::Delta, 10.0);
        let err = update_m(&e, y, 0.01, 1e-3);
        prop_assert!(matches!(err, Err(Error::RelaxedOutOfRange { .. })), "expected RelaxedOutOfRange");
        let err = update_m(&e, -y, 0.01, 1e-3);
        prop_assert!(matches!(err, Err(Error::RelaxedOutOfRange { .. })), "expected RelaxedOutOfRange");
    }
}

#[test]
fn boundary_beta_is_rejected() {
    assert!(matches!(
        AdmmParams::new(0.1, 0.3, 1.0, 4),
        Err(Error::ConvergenceGate { .. })
    ));
    assert!(AdmmParams::new(0.1, 0.3 + 1e-9, 1.0, 4).is_ok());
}
