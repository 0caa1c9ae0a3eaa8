use proptest::prelude::*;
use scalebio::harness::verify_instance;
use scalebio::oracle::QuadraticOracle;
use scalebio::Vector;

fn oracle(seed: u64) -> QuadraticOracle {
    QuadraticOracle::new(verify_instance(seed).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn penalty_value_never_exceeds_the_reduced_objective(
        seed in 0u64..8,
        l in prop::collection::vec(-3.0f64..3.0, 3),
        alpha in 1.0f64..1e4,
    ) {
        let o = oracle(seed);
        let lambda = Vector::from_vec(l);
        let gap = o.value(&lambda).unwrap() - o.gamma(&lambda, alpha).unwrap();
        prop_assert!(gap >= -1e-9 * o.value(&lambda).unwrap().abs().max(1.0));
    }

    #[test]
    fn penalty_gap_shrinks_as_alpha_grows(
        seed in 0u64..8,
        l in prop::collection::vec(-3.0f64..3.0, 3),
        alpha in 1.0f64..1e3,
    ) {
        let o = oracle(seed);
        let lambda = Vector::from_vec(l);
        let f = o.value(&lambda).unwrap();
        let g1 = f - o.gamma(&lambda, alpha).unwrap();
        let g2 = f - o.gamma(&lambda, 2.0 * alpha).unwrap();
        prop_assert!(g2 <= g1 + 1e-9 * f.abs().max(1.0));
    }

    #[test]
    fn penalized_minimizer_approaches_the_inner_solution(
        seed in 0u64..8,
        l in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let o = oracle(seed);
        let lambda = Vector::from_vec(l);
        let ws = o.w_star(&lambda).unwrap();
        let d = |a: f64| (o.w_star_alpha(&lambda, a).unwrap() - &ws).norm();
        prop_assert!(d(1e4) <= d(1e2) + 1e-12);
    }
}
