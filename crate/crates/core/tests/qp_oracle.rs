mod common;

use common::{brute_force_qp, dual_objective, max_abs_diff, random_small_qp};
use osbundle::qp::{qp_solve, QpStatus, DEFAULT_TOL};
use proptest::prelude::*;

#[test]
fn matches_active_set_enumeration() {
    for seed in 0..200 {
        let qp = random_small_qp(seed);
        let oracle = brute_force_qp(&qp).expect("random QP is feasible and strictly convex");
        let sol = qp_solve(&qp, DEFAULT_TOL).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "seed {seed}");
        assert!(max_abs_diff(&sol.z, &oracle.z) <= 1e-6, "seed {seed}: primal");
        assert!(max_abs_diff(&sol.y_eq, &oracle.y_eq) <= 1e-6, "seed {seed}: y_eq");
        assert!(max_abs_diff(&sol.y_in, &oracle.y_in) <= 1e-6, "seed {seed}: y_in");
        assert!(max_abs_diff(&sol.y_lower, &oracle.y_lower) <= 1e-6, "seed {seed}: y_lower");
        assert!(max_abs_diff(&sol.y_upper, &oracle.y_upper) <= 1e-6, "seed {seed}: y_upper");
    }
}

#[test]
fn duality_gap_is_small() {
    for seed in 500..600 {
        let qp = random_small_qp(seed);
        let s = qp_solve(&qp, DEFAULT_TOL).unwrap();
        let dual = dual_objective(&qp, &s.z, &s.y_eq, &s.y_in, &s.y_lower, &s.y_upper);
        assert!((s.objective - dual).abs() <= 1e-6 * (1.0 + s.objective.abs()), "seed {seed}");
        assert!(s.residuals.max() <= 1e-6, "seed {seed}: {:?}", s.residuals);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn objective_scaling_scales_duals(seed in 0u64..10_000, t in 0.1f64..10.0) {
        let qp = random_small_qp(seed);
        let mut scaled = qp.clone();
        scaled.p = qp.p.scale_columns(&vec![t; qp.num_vars()]);
        scaled.q = qp.q.iter().map(|v| v * t).collect();
        let a = qp_solve(&qp, DEFAULT_TOL).unwrap();
        let b = qp_solve(&scaled, DEFAULT_TOL).unwrap();
        prop_assert!(max_abs_diff(&a.z, &b.z) <= 1e-7 * (1.0 + t));
        let scale_up = |v: &[f64]| v.iter().map(|x| x * t).collect::<Vec<_>>();
        let tol = 1e-6 * (1.0 + t);
        prop_assert!(max_abs_diff(&scale_up(&a.y_in), &b.y_in) <= tol);
        prop_assert!(max_abs_diff(&scale_up(&a.y_eq), &b.y_eq) <= tol);
        prop_assert!(max_abs_diff(&scale_up(&a.y_lower), &b.y_lower) <= tol);
        prop_assert!(max_abs_diff(&scale_up(&a.y_upper), &b.y_upper) <= tol);
    }
}
