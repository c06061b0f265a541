use ctprice::qp_solver::{
    residuals, solve_qp, QpProblem, SolveStatus, SolverSettings, SparseMatrix,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random strictly feasible QP: PSD Hessian, a box, one budget row and a few
/// extra dense inequalities that the box midpoint satisfies.
fn random_qp(seed: u64, n: usize) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = vec![vec![0.0; n]; n];
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let mut h = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            h[i][j] = (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() * 0.5;
        }
    }
    for i in 0..n {
        // rank deficient now and then so the LP-like corner is exercised
        if rng.gen_bool(0.3) {
            for j in 0..n {
                h[i][j] = 0.0;
                h[j][i] = 0.0;
            }
        }
    }
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let lo: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..0.0)).collect();
    let hi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
    let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();

    let mut g = Vec::new();
    let mut hv = Vec::new();
    for i in 0..n {
        let mut r = vec![0.0; n];
        r[i] = 1.0;
        g.push(r.clone());
        hv.push(hi[i]);
        r[i] = -1.0;
        g.push(r);
        hv.push(-lo[i]);
    }
    for _ in 0..2 {
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let at_mid: f64 = r.iter().zip(&mid).map(|(a, b)| a * b).sum();
        hv.push(at_mid + rng.gen_range(0.1..1.0));
        g.push(r);
    }
    let budget: f64 = mid.iter().sum();
    QpProblem {
        hessian: SparseMatrix::from_dense(&h),
        linear: c,
        eq_matrix: SparseMatrix::from_dense(&[vec![1.0; n]]),
        eq_rhs: vec![budget],
        ineq_matrix: SparseMatrix::from_dense(&g),
        ineq_rhs: hv,
        offset: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gap_is_nonnegative_on_feasible_iterates(seed in any::<u64>(), n in 2usize..9) {
        let p = random_qp(seed, n);
        let sol = solve_qp(&p, &SolverSettings::default()).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        // the dual value is only a bound once the iterate is feasible
        let feasible: Vec<_> = sol.log.iter().enumerate()
            .filter(|(_, it)| it.primal_residual <= 1e-9 && it.dual_residual <= 1e-9)
            .collect();
        prop_assert!(!feasible.is_empty());
        for (k, it) in feasible {
            let gap = it.primal_objective - it.dual_objective;
            prop_assert!(gap >= -1e-10, "iterate {k}: gap {gap}");
        }
        prop_assert!(residuals(&p, &sol).max() < 1e-6);
    }

    #[test]
    fn cost_scaling_scales_duals_only(seed in any::<u64>(), n in 2usize..7, alpha in 0.05f64..20.0) {
        let p = random_qp(seed, n);
        let settings = SolverSettings::default();
        let a = solve_qp(&p, &settings).unwrap();
        let b = solve_qp(&p.with_scaled_cost(alpha), &settings).unwrap();
        prop_assert_eq!(b.status, SolveStatus::Optimal);
        let dual_scale = 1.0 + a.eq_duals.iter().chain(&a.ineq_duals).fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.primal.iter().zip(&b.primal) {
            prop_assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()), "primal {x} vs {y}");
        }
        for (x, y) in a.eq_duals.iter().zip(&b.eq_duals).chain(a.ineq_duals.iter().zip(&b.ineq_duals)) {
            prop_assert!((alpha * x - y).abs() <= 1e-6 * alpha * dual_scale, "dual {x}*{alpha} vs {y}");
        }
    }

    #[test]
    fn repeated_solves_are_bit_identical(seed in any::<u64>(), n in 2usize..8) {
        let p = random_qp(seed, n);
        let settings = SolverSettings::default();
        let a = solve_qp(&p, &settings).unwrap();
        let b = solve_qp(&p, &settings).unwrap();
        prop_assert_eq!(a.iterations, b.iterations);
        prop_assert_eq!(a.primal.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        b.primal.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        for (x, y) in a.log.iter().zip(&b.log) {
            prop_assert_eq!(x.mu.to_bits(), y.mu.to_bits());
            prop_assert_eq!(x.primal_objective.to_bits(), y.primal_objective.to_bits());
            prop_assert_eq!(x.step.to_bits(), y.step.to_bits());
        }
    }
}

#[test]
fn concurrent_solves_match_serial() {
    let problems: Vec<QpProblem> = (0..6).map(|s| random_qp(s, 6)).collect();
    let settings = SolverSettings::default();
    let serial: Vec<Vec<f64>> = problems
        .iter()
        .map(|p| solve_qp(p, &settings).unwrap().primal)
        .collect();
    let parallel: Vec<Vec<f64>> = std::thread::scope(|sc| {
        let handles: Vec<_> = problems
            .iter()
            .map(|p| sc.spawn(|| solve_qp(p, &settings).unwrap().primal))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, parallel);
}
