//! Property tests for the invariants of each layer.

use mfbsde::bench::BenchmarkCase;
use mfbsde::constants::{
    apriori_lambda, c_delta_k_n, contraction_coefficients, local_ball, local_step, log_inequality_gap, ConstantsLedger,
};
use mfbsde::global::{bmo_ceiling_log, plan_stitch_with, WindowPolicy};
use mfbsde::mc::{conditional_expectation, Ensemble, ProcessPair, RegressionBasis, Regressor, TimeGrid};
use mfbsde::model::{check_h1, check_h2, check_h4, DiagonalQuadratic, ModelParams, Point, ScalarFn};
use mfbsde::picard::{apply_gamma, row_substitute};
use mfbsde::qbsde1d::{solve_1d, FnGenerator1D, GrowthCertificate, Solve1DOptions};
use proptest::prelude::*;

fn params(n: usize, gamma: f64, c0: f64, c1: f64, c2: f64, t: f64) -> ModelParams {
    let mut p = ModelParams::basic(n, 1, t, gamma);
    p.a = ScalarFn::Constant(c0 / t);
    p.alpha = ScalarFn::Constant(c2 / t);
    p.c0 = c0;
    p.c1 = c1;
    p.c2 = c2;
    p.phi = ScalarFn::Affine { intercept: 1.0, slope: 0.5 };
    p
}

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.ln()..hi.ln()).prop_map(f64::exp)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn log_inequality_gap_nonnegative(x in log_uniform(1e-6, 1e3), y in log_uniform(1e-6, 1e3), c in log_uniform(1e-6, 1e3)) {
        let gap = log_inequality_gap(x, y, c).unwrap();
        prop_assert!(gap >= -1e-12, "gap {} at ({}, {}, {})", gap, x, y, c);
    }

    #[test]
    fn c_dkn_matches_formula(delta in 0.0..0.95f64, k in 0.0..3.0f64, n in 1usize..6) {
        let v = c_delta_k_n(delta, k, n).unwrap();
        let by_hand = 0.5 * (1.0 - delta) * (1.0 + delta).powf((1.0 + delta) / (1.0 - delta)) * (n as f64 * k).powf(2.0 / (1.0 - delta));
        prop_assert!((v - by_hand).abs() <= 1e-12 * by_hand.max(1.0));
    }

    #[test]
    fn k1_monotone_in_c0_c1(n in 1usize..4, gamma in 0.2..3.0f64, c0 in 0.0..2.0f64, c1 in 0.0..2.0f64, d0 in 0.0..1.0f64, d1 in 0.0..1.0f64) {
        let (k1, _) = local_ball(&params(n, gamma, c0, c1, 0.0, 1.0)).unwrap();
        let (k1b, _) = local_ball(&params(n, gamma, c0 + d0, c1, 0.0, 1.0)).unwrap();
        let (k1c, _) = local_ball(&params(n, gamma, c0, c1 + d1, 0.0, 1.0)).unwrap();
        prop_assert!(k1b >= k1 && k1c >= k1);
    }

    #[test]
    fn lambda_monotone_and_dominates_c3(n in 1usize..4, gamma in 0.2..2.0f64, c1 in 0.0..2.0f64, c2 in 0.0..1.0f64, t in 0.1..2.0f64, bump in 0.0..0.5f64) {
        let base = params(n, gamma, 0.0, c1, c2, t);
        let (c3, lambda) = apriori_lambda(&base).unwrap();
        prop_assert!(lambda >= c3);
        let (_, l1) = apriori_lambda(&params(n, gamma, 0.0, c1 + bump, c2, t)).unwrap();
        let (_, l2) = apriori_lambda(&params(n, gamma, 0.0, c1, c2 + bump, t)).unwrap();
        let (_, l3) = apriori_lambda(&params(n, gamma, 0.0, c1, c2, t + bump)).unwrap();
        prop_assert!(l1 >= lambda && l2 >= lambda && l3 >= lambda);
    }

    #[test]
    fn eps0_nonincreasing_in_phi(gamma in 0.3..2.0f64, c1 in 0.0..1.0f64, k in 0.0..0.5f64, lift in 0.0..2.0f64) {
        let mut p = params(1, gamma, 0.0, c1, 0.0, 1.0);
        p.k = k;
        let e = local_step(&p).unwrap();
        prop_assert!(e > 0.0);
        p.phi = ScalarFn::Affine { intercept: 1.0 + lift, slope: 0.5 + lift };
        prop_assert!(local_step(&p).unwrap() <= e);
    }

    #[test]
    fn ledger_is_pure(gamma in 0.3..2.0f64, c1 in 0.0..1.0f64, c2 in 0.0..1.0f64) {
        let p = params(2, gamma, 0.1, c1, c2, 1.0);
        prop_assert_eq!(ConstantsLedger::new(&p).unwrap(), ConstantsLedger::new(&p).unwrap());
    }

    #[test]
    fn contraction_coefficients_linear_in_eps(eps in 1e-4..1e-1f64) {
        let mut p = ModelParams::basic(1, 1, 1.0, 1.0);
        p.phi = ScalarFn::Constant(1.0);
        let a = contraction_coefficients(eps, 1.0, 1.0, &p, 1.0, 1.0, 1.0).unwrap();
        let b = contraction_coefficients(eps / 2.0, 1.0, 1.0, &p, 1.0, 1.0, 1.0).unwrap();
        prop_assert!((a.coef_u - 2.0 * b.coef_u).abs() <= 1e-12 * a.coef_u);
    }

    #[test]
    fn bmo_ceiling_monotone(lambda in 1.0..50.0f64, c2 in 0.0..2.0f64, bump in 0.01..5.0f64) {
        let p = params(1, 1.0, 0.0, 0.5, c2, 1.0);
        let q = params(1, 1.0, 0.0, 0.5, c2 + bump, 1.0);
        prop_assert!(bmo_ceiling_log(&p, lambda + bump) > bmo_ceiling_log(&p, lambda));
        prop_assert!(bmo_ceiling_log(&q, lambda) > bmo_ceiling_log(&p, lambda));
    }

    #[test]
    fn row_substitution_identity_and_involution(
        n in 1usize..5, d in 1usize..4,
        seed in any::<u64>(), i_raw in 0usize..100,
    ) {
        let h: Vec<f64> = (0..n * d).map(|k| ((seed.wrapping_add(k as u64) % 97) as f64) - 48.0).collect();
        let z: Vec<f64> = (0..d).map(|k| k as f64 + 0.5).collect();
        let i = i_raw % n;
        let own = h[i * d..(i + 1) * d].to_vec();
        prop_assert_eq!(row_substitute(&h, n, d, &own, i).unwrap(), h.clone());
        let sub = row_substitute(&h, n, d, &z, i).unwrap();
        prop_assert_eq!(&sub[i * d..(i + 1) * d], &z[..]);
        prop_assert_eq!(row_substitute(&sub, n, d, &own, i).unwrap(), h);
    }

    #[test]
    fn stitch_plans_tile(t in 0.05..3.0f64, m in 1usize..200, steps in 1usize..60) {
        let case = BenchmarkCase::meanfield_linear_with(0.1, 0.1, 1.0, 1, t).unwrap();
        let ledger = ConstantsLedger::new(&case.params).unwrap();
        let grid = TimeGrid::new(m, t).unwrap();
        for policy in [WindowPolicy::Auto, WindowPolicy::Fixed(steps)] {
            let plan = plan_stitch_with(&case.params, &ledger, &grid, policy).unwrap();
            prop_assert!(plan.tiles(&grid));
            let lens: Vec<usize> = plan.windows.iter().map(|(s, e)| e - s).collect();
            prop_assert!(lens.iter().all(|&l| l <= plan.window_steps));
            prop_assert!(lens[..lens.len() - 1].iter().all(|&l| l == plan.window_steps));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generator_component_matches_eval(t in 0.0..1.0f64, y in prop::collection::vec(-3.0..3.0f64, 2), z in prop::collection::vec(-3.0..3.0f64, 2)) {
        for case in BenchmarkCase::catalog().unwrap() {
            let n = case.params.n;
            let x = Point { t, y: &y[..n], ybar: &y[..n], z: &z[..n], zbar: &z[..n] };
            let all = case.generator.eval(&x);
            for (i, v) in all.iter().enumerate() {
                prop_assert_eq!(v.to_bits(), case.generator.component(i, &x).to_bits());
            }
        }
    }

    #[test]
    fn checker_reports_deterministic(seed in any::<u64>()) {
        let g = DiagonalQuadratic { n: 2, d: 1, gamma: 1.0 };
        let mut p = ModelParams::basic(2, 1, 1.0, 1.0);
        p.phi = ScalarFn::Affine { intercept: 1.0, slope: 1.0 };
        for check in [check_h1, check_h2, check_h4] {
            prop_assert_eq!(check(&g, &p, 200, seed).unwrap(), check(&g, &p, 200, seed).unwrap());
        }
    }

    #[test]
    fn ensemble_is_reproducible(m in 1usize..8, np in 2usize..40, d in 1usize..3, seed in any::<u64>()) {
        let grid = TimeGrid::new(m, 1.0).unwrap();
        let a = Ensemble::generate(grid, np, d, seed).unwrap();
        let b = Ensemble::generate(grid, np, d, seed).unwrap();
        prop_assert_eq!(a.increments(), b.increments());
        prop_assert_eq!(a.cumulative(), b.cumulative());
        for p in 0..np {
            for j in 0..d {
                prop_assert_eq!(a.w(0, p, j), 0.0);
                for k in 0..m {
                    prop_assert_eq!(a.w(k + 1, p, j), a.w(k, p, j) + a.dw(k, p, j));
                }
            }
        }
    }

    #[test]
    fn projection_preserves_constants_and_tower(seed in any::<u64>(), c in -5.0..5.0f64, k in 1usize..6) {
        let grid = TimeGrid::new(6, 1.0).unwrap();
        let ens = Ensemble::generate(grid, 400, 1, seed).unwrap();
        let basis = RegressionBasis::default_for(1);
        let constant = vec![c; 400];
        prop_assert_eq!(conditional_expectation(&constant, k, &ens, &basis).unwrap(), constant);
        let values: Vec<f64> = ens.w_node(6).iter().map(|w| w.sin() + w * w).collect();
        let inner = conditional_expectation(&values, k, &ens, &basis).unwrap();
        let outer = conditional_expectation(&inner, 0, &ens, &basis).unwrap();
        let mean = values.iter().sum::<f64>() / 400.0;
        prop_assert!((outer[0] - mean).abs() <= 1e-12 * mean.abs().max(1.0));
    }

    #[test]
    fn norm_proxies_monotone_under_domination(seed in any::<u64>(), scale in 0.0..1.0f64) {
        let grid = TimeGrid::new(5, 1.0).unwrap();
        let ens = Ensemble::generate(grid, 200, 1, seed).unwrap();
        let reg = Regressor::new(&ens, &RegressionBasis::default_for(1)).unwrap();
        let y: Vec<f64> = ens.cumulative().to_vec();
        let z: Vec<f64> = ens.cumulative().iter().map(|w| 1.0 + w.abs()).collect();
        let big = ProcessPair::from_fields(1, 1, 200, 0, grid.dt(), y.clone(), z.clone()).unwrap();
        let small = ProcessPair::from_fields(
            1, 1, 200, 0, grid.dt(),
            y.iter().map(|v| v * scale).collect(),
            z.iter().map(|v| v * scale).collect(),
        ).unwrap();
        prop_assert!(small.sup_norm_estimate() <= big.sup_norm_estimate());
        prop_assert!(small.bmo_norm_estimate(&reg) <= big.bmo_norm_estimate(&reg) * (1.0 + 1e-12));
        prop_assert!(small.bmo_norm_estimate(&reg) >= 0.0);
        prop_assert_eq!(small.bmo_norm_estimate(&reg) == 0.0, scale == 0.0);
    }

    #[test]
    fn empirical_means_idempotent(seed in any::<u64>()) {
        let grid = TimeGrid::new(4, 1.0).unwrap();
        let ens = Ensemble::generate(grid, 64, 1, seed).unwrap();
        let y: Vec<f64> = ens.cumulative().iter().map(|w| w.cos()).collect();
        let mut pair = ProcessPair::from_fields(1, 1, 64, 0, grid.dt(), y, vec![0.5; 5 * 64]).unwrap();
        let first = { let (a, b) = pair.empirical_means(); (a.to_vec(), b.to_vec()) };
        let second = { let (a, b) = pair.empirical_means(); (a.to_vec(), b.to_vec()) };
        prop_assert_eq!(first, second);
        prop_assert_eq!(pair.mean_consistency_error(), 0.0);
    }
}

fn cert(gamma: f64, eta: f64) -> GrowthCertificate {
    let mut p = ModelParams::basic(1, 1, 1.0, gamma);
    p.phi = ScalarFn::Constant(1.0);
    p.a = ScalarFn::Constant(1.0);
    p.c0 = 1.0;
    p.c1 = eta;
    GrowthCertificate { params: p, eta_norm: eta, u_sup: 0.0, v_bmo: 0.0 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// `g1 ≤ g2` pointwise gives `Y1 ≤ Y2` up to statistical error.
    #[test]
    fn scalar_comparison(seed in any::<u64>(), shift in 0.0..0.5f64) {
        let grid = TimeGrid::new(10, 1.0).unwrap();
        let ens = Ensemble::generate(grid, 2000, 1, seed).unwrap();
        let basis = RegressionBasis::default_for(1);
        let eta: Vec<f64> = ens.w_node(10).iter().map(|w| w.clamp(-2.0, 2.0)).collect();
        let g1 = FnGenerator1D { f: |_: usize, _: usize, z: &[f64]| 0.5 * z[0] * z[0], cert: cert(1.0, 2.0) };
        let g2 = FnGenerator1D { f: move |_: usize, _: usize, z: &[f64]| 0.5 * z[0] * z[0] + shift, cert: cert(1.0, 2.0) };
        let r1 = solve_1d(&eta, &g1, &ens, &basis, 50.0).unwrap();
        let r2 = solve_1d(&eta, &g2, &ens, &basis, 50.0).unwrap();
        for k in 0..=10 {
            let m1: f64 = r1.y_node(k).iter().sum::<f64>() / 2000.0;
            let m2: f64 = r2.y_node(k).iter().sum::<f64>() / 2000.0;
            prop_assert!(m1 <= m2 + 0.02, "node {}: {} > {}", k, m1, m2);
        }
    }

    /// Relabelling components of a decoupled generator and relabelling back is the identity.
    #[test]
    fn gamma_permutation_invariance(seed in any::<u64>()) {
        let case = BenchmarkCase::loggrowth(1.0, 0.1).unwrap();
        let p = &case.params;
        let grid = TimeGrid::new(6, 1.0).unwrap();
        let ens = Ensemble::generate(grid, 300, 1, seed).unwrap();
        let reg = Regressor::new(&ens, &RegressionBasis::default_for(1)).unwrap();
        let mut xi = case.terminal.values(&ens).unwrap();
        // Make the components differ.
        for row in xi.chunks_mut(2) {
            row[1] = -0.5 * row[1];
        }
        let swapped: Vec<f64> = xi.chunks(2).flat_map(|r| [r[1], r[0]]).collect();
        let uv = ProcessPair::zeros(2, 1, 300, 0, 6, grid.dt()).unwrap();
        let opts = Solve1DOptions::default();
        let (a, _) = apply_gamma(&uv, case.generator.as_ref(), p, &xi, p.c1, &reg, &opts).unwrap();
        let (b, _) = apply_gamma(&uv, case.generator.as_ref(), p, &swapped, p.c1, &reg, &opts).unwrap();
        for k in 0..=6 {
            for q in 0..300 {
                prop_assert_eq!(a.y_at(k, q)[0].to_bits(), b.y_at(k, q)[1].to_bits());
                prop_assert_eq!(a.y_at(k, q)[1].to_bits(), b.y_at(k, q)[0].to_bits());
                prop_assert_eq!(a.z_at(k, q)[0].to_bits(), b.z_at(k, q)[1].to_bits());
            }
        }
    }
}
