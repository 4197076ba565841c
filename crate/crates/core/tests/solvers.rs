//! Scalar solver, decoupling map, Picard loop and global stitching against
//! closed-form answers.

use mfbsde::bench::BenchmarkCase;
use mfbsde::constants::{contraction_coefficients, ConstantsLedger};
use mfbsde::global::{solve_global, verify_apriori, verify_bmo_membership, GlobalOptions};
use mfbsde::mc::{Ensemble, ProcessPair, RegressionBasis, Regressor, TimeGrid};
use mfbsde::model::{MeanFieldLinear, ModelParams, ScalarFn, TerminalCondition, TerminalKind, ZeroGenerator};
use mfbsde::picard::{apply_gamma, contraction_report, picard_solve, picard_solve_from, BallSpec, PicardOptions};
use mfbsde::qbsde1d::{bound_y, solve_1d, FnGenerator1D, GrowthCertificate, Solve1DOptions};

fn setup(m: usize, n: usize, t: f64, seed: u64) -> Ensemble {
    Ensemble::generate(TimeGrid::new(m, t).unwrap(), n, 1, seed).unwrap()
}

fn rms(a: &[f64], b: impl Fn(usize) -> f64) -> f64 {
    (a.iter().enumerate().map(|(p, v)| (v - b(p)).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

#[test]
fn scalar_colehopf_matches_closed_form() {
    let ens = setup(50, 20_000, 1.0, 11);
    let basis = RegressionBasis::default_for(1);
    let clamp = 6.0;
    let eta: Vec<f64> = ens.w_node(50).iter().map(|w| w.clamp(-clamp, clamp)).collect();
    let mut p = ModelParams::basic(1, 1, 1.0, 1.0);
    p.phi = ScalarFn::Constant(1.0);
    p.c1 = clamp;
    let cert = GrowthCertificate { params: p, eta_norm: clamp, u_sup: 0.0, v_bmo: 0.0 };
    let g = FnGenerator1D { f: |_: usize, _: usize, z: &[f64]| 0.5 * z[0] * z[0], cert };
    let r = solve_1d(&eta, &g, &ens, &basis, 100.0).unwrap();
    for k in [0, 10, 25, 40, 49] {
        let t = ens.grid().t(k);
        let w = ens.w_node(k);
        let ey = rms(r.y_node(k), |q| w[q] + 0.5 * (1.0 - t));
        let ez = rms(r.z_node(k), |_| 1.0);
        assert!(ey < 0.02, "node {k}: Y error {ey}");
        assert!(ez < 0.1, "node {k}: Z error {ez}");
    }
    assert_eq!(r.truncation_hits, 0);
}

#[test]
fn solved_y_respects_its_bound_on_benchmarks() {
    for name in ["meanfield_linear", "colehopf_diagonal", "loggrowth"] {
        let case = BenchmarkCase::by_name(name, &Default::default()).unwrap();
        let p = &case.params;
        let ens = setup(25, 4_000, p.horizon, 5);
        let reg = Regressor::new(&ens, &RegressionBasis::default_for(1)).unwrap();
        let xi = case.terminal.values(&ens).unwrap();
        let uv = ProcessPair::zeros(p.n, 1, 4_000, 0, 25, ens.grid().dt()).unwrap();
        let (out, _) = apply_gamma(&uv, case.generator.as_ref(), p, &xi, case.terminal.bound, &reg, &Default::default())
            .unwrap();
        for k in 0..=25 {
            let b = bound_y(p, ens.grid().t(k), case.terminal.bound, 0.0, 0.0).unwrap();
            let worst = (0..4_000).flat_map(|q| out.y_at(k, q).to_vec()).fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst <= 1.05 * b, "{name} node {k}: {worst} > {b}");
        }
    }
}

#[test]
fn gamma_of_zero_generator_is_the_terminal_constant() {
    let ens = setup(8, 500, 1.0, 2);
    let reg = Regressor::new(&ens, &RegressionBasis::default_for(1)).unwrap();
    let mut p = ModelParams::basic(2, 1, 1.0, 1.0);
    p.c1 = 2.0;
    let g = ZeroGenerator { n: 2, d: 1 };
    let xi: Vec<f64> = (0..500).flat_map(|_| [1.5, -0.5]).collect();
    // An arbitrary frozen iterate: the output must not depend on it.
    let y: Vec<f64> = ens.cumulative().iter().flat_map(|w| [w.sin(), w.cos()]).collect();
    let z: Vec<f64> = ens.cumulative().iter().flat_map(|w| [*w, 2.0 * w]).collect();
    let uv = ProcessPair::from_fields(2, 1, 500, 0, ens.grid().dt(), y, z).unwrap();
    let (out, _) = apply_gamma(&uv, &g, &p, &xi, 1.5, &reg, &Solve1DOptions::default()).unwrap();
    for k in 0..=8 {
        for q in 0..500 {
            assert_eq!(out.y_at(k, q), &[1.5, -0.5]);
            assert_eq!(out.z_at(k, q), &[0.0, 0.0]);
        }
    }
}

#[test]
fn gamma_of_linear_generator_at_constant_iterate() {
    let (a, b, c, u0) = (0.3, 0.2, 1.0, 0.7);
    let ens = setup(20, 1_000, 1.0, 3);
    let reg = Regressor::new(&ens, &RegressionBasis::default_for(1)).unwrap();
    let mut p = ModelParams::basic(1, 1, 1.0, 1.0);
    p.phi = ScalarFn::Affine { intercept: 0.0, slope: a + b };
    p.beta = ScalarFn::Constant(a + b);
    p.c1 = c;
    p.c2 = a + b;
    let g = MeanFieldLinear { n: 1, d: 1, a, b };
    let mut uv = ProcessPair::zeros(1, 1, 1_000, 0, 20, ens.grid().dt()).unwrap();
    for k in 0..=20 {
        uv.y_node_mut(k).fill(u0);
    }
    uv.refresh_means();
    let xi = vec![c; 1_000];
    let (out, _) = apply_gamma(&uv, &g, &p, &xi, c, &reg, &Solve1DOptions::default()).unwrap();
    for k in 0..=20 {
        let want = c + (a + b) * u0 * (1.0 - ens.grid().t(k));
        for q in 0..1_000 {
            assert!((out.y_at(k, q)[0] - want).abs() < 1e-12, "node {k}");
            assert!(out.z_at(k, q)[0].abs() < 1e-12);
        }
    }
}

#[test]
fn gamma_of_colehopf_ignores_the_iterate() {
    let case = BenchmarkCase::colehopf_diagonal(1.0, 1).unwrap();
    let p = &case.params;
    let ens = setup(20, 5_000, 1.0, 4);
    let reg = Regressor::new(&ens, &RegressionBasis::default_for(1)).unwrap();
    let xi = case.terminal.values(&ens).unwrap();
    let zero = ProcessPair::zeros(1, 1, 5_000, 0, 20, ens.grid().dt()).unwrap();
    let y: Vec<f64> = ens.cumulative().iter().map(|w| 0.5 * w).collect();
    let other = ProcessPair::from_fields(1, 1, 5_000, 0, ens.grid().dt(), y.clone(), y).unwrap();
    let opts = Solve1DOptions { trunc_r: Some(50.0), ..Default::default() };
    let (a, _) = apply_gamma(&zero, case.generator.as_ref(), p, &xi, p.c1, &reg, &opts).unwrap();
    let (b, _) = apply_gamma(&other, case.generator.as_ref(), p, &xi, p.c1, &reg, &opts).unwrap();
    assert_eq!(a.y_raw(), b.y_raw());
    assert_eq!(a.z_raw(), b.z_raw());
    let w = ens.w_node(5);
    let err = rms(a.y_node(5), |q| w[q] + 0.5 * (1.0 - ens.grid().t(5)));
    assert!(err < 0.03, "{err}");
}

fn terminal_ball(case: &BenchmarkCase, grid: &TimeGrid) -> (ConstantsLedger, BallSpec) {
    let ledger = ConstantsLedger::new(&case.params).unwrap();
    let eps = ledger.eps0.min(case.params.horizon);
    let ball = BallSpec::new(eps, &ledger, grid).unwrap();
    (ledger, ball)
}

#[test]
fn picard_on_zero_generator_stops_at_once() {
    let case = BenchmarkCase::zero(2.0, 2, 1.0).unwrap();
    let ens = Ensemble::generate(TimeGrid::new(10, 1.0).unwrap(), 300, 1, 1).unwrap();
    let reg = Regressor::new(&ens, &RegressionBasis::default_for(1)).unwrap();
    let (_, ball) = terminal_ball(&case, ens.grid());
    let (pair, trace) =
        picard_solve(case.generator.as_ref(), &case.terminal, &case.params, &reg, &ball, &Default::default()).unwrap();
    assert!(trace.converged);
    assert_eq!(trace.iterations(), 1);
    assert_eq!(trace.records[0].dy_sup, 0.0);
    assert_eq!(trace.records[0].dz_bmo, 0.0);
    // Euclidean norm of the constant vector (2, 2).
    assert_eq!(pair.sup_norm_estimate(), 8f64.sqrt());
}

#[test]
fn picard_on_colehopf_confirms_at_iteration_two() {
    let case = BenchmarkCase::colehopf_diagonal(1.0, 1).unwrap();
    let ens = Ensemble::generate(TimeGrid::new(50, 1.0).unwrap(), 5_000, 1, 1).unwrap();
    let reg = Regressor::new(&ens, &RegressionBasis::default_for(1)).unwrap();
    let ledger = ConstantsLedger::new(&case.params).unwrap();
    // Any window works here since Γ does not look at its argument.
    let ball = BallSpec::window(40, 50, &ledger, ens.grid(), false);
    let (_, trace) =
        picard_solve(case.generator.as_ref(), &case.terminal, &case.params, &reg, &ball, &Default::default()).unwrap();
    assert!(trace.converged);
    assert_eq!(trace.iterations(), 2);
    assert_eq!(trace.records[1].ratio, Some(0.0));
}

#[test]
fn picard_trace_is_deterministic_and_a_fixed_point() {
    let case = BenchmarkCase::meanfield_linear(0.5, 0.5, 1.0).unwrap();
    let p = &case.params;
    let run = || {
        let ens = Ensemble::generate(TimeGrid::new(50, 1.0).unwrap(), 2_000, 1, 7).unwrap();
        let reg = Regressor::new(&ens, &RegressionBasis::default_for(1)).unwrap();
        let (_, ball) = terminal_ball(&case, ens.grid());
        let opts = PicardOptions { tol: 1e-6, ..Default::default() };
        let (pair, trace) = picard_solve(case.generator.as_ref(), &case.terminal, p, &reg, &ball, &opts).unwrap();
        // One more application past convergence.
        let xi = case.terminal.values(&ens).unwrap();
        let (again, _) = apply_gamma(&pair, case.generator.as_ref(), p, &xi, case.terminal.bound, &reg, &opts.solve)
            .unwrap();
        let diff = again.difference(&pair).unwrap();
        (trace, diff.sup_norm_estimate(), diff.bmo_norm_estimate(&reg))
    };
    let (t1, dy, dz) = run();
    let (t2, _, _) = run();
    assert_eq!(t1, t2);
    assert!(t1.converged);
    assert!(dy < 2.0 * t1.tol && dz < 2.0 * t1.tol, "{dy} {dz}");
    assert!(t1.ratios().iter().all(|&r| r >= 0.0 && r < 1.0));
}

#[test]
fn contraction_report_examples() {
    let case = BenchmarkCase::meanfield_linear(0.5, 0.5, 1.0).unwrap();
    let p = &case.params;
    let ens = Ensemble::generate(TimeGrid::new(50, 1.0).unwrap(), 2_000, 1, 7).unwrap();
    let reg = Regressor::new(&ens, &RegressionBasis::default_for(1)).unwrap();
    let (ledger, ball) = terminal_ball(&case, ens.grid());
    let opts = PicardOptions { tol: 1e-9, ..Default::default() };
    let (_, trace) = picard_solve(case.generator.as_ref(), &case.terminal, p, &reg, &ball, &opts).unwrap();
    let rep = contraction_report(&trace, p, 1.0, 1.0, 1.0).unwrap();
    assert!(rep.observed_ratios.iter().all(|&r| r < 1.0));
    let direct = contraction_coefficients(ball.eps, ledger.k1, ledger.k2, p, 1.0, 1.0, 1.0).unwrap();
    assert_eq!(rep.coefficients, direct);

    // Halving the window halves coef_U.
    let mut half = trace.clone();
    let steps = (ball.end - ball.start) / 2;
    half.ball = BallSpec::window(ball.end - steps, ball.end, &ledger, ens.grid(), true);
    let rh = contraction_report(&half, p, 1.0, 1.0, 1.0).unwrap();
    let factor = ball.eps / half.ball.eps;
    assert!((rep.coefficients.coef_u / rh.coefficients.coef_u - factor).abs() < 1e-12);

    // A constant map gives ratio zero.
    let zero = BenchmarkCase::zero(1.0, 1, 1.0).unwrap();
    let (_, zb) = terminal_ball(&zero, ens.grid());
    let xi = vec![1.0; 2_000];
    let (_, mut zt) = picard_solve_from(zero.generator.as_ref(), &zero.params, &xi, 1.0, &reg, &zb, &opts).unwrap();
    assert!(contraction_report(&zt, &zero.params, 1.0, 1.0, 1.0).is_err());
    while zt.records.len() < 3 {
        let mut r = zt.records[0].clone();
        r.iteration = zt.records.len() + 1;
        r.ratio = Some(0.0);
        zt.records.push(r);
    }
    assert_eq!(contraction_report(&zt, &zero.params, 1.0, 1.0, 1.0).unwrap().max_observed_ratio, 0.0);
}

#[test]
fn global_zero_is_constant_everywhere() {
    let case = BenchmarkCase::zero(0.75, 1, 2.0).unwrap();
    let ens = Ensemble::generate(TimeGrid::new(40, 2.0).unwrap(), 400, 1, 1).unwrap();
    let reg = Regressor::new(&ens, &RegressionBasis::default_for(1)).unwrap();
    let (pair, report) =
        solve_global(case.generator.as_ref(), &case.terminal, &case.params, &reg, &GlobalOptions::default()).unwrap();
    assert!(pair.y_raw().iter().all(|&v| v == 0.75));
    assert!(pair.z_raw().iter().all(|&v| v == 0.0));
    assert!(report.apriori.passed && report.bmo.passed && report.stitch_continuity);
}

#[test]
fn global_linear_follows_the_ode() {
    let case = BenchmarkCase::meanfield_linear(0.5, 0.5, 1.0).unwrap();
    let ens = Ensemble::generate(TimeGrid::new(100, 1.0).unwrap(), 2_000, 1, 1).unwrap();
    let reg = Regressor::new(&ens, &RegressionBasis::default_for(1)).unwrap();
    let (pair, report) =
        solve_global(case.generator.as_ref(), &case.terminal, &case.params, &reg, &GlobalOptions::default()).unwrap();
    for k in 0..=100 {
        let exact = (1.0 - ens.grid().t(k)).exp();
        assert!((pair.mean_y(k)[0] - exact).abs() / exact < 0.01, "node {k}");
        assert!(pair.z_node(k).iter().all(|z| z.abs() < 1e-12));
    }
    // The hand-evaluated ceiling is far above the solution.
    assert!(report.apriori.passed && report.apriori.margin > 1e4);
}

#[test]
fn apriori_check_examples() {
    let mut p = ModelParams::basic(1, 1, 1.0, 1.0);
    p.c1 = 0.5;
    p.phi = ScalarFn::Constant(1.0);
    let ledger = ConstantsLedger::new(&p).unwrap();
    let zero = ProcessPair::zeros(1, 1, 4, 0, 3, 1.0 / 3.0).unwrap();
    let r = verify_apriori(&zero, &ledger);
    assert!(r.passed);
    assert!((r.margin / ledger.lambda - 1.0).abs() < 1e-12);

    let mut hot = zero.clone();
    hot.y_node_mut(2)[1] = 1.01 * ledger.lambda;
    assert!(!verify_apriori(&hot, &ledger).passed);
}

#[test]
fn bmo_check_examples() {
    let case = BenchmarkCase::colehopf_diagonal(1.0, 1).unwrap();
    let p = &case.params;
    let ledger = ConstantsLedger::new(p).unwrap();
    let ens = Ensemble::generate(TimeGrid::new(20, 1.0).unwrap(), 2_000, 1, 1).unwrap();
    let reg = Regressor::new(&ens, &RegressionBasis::default_for(1)).unwrap();
    let zero = ProcessPair::zeros(1, 1, 2_000, 0, 20, 0.05).unwrap();
    let r = verify_bmo_membership(&zero, p, &ledger, &reg);
    assert!(r.passed && r.value == 0.0);

    let (pair, _) = solve_global(case.generator.as_ref(), &case.terminal, p, &reg, &GlobalOptions::default()).unwrap();
    let r = verify_bmo_membership(&pair, p, &ledger, &reg);
    assert!(r.passed);
    assert!((r.value - 1.0).abs() < 0.1, "BMO^2 proxy {}", r.value);
    assert!(r.log_ceiling > 100.0);
}

#[test]
fn terminal_condition_rejects_bounds_above_c1() {
    let mut p = ModelParams::basic(1, 1, 1.0, 1.0);
    p.c1 = 1.0;
    assert!(TerminalCondition::new(TerminalKind::Constant { value: vec![0.5] }, 2.0, &p).is_err());
    assert!(TerminalCondition::new(TerminalKind::Constant { value: vec![1.5] }, 1.0, &p).is_err());
    assert!(TerminalCondition::new(TerminalKind::ClampedBrownian { n: 1, clamp: 1.0 }, 1.0, &p).is_ok());
}
