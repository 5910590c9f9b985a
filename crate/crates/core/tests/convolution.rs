use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use varexp::convolution::*;
use varexp::exponents::VariableExponent;
use varexp::funcspec::{Interval, ScalarFunction};
use varexp::modular::NormConfig;
use varexp::operators::{OperatorFamily, PParams};
use varexp::specfun::{gamma, mittag_leffler_real};
use varexp::stepanov::{StepanovConfig, Verdict};

fn expr(s: &str) -> ScalarFunction {
    ScalarFunction::expression(s).unwrap()
}

fn q(v: f64) -> VariableExponent {
    VariableExponent::constant_on_unit(v).unwrap()
}

fn exp_kernel() -> Kernel {
    Kernel::scalar(|t| (-t).exp(), 0.0, "e^-t")
}

fn scalar_op(a: f64) -> OperatorFamily {
    OperatorFamily::matrix(DMatrix::from_element(1, 1, a))
        .unwrap()
        .with_params(PParams::new(0.5, 1.0, 4.0).unwrap())
}

/// `E_γ(−λ t^γ)`.
fn relaxation(gamma: f64, lambda: f64, t: f64) -> f64 {
    mittag_leffler_real(gamma, 1.0, -lambda * t.powf(gamma)).unwrap()
}

fn graded_grid(t_max: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| t_max * (i as f64 / n as f64).powi(2)).collect()
}

#[test]
fn exponential_kernel_sum() {
    let ks = kernel_sum(&exp_kernel(), &q(2.0), 20, &NormConfig::default()).unwrap();
    let c = ((1.0 - E.powi(-2)) / 2.0).sqrt();
    for (k, v) in ks.norms.iter().enumerate() {
        assert!((v - c * (-(k as f64)).exp()).abs() < 1e-9, "k={k}");
    }
    assert!(ks.summable);
    assert!(matches!(ks.tail_model, TailModel::Exponential { b, .. } if (b - 1.0).abs() < 1e-6));
    assert!((ks.m - 1.040182).abs() < 1e-4, "M={}", ks.m);
    assert!((ks.m - c / (1.0 - (-1.0f64).exp())).abs() < 1e-8);
}

#[test]
fn constant_kernel_is_not_summable() {
    let k = Kernel::scalar(|_| 1.0, 0.0, "1");
    let ks = kernel_sum(&k, &q(2.0), 15, &NormConfig::default()).unwrap();
    assert!(!ks.summable);
    assert!(ks.m.is_infinite());
    let err = infinite_convolution(&k, &ks, &Forcing::scalar(expr("1")), 0.0, 1.0).unwrap_err();
    assert!(matches!(err, ConvolutionError::NotSummable(_)));
}

#[test]
fn non_integrable_singularity_is_rejected() {
    let k = Kernel::scalar(|t| 1.0 / t, -1.0, "1/t");
    let err = kernel_sum(&k, &q(2.0), 5, &NormConfig::default()).unwrap_err();
    assert!(matches!(err, ConvolutionError::Singularity { .. }));
    let err = finite_convolution(&k, &Forcing::scalar(expr("1")), 1.0).unwrap_err();
    assert!(matches!(err, ConvolutionError::Singularity { .. }));
}

#[test]
fn resolvent_family_matches_mittag_leffler() {
    let gamma_ = 0.5;
    let k = Kernel::resolvent_family(&scalar_op(-1.0), gamma_, 25.0).unwrap();
    assert!((k.sigma() + 0.5).abs() < 1e-12);
    for t in [1e-10f64, 1e-6, 1e-3, 0.1, 0.7, 1.0, 2.5, 9.0, 25.0] {
        let exact = t.powf(gamma_ - 1.0) * mittag_leffler_real(gamma_, gamma_, -t.powf(gamma_)).unwrap();
        let got = k.value(t).unwrap()[(0, 0)];
        assert!((got - exact).abs() <= 1e-10 * exact.abs(), "t={t}: {got} vs {exact}");
    }
    assert!(k.value(0.0).is_err());
    assert!(k.value(26.0).is_err());

    // t^{-1/2} is not square integrable at the origin.
    let ks2 = kernel_sum(&k, &q(2.0), 12, &NormConfig::default()).unwrap();
    assert!(!ks2.summable);
    assert!(ks2.norms[0].is_infinite());

    let ks = kernel_sum(&k, &q(1.5), 20, &NormConfig::default()).unwrap();
    assert!(ks.summable && ks.m.is_finite());
    // Windows k ≥ 1 against a direct Lebesgue norm of the oracle.
    for kk in [1usize, 4, 12] {
        let n = 4000;
        let s: f64 = (0..n)
            .map(|i| {
                let t = kk as f64 + (i as f64 + 0.5) / n as f64;
                (t.powf(-0.5) * mittag_leffler_real(0.5, 0.5, -t.sqrt()).unwrap())
                    .abs()
                    .powf(1.5)
            })
            .sum::<f64>()
            / n as f64;
        let exact = s.powf(1.0 / 1.5);
        assert!((ks.norms[kk] - exact).abs() < 1e-6 * exact, "k={kk}");
    }
    // Power-law decay like t^{−1−γ}.
    assert!(matches!(ks.tail_model, TailModel::Power { p, .. } if p > 1.0));
}

#[test]
fn infinite_convolution_closed_forms() {
    let k = exp_kernel();
    let ks = kernel_sum(&k, &q(2.0), 40, &NormConfig::default()).unwrap();
    let one = infinite_convolution(&k, &ks, &Forcing::scalar(expr("1")), 3.0, 1.0).unwrap();
    assert!((one.value[0] - 1.0).abs() < 1e-7);
    for i in 0..=40 {
        let t = 0.5 * i as f64;
        let g = infinite_convolution(&k, &ks, &Forcing::scalar(expr("sin(x)")), t, 1.0).unwrap();
        let exact = (t.sin() - t.cos()) / 2.0;
        assert!((g.value[0] - exact).abs() < 1e-7, "t={t}");
        assert!(g.error_estimate < 1e-7);
    }

    let sing = Kernel::scalar(|t| t.powf(-0.5) * (-t).exp(), -0.5, "t^-1/2 e^-t");
    let ks = kernel_sum(&sing, &q(1.5), 40, &NormConfig::default()).unwrap();
    assert!(ks.summable);
    let g = infinite_convolution(&sing, &ks, &Forcing::scalar(expr("1")), 0.0, 1.0).unwrap();
    assert!((g.value[0] - gamma(0.5)).abs() < 1e-7, "{}", g.value[0]);
    assert!((gamma(0.5) - 1.772454).abs() < 1e-6);
}

#[test]
fn truncation_converges_monotonically() {
    let k = exp_kernel();
    let f = Forcing::scalar(expr("1"));
    let mut last = 0.0;
    for big_k in [4usize, 8, 16, 24] {
        let ks = kernel_sum(&k, &q(2.0), big_k, &NormConfig::default()).unwrap();
        let v = infinite_convolution(&k, &ks, &f, 0.0, 1.0).unwrap().value[0];
        assert!(v > last);
        assert!((1.0 - v - (-(big_k as f64 + 1.0)).exp()).abs() < 1e-10);
        last = v;
    }
}

#[test]
fn convolution_is_linear() {
    let k = exp_kernel();
    let ks = kernel_sum(&k, &q(2.0), 30, &NormConfig::default()).unwrap();
    let a = Forcing::scalar(expr("sin(x)"));
    let b = Forcing::scalar(expr("cos(3*x)"));
    let c = Forcing::scalar(expr("2*sin(x) - 3*cos(3*x)"));
    for t in [0.0, 1.3, 7.1] {
        let ga = infinite_convolution(&k, &ks, &a, t, 1.0).unwrap().value[0];
        let gb = infinite_convolution(&k, &ks, &b, t, 1.0).unwrap().value[0];
        let gc = infinite_convolution(&k, &ks, &c, t, 1.0).unwrap().value[0];
        assert!((gc - (2.0 * ga - 3.0 * gb)).abs() < 1e-10);
    }
}

#[test]
fn vector_forcing_follows_the_direction() {
    let k = Kernel::matrix(
        2,
        |t| DMatrix::from_diagonal(&DVector::from_vec(vec![(-t).exp(), (-2.0 * t).exp()])),
        0.0,
        "diag",
    );
    let ks = kernel_sum(&k, &q(2.0), 30, &NormConfig::default()).unwrap();
    let f = Forcing::along(expr("1"), DVector::from_vec(vec![1.0, 1.0]));
    let g = infinite_convolution(&k, &ks, &f, 2.0, 1.0).unwrap();
    assert!((g.value[0] - 1.0).abs() < 1e-7);
    assert!((g.value[1] - 0.5).abs() < 1e-7);
    let bad = Forcing::scalar(expr("1"));
    assert!(matches!(
        infinite_convolution(&k, &ks, &bad, 0.0, 1.0),
        Err(ConvolutionError::Shape(_))
    ));
}

fn transfer_scan() -> StepanovConfig {
    StepanovConfig {
        t_range: Interval { lo: 0.0, hi: 8.0 },
        t_step: 0.1,
        tau_range: Interval { lo: 0.0, hi: 30.0 },
        tau_step: 0.05,
        refine: false,
        ..StepanovConfig::default()
    }
}

#[test]
fn ap_transfer_for_a_sine_source() {
    let k = exp_kernel();
    let ks = kernel_sum(&k, &q(2.0), 30, &NormConfig::default()).unwrap();
    let f = Forcing::scalar(expr("sin(x)"));
    let t_grid: Vec<f64> = (0..20).map(|i| 0.5 * i as f64).collect();
    let periods = [2.0 * PI, 4.0 * PI, 1.0, 2.0 * PI + 0.02];
    let r = ap_transfer_check(&k, &ks, &f, &q(2.0), 0.1, &periods, &t_grid, &transfer_scan()).unwrap();
    assert!(r.applicable, "{:?}", r.notes);
    assert_eq!(r.reflected_verdict, Verdict::ApConsistent);
    assert!((r.bound - 0.208036).abs() < 1e-4);
    assert!(r.violations.is_empty());
    assert!(r.checked_periods.contains(&(2.0 * PI)));
    assert!(r.checked_periods.contains(&(2.0 * PI + 0.02)));
    assert_eq!(r.rejected_periods, vec![1.0]);
    assert_eq!(r.checked, r.checked_periods.len() * t_grid.len());

    // Exact periods move G by quadrature noise only.
    for t in [0.0, 3.0] {
        let a = infinite_convolution(&k, &ks, &f, t + 2.0 * PI, 1.0).unwrap().value[0];
        let b = infinite_convolution(&k, &ks, &f, t, 1.0).unwrap().value[0];
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn ap_transfer_hypotheses() {
    let k = exp_kernel();
    let ks = kernel_sum(&k, &q(2.0), 20, &NormConfig::default()).unwrap();
    let drift = Forcing::scalar(expr("x"));
    let r = ap_transfer_check(&k, &ks, &drift, &q(2.0), 0.1, &[1.0], &[0.0], &transfer_scan()).unwrap();
    assert!(!r.applicable);
    assert_eq!(r.checked, 0);

    let sine = Forcing::scalar(expr("sin(x)"));
    let r = ap_transfer_check(&k, &ks, &sine, &q(3.0), 0.1, &[2.0 * PI], &[0.0], &transfer_scan()).unwrap();
    assert!(!r.applicable);
    assert!(r.notes.iter().any(|n| n.contains("conjugate")));
}

#[test]
fn uniformly_continuous_output() {
    // A bounded source through a summable kernel gives a Lipschitz G.
    let k = exp_kernel();
    let ks = kernel_sum(&k, &q(2.0), 30, &NormConfig::default()).unwrap();
    let f = Forcing::scalar(expr("sign(sin(x))"));
    let h = 1e-3;
    for i in 0..30 {
        let t = 0.37 * i as f64;
        let a = infinite_convolution(&k, &ks, &f, t + h, 1.0).unwrap().value[0];
        let b = infinite_convolution(&k, &ks, &f, t, 1.0).unwrap().value[0];
        assert!((a - b).abs() <= 2.0 * h + 1e-9, "t={t}");
    }
}

#[test]
fn finite_convolution_examples() {
    let k = exp_kernel();
    let h = finite_convolution(&k, &Forcing::scalar(expr("1")), 1.0).unwrap();
    assert!((h.value[0] - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    assert_eq!(
        finite_convolution(&k, &Forcing::scalar(expr("1")), 0.0).unwrap().value[0],
        0.0
    );

    let r = Kernel::resolvent_family(&scalar_op(-1.0), 0.5, 5.0).unwrap();
    assert_eq!(finite_convolution(&r, &Forcing::zero(1), 2.0).unwrap().value[0], 0.0);
    for t in [0.25, 1.0, 4.0] {
        let h = finite_convolution(&r, &Forcing::scalar(expr("1")), t).unwrap();
        let exact = 1.0 - relaxation(0.5, 1.0, t);
        assert!((h.value[0] - exact).abs() < 1e-9, "t={t}");
    }
}

#[test]
fn scalar_and_diagonal_solutions() {
    let grid = graded_grid(5.0, 200);
    for gamma_ in [0.5, 0.8] {
        let u = solve_dfp(
            &scalar_op(-1.0),
            gamma_,
            &DVector::from_element(1, 1.0),
            &Forcing::zero(1),
            &grid,
        )
        .unwrap();
        assert_eq!(u.values[0][0], 1.0);
        for (t, v) in u.t.iter().zip(&u.values) {
            assert!((v[0] - relaxation(gamma_, 1.0, *t)).abs() < 1e-6, "γ={gamma_} t={t}");
        }
    }
    let at_one = solve_dfp(
        &scalar_op(-1.0),
        0.5,
        &DVector::from_element(1, 1.0),
        &Forcing::zero(1),
        &[0.0, 1.0],
    )
    .unwrap();
    assert!((at_one.values[1][0] - 0.427584).abs() < 1e-6);

    let u = solve_dfp(
        &scalar_op(-1.0),
        1.0,
        &DVector::from_element(1, 1.0),
        &Forcing::zero(1),
        &grid,
    )
    .unwrap();
    for (t, v) in u.t.iter().zip(&u.values) {
        assert!((v[0] - (-t).exp()).abs() < 1e-8, "t={t}");
    }

    let diag = OperatorFamily::matrix(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]))
        .unwrap()
        .with_params(PParams::new(0.5, 1.0, 4.0).unwrap());
    let x0 = DVector::from_vec(vec![1.0, 1.0]);
    let u = solve_dfp(&diag, 0.5, &x0, &Forcing::zero(2), &[0.0, 0.5, 1.0, 3.0]).unwrap();
    for (t, v) in u.t.iter().zip(&u.values) {
        assert!((v[0] - relaxation(0.5, 1.0, *t)).abs() < 1e-6);
        assert!((v[1] - relaxation(0.5, 2.0, *t)).abs() < 1e-6);
    }
}

#[test]
fn forced_solution_and_its_residual() {
    // D^γ u = −u + 1 with u(0) = 0: u = 1 − E_γ(−t^γ).
    let grid = graded_grid(3.0, 600);
    let f = Forcing::scalar(expr("1"));
    let op = scalar_op(-1.0);
    let u = solve_dfp(&op, 0.5, &DVector::from_element(1, 0.0), &f, &grid).unwrap();
    for (t, v) in u.t.iter().zip(&u.values) {
        assert!((v[0] - (1.0 - relaxation(0.5, 1.0, *t))).abs() < 1e-6, "t={t}");
    }
    let res = caputo_residual(&u, &op, 0.5, &f).unwrap();
    let worst = res.iter().filter(|p| p.0 >= 0.1).map(|p| p.1).fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn caputo_residual_examples() {
    let op = scalar_op(-1.0);
    let grid = graded_grid(5.0, 1000);
    let u = solve_dfp(&op, 0.5, &DVector::from_element(1, 1.0), &Forcing::zero(1), &grid).unwrap();
    let res = caputo_residual(&u, &op, 0.5, &Forcing::zero(1)).unwrap();
    let worst = res
        .iter()
        .filter(|p| p.0 >= 0.1 && p.0 <= 5.0)
        .map(|p| p.1)
        .fold(0.0, f64::max);
    assert!(worst <= 1e-3, "{worst}");

    let fine: Vec<f64> = (0..=5000).map(|i| i as f64 * 1e-3).collect();
    let exp = Trajectory::new(
        fine.clone(),
        fine.iter().map(|t| DVector::from_element(1, (-t).exp())).collect(),
        vec![0.0; fine.len()],
    )
    .unwrap();
    let res = caputo_residual(&exp, &op, 1.0, &Forcing::zero(1)).unwrap();
    assert!(res.iter().all(|p| p.1 <= 1e-6));

    // A constant has no fractional derivative, so the residual is |A c| = |c|.
    let c = 0.75;
    let flat = Trajectory::new(
        grid.clone(),
        grid.iter().map(|_| DVector::from_element(1, c)).collect(),
        vec![0.0; grid.len()],
    )
    .unwrap();
    let res = caputo_residual(&flat, &op, 0.5, &Forcing::zero(1)).unwrap();
    assert!(res.iter().all(|p| (p.1 - c).abs() < 1e-12));

    let pencil = OperatorFamily::pencil(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
    assert!(matches!(
        caputo_residual(&flat, &pencil, 0.5, &Forcing::zero(1)),
        Err(ConvolutionError::Unsupported(_))
    ));
}

#[test]
fn bad_solver_inputs() {
    let op = scalar_op(-1.0);
    let x0 = DVector::from_element(1, 1.0);
    let f = Forcing::zero(1);
    assert!(matches!(
        solve_dfp(&op, 1.2, &x0, &f, &[0.0, 1.0]),
        Err(ConvolutionError::Precondition(_))
    ));
    assert!(matches!(
        solve_dfp(&op, 0.5, &x0, &f, &[1.0, 0.5]),
        Err(ConvolutionError::Precondition(_))
    ));
    assert!(matches!(
        solve_dfp(&op, 0.5, &DVector::from_element(2, 1.0), &f, &[0.0, 1.0]),
        Err(ConvolutionError::Shape(_))
    ));
    let unstable = OperatorFamily::matrix(DMatrix::from_element(1, 1, 1.0))
        .unwrap()
        .with_params(PParams::new(0.5, 1.0, 4.0).unwrap());
    assert!(solve_dfp(&unstable, 0.5, &x0, &f, &[0.0, 1.0]).is_err());
}

#[test]
fn trajectory_csv() {
    let u = Trajectory::new(
        vec![0.0, 0.5],
        vec![DVector::from_vec(vec![1.0, -2.0]), DVector::from_vec(vec![0.25, 3.0])],
        vec![0.0, 1e-12],
    )
    .unwrap();
    let mut out = Vec::new();
    u.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,u0,u1,error_estimate");
    assert_eq!(
        lines[1],
        "0.00000000000e0,1.00000000000e0,-2.00000000000e0,0.00000000000e0"
    );
    assert_eq!(lines.len(), 3);
    assert!(Trajectory::new(vec![0.0, 0.0], vec![DVector::zeros(1); 2], vec![0.0; 2]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exponential_kernel_response_to_shifted_sines(phase in 0.0..2.0 * PI, w in 0.2..3.0f64, t in 0.0..10.0f64) {
        // ∫_0^∞ e^{−v} sin(w(t−v)+φ) dv = (sin θ − w cos θ)/(1 + w²), θ = wt + φ.
        let k = exp_kernel();
        let ks = kernel_sum(&k, &q(2.0), 40, &NormConfig::default()).unwrap();
        let f = Forcing::scalar(expr(&format!("sin({w}*x + {phase})")));
        let g = infinite_convolution(&k, &ks, &f, t, 1.0).unwrap().value[0];
        let th = w * t + phase;
        let exact = (th.sin() - w * th.cos()) / (1.0 + w * w);
        prop_assert!((g - exact).abs() < 1e-7);
    }

    #[test]
    fn kernel_sum_bounds_the_output(a in -2.0..2.0f64, t in 0.0..5.0f64) {
        // |G(t)| ≤ M ‖g‖_S for the conjugate pair (2, 2).
        let k = exp_kernel();
        let ks = kernel_sum(&k, &q(2.0), 20, &NormConfig::default()).unwrap();
        let f = Forcing::scalar(expr(&format!("{a}*cos(x)")));
        let g = infinite_convolution(&k, &ks, &f, t, 1.0).unwrap().value[0];
        prop_assert!(g.abs() <= ks.m * a.abs() + 1e-9);
    }
}
