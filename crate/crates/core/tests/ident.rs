//! Model identification: ridge regression against a dense normal-equation
//! oracle, exact recovery of linear and sparse quadratic systems, lag-block
//! layout, and training-to-filter cadence rescaling.

use approx::assert_relative_eq;
use ndarray::{arr1, arr2, Array1, Array2};
use ndarray_linalg::Solve;
use rand::Rng;

use romda::features::{FeatureScaler, LibrarySpec, Term};
use romda::ident::{fit_dmdc, fit_sindyc_ar, rescale_cadence, ridge_solve, ModelKind, RegressionConfig, RomModel};
use romda::rng::chacha_stream;
use romda::Error;

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

// ---------------------------------------------------------------- ridge --

#[test]
fn ridge_matches_dense_normal_equation_solve() {
    let mut rng = chacha_stream(5, 0);
    let q = 8;
    let m = 20;
    let r = 3;
    let theta = Array2::from_shape_fn((q, m), |_| rng.random_range(-1.0..1.0));
    let targets = Array2::from_shape_fn((r, m), |_| rng.random_range(-1.0..1.0));
    let alpha = 0.37;

    let got = ridge_solve(targets.view(), theta.view(), alpha).unwrap();

    // Oracle: solve (Theta Theta' + alpha I) x = Theta y' column by column
    // with a general LU solver.
    let mut gram = theta.dot(&theta.t());
    for i in 0..q {
        gram[(i, i)] += alpha;
    }
    let rhs = theta.dot(&targets.t());
    for j in 0..r {
        let x = gram.solve(&rhs.column(j).to_owned()).unwrap();
        for i in 0..q {
            assert_relative_eq!(got[(j, i)], x[i], max_relative = 1e-10);
        }
    }
}

#[test]
fn ridge_shrinks_monotonically() {
    let mut rng = chacha_stream(6, 0);
    let theta = Array2::from_shape_fn((5, 30), |_| rng.random_range(-1.0..1.0));
    let targets = Array2::from_shape_fn((2, 30), |_| rng.random_range(-1.0..1.0));
    let mut last = f64::INFINITY;
    for alpha in [1e-6, 1e-3, 1.0, 1e3, 1e6] {
        let coeff = ridge_solve(targets.view(), theta.view(), alpha).unwrap();
        let norm: f64 = coeff.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < last, "alpha {alpha}: norm {norm} did not shrink below {last}");
        last = norm;
    }
}

#[test]
fn ridge_rejects_bad_inputs() {
    let theta = Array2::<f64>::zeros((3, 4));
    let targets = Array2::<f64>::zeros((2, 5));
    assert!(matches!(
        ridge_solve(targets.view(), theta.view(), 1.0),
        Err(Error::DimensionMismatch(_))
    ));
    let targets = Array2::<f64>::zeros((2, 4));
    assert!(matches!(
        ridge_solve(targets.view(), theta.view(), 0.0),
        Err(Error::InvalidValue(_))
    ));
    assert!(matches!(
        ridge_solve(targets.view(), theta.view(), -2.0),
        Err(Error::InvalidValue(_))
    ));
}

// ------------------------------------------------------------- recovery --

// Simulates z+ = A z + B u + c with persistent excitation.
fn simulate_linear(
    a: &Array2<f64>,
    b: &Array2<f64>,
    c: &Array1<f64>,
    m: usize,
    seed: u64,
) -> (Array2<f64>, Array2<f64>) {
    let r = a.nrows();
    let n_u = b.ncols();
    let mut rng = chacha_stream(seed, 0);
    let mut latents = Array2::<f64>::zeros((r, m));
    let mut drivers = Array2::<f64>::zeros((n_u, m));
    let mut z = Array1::from_iter((0..r).map(|_| rng.random_range(-0.5..0.5)));
    for k in 0..m {
        let u = Array1::from_iter((0..n_u).map(|_| rng.random_range(-1.0..1.0)));
        latents.column_mut(k).assign(&z);
        drivers.column_mut(k).assign(&u);
        z = a.dot(&z) + b.dot(&u) + c;
    }
    (latents, drivers)
}

#[test]
fn dmdc_recovers_linear_system_exactly() {
    let a = arr2(&[[0.9, 0.05], [-0.02, 0.8]]);
    let b = arr2(&[[0.3, 0.0], [0.1, -0.2]]);
    let c = arr1(&[0.01, -0.02]);
    let (latents, drivers) = simulate_linear(&a, &b, &c, 200, 1);

    let model = fit_dmdc(latents.view(), drivers.view(), RegressionConfig::with_alpha(1e-10), 3600.0).unwrap();
    assert_eq!(model.kind, ModelKind::Dmdc);
    assert_eq!(model.n_ar, 0);
    assert_eq!(model.nl_spec.p(), 0);
    assert!(max_abs_diff(&model.a, &a) < 1e-6, "A error {}", max_abs_diff(&model.a, &a));
    assert!(max_abs_diff(&model.b, &b) < 1e-6);
    for i in 0..2 {
        assert!((model.c[i] - c[i]).abs() < 1e-6);
    }
}

#[test]
fn sindyc_ranks_the_active_quadratic_term() {
    // z0+ = 0.8 z0 + 0.2 u0; z1+ = 0.7 z1 + 0.3 z0^2. The only active
    // nonlinear coefficient must dominate every truly-zero one.
    let mut rng = chacha_stream(2, 0);
    let m = 400;
    let mut latents = Array2::<f64>::zeros((2, m));
    let mut drivers = Array2::<f64>::zeros((1, m));
    let mut z = arr1(&[0.1, 0.0]);
    for k in 0..m {
        let u = arr1(&[rng.random_range(-1.0..1.0)]);
        latents.column_mut(k).assign(&z);
        drivers.column_mut(k).assign(&u);
        z = arr1(&[0.8 * z[0] + 0.2 * u[0], 0.7 * z[1] + 0.3 * z[0] * z[0]]);
    }
    let spec = LibrarySpec::full(2, 1);
    let model =
        fit_sindyc_ar(latents.view(), drivers.view(), 0, &spec, RegressionConfig::with_alpha(1e-3), 3600.0)
            .unwrap();

    // Standardized nonlinear block: row 1, column of the z0^2 term.
    let zz00 = model
        .nl_spec
        .terms
        .iter()
        .position(|t| *t == Term::ZZ(0, 0))
        .unwrap();
    let active = model.xi_nl[(1, zz00)].abs();
    for (j, term) in model.nl_spec.terms.iter().enumerate() {
        for row in 0..2 {
            if row == 1 && *term == Term::ZZ(0, 0) {
                continue;
            }
            let zero_coeff = model.xi_nl[(row, j)].abs();
            assert!(
                active >= 10.0 * zero_coeff,
                "active {active} vs {term:?} row {row}: {zero_coeff}"
            );
        }
    }
}

#[test]
fn ar_fit_reproduces_lagged_dynamics() {
    // z+ = 0.5 z + 0.3 z(-1) - 0.2 z(-2) + 0.1 u: the lag blocks carry real
    // signal and the fitted model must forecast the held-out tail.
    let mut rng = chacha_stream(9, 0);
    let m = 300;
    let n_ar = 2;
    let us: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut z = vec![0.2f64, -0.1, 0.05];
    for k in 3..m {
        z.push(0.5 * z[k - 1] + 0.3 * z[k - 2] - 0.2 * z[k - 3] + 0.1 * us[k - 1]);
    }
    let latents = Array2::from_shape_fn((1, m), |(_, k)| z[k]);
    let drivers = Array2::from_shape_fn((1, m), |(_, k)| us[k]);

    let spec = LibrarySpec::linear(1, 1);
    let model = fit_sindyc_ar(
        latents.view(),
        drivers.view(),
        n_ar,
        &spec,
        RegressionConfig::with_alpha(1e-10),
        3600.0,
    )
    .unwrap();

    assert_eq!(model.n_ar, 2);
    assert_eq!(model.a_lags.len(), 2);
    assert_eq!(model.b_lags.len(), 2);
    // Recover z+ = 0.5 z + 0.3 z(-1) - 0.2 z(-2) + 0.1 u. The model wants
    // n_ar=2 but the true system has memory 2 behind the current value, so
    // A_1 ~ 0.3, A_2 ~ -0.2.
    assert_relative_eq!(model.a[(0, 0)], 0.5, epsilon = 1e-6);
    assert_relative_eq!(model.a_lags[0][(0, 0)], 0.3, epsilon = 1e-6);
    assert_relative_eq!(model.a_lags[1][(0, 0)], -0.2, epsilon = 1e-6);
    assert_relative_eq!(model.b[(0, 0)], 0.1, epsilon = 1e-6);

    // One-step forecasts on the training tail agree with the truth.
    for k in 10..20 {
        let zc = arr1(&[z[k]]);
        let lags = [arr1(&[z[k - 1]]), arr1(&[z[k - 2]])];
        let lag_views: Vec<_> = lags.iter().map(|v| v.view()).collect();
        let u = arr1(&[us[k]]);
        let u_lags = [arr1(&[us[k - 1]]), arr1(&[us[k - 2]])];
        let u_lag_views: Vec<_> = u_lags.iter().map(|v| v.view()).collect();
        let pred = model.one_step(zc.view(), &lag_views, u.view(), &u_lag_views).unwrap();
        assert_relative_eq!(pred[0], z[k + 1], epsilon = 1e-6);
    }
}

#[test]
fn frozen_driver_gets_zero_coefficient() {
    // Second driver channel is exactly constant: its coefficient must come
    // back zero with the constant absorbed by the intercept.
    let a = arr2(&[[0.85]]);
    let b = arr2(&[[0.2, 0.4]]);
    let c = arr1(&[0.0]);
    let mut rng = chacha_stream(12, 0);
    let m = 120;
    let mut latents = Array2::<f64>::zeros((1, m));
    let mut drivers = Array2::<f64>::zeros((2, m));
    let mut z = arr1(&[0.3]);
    for k in 0..m {
        let u = arr1(&[rng.random_range(-1.0..1.0), 5.0]);
        latents.column_mut(k).assign(&z);
        drivers.column_mut(k).assign(&u);
        z = a.dot(&z) + b.dot(&u) + &c;
    }
    let model = fit_dmdc(latents.view(), drivers.view(), RegressionConfig::with_alpha(1e-10), 3600.0).unwrap();
    assert_eq!(model.b[(0, 1)], 0.0, "constant channel must freeze");
    // The absorbed constant 0.4 * 5 lands in the intercept.
    assert_relative_eq!(model.c[0], 2.0, epsilon = 1e-6);
    assert_relative_eq!(model.a[(0, 0)], 0.85, epsilon = 1e-6);
    assert_relative_eq!(model.b[(0, 0)], 0.2, epsilon = 1e-6);
}

#[test]
fn q_hint_matches_training_residual_scale() {
    // Noise-free linear data fits exactly: residual covariance ~ 0.
    let a = arr2(&[[0.9, 0.0], [0.0, 0.7]]);
    let b = arr2(&[[0.1], [0.2]]);
    let c = arr1(&[0.0, 0.0]);
    let (latents, drivers) = simulate_linear(&a, &b, &c, 150, 4);
    let model = fit_dmdc(latents.view(), drivers.view(), RegressionConfig::with_alpha(1e-10), 3600.0).unwrap();
    let max_q = model.q_hint.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    assert!(max_q < 1e-12, "noise-free fit should leave ~zero residual, got {max_q}");
}

#[test]
fn fit_rejects_short_series() {
    let latents = Array2::<f64>::zeros((2, 4));
    let drivers = Array2::<f64>::zeros((1, 4));
    let spec = LibrarySpec::linear(2, 1);
    assert!(matches!(
        fit_sindyc_ar(latents.view(), drivers.view(), 3, &spec, RegressionConfig::default(), 3600.0),
        Err(Error::InsufficientData(_))
    ));
}

// ------------------------------------------------------------ rescaling --

fn scalar_model(a: f64, b: f64, cadence: f64) -> RomModel<f64> {
    RomModel {
        kind: ModelKind::Dmdc,
        r: 1,
        n_u: 1,
        n_ar: 0,
        cadence_s: cadence,
        lag_stride: 1,
        a: arr2(&[[a]]),
        a_lags: vec![],
        b: arr2(&[[b]]),
        b_lags: vec![],
        c: arr1(&[0.0]),
        xi_nl: Array2::zeros((1, 0)),
        nl_spec: LibrarySpec::empty(1, 1),
        scaler: FeatureScaler::identity(0),
        alpha: 1.0,
        q_hint: Array2::zeros((1, 1)),
    }
}

#[test]
fn scalar_closed_form_half_step() {
    // a = 4, b = 3 at cadence 2: one half-length step has a' = 4^(1/2) = 2
    // and b' = (2 - 1)/(4 - 1) * 3 = 1.
    let model = scalar_model(4.0, 3.0, 2.0);
    let out = rescale_cadence(&model, 1.0).unwrap();
    assert!((out.a[(0, 0)] - 2.0).abs() < 1e-12);
    assert!((out.b[(0, 0)] - 1.0).abs() < 1e-12);
    assert_eq!(out.lag_stride, 2);
    assert_eq!(out.cadence_s, 1.0);
}

#[test]
fn identity_dynamics_split_the_input_evenly() {
    let mut model = scalar_model(1.0, 0.0, 3600.0);
    model.r = 2;
    model.n_u = 1;
    model.a = Array2::eye(2);
    model.b = arr2(&[[0.6], [-1.2]]);
    model.c = arr1(&[0.0, 0.0]);
    model.xi_nl = Array2::zeros((2, 0));
    model.nl_spec = LibrarySpec::empty(2, 1);
    model.q_hint = Array2::zeros((2, 2));
    let out = rescale_cadence(&model, 60.0).unwrap();
    for i in 0..2 {
        assert!((out.a[(i, i)] - 1.0).abs() < 1e-10);
        assert!((out.b[(i, 0)] - model.b[(i, 0)] / 60.0).abs() < 1e-10);
    }
}

#[test]
fn substeps_recompose_the_training_step() {
    // (A_t2)^steps must reproduce A_t1 on random stable systems.
    let mut rng = chacha_stream(31, 0);
    let mut tested = 0;
    while tested < 20 {
        let r = 4;
        let raw = Array2::from_shape_fn((r, r), |_| rng.random_range(-1.0..1.0));
        // Pull toward a stable, positively-damped operator: dominant
        // diagonal keeps eigenvalues off the negative real axis.
        let mut a = raw * 0.15;
        for i in 0..r {
            a[(i, i)] += 0.8;
        }
        let mut model = scalar_model(0.0, 0.0, 3600.0);
        model.r = r;
        model.n_u = 1;
        model.a = a.clone();
        model.b = Array2::from_shape_fn((r, 1), |_| rng.random_range(-1.0..1.0));
        model.c = Array1::zeros(r);
        model.xi_nl = Array2::zeros((r, 0));
        model.nl_spec = LibrarySpec::empty(r, 1);
        model.q_hint = Array2::zeros((r, r));

        let out = match rescale_cadence(&model, 60.0) {
            Ok(out) => out,
            Err(_) => continue,
        };
        let mut acc = Array2::<f64>::eye(r);
        for _ in 0..60 {
            acc = acc.dot(&out.a);
        }
        assert!(
            max_abs_diff(&acc, &a) < 1e-8,
            "recomposition error {}",
            max_abs_diff(&acc, &a)
        );
        tested += 1;
    }
}

#[test]
fn sub_step_operators_scale_linearly() {
    let mut model = scalar_model(0.9, 0.5, 120.0);
    model.n_ar = 1;
    model.a_lags = vec![arr2(&[[0.3]])];
    model.b_lags = vec![arr2(&[[-0.4]])];
    model.c = arr1(&[0.8]);
    model.nl_spec = LibrarySpec { r: 1, n_u: 1, terms: vec![Term::ZZ(0, 0)] };
    model.scaler = FeatureScaler::identity(1);
    model.xi_nl = arr2(&[[0.6]]);

    let out = rescale_cadence(&model, 60.0).unwrap();
    assert!((out.c[0] - 0.4).abs() < 1e-12);
    assert!((out.xi_nl[(0, 0)] - 0.3).abs() < 1e-12);
    assert!((out.a_lags[0][(0, 0)] - 0.15).abs() < 1e-12);
    assert!((out.b_lags[0][(0, 0)] + 0.2).abs() < 1e-12);
    assert_eq!(out.lag_stride, 2);
}

#[test]
fn same_cadence_is_identity() {
    let model = scalar_model(0.7, 0.2, 60.0);
    let out = rescale_cadence(&model, 60.0).unwrap();
    assert_eq!(out.a, model.a);
    assert_eq!(out.b, model.b);
    assert_eq!(out.lag_stride, 1);
}

#[test]
fn non_divisor_cadence_is_rejected() {
    let model = scalar_model(0.7, 0.2, 3600.0);
    assert!(matches!(
        rescale_cadence(&model, 7.0),
        Err(Error::CadenceMismatch { .. })
    ));
    assert!(matches!(
        rescale_cadence(&model, 7200.0),
        Err(Error::CadenceMismatch { .. })
    ));
}

#[test]
fn negative_real_eigenvalue_has_no_real_root() {
    let model = scalar_model(-0.5, 0.2, 3600.0);
    assert!(matches!(
        rescale_cadence(&model, 60.0),
        Err(Error::NoRealPrincipalRoot(_))
    ));
}
