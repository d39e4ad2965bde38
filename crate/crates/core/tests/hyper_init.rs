use std::sync::Arc;

use approx::assert_relative_eq;
use hdsa_core::discrepancy::CalibrationDataset;
use hdsa_core::fem::{FunctionSpace, LinearSolutionOperator, Mesh, Mesh1D, Mesh2D};
use hdsa_core::hyper_init::{
    control_perturbation, correlation_length, estimate_gamma_sq, expected_eigratio, field_correlation_length,
    init_alpha_u, init_alpha_z, init_noise, init_smoothness, init_temporal_weights, initialize, unit_cube_spectrum,
    InitOptions,
};
use hdsa_core::prior::{HyperParams, PriorModel};
use hdsa_core::scenario::{ProblemKind, Scenario, ScenarioConfig};
use hdsa_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn grid(n: usize, extent: f64) -> Vec<f64> {
    (0..n).map(|i| extent * i as f64 / (n - 1) as f64).collect()
}

fn interval(n: usize) -> Arc<FunctionSpace> {
    Arc::new(FunctionSpace::new(Mesh::Interval(Mesh1D::uniform(n).unwrap())).unwrap())
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Shifted-product correlation of `sin(2πx)` on `[0,1]` when only pairs
/// with `x + κ ≤ 1` are kept, by composite Simpson quadrature.
fn truncated_sine_correlation(kappa: f64) -> f64 {
    let n = 2000;
    let b = 1.0 - kappa;
    let h = b / n as f64;
    let f = |x: f64| (TWO_PI * x).sin() * (TWO_PI * (x + kappa)).sin();
    let mut s = f(0.0) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    (s * h / 3.0) / b / 0.5
}

fn first_crossing(rho: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 0.49);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if rho(mid) > 0.1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[test]
fn sine_on_the_unit_interval_matches_truncated_integral() {
    let xs = grid(1025, 1.0);
    let f: Vec<f64> = xs.iter().map(|x| (TWO_PI * x).sin()).collect();
    let dk = 1.0 / 1024.0;
    let est = correlation_length(&f, &xs, Some(dk)).unwrap();
    let oracle = first_crossing(truncated_sine_correlation);
    assert!((est.kappa - oracle).abs() <= 2.0 * dk, "{} vs {oracle}", est.kappa);
}

#[test]
fn sine_over_many_periods_matches_cosine_crossing() {
    // Dropped pairs matter less when the domain spans many periods.
    let xs = grid(16001, 40.0);
    let f: Vec<f64> = xs.iter().map(|x| (TWO_PI * x).sin()).collect();
    let dk = 40.0 / 16000.0;
    let est = correlation_length(&f, &xs, Some(dk)).unwrap();
    let oracle = 0.1f64.acos() / TWO_PI;
    assert!((est.kappa - oracle).abs() <= 2.0 * dk, "{} vs {oracle}", est.kappa);
}

#[test]
fn white_noise_decorrelates_immediately() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs = grid(2001, 1.0);
    let f = normals(&mut rng, 2001);
    let dk = 1.0 / 2000.0;
    let est = correlation_length(f.as_slice(), &xs, Some(dk)).unwrap();
    assert!(est.kappa <= 2.0 * dk);
}

#[test]
fn constant_and_malformed_fields_are_rejected() {
    let xs = grid(9, 1.0);
    assert!(matches!(correlation_length(&[3.0; 9], &xs, None), Err(Error::DegenerateField(_))));
    assert!(matches!(correlation_length(&[1.0, 2.0], &[0.0, 1.0], None), Err(Error::InvalidInput(_))));
    assert!(matches!(correlation_length(&[1.0, 2.0, 0.0], &[0.0, 1.0, 0.5], None), Err(Error::InvalidInput(_))));
}

/// Samples of a squared-exponential Gaussian field via a clamped
/// eigendecomposition of the kernel matrix.
fn squared_exponential_fields(xs: &[f64], ell: f64, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let n = xs.len();
    let k = DMatrix::from_fn(n, n, |i, j| (-(xs[i] - xs[j]).powi(2) / (2.0 * ell * ell)).exp());
    let eig = k.symmetric_eigen();
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| &root * normals(&mut rng, n)).collect()
}

#[test]
fn squared_exponential_field_length_is_recovered() {
    let xs = grid(513, 1.0);
    let crossing = 0.1;
    let ell = crossing / (2.0 * 10f64.ln()).sqrt();
    let fields = squared_exponential_fields(&xs, ell, 10, 17);
    let mean = fields
        .iter()
        .map(|f| correlation_length(f.as_slice(), &xs, None).unwrap().kappa)
        .sum::<f64>()
        / 10.0;
    assert!((mean - crossing).abs() / crossing < 0.25, "{mean}");
}

#[test]
fn square_fields_average_over_grid_lines() {
    let mesh = Mesh::Square(Mesh2D::unit_square(33).unwrap());
    // Varies along x only: every row has the sine's length, columns are
    // constant and skipped.
    let f: Vec<f64> = mesh.coordinates().iter().map(|p| (TWO_PI * p[0]).sin()).collect();
    let xs = grid(33, 1.0);
    let row: Vec<f64> = xs.iter().map(|x| (TWO_PI * x).sin()).collect();
    let expect = correlation_length(&row, &xs, None).unwrap().kappa;
    assert_relative_eq!(field_correlation_length(&f, &mesh, None).unwrap(), expect, epsilon = 1e-12);
}

#[test]
fn smoothness_from_synthetic_data_uses_dimension_constants() {
    let state = interval(65);
    let control = interval(65);
    let xs = grid(65, 1.0);
    let wave: Vec<f64> = xs.iter().map(|x| (TWO_PI * x).sin()).collect();
    let slow: Vec<f64> = xs.iter().map(|x| (std::f64::consts::PI * x).cos()).collect();
    let data = CalibrationDataset::from_raw(
        vec![DVector::from_vec(slow.clone())],
        vec![DVector::from_vec(wave.clone())],
    )
    .unwrap();
    let init = init_smoothness(&data, &state, &control, &InitOptions::default()).unwrap();
    let ku = correlation_length(&wave, &xs, None).unwrap().kappa;
    let kz = correlation_length(&slow, &xs, None).unwrap().kappa;
    assert_relative_eq!(init.kappa_u, ku, epsilon = 1e-14);
    assert_relative_eq!(init.beta_u, ku * ku / 12.0, epsilon = 1e-14);
    assert_relative_eq!(init.beta_z, kz * kz / 12.0, epsilon = 1e-14);
    assert!(init.kappa_t.is_none());

    let flat = CalibrationDataset::from_raw(vec![DVector::from_vec(slow)], vec![DVector::from_element(65, 2.0)]).unwrap();
    assert!(matches!(
        init_smoothness(&flat, &state, &control, &InitOptions::default()),
        Err(Error::InitFailure(_))
    ));
}

#[test]
fn temporal_weights_follow_snapshot_norms() {
    let config = ScenarioConfig {
        n_time: Some(3),
        ..ScenarioConfig::new(ProblemKind::Transient1d, 5)
    };
    let sc = Scenario::build(config).unwrap();
    let state = sc.state();
    // Snapshots 0, c and 2c have squared norms in ratio 0 : 1 : 4.
    let c = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, 1.0]);
    let mut raw = DVector::zeros(15);
    raw.rows_mut(5, 5).copy_from(&c);
    raw.rows_mut(10, 5).copy_from(&(&c * 2.0));
    let data = CalibrationDataset::from_raw(vec![DVector::from_element(5, 1.0)], vec![raw]).unwrap();
    let w = init_temporal_weights(&data, state, 0.01).unwrap();
    for (a, b) in w.iter().zip([0.01, 0.26, 1.01]) {
        assert_relative_eq!(*a, b, epsilon = 1e-14);
    }
    let zero = CalibrationDataset::from_raw(vec![DVector::from_element(5, 1.0)], vec![DVector::zeros(15)]).unwrap();
    assert_eq!(init_temporal_weights(&zero, state, 0.01).unwrap(), vec![0.01; 3]);
}

fn hyper(beta_u: f64, beta_z: f64) -> HyperParams {
    HyperParams {
        alpha_u: 1.0,
        beta_u,
        alpha_z: 1.0,
        beta_z,
        alpha_t: None,
        beta_t: None,
        eps_t: 0.01,
        alpha_d: 1e-6,
    }
}

#[test]
fn alpha_u_matches_sample_energy_for_several_settings() {
    for (n, beta_u) in [(17, 0.0), (33, 0.01), (65, 0.05)] {
        let state = interval(n);
        let xs = grid(n, 1.0);
        let d1 = DVector::from_iterator(n, xs.iter().map(|x| 3.0 * (5.0 * x).sin() + x));
        let zt = DVector::from_element(n, 1.0);
        let data = CalibrationDataset::from_centered(vec![zt.clone()], vec![d1.clone()], 0.0, 1.0).unwrap();
        let unit = PriorModel::build(state.clone(), state.clone(), hyper(beta_u, 0.01), zt).unwrap();
        let alpha_u = init_alpha_u(&data, &unit).unwrap();
        let prior = unit.with_hyper(HyperParams { alpha_u, ..hyper(beta_u, 0.01) }).unwrap();
        let q = 4000u64;
        let v: Vec<f64> = (0..q)
            .map(|i| state.norm_sq(&prior.delta_field_parts(i).unwrap().0).unwrap())
            .collect();
        let m = v.iter().sum::<f64>() / q as f64;
        let se = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / ((q - 1) * q) as f64).sqrt();
        let target = state.norm_sq(&d1).unwrap();
        assert!((m - target).abs() < 3.0 * se, "n={n}: {m} vs {target} (se {se})");

        let doubled = CalibrationDataset::from_centered(vec![DVector::from_element(n, 1.0)], vec![&d1 * 2.0], 0.0, 1.0).unwrap();
        assert_relative_eq!(init_alpha_u(&doubled, &unit).unwrap(), 4.0 * alpha_u, max_relative = 1e-14);
    }
    let state = interval(9);
    let zero = CalibrationDataset::from_centered(vec![DVector::zeros(9)], vec![DVector::zeros(9)], 0.0, 0.0).unwrap();
    let unit = PriorModel::build(state.clone(), state, hyper(0.0, 0.0), DVector::zeros(9)).unwrap();
    assert!(matches!(init_alpha_u(&zero, &unit), Err(Error::ZeroData(_))));
}

#[test]
fn gamma_matches_independent_dense_monte_carlo() {
    let sc = Scenario::build(ScenarioConfig::new(ProblemKind::Stationary1d, 33)).unwrap();
    let z = sc.lowfi_problem().unwrap().solve_optimum().unwrap();
    let (state, control) = (sc.state().clone(), sc.control().clone());
    let prior = PriorModel::build(state.clone(), control.clone(), hyper(0.01, 0.02), z.clone()).unwrap();
    let est = estimate_gamma_sq(sc.lowfi(), &prior, 2000, 3).unwrap();

    let m = control.mass();
    let f = (control.stiffness() * 0.02 + m).lu().solve(&m.clone().cholesky().unwrap().l()).unwrap();
    let s = sc.lowfi().matrix();
    let scale2 = z.dot(&(m * &z));
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 20_000;
    let vals: Vec<f64> = (0..n)
        .map(|_| {
            let w = &f * normals(&mut rng, 33);
            let sw = s * &w;
            scale2 * sw.dot(&(state.mass() * &sw)) / w.dot(&(m * &w))
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let se = (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / ((n - 1) * n) as f64).sqrt();
    let tol = 3.0 * (se * se + est.std_error * est.std_error).sqrt();
    assert!((est.gamma_sq - mean).abs() < tol, "{} vs {mean}", est.gamma_sq);
    assert_eq!(est.cos_zeta, 0.5);
}

#[test]
fn gamma_scaling_and_degenerate_cases() {
    let state = interval(17);
    let s = LinearSolutionOperator::linear(DMatrix::from_fn(17, 17, |i, j| 1.0 / (1.0 + (i as f64 - j as f64).abs())));
    let z = DVector::from_fn(17, |i, _| 1.0 + i as f64 / 16.0);
    let p1 = PriorModel::build(state.clone(), state.clone(), hyper(0.0, 0.05), z.clone()).unwrap();
    let p2 = PriorModel::build(state.clone(), state.clone(), hyper(0.0, 0.05), &z * 2.0).unwrap();
    let g1 = estimate_gamma_sq(&s, &p1, 50, 0).unwrap().gamma_sq;
    let g2 = estimate_gamma_sq(&s, &p2, 50, 0).unwrap().gamma_sq;
    assert_relative_eq!(g2, 4.0 * g1, max_relative = 1e-12);

    let constant = LinearSolutionOperator::new(DMatrix::zeros(17, 17), DVector::from_element(17, 4.0)).unwrap();
    assert_eq!(estimate_gamma_sq(&constant, &p1, 20, 0).unwrap().gamma_sq, 0.0);

    let p0 = PriorModel::build(state.clone(), state, hyper(0.0, 0.05), DVector::zeros(17)).unwrap();
    assert!(matches!(control_perturbation(&p0, 0), Err(Error::DegeneratePerturbation(_))));
    assert!(matches!(estimate_gamma_sq(&s, &p0, 5, 0), Err(Error::DegeneratePerturbation(_))));
}

#[test]
fn eigen_ratio_limits_and_dimension_ordering() {
    assert_eq!(expected_eigratio(&[1.0; 40], 100, 0).unwrap().mean, 1.0);
    assert!(matches!(expected_eigratio(&[], 10, 0), Err(Error::InvalidInput(_))));
    assert!(matches!(expected_eigratio(&[0.5, 1.0], 10, 0), Err(Error::InvalidInput(_))));
    // Strong smoothing leaves only the constant mode.
    let stiff = expected_eigratio(&unit_cube_spectrum(1, 65, 1e4), 2000, 0).unwrap();
    assert!(stiff.mean > 0.999);
    for beta in [1e-3, 1e-2, 1e-1, 1.0, 10.0] {
        let r: Vec<f64> = [(1, 257), (2, 33), (3, 17)]
            .iter()
            .map(|&(s, m)| expected_eigratio(&unit_cube_spectrum(s, m, beta), 4000, 1).unwrap().mean)
            .collect();
        assert!(r.iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!(r[2] < r[1] && r[1] < r[0], "beta {beta}: {r:?}");
    }
}

#[test]
fn alpha_z_and_noise_formulas() {
    assert_relative_eq!(init_alpha_z(2.0, 2.0, 1.0, 1.0).unwrap(), 1.0);
    assert_relative_eq!(init_alpha_z(3.0, 1.5, 2.0, 0.25).unwrap(), 2.0 * init_alpha_z(3.0, 1.5, 2.0, 0.5).unwrap());
    assert!(matches!(init_alpha_z(1.0, 0.0, 1.0, 1.0), Err(Error::InitFailure(_))));
    assert_relative_eq!(init_noise(10.0).unwrap(), 1e-4, max_relative = 1e-14);
    assert_relative_eq!(init_noise(1.0).unwrap(), 1e-6, max_relative = 1e-14);
    assert_relative_eq!(init_noise(70.0).unwrap(), 100.0 * init_noise(7.0).unwrap(), max_relative = 1e-14);
    assert!(matches!(init_noise(0.0), Err(Error::ZeroData(_))));
}

#[test]
fn alpha_z_reproduces_gamma_through_the_sampler() {
    let sc = Scenario::build(ScenarioConfig::new(ProblemKind::Stationary1d, 33)).unwrap();
    let data = sc.default_data().unwrap();
    let opts = InitOptions::default();
    let report = initialize(&data, sc.state().clone(), sc.control().clone(), sc.lowfi(), &opts).unwrap();
    let prior = PriorModel::build(sc.state().clone(), sc.control().clone(), report.hyper.clone(), data.z_tilde().clone()).unwrap();
    // E‖δ(z̃+Δz) − δ(z̃)‖² over Δz and θ, with α_u fixed by ‖d₁‖².
    let n = 4000u64;
    let vals: Vec<f64> = (0..n)
        .map(|j| {
            let dz = control_perturbation(&prior, 10_000 + j).unwrap();
            let (_, v) = prior.delta_field_parts(j).unwrap();
            let c = prior.variation_scale(&dz).unwrap();
            c * c * prior.state().norm_sq(&v).unwrap()
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let se = (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / ((n - 1) * n) as f64).sqrt();
    let gamma = &report.gamma;
    let tol = 3.0 * (se * se + gamma.std_error.powi(2) + (gamma.gamma_sq * report.eigratio.std_error / report.eigratio.mean).powi(2)).sqrt();
    assert!((mean - gamma.gamma_sq).abs() < tol, "{mean} vs {}", gamma.gamma_sq);
}

#[test]
fn initialization_is_deterministic() {
    let sc = Scenario::build(ScenarioConfig::new(ProblemKind::Stationary1d, 33)).unwrap();
    let data = sc.default_data().unwrap();
    let opts = InitOptions {
        mc_eig: 500,
        ..InitOptions::default()
    };
    let a = initialize(&data, sc.state().clone(), sc.control().clone(), sc.lowfi(), &opts).unwrap();
    let b = initialize(&data, sc.state().clone(), sc.control().clone(), sc.lowfi(), &opts).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn length_stays_within_the_domain(values in proptest::collection::vec(-5.0f64..5.0, 5..60), extent in 0.1f64..10.0) {
        let xs = grid(values.len(), extent);
        match correlation_length(&values, &xs, None) {
            Ok(est) => prop_assert!(est.kappa > 0.0 && est.kappa <= extent * (1.0 + 1e-12)),
            Err(Error::DegenerateField(_)) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn eigen_ratio_is_a_probability_like_ratio(eigs in proptest::collection::vec(1.0f64..50.0, 1..40), seed in any::<u64>()) {
        let r = expected_eigratio(&eigs, 200, seed).unwrap();
        prop_assert!(r.mean > 0.0 && r.mean <= 1.0 + 1e-15);
    }
}
