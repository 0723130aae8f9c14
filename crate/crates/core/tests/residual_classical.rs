mod common;

use common::{diagonal_scenario, gaussian_matrix, harmonic_model, panel, region_ids};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use stforecast::classical::{
    empirical_covariances, estimate_rho, one_step_predictions, plugin_predict, residuals,
};
use stforecast::linalg::frobenius;
use stforecast::synth::generate_residuals;
use stforecast::trig::{design_matrix, fit, regression_times};
use stforecast::ResidualPanel;

fn residual_panel(values: DMatrix<f64>) -> ResidualPanel {
    let t = values.nrows();
    ResidualPanel::new(regression_times(t), region_ids(values.ncols()), values).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn ar_panel(t: usize, seed: u64) -> ResidualPanel {
    generate_residuals(&diagonal_scenario(harmonic_model(1, 4, t), 0.5, 0.1, t, seed)).unwrap()
}

fn rho_error(t: usize, seed: u64) -> f64 {
    let cov = empirical_covariances(&ar_panel(t, seed)).unwrap();
    let rho = estimate_rho(&cov, 4).unwrap().rho;
    frobenius(&(rho - DMatrix::<f64>::identity(4, 4) * 0.5))
}

#[test]
fn white_noise_covariances() {
    let cov = empirical_covariances(&residual_panel(gaussian_matrix(100_000, 2, 17))).unwrap();
    assert!((&cov.r0 - DMatrix::<f64>::identity(2, 2)).abs().max() <= 0.02);
    assert!(cov.r1.abs().max() <= 0.02);
}

#[test]
fn diagonal_ar_is_recovered() {
    let e = median((0..50).map(|s| rho_error(5000, s)).collect());
    assert!(e <= 0.05, "{e}");
}

#[test]
fn error_shrinks_with_length() {
    let med: Vec<f64> = [500, 2000, 8000]
        .iter()
        .map(|&t| median((0..50).map(|s| rho_error(t, s)).collect()))
        .collect();
    assert!(med[0] > med[1] && med[1] > med[2], "{med:?}");
}

#[test]
fn excess_prediction_error_shrinks_with_length() {
    let truth = DMatrix::<f64>::identity(4, 4) * 0.5;
    let test = ar_panel(400, 999);
    let oracle = one_step_predictions(&truth, &test).unwrap();
    let excess = |t: usize, s: u64| {
        let cov = empirical_covariances(&ar_panel(t, s)).unwrap();
        let rho = estimate_rho(&cov, 4).unwrap().rho;
        let pred = one_step_predictions(&rho, &test).unwrap();
        (pred - &oracle).norm_squared() / oracle.len() as f64
    };
    let med: Vec<f64> = [500, 2000, 8000]
        .iter()
        .map(|&t| median((0..50).map(|s| excess(t, s)).collect()))
        .collect();
    assert!(med[0] > med[1] && med[1] > med[2], "{med:?}");
}

#[test]
fn orthogonal_noise_survives_the_fit() {
    let t = 265;
    let truth = harmonic_model(6, 3, t);
    let times = regression_times(t);
    let phi = design_matrix(&truth.frequencies, &times, false);
    let z = gaussian_matrix(t, 3, 8) * 0.2;
    let hat = &phi * (phi.transpose() * &phi).try_inverse().unwrap() * phi.transpose();
    let noise = &z - hat * &z;
    let p = panel(truth.predict(&times) + &noise);
    let model = fit(&p, &truth.frequencies, false).unwrap();
    let res = residuals(&p, &model).unwrap();
    assert!((res.values - noise).abs().max() <= 1e-6);
}

#[test]
fn plugin_on_half_identity() {
    let res = residual_panel(DMatrix::from_row_slice(2, 2, &[2.0, -4.0, 0.0, 0.0]));
    let pred = plugin_predict(&(DMatrix::<f64>::identity(2, 2) * 0.5), &res, 2).unwrap();
    assert_eq!(pred, DVector::from_vec(vec![1.0, -2.0]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lag_zero_is_psd_and_symmetric(seed in any::<u64>(), p in 1usize..6, t in 3usize..40) {
        let cov = empirical_covariances(&residual_panel(gaussian_matrix(t, p, seed))).unwrap();
        prop_assert!((&cov.r0 - cov.r0.transpose()).abs().max() <= 1e-12);
        let lmax = cov.eigvals.max();
        prop_assert!(cov.eigvals.min() >= -1e-10 * lmax.max(1.0));
        let gram = cov.eigvecs.transpose() * &cov.eigvecs;
        prop_assert!((gram - DMatrix::<f64>::identity(p, p)).abs().max() <= 1e-10);
    }

    #[test]
    fn full_rank_equals_direct_inverse(seed in any::<u64>(), p in 1usize..6) {
        let cov = empirical_covariances(&residual_panel(gaussian_matrix(200, p, seed))).unwrap();
        let rho = estimate_rho(&cov, p).unwrap().rho;
        let direct = &cov.r1 * cov.r0.clone().try_inverse().unwrap();
        prop_assert!(frobenius(&(&rho - &direct)) <= 1e-10 * frobenius(&direct).max(1e-300));
    }

    #[test]
    fn truncation_bounds_rank(seed in any::<u64>(), p in 2usize..7, k in 1usize..7) {
        let k = k.min(p);
        let cov = empirical_covariances(&residual_panel(gaussian_matrix(100, p, seed))).unwrap();
        let rho = estimate_rho(&cov, k).unwrap().rho;
        let sv = rho.singular_values();
        let tol = 1e-10 * sv.max().max(1e-300);
        prop_assert!(sv.iter().filter(|&&s| s > tol).count() <= k);
    }
}

#[test]
fn default_truncation_examples() {
    use stforecast::classical::default_truncation;
    assert_eq!(default_truncation(265), 5);
    assert_eq!(default_truncation(2), 1);
}
