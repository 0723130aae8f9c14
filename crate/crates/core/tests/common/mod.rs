#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use stforecast::rng::stream;
use stforecast::synth::Scenario;
use stforecast::trig::harmonic_frequencies;
use stforecast::{DataMode, LaggedDataset, LogRiskPanel, TrigModel};

pub fn region_ids(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("C{i}")).collect()
}

pub fn dataset(x: DMatrix<f64>, y: DVector<f64>) -> LaggedDataset {
    let n = y.len();
    LaggedDataset {
        j0: x.ncols(),
        inputs: x,
        targets: y,
        region: 0,
        target_rows: (0..n).collect(),
    }
}

/// Harmonic model with smooth, region-dependent coefficients.
pub fn harmonic_model(n: usize, p: usize, t: usize) -> TrigModel {
    let mut m = TrigModel::zero(harmonic_frequencies(n, t as f64), region_ids(p), t);
    for k in 0..n {
        for q in 0..p {
            m.a[k][q] = 1.2 / (k + 1) as f64 * (0.7 * q as f64 + k as f64).cos();
            m.b[k][q] = 0.9 / (k + 1) as f64 * (0.4 * q as f64 + 2.0 * k as f64).sin();
        }
    }
    m
}

pub fn panel(values: DMatrix<f64>) -> LogRiskPanel {
    let t = values.nrows();
    let p = values.ncols();
    LogRiskPanel::new((1..=t).map(|i| i as f64).collect(), region_ids(p), values, DataMode::Hard).unwrap()
}

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, &[]);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn diagonal_scenario(model: TrigModel, rho: f64, sigma: f64, t: usize, seed: u64) -> Scenario {
    let p = model.regions.len();
    Scenario {
        true_rho: (0..p)
            .map(|i| (0..p).map(|j| if i == j { rho } else { 0.0 }).collect())
            .collect(),
        noise_sigma: vec![sigma; p],
        innovation_cov: None,
        t,
        seed,
        stationary_start: true,
        true_model: model,
    }
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
