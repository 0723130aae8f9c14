//! Zero-mean Gaussian process regression with a squared-exponential kernel or
//! an empirical block-covariance kernel for soft data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{sq_dist, LaggedDataset};
use crate::error::{Error, Result};
use crate::linalg::{spd_logdet_solve, sym_eigen_desc};

/// Relative diagonal jitter tried once when the Gram matrix is not positive definite.
pub const JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub length_scale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GpKernel {
    SquaredExponential { length_scale: f64, signal_var: f64 },
    /// `signal_var * (B'x)'(B'x') / d` with `B` the retained eigenvectors of the block covariance.
    Empirical { basis: Vec<Vec<f64>>, signal_var: f64 },
}

impl GpKernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            GpKernel::SquaredExponential {
                length_scale,
                signal_var,
            } => signal_var * (-sq_dist(a, b) / (2.0 * length_scale * length_scale)).exp(),
            GpKernel::Empirical { basis, signal_var } => {
                let d = a.len() as f64;
                let pa = project(basis, a);
                let pb = project(basis, b);
                signal_var * pa.iter().zip(&pb).map(|(x, y)| x * y).sum::<f64>() / d
            }
        }
    }

    fn gram(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let m = xs.len();
        if let GpKernel::Empirical { basis, signal_var } = self {
            let d = xs.first().map_or(1, |x| x.len()) as f64;
            let p = DMatrix::from_fn(m, basis.len(), |i, k| {
                basis[k].iter().zip(&xs[i]).map(|(a, b)| a * b).sum::<f64>()
            });
            return &p * p.transpose() * (*signal_var / d);
        }
        let mut k = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = self.eval(&xs[i], &xs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

/// `basis` is stored column-by-column: `basis[k]` is the `k`-th retained eigenvector.
fn project(basis: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    basis
        .iter()
        .map(|v| v.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub kernel: GpKernel,
    pub noise_var: f64,
    pub inputs: Vec<Vec<f64>>,
    /// `(K + noise I)^-1 y`
    pub alpha: Vec<f64>,
    pub log_marginal: f64,
    /// Empirical kernel only: `sum_i alpha_i B'x_i`, so a prediction is one projection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projected_weights: Option<Vec<f64>>,
}

impl GpModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        if let (GpKernel::Empirical { basis, signal_var }, Some(w)) = (&self.kernel, &self.projected_weights) {
            let px = project(basis, x);
            return signal_var * px.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / x.len() as f64;
        }
        self.inputs
            .iter()
            .zip(&self.alpha)
            .map(|(xi, a)| a * self.kernel.eval(xi, x))
            .sum()
    }
}

/// Conditional-mean weights and log marginal likelihood for a precomputed Gram matrix.
pub fn solve_gram(k: &DMatrix<f64>, y: &DVector<f64>, noise_var: f64) -> Result<(DVector<f64>, f64)> {
    let m = k.nrows();
    let a = k + DMatrix::<f64>::identity(m, m) * noise_var;
    let (logdet, alpha) = spd_logdet_solve(&a, y, JITTER)?;
    let lml = -0.5 * y.dot(&alpha) - 0.5 * logdet - 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok((alpha, lml))
}

fn inputs_of(train: &LaggedDataset) -> Vec<Vec<f64>> {
    (0..train.len()).map(|m| train.input(m)).collect()
}

fn finish(kernel: GpKernel, noise_var: f64, train: &LaggedDataset) -> Result<GpModel> {
    let xs = inputs_of(train);
    let k = kernel.gram(&xs);
    let (alpha, log_marginal) = solve_gram(&k, &train.targets, noise_var)?;
    let projected_weights = match &kernel {
        GpKernel::Empirical { basis, .. } => {
            let mut w = vec![0.0; basis.len()];
            for (xi, a) in xs.iter().zip(alpha.iter()) {
                for (wk, pk) in w.iter_mut().zip(project(basis, xi)) {
                    *wk += a * pk;
                }
            }
            Some(w)
        }
        GpKernel::SquaredExponential { .. } => None,
    };
    Ok(GpModel {
        projected_weights,
        kernel,
        noise_var,
        inputs: xs,
        alpha: alpha.iter().copied().collect(),
        log_marginal,
    })
}

pub fn fit(train: &LaggedDataset, hyper: GpHyper) -> Result<GpModel> {
    if !(hyper.length_scale > 0.0 && hyper.signal_var > 0.0 && hyper.noise_var >= 0.0) {
        return Err(Error::InvalidInput(format!("invalid GP hyperparameters {hyper:?}")));
    }
    finish(
        GpKernel::SquaredExponential {
            length_scale: hyper.length_scale,
            signal_var: hyper.signal_var,
        },
        hyper.noise_var,
        train,
    )
}

/// Noise-to-signal ratios searched by the marginal-likelihood grid.
const NOISE_RATIOS: [f64; 5] = [1e-6, 1e-4, 1e-3, 1e-2, 1e-1];

/// Grid search over a unit-signal Gram matrix and noise ratio; the signal variance is profiled out.
fn profile(unit_gram: &DMatrix<f64>, y: &DVector<f64>) -> Option<(f64, f64, f64)> {
    let m = y.len() as f64;
    let mut best: Option<(f64, f64, f64)> = None;
    for &r in &NOISE_RATIOS {
        let Ok((alpha, _)) = solve_gram(unit_gram, y, r) else {
            continue;
        };
        let quad = y.dot(&alpha);
        let sf2 = (quad / m).max(1e-12);
        let Ok((_, lml)) = solve_gram(&(unit_gram * sf2), y, r * sf2) else {
            continue;
        };
        if best.is_none_or(|b| lml > b.0) {
            best = Some((lml, sf2, r * sf2));
        }
    }
    best
}

fn median_distance(xs: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::new();
    for i in 0..xs.len() {
        for j in 0..i {
            let v = sq_dist(&xs[i], &xs[j]).sqrt();
            if v > 0.0 {
                d.push(v);
            }
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Squared-exponential GP with hyperparameters maximizing the log marginal likelihood on a grid.
pub fn fit_auto(train: &LaggedDataset) -> Result<GpModel> {
    let xs = inputs_of(train);
    let base = median_distance(&xs);
    let mut best: Option<(f64, GpHyper)> = None;
    for f in [0.25, 0.5, 1.0, 2.0, 4.0] {
        let ell = base * f;
        let unit = GpKernel::SquaredExponential {
            length_scale: ell,
            signal_var: 1.0,
        }
        .gram(&xs);
        if let Some((lml, sf2, sn2)) = profile(&unit, &train.targets) {
            if best.is_none_or(|b| lml > b.0) {
                best = Some((
                    lml,
                    GpHyper {
                        length_scale: ell,
                        signal_var: sf2,
                        noise_var: sn2,
                    },
                ));
            }
        }
    }
    let (_, hyper) = best.ok_or_else(|| Error::Numerical("no GP grid point gave a positive-definite Gram matrix".into()))?;
    fit(train, hyper)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftGpOptions {
    /// Number of eigenvectors kept; `None` keeps enough for `energy` of the trace.
    pub rank: Option<usize>,
    pub energy: f64,
}

impl Default for SoftGpOptions {
    fn default() -> Self {
        Self {
            rank: None,
            energy: 0.99,
        }
    }
}

/// Leading eigenvectors of the empirical block covariance `(1/M) sum x_m x_m'` of the lag vectors.
pub fn block_covariance_basis(train: &LaggedDataset, opts: &SoftGpOptions) -> Result<Vec<Vec<f64>>> {
    let m = train.len().max(1) as f64;
    let r = train.inputs.transpose() * &train.inputs / m;
    let (vals, vecs) = sym_eigen_desc(&r);
    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("block covariance of the lag vectors is zero".into()));
    }
    let keep = match opts.rank {
        Some(k) => k.clamp(1, vals.len()),
        None => {
            let mut acc = 0.0;
            let mut k = 0;
            while k < vals.len() && acc < opts.energy * total {
                acc += vals[k].max(0.0);
                k += 1;
            }
            k.max(1)
        }
    };
    Ok((0..keep).map(|k| vecs.column(k).iter().copied().collect()).collect())
}

/// GP on full-vector lag samples with the empirical block-covariance kernel.
pub fn soft_fit(train: &LaggedDataset, opts: &SoftGpOptions) -> Result<GpModel> {
    let basis = block_covariance_basis(train, opts)?;
    let xs = inputs_of(train);
    let unit = GpKernel::Empirical {
        basis: basis.clone(),
        signal_var: 1.0,
    }
    .gram(&xs);
    let (_, sf2, sn2) = profile(&unit, &train.targets)
        .ok_or_else(|| Error::Numerical("empirical-kernel Gram matrix not positive definite".into()))?;
    soft_fit_with(train, basis, sf2, sn2)
}

pub fn soft_fit_with(train: &LaggedDataset, basis: Vec<Vec<f64>>, signal_var: f64, noise_var: f64) -> Result<GpModel> {
    finish(GpKernel::Empirical { basis, signal_var }, noise_var, train)
}
