//! Posterior-mode estimation of the autocorrelation rows under scaled Beta
//! priors, and the Bayesian residual predictor.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::classical::{covariances_from_pairs, estimate_rho, ResidualPanel};
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{lstsq, matrix_to_rows, rows_to_matrix};
use crate::optimize::{maximize, OpenBox, OptimizerOptions, TraceEntry};
use crate::rng::stream;

/// Floor applied to the per-region residual scale.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Independent Beta priors on `rho[p][q] / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub scale: f64,
}

impl BetaPrior {
    pub fn shared(p: usize, a: f64, b: f64, scale: f64) -> Self {
        Self {
            a: vec![vec![a; p]; p],
            b: vec![vec![b; p]; p],
            scale,
        }
    }

    /// Shape 14/13 on `(0, 1/3)`.
    pub fn default_for(p: usize) -> Self {
        Self::shared(p, 14.0, 13.0, 1.0 / 3.0)
    }

    pub fn size(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.a.len() != p
            || self.b.len() != p
            || self.a.iter().chain(&self.b).any(|r| r.len() != p)
        {
            return Err(Error::DimensionMismatch(format!(
                "prior shape does not match {p} regions"
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "prior scale must be positive, got {}",
                self.scale
            )));
        }
        if self
            .a
            .iter()
            .chain(&self.b)
            .flatten()
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidInput("prior shapes must be positive".into()));
        }
        Ok(())
    }
}

/// Sufficient statistics of region `p`'s one-step regression on the lagged panel.
#[derive(Debug, Clone)]
pub struct RowData {
    /// `sum_t e_{t-1} e_{t-1}'`
    pub gram: DMatrix<f64>,
    /// `sum_t e_t(p) e_{t-1}`
    pub cross: DVector<f64>,
    /// `sum_t e_t(p)^2`
    pub energy: f64,
    /// Number of transitions.
    pub count: usize,
}

impl RowData {
    pub fn new(res: &ResidualPanel, p: usize) -> Result<Self> {
        let t = res.len();
        if t < 2 {
            return Err(Error::InsufficientData(format!(
                "posterior needs at least 2 nodes, got {t}"
            )));
        }
        if p >= res.regions() {
            return Err(Error::InvalidInput(format!(
                "region index {p} out of range for {} regions",
                res.regions()
            )));
        }
        let head = res.values.rows(0, t - 1);
        let target = res.values.view((1, p), (t - 1, 1));
        Ok(Self {
            gram: head.transpose() * head,
            cross: (head.transpose() * target).column(0).into_owned(),
            energy: target.norm_squared(),
            count: t - 1,
        })
    }

    /// Statistics from explicit transition pairs `(prev[k], next[k])`.
    pub fn from_pairs(prev: &DMatrix<f64>, next: &DMatrix<f64>, p: usize) -> Result<Self> {
        if prev.shape() != next.shape() || p >= prev.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "region {p} with {}x{} and {}x{} pair matrices",
                prev.nrows(),
                prev.ncols(),
                next.nrows(),
                next.ncols()
            )));
        }
        if prev.nrows() == 0 {
            return Err(Error::InsufficientData("no transition pairs".into()));
        }
        let target = next.column(p);
        Ok(Self {
            gram: prev.transpose() * prev,
            cross: prev.transpose() * target,
            energy: target.norm_squared(),
            count: prev.nrows(),
        })
    }

    fn sse(&self, rho: &DVector<f64>) -> f64 {
        let v = self.energy - 2.0 * rho.dot(&self.cross) + rho.dot(&(&self.gram * rho));
        v.max(0.0)
    }

    /// Unconstrained least-squares AR row.
    pub fn least_squares(&self) -> Result<DVector<f64>> {
        lstsq(&self.gram, &self.cross)
    }
}

/// Log posterior of one row (up to the evidence), `-inf` outside `(0, s)^P`.
pub fn log_posterior_row(
    rho_row: &[f64],
    data: &RowData,
    p: usize,
    prior: &BetaPrior,
    sigma_p: f64,
) -> f64 {
    let s = prior.scale;
    if rho_row.iter().any(|&r| !(r > 0.0 && r < s)) {
        return f64::NEG_INFINITY;
    }
    let rho = DVector::from_column_slice(rho_row);
    let n = data.count as f64;
    let loglik = -n * (sigma_p * (2.0 * std::f64::consts::PI).sqrt()).ln()
        - data.sse(&rho) / (2.0 * sigma_p * sigma_p);
    let logprior: f64 = rho_row
        .iter()
        .enumerate()
        .map(|(q, &r)| {
            let (a, b) = (prior.a[p][q], prior.b[p][q]);
            let z = r / s;
            (a - 1.0) * z.ln() + (b - 1.0) * (1.0 - z).ln() - (s.ln() + ln_beta(a, b))
        })
        .sum();
    loglik + logprior
}

/// Convenience wrapper building the sufficient statistics on the fly.
pub fn log_posterior(
    rho_row: &[f64],
    res: &ResidualPanel,
    p: usize,
    prior: &BetaPrior,
    sigma_p: f64,
) -> Result<f64> {
    prior.validate(res.regions())?;
    if rho_row.len() != res.regions() {
        return Err(Error::DimensionMismatch(format!(
            "row of length {} for {} regions",
            rho_row.len(),
            res.regions()
        )));
    }
    if !(sigma_p > 0.0) {
        return Err(Error::InvalidInput("sigma must be positive".into()));
    }
    let data = RowData::new(res, p)?;
    Ok(log_posterior_row(rho_row, &data, p, prior, sigma_p))
}

/// Analytic gradient of [`log_posterior_row`] with respect to the row.
pub fn log_posterior_gradient(
    rho_row: &[f64],
    data: &RowData,
    p: usize,
    prior: &BetaPrior,
    sigma_p: f64,
) -> Vec<f64> {
    let s = prior.scale;
    let rho = DVector::from_column_slice(rho_row);
    let data_grad = (&data.cross - &data.gram * &rho) / (sigma_p * sigma_p);
    rho_row
        .iter()
        .enumerate()
        .map(|(q, &r)| {
            let (a, b) = (prior.a[p][q], prior.b[p][q]);
            data_grad[q] + (a - 1.0) / r - (b - 1.0) / (s - r)
        })
        .collect()
}

/// Method-of-moments Beta fit of bootstrap autocorrelation samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSuggestion {
    pub a: f64,
    pub b: f64,
    pub scale: f64,
    /// Per-entry `(a, b)`, `None` where an entry's samples are degenerate.
    pub per_entry: Vec<Option<(f64, f64)>>,
    /// Fraction of samples that had to be clipped into `(0, s)`.
    pub clipped_fraction: f64,
}

impl PriorSuggestion {
    pub fn shared_prior(&self, p: usize) -> BetaPrior {
        BetaPrior::shared(p, self.a, self.b, self.scale)
    }
}

fn beta_moments(z: &[f64]) -> Result<(f64, f64)> {
    let n = z.len() as f64;
    let (lo, hi) = z
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if lo == hi {
        return Err(Error::Degenerate("bootstrap samples have zero variance".into()));
    }
    let m = z.iter().sum::<f64>() / n;
    let v = z.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    if !(v > 0.0) {
        return Err(Error::Degenerate("bootstrap samples have zero variance".into()));
    }
    let common = m * (1.0 - m) / v - 1.0;
    if !(common > 0.0) {
        return Err(Error::Degenerate(format!(
            "variance {v:.3e} too large for a Beta law with mean {m:.4}"
        )));
    }
    Ok((m * common, (1.0 - m) * common))
}

/// `samples` is `B x (P*P)`; each row a flattened autocorrelation matrix.
pub fn fit_prior_from_bootstrap(samples: &[Vec<f64>], scale: f64) -> Result<PriorSuggestion> {
    if samples.len() < 30 {
        return Err(Error::InsufficientData(format!(
            "prior fit needs at least 30 bootstrap samples, got {}",
            samples.len()
        )));
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidInput("prior scale must be positive".into()));
    }
    let width = samples[0].len();
    if width == 0 || samples.iter().any(|r| r.len() != width) {
        return Err(Error::DimensionMismatch("ragged bootstrap samples".into()));
    }
    let eps = 1e-6;
    let mut clipped = 0usize;
    let rescaled: Vec<Vec<f64>> = samples
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| {
                    let z = v / scale;
                    if !(z > eps && z < 1.0 - eps) {
                        clipped += 1;
                    }
                    z.clamp(eps, 1.0 - eps)
                })
                .collect()
        })
        .collect();
    let pooled: Vec<f64> = rescaled.iter().flatten().copied().collect();
    let (a, b) = beta_moments(&pooled)?;
    let per_entry = (0..width)
        .map(|j| {
            let col: Vec<f64> = rescaled.iter().map(|r| r[j]).collect();
            beta_moments(&col).ok()
        })
        .collect();
    Ok(PriorSuggestion {
        a,
        b,
        scale,
        per_entry,
        clipped_fraction: clipped as f64 / pooled.len() as f64,
    })
}

/// Classical estimates on `n_samples` resamples of the transition pairs `(Y_{t-1}, Y_t)`.
pub fn bootstrap_rho_samples(
    res: &ResidualPanel,
    kt: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let t = res.len();
    if t < 3 {
        return Err(Error::InsufficientData(format!(
            "bootstrap of transitions needs at least 3 nodes, got {t}"
        )));
    }
    let p = res.regions();
    (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[i as u64]);
            let mut prev = DMatrix::zeros(t - 1, p);
            let mut next = DMatrix::zeros(t - 1, p);
            for k in 0..(t - 1) {
                let s = rng.random_range(1..t);
                prev.set_row(k, &res.values.row(s - 1));
                next.set_row(k, &res.values.row(s));
            }
            let cov = covariances_from_pairs(&prev, &next)?;
            let k = kt.min(cov.usable_rank()).max(1);
            let est = estimate_rho(&cov, k)?;
            Ok(est.rho.transpose().iter().copied().collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesFit {
    pub rho: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub objective: Vec<f64>,
    pub prior: BetaPrior,
    pub seed: u64,
    #[serde(skip)]
    pub trace: Vec<Vec<TraceEntry>>,
}

impl BayesFit {
    pub fn rho_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.rho).expect("rho rows share a length")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    /// One CSV per region: iteration, phase, best objective.
    pub fn write_traces(&self, dir: &Path, region_ids: &[String]) -> Result<()> {
        for (trace, id) in self.trace.iter().zip(region_ids) {
            let rows: Vec<Vec<String>> = trace
                .iter()
                .map(|e| {
                    vec![
                        e.iteration.to_string(),
                        e.phase.as_str().to_string(),
                        io::fmt_sig(e.best),
                    ]
                })
                .collect();
            io::write_rows(
                &dir.join(format!("trace_{id}.csv")),
                &["iteration".into(), "phase".into(), "best_objective".into()],
                &rows,
            )?;
        }
        Ok(())
    }
}

/// Maximizes each row's log posterior independently; region `p` draws from stream `(seed, p)`.
pub fn optimize_posterior(
    res: &ResidualPanel,
    prior: &BetaPrior,
    opts: &OptimizerOptions,
    seed: u64,
) -> Result<BayesFit> {
    let p = res.regions();
    prior.validate(p)?;
    if res.len() < p + 2 {
        return Err(Error::InsufficientData(format!(
            "posterior mode needs T >= P + 2 = {}, got {}",
            p + 2,
            res.len()
        )));
    }
    let sigma: Vec<f64> = res.rms().into_iter().map(|s| s.max(SIGMA_FLOOR)).collect();
    let data: Vec<RowData> = (0..p).map(|r| RowData::new(res, r)).collect::<Result<_>>()?;
    optimize_rows(&data, sigma, prior, opts, seed)
}

/// Posterior mode from explicit transition pairs; `sigma` is the RMS of `next`.
pub fn optimize_posterior_pairs(
    prev: &DMatrix<f64>,
    next: &DMatrix<f64>,
    prior: &BetaPrior,
    opts: &OptimizerOptions,
    seed: u64,
) -> Result<BayesFit> {
    let p = prev.ncols();
    prior.validate(p)?;
    if prev.nrows() < p + 1 {
        return Err(Error::InsufficientData(format!(
            "posterior mode needs at least {} transition pairs, got {}",
            p + 1,
            prev.nrows()
        )));
    }
    let n = next.nrows() as f64;
    let sigma: Vec<f64> = (0..p)
        .map(|q| (next.column(q).norm_squared() / n).sqrt().max(SIGMA_FLOOR))
        .collect();
    let data: Vec<RowData> = (0..p)
        .map(|r| RowData::from_pairs(prev, next, r))
        .collect::<Result<_>>()?;
    optimize_rows(&data, sigma, prior, opts, seed)
}

fn optimize_rows(
    data: &[RowData],
    sigma: Vec<f64>,
    prior: &BetaPrior,
    opts: &OptimizerOptions,
    seed: u64,
) -> Result<BayesFit> {
    let p = data.len();
    let s = prior.scale;
    let rows: Vec<(Vec<f64>, f64, Vec<TraceEntry>)> = (0..p)
        .into_par_iter()
        .map(|r| {
            let data = &data[r];
            let sig = sigma[r];
            let objective = |x: &[f64]| log_posterior_row(x, data, r, prior, sig);
            let mut seeds = vec![vec![s / 2.0; p]];
            let modes: Vec<f64> = (0..p)
                .map(|q| {
                    let (a, b) = (prior.a[r][q], prior.b[r][q]);
                    if a > 1.0 && b > 1.0 {
                        s * (a - 1.0) / (a + b - 2.0)
                    } else {
                        s / 2.0
                    }
                })
                .collect();
            seeds.push(modes);
            if let Ok(ls) = data.least_squares() {
                seeds.push(ls.iter().copied().collect());
            }
            let mut rng = stream(seed, &[r as u64]);
            let m = maximize(objective, p, OpenBox { lo: 0.0, hi: s }, &seeds, opts, &mut rng)?;
            Ok((m.x, m.value, m.trace))
        })
        .collect::<Result<_>>()?;
    let mut rho = Vec::with_capacity(p);
    let mut objective = Vec::with_capacity(p);
    let mut trace = Vec::with_capacity(p);
    for (x, v, tr) in rows {
        rho.push(x);
        objective.push(v);
        trace.push(tr);
    }
    Ok(BayesFit {
        rho,
        sigma,
        objective,
        prior: prior.clone(),
        seed,
        trace,
    })
}

/// `e_t = rho e_{t-1}`; same node convention as the classical plug-in predictor.
pub fn bayes_predict(fit: &BayesFit, res: &ResidualPanel, t: usize) -> Result<DVector<f64>> {
    crate::classical::plugin_predict(&fit.rho_matrix(), res, t)
}

pub fn rho_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    matrix_to_rows(m)
}
