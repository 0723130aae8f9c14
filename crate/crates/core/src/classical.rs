//! Regression residuals, empirical lag-0/lag-1 covariances and the truncated
//! autocorrelation estimate with its plug-in predictor.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::linalg::sym_eigen_desc;
use crate::panel::LogRiskPanel;
use crate::trig::{regression_times, TrigModel};

/// Eigenvalues at or below this fraction of the largest are treated as zero.
pub const PINV_THRESHOLD: f64 = 1e-12;

/// `Y_t(p) = observed - fitted`, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPanel {
    pub node_times: Vec<f64>,
    pub region_ids: Vec<String>,
    pub values: DMatrix<f64>,
}

impl ResidualPanel {
    pub fn new(node_times: Vec<f64>, region_ids: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != node_times.len() || values.ncols() != region_ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "residual values {}x{} vs {} nodes and {} regions",
                values.nrows(),
                values.ncols(),
                node_times.len(),
                region_ids.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("residuals contain non-finite values".into()));
        }
        Ok(Self {
            node_times,
            region_ids,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn regions(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let t = self.len().max(1) as f64;
        self.values.column_iter().map(|c| c.sum() / t).collect()
    }

    /// Copy with each column's mean removed.
    pub fn centered(&self) -> Self {
        let means = self.column_means();
        let mut values = self.values.clone();
        for (p, mut col) in values.column_iter_mut().enumerate() {
            col.add_scalar_mut(-means[p]);
        }
        Self {
            node_times: self.node_times.clone(),
            region_ids: self.region_ids.clone(),
            values,
        }
    }

    /// Root mean square of each region's residuals.
    pub fn rms(&self) -> Vec<f64> {
        let t = self.len().max(1) as f64;
        self.values
            .column_iter()
            .map(|c| (c.norm_squared() / t).sqrt())
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_time_table(path, &self.node_times, &self.region_ids, &self.values)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (times, ids, values) = io::read_time_table(path)?;
        Self::new(times, ids, values)
    }
}

/// Panel minus the regression mean evaluated on the node-index axis.
pub fn residuals(panel: &LogRiskPanel, model: &TrigModel) -> Result<ResidualPanel> {
    if model.t_fit != panel.len() || model.regions != panel.region_ids {
        return Err(Error::DimensionMismatch(format!(
            "model fitted on {} nodes x {} regions, panel has {} x {}",
            model.t_fit,
            model.regions.len(),
            panel.len(),
            panel.regions()
        )));
    }
    let fitted = model.predict(&regression_times(panel.len()));
    ResidualPanel::new(
        panel.node_times.clone(),
        panel.region_ids.clone(),
        &panel.values - fitted,
    )
}

/// Lag-0 and lag-1 empirical covariances with the spectrum of the lag-0 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair {
    pub r0: DMatrix<f64>,
    pub r1: DMatrix<f64>,
    pub eigvals: DVector<f64>,
    pub eigvecs: DMatrix<f64>,
}

impl CovariancePair {
    /// Number of eigenvalues above the pseudo-inverse threshold.
    pub fn usable_rank(&self) -> usize {
        let lmax = self.eigvals.iter().copied().fold(0.0, f64::max);
        if lmax <= 0.0 {
            return 0;
        }
        self.eigvals
            .iter()
            .take_while(|&&l| l > PINV_THRESHOLD * lmax)
            .count()
    }

    pub fn write_csv(&self, dir: &Path, region_ids: &[String]) -> Result<()> {
        io::write_labeled_matrix(&dir.join("R0.csv"), region_ids, &self.r0)?;
        io::write_labeled_matrix(&dir.join("R1.csv"), region_ids, &self.r1)?;
        let rows: Vec<Vec<String>> = self
            .eigvals
            .iter()
            .enumerate()
            .map(|(i, l)| vec![(i + 1).to_string(), io::fmt_sig(*l)])
            .collect();
        io::write_rows(
            &dir.join("eigenvalues.csv"),
            &["index".into(), "eigenvalue".into()],
            &rows,
        )
    }
}

/// `R0 = (1/T) sum Y_t Y_t'` and `R1[p][q] = (1/(T-1)) sum Y_{t+1}(p) Y_t(q)`, uncentered.
pub fn empirical_covariances(res: &ResidualPanel) -> Result<CovariancePair> {
    covariances_of(&res.values)
}

pub(crate) fn covariances_of(y: &DMatrix<f64>) -> Result<CovariancePair> {
    let t = y.nrows();
    if t < 2 {
        return Err(Error::InsufficientData(format!(
            "lag-1 covariance needs at least 2 nodes, got {t}"
        )));
    }
    let mut r0 = y.transpose() * y / t as f64;
    r0 = (&r0 + r0.transpose()) * 0.5;
    let head = y.rows(0, t - 1);
    let tail = y.rows(1, t - 1);
    let r1 = tail.transpose() * head / (t - 1) as f64;
    let (eigvals, eigvecs) = sym_eigen_desc(&r0);
    Ok(CovariancePair {
        r0,
        r1,
        eigvals,
        eigvecs,
    })
}

/// Covariances from explicit transition pairs: row `k` of `next` follows row `k` of `prev`.
pub fn covariances_from_pairs(prev: &DMatrix<f64>, next: &DMatrix<f64>) -> Result<CovariancePair> {
    if prev.shape() != next.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} previous rows against {}x{} next rows",
            prev.nrows(),
            prev.ncols(),
            next.nrows(),
            next.ncols()
        )));
    }
    let n = prev.nrows();
    if n == 0 {
        return Err(Error::InsufficientData("no transition pairs".into()));
    }
    let mut r0 = prev.transpose() * prev / n as f64;
    r0 = (&r0 + r0.transpose()) * 0.5;
    let r1 = next.transpose() * prev / n as f64;
    let (eigvals, eigvecs) = sym_eigen_desc(&r0);
    Ok(CovariancePair {
        r0,
        r1,
        eigvals,
        eigvecs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateMethod {
    Classical,
    Bayesian,
}

/// Spatial autocorrelation matrix acting on the previous residual vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrEstimate {
    pub rho: DMatrix<f64>,
    pub kt: usize,
    pub method: EstimateMethod,
}

impl AutocorrEstimate {
    pub fn write_csv(&self, path: &Path, region_ids: &[String]) -> Result<()> {
        io::write_labeled_matrix(path, region_ids, &self.rho)
    }
}

/// `floor(ln T)`, at least 1.
pub fn default_truncation(len: usize) -> usize {
    ((len.max(1) as f64).ln().floor() as usize).max(1)
}

/// `rho = Pi_k R1 R0^+_k` on the span of the top `kt` eigenvectors of `R0`.
pub fn estimate_rho(cov: &CovariancePair, kt: usize) -> Result<AutocorrEstimate> {
    let p = cov.r0.nrows();
    if kt == 0 || kt > p {
        return Err(Error::InvalidInput(format!(
            "truncation order must lie in [1, {p}], got {kt}"
        )));
    }
    let usable = cov.usable_rank();
    if usable < kt {
        return Err(Error::IllConditioned {
            usable_rank: usable,
            requested: kt,
        });
    }
    let basis = cov.eigvecs.columns(0, kt);
    let inv_vals = DMatrix::from_diagonal(&cov.eigvals.rows(0, kt).map(|l| 1.0 / l));
    let pinv = basis * inv_vals * basis.transpose();
    let proj = basis * basis.transpose();
    let rho = proj * &cov.r1 * pinv;
    Ok(AutocorrEstimate {
        rho,
        kt,
        method: EstimateMethod::Classical,
    })
}

/// `Y_hat_t = rho Y_{t-1}` with `t` counted from 1; `t = T + 1` forecasts past the sample.
pub fn plugin_predict(rho: &DMatrix<f64>, res: &ResidualPanel, t: usize) -> Result<DVector<f64>> {
    if t < 2 || t > res.len() + 1 {
        return Err(Error::InvalidInput(format!(
            "prediction node {t} outside [2, {}]",
            res.len() + 1
        )));
    }
    if rho.nrows() != res.regions() || rho.ncols() != res.regions() {
        return Err(Error::DimensionMismatch(format!(
            "rho is {}x{} for {} regions",
            rho.nrows(),
            rho.ncols(),
            res.regions()
        )));
    }
    let prev = res.values.row(t - 2).transpose();
    Ok(rho * prev)
}

/// One-step predictions for nodes `2..=T` stacked as rows, preceded by a zero row for node 1.
pub fn one_step_predictions(rho: &DMatrix<f64>, res: &ResidualPanel) -> Result<DMatrix<f64>> {
    let t = res.len();
    let mut out = DMatrix::zeros(t, res.regions());
    for i in 2..=t {
        let y = plugin_predict(rho, res, i)?;
        out.set_row(i - 1, &y.transpose());
    }
    Ok(out)
}

/// Fraction of entries of `rho` outside the open interval `(0, s)`.
pub fn fraction_outside(rho: &DMatrix<f64>, s: f64) -> f64 {
    let n = rho.len().max(1) as f64;
    rho.iter().filter(|&&v| !(v > 0.0 && v < s)).count() as f64 / n
}
