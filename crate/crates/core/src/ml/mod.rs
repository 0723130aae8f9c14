//! One-step-ahead regression baselines on lagged log-risk windows.

pub mod gp;
pub mod grnn;
pub mod mlp;
pub mod rbf;
pub mod svr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{DataMode, LogRiskPanel};

pub use gp::{GpHyper, GpModel, SoftGpOptions};
pub use grnn::GrnnModel;
pub use mlp::{BnnModel, MlpModel};
pub use rbf::RbfModel;
pub use svr::{SvrKernel, SvrModel};

/// Default number of temporal lags.
pub const DEFAULT_LAGS: usize = 5;

/// Supervised samples `x_m -> y_m` cut from one region's series.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedDataset {
    /// `M x d`; row `m` is `(v_t, v_{t-1}, ..., v_{t-j0+1})` (per region when built from full vectors).
    pub inputs: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub j0: usize,
    pub region: usize,
    /// Panel row of each target.
    pub target_rows: Vec<usize>,
}

impl LaggedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn input(&self, m: usize) -> Vec<f64> {
        self.inputs.row(m).iter().copied().collect()
    }

    /// Samples at the given positions, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let inputs = DMatrix::from_fn(idx.len(), self.dim(), |i, j| self.inputs[(idx[i], j)]);
        let targets = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.targets[i]));
        Self {
            inputs,
            targets,
            j0: self.j0,
            region: self.region,
            target_rows: idx.iter().map(|&i| self.target_rows[i]).collect(),
        }
    }

    /// Position of the sample whose target sits at panel row `row`.
    pub fn position_of(&self, row: usize) -> Option<usize> {
        self.target_rows.iter().position(|&r| r == row)
    }
}

fn check_lags(panel: &LogRiskPanel, region: usize, j0: usize) -> Result<()> {
    if j0 == 0 {
        return Err(Error::InvalidInput("at least one lag is required".into()));
    }
    if region >= panel.regions() {
        return Err(Error::InvalidInput(format!(
            "region {region} out of range for {} regions",
            panel.regions()
        )));
    }
    if panel.len() <= j0 {
        return Err(Error::InsufficientData(format!(
            "{} nodes cannot supply {j0} lags and a target",
            panel.len()
        )));
    }
    Ok(())
}

/// Pointwise windows of one region: `M = T - j0` samples.
pub fn build_lagged(panel: &LogRiskPanel, region: usize, j0: usize) -> Result<LaggedDataset> {
    check_lags(panel, region, j0)?;
    let t = panel.len();
    let m = t - j0;
    let v = panel.values.column(region);
    let inputs = DMatrix::from_fn(m, j0, |i, l| v[i + j0 - 1 - l]);
    let targets = DVector::from_iterator(m, (0..m).map(|i| v[i + j0]));
    Ok(LaggedDataset {
        inputs,
        targets,
        j0,
        region,
        target_rows: (j0..t).collect(),
    })
}

/// Windows of the full regional vector: input is `(Z_t, Z_{t-1}, ..., Z_{t-j0+1})` stacked lag by lag.
pub fn build_lagged_vector(panel: &LogRiskPanel, region: usize, j0: usize) -> Result<LaggedDataset> {
    check_lags(panel, region, j0)?;
    let t = panel.len();
    let p = panel.regions();
    let m = t - j0;
    let inputs = DMatrix::from_fn(m, j0 * p, |i, c| {
        let (l, q) = (c / p, c % p);
        panel.values[(i + j0 - 1 - l, q)]
    });
    let targets = DVector::from_iterator(m, (0..m).map(|i| panel.values[(i + j0, region)]));
    Ok(LaggedDataset {
        inputs,
        targets,
        j0,
        region,
        target_rows: (j0..t).collect(),
    })
}

/// Pointwise windows for hard panels, full-vector windows for soft panels.
pub fn build_for_mode(panel: &LogRiskPanel, region: usize, j0: usize) -> Result<LaggedDataset> {
    match panel.mode {
        DataMode::Hard => build_lagged(panel, region, j0),
        DataMode::Soft => build_lagged_vector(panel, region, j0),
    }
}

/// Column means and standard deviations used to standardize inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let m = x.nrows().max(1) as f64;
        let mean: Vec<f64> = x.column_iter().map(|c| c.sum() / m).collect();
        let scale = x
            .column_iter()
            .zip(&mean)
            .map(|(c, mu)| {
                let sd = (c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.scale[j])
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Hyperparameters of one baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams {
    Grnn {
        h: f64,
    },
    Rbf {
        beta: f64,
        #[serde(default = "default_rbf_tol")]
        tol: f64,
    },
    Svr {
        c: f64,
        epsilon: f64,
        #[serde(default)]
        kernel: SvrKernel,
    },
    Mlp {
        nh: usize,
    },
    Bnn {
        nh: usize,
    },
    Gp {
        /// Fixed hyperparameters; `None` selects them by marginal likelihood.
        #[serde(default)]
        hyper: Option<GpHyper>,
    },
}

fn default_rbf_tol() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Grnn,
    Mlp,
    Svr,
    Bnn,
    Rbf,
    Gp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Grnn,
        ModelKind::Mlp,
        ModelKind::Svr,
        ModelKind::Bnn,
        ModelKind::Rbf,
        ModelKind::Gp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Grnn => "GRNN",
            ModelKind::Mlp => "MLP",
            ModelKind::Svr => "SVR",
            ModelKind::Bnn => "BNN",
            ModelKind::Rbf => "RBF",
            ModelKind::Gp => "GP",
        }
    }

    /// Candidate grid used by hyperparameter search.
    pub fn default_grid(self) -> Vec<ModelParams> {
        match self {
            ModelKind::Grnn => [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
                .iter()
                .map(|&h| ModelParams::Grnn { h })
                .collect(),
            ModelKind::Rbf => [2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 17.5, 20.0]
                .iter()
                .map(|&beta| ModelParams::Rbf {
                    beta,
                    tol: default_rbf_tol(),
                })
                .collect(),
            ModelKind::Mlp => [0, 1, 3, 5, 7, 9]
                .iter()
                .map(|&nh| ModelParams::Mlp { nh })
                .collect(),
            ModelKind::Bnn => [1, 3, 5, 7, 9]
                .iter()
                .map(|&nh| ModelParams::Bnn { nh })
                .collect(),
            ModelKind::Svr => [0.1, 1.0, 10.0]
                .iter()
                .map(|&c| ModelParams::Svr {
                    c,
                    epsilon: 0.01,
                    kernel: SvrKernel::Linear,
                })
                .collect(),
            ModelKind::Gp => vec![ModelParams::Gp { hyper: None }],
        }
    }
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Grnn { .. } => ModelKind::Grnn,
            ModelParams::Rbf { .. } => ModelKind::Rbf,
            ModelParams::Svr { .. } => ModelKind::Svr,
            ModelParams::Mlp { .. } => ModelKind::Mlp,
            ModelParams::Bnn { .. } => ModelKind::Bnn,
            ModelParams::Gp { .. } => ModelKind::Gp,
        }
    }

    /// Ordering key for ties: smaller is simpler (fewer nodes, larger bandwidth or spread, smaller penalty).
    pub fn complexity(&self) -> f64 {
        match self {
            ModelParams::Grnn { h } => -h,
            ModelParams::Rbf { beta, .. } => -beta,
            ModelParams::Svr { c, epsilon, .. } => c - epsilon,
            ModelParams::Mlp { nh } | ModelParams::Bnn { nh } => *nh as f64,
            ModelParams::Gp { .. } => 0.0,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelParams::Grnn { h } => format!("h={h}"),
            ModelParams::Rbf { beta, .. } => format!("beta={beta}"),
            ModelParams::Svr { c, epsilon, kernel } => match kernel {
                SvrKernel::Linear => format!("C={c};eps={epsilon}"),
                SvrKernel::Gaussian { gamma } => format!("C={c};eps={epsilon};gamma={gamma}"),
            },
            ModelParams::Mlp { nh } | ModelParams::Bnn { nh } => format!("NH={nh}"),
            ModelParams::Gp { hyper: None } => "ml-grid".into(),
            ModelParams::Gp { hyper: Some(h) } => format!(
                "ell={};sf2={};sn2={}",
                h.length_scale, h.signal_var, h.noise_var
            ),
        }
    }
}

/// A baseline's hyperparameters plus the seed for its stochastic parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub params: ModelParams,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(params: ModelParams, seed: u64) -> Self {
        Self { params, seed }
    }
}

/// Fitted baseline, serializable as a weight dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FittedModel {
    Grnn(GrnnModel),
    Rbf(RbfModel),
    Svr(SvrModel),
    Mlp(MlpModel),
    Bnn(BnnModel),
    Gp(GpModel),
}

impl FittedModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            FittedModel::Grnn(m) => m.predict(x),
            FittedModel::Rbf(m) => m.predict(x),
            FittedModel::Svr(m) => m.predict(x),
            FittedModel::Mlp(m) => m.predict(x),
            FittedModel::Bnn(m) => m.predict(x),
            FittedModel::Gp(m) => m.predict(x),
        }
    }
}

/// Fits the baseline described by `spec` on `train`.
pub fn fit_model(spec: &ModelSpec, train: &LaggedDataset) -> Result<FittedModel> {
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    Ok(match &spec.params {
        ModelParams::Grnn { h } => FittedModel::Grnn(grnn::fit(train, *h)?),
        ModelParams::Rbf { beta, tol } => FittedModel::Rbf(rbf::fit(train, *beta, *tol)?),
        ModelParams::Svr { c, epsilon, kernel } => {
            FittedModel::Svr(svr::fit(train, *c, *epsilon, *kernel, &svr::SvrOptions::default())?)
        }
        ModelParams::Mlp { nh } => {
            FittedModel::Mlp(mlp::mlp_fit(train, *nh, spec.seed, &mlp::TrainOptions::default())?)
        }
        ModelParams::Bnn { nh } => {
            FittedModel::Bnn(mlp::bnn_fit(train, *nh, spec.seed, &mlp::TrainOptions::default())?)
        }
        ModelParams::Gp { hyper } => FittedModel::Gp(match hyper {
            Some(h) => gp::fit(train, *h)?,
            None => gp::fit_auto(train)?,
        }),
    })
}

/// As [`fit_model`]; in soft mode a GP without fixed hyperparameters uses the empirical block-covariance kernel.
pub fn fit_model_for(spec: &ModelSpec, train: &LaggedDataset, mode: DataMode) -> Result<FittedModel> {
    match (&spec.params, mode) {
        (ModelParams::Gp { hyper: None }, DataMode::Soft) => {
            if train.is_empty() {
                return Err(Error::InsufficientData("empty training set".into()));
            }
            Ok(FittedModel::Gp(gp::soft_fit(train, &SoftGpOptions::default())?))
        }
        _ => fit_model(spec, train),
    }
}
