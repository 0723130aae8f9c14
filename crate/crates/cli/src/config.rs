//! Run configuration: one JSON file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stforecast::bootstrap::{CiMethod, ResampleUnit};
use stforecast::classical::EstimateMethod;
use stforecast::eval::CvConfig;
use stforecast::ml::ModelSpec;
use stforecast::panel::{CountSchema, DataMode, DEFAULT_LOG_FLOOR, DEFAULT_NODES};
use stforecast::{BetaPrior, Error, FrequencyRule, OptimizerOptions, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightingSpec {
    #[default]
    Identity,
    Gaussian {
        centroids: Vec<Vec<f64>>,
        bandwidth: f64,
    },
    /// Square CSV with region ids in the header row.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionSpec {
    pub candidates: Vec<usize>,
    pub threshold: f64,
}

impl Default for SelectionSpec {
    fn default() -> Self {
        Self {
            candidates: (1..=10).collect(),
            threshold: 1.14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    Shared { a: f64, b: f64, scale: f64 },
    /// Fit the shared shape to classical estimates on resampled transitions.
    Bootstrap { samples: usize, scale: f64 },
    Full(BetaPrior),
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::Shared {
            a: 14.0,
            b: 13.0,
            scale: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapStatistic {
    /// Spatial mean of each model's per-region SMAPE.
    Smape,
    /// Spatially averaged mean squared regression residual.
    Risk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSpec {
    #[serde(rename = "B")]
    pub b: usize,
    pub level: f64,
    pub methods: Vec<CiMethod>,
    pub unit: ResampleUnit,
    pub grid: usize,
    pub statistics: Vec<BootstrapStatistic>,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self {
            b: 1000,
            level: 0.95,
            methods: CiMethod::ALL.to_vec(),
            unit: ResampleUnit::Rows,
            grid: 512,
            statistics: vec![BootstrapStatistic::Smape, BootstrapStatistic::Risk],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub counts: Option<PathBuf>,
    pub schema: CountSchema,
    /// Log-risk panel; defaults to `<out>/panel_<mode>.csv`.
    pub panel: Option<PathBuf>,
    pub mode: DataMode,
    pub weighting: WeightingSpec,
    pub nodes: usize,
    pub log_floor: f64,
    /// Harmonic count; `None` selects it with `selection`.
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub selection: SelectionSpec,
    pub frequency_rule: FrequencyRule,
    pub pin_b1: bool,
    pub kt: Option<usize>,
    /// Subtract column means before estimating rho.
    pub center: bool,
    pub prior: PriorSpec,
    pub optimizer: OptimizerOptions,
    pub forecast_method: EstimateMethod,
    /// True trigonometric model, for reporting coefficient recovery.
    pub truth: Option<PathBuf>,
    pub cv: CvConfig,
    pub models: Option<Vec<ModelSpec>>,
    pub grid_search: bool,
    pub pipeline: bool,
    pub bootstrap: BootstrapSpec,
    pub scenario: Option<PathBuf>,
    pub start_date: String,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            counts: None,
            schema: CountSchema::default(),
            panel: None,
            mode: DataMode::Hard,
            weighting: WeightingSpec::Identity,
            nodes: DEFAULT_NODES,
            log_floor: DEFAULT_LOG_FLOOR,
            n: None,
            selection: SelectionSpec::default(),
            frequency_rule: FrequencyRule::default(),
            pin_b1: false,
            kt: None,
            center: false,
            prior: PriorSpec::default(),
            optimizer: OptimizerOptions::default(),
            forecast_method: EstimateMethod::Classical,
            truth: None,
            cv: CvConfig::default(),
            models: None,
            grid_search: false,
            pipeline: true,
            bootstrap: BootstrapSpec::default(),
            scenario: None,
            start_date: "2020-01-01".into(),
            seed: None,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    }

    pub fn require_seed(&self, command: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::InvalidInput(format!("`{command}` is stochastic and needs --seed or a config seed")))
    }

    pub fn require_file(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        let p = path
            .clone()
            .ok_or_else(|| Error::InvalidInput(format!("no {what} given in the config")))?;
        if !p.is_file() {
            return Err(Error::io(&p, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
        }
        Ok(p)
    }

    pub fn panel_path(&self, mode: DataMode) -> PathBuf {
        match &self.panel {
            Some(p) => p.clone(),
            None => self.out.join(format!("panel_{mode}.csv")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kt == Some(0) {
            return Err(Error::InvalidInput("kt must be at least 1".into()));
        }
        if self.n == Some(0) {
            return Err(Error::InvalidInput("N must be at least 1".into()));
        }
        if !(self.bootstrap.level > 0.0 && self.bootstrap.level < 1.0) {
            return Err(Error::InvalidInput("bootstrap level must lie in (0, 1)".into()));
        }
        self.cv.validate()?;
        Ok(())
    }
}
