#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Space-time forecasting of regional log-risk curves: trigonometric regression,
//! classical and Bayesian spatial AR(1) residual prediction, machine-learning
//! baselines, cross-validated SMAPE evaluation and bootstrap intervals.

pub mod bayes;
pub mod bootstrap;
pub mod classical;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod io;
pub mod linalg;
pub mod ml;
pub mod optimize;
pub mod panel;
pub mod rng;
pub mod spline;
pub mod synth;
pub mod trig;

pub use error::{Error, Result};

pub use bayes::{BayesFit, BetaPrior};
pub use bootstrap::{BootstrapResult, CiMethod, CiSet, ResampleUnit};
pub use classical::{AutocorrEstimate, CovariancePair, EstimateMethod, ResidualPanel};
pub use eval::{CvConfig, CvTarget, PipelineSpec, SmapeTable};
pub use forecast::Forecast;
pub use ml::{FittedModel, LaggedDataset, ModelKind, ModelParams, ModelSpec};
pub use optimize::OptimizerOptions;
pub use panel::{CountPanel, DataMode, LogRiskPanel, SpatialWeighting};
pub use synth::Scenario;
pub use trig::{FrequencyRule, SelectionReport, TrigModel};
