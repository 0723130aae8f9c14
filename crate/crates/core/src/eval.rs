//! SMAPE scoring, repeated random k-fold cross-validation, grid search and
//! comparison tables.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{optimize_posterior_pairs, BetaPrior};
use crate::classical::{covariances_from_pairs, default_truncation, estimate_rho, EstimateMethod};
use crate::error::{Error, Result};
use crate::io;
use crate::ml::{build_for_mode, fit_model_for, LaggedDataset, ModelParams, ModelSpec};
use crate::optimize::OptimizerOptions;
use crate::panel::{DataMode, LogRiskPanel};
use crate::rng::{derive_seed, stream};
use crate::trig::{design_matrix, fit_at, regression_times, selection_ratio, FrequencyRule};

/// Symmetric mean absolute percentage error; a term with both values zero counts as 0.
pub fn smape(obs: &[f64], pred: &[f64]) -> Result<f64> {
    if obs.len() != pred.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations against {} predictions",
            obs.len(),
            pred.len()
        )));
    }
    if obs.is_empty() {
        return Err(Error::InsufficientData("SMAPE of an empty series".into()));
    }
    let sum: f64 = obs
        .iter()
        .zip(pred)
        .map(|(o, p)| {
            let den = (o.abs() + p.abs()) / 2.0;
            if den == 0.0 {
                0.0
            } else {
                (p - o).abs() / den
            }
        })
        .sum();
    Ok(sum / obs.len() as f64)
}

/// Per-region SMAPEs of one model with the mean (M.) and total (T.) rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmapeTable {
    pub model: String,
    pub mode: DataMode,
    pub region_ids: Vec<String>,
    pub rows: Vec<f64>,
    pub mean: f64,
    pub total: f64,
}

impl SmapeTable {
    pub fn new(model: impl Into<String>, mode: DataMode, region_ids: Vec<String>, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != region_ids.len() || rows.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} SMAPE rows for {} regions",
                rows.len(),
                region_ids.len()
            )));
        }
        let total: f64 = rows.iter().sum();
        Ok(Self {
            model: model.into(),
            mode,
            mean: total / rows.len() as f64,
            total,
            region_ids,
            rows,
        })
    }

    /// Columns `region,smape`, closed by `M.` and `T.`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_tables_csv(path, std::slice::from_ref(self))
    }
}

/// Wide table: one column per model, one row per region, then `M.` and `T.`.
pub fn write_tables_csv(path: &Path, tables: &[SmapeTable]) -> Result<()> {
    let first = tables
        .first()
        .ok_or_else(|| Error::InvalidInput("no tables to write".into()))?;
    check_aligned(tables)?;
    let mut header = vec!["region".to_string()];
    header.extend(tables.iter().map(|t| t.model.clone()));
    let mut rows = Vec::with_capacity(first.rows.len() + 2);
    for (i, id) in first.region_ids.iter().enumerate() {
        let mut r = vec![id.clone()];
        r.extend(tables.iter().map(|t| io::fmt_sig(t.rows[i])));
        rows.push(r);
    }
    let mut m = vec!["M.".to_string()];
    m.extend(tables.iter().map(|t| io::fmt_sig(t.mean)));
    rows.push(m);
    let mut tt = vec!["T.".to_string()];
    tt.extend(tables.iter().map(|t| io::fmt_sig(t.total)));
    rows.push(tt);
    io::write_rows(path, &header, &rows)
}

fn check_aligned(tables: &[SmapeTable]) -> Result<()> {
    let first = &tables[0];
    if tables.iter().any(|t| t.region_ids != first.region_ids) {
        return Err(Error::DimensionMismatch("tables cover different regions".into()));
    }
    Ok(())
}

const SUPERSCRIPTS: [char; 10] = ['⁰', '¹', '²', '³', '⁴', '⁵', '⁶', '⁷', '⁸', '⁹'];

/// `0.1957×10⁻²` style: four-digit mantissa in `[0.1, 1)`.
pub fn table_format(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mut e = x.abs().log10().floor() as i32 + 1;
    let mut mant = x / 10f64.powi(e);
    if format!("{:.4}", mant.abs()) == "1.0000" {
        e += 1;
        mant = x / 10f64.powi(e);
    }
    let m = format!("{mant:.4}");
    if e == 0 {
        return m;
    }
    let mut exp = String::new();
    if e < 0 {
        exp.push('⁻');
    }
    for d in e.unsigned_abs().to_string().bytes() {
        exp.push(SUPERSCRIPTS[(d - b'0') as usize]);
    }
    format!("{m}×10{exp}")
}

/// Aligned plain-text rendering of side-by-side tables.
pub fn render_tables(tables: &[SmapeTable]) -> Result<String> {
    let first = tables
        .first()
        .ok_or_else(|| Error::InvalidInput("no tables to render".into()))?;
    check_aligned(tables)?;
    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut head = vec![String::new()];
    head.extend(tables.iter().map(|t| t.model.clone()));
    grid.push(head);
    for (i, id) in first.region_ids.iter().enumerate() {
        let mut r = vec![id.clone()];
        r.extend(tables.iter().map(|t| table_format(t.rows[i])));
        grid.push(r);
    }
    let mut m = vec!["M.".to_string()];
    m.extend(tables.iter().map(|t| table_format(t.mean)));
    grid.push(m);
    let mut tt = vec!["T.".to_string()];
    tt.extend(tables.iter().map(|t| table_format(t.total)));
    grid.push(tt);
    let ncol = grid[0].len();
    let widths: Vec<usize> = (0..ncol)
        .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &grid {
        let mut line = String::new();
        for (c, cell) in r.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                line.push_str(cell);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str("  ");
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
    Ok(out)
}

/// Trigonometric regression plus classical or Bayesian residual prediction, scored as one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub method: EstimateMethod,
    #[serde(rename = "N", default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub rule: FrequencyRule,
    #[serde(default)]
    pub pin_b1: bool,
    /// Truncation order; `None` uses `floor(ln T)` capped at `P`.
    #[serde(default)]
    pub kt: Option<usize>,
    /// Bayesian prior; `None` uses the default shared prior.
    #[serde(default)]
    pub prior: Option<BetaPrior>,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
    #[serde(default)]
    pub seed: u64,
}

fn default_n() -> usize {
    6
}

impl PipelineSpec {
    pub fn new(method: EstimateMethod, n: usize, seed: u64) -> Self {
        Self {
            method,
            n,
            rule: FrequencyRule::default(),
            pin_b1: false,
            kt: None,
            prior: None,
            optimizer: OptimizerOptions::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "lowercase")]
pub enum CvTarget {
    Ml(ModelSpec),
    Pipeline(PipelineSpec),
}

impl CvTarget {
    pub fn name(&self) -> String {
        match self {
            CvTarget::Ml(s) => s.params.kind().name().to_string(),
            CvTarget::Pipeline(p) => match p.method {
                EstimateMethod::Classical => "Classical".into(),
                EstimateMethod::Bayesian => "Bayesian".into(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub k: usize,
    pub runs: usize,
    pub seed: u64,
    /// Leading nodes excluded from cross-validation.
    pub holdout_head: usize,
    /// Trailing nodes excluded from cross-validation.
    pub holdout_tail: usize,
    pub lags: usize,
    /// Re-select the harmonic count inside every fold instead of using the pipeline's `N`.
    pub per_fold_selection: bool,
    pub selection_candidates: Vec<usize>,
    pub selection_threshold: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 10,
            runs: 10,
            seed: 0,
            holdout_head: 10,
            holdout_tail: 3,
            lags: crate::ml::DEFAULT_LAGS,
            per_fold_selection: false,
            selection_candidates: (1..=10).collect(),
            selection_threshold: 1.14,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 folds, got {}", self.k)));
        }
        if self.runs == 0 {
            return Err(Error::InvalidInput("need at least one run".into()));
        }
        if self.lags == 0 {
            return Err(Error::InvalidInput("need at least one lag".into()));
        }
        Ok(())
    }

    /// Panel rows that may serve as validation targets.
    pub fn eligible_rows(&self, len: usize, first_target: usize) -> Vec<usize> {
        let lo = self.holdout_head.max(first_target);
        let hi = len.saturating_sub(self.holdout_tail);
        (lo..hi).collect()
    }

    /// Held-out rows that have a sample, for the out-of-sample report.
    pub fn holdout_rows(&self, len: usize, first_target: usize) -> Vec<usize> {
        let hi = len.saturating_sub(self.holdout_tail);
        (first_target..len)
            .filter(|&r| r < self.holdout_head || r >= hi)
            .collect()
    }
}

/// Cross-validated table plus the spatial-mean SMAPE of every (run, fold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub table: SmapeTable,
    pub fold_means: Vec<f64>,
}

fn first_target(target: &CvTarget, cfg: &CvConfig) -> usize {
    match target {
        CvTarget::Ml(_) => cfg.lags,
        CvTarget::Pipeline(_) => 1,
    }
}

/// Shuffles `rows` with the run's stream and cuts `k` contiguous folds.
pub fn partition(rows: &[usize], k: usize, seed: u64, run: usize) -> Vec<Vec<usize>> {
    let mut shuffled = rows.to_vec();
    shuffled.shuffle(&mut stream(seed, &[run as u64]));
    let n = shuffled.len();
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        let mut fold = shuffled[start..start + size].to_vec();
        fold.sort_unstable();
        out.push(fold);
        start += size;
    }
    out
}

/// Fits on `train_rows` and predicts the log-risk at `test_rows`; returns one prediction column per region.
fn predict_rows(
    panel: &LogRiskPanel,
    target: &CvTarget,
    cfg: &CvConfig,
    datasets: &[LaggedDataset],
    train_rows: &[usize],
    test_rows: &[usize],
    task: &[u64],
) -> Result<Vec<Vec<f64>>> {
    match target {
        CvTarget::Ml(spec) => {
            let name = spec.params.kind().name();
            if train_rows.len() < 2 || test_rows.is_empty() {
                return Err(Error::InsufficientData(format!(
                    "{name}: fold with {} training and {} validation samples",
                    train_rows.len(),
                    test_rows.len()
                )));
            }
            datasets
                .iter()
                .enumerate()
                .map(|(p, ds)| {
                    let pos = |rows: &[usize]| -> Vec<usize> {
                        rows.iter().filter_map(|&r| ds.position_of(r)).collect()
                    };
                    let train = ds.subset(&pos(train_rows));
                    let test = pos(test_rows);
                    let mut path = task.to_vec();
                    path.push(p as u64);
                    let local = ModelSpec::new(spec.params.clone(), derive_seed(spec.seed, &path));
                    let model = fit_model_for(&local, &train, panel.mode).map_err(|e| {
                        Error::Numerical(format!("{name} on {} samples: {e}", train.len()))
                    })?;
                    Ok(test.iter().map(|&m| model.predict(&ds.input(m))).collect())
                })
                .collect()
        }
        CvTarget::Pipeline(spec) => pipeline_predict(panel, spec, cfg, train_rows, test_rows, task),
    }
}

fn pipeline_predict(
    panel: &LogRiskPanel,
    spec: &PipelineSpec,
    cfg: &CvConfig,
    train_rows: &[usize],
    test_rows: &[usize],
    task: &[u64],
) -> Result<Vec<Vec<f64>>> {
    let t = panel.len();
    let p = panel.regions();
    let times = regression_times(t);
    let train_times: Vec<f64> = train_rows.iter().map(|&r| times[r]).collect();
    let train_values = DMatrix::from_fn(train_rows.len(), p, |i, j| panel.values[(train_rows[i], j)]);
    let n = if cfg.per_fold_selection {
        select_on_rows(&train_times, t, spec, cfg)?
    } else {
        spec.n
    };
    let freqs = spec.rule.frequencies(n, t)?;
    let model = fit_at(&train_times, &train_values, &panel.region_ids, &freqs, spec.pin_b1)?;
    let fitted = model.predict(&times);
    let resid = &panel.values - &fitted;
    let pairs: Vec<usize> = train_rows.iter().copied().filter(|&r| r >= 1).collect();
    let prev = DMatrix::from_fn(pairs.len(), p, |i, j| resid[(pairs[i] - 1, j)]);
    let next = DMatrix::from_fn(pairs.len(), p, |i, j| resid[(pairs[i], j)]);
    let rho = match spec.method {
        EstimateMethod::Classical => {
            let cov = covariances_from_pairs(&prev, &next)?;
            let kt = spec.kt.unwrap_or_else(|| default_truncation(t).min(p));
            estimate_rho(&cov, kt)?.rho
        }
        EstimateMethod::Bayesian => {
            let prior = spec.prior.clone().unwrap_or_else(|| BetaPrior::default_for(p));
            let seed = derive_seed(spec.seed, task);
            optimize_posterior_pairs(&prev, &next, &prior, &spec.optimizer, seed)?.rho_matrix()
        }
    };
    let mut out = vec![Vec::with_capacity(test_rows.len()); p];
    for &r in test_rows {
        if r == 0 {
            return Err(Error::InvalidInput("the first node has no previous residual".into()));
        }
        let e = &rho * resid.row(r - 1).transpose();
        for q in 0..p {
            out[q].push(fitted[(r, q)] + e[q]);
        }
    }
    Ok(out)
}

/// Largest candidate whose ratio on the training design stays within the threshold.
fn select_on_rows(train_times: &[f64], len: usize, spec: &PipelineSpec, cfg: &CvConfig) -> Result<usize> {
    let mut best = None;
    let mut smallest = f64::INFINITY;
    for &n in &cfg.selection_candidates {
        if n == 0 || 2 * n >= train_times.len() {
            continue;
        }
        let phi = design_matrix(&spec.rule.frequencies(n, len)?, train_times, spec.pin_b1);
        let Ok(ratio) = selection_ratio(train_times.len(), &phi) else {
            continue;
        };
        smallest = smallest.min(ratio);
        if ratio <= cfg.selection_threshold {
            best = best.max(Some(n));
        }
    }
    best.ok_or(Error::Infeasible {
        threshold: cfg.selection_threshold,
        smallest,
    })
}

fn datasets_for(panel: &LogRiskPanel, target: &CvTarget, cfg: &CvConfig) -> Result<Vec<LaggedDataset>> {
    match target {
        CvTarget::Ml(_) => (0..panel.regions())
            .map(|p| build_for_mode(panel, p, cfg.lags))
            .collect(),
        CvTarget::Pipeline(_) => Ok(Vec::new()),
    }
}

fn row_values(panel: &LogRiskPanel, rows: &[usize], p: usize) -> Vec<f64> {
    rows.iter().map(|&r| panel.values[(r, p)]).collect()
}

/// Repeated random k-fold cross-validation; per-region SMAPE averaged over folds, then over runs.
pub fn kfold_cv(panel: &LogRiskPanel, target: &CvTarget, cfg: &CvConfig) -> Result<CvOutcome> {
    cfg.validate()?;
    let eligible = cfg.eligible_rows(panel.len(), first_target(target, cfg));
    if eligible.len() < cfg.k {
        return Err(Error::InsufficientData(format!(
            "{}: {} eligible samples cannot fill {} folds",
            target.name(),
            eligible.len(),
            cfg.k
        )));
    }
    let datasets = datasets_for(panel, target, cfg)?;
    let p = panel.regions();
    let tasks: Vec<(usize, usize, Vec<usize>, Vec<usize>)> = (0..cfg.runs)
        .flat_map(|run| {
            let folds = partition(&eligible, cfg.k, cfg.seed, run);
            (0..cfg.k)
                .map(|f| {
                    let train: Vec<usize> = folds
                        .iter()
                        .enumerate()
                        .filter(|(g, _)| *g != f)
                        .flat_map(|(_, rows)| rows.iter().copied())
                        .collect::<std::collections::BTreeSet<_>>()
                        .into_iter()
                        .collect();
                    (run, f, train, folds[f].clone())
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let scores: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|(run, f, train, test)| {
            let preds = predict_rows(panel, target, cfg, &datasets, train, test, &[*run as u64, *f as u64])?;
            (0..p)
                .map(|q| smape(&row_values(panel, test, q), &preds[q]))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut rows = vec![0.0; p];
    for run in 0..cfg.runs {
        for q in 0..p {
            let fold_sum: f64 = (0..cfg.k).map(|f| scores[run * cfg.k + f][q]).sum();
            rows[q] += fold_sum / cfg.k as f64;
        }
    }
    for v in &mut rows {
        *v /= cfg.runs as f64;
    }
    let fold_means = scores
        .iter()
        .map(|s| s.iter().sum::<f64>() / p as f64)
        .collect();
    Ok(CvOutcome {
        table: SmapeTable::new(target.name(), panel.mode, panel.region_ids.clone(), rows)?,
        fold_means,
    })
}

/// Fits on every cross-validation row and scores the held-out head and tail nodes.
pub fn out_of_sample(panel: &LogRiskPanel, target: &CvTarget, cfg: &CvConfig) -> Result<SmapeTable> {
    cfg.validate()?;
    let first = first_target(target, cfg);
    let train = cfg.eligible_rows(panel.len(), first);
    let test = cfg.holdout_rows(panel.len(), first);
    if test.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{}: no held-out nodes to score",
            target.name()
        )));
    }
    let datasets = datasets_for(panel, target, cfg)?;
    let preds = predict_rows(panel, target, cfg, &datasets, &train, &test, &[u64::MAX])?;
    let rows = (0..panel.regions())
        .map(|q| smape(&row_values(panel, &test, q), &preds[q]))
        .collect::<Result<Vec<_>>>()?;
    SmapeTable::new(target.name(), panel.mode, panel.region_ids.clone(), rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub params: ModelParams,
    pub mean: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: ModelParams,
    pub entries: Vec<GridEntry>,
}

impl GridResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .entries
            .iter()
            .map(|e| vec![e.params.label(), io::fmt_sig(e.mean), io::fmt_sig(e.total)])
            .collect();
        io::write_rows(path, &["params".into(), "mean".into(), "total".into()], &rows)
    }
}

/// Cross-validated mean SMAPE at every grid point; ties go to the simpler model.
pub fn grid_search(panel: &LogRiskPanel, grid: &[ModelParams], seed: u64, cfg: &CvConfig) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty hyperparameter grid".into()));
    }
    let entries: Vec<GridEntry> = grid
        .iter()
        .map(|params| {
            let target = CvTarget::Ml(ModelSpec::new(params.clone(), seed));
            let out = kfold_cv(panel, &target, cfg)?;
            Ok(GridEntry {
                params: params.clone(),
                mean: out.table.mean,
                total: out.table.total,
            })
        })
        .collect::<Result<_>>()?;
    let best = entries
        .iter()
        .min_by(|a, b| {
            a.mean
                .total_cmp(&b.mean)
                .then(a.params.complexity().total_cmp(&b.params.complexity()))
        })
        .map(|e| e.params.clone())
        .expect("grid is non-empty");
    Ok(GridResult { best, entries })
}

/// Everything a comparison run produced, with the configuration needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub config: CvConfig,
    pub targets: Vec<CvTarget>,
    pub tables: Vec<SmapeTable>,
    pub out_of_sample: Vec<SmapeTable>,
    pub grids: Vec<GridResult>,
}

impl CompareReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smape_hand_cases() {
        assert_eq!(smape(&[3.0, -2.0], &[3.0, -2.0]).unwrap(), 0.0);
        assert_eq!(smape(&[1.0], &[-1.0]).unwrap(), 2.0);
        assert!((smape(&[2.0, 4.0], &[4.0, 4.0]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(smape(&[0.0], &[0.0]).unwrap(), 0.0);
        assert!(smape(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn table_cell_format() {
        assert_eq!(table_format(0.001957), "0.1957×10⁻²");
        assert_eq!(table_format(0.5), "0.5000");
        assert_eq!(table_format(12.5), "0.1250×10²");
        assert_eq!(table_format(0.099999999), "0.1000");
    }

    #[test]
    fn partition_covers_rows_once() {
        let rows: Vec<usize> = (10..52).collect();
        let folds = partition(&rows, 5, 3, 1);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, rows);
        assert!(folds.iter().all(|f| f.len() == 8 || f.len() == 9));
    }
}
