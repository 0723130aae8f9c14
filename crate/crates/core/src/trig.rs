//! Per-region trigonometric least-squares regression of the log-risk mean,
//! harmonic-count selection and the regression predictor.
//!
//! Time is measured on the node index: the `i`-th row of a panel (0-based)
//! sits at `t = i + 1`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::panel::LogRiskPanel;

/// Condition number of the design above which a fit is rejected as rank-deficient.
pub const MAX_CONDITION: f64 = 1e10;

/// Regression time of every panel row: `1, 2, ..., T`.
pub fn regression_times(len: usize) -> Vec<f64> {
    (1..=len).map(|t| t as f64).collect()
}

/// `phi_k = 2 pi k / period` for `k = 1..=n`.
pub fn harmonic_frequencies(n: usize, period: f64) -> Vec<f64> {
    (1..=n).map(|k| 2.0 * PI * k as f64 / period).collect()
}

/// How harmonic frequencies are generated for a given harmonic count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrequencyRule {
    /// `2 pi k / period`; `period = None` uses the sample length.
    Harmonic { period: Option<f64> },
    /// Explicit list; a harmonic count `n` takes the first `n` entries.
    Fixed { frequencies: Vec<f64> },
}

impl Default for FrequencyRule {
    fn default() -> Self {
        FrequencyRule::Harmonic { period: None }
    }
}

impl FrequencyRule {
    pub fn frequencies(&self, n: usize, len: usize) -> Result<Vec<f64>> {
        match self {
            FrequencyRule::Harmonic { period } => {
                Ok(harmonic_frequencies(n, period.unwrap_or(len as f64)))
            }
            FrequencyRule::Fixed { frequencies } => {
                if n > frequencies.len() {
                    return Err(Error::InvalidInput(format!(
                        "{n} harmonics requested but only {} frequencies given",
                        frequencies.len()
                    )));
                }
                Ok(frequencies[..n].to_vec())
            }
        }
    }
}

/// Which frequency (and which of cos/sin) a design column carries.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Column {
    harmonic: usize,
    sine: bool,
}

fn columns(n: usize, pin_b1: bool) -> Vec<Column> {
    let mut cols = Vec::with_capacity(2 * n);
    for k in 0..n {
        cols.push(Column { harmonic: k, sine: false });
        if !(pin_b1 && k == 0) {
            cols.push(Column { harmonic: k, sine: true });
        }
    }
    cols
}

/// `cos(phi_k t), sin(phi_k t)` columns, harmonic by harmonic; `pin_b1` drops `sin(phi_1 t)`.
pub fn design_matrix(frequencies: &[f64], times: &[f64], pin_b1: bool) -> DMatrix<f64> {
    let cols = columns(frequencies.len(), pin_b1);
    DMatrix::from_fn(times.len(), cols.len(), |i, j| {
        let c = cols[j];
        let arg = frequencies[c.harmonic] * times[i];
        if c.sine {
            arg.sin()
        } else {
            arg.cos()
        }
    })
}

/// Fitted harmonic coefficients for every region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigModel {
    #[serde(rename = "N")]
    pub n: usize,
    pub frequencies: Vec<f64>,
    pub regions: Vec<String>,
    /// `a[k][p]`, cosine coefficients.
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    /// `b[k][p]`, sine coefficients.
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "T_fit")]
    pub t_fit: usize,
    #[serde(default)]
    pub pin_b1: bool,
}

impl TrigModel {
    pub fn zero(frequencies: Vec<f64>, regions: Vec<String>, t_fit: usize) -> Self {
        let n = frequencies.len();
        let p = regions.len();
        Self {
            n,
            frequencies,
            regions,
            a: vec![vec![0.0; p]; n],
            b: vec![vec![0.0; p]; n],
            t_fit,
            pin_b1: false,
        }
    }

    pub fn regions_len(&self) -> usize {
        self.regions.len()
    }

    /// Evaluates the regression mean at arbitrary times, `|times| x P`.
    pub fn predict(&self, times: &[f64]) -> DMatrix<f64> {
        let p = self.regions.len();
        DMatrix::from_fn(times.len(), p, |i, r| {
            let t = times[i];
            (0..self.n)
                .map(|k| {
                    let arg = self.frequencies[k] * t;
                    self.a[k][r] * arg.cos() + self.b[k][r] * arg.sin()
                })
                .sum()
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    fn validate(&self) -> Result<()> {
        if self.frequencies.len() != self.n
            || self.a.len() != self.n
            || self.b.len() != self.n
            || self
                .a
                .iter()
                .chain(&self.b)
                .any(|row| row.len() != self.regions.len())
        {
            return Err(Error::DimensionMismatch("trigonometric model shape".into()));
        }
        if self.frequencies.iter().any(|f| !(*f > 0.0))
            || self.frequencies.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidInput(
                "frequencies must be positive and strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Least-squares fit of `values` (rows aligned with `times`) on the harmonic basis.
pub fn fit_at(
    times: &[f64],
    values: &DMatrix<f64>,
    regions: &[String],
    frequencies: &[f64],
    pin_b1: bool,
) -> Result<TrigModel> {
    if times.len() != values.nrows() || regions.len() != values.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} times and {} regions for a {}x{} panel",
            times.len(),
            regions.len(),
            values.nrows(),
            values.ncols()
        )));
    }
    if frequencies.is_empty() {
        return Err(Error::InvalidInput("at least one frequency is required".into()));
    }
    let cols = columns(frequencies.len(), pin_b1);
    if times.len() < 2 * frequencies.len() {
        return Err(Error::InsufficientData(format!(
            "{} samples cannot identify {} harmonics",
            times.len(),
            frequencies.len()
        )));
    }
    let phi = design_matrix(frequencies, times, pin_b1);
    check_rank(&phi, &cols, frequencies)?;

    let qr = phi.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * values;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("triangular factor of the design".into()))?;

    let n = frequencies.len();
    let p = regions.len();
    let mut a = vec![vec![0.0; p]; n];
    let mut b = vec![vec![0.0; p]; n];
    for (j, c) in cols.iter().enumerate() {
        for r in 0..p {
            if c.sine {
                b[c.harmonic][r] = coef[(j, r)];
            } else {
                a[c.harmonic][r] = coef[(j, r)];
            }
        }
    }
    let model = TrigModel {
        n,
        frequencies: frequencies.to_vec(),
        regions: regions.to_vec(),
        a,
        b,
        t_fit: times.len(),
        pin_b1,
    };
    model.validate()?;
    Ok(model)
}

fn check_rank(phi: &DMatrix<f64>, cols: &[Column], frequencies: &[f64]) -> Result<()> {
    let sv = phi.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if condition <= MAX_CONDITION {
        return Ok(());
    }
    // Name the most collinear pair of columns.
    let norms: Vec<f64> = (0..phi.ncols()).map(|j| phi.column(j).norm()).collect();
    let mut worst = (0, 0, -1.0);
    for i in 0..phi.ncols() {
        for j in (i + 1)..phi.ncols() {
            let denom = norms[i] * norms[j];
            let cos = if denom > 0.0 {
                (phi.column(i).dot(&phi.column(j)) / denom).abs()
            } else {
                1.0
            };
            if cos > worst.2 {
                worst = (i, j, cos);
            }
        }
    }
    // A vanishing column (e.g. sin at a frequency that is a multiple of pi) pairs with itself.
    if let Some(j) = norms.iter().position(|n| *n <= 1e-12 * smax) {
        worst = (j, j, 1.0);
    }
    Err(Error::RankDeficient {
        first: frequencies[cols[worst.0].harmonic],
        second: frequencies[cols[worst.1].harmonic],
        condition,
    })
}

/// Fits every region of `panel` with the given frequencies on the node-index time axis.
pub fn fit(panel: &LogRiskPanel, frequencies: &[f64], pin_b1: bool) -> Result<TrigModel> {
    fit_at(
        &regression_times(panel.len()),
        &panel.values,
        &panel.region_ids,
        frequencies,
        pin_b1,
    )
}

/// Mean squared residual per region over the panel the model was fit on.
pub fn empirical_risk(model: &TrigModel, panel: &LogRiskPanel) -> Result<Vec<f64>> {
    if model.t_fit != panel.len() || model.regions_len() != panel.regions() {
        return Err(Error::DimensionMismatch(format!(
            "model fitted on {} nodes x {} regions, panel has {} x {}",
            model.t_fit,
            model.regions_len(),
            panel.len(),
            panel.regions()
        )));
    }
    Ok(risk_at(model, &regression_times(panel.len()), &panel.values))
}

/// Mean squared residual per region at arbitrary `(times, values)`.
pub fn risk_at(model: &TrigModel, times: &[f64], values: &DMatrix<f64>) -> Vec<f64> {
    let fitted = model.predict(times);
    let n = times.len() as f64;
    (0..values.ncols())
        .map(|p| {
            values
                .column(p)
                .iter()
                .zip(fitted.column(p).iter())
                .map(|(y, f)| (y - f) * (y - f))
                .sum::<f64>()
                / n
        })
        .collect()
}

/// Risks as fixed four-decimal cells, `per_row` to a line, regions in order.
pub fn render_risk_grid(risks: &[f64], per_row: usize) -> String {
    risks
        .chunks(per_row.max(1))
        .map(|row| row.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join("  "))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

/// Minimized risk through the residual-projection quadratic form
/// `(1/T) r' (I - Phi (Phi'Phi)^-1 Phi') r`, one value per column of `values`.
pub fn projection_risk(phi: &DMatrix<f64>, values: &DMatrix<f64>) -> Result<Vec<f64>> {
    let t = phi.nrows();
    let gram = phi.transpose() * phi;
    let inv = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("Phi'Phi".into()))?
        .inverse();
    let proj = DMatrix::<f64>::identity(t, t) - phi * inv * phi.transpose();
    Ok((0..values.ncols())
        .map(|p| {
            let r: DVector<f64> = values.column(p).into_owned();
            r.dot(&(&proj * &r)) / t as f64
        })
        .collect())
}

/// `(1 - m/T)^-1 (1 + sum_i 1/lambda_i(Phi'Phi) / T)` with `m` the number of design columns.
pub fn selection_ratio(len: usize, phi: &DMatrix<f64>) -> Result<f64> {
    let m = phi.ncols();
    if m == 0 {
        return Ok(1.0);
    }
    if phi.nrows() != len {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows for T = {len}",
            phi.nrows()
        )));
    }
    if m >= len {
        return Err(Error::InsufficientData(format!(
            "{m} coefficients need more than {len} samples"
        )));
    }
    let gram = phi.transpose() * phi;
    let eig = gram.symmetric_eigenvalues();
    let lmax = eig.max();
    if eig.iter().any(|&l| l <= 1e-12 * lmax.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular("Phi'Phi is not positive definite".into()));
    }
    let inv_sum: f64 = eig.iter().map(|l| 1.0 / l).sum();
    let t = len as f64;
    Ok((1.0 + inv_sum / t) / (1.0 - m as f64 / t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCandidate {
    #[serde(rename = "N")]
    pub n: usize,
    pub ratio: f64,
    pub mean_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub candidates: Vec<SelectionCandidate>,
    pub chosen_n: usize,
    pub threshold: f64,
}

impl SelectionReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .candidates
            .iter()
            .map(|c| vec![c.n.to_string(), io::fmt_sig(c.ratio), io::fmt_sig(c.mean_risk)])
            .collect();
        io::write_rows(
            path,
            &["N".into(), "ratio".into(), "mean_risk".into()],
            &rows,
        )
    }
}

/// Chooses the largest harmonic count whose selection ratio stays within `threshold`.
pub fn select_n(
    panel: &LogRiskPanel,
    candidates: &[usize],
    threshold: f64,
    rule: &FrequencyRule,
    pin_b1: bool,
) -> Result<SelectionReport> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidate harmonic counts".into()));
    }
    let len = panel.len();
    let times = regression_times(len);
    let mut rows = Vec::with_capacity(candidates.len());
    for &n in candidates {
        if n == 0 || 2 * n >= len {
            return Err(Error::InvalidInput(format!(
                "candidate N = {n} must satisfy 0 < 2N < T = {len}"
            )));
        }
        let freqs = rule.frequencies(n, len)?;
        let phi = design_matrix(&freqs, &times, pin_b1);
        let ratio = selection_ratio(len, &phi)?;
        let model = fit_at(&times, &panel.values, &panel.region_ids, &freqs, pin_b1)?;
        let risks = risk_at(&model, &times, &panel.values);
        let mean_risk = risks.iter().sum::<f64>() / risks.len() as f64;
        rows.push(SelectionCandidate { n, ratio, mean_risk });
    }
    let chosen = rows
        .iter()
        .filter(|c| c.ratio <= threshold)
        .map(|c| c.n)
        .max();
    match chosen {
        Some(chosen_n) => Ok(SelectionReport {
            candidates: rows,
            chosen_n,
            threshold,
        }),
        None => Err(Error::Infeasible {
            threshold,
            smallest: rows.iter().map(|c| c.ratio).fold(f64::INFINITY, f64::min),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::DataMode;

    fn panel_from(values: DMatrix<f64>) -> LogRiskPanel {
        let t = regression_times(values.nrows());
        let ids = (0..values.ncols()).map(|i| format!("C{}", i + 1)).collect();
        LogRiskPanel::new(t, ids, values, DataMode::Soft).unwrap()
    }

    #[test]
    fn design_quarter_period() {
        let phi = design_matrix(&[PI / 2.0], &[1.0, 2.0, 3.0, 4.0], false);
        let cos = [0.0, -1.0, 0.0, 1.0];
        let sin = [1.0, 0.0, -1.0, 0.0];
        for i in 0..4 {
            assert!((phi[(i, 0)] - cos[i]).abs() < 1e-15);
            assert!((phi[(i, 1)] - sin[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn harmonic_design_is_orthogonal() {
        let t = 265;
        let phi = design_matrix(&harmonic_frequencies(6, t as f64), &regression_times(t), false);
        let gram = phi.transpose() * &phi;
        let expected = DMatrix::<f64>::identity(12, 12) * (t as f64 / 2.0);
        assert!((gram - expected).abs().max() < 1e-8);
    }

    #[test]
    fn duplicate_frequency_is_rank_error() {
        let p = panel_from(DMatrix::from_fn(40, 1, |i, _| (i as f64).sin()));
        match fit(&p, &[0.3, 0.3], false) {
            Err(Error::RankDeficient { first, second, .. }) => {
                assert_eq!(first, 0.3);
                assert_eq!(second, 0.3);
            }
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn recovers_single_harmonic() {
        let f = harmonic_frequencies(1, 265.0);
        let truth = TrigModel {
            a: vec![vec![1.5]],
            b: vec![vec![-0.3]],
            ..TrigModel::zero(f.clone(), vec!["C1".into()], 265)
        };
        let p = panel_from(truth.predict(&regression_times(265)));
        let m = fit(&p, &f, false).unwrap();
        assert!((m.a[0][0] - 1.5).abs() < 1e-8);
        assert!((m.b[0][0] + 0.3).abs() < 1e-8);
        let risk = empirical_risk(&m, &p).unwrap();
        assert!(risk[0] <= 1e-15);
    }

    #[test]
    fn superposition_and_zero_panel() {
        let f = harmonic_frequencies(2, 100.0);
        let t = regression_times(100);
        let vals = DMatrix::from_fn(100, 1, |i, _| (f[0] * t[i]).cos() + (f[1] * t[i]).cos());
        let m = fit(&panel_from(vals), &f, false).unwrap();
        assert!((m.a[0][0] - 1.0).abs() < 1e-8 && (m.a[1][0] - 1.0).abs() < 1e-8);
        assert!(m.b[0][0].abs() < 1e-8 && m.b[1][0].abs() < 1e-8);

        let z = fit(&panel_from(DMatrix::zeros(50, 2)), &harmonic_frequencies(3, 50.0), false).unwrap();
        assert!(z.a.iter().chain(&z.b).flatten().all(|c| *c == 0.0));
    }

    #[test]
    fn pin_b1_forces_zero_sine() {
        let f = harmonic_frequencies(2, 60.0);
        let vals = DMatrix::from_fn(60, 2, |i, j| ((i * (j + 2)) as f64 * 0.1).sin());
        let m = fit(&panel_from(vals), &f, true).unwrap();
        assert!(m.pin_b1);
        assert_eq!(m.b[0], vec![0.0, 0.0]);
    }

    #[test]
    fn selection_ratio_closed_form() {
        let phi = design_matrix(&harmonic_frequencies(6, 265.0), &regression_times(265), false);
        let r = selection_ratio(265, &phi).unwrap();
        let expected = (1.0 - 12.0 / 265.0f64).recip() * (1.0 + (12.0 * 2.0 / 265.0) / 265.0);
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 1.0478).abs() < 1e-4);
        assert_eq!(selection_ratio(265, &DMatrix::zeros(265, 0)).unwrap(), 1.0);
    }

    #[test]
    fn select_n_rules() {
        let t = 265;
        let f = harmonic_frequencies(8, t as f64);
        let truth = TrigModel {
            a: (0..8).map(|k| vec![1.0 / (k + 1) as f64]).collect(),
            b: (0..8).map(|k| vec![0.5 / (k + 1) as f64]).collect(),
            ..TrigModel::zero(f, vec!["C1".into()], t)
        };
        let p = panel_from(truth.predict(&regression_times(t)));
        let rule = FrequencyRule::default();
        let all = select_n(&p, &[2, 4, 6, 8], f64::INFINITY, &rule, false).unwrap();
        assert_eq!(all.chosen_n, 8);
        // Threshold strictly between the N = 6 and N = 8 ratios.
        let r6 = all.candidates[2].ratio;
        let r8 = all.candidates[3].ratio;
        let mid = select_n(&p, &[2, 4, 6, 8], 0.5 * (r6 + r8), &rule, false).unwrap();
        assert_eq!(mid.chosen_n, 6);
        assert!(all.candidates.windows(2).all(|w| w[1].ratio > w[0].ratio));
        assert!(all.candidates.windows(2).all(|w| w[1].mean_risk <= w[0].mean_risk + 1e-15));
        let err = select_n(&p, &[1, 2], 1.0, &rule, false);
        assert!(matches!(err, Err(Error::Infeasible { .. })));
    }

    #[test]
    fn periodic_prediction() {
        let f = harmonic_frequencies(3, 40.0);
        let m = TrigModel {
            a: vec![vec![0.2], vec![-1.0], vec![0.7]],
            b: vec![vec![0.1], vec![0.0], vec![0.4]],
            ..TrigModel::zero(f.clone(), vec!["C1".into()], 40)
        };
        let period = 2.0 * PI / f[0];
        let a = m.predict(&[3.7, 17.2]);
        let b = m.predict(&[3.7 + period, 17.2 + period]);
        assert!((a - b).abs().max() < 1e-12);
        let z = TrigModel::zero(f, vec!["C1".into()], 40).predict(&[1.0, 5.0]);
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn json_layout() {
        let m = TrigModel::zero(harmonic_frequencies(2, 10.0), vec!["C1".into()], 10);
        let v = serde_json::to_value(&m).unwrap();
        for key in ["N", "frequencies", "regions", "A", "B", "T_fit"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
