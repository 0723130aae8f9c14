//! Synthetic panels with known ground truth: harmonic mean, stationary spatial
//! AR(1) residuals and Poisson counts.

use std::path::Path;

use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classical::ResidualPanel;
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{rows_to_matrix, spectral_radius};
use crate::panel::{CountPanel, DataMode, LogRiskPanel};
use crate::rng::stream;
use crate::trig::{regression_times, TrigModel};

/// Poisson means above this are rejected.
pub const MAX_POISSON_MEAN: f64 = 1e12;

/// Ground truth for a synthetic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub true_model: TrigModel,
    pub true_rho: Vec<Vec<f64>>,
    pub noise_sigma: Vec<f64>,
    /// Full innovation covariance; overrides `noise_sigma` when present.
    #[serde(default)]
    pub innovation_cov: Option<Vec<Vec<f64>>>,
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
    /// Start from the stationary law (default) or from zero.
    #[serde(default = "yes")]
    pub stationary_start: bool,
}

fn yes() -> bool {
    true
}

impl Scenario {
    pub fn regions(&self) -> usize {
        self.true_model.regions.len()
    }

    pub fn rho(&self) -> Result<DMatrix<f64>> {
        rows_to_matrix(&self.true_rho)
    }

    /// Innovation covariance `Sigma_nu`.
    pub fn innovation(&self) -> Result<DMatrix<f64>> {
        match &self.innovation_cov {
            Some(rows) => rows_to_matrix(rows),
            None => Ok(DMatrix::from_diagonal(&DVector::from_iterator(
                self.noise_sigma.len(),
                self.noise_sigma.iter().map(|s| s * s),
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.regions();
        let rho = self.rho()?;
        if rho.nrows() != p || rho.ncols() != p || self.noise_sigma.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "scenario with {p} regions has rho {}x{} and {} noise scales",
                rho.nrows(),
                rho.ncols(),
                self.noise_sigma.len()
            )));
        }
        if self.noise_sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput("noise scales must be positive".into()));
        }
        if let Some(c) = &self.innovation_cov {
            let m = rows_to_matrix(c)?;
            if m.nrows() != p || m.ncols() != p {
                return Err(Error::DimensionMismatch("innovation covariance shape".into()));
            }
        }
        let radius = spectral_radius(&rho);
        if !(radius < 1.0) {
            return Err(Error::InvalidInput(format!(
                "spectral radius of rho is {radius:.6}; a stationary process needs < 1"
            )));
        }
        if self.t == 0 {
            return Err(Error::InvalidInput("scenario length must be positive".into()));
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

/// Solves `C = rho C rho' + sigma` through `(I - rho (x) rho) vec C = vec sigma`.
pub fn stationary_covariance(rho: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = rho.nrows();
    let kron = rho.kronecker(rho);
    let lhs = DMatrix::<f64>::identity(p * p, p * p) - kron;
    let rhs = DVector::from_column_slice(sigma.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("stationary covariance system".into()))?;
    let c = DMatrix::from_column_slice(p, p, sol.as_slice());
    Ok((&c + c.transpose()) * 0.5)
}

fn gaussian_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    // Semidefinite fallback through the eigendecomposition.
    let (vals, vecs) = crate::linalg::sym_eigen_desc(cov);
    vecs * DMatrix::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()))
}

/// AR(1) residual panel at nodes `1..=T`, started from the stationary law.
pub fn generate_residuals(sc: &Scenario) -> Result<ResidualPanel> {
    sc.validate()?;
    let p = sc.regions();
    let rho = sc.rho()?;
    let sigma = sc.innovation()?;
    let innov = gaussian_factor(&sigma);
    let mut rng = stream(sc.seed, &[0]);
    let mut draw = |factor: &DMatrix<f64>| {
        let z = DVector::from_iterator(p, (0..p).map(|_| StandardNormal.sample(&mut rng)));
        factor * z
    };
    let mut eps = if sc.stationary_start {
        let c = stationary_covariance(&rho, &sigma)?;
        draw(&gaussian_factor(&c))
    } else {
        DVector::zeros(p)
    };
    let mut values = DMatrix::zeros(sc.t, p);
    for t in 0..sc.t {
        eps = &rho * &eps + draw(&innov);
        values.set_row(t, &eps.transpose());
    }
    ResidualPanel::new(regression_times(sc.t), sc.true_model.regions.clone(), values)
}

/// Panel plus the pieces it was built from.
#[derive(Debug, Clone)]
pub struct SyntheticPanel {
    pub panel: LogRiskPanel,
    pub mean: DMatrix<f64>,
    pub residuals: ResidualPanel,
}

/// `values = harmonic mean + AR(1) residuals` on the node-index axis.
pub fn generate_panel(sc: &Scenario) -> Result<SyntheticPanel> {
    let residuals = generate_residuals(sc)?;
    let times = regression_times(sc.t);
    let mean = sc.true_model.predict(&times);
    let panel = LogRiskPanel::new(
        times,
        sc.true_model.regions.clone(),
        &mean + &residuals.values,
        DataMode::Hard,
    )?;
    Ok(SyntheticPanel {
        panel,
        mean,
        residuals,
    })
}

/// Integral over `[a, b]` of the piecewise-linear interpolant through `(times, values)`.
pub fn integrate_linear(times: &[f64], values: &[f64], a: f64, b: f64) -> f64 {
    let interp = |x: f64| -> f64 {
        let n = times.len();
        if x <= times[0] {
            return values[0];
        }
        if x >= times[n - 1] {
            return values[n - 1];
        }
        let i = times.partition_point(|&t| t <= x) - 1;
        let w = (x - times[i]) / (times[i + 1] - times[i]);
        values[i] + w * (values[i + 1] - values[i])
    };
    let mut pts = vec![a];
    pts.extend(times.iter().copied().filter(|&t| t > a && t < b));
    pts.push(b);
    pts.windows(2)
        .map(|w| 0.5 * (w[1] - w[0]) * (interp(w[0]) + interp(w[1])))
        .sum()
}

/// Trapezoid means of `exp(log-risk)` over consecutive intervals of `boundaries`, `intervals x P`.
pub fn poisson_means(panel: &LogRiskPanel, boundaries: &[f64]) -> Result<DMatrix<f64>> {
    if boundaries.len() < 2 || boundaries.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput(
            "interval boundaries must be strictly increasing with at least two entries".into(),
        ));
    }
    if panel.len() < 2 {
        return Err(Error::InsufficientData("counts need at least two nodes".into()));
    }
    let d = boundaries.len() - 1;
    let mut means = DMatrix::zeros(d, panel.regions());
    for p in 0..panel.regions() {
        let risk: Vec<f64> = panel.values.column(p).iter().map(|v| v.exp()).collect();
        for i in 0..d {
            let m = integrate_linear(&panel.node_times, &risk, boundaries[i], boundaries[i + 1]);
            if !(m <= MAX_POISSON_MEAN) {
                return Err(Error::Numerical(format!(
                    "Poisson mean {m:.3e} in region {} interval {i} exceeds {MAX_POISSON_MEAN:e}",
                    panel.region_ids[p]
                )));
            }
            means[(i, p)] = m;
        }
    }
    Ok(means)
}

/// Daily Poisson counts whose means integrate the panel's intensity; interval `i` is dated `start + i`.
pub fn generate_counts(
    panel: &LogRiskPanel,
    boundaries: &[f64],
    start: NaiveDate,
    seed: u64,
) -> Result<CountPanel> {
    let means = poisson_means(panel, boundaries)?;
    let d = means.nrows();
    let mut counts = vec![vec![0u64; panel.regions()]; d];
    for p in 0..panel.regions() {
        let mut rng = stream(seed, &[p as u64]);
        for i in 0..d {
            let m = means[(i, p)];
            if m > 0.0 {
                let dist = Poisson::new(m)
                    .map_err(|e| Error::Numerical(format!("Poisson mean {m}: {e}")))?;
                counts[i][p] = dist.sample(&mut rng) as u64;
            }
        }
    }
    let dates = (0..d)
        .map(|i| {
            start
                .checked_add_days(Days::new(i as u64))
                .ok_or_else(|| Error::InvalidInput("date overflow".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    CountPanel::new(panel.region_ids.clone(), dates, counts)
}
