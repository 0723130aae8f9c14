//! Nonparametric bootstrap: resampling, five confidence-interval
//! constructions and kernel density estimates of the replicates.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::io;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub replicates: Vec<f64>,
    pub point_estimate: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    /// Leave-one-out values of the statistic; drives the BCa acceleration.
    #[serde(default)]
    pub jackknife: Vec<f64>,
}

/// Core engine: replicate `i` evaluates `statistic` on `n` indices drawn from stream `(seed, i)`.
pub fn resample_indices<F>(n: usize, b: usize, seed: u64, statistic: F) -> Result<BootstrapResult>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if b < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 replicates, got {b}")));
    }
    if n == 0 {
        return Err(Error::InsufficientData("cannot resample an empty sample".into()));
    }
    let all: Vec<usize> = (0..n).collect();
    let point_estimate = statistic(&all)?;
    let replicates: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[i as u64]);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let v = statistic(&idx)
                .map_err(|e| Error::Numerical(format!("replicate {i}: {e}")))?;
            if !v.is_finite() {
                return Err(Error::Numerical(format!("replicate {i} is not finite")));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let jackknife = if n >= 2 {
        (0..n)
            .into_par_iter()
            .map(|k| {
                let idx: Vec<usize> = (0..n).filter(|&i| i != k).collect();
                statistic(&idx)
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(BootstrapResult {
        replicates,
        point_estimate,
        b,
        seed,
        jackknife,
    })
}

/// I.i.d. resampling of a sample vector.
pub fn resample<F>(data: &[f64], statistic: F, b: usize, seed: u64) -> Result<BootstrapResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    resample_indices(data.len(), b, seed, |idx| {
        let s: Vec<f64> = idx.iter().map(|&i| data[i]).collect();
        statistic(&s)
    })
}

/// What a panel bootstrap draws with replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleUnit {
    /// Temporal rows, keeping all regions of a node together.
    #[default]
    Rows,
    /// Regional columns.
    Columns,
}

pub fn resample_panel<F>(
    values: &DMatrix<f64>,
    unit: ResampleUnit,
    statistic: F,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult>
where
    F: Fn(&DMatrix<f64>) -> Result<f64> + Sync,
{
    match unit {
        ResampleUnit::Rows => resample_indices(values.nrows(), b, seed, |idx| {
            statistic(&values.select_rows(idx))
        }),
        ResampleUnit::Columns => resample_indices(values.ncols(), b, seed, |idx| {
            statistic(&values.select_columns(idx))
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CiMethod {
    /// Bias-corrected and accelerated percentile.
    I1,
    /// Normal approximation with bias correction.
    I2,
    /// Percentile.
    I3,
    /// Bias-corrected percentile.
    I4,
    /// Student t.
    I5,
}

impl CiMethod {
    pub const ALL: [CiMethod; 5] = [CiMethod::I1, CiMethod::I2, CiMethod::I3, CiMethod::I4, CiMethod::I5];

    pub fn as_str(self) -> &'static str {
        match self {
            CiMethod::I1 => "I1",
            CiMethod::I2 => "I2",
            CiMethod::I3 => "I3",
            CiMethod::I4 => "I4",
            CiMethod::I5 => "I5",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            CiMethod::I1 => "BCa",
            CiMethod::I2 => "normal",
            CiMethod::I3 => "percentile",
            CiMethod::I4 => "bias-corrected percentile",
            CiMethod::I5 => "Student",
        }
    }
}

/// Type-7 quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// `(Σd³) / (6 (Σd²)^{3/2})` with `d_i = mean - jack_i`; zero when undefined.
pub fn acceleration(jackknife: &[f64]) -> f64 {
    if jackknife.len() < 2 {
        return 0.0;
    }
    let m = jackknife.iter().sum::<f64>() / jackknife.len() as f64;
    let (s2, s3) = jackknife.iter().fold((0.0, 0.0), |(a, b), j| {
        let d = m - j;
        (a + d * d, b + d * d * d)
    });
    if s2 > 0.0 {
        s3 / (6.0 * s2.powf(1.5))
    } else {
        0.0
    }
}

/// `Φ⁻¹` of the fraction of replicates below the point estimate, kept inside `(0, 1)`.
pub fn bias_correction(replicates: &[f64], point: f64) -> f64 {
    let b = replicates.len() as f64;
    let below = replicates.iter().filter(|&&r| r < point).count() as f64;
    let frac = (below / b).clamp(0.5 / b, 1.0 - 0.5 / b);
    std_normal().inverse_cdf(frac)
}

pub fn ci(result: &BootstrapResult, method: CiMethod, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level must lie in (0, 1), got {level}")));
    }
    let reps = &result.replicates;
    let b = reps.len();
    if b < 2 {
        return Err(Error::InsufficientData(format!("{b} replicates")));
    }
    let alpha = 1.0 - level;
    if (b as f64) * alpha / 2.0 < 1.0 {
        return Err(Error::InsufficientData(format!(
            "{b} replicates cannot resolve the {} quantile",
            alpha / 2.0
        )));
    }
    let point = result.point_estimate;
    let mut sorted = reps.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[b - 1] {
        return Ok((point, point));
    }
    let norm = std_normal();
    let z_lo = norm.inverse_cdf(alpha / 2.0);
    let z_hi = norm.inverse_cdf(1.0 - alpha / 2.0);
    let (mean, sd) = mean_sd(reps);
    let pair = match method {
        CiMethod::I3 => (
            quantile_sorted(&sorted, alpha / 2.0),
            quantile_sorted(&sorted, 1.0 - alpha / 2.0),
        ),
        CiMethod::I2 => {
            let centre = point - (mean - point);
            (centre - z_hi * sd, centre + z_hi * sd)
        }
        CiMethod::I4 | CiMethod::I1 => {
            let z0 = bias_correction(reps, point);
            let a = if method == CiMethod::I1 {
                acceleration(&result.jackknife)
            } else {
                0.0
            };
            let adj = |z: f64| {
                let s = z0 + z;
                norm.cdf(z0 + s / (1.0 - a * s))
            };
            (quantile_sorted(&sorted, adj(z_lo)), quantile_sorted(&sorted, adj(z_hi)))
        }
        CiMethod::I5 => {
            let t = StudentsT::new(0.0, 1.0, (b - 1) as f64)
                .map_err(|e| Error::Numerical(e.to_string()))?
                .inverse_cdf(1.0 - alpha / 2.0);
            (point - t * sd, point + t * sd)
        }
    };
    Ok((pair.0.min(pair.1), pair.0.max(pair.1)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub method: CiMethod,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiSet {
    pub level: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub intervals: Vec<CiRow>,
}

impl CiSet {
    pub fn compute(result: &BootstrapResult, methods: &[CiMethod], level: f64) -> Result<Self> {
        let intervals = methods
            .iter()
            .map(|&m| {
                let (lower, upper) = ci(result, m, level)?;
                Ok(CiRow { method: m, lower, upper })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            level,
            b: result.b,
            seed: result.seed,
            intervals,
        })
    }

    pub fn get(&self, method: CiMethod) -> Option<(f64, f64)> {
        self.intervals
            .iter()
            .find(|r| r.method == method)
            .map(|r| (r.lower, r.upper))
    }

    /// Columns `method,lower,upper,level,B,seed`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .intervals
            .iter()
            .map(|r| {
                vec![
                    r.method.as_str().to_string(),
                    io::fmt_sig(r.lower),
                    io::fmt_sig(r.upper),
                    io::fmt_sig(self.level),
                    self.b.to_string(),
                    self.seed.to_string(),
                ]
            })
            .collect();
        let header = ["method", "lower", "upper", "level", "B", "seed"].map(String::from);
        io::write_rows(path, &header, &rows)
    }
}

/// Methods down, statistics across, `[lower, upper]` cells.
pub fn render_ci_grid(names: &[String], sets: &[CiSet]) -> Result<String> {
    if names.len() != sets.len() || sets.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} names for {} interval sets", names.len(), sets.len())));
    }
    let methods: Vec<CiMethod> = sets[0].intervals.iter().map(|r| r.method).collect();
    let mut grid = vec![std::iter::once("CI".to_string()).chain(names.iter().cloned()).collect::<Vec<_>>()];
    for m in &methods {
        let mut row = vec![m.as_str().to_string()];
        for set in sets {
            let (lo, hi) = set
                .get(*m)
                .ok_or_else(|| Error::InvalidInput(format!("interval sets disagree on {}", m.as_str())))?;
            row.push(format!("[{}, {}]", crate::eval::table_format(lo), crate::eval::table_format(hi)));
        }
        grid.push(row);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &grid {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s}{}", " ".repeat(widths[c] - s.chars().count())))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    Ok(out)
}

/// `0.9 min(sd, IQR/1.34) n^{-1/5}`, falling back to the sd when the IQR vanishes.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (_, sd) = mean_sd(values);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (values.len() as f64).powf(-0.2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl Density {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .x
            .iter()
            .zip(&self.density)
            .map(|(x, d)| vec![io::fmt_sig(*x), io::fmt_sig(*d)])
            .collect();
        io::write_rows(path, &["x".into(), "density".into()], &rows)
    }
}

/// Gaussian kernel density of the replicates on a uniform grid padded by three bandwidths.
pub fn density(result: &BootstrapResult, grid_size: usize) -> Result<Density> {
    let reps = &result.replicates;
    if grid_size < 2 {
        return Err(Error::InvalidInput(format!("grid needs at least 2 points, got {grid_size}")));
    }
    let lo = reps.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = reps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if reps.len() < 2 || !(hi > lo) {
        return Err(Error::Degenerate(
            "replicates have no spread; report the point interval instead".into(),
        ));
    }
    let h = silverman_bandwidth(reps);
    let (a, z) = (lo - 3.0 * h, hi + 3.0 * h);
    let x = crate::panel::equispaced(a, z, grid_size);
    let norm = 1.0 / (reps.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = x
        .par_iter()
        .map(|&g| {
            norm * reps
                .iter()
                .map(|r| {
                    let u = (g - r) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(Density { x, density, bandwidth: h })
}

/// Equal-width histogram normalized to unit area: `(left edges, heights, width)`.
pub fn histogram(values: &[f64], bins: usize) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if bins == 0 || values.is_empty() {
        return Err(Error::InvalidInput("histogram needs data and at least one bin".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Degenerate("all values are equal".into()));
    }
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let k = (((v - lo) / w) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = values.len() as f64;
    Ok((
        (0..bins).map(|k| lo + k as f64 * w).collect(),
        counts.iter().map(|&c| c as f64 / (n * w)).collect(),
        w,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(s: &[f64]) -> Result<f64> {
        Ok(s.iter().sum::<f64>() / s.len() as f64)
    }

    #[test]
    fn type7_quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile_sorted(&s, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn constant_data_gives_point_intervals() {
        let r = resample(&[3.5; 20], mean, 200, 1).unwrap();
        assert!(r.replicates.iter().all(|&v| v == 3.5));
        for m in CiMethod::ALL {
            assert_eq!(ci(&r, m, 0.95).unwrap(), (3.5, 3.5));
        }
        assert!(density(&r, 50).is_err());
    }

    #[test]
    fn same_seed_same_replicates() {
        let d: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let a = resample(&d, mean, 100, 7).unwrap();
        let b = resample(&d, mean, 100, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.replicates, resample(&d, mean, 100, 8).unwrap().replicates);
    }

    #[test]
    fn acceleration_of_symmetric_jackknife_is_zero() {
        assert_eq!(acceleration(&[1.0, 2.0, 3.0]), 0.0);
        assert!(acceleration(&[0.0, 0.0, 3.0]) < 0.0);
    }

    #[test]
    fn histogram_has_unit_area() {
        let v: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64).collect();
        let (_, h, w) = histogram(&v, 17).unwrap();
        assert!((h.iter().sum::<f64>() * w - 1.0).abs() < 1e-12);
    }
}
