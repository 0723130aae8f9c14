//! Combination of the regression and residual predictors into log-risk, risk
//! and cumulative-count forecasts.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::io;
use crate::panel::SpatialWeighting;

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub node_times: Vec<f64>,
    pub log_risk: DMatrix<f64>,
    pub risk: DMatrix<f64>,
    /// Trapezoid integral of `risk` from the first node.
    pub cumulative: DMatrix<f64>,
}

impl Forecast {
    pub fn write_csv(&self, dir: &Path, region_ids: &[String]) -> Result<()> {
        io::write_time_table(&dir.join("log_risk.csv"), &self.node_times, region_ids, &self.log_risk)?;
        io::write_time_table(&dir.join("risk.csv"), &self.node_times, region_ids, &self.risk)?;
        io::write_time_table(
            &dir.join("cumulative.csv"),
            &self.node_times,
            region_ids,
            &self.cumulative,
        )
    }
}

/// Maps soft values back through `values_soft = values_hard w'`.
pub fn invert_weighting(values: &DMatrix<f64>, w: &SpatialWeighting) -> Result<DMatrix<f64>> {
    if w.size() != values.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} weighting for {} regions",
            w.size(),
            w.size(),
            values.ncols()
        )));
    }
    if w.is_identity() {
        return Ok(values.clone());
    }
    let svals = w.matrix.singular_values();
    if svals.min() <= 1e-12 * svals.max() {
        return Err(Error::Singular("spatial weighting matrix".into()));
    }
    // X w' = V  <=>  w X' = V'
    let sol = w
        .matrix
        .clone()
        .lu()
        .solve(&values.transpose())
        .ok_or_else(|| Error::Singular("spatial weighting matrix".into()))?;
    Ok(sol.transpose())
}

/// Cumulative trapezoid integral of each column over `times`, starting at 0.
pub fn cumulative_trapezoid(times: &[f64], values: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(values.nrows(), values.ncols());
    for i in 1..values.nrows() {
        let h = times[i] - times[i - 1];
        for p in 0..values.ncols() {
            out[(i, p)] = out[(i - 1, p)] + 0.5 * h * (values[(i, p)] + values[(i - 1, p)]);
        }
    }
    out
}

/// `log-risk = regression + residual`, optionally mapped back through `w^-1`, then exponentiated and integrated.
pub fn combine_predictions(
    node_times: &[f64],
    regression: &DMatrix<f64>,
    residual: &DMatrix<f64>,
    inverse: Option<&SpatialWeighting>,
) -> Result<Forecast> {
    if regression.shape() != residual.shape() || regression.nrows() != node_times.len() {
        return Err(Error::DimensionMismatch(format!(
            "regression {:?}, residual {:?}, {} nodes",
            regression.shape(),
            residual.shape(),
            node_times.len()
        )));
    }
    let mut log_risk = regression + residual;
    if let Some(w) = inverse {
        log_risk = invert_weighting(&log_risk, w)?;
    }
    let risk = log_risk.map(f64::exp);
    let cumulative = cumulative_trapezoid(node_times, &risk);
    Ok(Forecast {
        node_times: node_times.to_vec(),
        log_risk,
        risk,
        cumulative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::equispaced;

    #[test]
    fn constant_log_risk_integrates_exactly() {
        let t = equispaced(0.0, 1.0, 265);
        let reg = DMatrix::from_element(265, 1, 0.7);
        let f = combine_predictions(&t, &reg, &DMatrix::zeros(265, 1), None).unwrap();
        assert!((f.cumulative[(264, 0)] - 0.7f64.exp()).abs() < 1e-6);
        assert_eq!(f.log_risk, reg);
    }

    #[test]
    fn inverse_weighting_undoes_forward_map() {
        let w = SpatialWeighting::custom(DMatrix::from_row_slice(
            3,
            3,
            &[0.6, 0.3, 0.1, 0.2, 0.7, 0.1, 0.1, 0.1, 0.8],
        ))
        .unwrap();
        let hard = DMatrix::from_fn(5, 3, |i, j| (i as f64) - 2.0 * j as f64);
        let soft = &hard * w.matrix.transpose();
        let back = invert_weighting(&soft, &w).unwrap();
        assert!((back - hard).abs().max() < 1e-12);
    }

    #[test]
    fn singular_weighting_is_rejected() {
        let w = SpatialWeighting::custom(DMatrix::from_element(2, 2, 1.0)).unwrap();
        assert!(matches!(
            invert_weighting(&DMatrix::zeros(3, 2), &w),
            Err(Error::Singular(_))
        ));
    }
}
