//! Radial basis network grown one center at a time at the worst-fit input.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{sq_dist, LaggedDataset};
use crate::error::{Error, Result};
use crate::linalg::lstsq;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfModel {
    pub centers: Vec<Vec<f64>>,
    /// Output weights, one per center.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub beta: f64,
    /// Training sum of squared errors after each growth step, starting with the bias-only model.
    pub sse_history: Vec<f64>,
    /// Training max absolute error after each growth step.
    pub max_error_history: Vec<f64>,
}

fn basis(x: &[f64], c: &[f64], beta: f64) -> f64 {
    (-sq_dist(x, c) / (beta * beta)).exp()
}

impl RbfModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.bias
            + self
                .centers
                .iter()
                .zip(&self.weights)
                .map(|(c, w)| w * basis(x, c, self.beta))
                .sum::<f64>()
    }

    pub fn nodes(&self) -> usize {
        self.centers.len()
    }
}

/// Adds centers until the training max error is within `tol` or no usable input remains.
pub fn fit(train: &LaggedDataset, beta: f64, tol: f64) -> Result<RbfModel> {
    fit_limited(train, beta, tol, usize::MAX)
}

pub fn fit_limited(train: &LaggedDataset, beta: f64, tol: f64, max_nodes: usize) -> Result<RbfModel> {
    if !(beta > 0.0) {
        return Err(Error::InvalidInput(format!("spread must be positive, got {beta}")));
    }
    let m = train.len();
    let xs: Vec<Vec<f64>> = (0..m).map(|i| train.input(i)).collect();
    let y = &train.targets;
    // Orthonormal basis of the bias column plus chosen basis columns (Gram-Schmidt).
    let ones = DVector::from_element(m, 1.0 / (m as f64).sqrt());
    let mut q: Vec<DVector<f64>> = vec![ones];
    let mut columns: Vec<DVector<f64>> = vec![DVector::from_element(m, 1.0)];
    let mut chosen: Vec<usize> = Vec::new();
    let mut skipped = vec![false; m];
    let mut fitted = &q[0] * q[0].dot(y);
    let mut sse_history = Vec::new();
    let mut max_error_history = Vec::new();
    let mut resid = y - &fitted;
    sse_history.push(resid.norm_squared());
    max_error_history.push(resid.amax());
    while resid.amax() > tol && chosen.len() < max_nodes.min(m) {
        // Worst-fit input that is neither a center nor numerically dependent on the current span.
        let next = (0..m)
            .filter(|&i| !skipped[i] && !chosen.iter().any(|&c| xs[c] == xs[i]))
            .max_by(|&a, &b| resid[a].abs().total_cmp(&resid[b].abs()).then(b.cmp(&a)));
        let Some(next) = next else { break };
        let col = DVector::from_iterator(m, xs.iter().map(|x| basis(x, &xs[next], beta)));
        let mut v = col.clone();
        for _ in 0..2 {
            for qk in &q {
                let c = qk.dot(&v);
                v.axpy(-c, qk, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= 1e-10 * col.norm() {
            skipped[next] = true;
            continue;
        }
        v /= norm;
        let trial = &fitted + &v * v.dot(y);
        let trial_resid = y - &trial;
        // A node that would raise the max error is passed over.
        if trial_resid.amax() > resid.amax() {
            skipped[next] = true;
            continue;
        }
        fitted = trial;
        resid = trial_resid;
        q.push(v);
        columns.push(col);
        chosen.push(next);
        sse_history.push(resid.norm_squared());
        max_error_history.push(resid.amax());
    }
    let design = DMatrix::from_columns(&columns);
    let coef = lstsq(&design, y)?;
    Ok(RbfModel {
        centers: chosen.iter().map(|&i| xs[i].clone()).collect(),
        weights: coef.iter().skip(1).copied().collect(),
        bias: coef[0],
        beta,
        sse_history,
        max_error_history,
    })
}
