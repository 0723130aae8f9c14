//! General regression neural network: Nadaraya-Watson smoothing with a
//! Gaussian kernel.

use serde::{Deserialize, Serialize};

use super::{sq_dist, LaggedDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrnnModel {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub h: f64,
}

pub fn fit(train: &LaggedDataset, h: f64) -> Result<GrnnModel> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {h}")));
    }
    Ok(GrnnModel {
        inputs: (0..train.len()).map(|m| train.input(m)).collect(),
        targets: train.targets.iter().copied().collect(),
        h,
    })
}

impl GrnnModel {
    /// Weighted mean of targets; weights are shifted by the nearest distance so they never all underflow.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let d2: Vec<f64> = self.inputs.iter().map(|xi| sq_dist(xi, x)).collect();
        let dmin = d2.iter().copied().fold(f64::INFINITY, f64::min);
        let denom = 2.0 * self.h * self.h;
        let mut num = 0.0;
        let mut den = 0.0;
        for (d, y) in d2.iter().zip(&self.targets) {
            let w = (-(d - dmin) / denom).exp();
            num += w * y;
            den += w;
        }
        (num / den).clamp(self.min_target(), self.max_target())
    }

    fn min_target(&self) -> f64 {
        self.targets.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn max_target(&self) -> f64 {
        self.targets.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}
