//! Epsilon-insensitive support vector regression solved in the primal by
//! subgradient descent with step acceptance and iterate averaging.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{sq_dist, LaggedDataset};
use crate::error::{Error, Result};
use crate::linalg::lstsq;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SvrKernel {
    #[default]
    Linear,
    Gaussian { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrOptions {
    pub max_iter: usize,
    pub step: f64,
    /// Stop once the step size falls below this.
    pub min_step: f64,
}

impl Default for SvrOptions {
    fn default() -> Self {
        Self {
            max_iter: 3000,
            step: 1.0,
            min_step: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub kernel: SvrKernel,
    /// Linear weights, or representer coefficients for the Gaussian kernel.
    pub coef: Vec<f64>,
    pub bias: f64,
    /// Training inputs, kept for the kernel form only.
    pub support: Vec<Vec<f64>>,
    pub objective: f64,
    pub converged: bool,
    /// Objective after every accepted step.
    pub history: Vec<f64>,
}

impl SvrModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.kernel {
            SvrKernel::Linear => {
                self.bias + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
            }
            SvrKernel::Gaussian { gamma } => {
                self.bias
                    + self
                        .support
                        .iter()
                        .zip(&self.coef)
                        .map(|(s, a)| a * (-gamma * sq_dist(s, x)).exp())
                        .sum::<f64>()
            }
        }
    }

    pub fn weight_norm(&self) -> f64 {
        self.coef.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

struct Problem<'a> {
    /// Linear: the inputs. Gaussian: the kernel matrix.
    feature: DMatrix<f64>,
    y: &'a DVector<f64>,
    c: f64,
    eps: f64,
    kernel: bool,
}

impl Problem<'_> {
    fn outputs(&self, w: &DVector<f64>, b: f64) -> DVector<f64> {
        (&self.feature * w).add_scalar(b)
    }

    fn regularizer(&self, w: &DVector<f64>) -> f64 {
        if self.kernel {
            0.5 * w.dot(&(&self.feature * w))
        } else {
            0.5 * w.norm_squared()
        }
    }

    fn objective(&self, w: &DVector<f64>, b: f64) -> f64 {
        let f = self.outputs(w, b);
        let loss: f64 = self
            .y
            .iter()
            .zip(f.iter())
            .map(|(y, f)| ((y - f).abs() - self.eps).max(0.0))
            .sum();
        self.regularizer(w) + self.c * loss
    }

    /// Subgradient direction; the kernel case uses the RKHS gradient `alpha - C s`.
    fn subgradient(&self, w: &DVector<f64>, b: f64) -> (DVector<f64>, f64) {
        let f = self.outputs(w, b);
        let s = DVector::from_iterator(
            self.y.len(),
            self.y.iter().zip(f.iter()).map(|(y, f)| {
                let r = y - f;
                if r.abs() > self.eps {
                    r.signum()
                } else {
                    0.0
                }
            }),
        );
        let gb = -self.c * s.sum();
        let gw = if self.kernel {
            w - &s * self.c
        } else {
            w - self.feature.tr_mul(&s) * self.c
        };
        (gw, gb)
    }
}

pub fn fit(
    train: &LaggedDataset,
    c: f64,
    epsilon: f64,
    kernel: SvrKernel,
    opts: &SvrOptions,
) -> Result<SvrModel> {
    if !(c >= 0.0) || !(epsilon >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "SVR needs C >= 0 and epsilon >= 0, got C = {c}, epsilon = {epsilon}"
        )));
    }
    let m = train.len();
    let xs: Vec<Vec<f64>> = (0..m).map(|i| train.input(i)).collect();
    let (feature, is_kernel) = match kernel {
        SvrKernel::Linear => (train.inputs.clone(), false),
        SvrKernel::Gaussian { gamma } => {
            if !(gamma > 0.0) {
                return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
            }
            (
                DMatrix::from_fn(m, m, |i, j| (-gamma * sq_dist(&xs[i], &xs[j])).exp()),
                true,
            )
        }
    };
    let prob = Problem {
        feature,
        y: &train.targets,
        c,
        eps: epsilon,
        kernel: is_kernel,
    };
    let dim = prob.feature.ncols();

    // Start from the better of the flat median fit and the least-squares fit.
    let targets: Vec<f64> = train.targets.iter().copied().collect();
    let mut w = DVector::zeros(dim);
    let mut b = median(&targets);
    let mut obj = prob.objective(&w, b);
    if c > 0.0 {
        let aug = DMatrix::from_fn(m, dim + 1, |i, j| if j < dim { prob.feature[(i, j)] } else { 1.0 });
        if let Ok(sol) = lstsq(&aug, &train.targets) {
            let w_ls = sol.rows(0, dim).into_owned();
            let b_ls = sol[dim];
            let o = prob.objective(&w_ls, b_ls);
            if o.is_finite() && o < obj {
                w = w_ls;
                b = b_ls;
                obj = o;
            }
        }
    }

    let mut history = vec![obj];
    let mut avg_w = w.clone();
    let mut avg_b = b;
    let mut accepted = 1usize;
    let mut step = opts.step;
    let mut converged = false;
    for k in 1..=opts.max_iter {
        let (gw, gb) = prob.subgradient(&w, b);
        let gnorm = (gw.norm_squared() + gb * gb).sqrt();
        if gnorm == 0.0 {
            converged = true;
            break;
        }
        let eta = step / (k as f64).sqrt() / gnorm.max(1.0);
        let cand_w = &w - &gw * eta;
        let cand_b = b - gb * eta;
        let cand = prob.objective(&cand_w, cand_b);
        if cand < obj {
            w = cand_w;
            b = cand_b;
            obj = cand;
            history.push(obj);
            accepted += 1;
            let t = accepted as f64;
            avg_w = &avg_w * ((t - 1.0) / t) + &w / t;
            avg_b = avg_b * (t - 1.0) / t + b / t;
            step = (step * 1.1).min(opts.step * 10.0);
        } else {
            step *= 0.5;
            if step < opts.min_step {
                converged = true;
                break;
            }
        }
    }
    let avg_obj = prob.objective(&avg_w, avg_b);
    if avg_obj < obj {
        w = avg_w;
        b = avg_b;
        obj = avg_obj;
        history.push(obj);
    }
    Ok(SvrModel {
        kernel,
        coef: w.iter().copied().collect(),
        bias: b,
        support: if is_kernel { xs } else { Vec::new() },
        objective: obj,
        converged,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_data(slope: &[f64], b: f64, m: usize) -> LaggedDataset {
        let d = slope.len();
        let x = DMatrix::from_fn(m, d, |i, j| ((i * (j + 3)) as f64 * 0.37).sin());
        let y = DVector::from_iterator(
            m,
            (0..m).map(|i| b + (0..d).map(|j| slope[j] * x[(i, j)]).sum::<f64>()),
        );
        LaggedDataset {
            inputs: x,
            targets: y,
            j0: d,
            region: 0,
            target_rows: (0..m).collect(),
        }
    }

    #[test]
    fn zero_penalty_gives_zero_weights() {
        let d = linear_data(&[1.0, -2.0], 0.5, 30);
        let m = fit(&d, 0.0, 0.1, SvrKernel::Linear, &SvrOptions::default()).unwrap();
        assert!(m.weight_norm() == 0.0);
    }

    #[test]
    fn wide_tube_is_flat() {
        let d = linear_data(&[1.0, -2.0], 0.5, 30);
        let range = d.targets.max() - d.targets.min();
        let m = fit(&d, 10.0, 2.0 * range, SvrKernel::Linear, &SvrOptions::default()).unwrap();
        assert!(m.weight_norm() <= 1e-6);
    }

    #[test]
    fn exact_linear_data_stays_in_tube() {
        let d = linear_data(&[0.8, -0.3], 0.2, 40);
        let eps = 0.05;
        let m = fit(&d, 1e3, eps, SvrKernel::Linear, &SvrOptions::default()).unwrap();
        for i in 0..d.len() {
            assert!((m.predict(&d.input(i)) - d.targets[i]).abs() <= eps + 1e-6);
        }
        assert!(m.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn gaussian_kernel_fits_smooth_curve() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let d = LaggedDataset {
            inputs: DMatrix::from_column_slice(30, 1, &xs),
            targets: DVector::from_column_slice(&y),
            j0: 1,
            region: 0,
            target_rows: (0..30).collect(),
        };
        let m = fit(&d, 100.0, 0.01, SvrKernel::Gaussian { gamma: 2.0 }, &SvrOptions::default()).unwrap();
        let err = (0..30).map(|i| (m.predict(&[xs[i]]) - y[i]).abs()).fold(0.0, f64::max);
        assert!(err < 0.05, "max error {err}");
    }
}
