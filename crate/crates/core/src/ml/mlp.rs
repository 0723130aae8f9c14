//! Single-hidden-layer logistic networks: a least-squares MLP and a Bayesian
//! variant with evidence-selected weight decay.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LaggedDataset, Standardizer};
use crate::error::{Error, Result};
use crate::linalg::lstsq;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_backoffs: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            learning_rate: 0.05,
            momentum: 0.9,
            max_backoffs: 5,
        }
    }
}

/// Grid of data-term weights searched by the Bayesian network.
pub fn nu_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub nh: usize,
    pub input: Standardizer,
    pub y_mean: f64,
    pub y_scale: f64,
    /// Hidden weights, `nh x d`, acting on standardized inputs.
    pub hidden: Vec<Vec<f64>>,
    pub hidden_bias: Vec<f64>,
    pub output: Vec<f64>,
    pub output_bias: f64,
    /// Affine weights on raw inputs; used only when `nh = 0`.
    pub linear: Vec<f64>,
    /// Training loss after every accepted step, then after the final output-layer solve.
    pub loss_history: Vec<f64>,
}

impl MlpModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.nh == 0 {
            return self.output_bias + self.linear.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let z = self.input.apply(x);
        let mut out = self.output_bias;
        for k in 0..self.nh {
            let a = self.hidden_bias[k] + self.hidden[k].iter().zip(&z).map(|(w, v)| w * v).sum::<f64>();
            out += self.output[k] * logistic(a);
        }
        self.y_mean + self.y_scale * out
    }

    /// Sum of squares of every weight and bias.
    pub fn weight_norm_sq(&self) -> f64 {
        self.hidden.iter().flatten().map(|v| v * v).sum::<f64>()
            + self.hidden_bias.iter().map(|v| v * v).sum::<f64>()
            + self.output.iter().map(|v| v * v).sum::<f64>()
            + self.output_bias * self.output_bias
            + self.linear.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Flat parameter vector `[W (row-major), c, eta, eta0]` on standardized data.
#[derive(Clone)]
struct Net {
    nh: usize,
    d: usize,
    w: DVector<f64>,
}

impl Net {
    fn size(nh: usize, d: usize) -> usize {
        nh * (d + 2) + 1
    }

    fn random(nh: usize, d: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[]);
        let n = Self::size(nh, d);
        let w = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-0.5..0.5)));
        Self { nh, d, w }
    }

    fn hw(&self, k: usize, j: usize) -> f64 {
        self.w[k * self.d + j]
    }

    fn c_idx(&self, k: usize) -> usize {
        self.nh * self.d + k
    }

    fn eta_idx(&self, k: usize) -> usize {
        self.nh * (self.d + 1) + k
    }

    fn eta0_idx(&self) -> usize {
        self.nh * (self.d + 2)
    }

    /// Hidden activations, `M x nh`.
    fn hidden(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        // Column-major view of the row-major hidden weights is `W'`, `d x nh`.
        let wt = self.w.rows(0, self.nh * self.d).reshape_generic(nalgebra::Dyn(self.d), nalgebra::Dyn(self.nh));
        let mut a = x * wt;
        for k in 0..self.nh {
            let c = self.w[self.c_idx(k)];
            a.column_mut(k).apply(|v| *v = logistic(*v + c));
        }
        a
    }

    fn outputs(&self, h: &DMatrix<f64>) -> DVector<f64> {
        let eta = DVector::from_iterator(self.nh, (0..self.nh).map(|k| self.w[self.eta_idx(k)]));
        (h * eta).add_scalar(self.w[self.eta0_idx()])
    }

    /// Half the sum of squared errors.
    fn data_error(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        0.5 * (self.outputs(&self.hidden(x)) - y).norm_squared()
    }

    /// `d yhat_m / d w`, `M x |w|`.
    fn jacobian(&self, x: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
        let m = x.nrows();
        let mut jac = DMatrix::zeros(m, self.w.len());
        for i in 0..m {
            for k in 0..self.nh {
                let hk = h[(i, k)];
                let eta = self.w[self.eta_idx(k)];
                let back = eta * hk * (1.0 - hk);
                for j in 0..self.d {
                    jac[(i, k * self.d + j)] = back * x[(i, j)];
                }
                jac[(i, self.c_idx(k))] = back;
                jac[(i, self.eta_idx(k))] = hk;
            }
            jac[(i, self.eta0_idx())] = 1.0;
        }
        jac
    }

    /// Gradient of `nu * E_O + decay * E_W`.
    fn gradient(&self, x: &DMatrix<f64>, y: &DVector<f64>, nu: f64, decay: f64) -> (f64, DVector<f64>) {
        let h = self.hidden(x);
        let r = self.outputs(&h) - y;
        let mut back = h.clone();
        for k in 0..self.nh {
            let eta = self.w[self.eta_idx(k)];
            back.column_mut(k).zip_apply(&r, |b, ri| *b = ri * eta * *b * (1.0 - *b));
        }
        let mut g = DVector::zeros(self.w.len());
        let gw = x.transpose() * &back;
        g.rows_mut(0, self.nh * self.d).copy_from_slice(gw.as_slice());
        let ht_r = h.transpose() * &r;
        for k in 0..self.nh {
            g[self.c_idx(k)] = back.column(k).sum();
            g[self.eta_idx(k)] = ht_r[k];
        }
        g[self.eta0_idx()] = r.sum();
        let g = g * nu + &self.w * decay;
        let obj = nu * 0.5 * r.norm_squared() + decay * 0.5 * self.w.norm_squared();
        (obj, g)
    }

    fn set_output(&mut self, coef: &DVector<f64>) {
        for k in 0..self.nh {
            let idx = self.eta_idx(k);
            self.w[idx] = coef[k];
        }
        let idx = self.eta0_idx();
        self.w[idx] = coef[self.nh];
    }

    fn into_model(self, input: Standardizer, y_mean: f64, y_scale: f64, loss_history: Vec<f64>) -> MlpModel {
        let hidden = (0..self.nh)
            .map(|k| (0..self.d).map(|j| self.hw(k, j)).collect())
            .collect();
        MlpModel {
            nh: self.nh,
            hidden,
            hidden_bias: (0..self.nh).map(|k| self.w[self.c_idx(k)]).collect(),
            output: (0..self.nh).map(|k| self.w[self.eta_idx(k)]).collect(),
            output_bias: self.w[self.eta0_idx()],
            linear: Vec::new(),
            input,
            y_mean,
            y_scale,
            loss_history,
        }
    }
}

/// Gradient descent with momentum; a step is kept only when it does not raise the objective.
fn descend(
    net: &mut Net,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    nu: f64,
    decay: f64,
    opts: &TrainOptions,
    history: &mut Vec<f64>,
) -> Result<f64> {
    let (mut obj, mut g) = net.gradient(x, y, nu, decay);
    if !obj.is_finite() {
        return Err(Error::Numerical("non-finite initial training loss".into()));
    }
    history.push(obj);
    let mut lr = opts.learning_rate / x.nrows().max(1) as f64;
    let mut velocity = DVector::zeros(net.w.len());
    let mut backoffs = 0;
    for _ in 0..opts.max_epochs {
        velocity = &velocity * opts.momentum - &g * lr;
        let mut cand = net.clone();
        cand.w += &velocity;
        let (cobj, cg) = cand.gradient(x, y, nu, decay);
        if cobj.is_nan() {
            backoffs += 1;
            if backoffs > opts.max_backoffs {
                return Err(Error::Numerical(format!(
                    "training diverged after {} learning-rate backoffs",
                    opts.max_backoffs
                )));
            }
            velocity.fill(0.0);
            lr *= 0.5;
            continue;
        }
        if cobj <= obj {
            *net = cand;
            obj = cobj;
            g = cg;
            history.push(obj);
            lr *= 1.05;
        } else {
            velocity.fill(0.0);
            lr *= 0.5;
            if lr < 1e-14 {
                break;
            }
        }
    }
    Ok(obj)
}

fn target_scale(y: &DVector<f64>) -> (f64, f64) {
    let m = y.len().max(1) as f64;
    let mean = y.sum() / m;
    let sd = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m).sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

fn with_bias(h: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(h.nrows(), h.ncols() + 1, |i, j| if j < h.ncols() { h[(i, j)] } else { 1.0 })
}

/// Least-squares network; `nh = 0` is the closed-form affine fit on raw inputs.
pub fn mlp_fit(train: &LaggedDataset, nh: usize, seed: u64, opts: &TrainOptions) -> Result<MlpModel> {
    let d = train.dim();
    if nh == 0 {
        let aug = DMatrix::from_fn(train.len(), d + 1, |i, j| if j < d { train.inputs[(i, j)] } else { 1.0 });
        let coef = lstsq(&aug, &train.targets)?;
        let loss = 0.5 * (&aug * &coef - &train.targets).norm_squared();
        return Ok(MlpModel {
            nh: 0,
            input: Standardizer {
                mean: vec![0.0; d],
                scale: vec![1.0; d],
            },
            y_mean: 0.0,
            y_scale: 1.0,
            hidden: Vec::new(),
            hidden_bias: Vec::new(),
            output: Vec::new(),
            output_bias: coef[d],
            linear: coef.rows(0, d).iter().copied().collect(),
            loss_history: vec![loss],
        });
    }
    let input = Standardizer::fit(&train.inputs);
    let x = input.apply_matrix(&train.inputs);
    let (y_mean, y_scale) = target_scale(&train.targets);
    let y = train.targets.map(|v| (v - y_mean) / y_scale);
    let mut net = Net::random(nh, d, seed);
    let mut history = Vec::new();
    descend(&mut net, &x, &y, 1.0, 0.0, opts, &mut history)?;
    // Final output layer by least squares given the hidden activations.
    let h = with_bias(&net.hidden(&x));
    let coef = lstsq(&h, &y)?;
    let mut solved = net.clone();
    solved.set_output(&coef);
    let loss = solved.data_error(&x, &y);
    if loss <= *history.last().unwrap_or(&f64::INFINITY) {
        net = solved;
        history.push(loss);
    }
    Ok(net.into_model(input, y_mean, y_scale, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnnModel {
    pub net: MlpModel,
    pub nu: f64,
    /// `J = nu E_O + (1 - nu) E_W` at the returned weights.
    pub objective: f64,
    pub data_error: f64,
    pub weight_error: f64,
    /// `(nu, log evidence)` from the last selection pass.
    pub evidence: Vec<(f64, f64)>,
}

impl BnnModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.net.predict(x)
    }
}

struct Prepared {
    input: Standardizer,
    x: DMatrix<f64>,
    y: DVector<f64>,
    y_mean: f64,
    y_scale: f64,
}

fn prepare(train: &LaggedDataset) -> Prepared {
    let input = Standardizer::fit(&train.inputs);
    let x = input.apply_matrix(&train.inputs);
    let (y_mean, y_scale) = target_scale(&train.targets);
    let y = train.targets.map(|v| (v - y_mean) / y_scale);
    Prepared {
        input,
        x,
        y,
        y_mean,
        y_scale,
    }
}

fn fit_weights(net: &mut Net, prep: &Prepared, nu: f64, opts: &TrainOptions, history: &mut Vec<f64>) -> Result<()> {
    let decay = 1.0 - nu;
    descend(net, &prep.x, &prep.y, nu, decay, opts, history)?;
    // Exact ridge solve for the output layer.
    let h = with_bias(&net.hidden(&prep.x));
    let n = h.ncols();
    let lhs = h.transpose() * &h * nu + DMatrix::<f64>::identity(n, n) * decay;
    let rhs = h.transpose() * &prep.y * nu;
    if let Some(coef) = lhs.cholesky().map(|c| c.solve(&rhs)) {
        let mut solved = net.clone();
        solved.set_output(&coef);
        let (obj, _) = solved.gradient(&prep.x, &prep.y, nu, decay);
        if obj <= *history.last().unwrap_or(&f64::INFINITY) {
            *net = solved;
            history.push(obj);
        }
    }
    Ok(())
}

/// Spectrum of the Gauss-Newton matrix `J'J`, padded with zeros to `|w|`.
fn gauss_newton_spectrum(net: &Net, prep: &Prepared) -> Vec<f64> {
    let h = net.hidden(&prep.x);
    let jac = net.jacobian(&prep.x, &h);
    let n = net.w.len();
    // The nonzero spectrum of J'J is that of JJ'; take the smaller Gram.
    let gram = if jac.nrows() < n { &jac * jac.transpose() } else { jac.transpose() * &jac };
    let mut eig: Vec<f64> = gram.symmetric_eigenvalues().iter().map(|v| v.max(0.0)).collect();
    eig.resize(n, 0.0);
    eig
}

/// Laplace log evidence with a Gauss-Newton Hessian, precisions `nu` (data) and `1 - nu` (weights).
fn log_evidence(net: &Net, prep: &Prepared, nu: f64, spectrum: &[f64]) -> f64 {
    let alpha = 1.0 - nu;
    let ed = net.data_error(&prep.x, &prep.y);
    let ew = 0.5 * net.w.norm_squared();
    let n = spectrum.len();
    let logdet: f64 = spectrum.iter().map(|l| (nu * l + alpha).ln()).sum();
    let m = prep.y.len() as f64;
    -nu * ed - alpha * ew - 0.5 * logdet + 0.5 * n as f64 * alpha.ln() + 0.5 * m * nu.ln()
        - 0.5 * m * (2.0 * std::f64::consts::PI).ln()
}

fn finish(net: Net, prep: Prepared, nu: f64, history: Vec<f64>, evidence: Vec<(f64, f64)>) -> BnnModel {
    let ed = net.data_error(&prep.x, &prep.y);
    let ew = 0.5 * net.w.norm_squared();
    BnnModel {
        net: net.into_model(prep.input, prep.y_mean, prep.y_scale, history),
        nu,
        objective: nu * ed + (1.0 - nu) * ew,
        data_error: ed,
        weight_error: ew,
        evidence,
    }
}

/// Network trained for a fixed data-term weight `nu`.
pub fn bnn_fit_fixed(train: &LaggedDataset, nh: usize, nu: f64, seed: u64, opts: &TrainOptions) -> Result<BnnModel> {
    if nh == 0 {
        return Err(Error::InvalidInput("Bayesian network needs at least one hidden node".into()));
    }
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::InvalidInput(format!("nu must lie in (0, 1), got {nu}")));
    }
    let prep = prepare(train);
    let mut net = Net::random(nh, train.dim(), seed);
    let mut history = Vec::new();
    fit_weights(&mut net, &prep, nu, opts, &mut history)?;
    Ok(finish(net, prep, nu, history, Vec::new()))
}

/// Alternates weight fits with evidence maximization of `nu` over [`nu_grid`].
pub fn bnn_fit(train: &LaggedDataset, nh: usize, seed: u64, opts: &TrainOptions) -> Result<BnnModel> {
    if nh == 0 {
        return Err(Error::InvalidInput("Bayesian network needs at least one hidden node".into()));
    }
    let prep = prepare(train);
    let grid = nu_grid();
    let mut net = Net::random(nh, train.dim(), seed);
    let mut nu = 0.5;
    let mut history = Vec::new();
    let mut evidence = Vec::new();
    let mut last_j = f64::INFINITY;
    for _ in 0..20 {
        fit_weights(&mut net, &prep, nu, opts, &mut history)?;
        let spectrum = gauss_newton_spectrum(&net, &prep);
        evidence = grid.iter().map(|&v| (v, log_evidence(&net, &prep, v, &spectrum))).collect();
        let best = evidence
            .iter()
            .fold((nu, f64::NEG_INFINITY), |acc, &(v, e)| if e > acc.1 { (v, e) } else { acc })
            .0;
        let j = nu * net.data_error(&prep.x, &prep.y) + (1.0 - nu) * 0.5 * net.w.norm_squared();
        let settled = (j - last_j).abs() < 1e-8 || best == nu;
        last_j = j;
        if settled {
            break;
        }
        nu = best;
    }
    Ok(finish(net, prep, nu, history, evidence))
}
