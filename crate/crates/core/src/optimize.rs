//! Box-constrained maximization: a genetic search followed by BFGS in logit
//! coordinates with central-difference gradients.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    pub population: usize,
    pub generations: usize,
    /// Mutation standard deviation as a fraction of the box width.
    pub mutation_scale: f64,
    pub tournament: usize,
    pub crossover_rate: f64,
    pub elite: usize,
    pub max_iter: usize,
    /// Relative objective change below which the quasi-Newton phase stops.
    pub tolerance: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 200,
            mutation_scale: 0.1,
            tournament: 3,
            crossover_rate: 0.9,
            elite: 2,
            max_iter: 500,
            tolerance: 1e-14,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Genetic,
    QuasiNewton,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Genetic => "genetic",
            Phase::QuasiNewton => "quasi_newton",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub phase: Phase,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub x: Vec<f64>,
    pub value: f64,
    pub genetic_best: f64,
    pub trace: Vec<TraceEntry>,
}

/// Open box `(lo, hi)^n`; points are kept `margin` inside the faces.
#[derive(Debug, Clone, Copy)]
pub struct OpenBox {
    pub lo: f64,
    pub hi: f64,
}

impl OpenBox {
    fn margin(&self) -> f64 {
        (self.hi - self.lo) * 1e-9
    }

    fn clamp(&self, v: f64) -> f64 {
        let m = self.margin();
        v.clamp(self.lo + m, self.hi - m)
    }

    fn logit_of(&self, v: f64) -> f64 {
        let z = (self.clamp(v) - self.lo) / (self.hi - self.lo);
        (z / (1.0 - z)).ln()
    }

    fn value_of_logit(&self, u: f64) -> f64 {
        let z = 1.0 / (1.0 + (-u).exp());
        self.clamp(self.lo + (self.hi - self.lo) * z)
    }
}

fn score<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> f64 {
    let v = f(x);
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Maximizes `f` over the open box starting from `seeds` plus random individuals.
pub fn maximize<F, R>(
    f: F,
    dim: usize,
    bounds: OpenBox,
    seeds: &[Vec<f64>],
    opts: &OptimizerOptions,
    rng: &mut R,
) -> Result<Maximum>
where
    F: Fn(&[f64]) -> f64,
    R: Rng,
{
    if !(bounds.hi > bounds.lo) {
        return Err(Error::InvalidInput("empty optimization box".into()));
    }
    let pop_size = opts.population.max(2);
    let width = bounds.hi - bounds.lo;
    let mutation = Normal::new(0.0, opts.mutation_scale * width)
        .map_err(|e| Error::InvalidInput(format!("mutation scale: {e}")))?;

    let mut pop: Vec<Vec<f64>> = seeds
        .iter()
        .filter(|s| s.len() == dim)
        .take(pop_size)
        .map(|s| s.iter().map(|&v| bounds.clamp(v)).collect())
        .collect();
    while pop.len() < pop_size {
        pop.push(
            (0..dim)
                .map(|_| bounds.clamp(rng.random_range(bounds.lo..bounds.hi)))
                .collect(),
        );
    }
    let mut fit: Vec<f64> = pop.iter().map(|x| score(&f, x)).collect();
    if fit.iter().all(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "objective is not finite at any initial individual".into(),
        ));
    }

    let mut trace = Vec::with_capacity(opts.generations + opts.max_iter + 1);
    let best_of = |fit: &[f64]| {
        fit.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
    };
    trace.push(TraceEntry {
        iteration: 0,
        phase: Phase::Genetic,
        best: best_of(&fit).1,
    });

    let tour = opts.tournament.max(1);
    let mutation_prob = 1.0 / dim.max(1) as f64;
    for gen in 1..=opts.generations {
        let mut order: Vec<usize> = (0..pop_size).collect();
        order.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]));
        let mut next: Vec<Vec<f64>> = order
            .iter()
            .take(opts.elite.min(pop_size))
            .map(|&i| pop[i].clone())
            .collect();
        let mut next_fit: Vec<f64> = order
            .iter()
            .take(next.len())
            .map(|&i| fit[i])
            .collect();
        let pick = |rng: &mut R| {
            let mut best = rng.random_range(0..pop_size);
            for _ in 1..tour {
                let c = rng.random_range(0..pop_size);
                if fit[c] > fit[best] {
                    best = c;
                }
            }
            best
        };
        while next.len() < pop_size {
            let a = pick(rng);
            let b = pick(rng);
            let mut child: Vec<f64> = if rng.random::<f64>() < opts.crossover_rate {
                pop[a]
                    .iter()
                    .zip(&pop[b])
                    .map(|(x, y)| {
                        let w: f64 = rng.random();
                        w * x + (1.0 - w) * y
                    })
                    .collect()
            } else {
                pop[a].clone()
            };
            let mut mutated = false;
            for v in child.iter_mut() {
                if rng.random::<f64>() < mutation_prob {
                    *v += mutation.sample(rng);
                    mutated = true;
                }
            }
            if !mutated && dim > 0 {
                let j = rng.random_range(0..dim);
                child[j] += mutation.sample(rng);
            }
            for v in child.iter_mut() {
                *v = bounds.clamp(*v);
            }
            next_fit.push(score(&f, &child));
            next.push(child);
        }
        pop = next;
        fit = next_fit;
        trace.push(TraceEntry {
            iteration: gen,
            phase: Phase::Genetic,
            best: best_of(&fit).1,
        });
    }

    let (ib, genetic_best) = best_of(&fit);
    let start = pop[ib].clone();
    let (x, value) = bfgs_logit(&f, &start, genetic_best, bounds, opts, &mut trace);
    Ok(Maximum {
        x,
        value,
        genetic_best,
        trace,
    })
}

fn bfgs_logit<F: Fn(&[f64]) -> f64>(
    f: &F,
    start: &[f64],
    start_value: f64,
    bounds: OpenBox,
    opts: &OptimizerOptions,
    trace: &mut Vec<TraceEntry>,
) -> (Vec<f64>, f64) {
    let n = start.len();
    let eval = |u: &DVector<f64>| {
        let x: Vec<f64> = u.iter().map(|&v| bounds.value_of_logit(v)).collect();
        score(f, &x)
    };
    let grad = |u: &DVector<f64>| {
        let mut g = DVector::zeros(n);
        let mut w = u.clone();
        for i in 0..n {
            let h = 1e-5 * u[i].abs().max(1.0);
            w[i] = u[i] + h;
            let fp = eval(&w);
            w[i] = u[i] - h;
            let fm = eval(&w);
            w[i] = u[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    };

    let mut u = DVector::from_iterator(n, start.iter().map(|&v| bounds.logit_of(v)));
    let mut fu = eval(&u);
    // Round-tripping through the logit can move the point by an ulp.
    let mut best_x: Vec<f64> = start.to_vec();
    let mut best = start_value;
    if fu > best {
        best = fu;
        best_x = u.iter().map(|&v| bounds.value_of_logit(v)).collect();
    }
    if !fu.is_finite() || n == 0 {
        return (best_x, best);
    }
    let mut g = grad(&u);
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut stalls = 0;
    for iter in 1..=opts.max_iter {
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        // Ascent direction.
        let mut dir = &h_inv * &g;
        let mut slope = g.dot(&dir);
        if !(slope > 0.0) {
            h_inv = DMatrix::identity(n, n);
            dir = g.clone();
            slope = g.dot(&dir);
            if !(slope > 0.0) {
                break;
            }
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &u + &dir * step;
            let fc = eval(&cand);
            if fc.is_finite() && fc >= fu + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((u_new, f_new)) = accepted else {
            if h_inv == DMatrix::identity(n, n) {
                break;
            }
            h_inv = DMatrix::identity(n, n);
            continue;
        };
        let g_new = grad(&u_new);
        let s = &u_new - &u;
        // Curvature pair for the minimization of -f.
        let y = &g - &g_new;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            h_inv = left * &h_inv * right + &s * s.transpose() * rho;
        }
        let gain = f_new - fu;
        u = u_new;
        fu = f_new;
        g = g_new;
        if fu > best {
            best = fu;
            best_x = u.iter().map(|&v| bounds.value_of_logit(v)).collect();
        }
        trace.push(TraceEntry {
            iteration: iter,
            phase: Phase::QuasiNewton,
            best,
        });
        if gain <= opts.tolerance * fu.abs().max(1.0) {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    (best_x, best)
}
