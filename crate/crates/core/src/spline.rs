//! Penalized cubic smoothing spline with the smoothing parameter chosen by
//! generalized cross-validation.
//!
//! The spline lives in the not-a-knot cubic B-spline space on the data
//! abscissae (one coefficient per data point) and the roughness penalty is the
//! sum of squared jumps of the third derivative at the interior knots. The
//! penalty vanishes exactly on global cubics, so any cubic polynomial is
//! reproduced for every smoothing parameter, and the limit of a vanishing
//! penalty is the not-a-knot interpolant.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const DEGREE: usize = 3;
const LOG_LAMBDA_MIN: f64 = -12.0;
const LOG_LAMBDA_MAX: f64 = 6.0;
const LOG_LAMBDA_STEP: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct SmoothingSpline {
    knots: Vec<f64>,
    coefs: Vec<f64>,
    origin: f64,
    span: f64,
    /// Smoothing parameter actually used (on the normalized abscissa).
    pub lambda: f64,
    /// GCV score at `lambda`; `None` when the fit is an exact interpolant (four points).
    pub gcv: Option<f64>,
    /// Effective degrees of freedom (trace of the hat matrix).
    pub edf: f64,
}

impl SmoothingSpline {
    /// Fits the spline to `(x, y)`, choosing the smoothing parameter by GCV.
    pub fn fit_gcv(x: &[f64], y: &[f64]) -> Result<Self> {
        let prep = Prepared::new(x, y)?;
        if prep.interior == 0 {
            return prep.solve(0.0).map(|(s, _)| s);
        }
        let scale = prep.scale;

        let mut best: Option<(f64, f64)> = None;
        let steps = ((LOG_LAMBDA_MAX - LOG_LAMBDA_MIN) / LOG_LAMBDA_STEP).round() as usize;
        for i in 0..=steps {
            let s = LOG_LAMBDA_MIN + i as f64 * LOG_LAMBDA_STEP;
            if let Some(score) = prep.gcv(scale * 10f64.powf(s)) {
                if best.is_none_or(|(_, b)| score < b) {
                    best = Some((s, score));
                }
            }
        }
        let (s0, _) = best.ok_or_else(|| {
            Error::Numerical("GCV undefined for every smoothing parameter".into())
        })?;

        // Golden-section refinement in log10(lambda) around the best grid point.
        let objective = |s: f64| prep.gcv(scale * 10f64.powf(s)).unwrap_or(f64::INFINITY);
        let (mut a, mut b) = (s0 - LOG_LAMBDA_STEP, s0 + LOG_LAMBDA_STEP);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (objective(c), objective(d));
        for _ in 0..40 {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = objective(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = objective(d);
            }
        }
        let s_ref = 0.5 * (a + b);
        let s_final = if objective(s_ref) <= objective(s0) { s_ref } else { s0 };
        prep.solve(scale * 10f64.powf(s_final)).map(|(s, _)| s)
    }

    /// Fits with a fixed smoothing parameter (on the normalized abscissa).
    pub fn fit_with_lambda(x: &[f64], y: &[f64], lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("smoothing parameter {lambda}")));
        }
        Prepared::new(x, y)?.solve(lambda).map(|(s, _)| s)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.origin) / self.span;
        basis(&self.knots, u, 0)
            .iter()
            .zip(&self.coefs)
            .map(|(b, c)| b * c)
            .sum()
    }

    /// First derivative with respect to the original abscissa.
    pub fn derivative(&self, x: f64) -> f64 {
        let u = (x - self.origin) / self.span;
        basis(&self.knots, u, 1)
            .iter()
            .zip(&self.coefs)
            .map(|(b, c)| b * c)
            .sum::<f64>()
            / self.span
    }
}

struct Prepared {
    /// LU factors of the square collocation matrix.
    collocation: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// Eigenvalues of the penalty expressed on fitted values.
    eig: Vec<f64>,
    /// Eigenvectors, columns aligned with `eig`.
    basis_u: DMatrix<f64>,
    /// Data in the eigenbasis.
    z: DVector<f64>,
    interior: usize,
    n: usize,
    scale: f64,
    knots: Vec<f64>,
    origin: f64,
    span: f64,
}

impl Prepared {
    fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} abscissae vs {} ordinates",
                n,
                y.len()
            )));
        }
        if n < 4 {
            return Err(Error::InsufficientData(format!(
                "cubic smoothing needs at least 4 points, got {n}"
            )));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("abscissae must be strictly increasing".into()));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite spline input".into()));
        }
        let origin = x[0];
        let span = x[n - 1] - x[0];
        let u: Vec<f64> = x.iter().map(|v| (v - origin) / span).collect();

        let mut knots = vec![u[0]; DEGREE + 1];
        knots.extend_from_slice(&u[2..n - 2]);
        knots.extend(std::iter::repeat_n(u[n - 1], DEGREE + 1));
        let nb = knots.len() - DEGREE - 1;
        debug_assert_eq!(nb, n);

        let mut design = DMatrix::zeros(n, nb);
        for (i, &ui) in u.iter().enumerate() {
            for (j, b) in basis(&knots, ui, 0).into_iter().enumerate() {
                design[(i, j)] = b;
            }
        }

        // Third-derivative jumps at each interior knot.
        let interior = n - 4;
        let mut penalty = DMatrix::zeros(interior, nb);
        for r in 0..interior {
            let k = DEGREE + 1 + r;
            let left = 0.5 * (knots[k - 1] + knots[k]);
            let right = 0.5 * (knots[k] + knots[k + 1]);
            let dl = basis(&knots, left, 3);
            let dr = basis(&knots, right, 3);
            for j in 0..nb {
                penalty[(r, j)] = dr[j] - dl[j];
            }
        }

        // Fitted values f = X c, so the penalty is ||J X^-1 f||^2 = f' K f.
        // Diagonalizing K once makes every smoothing parameter O(n).
        let scale = design.norm_squared() / penalty.norm_squared().max(f64::MIN_POSITIVE);
        let m = design
            .transpose()
            .lu()
            .solve(&penalty.transpose())
            .ok_or_else(|| Error::Singular("spline collocation matrix".into()))?;
        // Cubics are exactly unpenalized: split them off so rounding in the
        // eigensolver cannot leak into their directions.
        let mut aug = DMatrix::zeros(n, n + DEGREE + 1);
        for (i, &ui) in u.iter().enumerate() {
            for p in 0..=DEGREE {
                aug[(i, p)] = (ui - 0.5).powi(p as i32);
            }
            aug[(i, DEGREE + 1 + i)] = 1.0;
        }
        let q = aug.qr().q();
        let complement = q.columns(DEGREE + 1, interior).into_owned();
        let mc = complement.transpose() * &m;
        let mut basis_u = DMatrix::zeros(n, n);
        basis_u.columns_mut(0, DEGREE + 1).copy_from(&q.columns(0, DEGREE + 1));
        let mut eig = vec![0.0; DEGREE + 1];
        if interior > 0 {
            let eigen = (&mc * mc.transpose()).symmetric_eigen();
            basis_u
                .columns_mut(DEGREE + 1, interior)
                .copy_from(&(&complement * &eigen.eigenvectors));
            eig.extend(eigen.eigenvalues.iter().map(|v| v.max(0.0)));
        }
        let collocation = design.lu();
        let z = basis_u.transpose() * DVector::from_column_slice(y);

        Ok(Self {
            collocation,
            eig,
            basis_u,
            z,
            interior,
            n,
            scale,
            knots,
            origin,
            span,
        })
    }

    /// Penalized least squares in the eigenbasis of the penalty,
    /// returning coefficients, residual sum of squares and the hat-matrix trace.
    fn penalized(&self, lambda: f64) -> Option<(DVector<f64>, f64, f64)> {
        let shrink: Vec<f64> = self.eig.iter().map(|d| 1.0 / (1.0 + lambda * d)).collect();
        let edf: f64 = shrink.iter().sum();
        let rss: f64 = shrink
            .iter()
            .zip(self.z.iter())
            .map(|(s, z)| ((1.0 - s) * z).powi(2))
            .sum();
        let shrunk = DVector::from_iterator(self.n, shrink.iter().zip(self.z.iter()).map(|(s, z)| s * z));
        let fitted = &self.basis_u * shrunk;
        let coef = self.collocation.solve(&fitted)?;
        Some((coef, rss, edf))
    }

    fn gcv(&self, lambda: f64) -> Option<f64> {
        let n = self.n as f64;
        let (_, rss, edf) = self.penalized(lambda)?;
        let denom = n - edf;
        if denom <= 1e-9 * n {
            return None;
        }
        Some(n * rss / (denom * denom))
    }

    fn solve(&self, lambda: f64) -> Result<(SmoothingSpline, f64)> {
        let n = self.n as f64;
        let (coef, rss, edf) = self
            .penalized(lambda)
            .ok_or_else(|| Error::Singular("spline collocation matrix".into()))?;
        let denom = n - edf;
        let gcv = (self.interior > 0 && denom > 1e-9 * n).then(|| n * rss / (denom * denom));
        Ok((
            SmoothingSpline {
                knots: self.knots.clone(),
                coefs: coef.iter().copied().collect(),
                origin: self.origin,
                span: self.span,
                lambda,
                gcv,
                edf,
            },
            rss,
        ))
    }
}

/// Values (or `deriv`-th derivatives) of every cubic B-spline on `knots` at `u`.
fn basis(knots: &[f64], u: f64, deriv: usize) -> Vec<f64> {
    basis_rec(knots, u, DEGREE, deriv)
}

fn basis_rec(knots: &[f64], u: f64, degree: usize, deriv: usize) -> Vec<f64> {
    let count = knots.len() - degree - 1;
    if deriv == 0 {
        return cox_de_boor(knots, u, degree);
    }
    let lower = basis_rec(knots, u, degree - 1, deriv - 1);
    let k = degree as f64;
    (0..count)
        .map(|i| {
            let d1 = knots[i + degree] - knots[i];
            let d2 = knots[i + degree + 1] - knots[i + 1];
            let a = if d1 > 0.0 { lower[i] / d1 } else { 0.0 };
            let b = if d2 > 0.0 { lower[i + 1] / d2 } else { 0.0 };
            k * (a - b)
        })
        .collect()
}

fn cox_de_boor(knots: &[f64], u: f64, degree: usize) -> Vec<f64> {
    let m = knots.len();
    let lo = knots[0];
    let hi = knots[m - 1];
    let u = u.clamp(lo, hi);
    // Active interval: t[mu] <= u < t[mu + 1]; the right end maps to the last non-empty interval.
    let mu = if u >= hi {
        (0..m - 1).rev().find(|&i| knots[i] < knots[i + 1]).unwrap_or(0)
    } else {
        (0..m - 1)
            .find(|&i| knots[i] <= u && u < knots[i + 1])
            .unwrap_or(0)
    };
    let mut b = vec![0.0; m - 1];
    b[mu] = 1.0;
    for k in 1..=degree {
        let count = m - k - 1;
        let mut next = vec![0.0; count];
        for i in 0..count {
            let d1 = knots[i + k] - knots[i];
            let d2 = knots[i + k + 1] - knots[i + 1];
            let mut v = 0.0;
            if d1 > 0.0 {
                v += (u - knots[i]) / d1 * b[i];
            }
            if d2 > 0.0 {
                v += (knots[i + k + 1] - u) / d2 * b[i + 1];
            }
            next[i] = v;
        }
        b = next;
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn days(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn partition_of_unity() {
        let x = days(9);
        let y = vec![0.0; 9];
        let prep = Prepared::new(&x, &y).unwrap();
        for u in [0.0, 0.13, 0.5, 0.77, 1.0] {
            let s: f64 = basis(&prep.knots, u, 0).iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
            let ds: f64 = basis(&prep.knots, u, 1).iter().sum();
            assert!(ds.abs() < 1e-10);
        }
    }

    #[test]
    fn reproduces_cubic_for_any_lambda() {
        let x = days(12);
        let f = |t: f64| 2.0 - 0.5 * t + 0.3 * t * t - 0.02 * t * t * t;
        let y: Vec<f64> = x.iter().map(|&t| f(t)).collect();
        for lambda in [1e-6, 1.0, 1e6] {
            let s = SmoothingSpline::fit_with_lambda(&x, &y, lambda).unwrap();
            for k in 0..=110 {
                let t = k as f64 * 0.1;
                assert!((s.eval(t) - f(t)).abs() < 1e-8, "lambda {lambda} t {t} err {}", (s.eval(t) - f(t)).abs());
            }
        }
    }

    #[test]
    fn four_points_interpolate() {
        let x = [0.0, 1.0, 2.5, 4.0];
        let y = [1.0, -1.0, 2.0, 0.5];
        let s = SmoothingSpline::fit_gcv(&x, &y).unwrap();
        for (xi, yi) in x.iter().zip(y) {
            assert!((s.eval(*xi) - yi).abs() < 1e-10);
        }
        assert!(s.gcv.is_none());
    }

    #[test]
    fn gcv_smooths_noise() {
        let x = days(60);
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, &t)| (t / 10.0).sin() + if i % 2 == 0 { 0.2 } else { -0.2 })
            .collect();
        let s = SmoothingSpline::fit_gcv(&x, &y).unwrap();
        assert!(s.edf < 50.0, "edf {}", s.edf);
        let err: f64 = x
            .iter()
            .map(|&t| (s.eval(t) - (t / 10.0).sin()).powi(2))
            .sum::<f64>()
            / 60.0;
        assert!(err < 0.04 * 0.04 * 4.0, "mse {err}");
    }

    #[test]
    fn rejects_short_input() {
        assert!(matches!(
            SmoothingSpline::fit_gcv(&[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::InsufficientData(_))
        ));
    }
}
