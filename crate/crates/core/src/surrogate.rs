//! Response-surface models: linear least squares, full quadratic, and
//! one-dimensional polynomials with degree selection. All expose analytic
//! gradients through [`Surrogate`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{solve_normal_equations, LinalgError};

/// Adjusted-R² window for picking the smallest adequate polynomial degree.
pub const DEGREE_SELECTION_WINDOW: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("fewer than two distinct abscissae")]
    DuplicateAbscissae,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite input data")]
    NonFinite,
}

impl From<LinalgError> for FitError {
    fn from(e: LinalgError) -> Self {
        FitError::RankDeficient(e.to_string())
    }
}

/// A fitted response surface with an analytic gradient.
pub trait Surrogate: Send + Sync {
    fn dim(&self) -> usize;
    fn predict(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Coefficient of determination. Exactly 1 when the residual norm is within
/// `1e-12·‖Q‖`; clamped to `[0, 1]`.
pub fn r_squared(q: &[f64], predicted: &[f64]) -> f64 {
    let n = q.len() as f64;
    let mean = q.iter().sum::<f64>() / n;
    let ss_res: f64 = q.iter().zip(predicted).map(|(a, b)| (a - b).powi(2)).sum();
    let ss_tot: f64 = q.iter().map(|a| (a - mean).powi(2)).sum();
    let q_norm = q.iter().map(|a| a * a).sum::<f64>().sqrt();
    if ss_res.sqrt() <= 1e-12 * q_norm {
        return 1.0;
    }
    if ss_tot == 0.0 {
        return 0.0;
    }
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

fn check_data(x: &[Vec<f64>], q: &[f64]) -> Result<usize, FitError> {
    if x.len() != q.len() {
        return Err(FitError::Shape(format!("{} rows of X but {} values of Q", x.len(), q.len())));
    }
    let m = x.first().map_or(0, Vec::len);
    if m == 0 {
        return Err(FitError::Shape("no input dimensions".to_string()));
    }
    if x.iter().any(|r| r.len() != m) {
        return Err(FitError::Shape("ragged X".to_string()));
    }
    if x.iter().flatten().chain(q).any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    Ok(m)
}

/// `Q̂ = c + bᵀx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSurrogate {
    pub c: f64,
    pub b: Vec<f64>,
    pub r_squared: f64,
    pub n_points: usize,
}

impl Surrogate for LinearSurrogate {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.c + self.b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>()
    }

    fn gradient(&self, _x: &[f64]) -> Vec<f64> {
        self.b.clone()
    }
}

/// Ordinary least squares fit of `c + bᵀx`.
pub fn fit_ols(x: &[Vec<f64>], q: &[f64]) -> Result<LinearSurrogate, FitError> {
    let m = check_data(x, q)?;
    let n = x.len();
    if n < m + 1 {
        return Err(FitError::RankDeficient(format!("{n} points for {} coefficients", m + 1)));
    }
    let design = DMatrix::from_fn(n, m + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let beta = solve_normal_equations(&design, &DVector::from_column_slice(q))?;
    let mut model = LinearSurrogate { c: beta[0], b: beta.iter().skip(1).copied().collect(), r_squared: 0.0, n_points: n };
    let pred: Vec<f64> = x.iter().map(|r| model.predict(r)).collect();
    model.r_squared = r_squared(q, &pred);
    Ok(model)
}

/// `Q̂ = c + bᵀx + xᵀAx` with `A` symmetric; gradient `b + 2Ax`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSurrogate {
    pub c: f64,
    pub b: Vec<f64>,
    /// Symmetric `m × m`, row-major.
    pub a: Vec<Vec<f64>>,
    pub r_squared: f64,
    pub n_points: usize,
}

impl Surrogate for QuadraticSurrogate {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let mut v = self.c;
        for i in 0..self.b.len() {
            v += self.b[i] * x[i];
            for j in 0..self.b.len() {
                v += x[i] * self.a[i][j] * x[j];
            }
        }
        v
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.b.len())
            .map(|i| self.b[i] + 2.0 * (0..self.b.len()).map(|j| self.a[i][j] * x[j]).sum::<f64>())
            .collect()
    }
}

/// Number of coefficients of a full quadratic in `m` variables.
pub fn quadratic_terms(m: usize) -> usize {
    (m + 1) * (m + 2) / 2
}

/// Least-squares fit of a full quadratic. Features are `1, x_i, x_i x_j (i ≤ j)`;
/// cross-term coefficients are split evenly over `A_ij` and `A_ji`.
pub fn fit_quadratic(x: &[Vec<f64>], q: &[f64]) -> Result<QuadraticSurrogate, FitError> {
    let m = check_data(x, q)?;
    let n = x.len();
    let p = quadratic_terms(m);
    if n < p {
        return Err(FitError::RankDeficient(format!("{n} points for {p} quadratic coefficients")));
    }
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    let design = DMatrix::from_fn(n, p, |row, col| {
        let r = &x[row];
        match col {
            0 => 1.0,
            c if c <= m => r[c - 1],
            c => {
                let (i, j) = pairs[c - m - 1];
                r[i] * r[j]
            }
        }
    });
    let beta = solve_normal_equations(&design, &DVector::from_column_slice(q))?;
    let mut a = vec![vec![0.0; m]; m];
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let coef = beta[m + 1 + k];
        if i == j {
            a[i][i] = coef;
        } else {
            a[i][j] = 0.5 * coef;
            a[j][i] = 0.5 * coef;
        }
    }
    let mut model = QuadraticSurrogate {
        c: beta[0],
        b: (1..=m).map(|i| beta[i]).collect(),
        a,
        r_squared: 0.0,
        n_points: n,
    };
    let pred: Vec<f64> = x.iter().map(|r| model.predict(r)).collect();
    model.r_squared = r_squared(q, &pred);
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeFit {
    pub degree: usize,
    pub r_squared: f64,
    pub adjusted_r_squared: f64,
}

/// Polynomial in the scaled abscissa `s = (2x − (lo + hi)) / (hi − lo)`,
/// which maps the domain `[lo, hi]` onto `[−1, 1]`. With domain `(−1, 1)`
/// the coefficients act on `x` directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly1DSurrogate {
    pub degree: usize,
    /// Ascending powers of `s`.
    pub coeffs: Vec<f64>,
    pub domain: (f64, f64),
    pub r_squared: f64,
    /// Every candidate degree that was fitted, for reporting.
    #[serde(default)]
    pub diagnostics: Vec<DegreeFit>,
}

impl Poly1DSurrogate {
    pub fn new(coeffs: Vec<f64>, domain: (f64, f64)) -> Self {
        Self { degree: coeffs.len().saturating_sub(1), coeffs, domain, r_squared: 1.0, diagnostics: Vec::new() }
    }

    fn scale(&self) -> f64 {
        2.0 / (self.domain.1 - self.domain.0)
    }

    fn to_scaled(&self, x: f64) -> f64 {
        (2.0 * x - (self.domain.0 + self.domain.1)) / (self.domain.1 - self.domain.0)
    }

    /// Coefficients of `dp/ds`, ascending powers of `s`.
    pub fn derivative_coeffs(&self) -> Vec<f64> {
        self.coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect()
    }

    pub fn value(&self, x: f64) -> f64 {
        horner(&self.coeffs, self.to_scaled(x))
    }

    /// `dg/dx`.
    pub fn derivative(&self, x: f64) -> f64 {
        horner(&self.derivative_coeffs(), self.to_scaled(x)) * self.scale()
    }

    pub fn is_extrapolation(&self, x: f64) -> bool {
        x < self.domain.0 || x > self.domain.1
    }
}

fn horner(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
}

impl Surrogate for Poly1DSurrogate {
    fn dim(&self) -> usize {
        1
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.value(x[0])
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![self.derivative(x[0])]
    }
}

fn adjusted(r2: f64, n: usize, degree: usize) -> f64 {
    if n <= degree + 1 {
        return r2;
    }
    1.0 - (1.0 - r2) * (n - 1) as f64 / (n - degree - 1) as f64
}

/// Fits degrees `1..=min(max_degree, N − 1)` and keeps the smallest degree
/// whose adjusted R² is within [`DEGREE_SELECTION_WINDOW`] of the best.
pub fn fit_poly1d(x_raw: &[f64], q: &[f64], max_degree: usize) -> Result<Poly1DSurrogate, FitError> {
    if x_raw.len() != q.len() {
        return Err(FitError::Shape(format!("{} abscissae but {} values", x_raw.len(), q.len())));
    }
    if x_raw.iter().chain(q).any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let mut distinct = x_raw.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(FitError::DuplicateAbscissae);
    }
    let n = x_raw.len();
    let domain = (distinct[0], distinct[distinct.len() - 1]);
    let top = max_degree.max(1).min(n - 1).min(distinct.len() - 1);

    let mut fits: Vec<(Poly1DSurrogate, DegreeFit)> = Vec::new();
    for degree in 1..=top {
        let mut model = Poly1DSurrogate::new(vec![0.0; degree + 1], domain);
        let s: Vec<f64> = x_raw.iter().map(|&x| model.to_scaled(x)).collect();
        let design = DMatrix::from_fn(n, degree + 1, |i, k| s[i].powi(k as i32));
        let coeffs = match solve_normal_equations(&design, &DVector::from_column_slice(q)) {
            Ok(c) => c,
            Err(e) if degree > 1 => {
                log::debug!("skipping degree {degree}: {e}");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        model.coeffs = coeffs.iter().copied().collect();
        let pred: Vec<f64> = x_raw.iter().map(|&x| model.value(x)).collect();
        let r2 = r_squared(q, &pred);
        model.r_squared = r2;
        fits.push((model, DegreeFit { degree, r_squared: r2, adjusted_r_squared: adjusted(r2, n, degree) }));
    }

    let best = fits.iter().map(|(_, d)| d.adjusted_r_squared).fold(f64::NEG_INFINITY, f64::max);
    let diagnostics: Vec<DegreeFit> = fits.iter().map(|(_, d)| d.clone()).collect();
    let (mut chosen, _) = fits
        .into_iter()
        .find(|(_, d)| d.adjusted_r_squared >= best - DEGREE_SELECTION_WINDOW)
        .expect("degree 1 always fits");
    chosen.diagnostics = diagnostics;
    Ok(chosen)
}
