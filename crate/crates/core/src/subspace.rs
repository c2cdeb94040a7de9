//! Active directions from fitted surrogates, bootstrap confidence for the
//! OLS direction, and the reduced one-dimensional model `g(z)`, `z = ŵᵀx`.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{complete_orthonormal_basis, symmetric_eigen, LinalgError};
use crate::rng::Stream;
use crate::surrogate::{fit_ols, fit_poly1d, FitError, LinearSurrogate, Poly1DSurrogate, QuadraticSurrogate, Surrogate};

pub const GAP_RATIO: f64 = 10.0;
pub const DEFAULT_REPLICATES: usize = 200;
pub const MIN_REPLICATES: usize = 10;
/// Redraw budget for one bootstrap replicate.
pub const MAX_REDRAWS: usize = 20;
pub const REDUCED_MAX_DEGREE: usize = 3;
pub const CURVE_POINTS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubspaceError {
    #[error("gradient is zero; no active direction")]
    ZeroGradient,
    #[error("eigendecomposition failed: {0}")]
    EigenNoConvergence(LinalgError),
    #[error("bootstrap needs at least {MIN_REPLICATES} replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("bootstrap degenerate: {failed} of {attempts} resamples were rank deficient")]
    BootstrapDegenerate { failed: usize, attempts: usize },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionSource {
    OlsRank1,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ASResult {
    pub w_hat: Vec<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// `m × m`, row-major; column `k` is the eigenvector of `eigenvalues[k]`.
    pub w: Vec<Vec<f64>>,
    pub split_n: Option<usize>,
    pub source: DirectionSource,
    pub param_names: Vec<String>,
    /// The matrix that was decomposed, row-major.
    pub c_hat: Vec<Vec<f64>>,
}

impl ASResult {
    pub fn dim(&self) -> usize {
        self.w_hat.len()
    }

    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        self.w.iter().map(|row| row[k]).collect()
    }
}

/// Flips `v` so that its largest-magnitude component (first on ties) is
/// nonnegative.
pub fn apply_sign_convention(v: &mut [f64]) {
    let mut lead = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[lead].abs() {
            lead = i;
        }
    }
    if v[lead] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Index `n` (1-based) of the largest ratio `λ_n / λ_{n+1}` when it exceeds
/// [`GAP_RATIO`].
pub fn eigen_gap(eigenvalues: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for n in 1..eigenvalues.len() {
        let ratio = eigenvalues[n - 1] / (eigenvalues[n].max(0.0) + 1e-300);
        if best.is_none_or(|(_, r)| ratio > r) {
            best = Some((n, ratio));
        }
    }
    best.filter(|&(_, r)| r > GAP_RATIO).map(|(n, _)| n)
}

fn default_names(m: usize) -> Vec<String> {
    (1..=m).map(|i| format!("x{i}")).collect()
}

/// Rank-one active direction `ŵ = b/‖b‖` with `λ̂ = ‖b‖²`.
pub fn active_direction_ols(lin: &LinearSurrogate, names: Option<&[String]>) -> Result<ASResult, SubspaceError> {
    let b = &lin.b;
    let norm_sq: f64 = b.iter().map(|v| v * v).sum();
    let norm = norm_sq.sqrt();
    if !(norm > 1e-14) {
        return Err(SubspaceError::ZeroGradient);
    }
    let mut w_hat: Vec<f64> = b.iter().map(|v| v / norm).collect();
    apply_sign_convention(&mut w_hat);
    let m = b.len();
    let mut eigenvalues = vec![0.0; m];
    eigenvalues[0] = norm_sq;
    let c_hat: Vec<Vec<f64>> = b.iter().map(|bi| b.iter().map(|bj| bi * bj).collect()).collect();
    Ok(ASResult {
        w: to_rows(&complete_orthonormal_basis(&w_hat)),
        w_hat,
        eigenvalues,
        split_n: if m > 1 { Some(1) } else { None },
        source: DirectionSource::OlsRank1,
        param_names: names.map_or_else(|| default_names(m), <[String]>::to_vec),
        c_hat,
    })
}

/// Active subspace of a quadratic surrogate from the sample average of
/// gradient outer products over `x`.
pub fn active_subspace_quadratic(
    quad: &QuadraticSurrogate,
    x: &[Vec<f64>],
    names: Option<&[String]>,
) -> Result<ASResult, SubspaceError> {
    let m = quad.dim();
    if x.is_empty() || x.iter().any(|r| r.len() != m) {
        return Err(SubspaceError::Shape(format!("need a non-empty N x {m} sample")));
    }
    let mut c = DMatrix::<f64>::zeros(m, m);
    for row in x {
        let g = quad.gradient(row);
        for i in 0..m {
            for j in 0..m {
                c[(i, j)] += g[i] * g[j];
            }
        }
    }
    c /= x.len() as f64;
    let eig = symmetric_eigen(&c).map_err(SubspaceError::EigenNoConvergence)?;
    if !(eig.values[0] > 0.0) {
        return Err(SubspaceError::ZeroGradient);
    }
    let mut vectors = eig.vectors.clone();
    for k in 0..m {
        let mut col: Vec<f64> = vectors.column(k).iter().copied().collect();
        apply_sign_convention(&mut col);
        vectors.set_column(k, &nalgebra::DVector::from_vec(col));
    }
    let w_hat: Vec<f64> = vectors.column(0).iter().copied().collect();
    Ok(ASResult {
        w_hat,
        split_n: eigen_gap(&eig.values),
        eigenvalues: eig.values,
        w: to_rows(&vectors),
        source: DirectionSource::Quadratic,
        param_names: names.map_or_else(|| default_names(m), <[String]>::to_vec),
        c_hat: to_rows(&c),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub replicates: usize,
    /// 2.5th and 97.5th percentiles of each component of ŵ.
    pub per_component_ci: Vec<(f64, f64)>,
    /// Same percentiles of the angle to the reference ŵ, radians.
    pub angle_ci: (f64, f64),
    pub seed: u64,
    /// Resamples discarded as rank deficient and redrawn.
    pub redrawn: usize,
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Angle between unit vectors, stable near zero.
pub fn angle_between(u: &[f64], v: &[f64]) -> f64 {
    let diff: f64 = u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let sum: f64 = u.iter().zip(v).map(|(a, b)| (a + b).powi(2)).sum::<f64>().sqrt();
    2.0 * diff.atan2(sum)
}

fn unit_direction(lin: &LinearSurrogate) -> Option<Vec<f64>> {
    let norm = lin.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    (norm > 1e-14).then(|| lin.b.iter().map(|v| v / norm).collect())
}

/// Row-resampling bootstrap of the OLS direction. Replicate `r` draws from
/// its own substream of `seed`, so results do not depend on evaluation order.
pub fn bootstrap_direction(
    x: &[Vec<f64>],
    q: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<BootstrapReport, SubspaceError> {
    if replicates < MIN_REPLICATES {
        return Err(SubspaceError::TooFewReplicates(replicates));
    }
    let reference = active_direction_ols(&fit_ols(x, q)?, None)?.w_hat;
    let m = reference.len();
    let n = x.len();

    let mut failed = 0;
    let mut attempts = 0;
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let mut stream = Stream::substream(seed, r as u64);
        let mut found = None;
        for _ in 0..=MAX_REDRAWS {
            attempts += 1;
            let idx: Vec<usize> = (0..n).map(|_| stream.index(n)).collect();
            let xs: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
            let qs: Vec<f64> = idx.iter().map(|&i| q[i]).collect();
            match fit_ols(&xs, &qs).ok().as_ref().and_then(unit_direction) {
                Some(w) => {
                    found = Some(w);
                    break;
                }
                None => failed += 1,
            }
        }
        match found {
            Some(mut w) => {
                if w.iter().zip(&reference).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
                    w.iter_mut().for_each(|v| *v = -*v);
                }
                directions.push(w);
            }
            None => return Err(SubspaceError::BootstrapDegenerate { failed, attempts }),
        }
    }
    if 2 * failed > attempts {
        return Err(SubspaceError::BootstrapDegenerate { failed, attempts });
    }

    let interval = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (percentile(&v, 0.025), percentile(&v, 0.975))
    };
    let per_component_ci = (0..m).map(|k| interval(directions.iter().map(|w| w[k]).collect())).collect();
    let angle_ci = interval(directions.iter().map(|w| angle_between(w, &reference)).collect());
    Ok(BootstrapReport { replicates, per_component_ci, angle_ci, seed, redrawn: failed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedModel {
    pub z_values: Vec<f64>,
    pub g: Poly1DSurrogate,
    pub r_squared: f64,
}

pub fn project(x: &[f64], w_hat: &[f64]) -> f64 {
    x.iter().zip(w_hat).map(|(a, b)| a * b).sum()
}

/// Fits `g(z)` to `(ŵᵀx_j, Q_j)`.
pub fn build_reduced_model(x: &[Vec<f64>], q: &[f64], w_hat: &[f64]) -> Result<ReducedModel, SubspaceError> {
    if x.len() != q.len() || x.iter().any(|r| r.len() != w_hat.len()) {
        return Err(SubspaceError::Shape("X, Q and ŵ disagree".to_string()));
    }
    let z_values: Vec<f64> = x.iter().map(|r| project(r, w_hat)).collect();
    let g = fit_poly1d(&z_values, q, REDUCED_MAX_DEGREE)?;
    Ok(ReducedModel { r_squared: g.r_squared, z_values, g })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPlotData {
    pub points: Vec<(f64, f64)>,
    pub curve: Vec<(f64, f64)>,
    pub component_bars: Vec<(String, f64)>,
}

impl SummaryPlotData {
    pub fn write_scatter_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        write_pairs(out, ["z", "q"], &self.points)
    }

    pub fn write_curve_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        write_pairs(out, ["z", "g"], &self.curve)
    }

    pub fn write_bars_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["parameter", "component"])?;
        for (name, v) in &self.component_bars {
            w.write_record([name.clone(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn write_pairs<W: Write>(out: W, header: [&str; 2], rows: &[(f64, f64)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for (a, b) in rows {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Scatter of `(ŵᵀx_j, Q_j)`, `g` sampled on [`CURVE_POINTS`] points over the
/// observed `z` range, and ŵ components in parameter order.
pub fn summary_data(
    x: &[Vec<f64>],
    q: &[f64],
    w_hat: &[f64],
    g: &Poly1DSurrogate,
    names: &[String],
) -> SummaryPlotData {
    let points: Vec<(f64, f64)> = x.iter().zip(q).map(|(r, &v)| (project(r, w_hat), v)).collect();
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let curve = (0..CURVE_POINTS)
        .map(|i| {
            let z = if i + 1 == CURVE_POINTS { hi } else { lo + (hi - lo) * i as f64 / (CURVE_POINTS - 1) as f64 };
            (z, g.value(z))
        })
        .collect();
    let component_bars = names.iter().cloned().zip(w_hat.iter().copied()).collect();
    SummaryPlotData { points, curve, component_bars }
}
