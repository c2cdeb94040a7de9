//! Normalization to the unit box, default ranges around a nominal value, and
//! sample-plan construction.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Stream;
use crate::study::ParameterDef;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("degenerate range: lower {lower} must be below upper {upper}")]
    DegenerateRange { lower: f64, upper: f64 },
    #[error("nominal value is zero; an explicit range is required")]
    ZeroNominal,
    #[error("oversampling factor {0} outside [2, 10]")]
    ThetaOutOfRange(f64),
    #[error("no parameters to sample")]
    NoParameters,
}

fn check_range(lower: f64, upper: f64) -> Result<(), SamplingError> {
    if lower < upper {
        Ok(())
    } else {
        Err(SamplingError::DegenerateRange { lower, upper })
    }
}

/// Maps a raw value onto the unit interval of `[lower, upper]`.
///
/// Values outside the range are not clamped; validation runs use this to
/// place extrapolated points.
pub fn normalize(x: f64, lower: f64, upper: f64) -> Result<f64, SamplingError> {
    check_range(lower, upper)?;
    Ok((x - lower) / (upper - lower))
}

pub fn denormalize(t: f64, lower: f64, upper: f64) -> Result<f64, SamplingError> {
    check_range(lower, upper)?;
    Ok(lower + t * (upper - lower))
}

/// ±20 % around a nonzero nominal value, ordered ascending.
pub fn default_range(nominal: f64) -> Result<(f64, f64), SamplingError> {
    if nominal == 0.0 || !nominal.is_finite() {
        return Err(SamplingError::ZeroNominal);
    }
    let a = 0.8 * nominal;
    let b = 1.2 * nominal;
    Ok(if a < b { (a, b) } else { (b, a) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    Grid1d,
    IidUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Row-major `N × m`, each coordinate in `[0, 1]`.
    pub points_normalized: Vec<Vec<f64>>,
    /// Row-major `N × m` in raw units.
    pub points_raw: Vec<Vec<f64>>,
    /// Always "uniform".
    pub distribution: String,
    pub seed: u64,
    pub mode: PlanMode,
}

impl SamplePlan {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.points_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points_raw.is_empty()
    }

    /// Header of parameter names, then one row per point in raw units.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.names)?;
        for row in &self.points_raw {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Number of samples for `m` dimensions at oversampling factor `theta`.
pub fn sample_count(m: usize, theta: f64) -> usize {
    if m == 1 {
        (theta.ceil() as usize).max(5)
    } else {
        ((theta * m as f64).ceil() as usize).max(m + 2)
    }
}

/// Builds the sampling plan: an inclusive even grid for one parameter,
/// i.i.d. uniform points otherwise.
pub fn plan_samples(
    params: &[ParameterDef],
    theta: f64,
    seed: u64,
) -> Result<SamplePlan, SamplingError> {
    if params.is_empty() {
        return Err(SamplingError::NoParameters);
    }
    if !(2.0..=10.0).contains(&theta) {
        return Err(SamplingError::ThetaOutOfRange(theta));
    }
    for p in params {
        check_range(p.lower, p.upper)?;
    }
    let m = params.len();
    let n = sample_count(m, theta);

    let (mode, points_normalized): (PlanMode, Vec<Vec<f64>>) = if m == 1 {
        let pts = (0..n)
            .map(|i| {
                // Exact endpoints at i = 0 and i = n - 1.
                let t = if i + 1 == n { 1.0 } else { i as f64 / (n - 1) as f64 };
                vec![t]
            })
            .collect();
        (PlanMode::Grid1d, pts)
    } else {
        let mut stream = Stream::new(seed);
        let pts = (0..n).map(|_| (0..m).map(|_| stream.unit()).collect()).collect();
        (PlanMode::IidUniform, pts)
    };

    let points_raw = points_normalized
        .iter()
        .map(|row| {
            row.iter()
                .zip(params)
                .map(|(&t, p)| if t == 1.0 { p.upper } else { p.lower + t * (p.upper - p.lower) })
                .collect()
        })
        .collect();

    Ok(SamplePlan {
        names: params.iter().map(|p| p.name.clone()).collect(),
        lower: params.iter().map(|p| p.lower).collect(),
        upper: params.iter().map(|p| p.upper).collect(),
        points_normalized,
        points_raw,
        distribution: "uniform".to_string(),
        seed,
        mode,
    })
}
