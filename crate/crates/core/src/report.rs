//! Analysis and optimization artifacts and the fixed-template text report.
//!
//! Every number in the report is a stored artifact field printed at full
//! round-trip precision.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::backend::render_value;
use crate::optimize::{OptResult, ReducedOptimum, TargetSearch, ValidationReport};
use crate::study::{GoalKind, GoalSpec, StudySpec};
use crate::subspace::{ASResult, BootstrapReport, DirectionSource, ReducedModel};
use crate::surrogate::{LinearSurrogate, Poly1DSurrogate, QuadraticSurrogate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Increasing,
    Decreasing,
    NonMonotone,
    Flat,
}

impl Trend {
    /// Classifies sampled curve values in order of increasing abscissa.
    pub fn of(values: &[f64]) -> Self {
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
        let up = values.windows(2).any(|w| w[1] - w[0] > tol);
        let down = values.windows(2).any(|w| w[0] - w[1] > tol);
        match (up, down) {
            (true, false) => Trend::Increasing,
            (false, true) => Trend::Decreasing,
            (true, true) => Trend::NonMonotone,
            (false, false) => Trend::Flat,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Trend::Increasing => "increasing",
            Trend::Decreasing => "decreasing",
            Trend::NonMonotone => "non-monotone",
            Trend::Flat => "flat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneDimAnalysis {
    pub parameter: String,
    pub surface: Poly1DSurrogate,
    pub trend: Trend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceAnalysis {
    pub linear: LinearSurrogate,
    /// Present when the linear fit fell below the R² threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadratic: Option<QuadraticSurrogate>,
    pub active: ASResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_error: Option<String>,
    pub reduced: ReducedModel,
    pub trend: Trend,
    /// Parameter indices by decreasing `|ŵ_i|`.
    pub ranking: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalysisKind {
    OneDim(OneDimAnalysis),
    ActiveSubspace(Box<SubspaceAnalysis>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisArtifact {
    pub qoi: String,
    pub param_names: Vec<String>,
    pub n_ok: usize,
    pub n_total: usize,
    pub model: AnalysisKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptMethod {
    BoundedScalar,
    MinInputAtTarget,
    ReducedModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectOptimum {
    pub x_star: Vec<f64>,
    pub predicted: f64,
    pub result: OptResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationArtifact {
    pub goal: GoalSpec,
    pub method: OptMethod,
    pub param_names: Vec<String>,
    /// Raw units.
    pub x_star: Vec<f64>,
    pub predicted: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<OptResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_search: Option<TargetSearch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced: Option<ReducedOptimum>,
    /// L-BFGS-B on the full surrogate, for comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct: Option<DirectOptimum>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_error: Option<String>,
}

fn goal_line(goal: &GoalSpec) -> String {
    match (goal.kind, goal.target) {
        (GoalKind::Minimize, _) => format!("minimize {}", goal.qoi),
        (GoalKind::Maximize, _) => format!("maximize {}", goal.qoi),
        (GoalKind::Target, Some(t)) => format!("{} near {}", goal.qoi, num(t)),
        (GoalKind::Below, Some(t)) => format!("{} below {}", goal.qoi, num(t)),
        (GoalKind::MinInputAtTarget, Some(t)) => format!("smallest input with {} near {}", goal.qoi, num(t)),
        (kind, None) => format!("{kind} {}", goal.qoi),
    }
}

pub fn render_report(spec: &StudySpec, analysis: &AnalysisArtifact, opt: Option<&OptimizationArtifact>) -> String {
    let mut r = String::new();
    let q = &analysis.qoi;
    let _ = writeln!(r, "Study: {}", spec.simulation.description);
    let _ = writeln!(r, "Quantity of interest: {q}");
    let _ = writeln!(r, "Successful runs: {} of {}", analysis.n_ok, analysis.n_total);
    for p in &spec.parameters {
        let _ = writeln!(r, "Parameter {}: [{}, {}]{}", p.name, num(p.lower), num(p.upper), units(p.units.as_deref()));
    }
    r.push('\n');

    match &analysis.model {
        AnalysisKind::OneDim(a) => {
            let _ = writeln!(
                r,
                "Response surface: polynomial of degree {} in {}, R^2 = {}",
                a.surface.degree, a.parameter, num(a.surface.r_squared)
            );
            let _ = writeln!(
                r,
                "Trend: {q} is {} in {} over [{}, {}]",
                a.trend.as_str(),
                a.parameter,
                num(a.surface.domain.0),
                num(a.surface.domain.1)
            );
        }
        AnalysisKind::ActiveSubspace(a) => {
            match (&a.quadratic, a.active.source) {
                (Some(quad), DirectionSource::Quadratic) => {
                    let _ = writeln!(
                        r,
                        "Surrogate: quadratic response surface, R^2 = {} (linear fit R^2 = {} was inadequate)",
                        num(quad.r_squared), num(a.linear.r_squared)
                    );
                }
                _ => {
                    let _ = writeln!(r, "Surrogate: linear least squares, R^2 = {}", num(a.linear.r_squared));
                }
            }
            let _ = writeln!(r, "Active direction, ranked by magnitude:");
            for (rank, &i) in a.ranking.iter().enumerate() {
                let ci = a
                    .bootstrap
                    .as_ref()
                    .map(|b| format!(" (95% interval {} to {})", num(b.per_component_ci[i].0), num(b.per_component_ci[i].1)))
                    .unwrap_or_default();
                let _ = writeln!(r, "  {}. {}: {}{ci}", rank + 1, a.active.param_names[i], num(a.active.w_hat[i]));
            }
            let eig: Vec<String> = a.active.eigenvalues.iter().map(|v| num(*v)).collect();
            let _ = writeln!(r, "Eigenvalues: {}", eig.join(", "));
            match a.active.split_n {
                Some(n) => {
                    let _ = writeln!(r, "Eigenvalue gap after direction {n}");
                }
                None => {
                    let _ = writeln!(r, "No dominant eigenvalue gap");
                }
            }
            match (&a.bootstrap, &a.bootstrap_error) {
                (Some(b), _) => {
                    let _ = writeln!(
                        r,
                        "Bootstrap ({} replicates): angle to the fitted direction between {} and {} rad",
                        b.replicates, num(b.angle_ci.0), num(b.angle_ci.1)
                    );
                }
                (None, Some(e)) => {
                    let _ = writeln!(r, "Bootstrap unavailable: {e}");
                }
                (None, None) => {}
            }
            let _ = writeln!(
                r,
                "Reduced model g(z): polynomial of degree {}, R^2 = {}",
                a.reduced.g.degree, num(a.reduced.r_squared)
            );
            let _ = writeln!(r, "Trend: {q} is {} along the active direction", a.trend.as_str());
        }
    }

    if let Some(o) = opt {
        r.push('\n');
        let _ = writeln!(r, "Goal: {}", goal_line(&o.goal));
        let method = match o.method {
            OptMethod::BoundedScalar => "bounded scalar search on the response surface",
            OptMethod::MinInputAtTarget => "scan and bisection on the response surface",
            OptMethod::ReducedModel => "bounded search on g(z), mapped back along the active direction",
        };
        let _ = writeln!(r, "Method: {method}");
        for (name, v) in o.param_names.iter().zip(&o.x_star) {
            let _ = writeln!(r, "Optimized {name}: {}", num(*v));
        }
        let _ = writeln!(r, "Predicted {q}: {}", num(o.predicted));
        if let Some(t) = &o.target_search {
            if !t.reached {
                let _ = writeln!(r, "Target not reached within tolerance; closest point reported");
            }
        }
        if let Some(red) = &o.reduced {
            let _ = writeln!(r, "Active variable optimum: z = {}", num(red.z_star));
            if red.clamped {
                let _ = writeln!(r, "Box clamping moved the active variable to z = {}", num(red.z_achieved));
            }
        }
        if let Some(d) = &o.direct {
            let xs: Vec<String> = d.x_star.iter().map(|v| num(*v)).collect();
            let _ = writeln!(r, "Full-surrogate optimum for comparison: ({}), predicted {q}: {}", xs.join(", "), num(d.predicted));
        }
        match (&o.validation, &o.validation_error) {
            (Some(v), _) => {
                let _ = writeln!(r, "Validated {q}: {} (relative error {})", num(v.actual), num(v.rel_error));
            }
            (None, Some(e)) => {
                let _ = writeln!(r, "Validation unavailable: {e}");
            }
            (None, None) => {}
        }
    }
    r
}

fn num(v: f64) -> String {
    render_value(v)
}

fn units(u: Option<&str>) -> String {
    u.map(|u| format!(" {u}")).unwrap_or_default()
}
