//! Study data model and the TOML study file.
//!
//! A study file has the sections `simulation`, `postprocess`, `parameters`,
//! an optional `goal`, and `settings`:
//!
//! ```toml
//! [simulation]
//! description = "decay of turbulent kinetic energy"
//!
//! [simulation.backend]
//! kind = "analytic"
//! analytic_name = "decay"
//!
//! [postprocess]
//! description = "extract the average turbulent kinetic energy"
//!
//! [postprocess.qoi]
//! name = "average_tke"
//!
//! [postprocess.qoi.extraction]
//! mode = "backend-direct"
//!
//! [[parameters]]
//! name = "nu"
//! lower = 0.01
//! upper = 0.1
//!
//! [goal]
//! kind = "target"
//! target = 0.01
//! qoi = "average_tke"
//!
//! [settings]
//! seed = 0
//! theta = 4.0
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendConfig;

pub const DEFAULT_THETA: f64 = 4.0;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("cannot read study file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
}

/// Where a parameter's bounds came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeOrigin {
    /// Stated explicitly by the user.
    #[default]
    Explicit,
    /// ±20 % around the supplied nominal value.
    Nominal,
    /// No range or nominal was available; ±20 % around a unit nominal.
    /// Must be replaced before the study can run.
    Placeholder,
}

impl RangeOrigin {
    fn is_explicit(&self) -> bool {
        *self == RangeOrigin::Explicit
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterDef {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
    #[serde(default, skip_serializing_if = "RangeOrigin::is_explicit")]
    pub range_origin: RangeOrigin,
}

impl ParameterDef {
    pub fn new(name: &str, lower: f64, upper: f64) -> Self {
        Self {
            name: name.to_string(),
            lower,
            upper,
            nominal: None,
            units: None,
            range_origin: RangeOrigin::Explicit,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !is_identifier(&self.name) {
            return Err(format!("parameter name {:?} is not an identifier", self.name));
        }
        if !(self.lower.is_finite() && self.upper.is_finite()) {
            return Err(format!("parameter {}: bounds must be finite", self.name));
        }
        if !(self.lower < self.upper) {
            return Err(format!(
                "parameter {}: lower ({}) must be below upper ({})",
                self.name, self.lower, self.upper
            ));
        }
        if let Some(nom) = self.nominal {
            if !(self.lower <= nom && nom <= self.upper) {
                return Err(format!(
                    "parameter {}: nominal {} outside [{}, {}]",
                    self.name, nom, self.lower, self.upper
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateOp {
    Max,
    Min,
    Mean,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Extraction {
    /// Last numeric capture of `pattern` across files matching `file_pattern`.
    RegexLastMatch { file_pattern: String, pattern: String },
    /// Aggregate over one column of the last file matching `file_pattern`.
    CsvAggregate { file_pattern: String, column: String, op: AggregateOp },
    /// The backend itself produces the scalar (analytic models).
    BackendDirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Affine {
    pub scale: f64,
    pub offset: f64,
}

impl Affine {
    pub fn apply(&self, v: f64) -> f64 {
        self.scale * v + self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QoISpec {
    pub name: String,
    pub extraction: Extraction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<Affine>,
}

impl QoISpec {
    pub fn backend_direct(name: &str) -> Self {
        Self { name: name.to_string(), extraction: Extraction::BackendDirect, transform: None }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !is_identifier(&self.name) {
            return Err(format!("QoI name {:?} is not an identifier", self.name));
        }
        if let Some(t) = &self.transform {
            if t.scale == 0.0 || !t.scale.is_finite() || !t.offset.is_finite() {
                return Err("QoI transform scale must be finite and nonzero".to_string());
            }
        }
        if let Extraction::RegexLastMatch { pattern, .. } = &self.extraction {
            let re = regex::Regex::new(pattern)
                .map_err(|e| format!("QoI pattern does not compile: {e}"))?;
            if re.captures_len() < 2 {
                return Err("QoI pattern needs a capture group".to_string());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalKind {
    Minimize,
    Maximize,
    Target,
    Below,
    MinInputAtTarget,
}

impl GoalKind {
    pub fn needs_target(&self) -> bool {
        matches!(self, GoalKind::Target | GoalKind::Below | GoalKind::MinInputAtTarget)
    }
}

impl fmt::Display for GoalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GoalKind::Minimize => "minimize",
            GoalKind::Maximize => "maximize",
            GoalKind::Target => "target",
            GoalKind::Below => "below",
            GoalKind::MinInputAtTarget => "min_input_at_target",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    pub kind: GoalKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    pub qoi: String,
}

impl GoalSpec {
    pub fn validate(&self) -> Result<(), String> {
        match (self.kind.needs_target(), self.target) {
            (true, None) => Err(format!("goal {} requires a target", self.kind)),
            (false, Some(_)) => Err(format!("goal {} takes no target", self.kind)),
            (true, Some(t)) if !t.is_finite() => Err("goal target must be finite".to_string()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationTask {
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostprocessTask {
    #[serde(default)]
    pub description: String,
    pub qoi: QoISpec,
}

fn default_theta() -> f64 {
    DEFAULT_THETA
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_theta")]
    pub theta: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self { seed: 0, theta: DEFAULT_THETA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub simulation: SimulationTask,
    pub postprocess: PostprocessTask,
    pub parameters: Vec<ParameterDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<GoalSpec>,
    #[serde(default)]
    pub settings: Settings,
}

impl StudySpec {
    pub fn dim(&self) -> usize {
        self.parameters.len()
    }

    pub fn qoi(&self) -> &QoISpec {
        &self.postprocess.qoi
    }

    /// Checks every invariant of the data model; the error names the first
    /// violation found.
    pub fn validate(&self) -> Result<(), StudyError> {
        let fail = |m: String| Err(StudyError::Validation(m));
        if self.parameters.is_empty() {
            return fail("at least one parameter is required".to_string());
        }
        let mut seen = BTreeSet::new();
        for p in &self.parameters {
            if let Err(m) = p.validate() {
                return fail(m);
            }
            if !seen.insert(p.name.as_str()) {
                return fail(format!("duplicate parameter name {:?}", p.name));
            }
        }
        if !(2.0..=10.0).contains(&self.settings.theta) {
            return fail(format!("theta {} outside [2, 10]", self.settings.theta));
        }
        if let Err(m) = self.postprocess.qoi.validate() {
            return fail(m);
        }
        if let Some(goal) = &self.goal {
            if let Err(m) = goal.validate() {
                return fail(m);
            }
        }
        if let Some(backend) = &self.simulation.backend {
            if let Err(m) = backend.validate() {
                return fail(m);
            }
        }
        Ok(())
    }
}

/// Parameter and QoI names: word characters only, not starting with a digit.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_alphanumeric() || c == '_')
}

/// Parses and validates study-file text.
pub fn parse_spec(text: &str) -> Result<StudySpec, StudyError> {
    let spec: StudySpec = toml::from_str(text).map_err(|e| {
        let path = schema_path(text, e.span());
        StudyError::Schema { path, message: e.message().to_string() }
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Best-effort field path for a TOML error: the enclosing table header plus
/// the key on the offending line.
fn schema_path(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    let Some(span) = span else {
        return "<root>".to_string();
    };
    let upto = &text[..span.start.min(text.len())];
    let mut table = String::new();
    for line in upto.lines() {
        let t = line.trim();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').to_string();
        }
    }
    let line_start = upto.rfind('\n').map(|i| i + 1).unwrap_or(0);
    let line_end = text[line_start..].find('\n').map(|i| line_start + i).unwrap_or(text.len());
    let line = text[line_start..line_end].trim();
    let key = line.split('=').next().map(str::trim).filter(|k| !k.starts_with('['));
    match (table.is_empty(), key) {
        (true, Some(k)) => k.to_string(),
        (false, Some(k)) if !k.is_empty() => format!("{table}.{k}"),
        (true, None) => "<root>".to_string(),
        _ => table,
    }
}

pub fn load_spec(path: &Path) -> Result<StudySpec, StudyError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| StudyError::Io { path: path.display().to_string(), source })?;
    parse_spec(&text)
}

/// Canonical study-file text. Deterministic; `parse_spec(render_spec(s)) == s`.
pub fn render_spec(spec: &StudySpec) -> String {
    toml::to_string_pretty(spec).expect("study spec serializes to TOML")
}
