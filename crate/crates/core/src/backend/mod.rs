//! Evaluation of the quantity of interest at parameter points.
//!
//! A backend is either an external process run in a case directory
//! instantiated from a template, or one of the built-in analytic models.

pub mod analytic;
mod batch;
pub mod extract;
mod process;
mod template;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::study::{Extraction, QoISpec};

pub use batch::{run_batch, BatchOptions, BatchOutcome, Dataset, LEDGER_FILE, DATASET_FILE};
pub use extract::{extract_qoi, ExtractError};
pub use process::{run_process, ProcessOutcome};
pub use template::{render_value, substitute_tokens, Substitution};

pub const DEFAULT_TIMEOUT_SECS: f64 = 3600.0;

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECS
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("template {name:?} has no value (in {file})")]
    UnresolvedToken { name: String, file: String },
    #[error("template directory {0} does not exist")]
    MissingTemplate(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("ledger {path} is corrupt at line {line}: {message}")]
    Ledger { path: String, line: usize, message: String },
    #[error("insufficient data: {ok} successful runs, at least {required} required")]
    InsufficientData { ok: usize, required: usize },
    #[error("batch interrupted after {completed} new completions")]
    Interrupted { completed: usize },
    #[error("process backend needs a study directory for its case directories")]
    NoWorkspace,
    #[error("invalid batch options: {0}")]
    InvalidOptions(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    ProcessTemplate {
        template_dir: PathBuf,
        run_command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout: f64,
    },
    Analytic {
        analytic_name: String,
        #[serde(default)]
        analytic_params: BTreeMap<String, f64>,
        #[serde(default = "default_timeout")]
        timeout: f64,
    },
}

impl BackendConfig {
    pub fn analytic(name: &str, params: &[(&str, f64)]) -> Self {
        BackendConfig::Analytic {
            analytic_name: name.to_string(),
            analytic_params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            timeout: DEFAULT_TIMEOUT_SECS,
        }
    }

    pub fn timeout(&self) -> f64 {
        match self {
            BackendConfig::ProcessTemplate { timeout, .. } | BackendConfig::Analytic { timeout, .. } => *timeout,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout() > 0.0) {
            return Err("backend timeout must be positive".to_string());
        }
        match self {
            BackendConfig::ProcessTemplate { template_dir, run_command, .. } => {
                if template_dir.as_os_str().is_empty() {
                    return Err("process backend requires template_dir".to_string());
                }
                if run_command.is_empty() || run_command[0].is_empty() {
                    return Err("process backend requires a non-empty run_command".to_string());
                }
                Ok(())
            }
            BackendConfig::Analytic { analytic_name, analytic_params, .. } => {
                analytic::validate(analytic_name, analytic_params)
            }
        }
    }

    pub fn is_process(&self) -> bool {
        matches!(self, BackendConfig::ProcessTemplate { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    RunFailed,
    ExtractFailed,
    Timeout,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::RunFailed => "run_failed",
            RunStatus::ExtractFailed => "extract_failed",
            RunStatus::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ok" => RunStatus::Ok,
            "run_failed" => RunStatus::RunFailed,
            "extract_failed" => RunStatus::ExtractFailed,
            "timeout" => RunStatus::Timeout,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sample_index: usize,
    pub raw_values: BTreeMap<String, f64>,
    /// Present iff `status` is `Ok`; always finite.
    pub qoi_value: Option<f64>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stdout_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr_path: Option<PathBuf>,
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl RunRecord {
    fn new(point: &CasePoint) -> Self {
        Self {
            sample_index: point.index,
            raw_values: point.values(),
            qoi_value: None,
            status: RunStatus::RunFailed,
            stdout_path: None,
            stderr_path: None,
            wall_time: 0.0,
            message: None,
        }
    }

    fn succeed(mut self, value: f64) -> Self {
        if value.is_finite() {
            self.qoi_value = Some(value);
            self.status = RunStatus::Ok;
        } else {
            self.status = RunStatus::ExtractFailed;
            self.message = Some(format!("non-finite QoI {value}"));
        }
        self
    }

    fn fail(mut self, status: RunStatus, message: impl Into<String>) -> Self {
        self.qoi_value = None;
        self.status = status;
        self.message = Some(message.into());
        self
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

/// One parameter point to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct CasePoint {
    pub index: usize,
    pub names: Vec<String>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl CasePoint {
    pub fn values(&self) -> BTreeMap<String, f64> {
        self.names.iter().cloned().zip(self.raw.iter().copied()).collect()
    }
}

/// Anything that can turn a parameter point into a run record.
///
/// Implementations must capture every failure in the record's status.
pub trait Evaluator: Sync {
    /// `case_dir` is where the case may be materialized; `None` when the
    /// batch has no study directory.
    fn evaluate(&self, point: &CasePoint, case_dir: Option<&Path>) -> RunRecord;

    fn needs_case_dir(&self) -> bool {
        false
    }
}

/// A configured backend together with the QoI it produces.
#[derive(Debug, Clone)]
pub struct Backend {
    pub config: BackendConfig,
    pub qoi: QoISpec,
}

impl Backend {
    pub fn new(config: BackendConfig, qoi: QoISpec) -> Self {
        Self { config, qoi }
    }
}

impl Evaluator for Backend {
    fn evaluate(&self, point: &CasePoint, case_dir: Option<&Path>) -> RunRecord {
        run_case(&self.config, &self.qoi, point, case_dir)
    }

    fn needs_case_dir(&self) -> bool {
        self.config.is_process()
    }
}

/// Evaluates one point. Never fails: errors are folded into the record.
pub fn run_case(
    cfg: &BackendConfig,
    qoi: &QoISpec,
    point: &CasePoint,
    case_dir: Option<&Path>,
) -> RunRecord {
    let started = Instant::now();
    let record = RunRecord::new(point);
    let mut record = match cfg {
        BackendConfig::Analytic { analytic_name, analytic_params, .. } => {
            match analytic::evaluate(analytic_name, analytic_params, &point.normalized, &point.raw) {
                Ok(v) => record.succeed(qoi.transform.map_or(v, |t| t.apply(v))),
                Err(e) => record.fail(RunStatus::RunFailed, e),
            }
        }
        BackendConfig::ProcessTemplate { template_dir, run_command, timeout } => match case_dir {
            None => record.fail(RunStatus::RunFailed, "no case directory"),
            Some(dir) => run_process_case(template_dir, run_command, *timeout, qoi, point, dir, record),
        },
    };
    record.wall_time = started.elapsed().as_secs_f64();
    record
}

fn run_process_case(
    template_dir: &Path,
    run_command: &[String],
    timeout: f64,
    qoi: &QoISpec,
    point: &CasePoint,
    case_dir: &Path,
    record: RunRecord,
) -> RunRecord {
    if let Err(e) = substitute_tokens(template_dir, case_dir, &point.values()) {
        return record.fail(RunStatus::RunFailed, e.to_string());
    }
    let stdout = case_dir.join("stdout.log");
    let stderr = case_dir.join("stderr.log");
    let mut record = record;
    record.stdout_path = Some(stdout.clone());
    record.stderr_path = Some(stderr.clone());

    let env: Vec<(String, String)> = point
        .names
        .iter()
        .zip(&point.raw)
        .map(|(n, v)| (format!("PARAM_{}", n.to_uppercase()), render_value(*v)))
        .collect();
    let limit = Duration::from_secs_f64(timeout);
    match run_process(run_command, case_dir, &env, limit, &stdout, &stderr) {
        ProcessOutcome::Exited(0) => {}
        ProcessOutcome::Exited(code) => {
            return record.fail(RunStatus::RunFailed, format!("command exited with status {code}"))
        }
        ProcessOutcome::Signaled => return record.fail(RunStatus::RunFailed, "command killed by signal"),
        ProcessOutcome::TimedOut => {
            return record.fail(RunStatus::Timeout, format!("command exceeded {timeout} s"))
        }
        ProcessOutcome::SpawnFailed(e) => return record.fail(RunStatus::RunFailed, e),
    }
    let value = match qoi.extraction {
        Extraction::BackendDirect => extract::last_stdout_number(&stdout)
            .map(|v| qoi.transform.map_or(v, |t| t.apply(v))),
        _ => extract_qoi(qoi, case_dir),
    };
    match value {
        Ok(v) => record.succeed(v),
        Err(e) => record.fail(RunStatus::ExtractFailed, e.to_string()),
    }
}
