//! The `run → analyze → optimize → report` pipeline over a study directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{run_batch, Backend, BackendConfig, BackendError, BatchOptions, Dataset, DATASET_FILE};
use crate::optimize::{
    compile_objective, min_input_at_target, minimize_lbfgsb, minimize_scalar_bounded, optimize_reduced,
    validate_optimum, LbfgsOptions, OptResult, OptimizeError, TARGET_REL_TOL,
};
use crate::report::{
    render_report, AnalysisArtifact, AnalysisKind, DirectOptimum, OneDimAnalysis, OptMethod, OptimizationArtifact,
    SubspaceAnalysis, Trend,
};
use crate::sampling::{plan_samples, SamplingError};
use crate::study::{load_spec, parse_spec, render_spec, GoalKind, RangeOrigin, StudyError, StudySpec};
use crate::subspace::{
    active_direction_ols, active_subspace_quadratic, bootstrap_direction, build_reduced_model, summary_data,
    SubspaceError, SummaryPlotData, CURVE_POINTS, DEFAULT_REPLICATES, REDUCED_MAX_DEGREE,
};
use crate::surrogate::{fit_ols, fit_poly1d, fit_quadratic, quadratic_terms, FitError, Surrogate};
use crate::svg;

pub const WORKSPACE_ENV: &str = "PARAMSTUDY_WORKSPACE";
pub const DEFAULT_WORKSPACE: &str = "studies";
pub const SPEC_FILE: &str = "study.toml";
pub const ANALYSIS_FILE: &str = "analysis.json";
pub const OPTIMIZATION_FILE: &str = "optimization.json";
pub const SCATTER_FILE: &str = "summary_scatter.csv";
pub const CURVE_FILE: &str = "summary_curve.csv";
pub const BARS_FILE: &str = "component_bars.csv";
pub const TRACE_FILE: &str = "opt_trace.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const RESPONSE_SVG: &str = "response.svg";
pub const BARS_SVG: &str = "bars.svg";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Below this linear R² the quadratic surrogate is used when enough samples exist.
pub const OLS_R2_THRESHOLD: f64 = 0.9;
pub const SCALAR_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{message} (hint: {hint})")]
    Fit { message: String, hint: String },
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error("{0}")]
    Usage(String),
    #[error("missing {path}; {hint}")]
    MissingArtifact { path: String, hint: String },
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Artifact { path: String, message: String },
}

impl WorkflowError {
    /// 2 for spec and usage problems, 3 for backend failures, 4 for
    /// insufficient data.
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkflowError::Study(_)
            | WorkflowError::Sampling(_)
            | WorkflowError::Usage(_)
            | WorkflowError::MissingArtifact { .. }
            | WorkflowError::Optimize(_) => 2,
            WorkflowError::Backend(BackendError::InsufficientData { .. }) | WorkflowError::Fit { .. } => 4,
            WorkflowError::Backend(_) | WorkflowError::Io { .. } | WorkflowError::Artifact { .. } => 3,
        }
    }
}

fn fit_error(e: impl std::fmt::Display) -> WorkflowError {
    WorkflowError::Fit {
        message: e.to_string(),
        hint: "add samples (raise theta) or widen degenerate parameter ranges".to_string(),
    }
}

impl From<FitError> for WorkflowError {
    fn from(e: FitError) -> Self {
        fit_error(e)
    }
}

impl From<SubspaceError> for WorkflowError {
    fn from(e: SubspaceError) -> Self {
        fit_error(e)
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> WorkflowError + '_ {
    move |source| WorkflowError::Io { path: path.display().to_string(), source }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), WorkflowError> {
    fs::write(path, contents).map_err(io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), WorkflowError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| WorkflowError::Artifact {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write(path, text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, hint: &str) -> Result<T, WorkflowError> {
    if !path.exists() {
        return Err(WorkflowError::MissingArtifact { path: path.display().to_string(), hint: hint.to_string() });
    }
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text)
        .map_err(|e| WorkflowError::Artifact { path: path.display().to_string(), message: e.to_string() })
}

fn csv_text(f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("in-memory csv");
    buf
}

/// Workspace root: the explicit argument, then `$PARAMSTUDY_WORKSPACE`, then `./studies`.
pub fn workspace_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(WORKSPACE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_WORKSPACE))
}

/// `<workspace>/<spec file stem>`.
pub fn study_dir_for(spec_path: &Path, workspace: Option<&Path>) -> PathBuf {
    let stem = spec_path.file_stem().map_or_else(|| "study".into(), |s| s.to_string_lossy().into_owned());
    workspace_root(workspace).join(stem)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub theta: Option<f64>,
    pub workspace: Option<PathBuf>,
    pub stop_after: Option<usize>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub study_dir: PathBuf,
    pub dataset: Dataset,
    pub executed: usize,
    pub reused: usize,
}

fn prepare_spec(spec_path: &Path, opts: &RunOptions) -> Result<StudySpec, WorkflowError> {
    let mut spec = load_spec(spec_path)?;
    if let Some(seed) = opts.seed {
        spec.settings.seed = seed;
    }
    if let Some(theta) = opts.theta {
        spec.settings.theta = theta;
    }
    spec.validate()?;
    if let Some(p) = spec.parameters.iter().find(|p| p.range_origin == RangeOrigin::Placeholder) {
        return Err(WorkflowError::Usage(format!(
            "parameter {} has a placeholder range; give explicit bounds or a nominal value",
            p.name
        )));
    }
    if let Some(BackendConfig::ProcessTemplate { template_dir, .. }) = spec.simulation.backend.as_mut() {
        if template_dir.is_relative() {
            let base = spec_path.parent().unwrap_or(Path::new(""));
            let base = if base.is_absolute() {
                base.to_path_buf()
            } else {
                std::env::current_dir().map_err(io(base))?.join(base)
            };
            *template_dir = base.join(&*template_dir);
        }
    }
    Ok(spec)
}

/// Samples the study, evaluates every case (resuming from the ledger), and
/// writes `dataset.csv`.
pub fn cmd_run(spec_path: &Path, opts: &RunOptions) -> Result<RunSummary, WorkflowError> {
    let spec = prepare_spec(spec_path, opts)?;
    let backend_cfg = spec
        .simulation
        .backend
        .clone()
        .ok_or_else(|| WorkflowError::Usage("the study has no backend configured".to_string()))?;
    let study_dir = study_dir_for(spec_path, opts.workspace.as_deref());
    fs::create_dir_all(&study_dir).map_err(io(&study_dir))?;
    write(&study_dir.join(SPEC_FILE), render_spec(&spec))?;

    let plan = plan_samples(&spec.parameters, spec.settings.theta, spec.settings.seed)?;
    let backend = Backend::new(backend_cfg, spec.qoi().clone());
    let workers = opts
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let batch = BatchOptions { max_workers: workers, study_dir: Some(study_dir.clone()), stop_after: opts.stop_after };
    let outcome = run_batch(&backend, &spec.parameters, spec.qoi(), &plan, &batch)?;
    log::info!(
        "{} cases: {} executed, {} reused, {} ok",
        plan.len(),
        outcome.executed,
        outcome.reused,
        outcome.dataset.n_ok()
    );
    write_manifest(&study_dir)?;
    Ok(RunSummary { study_dir, dataset: outcome.dataset, executed: outcome.executed, reused: outcome.reused })
}

pub fn load_study(study_dir: &Path) -> Result<(StudySpec, Dataset), WorkflowError> {
    let spec_path = study_dir.join(SPEC_FILE);
    if !spec_path.exists() {
        return Err(WorkflowError::MissingArtifact {
            path: spec_path.display().to_string(),
            hint: "run the study first".to_string(),
        });
    }
    let spec = parse_spec(&fs::read_to_string(&spec_path).map_err(io(&spec_path))?)?;
    let data_path = study_dir.join(DATASET_FILE);
    if !data_path.exists() {
        return Err(WorkflowError::MissingArtifact {
            path: data_path.display().to_string(),
            hint: "run the study first".to_string(),
        });
    }
    let dataset = Dataset::read_csv(&data_path, &spec.parameters, spec.qoi())?;
    Ok((spec, dataset))
}

/// Ordering of parameters by decreasing `|component|`, ties by index.
pub fn rank_components(w: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
    idx
}

/// Fits the surrogates, writes the analysis bundle and the report.
pub fn cmd_analyze(study_dir: &Path) -> Result<AnalysisArtifact, WorkflowError> {
    let (spec, data) = load_study(study_dir)?;
    if data.n_ok() < data.required_ok() {
        return Err(BackendError::InsufficientData { ok: data.n_ok(), required: data.required_ok() }.into());
    }
    let names: Vec<String> = spec.parameters.iter().map(|p| p.name.clone()).collect();
    let qoi = spec.qoi().name.clone();
    for stale in [OPTIMIZATION_FILE, TRACE_FILE, BARS_FILE, BARS_SVG] {
        let path = study_dir.join(stale);
        if path.exists() {
            fs::remove_file(&path).map_err(io(&path))?;
        }
    }

    let model = if data.dim() == 1 {
        let raw: Vec<f64> = data.raw_ok().into_iter().map(|r| r[0]).collect();
        let surface = fit_poly1d(&raw, &data.q, REDUCED_MAX_DEGREE)?;
        let (lo, hi) = surface.domain;
        let curve: Vec<(f64, f64)> = (0..CURVE_POINTS)
            .map(|i| {
                let x = if i + 1 == CURVE_POINTS { hi } else { lo + (hi - lo) * i as f64 / (CURVE_POINTS - 1) as f64 };
                (x, surface.value(x))
            })
            .collect();
        let plot = SummaryPlotData {
            points: raw.iter().copied().zip(data.q.iter().copied()).collect(),
            curve,
            component_bars: Vec::new(),
        };
        write(&study_dir.join(SCATTER_FILE), csv_text(|b| plot.write_scatter_csv(b)))?;
        write(&study_dir.join(CURVE_FILE), csv_text(|b| plot.write_curve_csv(b)))?;
        write(&study_dir.join(RESPONSE_SVG), svg::scatter_curve(&plot.points, &plot.curve, &names[0], &qoi))?;
        let trend = Trend::of(&plot.curve.iter().map(|p| p.1).collect::<Vec<_>>());
        AnalysisKind::OneDim(OneDimAnalysis { parameter: names[0].clone(), surface, trend })
    } else {
        let m = data.dim();
        let linear = fit_ols(&data.x, &data.q)?;
        let (quadratic, active) = if linear.r_squared < OLS_R2_THRESHOLD && data.n_ok() >= quadratic_terms(m) {
            log::info!("linear R^2 {} below {OLS_R2_THRESHOLD}; using the quadratic surrogate", linear.r_squared);
            let quad = fit_quadratic(&data.x, &data.q)?;
            let active = active_subspace_quadratic(&quad, &data.x, Some(&names))?;
            (Some(quad), active)
        } else {
            (None, active_direction_ols(&linear, Some(&names))?)
        };
        let (bootstrap, bootstrap_error) =
            match bootstrap_direction(&data.x, &data.q, DEFAULT_REPLICATES, spec.settings.seed) {
                Ok(b) => (Some(b), None),
                Err(e) => {
                    log::warn!("bootstrap skipped: {e}");
                    (None, Some(e.to_string()))
                }
            };
        let reduced = build_reduced_model(&data.x, &data.q, &active.w_hat)?;
        let plot = summary_data(&data.x, &data.q, &active.w_hat, &reduced.g, &names);
        write(&study_dir.join(SCATTER_FILE), csv_text(|b| plot.write_scatter_csv(b)))?;
        write(&study_dir.join(CURVE_FILE), csv_text(|b| plot.write_curve_csv(b)))?;
        write(&study_dir.join(BARS_FILE), csv_text(|b| plot.write_bars_csv(b)))?;
        write(&study_dir.join(RESPONSE_SVG), svg::scatter_curve(&plot.points, &plot.curve, "active variable z", &qoi))?;
        write(&study_dir.join(BARS_SVG), svg::bars(&plot.component_bars, "active direction component"))?;
        let trend = Trend::of(&plot.curve.iter().map(|p| p.1).collect::<Vec<_>>());
        AnalysisKind::ActiveSubspace(Box::new(SubspaceAnalysis {
            linear,
            quadratic,
            ranking: rank_components(&active.w_hat),
            active,
            bootstrap,
            bootstrap_error,
            reduced,
            trend,
        }))
    };

    let artifact = AnalysisArtifact { qoi, param_names: names, n_ok: data.n_ok(), n_total: data.records.len(), model };
    write_json(&study_dir.join(ANALYSIS_FILE), &artifact)?;
    write(&study_dir.join(REPORT_FILE), render_report(&spec, &artifact, None))?;
    write_manifest(study_dir)?;
    Ok(artifact)
}

fn load_analysis(study_dir: &Path) -> Result<AnalysisArtifact, WorkflowError> {
    read_json(&study_dir.join(ANALYSIS_FILE), "run analyze first")
}

/// Optimizes the goal on the fitted surrogate, validates against the
/// backend, and updates the report.
pub fn cmd_optimize(study_dir: &Path) -> Result<OptimizationArtifact, WorkflowError> {
    let (spec, _) = load_study(study_dir)?;
    let goal = spec
        .goal
        .clone()
        .ok_or_else(|| WorkflowError::Usage("the study has no optimization goal".to_string()))?;
    let analysis = load_analysis(study_dir)?;
    let names = analysis.param_names.clone();
    let lower: Vec<f64> = spec.parameters.iter().map(|p| p.lower).collect();
    let upper: Vec<f64> = spec.parameters.iter().map(|p| p.upper).collect();

    let mut artifact = match &analysis.model {
        AnalysisKind::OneDim(a) => {
            let surface = &a.surface;
            if goal.kind == GoalKind::MinInputAtTarget {
                let target = goal.target.ok_or(OptimizeError::MissingTarget(goal.kind))?;
                let hit = min_input_at_target(surface, target, TARGET_REL_TOL);
                OptimizationArtifact {
                    goal: goal.clone(),
                    method: OptMethod::MinInputAtTarget,
                    param_names: names.clone(),
                    x_star: vec![hit.x],
                    predicted: hit.value,
                    search: None,
                    target_search: Some(hit),
                    reduced: None,
                    direct: None,
                    validation: None,
                    validation_error: None,
                }
            } else {
                let (lo, hi) = surface.domain;
                let obj = compile_objective(&goal, surface, vec![lo], vec![hi])?;
                let search = minimize_scalar_bounded(|x| (obj.eval)(&[x]), lo, hi, SCALAR_TOL)?;
                OptimizationArtifact {
                    goal: goal.clone(),
                    method: OptMethod::BoundedScalar,
                    param_names: names.clone(),
                    x_star: search.x_star.clone(),
                    predicted: surface.value(search.x_star[0]),
                    search: Some(search),
                    target_search: None,
                    reduced: None,
                    direct: None,
                    validation: None,
                    validation_error: None,
                }
            }
        }
        AnalysisKind::ActiveSubspace(a) => {
            if goal.kind == GoalKind::MinInputAtTarget {
                return Err(OptimizeError::UnsupportedGoal(goal.kind).into());
            }
            let red = optimize_reduced(&a.reduced, &a.active.w_hat, &goal, &lower, &upper, SCALAR_TOL)?;
            let full: &dyn Surrogate = match &a.quadratic {
                Some(q) => q,
                None => &a.linear,
            };
            let m = names.len();
            let obj = compile_objective(&goal, full, vec![0.0; m], vec![1.0; m])?;
            let result = minimize_lbfgsb(&obj, None, &LbfgsOptions::default());
            let direct = DirectOptimum {
                x_star: result.x_star.iter().zip(lower.iter().zip(&upper)).map(|(t, (l, u))| l + t * (u - l)).collect(),
                predicted: full.predict(&result.x_star),
                result,
            };
            OptimizationArtifact {
                goal: goal.clone(),
                method: OptMethod::ReducedModel,
                param_names: names.clone(),
                x_star: red.x_star.clone(),
                predicted: red.predicted,
                search: Some(red.search.clone()),
                target_search: None,
                reduced: Some(red),
                direct: Some(direct),
                validation: None,
                validation_error: None,
            }
        }
    };

    match &spec.simulation.backend {
        Some(cfg) => {
            let case_dir = study_dir.join("validation");
            match validate_optimum(
                cfg,
                spec.qoi(),
                &names,
                &lower,
                &upper,
                &artifact.x_star,
                artifact.predicted,
                Some(&case_dir),
            ) {
                Ok(v) => artifact.validation = Some(v),
                Err(e) => {
                    log::warn!("{e}");
                    artifact.validation_error = Some(e.to_string());
                }
            }
        }
        None => artifact.validation_error = Some("no backend configured".to_string()),
    }

    write_json(&study_dir.join(OPTIMIZATION_FILE), &artifact)?;
    if let Some(search) = artifact.search.as_ref().or(artifact.direct.as_ref().map(|d| &d.result)) {
        write(&study_dir.join(TRACE_FILE), trace_csv(search))?;
    }
    write(&study_dir.join(REPORT_FILE), render_report(&spec, &analysis, Some(&artifact)))?;
    write_manifest(study_dir)?;
    Ok(artifact)
}

fn trace_csv(r: &OptResult) -> Vec<u8> {
    csv_text(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["iteration", "f", "measure"])?;
        for (i, t) in r.trace.iter().enumerate() {
            w.write_record([i.to_string(), t.f.to_string(), t.measure.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })
}

/// Re-renders `report.txt` from the stored artifacts.
pub fn cmd_report(study_dir: &Path) -> Result<String, WorkflowError> {
    let (spec, _) = load_study(study_dir)?;
    let analysis = load_analysis(study_dir)?;
    let opt_path = study_dir.join(OPTIMIZATION_FILE);
    let opt: Option<OptimizationArtifact> = if opt_path.exists() { Some(read_json(&opt_path, "")?) } else { None };
    let text = render_report(&spec, &analysis, opt.as_ref());
    write(&study_dir.join(REPORT_FILE), &text)?;
    write_manifest(study_dir)?;
    Ok(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileRole {
    Dataset,
    Analysis,
    Optimization,
    SummaryScatter,
    SummaryCurve,
    ComponentBars,
    OptTrace,
    ReportText,
    ResponseSvg,
    BarsSvg,
    Manifest,
}

pub const BUNDLE: [(FileRole, &str); 10] = [
    (FileRole::Dataset, DATASET_FILE),
    (FileRole::Analysis, ANALYSIS_FILE),
    (FileRole::Optimization, OPTIMIZATION_FILE),
    (FileRole::SummaryScatter, SCATTER_FILE),
    (FileRole::SummaryCurve, CURVE_FILE),
    (FileRole::ComponentBars, BARS_FILE),
    (FileRole::OptTrace, TRACE_FILE),
    (FileRole::ReportText, REPORT_FILE),
    (FileRole::ResponseSvg, RESPONSE_SVG),
    (FileRole::BarsSvg, BARS_SVG),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleFile {
    pub role: FileRole,
    /// Relative to the study directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMetadata {
    pub generated_unix_seconds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<BundleFile>,
    pub metadata: ManifestMetadata,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digests every bundle file present in the study directory.
pub fn write_manifest(study_dir: &Path) -> Result<Manifest, WorkflowError> {
    let mut files = Vec::new();
    for (role, name) in BUNDLE {
        let path = study_dir.join(name);
        if path.exists() {
            let bytes = fs::read(&path).map_err(io(&path))?;
            files.push(BundleFile { role, path: name.to_string(), sha256: sha256_hex(&bytes) });
        }
    }
    let generated_unix_seconds = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let manifest = Manifest { files, metadata: ManifestMetadata { generated_unix_seconds } };
    write_json(&study_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
