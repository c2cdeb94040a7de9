//! Batch evaluation of a sample plan with a bounded worker pool and an
//! append-only ledger for resuming interrupted batches.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use super::{BackendError, CasePoint, Evaluator, RunRecord, RunStatus};
use crate::sampling::{normalize, SamplePlan};
use crate::study::{ParameterDef, QoISpec};

pub const LEDGER_FILE: &str = "ledger.ndjson";
pub const DATASET_FILE: &str = "dataset.csv";

/// Sample points paired with QoI values. Only successful runs enter `x`/`q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub param_defs: Vec<ParameterDef>,
    pub qoi: QoISpec,
    /// Every run in plan order, including failures.
    pub records: Vec<RunRecord>,
    /// Normalized coordinates of successful runs, `N_ok × m`.
    pub x: Vec<Vec<f64>>,
    pub q: Vec<f64>,
}

impl Dataset {
    pub fn from_records(param_defs: &[ParameterDef], qoi: &QoISpec, records: Vec<RunRecord>) -> Self {
        let mut x = Vec::new();
        let mut q = Vec::new();
        for rec in records.iter().filter(|r| r.is_ok()) {
            let row = param_defs
                .iter()
                .map(|p| {
                    let raw = rec.raw_values.get(&p.name).copied().unwrap_or(f64::NAN);
                    normalize(raw, p.lower, p.upper).unwrap_or(f64::NAN)
                })
                .collect();
            x.push(row);
            q.push(rec.qoi_value.expect("ok record carries a value"));
        }
        Self { param_defs: param_defs.to_vec(), qoi: qoi.clone(), records, x, q }
    }

    pub fn dim(&self) -> usize {
        self.param_defs.len()
    }

    pub fn n_ok(&self) -> usize {
        self.q.len()
    }

    /// Raw coordinates of successful runs, `N_ok × m`.
    pub fn raw_ok(&self) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .filter(|r| r.is_ok())
            .map(|r| self.param_defs.iter().map(|p| r.raw_values[&p.name]).collect())
            .collect()
    }

    pub fn required_ok(&self) -> usize {
        self.dim() + 2
    }

    /// `index, <params…>, <qoi>, status`; failed rows leave the QoI empty.
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["index".to_string()];
        header.extend(self.param_defs.iter().map(|p| p.name.clone()));
        header.push(self.qoi.name.clone());
        header.push("status".to_string());
        w.write_record(&header).expect("in-memory write");
        for rec in &self.records {
            let mut row = vec![rec.sample_index.to_string()];
            for p in &self.param_defs {
                row.push(rec.raw_values.get(&p.name).map(|v| v.to_string()).unwrap_or_default());
            }
            row.push(rec.qoi_value.map(|v| v.to_string()).unwrap_or_default());
            row.push(rec.status.as_str().to_string());
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), BackendError> {
        fs::write(path, self.to_csv_string())
            .map_err(|source| BackendError::Io { path: path.display().to_string(), source })
    }

    pub fn read_csv(path: &Path, param_defs: &[ParameterDef], qoi: &QoISpec) -> Result<Self, BackendError> {
        let shown = path.display().to_string();
        let bad = |line: usize, message: String| BackendError::Ledger { path: shown.clone(), line, message };
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| BackendError::Io { path: shown.clone(), source: std::io::Error::other(e) })?;
        let headers = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
        let m = param_defs.len();
        let expected: Vec<&str> = std::iter::once("index")
            .chain(param_defs.iter().map(|p| p.name.as_str()))
            .chain([qoi.name.as_str(), "status"])
            .collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(bad(1, format!("header does not match the study (expected {})", expected.join(","))));
        }
        let mut records = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| bad(line, e.to_string()))?;
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(line, format!("{s:?}: {e}")));
            let sample_index = row[0].parse::<usize>().map_err(|e| bad(line, e.to_string()))?;
            let mut raw_values = BTreeMap::new();
            for (j, p) in param_defs.iter().enumerate() {
                raw_values.insert(p.name.clone(), num(&row[j + 1])?);
            }
            let status = RunStatus::parse(&row[m + 2]).ok_or_else(|| bad(line, format!("unknown status {:?}", &row[m + 2])))?;
            let qoi_value = match (&row[m + 1], status) {
                ("", RunStatus::Ok) => return Err(bad(line, "ok row without a value".to_string())),
                ("", _) => None,
                (v, RunStatus::Ok) => Some(num(v)?),
                (_, _) => None,
            };
            records.push(RunRecord {
                sample_index,
                raw_values,
                qoi_value,
                status,
                stdout_path: None,
                stderr_path: None,
                wall_time: 0.0,
                message: None,
            });
        }
        Ok(Self::from_records(param_defs, qoi, records))
    }
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub max_workers: usize,
    /// Holds `cases/`, the ledger and `dataset.csv`. Without it nothing is
    /// persisted and nothing is resumed.
    pub study_dir: Option<PathBuf>,
    /// Stop taking new work after this many fresh completions (simulates an
    /// interruption).
    pub stop_after: Option<usize>,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self { max_workers: 1, study_dir: None, stop_after: None }
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub dataset: Dataset,
    /// Cases evaluated by this call.
    pub executed: usize,
    /// Cases taken from the ledger.
    pub reused: usize,
}

fn read_ledger(path: &Path) -> Result<BTreeMap<usize, RunRecord>, BackendError> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let file = File::open(path).map_err(|source| BackendError::Io { path: path.display().to_string(), source })?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| BackendError::Io { path: path.display().to_string(), source })?;
    let last = lines.len();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(line) {
            Ok(rec) => {
                out.insert(rec.sample_index, rec);
            }
            // A torn final line is what an interrupted append leaves behind.
            Err(_) if i + 1 == last => log::warn!("ignoring truncated final ledger line {}", i + 1),
            Err(e) => {
                return Err(BackendError::Ledger {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn case_points(params: &[ParameterDef], plan: &SamplePlan) -> Vec<CasePoint> {
    plan.points_raw
        .iter()
        .enumerate()
        .map(|(index, raw)| CasePoint {
            index,
            names: params.iter().map(|p| p.name.clone()).collect(),
            raw: raw.clone(),
            normalized: raw
                .iter()
                .zip(params)
                .map(|(&v, p)| normalize(v, p.lower, p.upper).unwrap_or(f64::NAN))
                .collect(),
        })
        .collect()
}

struct Shared {
    ledger: Option<File>,
    ledger_error: Option<BackendError>,
    results: Vec<Option<RunRecord>>,
    fresh: usize,
}

/// Evaluates every plan point with at most `max_workers` concurrent cases.
///
/// Rows come back in plan order whatever the completion order. With a study
/// directory, each completion is appended to the ledger as it happens and
/// successful rows already in the ledger are not re-run.
pub fn run_batch(
    evaluator: &dyn Evaluator,
    params: &[ParameterDef],
    qoi: &QoISpec,
    plan: &SamplePlan,
    opts: &BatchOptions,
) -> Result<BatchOutcome, BackendError> {
    if opts.max_workers == 0 {
        return Err(BackendError::InvalidOptions("max_workers must be at least 1".to_string()));
    }
    if evaluator.needs_case_dir() && opts.study_dir.is_none() {
        return Err(BackendError::NoWorkspace);
    }
    let points = case_points(params, plan);
    let ledger_path = opts.study_dir.as_ref().map(|d| d.join(LEDGER_FILE));

    let mut results: Vec<Option<RunRecord>> = vec![None; points.len()];
    let mut reused = 0;
    if let Some(path) = &ledger_path {
        let dir = path.parent().expect("ledger lives in the study dir");
        fs::create_dir_all(dir).map_err(|source| BackendError::Io { path: dir.display().to_string(), source })?;
        let previous = read_ledger(path)?;
        for point in &points {
            if let Some(rec) = previous.get(&point.index) {
                if rec.is_ok() && rec.raw_values == point.values() {
                    results[point.index] = Some(rec.clone());
                    reused += 1;
                }
            }
        }
    }
    let pending: Vec<usize> = (0..points.len()).filter(|&i| results[i].is_none()).collect();

    let ledger = match &ledger_path {
        Some(path) if !pending.is_empty() => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| BackendError::Io { path: path.display().to_string(), source })?,
        ),
        _ => None,
    };
    let shared = Mutex::new(Shared { ledger, ledger_error: None, results, fresh: 0 });
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(opts.stop_after == Some(0));
    let workers = opts.max_workers.min(pending.len()).max(1);

    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&idx) = pending.get(k) else { break };
                let case_dir = opts.study_dir.as_ref().map(|d| d.join("cases").join(idx.to_string()));
                if let Some(dir) = &case_dir {
                    if let Some(parent) = dir.parent() {
                        let _ = fs::create_dir_all(parent);
                    }
                }
                let record = evaluator.evaluate(&points[idx], case_dir.as_deref());

                let mut st = shared.lock().expect("worker panicked while holding the ledger");
                if opts.stop_after.is_some_and(|limit| st.fresh >= limit) {
                    // Work still in flight at a kill is lost.
                    break;
                }
                if let Some(file) = st.ledger.as_mut() {
                    let line = serde_json::to_string(&record).expect("record serializes");
                    let written = writeln!(file, "{line}").and_then(|_| file.flush());
                    if let Err(source) = written {
                        let path = ledger_path.as_ref().unwrap().display().to_string();
                        st.ledger_error.get_or_insert(BackendError::Io { path, source });
                    }
                }
                st.results[idx] = Some(record);
                st.fresh += 1;
                if opts.stop_after.is_some_and(|limit| st.fresh >= limit) {
                    stop.store(true, Ordering::SeqCst);
                }
            });
        }
    });

    let st = shared.into_inner().expect("workers joined");
    if let Some(err) = st.ledger_error {
        return Err(err);
    }
    let executed = st.fresh;
    if st.results.iter().any(Option::is_none) {
        return Err(BackendError::Interrupted { completed: executed });
    }
    let records: Vec<RunRecord> = st.results.into_iter().map(Option::unwrap).collect();
    let dataset = Dataset::from_records(params, qoi, records);

    if let Some(dir) = &opts.study_dir {
        dataset.write_csv(&dir.join(DATASET_FILE))?;
    }
    let failed = dataset.records.len() - dataset.n_ok();
    if failed > 0 {
        log::warn!("{failed} of {} runs failed and were dropped", dataset.records.len());
    }
    if dataset.n_ok() < dataset.required_ok() {
        return Err(BackendError::InsufficientData { ok: dataset.n_ok(), required: dataset.required_ok() });
    }
    Ok(BatchOutcome { dataset, executed, reused })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Backend, BackendConfig};
    use crate::sampling::plan_samples;
    use std::collections::BTreeSet;
    use std::sync::atomic::AtomicUsize;

    fn params(m: usize) -> Vec<ParameterDef> {
        (0..m).map(|i| ParameterDef::new(&format!("p{i}"), 1.0, 3.0)).collect()
    }

    fn linear_backend() -> Backend {
        Backend::new(
            BackendConfig::analytic("linear", &[("c", 2.0), ("b1", 3.0), ("b2", -1.0)]),
            QoISpec::backend_direct("q"),
        )
    }

    /// Fails the listed plan indices; counts every evaluation.
    struct Faulty<'a> {
        inner: &'a dyn Evaluator,
        fail: BTreeSet<usize>,
        calls: AtomicUsize,
    }

    impl Evaluator for Faulty<'_> {
        fn evaluate(&self, point: &CasePoint, case_dir: Option<&Path>) -> RunRecord {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let rec = self.inner.evaluate(point, case_dir);
            if self.fail.contains(&point.index) {
                rec.fail(RunStatus::RunFailed, "injected")
            } else {
                rec
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_dataset() {
        let p = params(2);
        let plan = plan_samples(&p, 4.0, 11).unwrap();
        let backend = linear_backend();
        let one = run_batch(&backend, &p, &backend.qoi, &plan, &BatchOptions::default()).unwrap();
        let four = run_batch(
            &backend,
            &p,
            &backend.qoi,
            &plan,
            &BatchOptions { max_workers: 4, ..Default::default() },
        )
        .unwrap();
        assert_eq!(one.dataset.n_ok(), 8);
        assert_eq!(one.dataset.to_csv_string(), four.dataset.to_csv_string());
        assert_eq!(one.dataset.x, four.dataset.x);
        assert_eq!(one.dataset.q, four.dataset.q);
    }

    #[test]
    fn injected_failures_dropped() {
        let p = params(1);
        let plan = plan_samples(&p, 4.0, 0).unwrap();
        assert_eq!(plan.len(), 5);
        let backend = linear_backend();
        let faulty = Faulty { inner: &backend, fail: [1, 3].into(), calls: AtomicUsize::new(0) };
        // m + 2 = 3 ok rows suffice for one parameter.
        let out = run_batch(&faulty, &p, &backend.qoi, &plan, &BatchOptions::default()).unwrap();
        assert_eq!(out.dataset.n_ok(), 3);
        assert_eq!(out.dataset.records.len(), 5);

        let faulty = Faulty { inner: &backend, fail: [0, 1, 3].into(), calls: AtomicUsize::new(0) };
        let err = run_batch(&faulty, &p, &backend.qoi, &plan, &BatchOptions::default()).unwrap_err();
        assert!(matches!(err, BackendError::InsufficientData { ok: 2, required: 3 }));
    }

    #[test]
    fn resume_skips_ok_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = params(2);
        let plan = plan_samples(&p, 4.0, 3).unwrap();
        let backend = linear_backend();
        let counting = Faulty { inner: &backend, fail: BTreeSet::new(), calls: AtomicUsize::new(0) };
        let opts = BatchOptions { max_workers: 1, study_dir: Some(dir.path().to_path_buf()), stop_after: Some(3) };
        let err = run_batch(&counting, &p, &backend.qoi, &plan, &opts).unwrap_err();
        assert!(matches!(err, BackendError::Interrupted { completed: 3 }));
        assert_eq!(counting.calls.load(Ordering::SeqCst), 3);

        let opts = BatchOptions { stop_after: None, ..opts };
        let out = run_batch(&counting, &p, &backend.qoi, &plan, &opts).unwrap();
        assert_eq!(out.executed, 5);
        assert_eq!(out.reused, 3);
        assert_eq!(counting.calls.load(Ordering::SeqCst), 8);

        let again = run_batch(&counting, &p, &backend.qoi, &plan, &opts).unwrap();
        assert_eq!(again.executed, 0);
        assert_eq!(counting.calls.load(Ordering::SeqCst), 8);
        assert_eq!(again.dataset.to_csv_string(), out.dataset.to_csv_string());
    }

    #[test]
    fn failed_rows_are_retried_on_resume() {
        let dir = tempfile::tempdir().unwrap();
        let p = params(1);
        let plan = plan_samples(&p, 4.0, 0).unwrap();
        let backend = linear_backend();
        let opts = BatchOptions { max_workers: 2, study_dir: Some(dir.path().to_path_buf()), stop_after: None };
        let faulty = Faulty { inner: &backend, fail: [2].into(), calls: AtomicUsize::new(0) };
        run_batch(&faulty, &p, &backend.qoi, &plan, &opts).unwrap();
        let healthy = Faulty { inner: &backend, fail: BTreeSet::new(), calls: AtomicUsize::new(0) };
        let out = run_batch(&healthy, &p, &backend.qoi, &plan, &opts).unwrap();
        assert_eq!(healthy.calls.load(Ordering::SeqCst), 1);
        assert_eq!(out.dataset.n_ok(), 5);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = params(2);
        let plan = plan_samples(&p, 4.0, 5).unwrap();
        let backend = linear_backend();
        let faulty = Faulty { inner: &backend, fail: [4].into(), calls: AtomicUsize::new(0) };
        let opts = BatchOptions { max_workers: 3, study_dir: Some(dir.path().to_path_buf()), stop_after: None };
        let out = run_batch(&faulty, &p, &backend.qoi, &plan, &opts).unwrap();
        let back = Dataset::read_csv(&dir.path().join(DATASET_FILE), &p, &backend.qoi).unwrap();
        assert_eq!(back.x, out.dataset.x);
        assert_eq!(back.q, out.dataset.q);
        assert_eq!(back.to_csv_string(), out.dataset.to_csv_string());
        let text = back.to_csv_string();
        assert!(text.starts_with("index,p0,p1,q,status\n"));
        assert!(text.contains(",,run_failed\n"));
    }

    #[test]
    fn torn_ledger_line_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let p = params(1);
        let plan = plan_samples(&p, 4.0, 0).unwrap();
        let backend = linear_backend();
        let opts = BatchOptions { max_workers: 1, study_dir: Some(dir.path().to_path_buf()), stop_after: Some(2) };
        let _ = run_batch(&backend, &p, &backend.qoi, &plan, &opts);
        let ledger = dir.path().join(LEDGER_FILE);
        let mut f = OpenOptions::new().append(true).open(&ledger).unwrap();
        write!(f, "{{\"sample_index\": 4, \"raw_").unwrap();
        drop(f);
        let out = run_batch(&backend, &p, &backend.qoi, &plan, &BatchOptions { stop_after: None, ..opts }).unwrap();
        assert_eq!(out.reused, 2);
        assert_eq!(out.executed, 3);
    }
}
