//! Scalar QoI extraction from a finished case directory.

use std::path::{Path, PathBuf};

use regex::Regex;
use thiserror::Error;

use crate::study::{AggregateOp, Extraction, QoISpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("no file matches {0}")]
    NoFiles(String),
    #[error("pattern matched nothing in {0} file(s)")]
    NoMatch(usize),
    #[error("captured text {0:?} is not a number")]
    NonNumericCapture(String),
    #[error("column {column} is empty in {file}")]
    EmptyColumn { column: String, file: String },
    #[error("column {column} not found in {file}")]
    MissingColumn { column: String, file: String },
    #[error("cell {cell:?} in column {column} is not a number")]
    NonNumericCell { column: String, cell: String },
    #[error("bad file pattern: {0}")]
    BadPattern(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("backend-direct QoI: {0}")]
    Direct(String),
}

/// Files under `case_dir` matching a glob pattern, in lexicographic path order.
pub fn matching_files(case_dir: &Path, pattern: &str) -> Result<Vec<PathBuf>, ExtractError> {
    let full = case_dir.join(pattern);
    let full = full.to_str().ok_or_else(|| ExtractError::BadPattern(pattern.to_string()))?;
    let mut files: Vec<PathBuf> = glob::glob(full)
        .map_err(|e| ExtractError::BadPattern(e.to_string()))?
        .filter_map(Result::ok)
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(ExtractError::NoFiles(pattern.to_string()));
    }
    Ok(files)
}

fn read(path: &Path) -> Result<String, ExtractError> {
    let bytes = std::fs::read(path)
        .map_err(|e| ExtractError::Io { path: path.display().to_string(), message: e.to_string() })?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn regex_last_match(case_dir: &Path, file_pattern: &str, pattern: &str) -> Result<f64, ExtractError> {
    let re = Regex::new(pattern).map_err(|e| ExtractError::BadPattern(e.to_string()))?;
    let files = matching_files(case_dir, file_pattern)?;
    let mut last: Option<String> = None;
    for file in &files {
        let text = read(file)?;
        for caps in re.captures_iter(&text) {
            if let Some(m) = caps.get(1) {
                last = Some(m.as_str().to_string());
            }
        }
    }
    let captured = last.ok_or(ExtractError::NoMatch(files.len()))?;
    parse_number(&captured).ok_or(ExtractError::NonNumericCapture(captured))
}

fn csv_aggregate(
    case_dir: &Path,
    file_pattern: &str,
    column: &str,
    op: AggregateOp,
) -> Result<f64, ExtractError> {
    let files = matching_files(case_dir, file_pattern)?;
    let file = files.last().expect("matching_files is non-empty");
    let shown = file.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(file)
        .map_err(|e| ExtractError::Io { path: shown.clone(), message: e.to_string() })?;
    let headers = reader
        .headers()
        .map_err(|e| ExtractError::Io { path: shown.clone(), message: e.to_string() })?
        .clone();
    let idx = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| ExtractError::MissingColumn { column: column.to_string(), file: shown.clone() })?;
    let mut values = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| ExtractError::Io { path: shown.clone(), message: e.to_string() })?;
        let cell = row.get(idx).unwrap_or("").trim();
        if cell.is_empty() {
            continue;
        }
        let v = parse_number(cell).ok_or_else(|| ExtractError::NonNumericCell {
            column: column.to_string(),
            cell: cell.to_string(),
        })?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(ExtractError::EmptyColumn { column: column.to_string(), file: shown });
    }
    Ok(match op {
        AggregateOp::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AggregateOp::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
        AggregateOp::Mean => values.iter().sum::<f64>() / values.len() as f64,
        AggregateOp::Last => *values.last().unwrap(),
    })
}

/// Backend-direct QoI of a process run: the last whitespace-separated token
/// of the last non-empty line the command wrote to stdout.
pub fn last_stdout_number(stdout: &Path) -> Result<f64, ExtractError> {
    let text = read(stdout)?;
    let line = text
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| ExtractError::Direct("command printed nothing".to_string()))?;
    let token = line.split_whitespace().last().unwrap_or("");
    parse_number(token).ok_or_else(|| ExtractError::NonNumericCapture(token.to_string()))
}

/// Extracts the QoI from `case_dir` and applies the optional affine transform.
pub fn extract_qoi(qoi: &QoISpec, case_dir: &Path) -> Result<f64, ExtractError> {
    let raw = match &qoi.extraction {
        Extraction::RegexLastMatch { file_pattern, pattern } => {
            regex_last_match(case_dir, file_pattern, pattern)?
        }
        Extraction::CsvAggregate { file_pattern, column, op } => {
            csv_aggregate(case_dir, file_pattern, column, *op)?
        }
        Extraction::BackendDirect => {
            return Err(ExtractError::Direct("no file-based extraction configured".to_string()))
        }
    };
    Ok(qoi.transform.map_or(raw, |t| t.apply(raw)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::Affine;
    use std::fs;

    fn regex_qoi(pattern: &str) -> QoISpec {
        QoISpec {
            name: "yplus".into(),
            extraction: Extraction::RegexLastMatch {
                file_pattern: "log.*".into(),
                pattern: pattern.into(),
            },
            transform: None,
        }
    }

    #[test]
    fn last_match_wins() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("log.a"), "yPlus patch max = 22.1\n").unwrap();
        fs::write(dir.path().join("log.b"), "t=1\nyPlus patch max = 30.9\n").unwrap();
        let v = extract_qoi(&regex_qoi(r"yPlus.*max = ([0-9.eE+-]+)"), dir.path()).unwrap();
        assert_eq!(v, 30.9);
        // Same file, two matches.
        fs::remove_file(dir.path().join("log.a")).unwrap();
        fs::write(dir.path().join("log.b"), "yPlus max = 22.1\nyPlus max = 30.9\n").unwrap();
        assert_eq!(extract_qoi(&regex_qoi(r"yPlus.*max = ([0-9.eE+-]+)"), dir.path()).unwrap(), 30.9);
    }

    #[test]
    fn regex_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            extract_qoi(&regex_qoi(r"max = (\S+)"), dir.path()),
            Err(ExtractError::NoFiles(_))
        ));
        fs::write(dir.path().join("log.run"), "max = abc\n").unwrap();
        assert!(matches!(
            extract_qoi(&regex_qoi(r"max = (\S+)"), dir.path()),
            Err(ExtractError::NonNumericCapture(_))
        ));
        assert!(matches!(
            extract_qoi(&regex_qoi(r"min = (\S+)"), dir.path()),
            Err(ExtractError::NoMatch(1))
        ));
    }

    #[test]
    fn csv_max_and_transform() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("post")).unwrap();
        fs::write(dir.path().join("post/0.csv"), "x,T\n0,5000\n").unwrap();
        fs::write(dir.path().join("post/1.csv"), "x, T\n0, 1800\n1, 400\n").unwrap();
        let mut qoi = QoISpec {
            name: "tmax".into(),
            extraction: Extraction::CsvAggregate {
                file_pattern: "post/*.csv".into(),
                column: "T".into(),
                op: AggregateOp::Max,
            },
            transform: None,
        };
        assert_eq!(extract_qoi(&qoi, dir.path()).unwrap(), 1800.0);
        qoi.extraction = Extraction::CsvAggregate {
            file_pattern: "post/*.csv".into(),
            column: "T".into(),
            op: AggregateOp::Mean,
        };
        assert_eq!(extract_qoi(&qoi, dir.path()).unwrap(), 1100.0);
        qoi.transform = Some(Affine { scale: 0.5, offset: 0.0 });
        assert_eq!(extract_qoi(&qoi, dir.path()).unwrap(), 550.0);
    }

    #[test]
    fn transform_example() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("log.x"), "k = 0.02\n").unwrap();
        let mut qoi = regex_qoi(r"k = (\S+)");
        qoi.transform = Some(Affine { scale: 0.5, offset: 0.0 });
        assert_eq!(extract_qoi(&qoi, dir.path()).unwrap(), 0.01);
    }

    #[test]
    fn csv_empty_column() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "x,T\n1,\n").unwrap();
        let qoi = QoISpec {
            name: "t".into(),
            extraction: Extraction::CsvAggregate {
                file_pattern: "*.csv".into(),
                column: "T".into(),
                op: AggregateOp::Last,
            },
            transform: None,
        };
        assert!(matches!(extract_qoi(&qoi, dir.path()), Err(ExtractError::EmptyColumn { .. })));
    }
}
