//! Case-directory instantiation from a template tree with `@{name}` tokens.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use walkdir::WalkDir;

use super::BackendError;

fn token_pattern() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    CELL.get_or_init(|| Regex::new(r"@\{([^}\s]+)\}").expect("static pattern compiles"))
}

/// Decimal rendering used for substituted values: the shortest string that
/// round-trips (at most 17 significant digits), positional notation for
/// magnitudes in `[1e-4, 1e6]` and zero, exponent notation otherwise.
pub fn render_value(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..=1e6).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Substitution {
    pub case_dir: PathBuf,
    /// Values that matched no token anywhere in the tree.
    pub orphans: Vec<String>,
}

fn is_text(bytes: &[u8]) -> bool {
    !bytes.contains(&0) && std::str::from_utf8(bytes).is_ok()
}

/// Deep-copies `template_dir` into a fresh `case_dir`, replacing every
/// `@{name}` token in text files. Binary files are copied byte for byte.
pub fn substitute_tokens(
    template_dir: &Path,
    case_dir: &Path,
    values: &BTreeMap<String, f64>,
) -> Result<Substitution, BackendError> {
    let io = |path: &Path, e: std::io::Error| BackendError::Io {
        path: path.display().to_string(),
        source: e,
    };
    if !template_dir.is_dir() {
        return Err(BackendError::MissingTemplate(template_dir.display().to_string()));
    }
    if case_dir.exists() {
        fs::remove_dir_all(case_dir).map_err(|e| io(case_dir, e))?;
    }
    fs::create_dir_all(case_dir).map_err(|e| io(case_dir, e))?;

    let mut used = BTreeSet::new();
    let mut entries: Vec<_> = WalkDir::new(template_dir)
        .min_depth(1)
        .sort_by_file_name()
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(|e| BackendError::Io {
            path: template_dir.display().to_string(),
            source: e.into(),
        })?;
    entries.sort_by(|a, b| a.path().cmp(b.path()));

    for entry in entries {
        let rel = entry.path().strip_prefix(template_dir).expect("walk stays under root");
        let dest = case_dir.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&dest).map_err(|e| io(&dest, e))?;
            continue;
        }
        let bytes = fs::read(entry.path()).map_err(|e| io(entry.path(), e))?;
        if !is_text(&bytes) {
            fs::write(&dest, &bytes).map_err(|e| io(&dest, e))?;
            continue;
        }
        let text = std::str::from_utf8(&bytes).expect("checked utf-8");
        let mut missing = None;
        let replaced = token_pattern().replace_all(text, |caps: &regex::Captures| {
            let name = &caps[1];
            match values.get(name) {
                Some(v) => {
                    used.insert(name.to_string());
                    render_value(*v)
                }
                None => {
                    missing.get_or_insert_with(|| name.to_string());
                    caps[0].to_string()
                }
            }
        });
        if let Some(name) = missing {
            return Err(BackendError::UnresolvedToken { name, file: rel.display().to_string() });
        }
        fs::write(&dest, replaced.as_bytes()).map_err(|e| io(&dest, e))?;
    }

    let orphans: Vec<String> = values.keys().filter(|k| !used.contains(*k)).cloned().collect();
    for name in &orphans {
        log::warn!("value {name} matches no token in {}", template_dir.display());
    }
    Ok(Substitution { case_dir: case_dir.to_path_buf(), orphans })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn rendering() {
        assert_eq!(render_value(35.0), "35");
        assert_eq!(render_value(0.1), "0.1");
        assert_eq!(render_value(1e-4), "0.0001");
        assert_eq!(render_value(1e6), "1000000");
        assert_eq!(render_value(1e-5), "1e-5");
        assert_eq!(render_value(2.5e7), "2.5e7");
        assert_eq!(render_value(0.0), "0");
        assert_eq!(render_value(-12.75), "-12.75");
        let v = 0.1 + 0.2;
        assert_eq!(render_value(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn substitutes_and_copies_binary() {
        let tmp = tempfile::tempdir().unwrap();
        let template = tmp.path().join("template");
        fs::create_dir_all(template.join("constant")).unwrap();
        fs::write(template.join("constant/U"), "velocity @{inlet_velocity};\n").unwrap();
        let binary = vec![0u8, 159, 146, 150, b'@', b'{', b'x', b'}'];
        fs::write(template.join("mesh.bin"), &binary).unwrap();

        let case = tmp.path().join("case");
        let out = substitute_tokens(&template, &case, &values(&[("inlet_velocity", 35.0), ("spare", 1.0)]))
            .unwrap();
        assert_eq!(fs::read_to_string(case.join("constant/U")).unwrap(), "velocity 35;\n");
        assert_eq!(fs::read(case.join("mesh.bin")).unwrap(), binary);
        assert_eq!(out.orphans, vec!["spare".to_string()]);
        // Template untouched.
        assert!(fs::read_to_string(template.join("constant/U")).unwrap().contains("@{inlet_velocity}"));
    }

    #[test]
    fn unresolved_token() {
        let tmp = tempfile::tempdir().unwrap();
        let template = tmp.path().join("t");
        fs::create_dir_all(&template).unwrap();
        fs::write(template.join("alphat"), "Prt @{Prt};").unwrap();
        let err = substitute_tokens(&template, &tmp.path().join("c"), &values(&[("k", 1.0)])).unwrap_err();
        match err {
            BackendError::UnresolvedToken { name, file } => {
                assert_eq!(name, "Prt");
                assert_eq!(file, "alphat");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn fresh_case_dir() {
        let tmp = tempfile::tempdir().unwrap();
        let template = tmp.path().join("t");
        fs::create_dir_all(&template).unwrap();
        fs::write(template.join("f"), "@{a}").unwrap();
        let case = tmp.path().join("c");
        fs::create_dir_all(&case).unwrap();
        fs::write(case.join("stale"), "x").unwrap();
        substitute_tokens(&template, &case, &values(&[("a", 2.0)])).unwrap();
        assert!(!case.join("stale").exists());
        assert_eq!(fs::read_to_string(case.join("f")).unwrap(), "2");
    }
}
