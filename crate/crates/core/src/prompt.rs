//! Fixed-grammar parser for study prompts.
//!
//! Two clause templates are recognized, alone or joined by "and":
//!
//! * analysis: `analyze the effect of <P1> [(from A to B [units])] [, <P2> … and <Pk> …] on <Q>`
//! * optimization: `determine the {optimal|min} <P> {at which|where} <Q> is {near|close to|below} <T>`
//!
//! An optional `... in a simulation: <text>` suffix becomes the simulation
//! description. A parameter may carry `(nominal X [units])` instead of a
//! range, in which case the ±20 % default range is used. Anything outside the
//! grammar is rejected.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::sampling::default_range;
use crate::study::{
    GoalKind, GoalSpec, ParameterDef, PostprocessTask, QoISpec, RangeOrigin, Settings,
    SimulationTask, StudySpec,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("empty prompt")]
    Empty,
    #[error("prompt matches neither the analysis nor the optimization template: {0}")]
    UnrecognizedTemplate(String),
    #[error("malformed range for {name}: {lower} is not below {upper}")]
    MalformedRange { name: String, lower: f64, upper: f64 },
    #[error("goal \"{0}\" names no numeric target")]
    MissingTarget(String),
}

const NUMBER: &str = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?";

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static pattern compiles"))
}

fn simulation_split() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(&CELL, r"(?i)\s+in\s+(?:a|the)\s+simulation\s*:\s*")
}

fn analysis_start() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(&CELL, r"(?i)\banaly[sz]e\s+the\s+effects?\s+of\b\s*")
}

fn optimization_start() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(&CELL, r"(?i)\bdetermine\s+the\s+")
}

/// `(from A [u] to B [u])` or `(nominal X [u])`, with optional `$` math delimiters.
fn bound_clause() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    let pattern = format!(
        r"(?i)\(\s*(?:from\s+\$?(?P<lo>{NUMBER})\$?\s*(?P<lu>[^()\s]*?)\s+to\s+\$?(?P<hi>{NUMBER})\$?\s*(?P<hu>[^()]*?)|nominal\s+\$?(?P<nom>{NUMBER})\$?\s*(?P<nu>[^()]*?))\s*\)"
    );
    re(&CELL, &pattern)
}

fn on_split() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(&CELL, r"(?i)\s+on\s+")
}

fn list_separator() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(&CELL, r"(?i)\s*,\s*(?:and\s+)?|\s+and\s+")
}

fn leading_separator() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(&CELL, r"(?i)^\s*,?\s*(?:and\s+)?")
}

fn goal_clause() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(
        &CELL,
        r"(?i)^(?P<mode>optimal|optimum|best|min|minimum|minimal|smallest)\s+(?P<params>.+?)\s+(?:at\s+which|where|such\s+that)\s+(?P<qoi>.+?)\s+(?:is|should\s+be|are|becomes)\s+(?P<rel>.*)$",
    )
}

fn relation() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(
        &CELL,
        r"(?i)^(?:(?P<near>near|close\s+to|as\s+close\s+to|approximately|equal\s+to)|(?P<below>below|blow|under|less\s+than|lower\s+than)|(?P<max>maximi[sz]ed|maximal|maximum)|(?P<min>minimi[sz]ed|minimal|minimum))\b",
    )
}

fn number() -> &'static Regex {
    static CELL: OnceLock<Regex> = OnceLock::new();
    re(&CELL, &format!(r"(?:^|[^\w.])(?P<n>{NUMBER})"))
}

/// Prompt names to identifiers: math and quoting stripped, words joined by
/// underscores, a leading article dropped. Case is preserved.
pub fn to_identifier(text: &str) -> String {
    let cleaned: String = text
        .chars()
        .map(|c| match c {
            '$' | '`' | '\\' | '{' | '}' | '"' | '\'' => ' ',
            c if c.is_alphanumeric() || c == '_' => c,
            _ => ' ',
        })
        .collect();
    let mut words: Vec<&str> = cleaned.split_whitespace().collect();
    if let Some(first) = words.first() {
        if ["the", "a", "an"].contains(&first.to_lowercase().as_str()) && words.len() > 1 {
            words.remove(0);
        }
    }
    let joined = words.join("_");
    let mut out = String::with_capacity(joined.len());
    for c in joined.chars() {
        if c == '_' && out.ends_with('_') {
            continue;
        }
        out.push(c);
    }
    out.trim_matches('_').to_string()
}

/// Trims a quantity-of-interest phrase to its name.
fn qoi_phrase(text: &str) -> &str {
    static CELL: OnceLock<Regex> = OnceLock::new();
    let stop = re(
        &CELL,
        r"(?i)[(,;$]|\s+(?:in\s+(?:a|the)\s+simulation|at\s+(?:the\s+)?latest\s+time|through\s+post|and\s+determine)\b|\.(?:\s|$)",
    );
    match stop.find(text) {
        Some(m) => &text[..m.start()],
        None => text,
    }
    .trim()
}

fn parse_number(s: &str) -> f64 {
    s.parse().expect("NUMBER pattern parses as f64")
}

fn clean_units(s: &str) -> Option<String> {
    let u = s.trim().trim_matches('$').trim();
    (!u.is_empty()).then(|| u.to_string())
}

fn unranged(name: &str, nominals: &BTreeMap<String, f64>) -> Result<ParameterDef, PromptError> {
    let ident = to_identifier(name);
    if ident.is_empty() {
        return Err(PromptError::UnrecognizedTemplate(name.to_string()));
    }
    let (nominal, origin) = match nominals.get(&ident) {
        Some(&n) => (n, RangeOrigin::Nominal),
        None => (1.0, RangeOrigin::Placeholder),
    };
    let (lower, upper) = default_range(nominal)
        .map_err(|_| PromptError::MalformedRange { name: ident.clone(), lower: nominal, upper: nominal })?;
    Ok(ParameterDef {
        name: ident,
        lower,
        upper,
        nominal: Some(nominal),
        units: None,
        range_origin: origin,
    })
}

fn split_list(text: &str) -> Vec<&str> {
    list_separator().split(text).map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// Parameter list of an analysis clause. When bound clauses are present each
/// one closes a parameter, so names such as "between the hot and cold" stay
/// intact; unbounded stretches are split on commas and "and".
fn parse_parameters(
    text: &str,
    nominals: &BTreeMap<String, f64>,
) -> Result<Vec<ParameterDef>, PromptError> {
    let mut params = Vec::new();
    let mut cursor = 0;
    for caps in bound_clause().captures_iter(text) {
        let whole = caps.get(0).unwrap();
        let chunk = &text[cursor..whole.start()];
        cursor = whole.end();
        let chunk = leading_separator().replace(chunk, "");
        // Commas inside a chunk separate leading unbounded parameters.
        let mut pieces: Vec<&str> = chunk.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        let Some(last) = pieces.pop() else {
            return Err(PromptError::UnrecognizedTemplate(text.to_string()));
        };
        for piece in pieces {
            params.push(unranged(piece, nominals)?);
        }
        let name = to_identifier(last);
        if name.is_empty() {
            return Err(PromptError::UnrecognizedTemplate(text.to_string()));
        }
        let param = if let Some(nom) = caps.name("nom") {
            let nominal = parse_number(nom.as_str());
            let (lower, upper) = default_range(nominal).map_err(|_| PromptError::MalformedRange {
                name: name.clone(),
                lower: nominal,
                upper: nominal,
            })?;
            ParameterDef {
                name,
                lower,
                upper,
                nominal: Some(nominal),
                units: caps.name("nu").and_then(|u| clean_units(u.as_str())),
                range_origin: RangeOrigin::Nominal,
            }
        } else {
            let lower = parse_number(&caps["lo"]);
            let upper = parse_number(&caps["hi"]);
            if !(lower < upper) {
                return Err(PromptError::MalformedRange { name, lower, upper });
            }
            let units = caps
                .name("hu")
                .and_then(|u| clean_units(u.as_str()))
                .or_else(|| caps.name("lu").and_then(|u| clean_units(u.as_str())));
            ParameterDef { name, lower, upper, nominal: None, units, range_origin: RangeOrigin::Explicit }
        };
        params.push(param);
    }
    let tail = leading_separator().replace(&text[cursor..], "");
    for piece in split_list(&tail) {
        params.push(unranged(piece, nominals)?);
    }
    if params.is_empty() {
        return Err(PromptError::UnrecognizedTemplate(text.to_string()));
    }
    Ok(params)
}

struct Analysis {
    params: Vec<ParameterDef>,
    qoi: String,
}

fn parse_analysis(body: &str, nominals: &BTreeMap<String, f64>) -> Result<Analysis, PromptError> {
    // The parameter list ends at the first " on " after the last bound clause.
    let search_from = bound_clause().find_iter(body).last().map(|m| m.end()).unwrap_or(0);
    let on = on_split()
        .find_at(body, search_from)
        .ok_or_else(|| PromptError::UnrecognizedTemplate(body.to_string()))?;
    let params = parse_parameters(&body[..on.start()], nominals)?;
    let qoi = to_identifier(qoi_phrase(&body[on.end()..]));
    if qoi.is_empty() {
        return Err(PromptError::UnrecognizedTemplate(body.to_string()));
    }
    Ok(Analysis { params, qoi })
}

struct Goal {
    kind: GoalKind,
    target: Option<f64>,
    params: Vec<String>,
    qoi: String,
}

fn parse_goal(body: &str) -> Result<Goal, PromptError> {
    let caps = goal_clause()
        .captures(body.trim())
        .ok_or_else(|| PromptError::UnrecognizedTemplate(body.to_string()))?;
    let smallest_input = !matches!(
        caps["mode"].to_lowercase().as_str(),
        "optimal" | "optimum" | "best"
    );
    let rel_text = caps["rel"].trim();
    let rel = relation()
        .captures(rel_text)
        .ok_or_else(|| PromptError::UnrecognizedTemplate(body.to_string()))?;
    let rest = &rel_text[rel.get(0).unwrap().end()..];
    let target = number().captures(rest).map(|c| parse_number(&c["n"]));

    let kind = if rel.name("near").is_some() {
        if smallest_input {
            GoalKind::MinInputAtTarget
        } else {
            GoalKind::Target
        }
    } else if rel.name("below").is_some() {
        GoalKind::Below
    } else if rel.name("max").is_some() {
        GoalKind::Maximize
    } else {
        GoalKind::Minimize
    };
    let target = if kind.needs_target() {
        Some(target.ok_or_else(|| PromptError::MissingTarget(body.trim().to_string()))?)
    } else {
        None
    };
    let params = split_list(&caps["params"]).into_iter().map(to_identifier).collect();
    let qoi = to_identifier(qoi_phrase(&caps["qoi"]));
    if qoi.is_empty() {
        return Err(PromptError::UnrecognizedTemplate(body.to_string()));
    }
    Ok(Goal { kind, target, params, qoi })
}

/// Parses a prompt; parameters without bounds get placeholder ranges.
pub fn parse_prompt(text: &str) -> Result<StudySpec, PromptError> {
    parse_prompt_with_nominals(text, &BTreeMap::new())
}

/// Parses a prompt, deriving ±20 % ranges for unbounded parameters from
/// `nominals` (keyed by identifier).
pub fn parse_prompt_with_nominals(
    text: &str,
    nominals: &BTreeMap<String, f64>,
) -> Result<StudySpec, PromptError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(PromptError::Empty);
    }
    let (tasks, simulation) = match simulation_split().find(text) {
        Some(m) => (&text[..m.start()], text[m.end()..].trim().trim_end_matches('.').to_string()),
        None => (text, String::new()),
    };

    let analysis_at = analysis_start().find(tasks);
    let goal_at = optimization_start().find(tasks);
    let (analysis, goal) = match (analysis_at, goal_at) {
        (Some(a), Some(g)) if g.start() > a.end() => {
            let body = tasks[a.end()..g.start()].trim();
            let body = body
                .strip_suffix(" and")
                .or_else(|| body.strip_suffix(','))
                .unwrap_or(body);
            (Some(parse_analysis(body, nominals)?), Some(parse_goal(&tasks[g.end()..])?))
        }
        (Some(a), _) => (Some(parse_analysis(&tasks[a.end()..], nominals)?), None),
        (None, Some(g)) => (None, Some(parse_goal(&tasks[g.end()..])?)),
        (None, None) => return Err(PromptError::UnrecognizedTemplate(text.to_string())),
    };

    let (parameters, qoi) = match (&analysis, &goal) {
        (Some(a), _) => (a.params.clone(), a.qoi.clone()),
        (None, Some(g)) => {
            let params = g
                .params
                .iter()
                .map(|p| unranged(p, nominals))
                .collect::<Result<Vec<_>, _>>()?;
            (params, g.qoi.clone())
        }
        (None, None) => unreachable!(),
    };
    if parameters.is_empty() {
        return Err(PromptError::UnrecognizedTemplate(text.to_string()));
    }

    let spec = StudySpec {
        simulation: SimulationTask { description: simulation, backend: None },
        postprocess: PostprocessTask {
            description: format!("extract {} at latest time through post-processing", qoi.replace('_', " ")),
            qoi: QoISpec::backend_direct(&qoi),
        },
        parameters,
        goal: goal.map(|g| GoalSpec { kind: g.kind, target: g.target, qoi: qoi.clone() }),
        settings: Settings::default(),
    };
    spec.validate()
        .map_err(|e| PromptError::UnrecognizedTemplate(format!("{text}: {e}")))?;
    Ok(spec)
}
