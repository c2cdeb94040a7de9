//! Built-in closed-form models standing in for a simulation code.

use std::collections::BTreeMap;

/// Registered model names.
pub const MODELS: [&str; 5] = ["linear", "explinear", "decay", "quench", "saturating"];

/// Fixed-name parameters of each model and their defaults. `linear` and
/// `explinear` additionally take per-dimension coefficients `b1..bm` /
/// `a1..am` (default 1).
fn fixed_defaults(name: &str) -> Option<&'static [(&'static str, f64)]> {
    Some(match name {
        "linear" => &[("c", 0.0)],
        "explinear" => &[],
        "decay" => &[("q0", 0.02), ("k", 30.0)],
        "quench" => &[("t_lo", 300.0), ("t_hi", 2000.0), ("s", 0.3), ("v_c", 41.0)],
        "saturating" => &[("d_max", 0.0707), ("phi0", 0.5), ("phi1", 1.1)],
        _ => return None,
    })
}

fn coefficient_prefix(name: &str) -> Option<char> {
    match name {
        "linear" => Some('b'),
        "explinear" => Some('a'),
        _ => None,
    }
}

pub fn is_registered(name: &str) -> bool {
    fixed_defaults(name).is_some()
}

/// Rejects unknown model names and parameter keys.
pub fn validate(name: &str, params: &BTreeMap<String, f64>) -> Result<(), String> {
    let fixed = fixed_defaults(name).ok_or_else(|| {
        format!("unknown analytic model {name:?} (known: {})", MODELS.join(", "))
    })?;
    for (key, value) in params {
        if !value.is_finite() {
            return Err(format!("analytic parameter {key} must be finite"));
        }
        let is_fixed = fixed.iter().any(|(k, _)| k == key);
        let is_coeff = coefficient_prefix(name).is_some_and(|p| {
            key.strip_prefix(p)
                .and_then(|i| i.parse::<usize>().ok())
                .is_some_and(|i| i >= 1)
        });
        if !is_fixed && !is_coeff {
            return Err(format!("analytic model {name} has no parameter {key:?}"));
        }
    }
    if name == "saturating" {
        let p = |k| param(name, params, k);
        if !(p("phi0") < p("phi1")) {
            return Err("saturating model requires phi0 < phi1".to_string());
        }
    }
    Ok(())
}

fn param(name: &str, params: &BTreeMap<String, f64>, key: &str) -> f64 {
    params.get(key).copied().unwrap_or_else(|| {
        fixed_defaults(name)
            .and_then(|d| d.iter().find(|(k, _)| *k == key).map(|(_, v)| *v))
            .unwrap_or(1.0)
    })
}

/// Evaluates a registered model. `linear` and `explinear` act on normalized
/// coordinates; the one-dimensional models act on the first raw coordinate.
pub fn evaluate(
    name: &str,
    params: &BTreeMap<String, f64>,
    normalized: &[f64],
    raw: &[f64],
) -> Result<f64, String> {
    let p = |k: &str| param(name, params, k);
    let coeff = |prefix: char, i: usize| p(&format!("{prefix}{}", i + 1));
    let first = || raw.first().copied().ok_or_else(|| "model needs one input".to_string());
    let value = match name {
        "linear" => p("c") + normalized.iter().enumerate().map(|(i, x)| coeff('b', i) * x).sum::<f64>(),
        "explinear" => normalized.iter().enumerate().map(|(i, x)| coeff('a', i) * x).sum::<f64>().exp(),
        "decay" => p("q0") * (-p("k") * first()?).exp(),
        "quench" => {
            let v = first()?;
            p("t_lo") + (p("t_hi") - p("t_lo")) / (1.0 + (p("s") * (v - p("v_c"))).exp())
        }
        "saturating" => {
            let phi = first()?;
            let ramp = (phi - p("phi0")) / (p("phi1") - p("phi0"));
            p("d_max") * ramp.clamp(0.0, 1.0)
        }
        _ => return Err(format!("unknown analytic model {name:?}")),
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("model {name} produced a non-finite value"))
    }
}
