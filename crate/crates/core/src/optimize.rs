//! Goal compilation and box-constrained minimization: projected L-BFGS for
//! surrogates of any dimension, bounded Brent search in one dimension, the
//! reduced-space back-map, and validation against the backend.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{run_case, BackendConfig, CasePoint};
use crate::sampling::normalize;
use crate::study::{GoalKind, GoalSpec, QoISpec};
use crate::subspace::{project, ReducedModel};
use crate::surrogate::{Poly1DSurrogate, Surrogate};

pub const TARGET_REL_TOL: f64 = 0.02;
pub const TARGET_SCAN_POINTS: usize = 1000;
/// Largest `|ŵᵀx* − z*|` not reported as clamping.
pub const CLAMP_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("goal {0} is not an objective for this solver")]
    UnsupportedGoal(GoalKind),
    #[error("goal {0} requires a target value")]
    MissingTarget(GoalKind),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("validation unavailable: {0}")]
    ValidationUnavailable(String),
}

type EvalFn<'a> = Box<dyn Fn(&[f64]) -> f64 + Send + Sync + 'a>;
type GradFn<'a> = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync + 'a>;

/// A smooth function on a box with its gradient.
pub struct Objective<'a> {
    pub eval: EvalFn<'a>,
    pub grad: GradFn<'a>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub description: String,
}

impl<'a> Objective<'a> {
    pub fn new(
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'a,
        grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'a,
        lower: Vec<f64>,
        upper: Vec<f64>,
        description: impl Into<String>,
    ) -> Self {
        Self { eval: Box::new(eval), grad: Box::new(grad), lower, upper, description: description.into() }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (l, u))| v.clamp(*l, *u)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    /// Largest relative mismatch between the gradient and central differences.
    pub fn gradient_check(&self, x: &[f64], h: f64) -> f64 {
        let g = (self.grad)(x);
        (0..x.len())
            .map(|i| {
                let mut up = x.to_vec();
                let mut dn = x.to_vec();
                up[i] += h;
                dn[i] -= h;
                let fd = ((self.eval)(&up) - (self.eval)(&dn)) / (2.0 * h);
                (g[i] - fd).abs() / g[i].abs().max(1.0)
            })
            .fold(0.0, f64::max)
    }
}

fn check_box(lower: &[f64], upper: &[f64]) -> Result<(), OptimizeError> {
    if lower.len() != upper.len() || lower.is_empty() {
        return Err(OptimizeError::InvalidBounds("bound vectors differ in length or are empty".to_string()));
    }
    match lower.iter().zip(upper).position(|(l, u)| !(l < u)) {
        Some(i) => Err(OptimizeError::InvalidBounds(format!("lower[{i}] = {} not below upper[{i}] = {}", lower[i], upper[i]))),
        None => Ok(()),
    }
}

/// Turns a goal on `model` into an objective to minimize.
pub fn compile_objective<'a>(
    goal: &GoalSpec,
    model: &'a dyn Surrogate,
    lower: Vec<f64>,
    upper: Vec<f64>,
) -> Result<Objective<'a>, OptimizeError> {
    check_box(&lower, &upper)?;
    let target = || goal.target.ok_or(OptimizeError::MissingTarget(goal.kind));
    Ok(match goal.kind {
        GoalKind::Minimize => Objective::new(
            move |x| model.predict(x),
            move |x| model.gradient(x),
            lower,
            upper,
            format!("minimize {}", goal.qoi),
        ),
        GoalKind::Maximize => Objective::new(
            move |x| -model.predict(x),
            move |x| model.gradient(x).into_iter().map(|g| -g).collect(),
            lower,
            upper,
            format!("maximize {}", goal.qoi),
        ),
        GoalKind::Target | GoalKind::Below => {
            let t = target()?;
            Objective::new(
                move |x| (model.predict(x) - t).powi(2),
                move |x| {
                    let r = 2.0 * (model.predict(x) - t);
                    model.gradient(x).into_iter().map(|g| r * g).collect()
                },
                lower,
                upper,
                format!("({} - {t})^2", goal.qoi),
            )
        }
        GoalKind::MinInputAtTarget => return Err(OptimizeError::UnsupportedGoal(goal.kind)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTol,
    MaxIter,
    LineSearchFail,
    IntervalTol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub f: f64,
    /// Projected-gradient norm for L-BFGS, bracket width for the scalar search.
    pub measure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub x_star: Vec<f64>,
    /// Best objective value found.
    pub f_star: f64,
    /// `eval(x_star)`.
    pub objective_value: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOptions {
    pub epsilon: f64,
    pub memory: usize,
    pub max_iter: usize,
    pub line_search_trials: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { epsilon: 1e-8, memory: 10, max_iter: 500, line_search_trials: 60 }
    }
}

const ARMIJO_C1: f64 = 1e-4;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Limited-memory curvature history.
#[derive(Debug, Default)]
pub struct LbfgsState {
    pub memory: usize,
    pub s_history: VecDeque<Vec<f64>>,
    pub y_history: VecDeque<Vec<f64>>,
}

impl LbfgsState {
    pub fn new(memory: usize) -> Self {
        Self { memory, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.s_history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_history.is_empty()
    }

    pub fn clear(&mut self) {
        self.s_history.clear();
        self.y_history.clear();
    }

    /// Stores the pair when `sᵀy > 1e-12‖s‖‖y‖`; returns whether it was kept.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        if dot(&s, &y) <= 1e-12 * norm(&s) * norm(&y) {
            return false;
        }
        if self.s_history.len() == self.memory {
            self.s_history.pop_front();
            self.y_history.pop_front();
        }
        self.s_history.push_back(s);
        self.y_history.push_back(y);
        true
    }

    /// Two-loop recursion: `H g` for the implicit inverse Hessian.
    pub fn apply_inverse(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let k = self.s_history.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let (s, y) = (&self.s_history[i], &self.y_history[i]);
            alpha[i] = dot(s, &q) / dot(y, s);
            q.iter_mut().zip(y).for_each(|(qj, yj)| *qj -= alpha[i] * yj);
        }
        if let (Some(s), Some(y)) = (self.s_history.back(), self.y_history.back()) {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let (s, y) = (&self.s_history[i], &self.y_history[i]);
            let beta = dot(y, &q) / dot(y, s);
            q.iter_mut().zip(s).for_each(|(qj, sj)| *qj += (alpha[i] - beta) * sj);
        }
        q
    }
}

fn projected_gradient(obj: &Objective, x: &[f64], g: &[f64]) -> Vec<f64> {
    let moved: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    x.iter().zip(obj.clamp(&moved)).map(|(a, b)| a - b).collect()
}

/// Projected L-BFGS over the objective's box, starting at `x0` (the box
/// center when `None`).
pub fn minimize_lbfgsb(obj: &Objective, x0: Option<&[f64]>, opts: &LbfgsOptions) -> OptResult {
    let mut x = match x0 {
        Some(x0) => {
            let c = obj.clamp(x0);
            if c != x0 {
                log::warn!("initial point outside the box; clamped");
            }
            c
        }
        None => obj.center(),
    };
    let mut f = (obj.eval)(&x);
    let mut g = (obj.grad)(&x);
    let mut state = LbfgsState::new(opts.memory.max(1));
    let mut trace = vec![TraceEntry { f, measure: norm(&projected_gradient(obj, &x, &g)) }];
    let mut iterations = 0;

    let termination = loop {
        if trace.last().is_some_and(|t| t.measure < opts.epsilon) {
            break Termination::GradientTol;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIter;
        }
        let active: Vec<bool> = (0..x.len())
            .map(|i| (x[i] <= obj.lower[i] && g[i] > 0.0) || (x[i] >= obj.upper[i] && g[i] < 0.0))
            .collect();
        let masked = |v: Vec<f64>| -> Vec<f64> {
            v.into_iter().zip(&active).map(|(d, &a)| if a { 0.0 } else { d }).collect()
        };
        let steepest = || masked(g.iter().map(|v| -v).collect());

        let mut d = masked(state.apply_inverse(&g).into_iter().map(|v| -v).collect());
        if !(dot(&d, &g) < 0.0) {
            state.clear();
            d = steepest();
        }

        let step = line_search(obj, &x, f, &g, &d, state.is_empty(), opts.line_search_trials).or_else(|| {
            if state.is_empty() {
                return None;
            }
            state.clear();
            d = steepest();
            line_search(obj, &x, f, &g, &d, true, opts.line_search_trials)
        });
        let Some((x_new, f_new)) = step else {
            break Termination::LineSearchFail;
        };

        let g_new = (obj.grad)(&x_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        state.push(s, y);
        x = x_new;
        f = f_new;
        g = g_new;
        iterations += 1;
        trace.push(TraceEntry { f, measure: norm(&projected_gradient(obj, &x, &g)) });
    };

    OptResult { objective_value: (obj.eval)(&x), x_star: x, f_star: f, iterations, termination, trace }
}

/// Backtracking along the projected path `clamp(x + αd)`, halving `α`
/// until sufficient decrease holds.
fn line_search(
    obj: &Objective,
    x: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    first: bool,
    trials: usize,
) -> Option<(Vec<f64>, f64)> {
    let mut alpha = if first { (1.0 / norm(d)).min(1.0) } else { 1.0 };
    for _ in 0..trials {
        let trial: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
        let x_new = obj.clamp(&trial);
        if x_new.as_slice() == x {
            return None;
        }
        let f_new = (obj.eval)(&x_new);
        let s: Vec<f64> = x_new.iter().zip(x).map(|(a, b)| a - b).collect();
        if f_new.is_finite() && f_new <= f && f_new <= f + ARMIJO_C1 * dot(g, &s) {
            return Some((x_new, f_new));
        }
        alpha *= 0.5;
    }
    None
}

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Brent's bounded minimization. Stops when the bracket is narrower than
/// `tol·(1 + |x|)`, then keeps an endpoint if it is strictly better. Never
/// evaluates outside `[lower, upper]`.
pub fn minimize_scalar_bounded(
    f: impl Fn(f64) -> f64,
    lower: f64,
    upper: f64,
    tol: f64,
) -> Result<OptResult, OptimizeError> {
    check_box(&[lower], &[upper])?;
    let (mut a, mut b) = (lower, upper);
    let mut x = a + GOLDEN * (b - a);
    let (mut v, mut w) = (x, x);
    let mut fx = f(x);
    let (mut fv, mut fw) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    let mut trace = vec![TraceEntry { f: fx, measure: b - a }];
    let mut iterations = 0;

    loop {
        let xm = 0.5 * (a + b);
        let tol1 = 0.25 * tol * (1.0 + x.abs());
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) || iterations >= 10_000 {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let step = if d.abs() >= tol1 { d } else if d >= 0.0 { tol1 } else { -tol1 };
        let u = (x + step).clamp(lower, upper);
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
        iterations += 1;
        trace.push(TraceEntry { f: fx, measure: b - a });
    }

    for end in [lower, upper] {
        let fe = f(end);
        if fe < fx {
            x = end;
            fx = fe;
        }
    }
    Ok(OptResult {
        x_star: vec![x],
        f_star: fx,
        objective_value: fx,
        iterations,
        termination: Termination::IntervalTol,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedOptimum {
    pub z_star: f64,
    /// `ŵᵀx*` after the back-map; differs from `z_star` when clamping bit.
    pub z_achieved: f64,
    pub x_star_normalized: Vec<f64>,
    pub x_star: Vec<f64>,
    pub clamped: bool,
    pub predicted: f64,
    pub search: OptResult,
}

/// Maps `z*` onto the ray through the box center along `ŵ`, clamped to the
/// unit box.
pub fn back_map(z_star: f64, w_hat: &[f64]) -> Vec<f64> {
    let center = vec![0.5; w_hat.len()];
    let shift = z_star - project(&center, w_hat);
    center.iter().zip(w_hat).map(|(c, w)| (c + shift * w).clamp(0.0, 1.0)).collect()
}

/// Solves the goal on `g` over the observed `z` range and maps the optimum
/// back to parameter space. `lower`/`upper` are the raw parameter bounds.
pub fn optimize_reduced(
    reduced: &ReducedModel,
    w_hat: &[f64],
    goal: &GoalSpec,
    lower: &[f64],
    upper: &[f64],
    tol: f64,
) -> Result<ReducedOptimum, OptimizeError> {
    check_box(lower, upper)?;
    let g = &reduced.g;
    let (zl, zu) = g.domain;
    let obj = compile_objective(goal, g, vec![zl], vec![zu])?;
    let search = minimize_scalar_bounded(|z| (obj.eval)(&[z]), zl, zu, tol)?;
    let z_star = search.x_star[0];
    let x_norm = back_map(z_star, w_hat);
    let z_achieved = project(&x_norm, w_hat);
    let x_star = x_norm.iter().zip(lower.iter().zip(upper)).map(|(t, (l, u))| l + t * (u - l)).collect();
    Ok(ReducedOptimum {
        z_star,
        z_achieved,
        clamped: (z_achieved - z_star).abs() > CLAMP_TOL,
        predicted: g.value(z_achieved),
        x_star_normalized: x_norm,
        x_star,
        search,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSearch {
    pub x: f64,
    pub value: f64,
    pub reached: bool,
}

/// Smallest `x` in the surface's domain with `|g(x) − T| ≤ rel_tol·|T|`.
/// Falls back to the scan point closest to the target, flagged as not reached.
pub fn min_input_at_target(surface: &Poly1DSurrogate, target: f64, rel_tol: f64) -> TargetSearch {
    let (lo, hi) = surface.domain;
    let ok = |x: f64| (surface.value(x) - target).abs() <= rel_tol * target.abs();
    let grid = |i: usize| {
        if i + 1 == TARGET_SCAN_POINTS {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (TARGET_SCAN_POINTS - 1) as f64
        }
    };
    match (0..TARGET_SCAN_POINTS).find(|&i| ok(grid(i))) {
        Some(0) => TargetSearch { x: lo, value: surface.value(lo), reached: true },
        Some(i) => {
            let (mut a, mut b) = (grid(i - 1), grid(i));
            for _ in 0..100 {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                if ok(mid) {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            TargetSearch { x: b, value: surface.value(b), reached: true }
        }
        None => {
            let x = (0..TARGET_SCAN_POINTS)
                .map(grid)
                .min_by(|&p, &q| (surface.value(p) - target).abs().total_cmp(&(surface.value(q) - target).abs()))
                .unwrap_or(lo);
            TargetSearch { x, value: surface.value(x), reached: false }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub x_star: Vec<f64>,
    pub actual: f64,
    pub predicted: f64,
    /// `|actual − predicted| / (1 + |actual|)`.
    pub rel_error: f64,
}

/// One backend run at `x_star` (raw units) compared with the prediction.
#[allow(clippy::too_many_arguments)]
pub fn validate_optimum(
    backend: &BackendConfig,
    qoi: &QoISpec,
    names: &[String],
    lower: &[f64],
    upper: &[f64],
    x_star: &[f64],
    predicted: f64,
    case_dir: Option<&Path>,
) -> Result<ValidationReport, OptimizeError> {
    let normalized = x_star
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(x, (l, u))| normalize(*x, *l, *u))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| OptimizeError::ValidationUnavailable(e.to_string()))?;
    let point = CasePoint { index: 0, names: names.to_vec(), raw: x_star.to_vec(), normalized };
    let record = run_case(backend, qoi, &point, case_dir);
    let actual = record.qoi_value.ok_or_else(|| {
        OptimizeError::ValidationUnavailable(format!(
            "{}: {}",
            record.status.as_str(),
            record.message.unwrap_or_default()
        ))
    })?;
    Ok(ValidationReport {
        x_star: x_star.to_vec(),
        actual,
        predicted,
        rel_error: (actual - predicted).abs() / (1.0 + actual.abs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{fit_poly1d, LinearSurrogate, QuadraticSurrogate};
    use proptest::prelude::*;
    use std::cell::Cell;

    fn quad1(center: f64, lo: f64, hi: f64) -> Objective<'static> {
        Objective::new(move |x| (x[0] - center).powi(2), move |x| vec![2.0 * (x[0] - center)], vec![lo], vec![hi], "q")
    }

    fn goal(kind: GoalKind, target: Option<f64>) -> GoalSpec {
        GoalSpec { kind, target, qoi: "q".to_string() }
    }

    #[test]
    fn interior_minimum() {
        let r = minimize_lbfgsb(&quad1(3.0, 0.0, 10.0), Some(&[9.0]), &LbfgsOptions::default());
        assert!((r.x_star[0] - 3.0).abs() < 1e-8);
        assert_eq!(r.termination, Termination::GradientTol);
        assert_eq!(r.objective_value, r.f_star);
    }

    #[test]
    fn active_bound() {
        let r = minimize_lbfgsb(&quad1(3.0, 4.0, 10.0), None, &LbfgsOptions::default());
        assert_eq!(r.x_star, vec![4.0]);
        assert_eq!(r.termination, Termination::GradientTol);
        assert_eq!(r.trace.last().unwrap().measure, 0.0);
    }

    #[test]
    fn rosenbrock() {
        let obj = Objective::new(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            |x| {
                vec![
                    -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                    200.0 * (x[1] - x[0] * x[0]),
                ]
            },
            vec![-2.0, -2.0],
            vec![2.0, 2.0],
            "rosenbrock",
        );
        let r = minimize_lbfgsb(&obj, Some(&[-1.2, 1.0]), &LbfgsOptions::default());
        assert!((r.x_star[0] - 1.0).abs() < 1e-5 && (r.x_star[1] - 1.0).abs() < 1e-5, "{:?}", r);
        assert!(r.trace.windows(2).all(|w| w[1].f <= w[0].f));
    }

    #[test]
    fn start_outside_is_clamped() {
        let r = minimize_lbfgsb(&quad1(3.0, 0.0, 10.0), Some(&[50.0]), &LbfgsOptions::default());
        assert!((r.x_star[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn memory_is_bounded() {
        let mut s = LbfgsState::new(3);
        for i in 1..10 {
            assert!(s.push(vec![i as f64, 1.0], vec![1.0, i as f64]));
        }
        assert_eq!(s.len(), 3);
        assert!(!s.push(vec![1.0, 0.0], vec![-1.0, 0.0]));
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn compile_goals() {
        let model = LinearSurrogate { c: 1.0, b: vec![2.0, -1.0], r_squared: 1.0, n_points: 4 };
        let b = (vec![0.0, 0.0], vec![1.0, 1.0]);
        let min = compile_objective(&goal(GoalKind::Minimize, None), &model, b.0.clone(), b.1.clone()).unwrap();
        assert_eq!((min.eval)(&[0.5, 0.5]), 1.5);
        let max = compile_objective(&goal(GoalKind::Maximize, None), &model, b.0.clone(), b.1.clone()).unwrap();
        assert_eq!((max.eval)(&[0.5, 0.5]), -1.5);
        assert_eq!((max.grad)(&[0.5, 0.5]), vec![-2.0, 1.0]);
        let tgt = compile_objective(&goal(GoalKind::Target, Some(25.0)), &model, b.0.clone(), b.1.clone()).unwrap();
        assert_eq!((tgt.eval)(&[0.5, 0.5]), (1.5f64 - 25.0).powi(2));
        assert!(matches!(
            compile_objective(&goal(GoalKind::MinInputAtTarget, Some(1.0)), &model, b.0.clone(), b.1.clone()),
            Err(OptimizeError::UnsupportedGoal(_))
        ));
        assert!(matches!(
            compile_objective(&goal(GoalKind::Below, None), &model, b.0, b.1),
            Err(OptimizeError::MissingTarget(_))
        ));
    }

    #[test]
    fn target_gradient_matches_differences() {
        let quad = QuadraticSurrogate {
            c: 0.3,
            b: vec![1.0, -2.0],
            a: vec![vec![0.5, 0.25], vec![0.25, -1.0]],
            r_squared: 1.0,
            n_points: 6,
        };
        let obj = compile_objective(&goal(GoalKind::Target, Some(0.01)), &quad, vec![0.0; 2], vec![1.0; 2]).unwrap();
        for x in [[0.1, 0.9], [0.5, 0.5], [0.8, 0.2]] {
            assert!(obj.gradient_check(&x, 1e-6) < 1e-6);
        }
    }

    #[test]
    fn scalar_examples() {
        let r = minimize_scalar_bounded(|x| (x - 0.3).powi(2), 0.0, 1.0, 1e-10).unwrap();
        assert!((r.x_star[0] - 0.3).abs() < 1e-9);
        let r = minimize_scalar_bounded(|x| -x, 0.0, 1.0, 1e-10).unwrap();
        assert_eq!(r.x_star, vec![1.0]);
        let (q0, k) = (0.02f64, 30.0f64);
        let r = minimize_scalar_bounded(|v| (q0 * (-k * v).exp() - 0.01).powi(2), 0.0, 0.1, 1e-10).unwrap();
        assert!((r.x_star[0] - (q0 / 0.01).ln() / k).abs() < 1e-6);
        assert!(minimize_scalar_bounded(|x| x, 1.0, 1.0, 1e-10).is_err());
    }

    #[test]
    fn scalar_stays_in_bounds() {
        let lo = Cell::new(f64::INFINITY);
        let hi = Cell::new(f64::NEG_INFINITY);
        let f = |x: f64| {
            lo.set(lo.get().min(x));
            hi.set(hi.get().max(x));
            (x - 5.0).powi(2)
        };
        let r = minimize_scalar_bounded(f, -1.0, 2.0, 1e-10).unwrap();
        assert_eq!(r.x_star, vec![2.0]);
        assert!(lo.get() >= -1.0 && hi.get() <= 2.0);
    }

    #[test]
    fn back_map_axis_aligned() {
        let x = back_map(0.9, &[1.0, 0.0, 0.0]);
        assert_eq!(x, vec![0.9, 0.5, 0.5]);
    }

    #[test]
    fn min_input_cases() {
        let ramp = fit_poly1d(&[0.5, 0.8, 1.1], &[0.0, 0.03535, 0.0707], 3).unwrap();
        let hit = min_input_at_target(&ramp, 0.0707, TARGET_REL_TOL);
        assert!(hit.reached);
        // Ramp reaches 0.98 · d_max at φ = 0.5 + 0.98 · 0.6.
        assert!((hit.x - 1.088).abs() < 1e-6, "{}", hit.x);

        let flat = Poly1DSurrogate::new(vec![2.0], (0.0, 1.0));
        let c = min_input_at_target(&flat, 2.0, TARGET_REL_TOL);
        assert_eq!((c.x, c.reached), (0.0, true));

        let miss = min_input_at_target(&ramp, 1.0, TARGET_REL_TOL);
        assert!(!miss.reached);
        assert_eq!(miss.x, 1.1);
    }

    #[test]
    fn validation_against_analytic_backend() {
        let cfg = BackendConfig::analytic("decay", &[("q0", 0.02), ("k", 30.0)]);
        let names = vec!["nu".to_string()];
        let x = 0.05;
        let exact = 0.02 * (-30.0f64 * x).exp();
        let rep = validate_optimum(&cfg, &QoISpec::backend_direct("q"), &names, &[0.0], &[0.1], &[x], exact, None)
            .unwrap();
        assert!(rep.rel_error <= 1e-10);

        let process = BackendConfig::ProcessTemplate {
            template_dir: "/nonexistent".into(),
            run_command: vec!["true".into()],
            timeout: 1.0,
        };
        let err = validate_optimum(&process, &QoISpec::backend_direct("q"), &names, &[0.0], &[0.1], &[x], 0.0, None);
        assert!(matches!(err, Err(OptimizeError::ValidationUnavailable(_))));
    }

    proptest! {
        #[test]
        fn feasible_monotone_and_scale_invariant(
            cx in -1.0f64..2.0, cy in -1.0f64..2.0, a in 0.1f64..100.0, x0 in 0.0f64..1.0, y0 in 0.0f64..1.0,
        ) {
            let make = |scale: f64| Objective::new(
                move |x: &[f64]| scale * ((x[0] - cx).powi(2) + 3.0 * (x[1] - cy).powi(2) + (x[0] - cx) * (x[1] - cy)),
                move |x: &[f64]| vec![
                    scale * (2.0 * (x[0] - cx) + (x[1] - cy)),
                    scale * (6.0 * (x[1] - cy) + (x[0] - cx)),
                ],
                vec![0.0, 0.0],
                vec![1.0, 1.0],
                "convex",
            );
            let base = minimize_lbfgsb(&make(1.0), Some(&[x0, y0]), &LbfgsOptions::default());
            let scaled = minimize_lbfgsb(&make(a), Some(&[x0, y0]), &LbfgsOptions::default());
            for r in [&base, &scaled] {
                prop_assert!(r.x_star.iter().all(|v| (0.0..=1.0).contains(v)));
                prop_assert!(r.trace.windows(2).all(|w| w[1].f <= w[0].f));
            }
            for i in 0..2 {
                prop_assert!((base.x_star[i] - scaled.x_star[i]).abs() < 1e-6);
            }
        }
    }
}
