//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use paramstudy::backend::{run_batch, Backend, BackendConfig, BackendError, BatchOptions, CasePoint, Evaluator, RunRecord};
use paramstudy::linalg::symmetric_eigen;
use paramstudy::optimize::{compile_objective, minimize_lbfgsb, LbfgsOptions, Objective};
use paramstudy::prompt::parse_prompt;
use paramstudy::rng::Stream;
use paramstudy::sampling::plan_samples;
use paramstudy::study::{load_spec, GoalKind, GoalSpec, ParameterDef, QoISpec, RangeOrigin};
use paramstudy::subspace::{active_direction_ols, angle_between, bootstrap_direction};
use paramstudy::surrogate::{fit_ols, fit_poly1d, fit_quadratic, LinearSurrogate, Surrogate};
use paramstudy::workflow::{cmd_analyze, cmd_optimize, cmd_run, RunOptions};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(started: Instant, limit_secs: u64) -> Result<(), String> {
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(limit_secs), format!("took {elapsed:?}, limit {limit_secs} s"))
}

fn demo(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo").join(name)
}

fn unit_points(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut s = Stream::new(seed);
    (0..n).map(|_| (0..m).map(|_| s.unit()).collect()).collect()
}

fn unit_params(m: usize) -> Vec<ParameterDef> {
    (1..=m).map(|i| ParameterDef::new(&format!("x{i}"), 0.0, 1.0)).collect()
}

fn rank_one_identity() -> Outcome {
    let started = Instant::now();
    let mut s = Stream::new(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = 1 + s.index(8);
        let b: Vec<f64> = (0..m).map(|_| 20.0 * s.unit() - 10.0).collect();
        let r = active_direction_ols(&LinearSurrogate { c: 0.0, b: b.clone(), r_squared: 1.0, n_points: m + 1 }, None)
            .map_err(|e| e.to_string())?;
        let norm_sq: f64 = b.iter().map(|v| v * v).sum();
        let norm = norm_sq.sqrt();
        worst = worst.max((r.eigenvalues[0] - norm_sq).abs() / norm_sq);
        let sign = if r.w_hat.iter().zip(&b).map(|(w, b)| w * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        for (w, bi) in r.w_hat.iter().zip(&b) {
            worst = worst.max((w - sign * bi / norm).abs());
        }
    }
    check(worst <= 1e-12, format!("worst relative deviation {worst:e}"))?;
    within(started, 1)?;
    Ok(format!("worst deviation {worst:e}"))
}

fn eigendecomposition() -> Outcome {
    let started = Instant::now();
    let mut s = Stream::new(2);
    let (mut worst_rec, mut worst_orth) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let m = 1 + s.index(8);
        let mut c = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = 2.0 * s.unit() - 1.0;
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        let eig = symmetric_eigen(&c).map_err(|e| e.to_string())?;
        let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eig.values.clone()));
        let rec = (&eig.vectors * lambda * eig.vectors.transpose() - &c).norm() / (1.0 + c.norm());
        let orth = (eig.vectors.transpose() * &eig.vectors - DMatrix::<f64>::identity(m, m)).norm();
        worst_rec = worst_rec.max(rec);
        worst_orth = worst_orth.max(orth);
        check(eig.values.windows(2).all(|w| w[0] >= w[1]), "eigenvalues not descending")?;
    }
    check(worst_rec <= 1e-10, format!("reconstruction {worst_rec:e}"))?;
    check(worst_orth <= 1e-10, format!("orthonormality {worst_orth:e}"))?;
    within(started, 5)?;
    Ok(format!("reconstruction {worst_rec:e}, orthonormality {worst_orth:e}"))
}

fn ridge_angle(x: &[Vec<f64>]) -> Result<f64, String> {
    let a = [0.7, 0.3];
    let q: Vec<f64> = x.iter().map(|r| (a[0] * r[0] + a[1] * r[1]).exp()).collect();
    let w = active_direction_ols(&fit_ols(x, &q).map_err(|e| e.to_string())?, None).map_err(|e| e.to_string())?.w_hat;
    let norm = (a[0] * a[0] + a[1] * a[1]).sqrt();
    Ok(angle_between(&w, &[a[0] / norm, a[1] / norm]).to_degrees())
}

fn direction_recovery() -> Outcome {
    let started = Instant::now();
    let plan = plan_samples(&unit_params(2), 4.0, 0).map_err(|e| e.to_string())?;
    check(plan.len() == 8, format!("plan has {} points", plan.len()))?;
    let small = ridge_angle(&plan.points_normalized)?;
    let large = ridge_angle(&unit_points(64, 2, 0))?;
    check(small <= 5.0, format!("N=8 angle {small} deg"))?;
    check(large <= 2.0, format!("N=64 angle {large} deg"))?;
    within(started, 1)?;
    Ok(format!("angle {small:.3} deg at N=8, {large:.3} deg at N=64"))
}

fn ranking() -> Outcome {
    let started = Instant::now();
    let coeffs = [1.0, 0.05, 0.02, 0.01];
    let plan = plan_samples(&unit_params(4), 8.0, 0).map_err(|e| e.to_string())?;
    check(plan.len() == 32, format!("plan has {} points", plan.len()))?;
    let q: Vec<f64> = plan.points_normalized.iter().map(|r| r.iter().zip(&coeffs).map(|(x, c)| x * c).sum()).collect();
    let w = active_direction_ols(&fit_ols(&plan.points_normalized, &q).map_err(|e| e.to_string())?, None)
        .map_err(|e| e.to_string())?
        .w_hat;
    let order = paramstudy::workflow::rank_components(&w);
    check(order == vec![0, 1, 2, 3], format!("ranking {order:?}"))?;
    check(w[0] >= 0.99, format!("first component {}", w[0]))?;
    within(started, 1)?;
    Ok(format!("ranking {order:?}, first component {:.5}", w[0]))
}

/// Exact box-constrained minimum of `½xᵀHx + gᵀx` for positive-definite `H`:
/// every assignment of each coordinate to its lower bound, upper bound, or
/// free, with the free block solved exactly.
fn qp_oracle(h: &DMatrix<f64>, g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let m = g.len();
    let f = |x: &[f64]| {
        let xv = nalgebra::DVector::from_column_slice(x);
        0.5 * (xv.transpose() * h * &xv)[0] + g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut best = f64::INFINITY;
    for code in 0..3usize.pow(m as u32) {
        let mut x = vec![0.0; m];
        let mut free = Vec::new();
        let mut c = code;
        for i in 0..m {
            match c % 3 {
                0 => x[i] = lo[i],
                1 => x[i] = hi[i],
                _ => free.push(i),
            }
            c /= 3;
        }
        if !free.is_empty() {
            let k = free.len();
            let hff = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
            let rhs = nalgebra::DVector::from_fn(k, |a, _| {
                let i = free[a];
                -g[i] - (0..m).filter(|j| !free.contains(j)).map(|j| h[(i, j)] * x[j]).sum::<f64>()
            });
            let Some(sol) = hff.cholesky().map(|ch| ch.solve(&rhs)) else { continue };
            for (a, &i) in free.iter().enumerate() {
                x[i] = sol[a];
            }
            if free.iter().any(|&i| x[i] < lo[i] || x[i] > hi[i]) {
                continue;
            }
        }
        best = best.min(f(&x));
    }
    best
}

fn lbfgsb_oracle() -> Outcome {
    let started = Instant::now();
    let mut s = Stream::new(5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let m = 1 + s.index(4);
        let l = DMatrix::from_fn(m, m, |_, _| 2.0 * s.unit() - 1.0);
        let h = &l * l.transpose() + DMatrix::<f64>::identity(m, m) * 0.1;
        let g: Vec<f64> = (0..m).map(|_| 4.0 * s.unit() - 2.0).collect();
        let lo: Vec<f64> = (0..m).map(|_| -2.0 * s.unit()).collect();
        let hi: Vec<f64> = lo.iter().map(|v| v + 0.1 + 2.0 * s.unit()).collect();
        let (h2, g2) = (h.clone(), g.clone());
        let (h_exact, g_exact) = (h.clone(), g.clone());
        let obj = Objective::new(
            move |x| {
                let xv = nalgebra::DVector::from_column_slice(x);
                0.5 * (xv.transpose() * &h * &xv)[0] + g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            },
            move |x| {
                let hx = &h2 * nalgebra::DVector::from_column_slice(x);
                hx.iter().zip(&g2).map(|(a, b)| a + b).collect()
            },
            lo.clone(),
            hi.clone(),
            "quadratic",
        );
        let r = minimize_lbfgsb(&obj, None, &LbfgsOptions::default());
        check(
            r.x_star.iter().zip(lo.iter().zip(&hi)).all(|(x, (l, u))| l <= x && x <= u),
            "iterate left the box",
        )?;
        worst = worst.max((r.f_star - qp_oracle(&h_exact, &g_exact, &lo, &hi)).abs());
    }
    check(worst <= 1e-6, format!("worst |f - oracle| {worst:e}"))?;

    let rosen = Objective::new(
        |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
        |x| vec![-2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]), 200.0 * (x[1] - x[0] * x[0])],
        vec![-2.0, -2.0],
        vec![2.0, 2.0],
        "rosenbrock",
    );
    let r = minimize_lbfgsb(&rosen, None, &LbfgsOptions::default());
    let dist = ((r.x_star[0] - 1.0).abs()).max((r.x_star[1] - 1.0).abs());
    check(dist <= 1e-5, format!("Rosenbrock ended at {:?}", r.x_star))?;
    within(started, 10)?;
    Ok(format!("worst |f - oracle| {worst:e}, Rosenbrock error {dist:e}"))
}

fn workspace() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn target_calibration() -> Outcome {
    let started = Instant::now();
    let spec_path = demo("decay.toml");
    let spec = load_spec(&spec_path).map_err(|e| e.to_string())?;
    let Some(BackendConfig::Analytic { analytic_params, .. }) = &spec.simulation.backend else {
        return Err("decay demo must use the analytic backend".to_string());
    };
    let (q0, k) = (analytic_params["q0"], analytic_params["k"]);
    let target = spec.goal.as_ref().and_then(|g| g.target).ok_or("demo has no target")?;
    let expected = (q0 / target).ln() / k;

    let ws = workspace();
    let opts = RunOptions { workspace: Some(ws.path().to_path_buf()), workers: Some(2), ..Default::default() };
    let run = cmd_run(&spec_path, &opts).map_err(|e| e.to_string())?;
    cmd_analyze(&run.study_dir).map_err(|e| e.to_string())?;
    let opt = cmd_optimize(&run.study_dir).map_err(|e| e.to_string())?;
    let nu = opt.x_star[0];
    let rel = opt.validation.as_ref().ok_or("no validation")?.rel_error;
    check((nu - expected).abs() <= 1e-4, format!("nu* {nu} vs closed form {expected}"))?;
    check(rel <= 1e-6, format!("validation rel_error {rel:e}"))?;
    within(started, 5)?;
    Ok(format!("nu* {nu} vs {expected} (error {:e}), validation rel_error {rel:e}", (nu - expected).abs()))
}

fn min_input() -> Outcome {
    let started = Instant::now();
    let spec_path = demo("saturating.toml");
    let spec = load_spec(&spec_path).map_err(|e| e.to_string())?;
    let Some(BackendConfig::Analytic { analytic_params, .. }) = &spec.simulation.backend else {
        return Err("saturating demo must use the analytic backend".to_string());
    };
    let (d_max, phi0, phi1) = (analytic_params["d_max"], analytic_params["phi0"], analytic_params["phi1"]);
    let goal = spec.goal.clone().ok_or("demo has no goal")?;
    check(goal.kind == GoalKind::MinInputAtTarget, "demo goal is not min_input_at_target")?;
    let t = goal.target.ok_or("no target")?;
    // First point of the ramp inside the 2 % band below the target.
    let expected = phi0 + (phi1 - phi0) * (1.0 - 0.02) * t / d_max;

    let ws = workspace();
    let opts = RunOptions { workspace: Some(ws.path().to_path_buf()), ..Default::default() };
    let run = cmd_run(&spec_path, &opts).map_err(|e| e.to_string())?;
    cmd_analyze(&run.study_dir).map_err(|e| e.to_string())?;
    let opt = cmd_optimize(&run.study_dir).map_err(|e| e.to_string())?;
    let phi = opt.x_star[0];
    check((phi - expected).abs() <= 1e-3, format!("phi {phi} vs crossing {expected}"))?;
    within(started, 1)?;
    Ok(format!("phi {phi} vs crossing {expected}"))
}

fn bootstrap_degeneracy() -> Outcome {
    let started = Instant::now();
    let x = unit_points(24, 3, 8);
    let clean: Vec<f64> = x.iter().map(|r| 1.0 + r[0] + 0.5 * r[1] + 0.2 * r[2]).collect();
    let mut noise = Stream::new(9);
    let noisy: Vec<f64> = clean.iter().map(|v| v + 0.1 * (2.0 * noise.unit() - 1.0)).collect();
    let a = bootstrap_direction(&x, &clean, 200, 3).map_err(|e| e.to_string())?;
    let b = bootstrap_direction(&x, &noisy, 200, 3).map_err(|e| e.to_string())?;
    let widths = |r: &paramstudy::subspace::BootstrapReport| -> Vec<f64> {
        r.per_component_ci.iter().map(|(lo, hi)| hi - lo).collect()
    };
    let (wa, wb) = (widths(&a), widths(&b));
    check(wa.iter().all(|w| *w <= 1e-8), format!("noise-free widths {wa:?}"))?;
    check(wa.iter().zip(&wb).all(|(c, n)| n > c), format!("noisy widths {wb:?} not wider"))?;
    within(started, 5)?;
    Ok(format!("max clean width {:e}, noisy widths {wb:.4?}", wa.iter().cloned().fold(0.0, f64::max)))
}

fn gradient_checks() -> Outcome {
    let started = Instant::now();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let x2 = unit_points(30, 2, 10);
    let q2: Vec<f64> = x2.iter().map(|r| (r[0] - 0.3 * r[1]).sin() + r[1] * r[1] * r[0]).collect();
    let linear = fit_ols(&x2, &q2).map_err(|e| e.to_string())?;
    let quadratic = fit_quadratic(&x2, &q2).map_err(|e| e.to_string())?;
    let z: Vec<f64> = (0..9).map(|i| 10.0 + 50.0 * i as f64 / 8.0).collect();
    let qz: Vec<f64> = z.iter().map(|v| 300.0 + 1700.0 / (1.0 + (0.3 * (v - 41.0)).exp())).collect();
    let poly = fit_poly1d(&z, &qz, 3).map_err(|e| e.to_string())?;

    let models: [(&dyn Surrogate, Vec<f64>, Vec<f64>); 3] = [
        (&linear, vec![0.0; 2], vec![1.0; 2]),
        (&quadratic, vec![0.0; 2], vec![1.0; 2]),
        (&poly, vec![10.0], vec![60.0]),
    ];
    let goals = [
        GoalSpec { kind: GoalKind::Minimize, target: None, qoi: "q".into() },
        GoalSpec { kind: GoalKind::Maximize, target: None, qoi: "q".into() },
        GoalSpec { kind: GoalKind::Target, target: Some(0.5), qoi: "q".into() },
        GoalSpec { kind: GoalKind::Below, target: Some(1000.0), qoi: "q".into() },
    ];
    let mut s = Stream::new(11);
    for (model, lo, hi) in &models {
        let points: Vec<Vec<f64>> =
            (0..10).map(|_| lo.iter().zip(hi).map(|(l, u)| l + (u - l) * (0.05 + 0.9 * s.unit())).collect()).collect();
        let surface = Objective::new(|x| model.predict(x), |x| model.gradient(x), lo.clone(), hi.clone(), "surface");
        for p in &points {
            worst = worst.max(surface.gradient_check(p, h));
        }
        for goal in &goals {
            let obj = compile_objective(goal, *model, lo.clone(), hi.clone()).map_err(|e| e.to_string())?;
            for p in &points {
                worst = worst.max(obj.gradient_check(p, h));
            }
        }
    }
    check(worst <= 1e-6, format!("worst relative gradient error {worst:e}"))?;
    within(started, 1)?;
    Ok(format!("worst relative gradient error {worst:e}"))
}

const BUNDLE_FILES: [&str; 10] = [
    "dataset.csv",
    "analysis.json",
    "optimization.json",
    "summary_scatter.csv",
    "summary_curve.csv",
    "component_bars.csv",
    "opt_trace.csv",
    "response.svg",
    "bars.svg",
    "report.txt",
];

fn pipeline_once(ws: &Path) -> Result<Vec<Vec<u8>>, String> {
    let opts = RunOptions { workspace: Some(ws.to_path_buf()), workers: Some(4), ..Default::default() };
    let run = cmd_run(&demo("ridge2d.toml"), &opts).map_err(|e| e.to_string())?;
    cmd_analyze(&run.study_dir).map_err(|e| e.to_string())?;
    cmd_optimize(&run.study_dir).map_err(|e| e.to_string())?;
    BUNDLE_FILES
        .iter()
        .map(|f| std::fs::read(run.study_dir.join(f)).map_err(|e| format!("{f}: {e}")))
        .collect()
}

fn pipeline_determinism() -> Outcome {
    let started = Instant::now();
    let (a, b) = (workspace(), workspace());
    let first = pipeline_once(a.path())?;
    let second = pipeline_once(b.path())?;
    for (name, (x, y)) in BUNDLE_FILES.iter().zip(first.iter().zip(&second)) {
        check(x == y, format!("{name} differs between runs"))?;
    }
    within(started, 10)?;
    Ok(format!("{} files byte-identical", BUNDLE_FILES.len()))
}

fn prompt_parsing() -> Outcome {
    let started = Instant::now();
    let prompts = [
        "Please help me analyze the effect of the inlet flow velocity and inlet turbulent kinetic energy on max yplus and determine the optimal inlet flow velocity and inlet turbulent kinetic energy at which max yplus is blow 25 in a simulation: do a RANS simulation of incompressible pitzDaily flow using pimpleFoam",
        "Please help me analyze the effect of the laminar viscosity $\\nu_{in_physicalProperties}$ (from 0.01 to 0.1) on the average turbulent kinetic energy and determine the optimal $\\nu_{in_physicalProperties}$ at which the average turbulent kinetic energy is near 0.01 in the simulation: do a DNS simulation of forcing homogeneous isotropic turbulence using dnsFoam",
        "Please help me analyze the effect of the temperature difference between hot and cold (from 10 K to 30 K), k of all boundarys (from $1e-04$ to $1e-03$), ϵ of all boundarys (from $1e-06$ to $1e-05$) and Prt of all boundarys in α (from 0.6 to 1.0) on the max velocity in X direction in a simulation: do a RANS simulation of buoyantCavity using buoyantFoam",
        "Please help me analyze the effect of inlet velocity (from 10.0 to 60.0 m/s) on max temperature and determine the optimal inlet velocity at which max temperature is blow 1000 K in the simulation: do a 2D laminar simulation of counterflow flame using reactingFoam",
        "Analyze the effect of equivalenceRatio (from 0.5 to 1.5), initial turbulent kinetic energy (from 1 to 10), initial ignition duration time (from 0 to 0.002) on the distance from the origin and determine the min equivalenceRatio at which d is near d_max (0.0707) at latest time",
    ];
    let expected: [&[(f64, f64)]; 5] = [
        &[],
        &[(0.01, 0.1)],
        &[(10.0, 30.0), (1e-4, 1e-3), (1e-6, 1e-5), (0.6, 1.0)],
        &[(10.0, 60.0)],
        &[(0.5, 1.5), (1.0, 10.0), (0.0, 0.002)],
    ];
    let goals = [
        (GoalKind::Below, Some(25.0)),
        (GoalKind::Target, Some(0.01)),
        (GoalKind::Target, None),
        (GoalKind::Below, Some(1000.0)),
        (GoalKind::MinInputAtTarget, Some(0.0707)),
    ];
    let mut specs = Vec::new();
    for (i, text) in prompts.iter().enumerate() {
        let spec = parse_prompt(text).map_err(|e| format!("prompt {}: {e}", i + 1))?;
        if expected[i].is_empty() {
            check(
                spec.parameters.len() == 2 && spec.parameters.iter().all(|p| p.range_origin == RangeOrigin::Placeholder),
                format!("prompt {} should yield two placeholder ranges", i + 1),
            )?;
        } else {
            let got: Vec<(f64, f64)> = spec.parameters.iter().map(|p| (p.lower, p.upper)).collect();
            check(got == expected[i], format!("prompt {} bounds {got:?}", i + 1))?;
        }
        match goals[i] {
            (_, None) => check(spec.goal.is_none(), format!("prompt {} has an unexpected goal", i + 1))?,
            (kind, target) => {
                let g = spec.goal.as_ref().ok_or(format!("prompt {} lost its goal", i + 1))?;
                check(g.kind == kind && g.target == target, format!("prompt {} goal {:?} {:?}", i + 1, g.kind, g.target))?;
            }
        }
        specs.push(spec);
    }

    let goal = specs[0].goal.clone().unwrap();
    let model = LinearSurrogate { c: 20.0, b: vec![8.0, -3.0], r_squared: 1.0, n_points: 8 };
    let obj = compile_objective(&goal, &model, vec![0.0; 2], vec![1.0; 2]).map_err(|e| e.to_string())?;
    for x in unit_points(10, 2, 12) {
        let q = model.predict(&x);
        check((obj.eval)(&x) == (q - 25.0).powi(2), "below 25 does not compile to (q - 25)^2")?;
    }
    within(started, 1)?;
    Ok("5 prompts parsed; below 25 compiles to (q - 25)^2".to_string())
}

struct Counting<'a> {
    inner: &'a Backend,
    calls: AtomicUsize,
}

impl Evaluator for Counting<'_> {
    fn evaluate(&self, point: &CasePoint, case_dir: Option<&Path>) -> RunRecord {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.evaluate(point, case_dir)
    }

    fn needs_case_dir(&self) -> bool {
        self.inner.needs_case_dir()
    }
}

fn resume() -> Outcome {
    let started = Instant::now();
    let params = unit_params(2);
    let plan = plan_samples(&params, 8.0, 4).map_err(|e| e.to_string())?;
    check(plan.len() == 16, format!("plan has {} points", plan.len()))?;
    let backend = Backend::new(BackendConfig::analytic("explinear", &[("a1", 0.7), ("a2", 0.3)]), QoISpec::backend_direct("q"));

    let killed = workspace();
    let counting = Counting { inner: &backend, calls: AtomicUsize::new(0) };
    let opts = BatchOptions { max_workers: 4, study_dir: Some(killed.path().to_path_buf()), stop_after: Some(6) };
    match run_batch(&counting, &params, &backend.qoi, &plan, &opts) {
        Err(BackendError::Interrupted { completed: 6 }) => {}
        other => return Err(format!("interrupted batch returned {other:?}")),
    }
    let resumed = Counting { inner: &backend, calls: AtomicUsize::new(0) };
    let opts = BatchOptions { stop_after: None, ..opts };
    let out = run_batch(&resumed, &params, &backend.qoi, &plan, &opts).map_err(|e| e.to_string())?;
    let fresh = resumed.calls.load(Ordering::SeqCst);
    check(fresh == 10 && out.executed == 10, format!("{fresh} new evaluations after resume"))?;

    let clean = workspace();
    let opts = BatchOptions { max_workers: 4, study_dir: Some(clean.path().to_path_buf()), stop_after: None };
    let reference = run_batch(&backend, &params, &backend.qoi, &plan, &opts).map_err(|e| e.to_string())?;
    check(out.dataset.to_csv_string() == reference.dataset.to_csv_string(), "resumed dataset differs")?;
    check(out.dataset.x == reference.dataset.x && out.dataset.q == reference.dataset.q, "resumed X/Q differ")?;
    within(started, 5)?;
    Ok("6 completed, 10 evaluated on resume, dataset identical".to_string())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("rank-one identity", rank_one_identity),
        ("symmetric eigendecomposition", eigendecomposition),
        ("active direction recovery", direction_recovery),
        ("parameter ranking", ranking),
        ("L-BFGS-B against exact box QP", lbfgsb_oracle),
        ("target calibration end to end", target_calibration),
        ("smallest input at target", min_input),
        ("bootstrap degeneracy", bootstrap_degeneracy),
        ("gradient checks", gradient_checks),
        ("pipeline determinism", pipeline_determinism),
        ("prompt parsing", prompt_parsing),
        ("resume after interruption", resume),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("criterion {:2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
