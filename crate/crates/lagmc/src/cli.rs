//! Command-line front end: configuration-driven solves, operator
//! verification, dual checks, tau sweeps and refinement studies.
//!
//! Exit codes: 0 success, 1 certificate/identity failure, 2 solver path
//! failure, 64 configuration error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::diagnostics::{self, DiagnosticsOptions};
use crate::grid::{field_to_csv, GridMeta};
use crate::operators::{self, OperatorParams, SpectrumPoint};
use crate::solver::{self, FSpec, ProblemSpec, SolveError, SolveOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CERTIFICATE: i32 = 1;
pub const EXIT_PATH: i32 = 2;
pub const EXIT_CONFIG: i32 = 64;

/// Output-file manifest written with every run.
#[derive(Serialize)]
struct Manifest {
    files: Vec<String>,
}

fn load_config(
    path: &Path,
    out_override: Option<&str>,
    seed_override: Option<u64>,
) -> Result<RunConfig, i32> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config error: cannot read {}: {e}", path.display());
            return Err(EXIT_CONFIG);
        }
    };
    match RunConfig::parse(&text) {
        Ok(mut cfg) => {
            if let Some(dir) = out_override {
                cfg.out_dir = Some(dir.to_string());
            }
            if let Some(seed) = seed_override {
                cfg.seed = seed;
            }
            Ok(cfg)
        }
        Err(e) => {
            eprintln!("config error: {e}");
            Err(EXIT_CONFIG)
        }
    }
}

fn solve_exit_code(err: &SolveError) -> i32 {
    match err {
        SolveError::Inadmissible(_) => EXIT_CONFIG,
        SolveError::PathFailure { .. }
        | SolveError::ConvexityBreakdown { .. }
        | SolveError::NoConvergence { .. } => EXIT_PATH,
        _ => EXIT_PATH,
    }
}

fn write_outputs(dir: &Path, files: &[(&str, String)]) -> Result<(), i32> {
    if let Err(e) = std::fs::create_dir_all(dir) {
        eprintln!("cannot create output directory {}: {e}", dir.display());
        return Err(EXIT_CONFIG);
    }
    let mut names: Vec<String> = files.iter().map(|(n, _)| n.to_string()).collect();
    names.push("manifest.json".into());
    for (name, content) in files {
        if let Err(e) = std::fs::write(dir.join(name), content) {
            eprintln!("cannot write {name}: {e}");
            return Err(EXIT_CONFIG);
        }
    }
    let manifest = serde_json::to_string_pretty(&Manifest { files: names }).unwrap();
    if std::fs::write(dir.join("manifest.json"), manifest).is_err() {
        return Err(EXIT_CONFIG);
    }
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(cfg.out_dir.clone().unwrap_or_else(|| "out".into()))
}

/// `solve`: full run with field dumps, solve log and diagnostics report.
pub fn cmd_solve(config: &Path, out: Option<&str>, seed: Option<u64>) -> i32 {
    let cfg = match load_config(config, out, seed) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let problem = match cfg.to_problem() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let outcome = match solver::continuity_solve(&problem) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("solve failed: {e}");
            return solve_exit_code(&e);
        }
    };
    let options = DiagnosticsOptions {
        with_dual: cfg.diagnostics_full,
        with_uniqueness: cfg.diagnostics_full,
        with_refinement: cfg.diagnostics_full,
        seed: cfg.seed,
    };
    let report = match diagnostics::run_diagnostics(&problem, &outcome, &options) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("certificate failure: {e}");
            return EXIT_CERTIFICATE;
        }
    };

    let state = &outcome.state;
    println!("c = {:.12}", state.c);
    println!(
        "residuals: interior {:.3e}, boundary {:.3e}, mean {:.3e}",
        state.residual_interior, state.residual_boundary, state.residual_mean
    );
    println!(
        "certificates: obliqueness_min {:.6}, mass_err {:.3e}, mean_curvature_err {:.3e}",
        report.obliqueness_min, report.mass_err, report.mean_curvature_err
    );

    let dir = out_dir(&cfg);
    let files = vec![
        ("u.csv", field_to_csv(&state.u.grid, &state.u.values)),
        (
            "grid_meta.json",
            serde_json::to_string_pretty(&GridMeta::of(&state.u.grid)).unwrap(),
        ),
        (
            "solve_log.json",
            serde_json::to_string_pretty(&outcome.log).unwrap(),
        ),
        (
            "diagnostics.json",
            serde_json::to_string_pretty(&report).unwrap(),
        ),
    ];
    if let Err(code) = write_outputs(&dir, &files) {
        return code;
    }
    if report.hard_pass(state, &problem) {
        EXIT_OK
    } else {
        eprintln!("hard certificate failed");
        EXIT_CERTIFICATE
    }
}

#[derive(Serialize)]
struct OperatorFailure {
    what: String,
    tau: f64,
    lambdas: Vec<f64>,
    got: f64,
    want: f64,
}

/// `verify-operator`: identity and structure-condition suite for the
/// configured operator; prints the Lambda intervals.
pub fn cmd_verify_operator(config: &Path, seed: Option<u64>) -> i32 {
    let cfg = match load_config(config, None, seed) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let op = match cfg.operator() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    if op.branch == operators::Branch::ExperimentalLogDet {
        eprintln!(
            "verify-operator: the experimental log-det branch is excluded from certification"
        );
        return EXIT_CONFIG;
    }

    let fail = |f: OperatorFailure| -> i32 {
        eprintln!(
            "operator identity failure: {}",
            serde_json::to_string(&f).unwrap()
        );
        EXIT_CERTIFICATE
    };

    // limits ordering
    let (f0, finf) = operators::limits(&op, 2);
    if !(f0.is_finite() && finf.is_finite() && f0 < finf) {
        return fail(OperatorFailure {
            what: "limit ordering".into(),
            tau: op.tau,
            lambdas: vec![],
            got: f0,
            want: finf,
        });
    }

    // gradient vs central finite differences over seeded cone samples
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..1000 {
        let lams: Vec<f64> = (0..2).map(|_| rng.gen_range(0.05..10.0)).collect();
        let point = SpectrumPoint::new(lams.clone());
        let grad = operators::grad_f(&op, &point).unwrap();
        for i in 0..2 {
            let eps = 1e-6;
            let mut lp = lams.clone();
            let mut lm = lams.clone();
            lp[i] += eps;
            lm[i] -= eps;
            let fd = (operators::eval_f(&op, &SpectrumPoint::new(lp)).unwrap()
                - operators::eval_f(&op, &SpectrumPoint::new(lm)).unwrap())
                / (2.0 * eps);
            if (grad[i] - fd).abs() > 1e-6 * grad[i].abs().max(1.0) {
                return fail(OperatorFailure {
                    what: "gradient vs finite differences".into(),
                    tau: op.tau,
                    lambdas: lams,
                    got: grad[i],
                    want: fd,
                });
            }
        }
    }

    // structure conditions on the two canonical truncations
    for (s1, s2) in [(1.0, 1.0), (0.5, 2.0)] {
        match diagnostics::verify_structure_conditions(&op, s1, s2, 10_000) {
            Ok(m) => {
                let b = operators::range_bounds(&op, 2, s1, s2);
                println!(
                    "tau = {:.6}, (s1, s2) = ({s1}, {s2}): sum dF in [{:.6}, {:.6}], sum dF l^2 in [{:.6}, {:.6}], Lambda = [{:.6}, {:.6}], slack {:.3e}",
                    op.tau, b.grad_sum.0, b.grad_sum.1, b.grad_lambda_sq_sum.0, b.grad_lambda_sq_sum.1,
                    b.lambda1, b.lambda2, m.sandwich_slack
                );
            }
            Err(e) => {
                eprintln!("structure-condition failure: {e}");
                return EXIT_CERTIFICATE;
            }
        }
    }

    // branch-seam continuity across pi/4
    let seam = std::f64::consts::FRAC_PI_4;
    let center = OperatorParams::new(seam).unwrap();
    for tau in [seam - 1e-6, seam + 1e-6] {
        let q = OperatorParams::new(tau).unwrap();
        for lam in [0.1, 1.0, 2.0, 10.0] {
            let d = (operators::scalar_phi(&q, lam).unwrap()
                - operators::scalar_phi(&center, lam).unwrap())
            .abs();
            if d > 1e-4 {
                return fail(OperatorFailure {
                    what: "branch-seam continuity".into(),
                    tau,
                    lambdas: vec![lam],
                    got: d,
                    want: 1e-4,
                });
            }
        }
    }

    println!("operator verification passed for tau = {:.12}", op.tau);
    EXIT_OK
}

/// `dual-check`: primal solve, independent dual solve, duality certificates.
pub fn cmd_dual_check(config: &Path, out: Option<&str>, seed: Option<u64>) -> i32 {
    let cfg = match load_config(config, out, seed) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let problem = match cfg.to_problem() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let primal = match solver::continuity_solve(&problem) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("primal solve failed: {e}");
            return solve_exit_code(&e);
        }
    };
    let dual = match solver::solve_dual(&problem) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("dual solve failed: {e}");
            return solve_exit_code(&e);
        }
    };
    let rec = match diagnostics::check_duality(&primal.state, &dual.state, &problem, cfg.seed) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("duality certificate failed: {e}");
            return EXIT_CERTIFICATE;
        }
    };
    println!("c_primal = {:.12}", primal.state.c);
    println!(
        "c_dual   = {:.12} (recovers {:.12})",
        dual.state.c, -dual.state.c
    );
    println!(
        "c_dual_err = {:.3e}, roundtrip_err = {:.3e}, eig_reciprocity_err = {:.3e}",
        rec.c_dual_err, rec.roundtrip_err, rec.eig_reciprocity_err
    );
    let dir = out_dir(&cfg);
    let files = vec![(
        "dual_check.json",
        serde_json::to_string_pretty(&rec).unwrap(),
    )];
    if let Err(code) = write_outputs(&dir, &files) {
        return code;
    }
    let h = primal.state.u.grid.drho;
    if rec.c_dual_err <= 1e-6 && rec.roundtrip_err <= 5.0 * h * h {
        EXIT_OK
    } else {
        eprintln!(
            "duality tolerances exceeded (c_dual_err {:.3e}, roundtrip {:.3e})",
            rec.c_dual_err, rec.roundtrip_err
        );
        EXIT_CERTIFICATE
    }
}

/// `sweep-tau`: independent solves per tau (parallel), one CSV summary row
/// per tau.
pub fn cmd_sweep_tau(
    config: &Path,
    tau_list: &[String],
    out: Option<&str>,
    seed: Option<u64>,
) -> i32 {
    let cfg = match load_config(config, out, seed) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let mut taus: Vec<f64> = Vec::new();
    for item in tau_list {
        for tok in item.split([',', ' ']).filter(|t| !t.is_empty()) {
            let t: f64 = match tok.parse() {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("config error: bad tau `{tok}`: {e}");
                    return EXIT_CONFIG;
                }
            };
            if taus.contains(&t) {
                eprintln!("warning: duplicate tau {t} ignored");
            } else {
                taus.push(t);
            }
        }
    }
    if taus.is_empty() {
        eprintln!("config error: empty tau list");
        return EXIT_CONFIG;
    }

    let threads = std::env::var("LAGMC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .min(taus.len());

    #[derive(Clone)]
    enum RowResult {
        Row {
            tau: f64,
            c: f64,
            obliq: f64,
            mass: f64,
            mc: f64,
        },
        Failed {
            tau: f64,
            code: i32,
            msg: String,
        },
    }

    let run_one = |tau: f64| -> RowResult {
        let mut c2 = cfg.clone();
        c2.tau = tau;
        let problem = match c2.to_problem() {
            Ok(p) => p,
            Err(e) => {
                return RowResult::Failed {
                    tau,
                    code: EXIT_CONFIG,
                    msg: e.to_string(),
                }
            }
        };
        let outcome = match solver::continuity_solve(&problem) {
            Ok(o) => o,
            Err(e) => {
                return RowResult::Failed {
                    tau,
                    code: solve_exit_code(&e),
                    msg: e.to_string(),
                }
            }
        };
        let obliq = match diagnostics::check_obliqueness(&outcome.state, &problem) {
            Ok((m, _)) => m,
            Err(e) => {
                return RowResult::Failed {
                    tau,
                    code: EXIT_CERTIFICATE,
                    msg: e.to_string(),
                }
            }
        };
        let mass = diagnostics::mass_identity_err(&outcome.state, &problem).unwrap_or(f64::NAN);
        let mc = diagnostics::check_mean_curvature(&outcome.state, &problem)
            .map(|(e, _)| e)
            .unwrap_or(f64::NAN);
        RowResult::Row {
            tau,
            c: outcome.state.c,
            obliq,
            mass,
            mc,
        }
    };

    // fixed-size chunks over a shared worklist keep the output order
    let results: Vec<RowResult> = {
        let mut results: Vec<Option<RowResult>> = vec![None; taus.len()];
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results_mx = std::sync::Mutex::new(&mut results);
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if k >= taus.len() {
                        break;
                    }
                    let row = run_one(taus[k]);
                    results_mx.lock().unwrap()[k] = Some(row);
                });
            }
        });
        results.into_iter().map(Option::unwrap).collect()
    };

    let mut csv = String::from("tau,c,obliqueness_min,mass_err,mean_curvature_err\n");
    let mut worst = EXIT_OK;
    for r in &results {
        match r {
            RowResult::Row {
                tau,
                c,
                obliq,
                mass,
                mc,
            } => {
                let _ = writeln!(
                    csv,
                    "{tau:.17e},{c:.17e},{obliq:.17e},{mass:.17e},{mc:.17e}"
                );
                println!("tau = {tau:.6}: c = {c:.10}, obliqueness_min = {obliq:.6}, mass_err = {mass:.3e}, mean_curvature_err = {mc:.3e}");
            }
            RowResult::Failed { tau, code, msg } => {
                eprintln!("tau = {tau:.6}: FAILED ({msg})");
                worst = worst.max(*code);
            }
        }
    }
    let dir = out_dir(&cfg);
    if let Err(code) = write_outputs(&dir, &[("sweep.csv", csv)]) {
        return code;
    }
    worst
}

/// `refine-study`: solves at doubling resolutions, prints observed
/// convergence orders (against the exact solution when one is known for the
/// configuration, otherwise against the finest level).
pub fn cmd_refine_study(config: &Path, levels: u32, out: Option<&str>, seed: Option<u64>) -> i32 {
    let cfg = match load_config(config, out, seed) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if levels < 3 {
        eprintln!("config error: need >= 3 levels for a convergence order, got {levels}");
        return EXIT_CONFIG;
    }

    let mut outcomes: Vec<(ProblemSpec, SolveOutcome)> = Vec::new();
    for level in 0..levels {
        let problem = match cfg.to_problem_at_level(level) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("config error: {e}");
                return EXIT_CONFIG;
            }
        };
        match solver::continuity_solve(&problem) {
            Ok(o) => outcomes.push((problem, o)),
            Err(e) => {
                eprintln!("solve failed at level {level}: {e}");
                return solve_exit_code(&e);
            }
        }
    }

    // closed-form solution, when the configuration matches one
    let exact = exact_solution_for(&cfg);
    let mut u_errs: Vec<f64> = Vec::new();
    if let Some(exact_fn) = &exact {
        for (_, o) in &outcomes {
            let grid = &o.state.u.grid;
            let values: Vec<f64> = grid.nodes.iter().map(|&p| exact_fn(p)).collect();
            let mean = grid.mean(&values).unwrap();
            let err = o
                .state
                .u
                .values
                .iter()
                .zip(&values)
                .map(|(u, e)| (u - (e - mean)).abs())
                .fold(0.0f64, f64::max);
            u_errs.push(err);
        }
    } else {
        // compare interpolated coarse solutions against the finest level
        let (_, fine) = outcomes.last().unwrap();
        let fine_grid = &fine.state.u.grid;
        for (_, o) in &outcomes[..outcomes.len() - 1] {
            let grid = &o.state.u.grid;
            let mut err = 0.0f64;
            for (idx, &p) in grid.nodes.iter().enumerate() {
                let v = fine_grid.interpolate(&fine.state.u.values, p);
                err = err.max((o.state.u.values[idx] - v).abs());
            }
            u_errs.push(err);
        }
    }

    let mut csv = String::from("level,n_rho,n_theta,u_err,mass_err,mean_curvature_err\n");
    let mut mass_errs = Vec::new();
    for (k, (p, o)) in outcomes.iter().enumerate() {
        let mass = diagnostics::mass_identity_err(&o.state, p).unwrap_or(f64::NAN);
        let mc = diagnostics::check_mean_curvature(&o.state, p)
            .map(|(e, _)| e)
            .unwrap_or(f64::NAN);
        mass_errs.push(mass);
        let ue = u_errs.get(k).copied().unwrap_or(f64::NAN);
        let _ = writeln!(
            csv,
            "{k},{},{},{ue:.17e},{mass:.17e},{mc:.17e}",
            p.n_rho, p.n_theta
        );
        println!(
            "level {k}: {}x{}  u_err {ue:.3e}  mass_err {mass:.3e}  mean_curvature_err {mc:.3e}",
            p.n_rho, p.n_theta
        );
    }
    for k in 1..u_errs.len() {
        let order = (u_errs[k - 1] / u_errs[k]).log2();
        if u_errs[k] <= 1e-12 {
            println!("order {k}: errors at roundoff; order not meaningful");
        } else {
            println!("order {k}: {order:.3}");
        }
    }

    let dir = out_dir(&cfg);
    if let Err(code) = write_outputs(&dir, &[("refine.csv", csv)]) {
        return code;
    }
    // with an exact solution available, the error must decrease monotonically
    if exact.is_some() {
        for k in 1..u_errs.len() {
            if u_errs[k] > u_errs[k - 1] && u_errs[k] > 1e-12 {
                eprintln!("u-error not decreasing between levels {} and {k}", k - 1);
                return EXIT_CERTIFICATE;
            }
        }
    }
    let _ = mass_errs;
    EXIT_OK
}

/// Closed-form solution for configurations that have one: the radial-quartic
/// right-hand side on the unit disk about the origin (`u = |x|^2 - eps |x|^4`),
/// and the zero right-hand side between concentric disks
/// (`u = (R~/R) |x|^2 / 2`).
fn exact_solution_for(cfg: &RunConfig) -> Option<Box<dyn Fn(crate::geometry::Vec2) -> f64>> {
    use crate::config::DomainSpec;
    match (&cfg.f, &cfg.source, &cfg.target) {
        (FSpec::RadialQuartic { eps }, DomainSpec::Disk { center, radius }, _)
            if center.norm() == 0.0 && *radius == 1.0 =>
        {
            let eps = *eps;
            Some(Box::new(move |p| {
                let s = p.norm_squared();
                s - eps * s * s
            }))
        }
        (
            FSpec::Zero,
            DomainSpec::Disk {
                center: cs,
                radius: rs,
            },
            DomainSpec::Disk {
                center: ct,
                radius: rt,
            },
        ) if cs.norm() == 0.0 && ct.norm() == 0.0 => {
            let ratio = rt / rs;
            Some(Box::new(move |p| 0.5 * ratio * p.norm_squared()))
        }
        _ => None,
    }
}
