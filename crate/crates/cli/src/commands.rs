use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use cdpkit::config::{apply_overrides, load_grid, load_problem_doc, parse_document, LoadedProblem};
use cdpkit::diagnostics::{check_condition, estimate_constants};
use cdpkit::dissolve::{
    a_infinity, feasibility_decrease_slope, lagrangian_decrease_probe, ProbeVerdict,
    A_INF_MAX_ITER, A_INF_TOL, SLOPE_OFFSETS,
};
use cdpkit::experiments::{
    markdown_table, run_experiment, write_records_csv, ExperimentConfig, RunRecord,
};
use cdpkit::fd::{default_step, finite_diff_check};
use cdpkit::manifolds::{projected_probes, Family, FAMILY_NAMES};
use cdpkit::model::validate_manifold;
use cdpkit::solver::estimate_multipliers;
use cdpkit::util::{seeded_rng, unit_gaussian};
use cdpkit::{
    alm_solve_cdp, alm_solve_nlp_direct, build_cdp, make_handle, Error, Result, SolveStatus,
};
use serde_json::json;

use crate::{BenchArgs, FamilyArgs, Pipeline, ProbeArgs, ProblemArgs, SolveArgs, ValidateArgs};

const SLOPE_WINDOW: (f64, f64) = (1.85, 2.15);
const FD_TOL: f64 = 1e-6;

fn usage(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn status(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn family_of(args: &FamilyArgs) -> Result<Family> {
    let name = args
        .family
        .as_deref()
        .ok_or_else(|| usage("--family", "required"))?;
    if name == "generic" {
        return Err(usage(
            "--family",
            "the generic operator needs a user-supplied constraint c; use the library or a registered family",
        ));
    }
    Family::from_name(name, args.m, args.q, args.n)
}

pub fn validate(args: &ValidateArgs) -> Result<ExitCode> {
    let family = family_of(&args.family)?;
    let handle = make_handle(family)?;
    let seed = args.family.seed.unwrap_or(0);
    let probes = projected_probes(handle.as_ref(), args.probes.max(1), 0.3, seed)?;
    let report = validate_manifold(handle.as_ref(), &probes, args.tol)?;

    // Gradient of 1/2 |c|^2 checks `c` against `Jc`.
    let x = &probes[0];
    let y = x + 0.1 * unit_gaussian(&mut seeded_rng(seed + 1), x.len());
    let fd = finite_diff_check(
        |z| 0.5 * handle.constraint(z).norm_squared(),
        |z| handle.jc(z, &handle.constraint(z)),
        &y,
        default_step(&y),
    )?;
    let w = unit_gaussian(&mut seeded_rng(seed + 2), x.len());
    let fit = feasibility_decrease_slope(handle.as_ref(), x, &w, &SLOPE_OFFSETS)?;

    let checks = [
        (
            "axioms",
            report.passed,
            format!(
                "fixed point {:.1e}, normal annihilation {:.1e} (tol {:e})",
                report.fixed_point_error, report.normal_annihilation, args.tol
            ),
        ),
        (
            "derivatives",
            report.derivative_error <= FD_TOL && fd <= FD_TOL,
            format!(
                "J_A {:.1e}, Jc {:.1e} (tol {FD_TOL:e})",
                report.derivative_error, fd
            ),
        ),
        (
            "slope",
            (SLOPE_WINDOW.0..=SLOPE_WINDOW.1).contains(&fit.slope),
            format!(
                "{:.3} (window [{}, {}])",
                fit.slope, SLOPE_WINDOW.0, SLOPE_WINDOW.1
            ),
        ),
    ];
    let mut ok = true;
    for (name, pass, detail) in &checks {
        ok &= pass;
        if args.json {
            println!(
                "{}",
                json!({"manifold": report.manifold, "check": name, "pass": pass, "detail": detail})
            );
        } else {
            println!(
                "{:<12} {:<4} {detail}",
                name,
                if *pass { "ok" } else { "FAIL" }
            );
        }
    }
    if args.json {
        println!(
            "{}",
            json!({"manifold": report.manifold, "report": report, "slope": fit, "pass": ok})
        );
    } else {
        println!(
            "{}: {} probes, {}",
            report.manifold,
            report.probes,
            if ok { "all checks passed" } else { "FAILED" }
        );
    }
    Ok(status(ok))
}

/// Builds the problem document from `--config`, family flags and `--set`
/// overrides, in that order of precedence from lowest to highest.
fn load(args: &ProblemArgs, budget: Option<f64>) -> Result<LoadedProblem> {
    let mut doc = match &args.config {
        Some(path) => parse_document(&fs::read_to_string(path)?)?,
        None => Default::default(),
    };
    let mut ov = Vec::new();
    let fam = &args.family;
    if let Some(name) = &fam.family {
        if FAMILY_NAMES.contains(&name.as_str()) {
            ov.push("family.name=\"custom\"".to_string());
            ov.push(format!("family.manifold=\"{name}\""));
        } else {
            ov.push(format!("family.name=\"{name}\""));
        }
    }
    let dims = [
        ("m", fam.m),
        ("q", fam.q),
        ("n", fam.n),
        ("N", fam.n_samples),
    ];
    ov.extend(
        dims.iter()
            .filter_map(|(k, v)| v.map(|v| format!("family.{k}={v}"))),
    );
    let reals = [
        ("family.r", fam.r),
        ("family.rho", fam.rho),
        ("penalty.beta", args.beta),
    ];
    ov.extend(
        reals
            .iter()
            .filter_map(|(k, v)| v.map(|v| format!("{k}={v:?}"))),
    );
    let more = [
        ("penalty.tau", args.tau),
        ("penalty.gamma", args.gamma),
        ("solver.time_budget", budget),
    ];
    ov.extend(
        more.iter()
            .filter_map(|(k, v)| v.map(|v| format!("{k}={v:?}"))),
    );
    if let Some(s) = fam.seed {
        ov.push(format!("seed={s}"));
    }
    ov.extend(args.set.iter().cloned());
    apply_overrides(&mut doc, &ov)?;
    load_problem_doc(&doc)
}

pub fn solve(args: &SolveArgs) -> Result<ExitCode> {
    let loaded = load(&args.problem, args.budget)?;
    let result = match args.pipeline {
        Pipeline::Cdp => {
            let cdp = build_cdp(&loaded.problem, loaded.penalty.clone())?;
            alm_solve_cdp(&cdp, &loaded.x0, &loaded.options)?
        }
        Pipeline::Nlp => alm_solve_nlp_direct(&loaded.problem, &loaded.x0, &loaded.options)?,
    };
    result.trace.write_csv(fs::File::create(&args.out)?)?;
    let converged = result.status == SolveStatus::Converged;
    if args.problem.json {
        println!(
            "{}",
            json!({
                "problem": loaded.problem.name,
                "pipeline": format!("{:?}", args.pipeline).to_lowercase(),
                "function_value": result.objective,
                "substationarity": result.kkt.stationarity,
                "feasibility": result.kkt.feasibility,
                "cpu_time": result.elapsed,
                "status": result.status.as_str(),
                "outer_iterations": result.outer_iterations,
                "beta": result.beta,
            })
        );
    } else {
        println!("Function value   {:.6e}", result.objective);
        println!("Substationarity  {:.2e}", result.kkt.stationarity);
        println!("Feasibility      {:.2e}", result.kkt.feasibility);
        println!("CPU time (s)     {:.3}", result.elapsed);
        println!("status           {}", result.status);
    }
    Ok(status(converged))
}

pub fn probe(args: &ProbeArgs) -> Result<ExitCode> {
    let loaded = load(&args.problem, None)?;
    let problem = &loaded.problem;
    let handle = problem.manifold.clone();
    let x = a_infinity(handle.as_ref(), &loaded.x0, A_INF_TOL, A_INF_MAX_ITER)
        .map(|p| p.point)
        .unwrap_or_else(|_| loaded.x0.clone());
    let est = estimate_constants(problem, &x, args.radius, args.samples, loaded.options.seed)?;
    let mult = estimate_multipliers(problem, &x);
    let report = check_condition(&est, &loaded.penalty, Some(&mult));

    let w = unit_gaussian(&mut seeded_rng(loaded.options.seed), x.len());
    let fit = feasibility_decrease_slope(handle.as_ref(), &x, &w, &SLOPE_OFFSETS)?;
    let slope_ok = (SLOPE_WINDOW.0..=SLOPE_WINDOW.1).contains(&fit.slope);

    let cdp = build_cdp(problem, loaded.penalty.clone())?;
    let k = args.points.max(1);
    let offsets: Vec<f64> = (1..=k)
        .map(|i| est.omega_bar_radius * i as f64 / k as f64)
        .collect();
    let decrease =
        lagrangian_decrease_probe(&cdp, &x, &mult, &offsets, Some(&est), loaded.options.seed)?;
    let decrease_ok = decrease.verdict != ProbeVerdict::Fail;
    let condition_met = report.decrease_condition_met();

    if args.problem.json {
        println!("{}", json!({"kind": "constants", "estimates": est}));
        let cond: serde_json::Map<String, serde_json::Value> = report
            .to_record()
            .into_iter()
            .map(|(k, v)| (k, json!(v)))
            .collect();
        println!(
            "{}",
            json!({"kind": "condition", "values": cond, "met": condition_met})
        );
        println!("{}", json!({"kind": "slope", "fit": fit, "pass": slope_ok}));
        println!(
            "{}",
            json!({"kind": "decrease", "report": decrease, "pass": decrease_ok})
        );
    } else {
        println!("problem            {}", problem.name);
        println!("sigma              {:.4e}", est.sigma1x);
        println!("M_c M_A            {:.4e} {:.4e}", est.m_c, est.m_a);
        println!(
            "L_f L_c L_A L_Ac   {:.3e} {:.3e} {:.3e} {:.3e}",
            est.l_f, est.l_c, est.l_a, est.l_ac
        );
        println!("neighborhood       {:.4e}", est.omega_bar_radius);
        for (name, value) in report.to_record() {
            println!("{name:<18} {value:.4e}");
        }
        println!(
            "condition          {}",
            if condition_met {
                "met"
            } else {
                "not met (advisory)"
            }
        );
        println!(
            "slope              {:.3} {}",
            fit.slope,
            if slope_ok { "ok" } else { "FAIL" }
        );
        println!(
            "decrease           {:?}: {} samples, {} skipped",
            decrease.verdict,
            decrease.samples.len(),
            decrease.skipped.len()
        );
    }
    Ok(status(slope_ok && decrease_ok))
}

fn resolve_grid(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    let with_ext = path.with_extension("toml");
    if with_ext.is_file() {
        return Ok(with_ext);
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("grid file {} not found", path.display()),
    )))
}

fn worker_count(requested: usize) -> usize {
    let cap = std::env::var("CDPKIT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|v| *v > 0);
    let n = requested.max(1);
    cap.map_or(n, |c| n.min(c))
}

/// Runs the grid one instance at a time across `workers` threads, keeping
/// the grid order in the output.
fn run_parallel(
    grid: &[ExperimentConfig],
    opts: &cdpkit::AlmOptions,
    workers: usize,
) -> Result<Vec<RunRecord>> {
    if workers <= 1 {
        return run_experiment(grid, opts, None);
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<Vec<RunRecord>>>>> =
        Mutex::new((0..grid.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.min(grid.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= grid.len() {
                    break;
                }
                let r = run_experiment(&grid[i..=i], opts, None);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    let mut out = Vec::with_capacity(2 * grid.len());
    for slot in slots.into_inner().expect("no worker panicked") {
        out.extend(slot.expect("every instance ran")?);
    }
    Ok(out)
}

pub fn bench(args: &BenchArgs) -> Result<ExitCode> {
    let path = resolve_grid(&args.grid)?;
    let (grid, mut opts) = load_grid(&fs::read_to_string(&path)?)?;
    if let Some(b) = args.budget {
        opts.time_budget = Some(b);
        opts.validate()?;
    }
    let workers = worker_count(args.workers);
    log::info!("running {} instances on {workers} worker(s)", grid.len());
    let records = run_parallel(&grid, &opts, workers)?;

    fs::create_dir_all(&args.out)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("bench");
    let csv_path = args.out.join(format!("{stem}.csv"));
    let md_path = args.out.join(format!("{stem}.md"));
    let mut csv = fs::File::create(&csv_path)?;
    write_records_csv(&records, &mut csv)?;
    let table = markdown_table(&records);
    fs::File::create(&md_path)?.write_all(table.as_bytes())?;

    if args.json {
        for r in &records {
            println!("{}", serde_json::to_string(r).expect("records serialize"));
        }
    } else {
        print!("{table}");
        let converged = records.iter().filter(|r| r.converged()).count();
        println!(
            "{converged} of {} runs converged; wrote {} and {}",
            records.len(),
            csv_path.display(),
            md_path.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}
