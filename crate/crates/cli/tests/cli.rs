use std::path::Path;
use std::process::{Command, Output};

use cdpkit::config::load_problem;
use cdpkit::{alm_solve_cdp, build_cdp};

fn cdpkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdpkit"))
        .args(args)
        .env_remove("CDPKIT_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn metric(out: &str, label: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(label))
        .unwrap_or_else(|| panic!("no `{label}` in {out}"))
        .trim()
        .parse()
        .unwrap()
}

fn grid_path() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../tables/center_of_mass_desk")
        .display()
        .to_string()
}

const BC: [&str; 10] = [
    "--family",
    "balanced_cut",
    "--m",
    "50",
    "--q",
    "2",
    "--rho",
    "0.1",
    "--seed",
    "7",
];

#[test]
fn validate_exit_codes() {
    let ok = cdpkit(&["validate", "--family", "oblique", "--m", "20", "--q", "3"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    assert!(stdout(&ok).contains("all checks passed"));
    assert_eq!(
        code(&cdpkit(&[
            "validate", "--family", "oblique", "--m", "0", "--q", "3"
        ])),
        2
    );
    assert_eq!(code(&cdpkit(&["validate", "--family", "generic"])), 2);
    assert_eq!(
        code(&cdpkit(&[
            "validate",
            "--family",
            "klein_bottle",
            "--n",
            "3"
        ])),
        2
    );
}

#[test]
fn validate_emits_json_lines() {
    let o = cdpkit(&[
        "validate", "--family", "sphere", "--n", "8", "--probes", "10", "--json",
    ]);
    assert_eq!(code(&o), 0);
    let lines: Vec<serde_json::Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l["pass"] == true));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let o = cdpkit(&["frobnicate"]);
    assert_eq!(code(&o), 2);
    assert!(o.stdout.is_empty());
}

#[test]
fn solve_pipelines_agree_and_write_traces() {
    let dir = tempfile::tempdir().unwrap();
    let mut values = Vec::new();
    for pipeline in ["cdp", "nlp"] {
        let trace = dir.path().join(format!("{pipeline}.csv"));
        let mut args = vec!["solve"];
        args.extend(BC);
        args.extend(["--pipeline", pipeline, "--out", trace.to_str().unwrap()]);
        let o = cdpkit(&args);
        let out = stdout(&o);
        assert_eq!(code(&o), 0, "{out}");
        for label in [
            "Function value",
            "Substationarity",
            "Feasibility",
            "CPU time (s)",
        ] {
            assert!(out.contains(label), "{out}");
        }
        assert!(metric(&out, "Feasibility") <= 1e-6);
        values.push(metric(&out, "Function value"));
        let csv = std::fs::read_to_string(&trace).unwrap();
        assert!(csv.starts_with("iter,f,feas,stat,beta,sigma,time"));
        assert!(csv.lines().count() >= 2);
    }
    assert!((values[0] - values[1]).abs() <= 1e-4 * values[0].abs());
}

#[test]
fn solve_matches_library_call() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let mut args = vec!["solve", "--json"];
    args.extend(BC);
    args.extend(["--out", trace.to_str().unwrap()]);
    let o = cdpkit(&args);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();

    let l = load_problem("seed = 7\n[family]\nname = \"balanced_cut\"\nm = 50\nq = 2\nrho = 0.1\n")
        .unwrap();
    let r = alm_solve_cdp(
        &build_cdp(&l.problem, l.penalty).unwrap(),
        &l.x0,
        &l.options,
    )
    .unwrap();
    assert_eq!(
        v["function_value"].as_f64().unwrap().to_bits(),
        r.objective.to_bits()
    );
    assert_eq!(
        v["outer_iterations"].as_u64().unwrap() as usize,
        r.outer_iterations
    );
}

#[test]
fn tiny_budget_reports_max_time() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let mut args = vec!["solve", "--json", "--budget", "0.001"];
    args.extend(BC);
    args.extend(["--out", trace.to_str().unwrap()]);
    let o = cdpkit(&args);
    assert_eq!(code(&o), 1);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["status"], "max_time");
}

#[test]
fn solve_config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.toml");
    std::fs::write(
        &cfg,
        "family = \"balanced_cut\"\nm = 10\nq = 2\nrho = 0.5\nseed = 3\n",
    )
    .unwrap();
    let trace = dir.path().join("t.csv");
    let base = [
        "solve",
        "--json",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        trace.to_str().unwrap(),
    ];
    let o = cdpkit(&base);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut args = base.to_vec();
    args.extend(["--set", "family.m=12", "--set", "solver.max_outer=3"]);
    let o = cdpkit(&args);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(v["problem"].as_str().unwrap().contains("m=12"));
    assert!(v["outer_iterations"].as_u64().unwrap() <= 3);

    let bad = [
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "solver.bogus=1",
    ];
    assert_eq!(code(&cdpkit(&bad)), 2);
    assert_eq!(
        code(&cdpkit(&["solve", "--config", "/nonexistent.toml"])),
        2
    );
}

#[test]
fn probe_reports_slope_and_condition() {
    let o = cdpkit(&["probe", "--family", "sphere", "--n", "10"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    let slope: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("slope"))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((1.85..=2.15).contains(&slope), "{slope}");

    let o = cdpkit(&["probe", "--family", "sphere", "--n", "10", "--beta", "0"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("not met"));
}

#[test]
fn probe_on_rank_deficient_point_is_assumption_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rd.toml");
    std::fs::write(
        &cfg,
        "[family]\nname = \"custom\"\nmanifold = \"sphere\"\nn = 3\nx0 = [0.0, 0.0, 0.0]\n",
    )
    .unwrap();
    let o = cdpkit(&["probe", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("assumption violated"));
}

#[test]
fn bench_desk_grid_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = cdpkit(&[
        "bench",
        "--grid",
        &grid_path(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("center_of_mass_desk.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let (stat, status) = (
        headers.iter().position(|h| h == "stationarity").unwrap(),
        headers.iter().position(|h| h == "status").unwrap(),
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2 * 3);
    for r in rows.iter().filter(|r| &r[status] == "converged") {
        assert!(r[stat].parse::<f64>().unwrap() <= 1e-5);
    }
    let md = std::fs::read_to_string(dir.path().join("center_of_mass_desk.md")).unwrap();
    let widths: Vec<usize> = md.lines().map(|l| l.chars().count()).collect();
    assert!(widths.windows(2).all(|w| w[0] == w[1]), "{md}");
}

#[test]
fn bench_workers_preserve_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let grid = grid_path();
    let o = Command::new(env!("CARGO_BIN_EXE_cdpkit"))
        .args([
            "bench",
            "--grid",
            &grid,
            "--out",
            out,
            "--workers",
            "3",
            "--json",
        ])
        .env("CDPKIT_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let seeds: Vec<u64> = stdout(&o)
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["seed"]
                .as_u64()
                .unwrap()
        })
        .collect();
    assert_eq!(seeds, vec![1, 1, 2, 2, 3, 3]);
}

#[test]
fn bench_missing_grid_is_usage_error() {
    assert_eq!(code(&cdpkit(&["bench", "--grid", "/nonexistent/grid"])), 2);
}
