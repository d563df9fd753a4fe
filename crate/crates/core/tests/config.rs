use cdpkit::config::{apply_overrides, load_grid, load_problem, load_problem_doc, parse_document};
use cdpkit::experiments::ExperimentConfig;
use cdpkit::{alm_solve_cdp, alm_solve_nlp_direct, build_cdp, Error, SolveStatus};

// min 1/2 |x|^2 + x0 + x1 on the unit sphere with x0 >= -0.6.
// The minimizer is (-0.6, -0.8, 0) with value 0.5 - 1.4.
const CUSTOM: &str = r#"
[family]
name = "custom"
manifold = "sphere"
n = 3
linear = [1.0, 1.0, 0.0]
ineq_matrix = [[-1.0, 0.0, 0.0]]
ineq_rhs = [0.6]
x0 = [0.0, 0.0, 1.0]

[penalty]
beta = 5.0
gamma = 1.0
"#;

#[test]
fn custom_problem_reaches_closed_form_optimum() {
    let l = load_problem(CUSTOM).unwrap();
    assert_eq!(l.penalty.gamma, vec![1.0]);
    let cdp = build_cdp(&l.problem, l.penalty.clone()).unwrap();
    for r in [
        alm_solve_cdp(&cdp, &l.x0, &l.options).unwrap(),
        alm_solve_nlp_direct(&l.problem, &l.x0, &l.options).unwrap(),
    ] {
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.objective + 0.9).abs() <= 1e-6, "{}", r.objective);
        let x = &r.x_postprocessed;
        assert!(
            (x[0] + 0.6).abs() <= 1e-5 && (x[1] + 0.8).abs() <= 1e-5 && x[2].abs() <= 1e-5,
            "{x}"
        );
        assert!(
            (r.multipliers.mu[0] - 0.25).abs() <= 1e-4,
            "{}",
            r.multipliers.mu
        );
    }
}

#[test]
fn overrides_change_the_loaded_problem() {
    let mut doc = parse_document("family = \"balanced_cut\"\nm = 10\nq = 2\nrho = 0.3\n").unwrap();
    apply_overrides(
        &mut doc,
        &[
            "family.m=12".into(),
            "solver.max_outer=7".into(),
            "penalty.beta=2.5".into(),
        ],
    )
    .unwrap();
    let l = load_problem_doc(&doc).unwrap();
    assert_eq!(l.problem.dim(), 24);
    assert_eq!(l.options.max_outer, 7);
    assert_eq!(l.penalty.beta, 2.5);
    assert!(matches!(
        l.experiment,
        Some(ExperimentConfig::BalancedCut(_))
    ));
}

#[test]
fn bad_override_syntax_is_a_config_error() {
    let mut doc = parse_document("family = \"balanced_cut\"\n").unwrap();
    let err = apply_overrides(&mut doc, &["no_equals_sign".into()]).unwrap_err();
    assert!(matches!(err, Error::Config { .. }), "{err}");
}

#[test]
fn grid_expansion_and_fixed_penalty_default() {
    let (grid, opts) = load_grid(
        r#"
        [solver]
        max_outer = 40

        [[run]]
        name = "balanced_cut"
        m = [20, 40]
        q = 2
        rho = 0.2
        seed = [1, 2, 3]

        [[run]]
        name = "center_of_mass"
        m = 6
        q = 2
        N = 10
        r = 0.05
        "#,
    )
    .unwrap();
    assert_eq!(grid.len(), 7);
    assert_eq!(opts.max_outer, 40);
    assert!(!opts.beta_adapt);
    assert_eq!(grid[6].family(), "center_of_mass");
    let ids: std::collections::BTreeSet<String> = grid.iter().map(|g| g.id()).collect();
    assert_eq!(ids.len(), 7);
}

#[test]
fn grid_errors_name_the_run() {
    let err = load_grid("[[run]]\nname = \"balanced_cut\"\nq = 2\nrho = 0.1\n").unwrap_err();
    assert!(
        matches!(err, Error::Config { ref path, .. } if path == "run[0].m"),
        "{err}"
    );
    assert!(load_grid("seed = 1\n").is_err());
}

#[test]
fn unknown_solver_keys_are_rejected() {
    let err =
        load_problem("family = \"balanced_cut\"\nm = 10\nq = 2\nrho = 0.3\n[solver]\nbogus = 1\n")
            .unwrap_err();
    assert!(
        matches!(err, Error::Config { ref path, .. } if path == "solver"),
        "{err}"
    );
}
