//! Generators and runners for the two benchmark families: Riemannian center
//! of mass on the symplectic Stiefel manifold and minimum balanced cut on the
//! oblique manifold.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dissolve::{a_infinity, build_cdp, CdpInstance, A_INF_MAX_ITER, A_INF_TOL};
use crate::error::{Error, Result};
use crate::manifolds::{
    make_handle, symplectic::matrix_from_row_major, symplectic::row_major, Family,
};
use crate::model::{FnConstraints, FnObjective, PenaltyParams, ProblemSpec, Vector};
use crate::solver::{alm_solve_cdp, alm_solve_nlp_direct, AlmOptions, SolveResult, SolveStatus};
use crate::util::{gaussian, seeded_rng, unit_gaussian};

/// Default `beta` for the center-of-mass CDP.
pub const CENTER_OF_MASS_BETA: f64 = 1.0;
/// `beta/2 |c|^2` with `beta = 0.025` equals the `0.05/4 |Diag(XX^T) - I|^2`
/// penalty of the balanced-cut benchmark.
pub const BALANCED_CUT_BETA: f64 = 0.025;
/// Scale of the Gaussian perturbations used to draw samples around `s*`.
pub const SAMPLE_SPREAD: f64 = 0.05;
pub const DEFAULT_BUDGET: f64 = 1200.0;

const PROJECTION_RETRIES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterOfMassConfig {
    pub m: usize,
    pub q: usize,
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub r: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedCutConfig {
    pub m: usize,
    pub q: usize,
    pub rho: f64,
    pub seed: u64,
}

impl CenterOfMassConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.q == 0 || !self.m.is_multiple_of(2) || !self.q.is_multiple_of(2) {
            return Err(Error::config(
                "center_of_mass.m",
                "m and q must be even positive integers",
            ));
        }
        if self.q > self.m {
            return Err(Error::config("center_of_mass.q", "q must not exceed m"));
        }
        if self.n_samples == 0 {
            return Err(Error::config(
                "center_of_mass.N",
                "need at least one sample",
            ));
        }
        if !(self.r > 0.0) {
            return Err(Error::config("center_of_mass.r", "radius must be positive"));
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        format!(
            "com(m={},q={},N={},r={},seed={})",
            self.m, self.q, self.n_samples, self.r, self.seed
        )
    }
}

impl BalancedCutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::config(
                "balanced_cut.m",
                "need at least two vertices",
            ));
        }
        if self.q == 0 {
            return Err(Error::config("balanced_cut.q", "must be positive"));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::config(
                "balanced_cut.rho",
                "edge probability must lie in (0, 1)",
            ));
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        format!(
            "bc(m={},q={},rho={},seed={})",
            self.m, self.q, self.rho, self.seed
        )
    }
}

/// A generated center-of-mass instance with its samples.
#[derive(Debug, Clone)]
pub struct CenterOfMass {
    pub problem: ProblemSpec,
    pub x0: Vector,
    pub center: Vector,
    pub samples: Vec<Vector>,
}

fn project_with_retries(
    handle: &dyn crate::model::Manifold,
    base: &Vector,
    dir: &Vector,
    spread: f64,
) -> Result<Vector> {
    let mut s = spread;
    for _ in 0..PROJECTION_RETRIES {
        if let Ok(p) = a_infinity(handle, &(base + s * dir), A_INF_TOL, A_INF_MAX_ITER) {
            return Ok(p.point);
        }
        s *= 0.5;
    }
    Err(Error::Generation(format!(
        "projection failed after {PROJECTION_RETRIES} retries (last spread {s:e})"
    )))
}

/// `f(x) = 1/N sum |x - s_i|^2`, `v(x) = |x - s*|^2 - r`, starting at `s*`.
pub fn gen_center_of_mass(cfg: &CenterOfMassConfig) -> Result<CenterOfMass> {
    cfg.validate()?;
    let handle = make_handle(Family::SymplecticStiefel { m: cfg.m, q: cfg.q })?;
    let n = handle.dim();
    let mut rng = seeded_rng(cfg.seed);
    let dir = unit_gaussian(&mut rng, n);
    let center = project_with_retries(handle.as_ref(), &handle.canonical_point(), &dir, 0.5)?;
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let g = gaussian(&mut rng, n);
        samples.push(project_with_retries(
            handle.as_ref(),
            &center,
            &g,
            SAMPLE_SPREAD,
        )?);
    }
    let (problem, x0) = center_of_mass_problem(handle, &center, &samples, cfg.r, &cfg.id());
    Ok(CenterOfMass {
        problem,
        x0,
        center,
        samples,
    })
}

/// Builds the center-of-mass problem for given samples and ball center.
pub fn center_of_mass_problem(
    handle: crate::model::ManifoldHandle,
    center: &Vector,
    samples: &[Vector],
    r: f64,
    name: &str,
) -> (ProblemSpec, Vector) {
    let n = center.len();
    let count = samples.len() as f64;
    let mean = samples.iter().fold(Vector::zeros(n), |acc, s| acc + s) / count;
    let spread = samples.iter().map(|s| s.norm_squared()).sum::<f64>() / count;
    let mean2 = mean.clone();
    let objective = FnObjective::new(
        move |x| x.norm_squared() - 2.0 * x.dot(&mean) + spread,
        move |x| 2.0 * (x - &mean2),
    );
    let (c1, c2, c3) = (center.clone(), center.clone(), center.clone());
    let ball = FnConstraints::new(
        1,
        move |x| Vector::from_element(1, (x - &c1).norm_squared() - r),
        move |x, d| Vector::from_element(1, 2.0 * (x - &c2).dot(d)),
        move |x, w| 2.0 * w[0] * (x - &c3),
    );
    let problem = ProblemSpec::new(name, handle, Arc::new(objective))
        .with_inequalities(Arc::new(ball))
        .with_description(
            "Riemannian center of mass on the symplectic Stiefel manifold within a ball",
        );
    (problem, center.clone())
}

/// A generated balanced-cut instance with its graph Laplacian.
#[derive(Debug, Clone)]
pub struct BalancedCut {
    pub problem: ProblemSpec,
    pub x0: Vector,
    pub laplacian: DMatrix<f64>,
}

/// Laplacian `D - A` of an Erdos-Renyi graph with independent edges.
pub fn erdos_renyi_laplacian(m: usize, rho: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            if rng.random::<f64>() < rho {
                l[(i, j)] = -1.0;
                l[(j, i)] = -1.0;
                l[(i, i)] += 1.0;
                l[(j, j)] += 1.0;
            }
        }
    }
    l
}

/// `f(X) = -1/4 tr(X^T L X)` on the oblique manifold with `X^T e = 0`.
pub fn balanced_cut_problem(laplacian: DMatrix<f64>, q: usize, name: &str) -> Result<ProblemSpec> {
    let m = laplacian.nrows();
    let handle = make_handle(Family::Oblique { m, q })?;
    let l2 = laplacian.clone();
    let objective = FnObjective::new(
        move |x| {
            let xm = matrix_from_row_major(x, m, q);
            -0.25 * xm.dot(&(&laplacian * &xm))
        },
        move |x| {
            let xm = matrix_from_row_major(x, m, q);
            row_major(&(-0.5 * (&l2 * xm)))
        },
    );
    let balance = FnConstraints::new(
        q,
        move |x| matrix_from_row_major(x, m, q).row_sum().transpose(),
        move |_, d| matrix_from_row_major(d, m, q).row_sum().transpose(),
        move |_, w| Vector::from_iterator(m * q, (0..m).flat_map(|_| w.iter().copied())),
    );
    Ok(ProblemSpec::new(name, handle, Arc::new(objective))
        .with_equalities(Arc::new(balance))
        .with_description("minimum balanced cut relaxation on the oblique manifold"))
}

pub fn gen_balanced_cut(cfg: &BalancedCutConfig) -> Result<BalancedCut> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let laplacian = erdos_renyi_laplacian(cfg.m, cfg.rho, &mut rng);
    let problem = balanced_cut_problem(laplacian.clone(), cfg.q, &cfg.id())?;
    let mut x0 = DMatrix::zeros(cfg.m, cfg.q);
    for i in 0..cfg.m {
        x0.set_row(i, &unit_gaussian(&mut rng, cfg.q).transpose());
    }
    Ok(BalancedCut {
        problem,
        x0: row_major(&x0),
        laplacian,
    })
}

/// The balanced-cut CDP with the benchmark penalty and no penalty on `u`.
pub fn build_balanced_cut_cdp(problem: &ProblemSpec) -> Result<CdpInstance> {
    build_cdp(
        problem,
        PenaltyParams::for_problem(problem, BALANCED_CUT_BETA),
    )
}

pub fn build_center_of_mass_cdp(problem: &ProblemSpec) -> Result<CdpInstance> {
    build_cdp(
        problem,
        PenaltyParams::for_problem(problem, CENTER_OF_MASS_BETA),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ExperimentConfig {
    CenterOfMass(CenterOfMassConfig),
    BalancedCut(BalancedCutConfig),
}

impl ExperimentConfig {
    pub fn id(&self) -> String {
        match self {
            ExperimentConfig::CenterOfMass(c) => c.id(),
            ExperimentConfig::BalancedCut(c) => c.id(),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            ExperimentConfig::CenterOfMass(_) => "center_of_mass",
            ExperimentConfig::BalancedCut(_) => "balanced_cut",
        }
    }

    fn params(&self) -> String {
        match self {
            ExperimentConfig::CenterOfMass(c) => {
                format!("m={} q={} N={} r={}", c.m, c.q, c.n_samples, c.r)
            }
            ExperimentConfig::BalancedCut(c) => format!("m={} q={} rho={}", c.m, c.q, c.rho),
        }
    }

    fn seed(&self) -> u64 {
        match self {
            ExperimentConfig::CenterOfMass(c) => c.seed,
            ExperimentConfig::BalancedCut(c) => c.seed,
        }
    }

    /// Problem, initial point and CDP instance with the benchmark penalties.
    pub fn instantiate(&self) -> Result<(ProblemSpec, Vector, CdpInstance)> {
        match self {
            ExperimentConfig::CenterOfMass(c) => {
                let g = gen_center_of_mass(c)?;
                let cdp = build_center_of_mass_cdp(&g.problem)?;
                Ok((g.problem, g.x0, cdp))
            }
            ExperimentConfig::BalancedCut(c) => {
                let g = gen_balanced_cut(c)?;
                let cdp = build_balanced_cut_cdp(&g.problem)?;
                Ok((g.problem, g.x0, cdp))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Cdp,
    Nlp,
}

impl PipelineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PipelineKind::Cdp => "cdp",
            PipelineKind::Nlp => "nlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem: String,
    pub family: String,
    pub params: String,
    pub seed: u64,
    pub pipeline: PipelineKind,
    pub fval: f64,
    pub stationarity: f64,
    pub feasibility: f64,
    pub time: f64,
    pub status: String,
}

impl RunRecord {
    fn from_result(cfg: &ExperimentConfig, pipeline: PipelineKind, r: &SolveResult) -> Self {
        RunRecord {
            problem: cfg.id(),
            family: cfg.family().into(),
            params: cfg.params(),
            seed: cfg.seed(),
            pipeline,
            fval: r.objective,
            stationarity: r.kkt.stationarity,
            feasibility: r.kkt.feasibility,
            time: r.elapsed,
            status: r.status.to_string(),
        }
    }

    fn failed(cfg: &ExperimentConfig, pipeline: PipelineKind, err: &Error, time: f64) -> Self {
        RunRecord {
            problem: cfg.id(),
            family: cfg.family().into(),
            params: cfg.params(),
            seed: cfg.seed(),
            pipeline,
            fval: f64::NAN,
            stationarity: f64::NAN,
            feasibility: f64::NAN,
            time,
            status: format!("error: {err}"),
        }
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged.as_str()
    }
}

/// Solves one instance with one pipeline.
pub fn run_pipeline(
    problem: &ProblemSpec,
    cdp: &CdpInstance,
    x0: &Vector,
    pipeline: PipelineKind,
    opts: &AlmOptions,
) -> Result<SolveResult> {
    match pipeline {
        PipelineKind::Cdp => alm_solve_cdp(cdp, x0, opts),
        PipelineKind::Nlp => alm_solve_nlp_direct(problem, x0, opts),
    }
}

/// Runs both pipelines on every configuration from a shared initial point.
/// Failures are recorded in the status column and never abort the grid.
/// When `opts.time_budget` is unset the per-run budget is [`DEFAULT_BUDGET`].
pub fn run_experiment(
    grid: &[ExperimentConfig],
    opts: &AlmOptions,
    out: Option<&mut dyn Write>,
) -> Result<Vec<RunRecord>> {
    let mut opts = opts.clone();
    opts.time_budget.get_or_insert(DEFAULT_BUDGET);
    let mut records = Vec::with_capacity(2 * grid.len());
    for cfg in grid {
        let start = Instant::now();
        match cfg.instantiate() {
            Ok((problem, x0, cdp)) => {
                for pipeline in [PipelineKind::Cdp, PipelineKind::Nlp] {
                    let t = Instant::now();
                    let rec = match run_pipeline(&problem, &cdp, &x0, pipeline, &opts) {
                        Ok(r) => RunRecord::from_result(cfg, pipeline, &r),
                        Err(e) => RunRecord::failed(cfg, pipeline, &e, t.elapsed().as_secs_f64()),
                    };
                    records.push(rec);
                }
            }
            Err(e) => {
                let t = start.elapsed().as_secs_f64();
                records.push(RunRecord::failed(cfg, PipelineKind::Cdp, &e, t));
                records.push(RunRecord::failed(cfg, PipelineKind::Nlp, &e, t));
            }
        }
    }
    if let Some(out) = out {
        write_records_csv(&records, out)?;
    }
    Ok(records)
}

pub fn write_records_csv(records: &[RunRecord], out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "family",
        "params",
        "seed",
        "pipeline",
        "fval",
        "stationarity",
        "feasibility",
        "time",
        "status",
    ])?;
    for r in records {
        w.write_record([
            r.family.clone(),
            r.params.clone(),
            r.seed.to_string(),
            r.pipeline.as_str().to_string(),
            format!("{:.6e}", r.fval),
            format!("{:.2e}", r.stationarity),
            format!("{:.2e}", r.feasibility),
            format!("{:.3}", r.time),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned markdown table with one row per instance and the CDP and direct
/// columns side by side.
pub fn markdown_table(records: &[RunRecord]) -> String {
    let header = [
        "problem",
        "f (cdp)",
        "f (nlp)",
        "stat (cdp)",
        "stat (nlp)",
        "feas (cdp)",
        "feas (nlp)",
        "time cdp (s)",
        "time nlp (s)",
        "nlp/cdp",
    ];
    let mut rows: Vec<Vec<String>> = Vec::new();
    for pair in records.chunks(2) {
        let (c, d) = match pair {
            [a, b] => (a, b),
            _ => continue,
        };
        let ratio = if c.time > 0.0 {
            d.time / c.time
        } else {
            f64::NAN
        };
        rows.push(vec![
            c.problem.clone(),
            format!("{:.4e}", c.fval),
            format!("{:.4e}", d.fval),
            format!("{:.2e}", c.stationarity),
            format!("{:.2e}", d.stationarity),
            format!("{:.2e}", c.feasibility),
            format!("{:.2e}", d.feasibility),
            format!("{:.3}", c.time),
            format!("{:.3}", d.time),
            format!("{ratio:.2}"),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|k| {
            rows.iter()
                .map(|r| r[k].len())
                .chain([header[k].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<String>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut s = line(header.iter().map(|h| h.to_string()).collect());
    s += &line(widths.iter().map(|w| "-".repeat(*w)).collect());
    for r in rows {
        s += &line(r);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_manifold;

    #[test]
    fn complete_graph_on_two_vertices() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let p = balanced_cut_problem(l, 1, "k2").unwrap();
        let x = Vector::from_vec(vec![1.0, -1.0]);
        assert_eq!(p.objective.value(&x), -1.0);
        assert_eq!(p.equalities.eval(&x)[0], 0.0);
        assert_eq!(p.manifold.constraint(&x).norm(), 0.0);
    }

    #[test]
    fn empty_graph_has_zero_objective() {
        let p = balanced_cut_problem(DMatrix::zeros(4, 4), 2, "empty").unwrap();
        let x = gaussian(&mut seeded_rng(0), 8);
        assert_eq!(p.objective.value(&x), 0.0);
        assert_eq!(p.objective.gradient(&x), Vector::zeros(8));
    }

    #[test]
    fn laplacian_rows_sum_to_zero_and_psd() {
        let l = erdos_renyi_laplacian(30, 0.2, &mut seeded_rng(7));
        let e = Vector::from_element(30, 1.0);
        assert_eq!((&l * &e).amax(), 0.0);
        assert_eq!(l, l.transpose());
        let min = l.clone().symmetric_eigenvalues().min();
        assert!(min >= -1e-10);
    }

    #[test]
    fn balanced_cut_dimensions() {
        let g = gen_balanced_cut(&BalancedCutConfig {
            m: 50,
            q: 2,
            rho: 0.1,
            seed: 7,
        })
        .unwrap();
        assert_eq!(g.problem.dim(), 100);
        assert_eq!(g.problem.manifold.num_constraints(), 50);
        assert_eq!(
            (g.problem.num_equalities(), g.problem.num_inequalities()),
            (2, 0)
        );
        assert!(g.problem.manifold.constraint(&g.x0).amax() < 1e-14);
    }

    #[test]
    fn center_of_mass_instance_is_valid() {
        let cfg = CenterOfMassConfig {
            m: 20,
            q: 4,
            n_samples: 100,
            r: 0.01,
            seed: 1,
        };
        let g = gen_center_of_mass(&cfg).unwrap();
        let h = g.problem.manifold.clone();
        for s in g.samples.iter().chain([&g.center]) {
            let c = crate::manifolds::SymplecticConstraint::new(20, 4).unwrap();
            assert!(c.residual(s).norm() <= 1e-10);
        }
        let r = validate_manifold(h.as_ref(), std::slice::from_ref(&g.x0), 1e-10).unwrap();
        assert!(r.passed);
        assert!(crate::diagnostics::check_licq(&g.problem, &g.x0, 1e-10).unwrap());
        assert_eq!(
            (g.problem.num_equalities(), g.problem.num_inequalities()),
            (0, 1)
        );
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = BalancedCutConfig {
            m: 20,
            q: 3,
            rho: 0.3,
            seed: 5,
        };
        let a = gen_balanced_cut(&cfg).unwrap();
        let b = gen_balanced_cut(&cfg).unwrap();
        assert_eq!(a.laplacian, b.laplacian);
        assert_eq!(a.x0, b.x0);
    }

    #[test]
    fn markdown_table_is_aligned() {
        let rec = |p: PipelineKind, t: f64| RunRecord {
            problem: "x".into(),
            family: "f".into(),
            params: String::new(),
            seed: 0,
            pipeline: p,
            fval: -1.0,
            stationarity: 1e-7,
            feasibility: 0.0,
            time: t,
            status: "converged".into(),
        };
        let t = markdown_table(&[rec(PipelineKind::Cdp, 1.0), rec(PipelineKind::Nlp, 3.0)]);
        let lens: Vec<usize> = t.lines().map(|l| l.chars().count()).collect();
        assert!(lens.windows(2).all(|w| w[0] == w[1]));
        assert!(t.contains("3.00"));
    }
}
