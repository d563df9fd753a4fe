//! Augmented Lagrangian method for `min F(x) s.t. E(x) = 0, G(x) <= 0`.
//!
//! For the CDP pipeline `F = h`, `E = u~`, `G = v~`; for the direct pipeline
//! `F = f`, `E = [c; u]`, `G = v`. Each outer iteration minimizes
//!
//! ```text
//! F + lambda^T E + sigma/2 |E|^2 + 1/(2 sigma) (|max(mu + sigma G, 0)|^2 - |mu|^2)
//! ```
//!
//! with L-BFGS and then updates the multipliers. Convergence is certified on
//! the original problem through the KKT residual.

use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::lbfgs::{lbfgs_minimize, LbfgsOptions, LbfgsStatus};
use crate::diagnostics::{
    active_set, beta_required, constraint_gradients, estimate_constants, kkt_residual,
    solve_mixed_nnls, ConstantEstimates, KktReport,
};
use crate::dissolve::{a_infinity, CdpInstance, A_INF_MAX_ITER, A_INF_TOL};
use crate::error::{Error, Result};
use crate::model::{MultiplierSet, PenaltyParams, ProblemSpec, SolveTrace, TraceRecord, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlmOptions {
    pub outer_tol_stationarity: f64,
    pub outer_tol_feasibility: f64,
    pub max_outer: usize,
    pub lbfgs_memory: usize,
    pub max_inner: usize,
    /// Inner tolerance floor as a fraction of the outer stationarity tolerance.
    pub inner_tol_factor: f64,
    pub alm_penalty_init: f64,
    pub alm_penalty_growth: f64,
    pub multiplier_clip: f64,
    pub beta_adapt: bool,
    pub beta_growth: f64,
    /// Wall-clock budget in seconds.
    pub time_budget: Option<f64>,
    /// Samples and radius for the constants behind the `beta` safeguard.
    pub constant_samples: usize,
    pub constant_radius: f64,
    pub seed: u64,
}

impl Default for AlmOptions {
    fn default() -> Self {
        AlmOptions {
            outer_tol_stationarity: 1e-6,
            outer_tol_feasibility: 1e-6,
            max_outer: 100,
            lbfgs_memory: 10,
            max_inner: 500,
            inner_tol_factor: 0.1,
            alm_penalty_init: 10.0,
            alm_penalty_growth: 10.0,
            multiplier_clip: 1e8,
            beta_adapt: true,
            beta_growth: 10.0,
            time_budget: None,
            constant_samples: 20,
            constant_radius: 0.1,
            seed: 0,
        }
    }
}

impl AlmOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::parameter(name, format!("must be positive, got {v}")))
            }
        };
        pos("outer_tol_stationarity", self.outer_tol_stationarity)?;
        pos("outer_tol_feasibility", self.outer_tol_feasibility)?;
        pos("inner_tol_factor", self.inner_tol_factor)?;
        pos("alm_penalty_init", self.alm_penalty_init)?;
        pos("multiplier_clip", self.multiplier_clip)?;
        pos("constant_radius", self.constant_radius)?;
        for (name, g) in [
            ("alm_penalty_growth", self.alm_penalty_growth),
            ("beta_growth", self.beta_growth),
        ] {
            if !(g > 1.0) {
                return Err(Error::parameter(name, format!("must exceed 1, got {g}")));
            }
        }
        if self.lbfgs_memory == 0 || self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::parameter(
                "alm",
                "memory and iteration limits must be positive",
            ));
        }
        if let Some(b) = self.time_budget {
            if !(b >= 0.0) {
                return Err(Error::parameter(
                    "time_budget",
                    format!("must be nonnegative, got {b}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    InnerFailure,
    Diverged,
    MaxTime,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::InnerFailure => "inner_failure",
            SolveStatus::Diverged => "diverged",
            SolveStatus::MaxTime => "max_time",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x_final: Vector,
    pub x_postprocessed: Vector,
    pub multipliers: MultiplierSet,
    /// KKT report of the original problem at `x_postprocessed`.
    pub kkt: KktReport,
    /// `f(x_postprocessed)`.
    pub objective: f64,
    pub trace: SolveTrace,
    pub status: SolveStatus,
    pub beta: Option<f64>,
    pub estimates: Option<ConstantEstimates>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub elapsed: f64,
}

enum Pipeline {
    Cdp(CdpInstance),
    Direct(ProblemSpec),
}

struct Evaluation {
    value: f64,
    eq: Vector,
    ineq: Vector,
    grad: Vector,
}

type Weights<'a> = &'a mut dyn FnMut(&Vector, &Vector) -> (Vector, Vector);

impl Pipeline {
    fn problem(&self) -> &ProblemSpec {
        match self {
            Pipeline::Cdp(i) => &i.problem,
            Pipeline::Direct(p) => p,
        }
    }

    fn num_eq(&self) -> usize {
        match self {
            Pipeline::Cdp(i) => i.num_equalities(),
            Pipeline::Direct(p) => p.manifold.num_constraints() + p.num_equalities(),
        }
    }

    fn num_ineq(&self) -> usize {
        self.problem().num_inequalities()
    }

    fn evaluate(&self, x: &Vector, weights: Weights) -> Result<Evaluation> {
        match self {
            Pipeline::Cdp(inst) => {
                let (vals, grad) = inst.evaluate_with(x, |v| weights(&v.u_tilde, &v.v_tilde))?;
                Ok(Evaluation {
                    value: vals.h,
                    eq: vals.u_tilde,
                    ineq: vals.v_tilde,
                    grad,
                })
            }
            Pipeline::Direct(p) => {
                let pc = p.manifold.num_constraints();
                let c = p.manifold.constraint(x);
                let u = p.equalities.eval(x);
                let eq = Vector::from_iterator(pc + u.len(), c.iter().chain(u.iter()).copied());
                let ineq = p.inequalities.eval(x);
                let (w_eq, w_ineq) = weights(&eq, &ineq);
                let mut grad = p.objective.gradient(x);
                if pc > 0 {
                    grad += p.manifold.jc(x, &w_eq.rows(0, pc).into_owned());
                }
                if !u.is_empty() {
                    grad += p.equalities.jac(x, &w_eq.rows(pc, u.len()).into_owned());
                }
                if !ineq.is_empty() {
                    grad += p.inequalities.jac(x, &w_ineq);
                }
                Ok(Evaluation {
                    value: p.objective.value(x),
                    eq,
                    ineq,
                    grad,
                })
            }
        }
    }

    /// Point at which the original problem is certified.
    fn postprocess(&self, x: &Vector) -> Vector {
        match self {
            Pipeline::Cdp(inst) => {
                match a_infinity(inst.manifold(), x, A_INF_TOL, A_INF_MAX_ITER) {
                    Ok(p) => p.point,
                    Err(e) => {
                        debug!("post-processing failed: {e}");
                        x.clone()
                    }
                }
            }
            Pipeline::Direct(_) => x.clone(),
        }
    }
}

/// Multipliers minimizing the Lagrangian-gradient norm at `x`, with
/// inequality multipliers restricted to the active set.
pub fn estimate_multipliers(problem: &ProblemSpec, x: &Vector) -> MultiplierSet {
    let p = problem.manifold.num_constraints();
    let ne = problem.num_equalities();
    let active = active_set(problem, x);
    let all = constraint_gradients(problem, x);
    let mut cols: Vec<usize> = (0..p + ne).collect();
    cols.extend(active.iter().map(|j| p + ne + j));
    let mut mult = MultiplierSet::for_problem(problem);
    if cols.is_empty() {
        return mult;
    }
    let b = all.select_columns(&cols);
    let g = problem.objective.gradient(x);
    let sol = solve_mixed_nnls(&b, &(-g), p + ne);
    if sol.solution.iter().any(|v| !v.is_finite()) {
        return mult;
    }
    mult.rho.copy_from(&sol.solution.rows(0, p));
    mult.lambda.copy_from(&sol.solution.rows(p, ne));
    for (k, &j) in active.iter().enumerate() {
        mult.mu[j] = sol.solution[p + ne + k];
    }
    mult
}

/// Solves the CDP of `instance` by the augmented Lagrangian method and
/// certifies the result on the original problem after `A^inf` post-processing.
pub fn alm_solve_cdp(
    instance: &CdpInstance,
    x0: &Vector,
    opts: &AlmOptions,
) -> Result<SolveResult> {
    if instance.manifold().num_constraints() == 0 {
        return Err(Error::parameter(
            "manifold",
            "the CDP pipeline needs at least one manifold constraint; use the direct solver",
        ));
    }
    run(Pipeline::Cdp(instance.clone()), x0, opts)
}

/// The same method applied to the original problem with `c` kept as an
/// explicit equality constraint.
pub fn alm_solve_nlp_direct(
    problem: &ProblemSpec,
    x0: &Vector,
    opts: &AlmOptions,
) -> Result<SolveResult> {
    run(Pipeline::Direct(problem.clone()), x0, opts)
}

fn clip(v: &mut Vector, bound: f64) -> bool {
    let mut clipped = false;
    for e in v.iter_mut() {
        if e.abs() > bound {
            *e = e.signum() * bound;
            clipped = true;
        }
    }
    clipped
}

fn run(mut pipeline: Pipeline, x0: &Vector, opts: &AlmOptions) -> Result<SolveResult> {
    opts.validate()?;
    let problem = pipeline.problem().clone();
    problem.check_point(x0)?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::parameter("x0", "initial point must be finite"));
    }
    let start = Instant::now();
    let deadline = opts.time_budget.map(|b| start + Duration::from_secs_f64(b));
    let out_of_time = || deadline.is_some_and(|d| Instant::now() >= d);
    let p = problem.manifold.num_constraints();
    let (n_eq, n_ineq) = (pipeline.num_eq(), pipeline.num_ineq());
    let unconstrained = n_eq + n_ineq == 0;
    let inner_floor = opts.inner_tol_factor * opts.outer_tol_stationarity;

    // warm-start multipliers from a least-squares estimate at x0
    let x0_post = pipeline.postprocess(x0);
    let init = estimate_multipliers(&problem, &x0_post);
    let (mut lambda, mut mu) = match &pipeline {
        Pipeline::Cdp(_) => (init.lambda.clone(), init.mu.clone()),
        Pipeline::Direct(_) => (
            Vector::from_iterator(n_eq, init.rho.iter().chain(init.lambda.iter()).copied()),
            init.mu.clone(),
        ),
    };
    let mut sigma = opts.alm_penalty_init;

    let mut estimates = None;
    if let (Pipeline::Cdp(_), true) = (&pipeline, opts.beta_adapt) {
        match estimate_constants(
            &problem,
            &x0_post,
            opts.constant_radius,
            opts.constant_samples,
            opts.seed,
        ) {
            Ok(e) => estimates = Some(e),
            Err(e) => warn!("beta safeguard disabled: {e}"),
        }
    }

    let mut x = x0.clone();
    let mut trace = SolveTrace::default();
    let mut status = SolveStatus::MaxIter;
    let mut last_violation = f64::INFINITY;
    let mut inner_total = 0;
    let mut x_post = x0_post;
    let mut kkt = kkt_residual(&problem, &x_post)?;

    let mut outer = 0;
    while outer < opts.max_outer {
        if out_of_time() {
            status = SolveStatus::MaxTime;
            break;
        }
        outer += 1;
        let inner_tol = if unconstrained {
            inner_floor
        } else {
            inner_floor.max(0.1f64.powi(outer as i32))
        };
        let lbfgs_opts = LbfgsOptions {
            tol: inner_tol,
            max_iter: opts.max_inner,
            memory: opts.lbfgs_memory,
            deadline,
            ..Default::default()
        };
        let (lam, m_, s) = (lambda.clone(), mu.clone(), sigma);
        let augmented = |y: &Vector| -> Result<(f64, Vector)> {
            let mut pen = 0.0;
            let ev = pipeline.evaluate(y, &mut |e: &Vector, g: &Vector| {
                let w_eq = &lam + s * e;
                let shifted = (&m_ + s * g).map(|v| v.max(0.0));
                pen = lam.dot(e)
                    + 0.5 * s * e.norm_squared()
                    + (shifted.norm_squared() - m_.norm_squared()) / (2.0 * s);
                (w_eq, shifted)
            })?;
            Ok((ev.value + pen, ev.grad))
        };
        let inner = match lbfgs_minimize(augmented, &x, &lbfgs_opts) {
            Ok(r) => r,
            Err(e) => {
                debug!("inner solve failed at outer {outer}: {e}");
                status = SolveStatus::Diverged;
                break;
            }
        };
        inner_total += inner.iterations;
        if inner.x.iter().any(|v| !v.is_finite()) {
            status = SolveStatus::Diverged;
            break;
        }
        x = inner.x.clone();

        let ev = match pipeline.evaluate(&x, &mut |e: &Vector, g: &Vector| {
            (Vector::zeros(e.len()), Vector::zeros(g.len()))
        }) {
            Ok(ev) => ev,
            Err(_) => {
                status = SolveStatus::Diverged;
                break;
            }
        };
        x_post = pipeline.postprocess(&x);
        kkt = kkt_residual(&problem, &x_post)?;
        let certified = kkt.stationarity <= opts.outer_tol_stationarity
            && kkt.feasibility <= opts.outer_tol_feasibility
            && kkt.complementarity <= opts.outer_tol_feasibility.max(opts.outer_tol_stationarity);

        let violation = ev.eq.amax().max(
            ev.ineq
                .iter()
                .zip(mu.iter())
                .map(|(g, m)| g.max(-m / sigma).abs())
                .fold(0.0, f64::max),
        );
        if !certified {
            lambda += sigma * &ev.eq;
            mu = (&mu + sigma * &ev.ineq).map(|v| v.max(0.0));
        }
        let clipped = clip(&mut lambda, opts.multiplier_clip) | clip(&mut mu, opts.multiplier_clip);
        if !certified && violation > 0.25 * last_violation {
            sigma *= opts.alm_penalty_growth;
        }
        last_violation = violation;

        let mut beta_req = None;
        if let (Pipeline::Cdp(inst), Some(est)) = (&mut pipeline, &estimates) {
            let mult = MultiplierSet {
                rho: Vector::zeros(p),
                lambda: lambda.clone(),
                mu: mu.clone(),
            };
            let req = beta_required(est, &inst.params, &mult);
            beta_req = Some(req);
            if !certified && inst.params.beta < req {
                let params = PenaltyParams {
                    beta: opts.beta_growth * req,
                    ..inst.params.clone()
                };
                debug!(
                    "beta {} below required {req}; raising to {}",
                    inst.params.beta, params.beta
                );
                *inst = inst.with_params(params)?;
            }
        }

        trace.push(TraceRecord {
            iter: outer,
            objective: problem.objective.value(&x_post),
            feasibility: kkt.feasibility,
            stationarity: kkt.stationarity,
            beta: match &pipeline {
                Pipeline::Cdp(i) => i.params.beta,
                Pipeline::Direct(_) => 0.0,
            },
            sigma,
            multiplier_norm: (lambda.norm_squared() + mu.norm_squared()).sqrt(),
            x_norm: x.norm(),
            inner_iterations: inner.iterations,
            multipliers_clipped: clipped,
            beta_required: beta_req,
            time: start.elapsed().as_secs_f64(),
        });
        debug!(
            "outer {outer}: f={:.6e} feas={:.2e} stat={:.2e} sigma={sigma:.1e} inner={} ({:?})",
            problem.objective.value(&x_post),
            kkt.feasibility,
            kkt.stationarity,
            inner.iterations,
            inner.status
        );

        if certified {
            status = SolveStatus::Converged;
            break;
        }
        match inner.status {
            LbfgsStatus::MaxTime => {
                status = SolveStatus::MaxTime;
                break;
            }
            LbfgsStatus::LineSearchFailure if inner.grad_norm() > 1e3 * inner_tol.max(1e-8) => {
                status = SolveStatus::InnerFailure;
                break;
            }
            _ => {}
        }
        if !inner.value.is_finite() {
            status = SolveStatus::Diverged;
            break;
        }
    }

    let multipliers = match &pipeline {
        Pipeline::Cdp(_) => MultiplierSet {
            rho: kkt.multipliers.rho.clone(),
            lambda,
            mu,
        },
        Pipeline::Direct(_) => MultiplierSet {
            rho: lambda.rows(0, p).into_owned(),
            lambda: lambda.rows(p, n_eq - p).into_owned(),
            mu,
        },
    };
    Ok(SolveResult {
        objective: problem.objective.value(&x_post),
        x_final: x,
        x_postprocessed: x_post,
        multipliers,
        kkt,
        trace,
        status,
        beta: match &pipeline {
            Pipeline::Cdp(i) => Some(i.params.beta),
            Pipeline::Direct(_) => None,
        },
        estimates,
        outer_iterations: outer,
        inner_iterations: inner_total,
        elapsed: start.elapsed().as_secs_f64(),
    })
}
