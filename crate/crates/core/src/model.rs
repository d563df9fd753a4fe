//! Problem model shared by every other module.
//!
//! Points are flat `f64` vectors. Matrix variables are flattened row-major and
//! the owning manifold carries the `{rows, cols}` shape. Jacobians follow the
//! transposed convention: for a map `g: R^n -> R^k` the matrix `J_g(x)` is
//! `n x k` and its columns are the gradients of the components. They are only
//! ever exposed as actions.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;

/// Default tolerance on `|c(x)|` for a point to count as feasible.
pub const AXIOM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn vector(n: usize) -> Self {
        Shape { rows: n, cols: 1 }
    }

    pub fn matrix(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A point together with its shape, used at serialization boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub coordinates: Vec<f64>,
    pub shape: Shape,
}

impl Point {
    pub fn new(coordinates: Vector, shape: Shape) -> Result<Self> {
        if coordinates.len() != shape.len() {
            return Err(Error::dimension("point", shape.len(), coordinates.len()));
        }
        if coordinates.iter().any(|v| !v.is_finite()) {
            return Err(Error::parameter("point", "non-finite coordinate"));
        }
        Ok(Point {
            coordinates: coordinates.as_slice().to_vec(),
            shape,
        })
    }

    pub fn to_vector(&self) -> Vector {
        Vector::from_column_slice(&self.coordinates)
    }
}

/// Manifold constraint `c(x) = 0` together with a constraint dissolving
/// mapping `A`.
///
/// `ja(x, d)` is the action of the transposed Jacobian `J_A(x) = DA(x)^T`,
/// which pulls gradients back through `A`. `ja_t(x, d)` is the forward
/// derivative `DA(x) d`.
pub trait Manifold: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn shape(&self) -> Shape;
    fn num_constraints(&self) -> usize;

    fn dim(&self) -> usize {
        self.shape().len()
    }

    fn constraint(&self, x: &Vector) -> Vector;
    /// `Jc(x)^T d`, length `p`.
    fn jc_t(&self, x: &Vector, d: &Vector) -> Vector;
    /// `Jc(x) w`, length `n`.
    fn jc(&self, x: &Vector, w: &Vector) -> Vector;

    fn dissolve(&self, x: &Vector) -> Result<Vector>;
    /// `J_A(x) d = DA(x)^T d`.
    fn ja(&self, x: &Vector, d: &Vector) -> Result<Vector>;
    /// `J_A(x)^T d = DA(x) d`.
    fn ja_t(&self, x: &Vector, d: &Vector) -> Result<Vector>;

    /// Evaluates `A(x)`, hands it to `outer` to obtain a gradient `g` at
    /// `A(x)`, and returns `(A(x), J_A(x) g)`. Implementations override this
    /// when `A` and `J_A` share expensive work.
    fn dissolve_pullback(
        &self,
        x: &Vector,
        outer: &mut dyn FnMut(&Vector) -> Vector,
    ) -> Result<(Vector, Vector)> {
        let ax = self.dissolve(x)?;
        let g = outer(&ax);
        let pulled = self.ja(x, &g)?;
        Ok((ax, pulled))
    }

    /// A point known to lie on the manifold.
    fn canonical_point(&self) -> Vector;
}

pub type ManifoldHandle = Arc<dyn Manifold>;

pub trait Objective: Send + Sync {
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;
}

/// A vector-valued constraint map `g: R^n -> R^k`.
pub trait ConstraintMap: Send + Sync {
    fn len(&self) -> usize;
    fn eval(&self, x: &Vector) -> Vector;
    /// `J_g(x)^T d`, length `k`.
    fn jac_t(&self, x: &Vector, d: &Vector) -> Vector;
    /// `J_g(x) w = sum_i w_i grad g_i(x)`, length `n`.
    fn jac(&self, x: &Vector, w: &Vector) -> Vector;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The empty constraint map.
#[derive(Debug, Clone, Copy)]
pub struct NoConstraints {
    pub n: usize,
}

impl ConstraintMap for NoConstraints {
    fn len(&self) -> usize {
        0
    }
    fn eval(&self, _x: &Vector) -> Vector {
        Vector::zeros(0)
    }
    fn jac_t(&self, _x: &Vector, _d: &Vector) -> Vector {
        Vector::zeros(0)
    }
    fn jac(&self, _x: &Vector, _w: &Vector) -> Vector {
        Vector::zeros(self.n)
    }
}

type ScalarFn = dyn Fn(&Vector) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&Vector) -> Vector + Send + Sync;
type ActionFn = dyn Fn(&Vector, &Vector) -> Vector + Send + Sync;

/// Objective backed by closures.
pub struct FnObjective {
    value: Box<ScalarFn>,
    gradient: Box<VectorFn>,
}

impl FnObjective {
    pub fn new(
        value: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        FnObjective {
            value: Box::new(value),
            gradient: Box::new(gradient),
        }
    }
}

impl Objective for FnObjective {
    fn value(&self, x: &Vector) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        (self.gradient)(x)
    }
}

/// Constraint map backed by closures.
pub struct FnConstraints {
    len: usize,
    eval: Box<VectorFn>,
    jac_t: Box<ActionFn>,
    jac: Box<ActionFn>,
}

impl FnConstraints {
    pub fn new(
        len: usize,
        eval: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        jac_t: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
        jac: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        FnConstraints {
            len,
            eval: Box::new(eval),
            jac_t: Box::new(jac_t),
            jac: Box::new(jac),
        }
    }

    /// Affine map `g(x) = G^T x - b` where the columns of `g_cols` are the gradients.
    pub fn affine(g_cols: nalgebra::DMatrix<f64>, b: Vector) -> Self {
        let len = g_cols.ncols();
        let g1 = g_cols.clone();
        let g2 = g_cols.clone();
        FnConstraints::new(
            len,
            move |x| g_cols.tr_mul(x) - &b,
            move |_, d| g1.tr_mul(d),
            move |_, w| &g2 * w,
        )
    }
}

impl ConstraintMap for FnConstraints {
    fn len(&self) -> usize {
        self.len
    }
    fn eval(&self, x: &Vector) -> Vector {
        (self.eval)(x)
    }
    fn jac_t(&self, x: &Vector, d: &Vector) -> Vector {
        (self.jac_t)(x, d)
    }
    fn jac(&self, x: &Vector, w: &Vector) -> Vector {
        (self.jac)(x, w)
    }
}

/// A manifold-constrained nonlinear program
/// `min f(x)  s.t.  c(x) = 0, u(x) = 0, v(x) <= 0`.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub description: String,
    pub manifold: ManifoldHandle,
    pub objective: Arc<dyn Objective>,
    pub equalities: Arc<dyn ConstraintMap>,
    pub inequalities: Arc<dyn ConstraintMap>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("manifold", &self.manifold.name())
            .field("n", &self.dim())
            .field("p", &self.manifold.num_constraints())
            .field("n_eq", &self.num_equalities())
            .field("n_ineq", &self.num_inequalities())
            .finish()
    }
}

impl ProblemSpec {
    pub fn new(
        name: impl Into<String>,
        manifold: ManifoldHandle,
        objective: Arc<dyn Objective>,
    ) -> Self {
        let n = manifold.dim();
        ProblemSpec {
            name: name.into(),
            description: String::new(),
            manifold,
            objective,
            equalities: Arc::new(NoConstraints { n }),
            inequalities: Arc::new(NoConstraints { n }),
        }
    }

    pub fn with_equalities(mut self, u: Arc<dyn ConstraintMap>) -> Self {
        self.equalities = u;
        self
    }

    pub fn with_inequalities(mut self, v: Arc<dyn ConstraintMap>) -> Self {
        self.inequalities = v;
        self
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim()
    }

    pub fn num_equalities(&self) -> usize {
        self.equalities.len()
    }

    pub fn num_inequalities(&self) -> usize {
        self.inequalities.len()
    }

    pub fn check_point(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dimension("point", self.dim(), x.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub beta: f64,
    pub tau: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl PenaltyParams {
    /// `beta` with zero penalties on the transformed constraints.
    pub fn new(beta: f64, n_eq: usize, n_ineq: usize) -> Self {
        PenaltyParams {
            beta,
            tau: vec![0.0; n_eq],
            gamma: vec![0.0; n_ineq],
        }
    }

    pub fn for_problem(problem: &ProblemSpec, beta: f64) -> Self {
        Self::new(beta, problem.num_equalities(), problem.num_inequalities())
    }

    pub fn validate(&self, n_eq: usize, n_ineq: usize) -> Result<()> {
        if self.tau.len() != n_eq {
            return Err(Error::dimension("penalty tau", n_eq, self.tau.len()));
        }
        if self.gamma.len() != n_ineq {
            return Err(Error::dimension("penalty gamma", n_ineq, self.gamma.len()));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.beta) {
            return Err(Error::parameter(
                "beta",
                format!("must be >= 0, got {}", self.beta),
            ));
        }
        if let Some(t) = self.tau.iter().find(|t| !ok(**t)) {
            return Err(Error::parameter("tau", format!("must be >= 0, got {t}")));
        }
        if let Some(g) = self.gamma.iter().find(|g| !ok(**g)) {
            return Err(Error::parameter("gamma", format!("must be >= 0, got {g}")));
        }
        Ok(())
    }

    /// `beta + sum lambda_i tau_i + sum mu_j gamma_j`.
    pub fn effective_beta(&self, mult: &MultiplierSet) -> f64 {
        let eq: f64 = self
            .tau
            .iter()
            .zip(mult.lambda.iter())
            .map(|(t, l)| t * l)
            .sum();
        let ineq: f64 = self
            .gamma
            .iter()
            .zip(mult.mu.iter())
            .map(|(g, m)| g * m)
            .sum();
        self.beta + eq + ineq
    }
}

/// Multipliers `(rho, lambda, mu)` for manifold, extra equality and
/// inequality constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSet {
    pub rho: Vector,
    pub lambda: Vector,
    pub mu: Vector,
}

impl MultiplierSet {
    pub fn zeros(p: usize, n_eq: usize, n_ineq: usize) -> Self {
        MultiplierSet {
            rho: Vector::zeros(p),
            lambda: Vector::zeros(n_eq),
            mu: Vector::zeros(n_ineq),
        }
    }

    pub fn for_problem(problem: &ProblemSpec) -> Self {
        Self::zeros(
            problem.manifold.num_constraints(),
            problem.num_equalities(),
            problem.num_inequalities(),
        )
    }

    pub fn l1_lambda(&self) -> f64 {
        self.lambda.iter().map(|v| v.abs()).sum()
    }

    pub fn l1_mu(&self) -> f64 {
        self.mu.iter().map(|v| v.abs()).sum()
    }

    pub fn norm(&self) -> f64 {
        (self.rho.norm_squared() + self.lambda.norm_squared() + self.mu.norm_squared()).sqrt()
    }
}

/// One outer iteration of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub feasibility: f64,
    pub stationarity: f64,
    pub beta: f64,
    pub sigma: f64,
    pub multiplier_norm: f64,
    pub x_norm: f64,
    pub inner_iterations: usize,
    pub multipliers_clipped: bool,
    pub beta_required: Option<f64>,
    pub time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
}

impl SolveTrace {
    pub fn push(&mut self, record: TraceRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.iter < record.iter));
        debug_assert!(self.records.last().is_none_or(|r| r.time <= record.time));
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes the trace as CSV rows `{iter, f, feas, stat, beta, sigma, time}`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "f", "feas", "stat", "beta", "sigma", "time"])?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                format!("{:e}", r.objective),
                format!("{:e}", r.feasibility),
                format!("{:e}", r.stationarity),
                format!("{:e}", r.beta),
                format!("{:e}", r.sigma),
                format!("{:.6}", r.time),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of checking the dissolving-map axioms on a set of probes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub manifold: String,
    pub probes: usize,
    /// `max ||A(x) - x||_inf` over the probes.
    pub fixed_point_error: f64,
    /// `max ||J_A(x) Jc(x)||_F` over the probes.
    pub normal_annihilation: f64,
    /// Finite-difference consistency of `J_A` (informational).
    pub derivative_error: f64,
    pub tol: f64,
    pub passed: bool,
}

fn ensure_finite(v: &Vector, evaluator: &str, probe: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::EvaluatorFault {
            evaluator: evaluator.to_string(),
            probe,
        })
    }
}

/// Checks `A(x) = x` and `J_A(x) Jc(x) = 0` at each probe. Infeasible probes
/// are first projected with `A^inf`.
pub fn validate_manifold(
    handle: &dyn Manifold,
    probes: &[Vector],
    tol: f64,
) -> Result<ValidationReport> {
    let n = handle.dim();
    let p = handle.num_constraints();
    let mut fixed = 0.0_f64;
    let mut annihilation = 0.0_f64;
    let mut deriv = 0.0_f64;
    for (k, probe) in probes.iter().enumerate() {
        if probe.len() != n {
            return Err(Error::dimension("probe", n, probe.len()));
        }
        ensure_finite(probe, "probe", k)?;
        let c = handle.constraint(probe);
        ensure_finite(&c, "c", k)?;
        let x = if c.norm() > AXIOM_TOL {
            crate::dissolve::a_infinity(handle, probe, 1e-12, 50)?.point
        } else {
            probe.clone()
        };
        let ax = handle.dissolve(&x)?;
        ensure_finite(&ax, "A", k)?;
        fixed = fixed.max((&ax - &x).amax());

        let mut sq = 0.0;
        for l in 0..p {
            let mut e = Vector::zeros(p);
            e[l] = 1.0;
            let col = handle.jc(&x, &e);
            ensure_finite(&col, "Jc", k)?;
            let prod = handle.ja(&x, &col)?;
            ensure_finite(&prod, "J_A", k)?;
            sq += prod.norm_squared();
        }
        annihilation = annihilation.max(sq.sqrt());

        let h = crate::fd::default_step(&x);
        let err = crate::fd::map_pullback_error(
            |y| handle.dissolve(y),
            |y, d| handle.ja(y, d),
            &x,
            h,
            k as u64,
        )?;
        deriv = deriv.max(err);
    }
    Ok(ValidationReport {
        manifold: handle.name().to_string(),
        probes: probes.len(),
        fixed_point_error: fixed,
        normal_annihilation: annihilation,
        derivative_error: deriv,
        tol,
        passed: fixed <= tol && annihilation <= tol,
    })
}
