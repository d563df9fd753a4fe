//! The constraint dissolving transformation.
//!
//! Given `min f(x) s.t. c(x) = 0, u(x) = 0, v(x) <= 0` and a dissolving map
//! `A`, the transformed problem drops `c` and reads
//!
//! ```text
//! min  h(x)   = f(A(x)) + beta/2 |c(x)|^2
//! s.t. u~_i(x) = u_i(A(x)) + tau_i/2 |c(x)|^2  = 0
//!      v~_j(x) = v_j(A(x)) + gamma_j/2 |c(x)|^2 <= 0
//! ```
//!
//! with gradients `J_A(x) grad g(A(x)) + k Jc(x) c(x)` for each piece.

use serde::Serialize;

use crate::diagnostics::ConstantEstimates;
use crate::error::{Error, Result};
use crate::model::{Manifold, MultiplierSet, PenaltyParams, ProblemSpec, Vector};
use crate::util::{seeded_rng, unit_gaussian};

pub const A_INF_TOL: f64 = 1e-12;
pub const A_INF_MAX_ITER: usize = 50;
/// Growth of `|c|` between consecutive iterates that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

/// Values of every transformed function at one point, sharing a single
/// evaluation of `A(x)` and `c(x)`.
#[derive(Debug, Clone)]
pub struct CdpValues {
    pub a: Vector,
    pub c: Vector,
    pub c_norm_sq: f64,
    pub f_a: f64,
    pub u_a: Vector,
    pub v_a: Vector,
    pub h: f64,
    pub u_tilde: Vector,
    pub v_tilde: Vector,
}

#[derive(Debug, Clone)]
pub struct CdpInstance {
    pub problem: ProblemSpec,
    pub params: PenaltyParams,
}

pub fn build_cdp(problem: &ProblemSpec, params: PenaltyParams) -> Result<CdpInstance> {
    params.validate(problem.num_equalities(), problem.num_inequalities())?;
    Ok(CdpInstance {
        problem: problem.clone(),
        params,
    })
}

impl CdpInstance {
    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn num_equalities(&self) -> usize {
        self.problem.num_equalities()
    }

    pub fn num_inequalities(&self) -> usize {
        self.problem.num_inequalities()
    }

    pub fn manifold(&self) -> &dyn Manifold {
        self.problem.manifold.as_ref()
    }

    /// Same problem with different penalties.
    pub fn with_params(&self, params: PenaltyParams) -> Result<CdpInstance> {
        build_cdp(&self.problem, params)
    }

    fn values_at(&self, x: &Vector, a: Vector, c: Vector) -> CdpValues {
        let p = &self.problem;
        let c_norm_sq = c.norm_squared();
        let half = 0.5 * c_norm_sq;
        let f_a = p.objective.value(&a);
        let u_a = p.equalities.eval(&a);
        let v_a = p.inequalities.eval(&a);
        let h = f_a + self.params.beta * half;
        let u_tilde = Vector::from_iterator(
            u_a.len(),
            u_a.iter().zip(&self.params.tau).map(|(u, t)| u + t * half),
        );
        let v_tilde = Vector::from_iterator(
            v_a.len(),
            v_a.iter()
                .zip(&self.params.gamma)
                .map(|(v, g)| v + g * half),
        );
        debug_assert_eq!(a.len(), x.len());
        CdpValues {
            a,
            c,
            c_norm_sq,
            f_a,
            u_a,
            v_a,
            h,
            u_tilde,
            v_tilde,
        }
    }

    pub fn values(&self, x: &Vector) -> Result<CdpValues> {
        self.problem.check_point(x)?;
        let m = self.manifold();
        let c = m.constraint(x);
        let a = m.dissolve(x)?;
        Ok(self.values_at(x, a, c))
    }

    /// Evaluates all values and the gradient of
    /// `h + sum w_eq_i u~_i + sum w_ineq_j v~_j`, where the weights may depend
    /// on the values at `x`.
    pub fn evaluate_with<W>(&self, x: &Vector, weights: W) -> Result<(CdpValues, Vector)>
    where
        W: FnOnce(&CdpValues) -> (Vector, Vector),
    {
        self.problem.check_point(x)?;
        let m = self.manifold();
        let p = &self.problem;
        let c = m.constraint(x);
        let mut weights = Some(weights);
        let mut captured: Option<(CdpValues, f64)> = None;
        let (_, pulled) = m.dissolve_pullback(x, &mut |a: &Vector| {
            let vals = self.values_at(x, a.clone(), c.clone());
            let (w_eq, w_ineq) = (weights.take().expect("called once"))(&vals);
            let mut g = p.objective.gradient(a);
            if !w_eq.is_empty() {
                g += p.equalities.jac(a, &w_eq);
            }
            if !w_ineq.is_empty() {
                g += p.inequalities.jac(a, &w_ineq);
            }
            let coef = self.params.beta
                + w_eq
                    .iter()
                    .zip(&self.params.tau)
                    .map(|(w, t)| w * t)
                    .sum::<f64>()
                + w_ineq
                    .iter()
                    .zip(&self.params.gamma)
                    .map(|(w, t)| w * t)
                    .sum::<f64>();
            captured = Some((vals, coef));
            g
        })?;
        let (vals, coef) = captured.expect("outer closure invoked");
        let mut grad = pulled;
        if coef != 0.0 && !vals.c.is_empty() {
            grad += coef * m.jc(x, &vals.c);
        }
        Ok((vals, grad))
    }

    pub fn h(&self, x: &Vector) -> Result<f64> {
        Ok(self.values(x)?.h)
    }

    pub fn grad_h(&self, x: &Vector) -> Result<Vector> {
        let (ne, ni) = (self.num_equalities(), self.num_inequalities());
        Ok(self
            .evaluate_with(x, |_| (Vector::zeros(ne), Vector::zeros(ni)))?
            .1)
    }

    pub fn u_tilde(&self, x: &Vector) -> Result<Vector> {
        Ok(self.values(x)?.u_tilde)
    }

    pub fn v_tilde(&self, x: &Vector) -> Result<Vector> {
        Ok(self.values(x)?.v_tilde)
    }

    /// `sum_i w_i grad u~_i(x)`.
    pub fn grad_u_tilde(&self, x: &Vector, w: &Vector) -> Result<Vector> {
        self.constraint_combination(x, Some(w), None)
    }

    /// `sum_j w_j grad v~_j(x)`.
    pub fn grad_v_tilde(&self, x: &Vector, w: &Vector) -> Result<Vector> {
        self.constraint_combination(x, None, Some(w))
    }

    fn constraint_combination(
        &self,
        x: &Vector,
        w_eq: Option<&Vector>,
        w_ineq: Option<&Vector>,
    ) -> Result<Vector> {
        let m = self.manifold();
        let p = &self.problem;
        let mut coef = 0.0;
        let (_, mut g) = m.dissolve_pullback(x, &mut |a: &Vector| {
            let mut g = Vector::zeros(a.len());
            if let Some(w) = w_eq {
                g += p.equalities.jac(a, w);
                coef += w
                    .iter()
                    .zip(&self.params.tau)
                    .map(|(w, t)| w * t)
                    .sum::<f64>();
            }
            if let Some(w) = w_ineq {
                g += p.inequalities.jac(a, w);
                coef += w
                    .iter()
                    .zip(&self.params.gamma)
                    .map(|(w, t)| w * t)
                    .sum::<f64>();
            }
            g
        })?;
        if coef != 0.0 && m.num_constraints() > 0 {
            g += coef * m.jc(x, &m.constraint(x));
        }
        Ok(g)
    }
}

/// Lagrangian `h + lambda^T u~ + mu^T v~` and its gradient in `x`.
pub fn cdp_lagrangian(
    instance: &CdpInstance,
    x: &Vector,
    mult: &MultiplierSet,
) -> Result<(f64, Vector)> {
    let (ne, ni) = (instance.num_equalities(), instance.num_inequalities());
    if mult.lambda.len() != ne {
        return Err(Error::dimension("lambda", ne, mult.lambda.len()));
    }
    if mult.mu.len() != ni {
        return Err(Error::dimension("mu", ni, mult.mu.len()));
    }
    if mult.mu.iter().any(|m| *m < 0.0) {
        return Err(Error::parameter(
            "mu",
            "inequality multipliers must be nonnegative",
        ));
    }
    let (vals, grad) = instance.evaluate_with(x, |_| (mult.lambda.clone(), mult.mu.clone()))?;
    Ok((lagrangian_value(&vals, mult), grad))
}

fn lagrangian_value(vals: &CdpValues, mult: &MultiplierSet) -> f64 {
    vals.h + mult.lambda.dot(&vals.u_tilde) + mult.mu.dot(&vals.v_tilde)
}

/// `A^k(y)`; aborts when `|c|` grows by more than [`DIVERGENCE_FACTOR`].
pub fn apply_a_k(handle: &dyn Manifold, y: &Vector, k: usize) -> Result<Vector> {
    let mut z = y.clone();
    let mut last = handle.constraint(&z).norm();
    for i in 0..k {
        z = handle.dissolve(&z)?;
        let now = handle.constraint(&z).norm();
        if !now.is_finite() || (last > 0.0 && now > DIVERGENCE_FACTOR * last) {
            return Err(Error::OutOfNeighborhood {
                iterations: i + 1,
                last_norm: now,
            });
        }
        last = now;
    }
    Ok(z)
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub point: Vector,
    pub iterations: usize,
    pub residual: f64,
}

/// Iterates `A` until `|c| <= tol`.
pub fn a_infinity(
    handle: &dyn Manifold,
    y: &Vector,
    tol: f64,
    max_iter: usize,
) -> Result<Projection> {
    if !(tol > 0.0) {
        return Err(Error::parameter("tol", "must be positive"));
    }
    let mut z = y.clone();
    let mut norm = handle.constraint(&z).norm();
    let mut iterations = 0;
    while norm > tol {
        if iterations >= max_iter {
            return Err(Error::OutOfNeighborhood {
                iterations,
                last_norm: norm,
            });
        }
        z = handle.dissolve(&z).map_err(|_| Error::OutOfNeighborhood {
            iterations,
            last_norm: norm,
        })?;
        iterations += 1;
        let next = handle.constraint(&z).norm();
        if !next.is_finite() || next > DIVERGENCE_FACTOR * norm {
            return Err(Error::OutOfNeighborhood {
                iterations,
                last_norm: next,
            });
        }
        norm = next;
    }
    Ok(Projection {
        point: z,
        iterations,
        residual: norm,
    })
}

/// `A^inf` with the default tolerance and iteration cap.
pub fn project(handle: &dyn Manifold, y: &Vector) -> Result<Vector> {
    Ok(a_infinity(handle, y, A_INF_TOL, A_INF_MAX_ITER)?.point)
}

/// Offsets used by default for the feasibility-decrease fit.
pub const SLOPE_OFFSETS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

#[derive(Debug, Clone, Serialize)]
pub struct SlopePoint {
    pub offset: f64,
    pub c_norm: f64,
    pub c_after: f64,
    /// `|A(y) - y| / |c(y)|`
    pub step_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    /// Least-squares slope of `log |c(A(y))|` against `log |c(y)|`.
    pub slope: f64,
    pub points: Vec<SlopePoint>,
}

/// Fits the order of the feasibility decrease `|c(A(y))| ~ |c(y)|^k` along
/// `y = x + t w` for a feasible `x`.
pub fn feasibility_decrease_slope(
    handle: &dyn Manifold,
    x: &Vector,
    w: &Vector,
    offsets: &[f64],
) -> Result<SlopeFit> {
    let mut points = Vec::with_capacity(offsets.len());
    for &t in offsets {
        let y = x + t * w;
        let ay = handle.dissolve(&y)?;
        let c_norm = handle.constraint(&y).norm();
        points.push(SlopePoint {
            offset: t,
            c_norm,
            c_after: handle.constraint(&ay).norm(),
            step_ratio: (&ay - &y).norm() / c_norm,
        });
    }
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.c_norm > 0.0 && p.c_after > 0.0)
        .map(|p| (p.c_norm.ln(), p.c_after.ln()))
        .collect();
    if logs.len() < 2 {
        return Err(Error::parameter(
            "offsets",
            "need two offsets with nonzero residuals",
        ));
    }
    let k = logs.len() as f64;
    let (mx, my) = logs
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / k, b + y / k));
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    Ok(SlopeFit {
        slope: sxy / sxx,
        points,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecreaseSample {
    pub offset: f64,
    pub c_norm: f64,
    /// `L(y) - L(A(y))`
    pub one_step: f64,
    /// `L(y) - L(A^inf(y))`
    pub to_limit: f64,
    /// `h(y) - h(A^inf(y))`
    pub h_decrease: f64,
    /// `beta/4 |c(y)|^2`
    pub h_required: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProbeVerdict {
    Pass,
    Fail,
    /// Checks failed but the penalty condition was not met either.
    ConditionNotMet,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecreaseReport {
    pub samples: Vec<DecreaseSample>,
    pub skipped: Vec<String>,
    pub condition_met: Option<bool>,
    pub all_decrease: bool,
    pub verdict: ProbeVerdict,
}

pub const DECREASE_SLACK: f64 = 1e-10;

/// Samples `y = x + t w` around a feasible `x` and checks that one and
/// infinitely many applications of `A` do not increase the CDP Lagrangian.
/// When `estimates` are supplied, offsets beyond the estimated neighborhood
/// are skipped and the penalty condition is evaluated.
pub fn lagrangian_decrease_probe(
    instance: &CdpInstance,
    x_feasible: &Vector,
    mult: &MultiplierSet,
    offsets: &[f64],
    estimates: Option<&ConstantEstimates>,
    seed: u64,
) -> Result<DecreaseReport> {
    let m = instance.manifold();
    let n = instance.dim();
    let mut rng = seeded_rng(seed);
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    let condition_met = estimates.map(|e| {
        let report = crate::diagnostics::check_condition(e, &instance.params, Some(mult));
        report.decrease_condition_met()
    });
    let check_h = instance.num_equalities() == 0;
    let value = |y: &Vector| -> Result<(f64, f64)> {
        let vals = instance.values(y)?;
        Ok((lagrangian_value(&vals, mult), vals.h))
    };
    for &t in offsets {
        let w = unit_gaussian(&mut rng, n);
        if let Some(e) = estimates {
            if t > e.omega_bar_radius {
                skipped.push(format!(
                    "offset {t:e} exceeds neighborhood radius {:e}",
                    e.omega_bar_radius
                ));
                continue;
            }
        }
        let y = x_feasible + t * &w;
        let ay = match m.dissolve(&y) {
            Ok(a) => a,
            Err(err) => {
                skipped.push(format!("offset {t:e}: {err}"));
                continue;
            }
        };
        let ainf = match a_infinity(m, &y, A_INF_TOL, A_INF_MAX_ITER) {
            Ok(p) => p.point,
            Err(err) => {
                skipped.push(format!("offset {t:e}: {err}"));
                continue;
            }
        };
        let (ly, hy) = value(&y)?;
        let (la, _) = value(&ay)?;
        let (li, hi) = value(&ainf)?;
        let c_norm = m.constraint(&y).norm();
        let h_required = instance.params.beta / 4.0 * c_norm * c_norm;
        let one_step = ly - la;
        let to_limit = ly - li;
        let h_decrease = hy - hi;
        let mut ok = one_step >= -DECREASE_SLACK && to_limit >= -DECREASE_SLACK;
        if check_h {
            ok &= h_decrease >= h_required - DECREASE_SLACK;
        }
        samples.push(DecreaseSample {
            offset: t,
            c_norm,
            one_step,
            to_limit,
            h_decrease,
            h_required,
            ok,
        });
    }
    let all_decrease = samples.iter().all(|s| s.ok);
    let verdict = match (all_decrease, condition_met) {
        (true, _) => ProbeVerdict::Pass,
        (false, Some(false)) => ProbeVerdict::ConditionNotMet,
        (false, _) => ProbeVerdict::Fail,
    };
    Ok(DecreaseReport {
        samples,
        skipped,
        condition_met,
        all_decrease,
        verdict,
    })
}
