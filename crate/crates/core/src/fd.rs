//! Central finite-difference checks for derivative actions.

use crate::error::{Error, Result};
use crate::model::{ConstraintMap, ProblemSpec, Vector};
use crate::util::{seeded_rng, unit_gaussian};

/// Number of random directions probed by each check.
pub const FD_DIRECTIONS: usize = 6;

/// `1e-6 * (1 + ||x||)`.
pub fn default_step(x: &Vector) -> f64 {
    1e-6 * (1.0 + x.norm())
}

fn check_step(x: &Vector, step: f64) -> Result<()> {
    let scale = 1.0 + x.norm();
    if !(step.is_finite() && step > 0.0) || step < 4.0 * f64::EPSILON * scale {
        return Err(Error::DegenerateStep { step, scale });
    }
    Ok(())
}

/// Maximum over a fixed set of random unit directions of
/// `|(f(x+hd) - f(x-hd))/2h - <g(x), d>| / (1 + |<g(x), d>|)`.
pub fn finite_diff_check<F, G>(value: F, gradient: G, x: &Vector, step: f64) -> Result<f64>
where
    F: Fn(&Vector) -> f64,
    G: Fn(&Vector) -> Vector,
{
    finite_diff_check_seeded(value, gradient, x, step, 0)
}

pub fn finite_diff_check_seeded<F, G>(
    value: F,
    gradient: G,
    x: &Vector,
    step: f64,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&Vector) -> f64,
    G: Fn(&Vector) -> Vector,
{
    check_step(x, step)?;
    let g = gradient(x);
    if g.len() != x.len() {
        return Err(Error::dimension("gradient", x.len(), g.len()));
    }
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0_f64;
    for _ in 0..FD_DIRECTIONS {
        let d = unit_gaussian(&mut rng, x.len());
        let fp = value(&(x + step * &d));
        let fm = value(&(x - step * &d));
        let fd = (fp - fm) / (2.0 * step);
        let an = g.dot(&d);
        let err = (fd - an).abs() / (1.0 + an.abs());
        if !err.is_finite() {
            return Err(Error::EvaluatorFault {
                evaluator: "finite difference".into(),
                probe: 0,
            });
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Checks a pullback action `d -> J(x) d` of a vector map against central
/// differences of the scalar `<w, map(x)>` for a random weight `w`.
pub fn map_pullback_error<M, P>(
    map: M,
    pullback: P,
    x: &Vector,
    step: f64,
    seed: u64,
) -> Result<f64>
where
    M: Fn(&Vector) -> Result<Vector>,
    P: Fn(&Vector, &Vector) -> Result<Vector>,
{
    let out = map(x)?;
    if out.is_empty() {
        return Ok(0.0);
    }
    let mut rng = seeded_rng(seed ^ 0x9e37_79b9);
    let w = unit_gaussian(&mut rng, out.len());
    let grad = pullback(x, &w)?;
    let nan = f64::NAN;
    finite_diff_check_seeded(
        |y| map(y).map(|v| v.dot(&w)).unwrap_or(nan),
        |_| grad.clone(),
        x,
        step,
        seed,
    )
}

/// Checks both `jac` (against finite differences) and `jac_t` (as the adjoint
/// of `jac`) for a constraint map.
pub fn constraint_map_error(
    g: &dyn ConstraintMap,
    x: &Vector,
    step: f64,
    seed: u64,
) -> Result<f64> {
    if g.is_empty() {
        return Ok(0.0);
    }
    let fd = map_pullback_error(|y| Ok(g.eval(y)), |y, w| Ok(g.jac(y, w)), x, step, seed)?;
    Ok(fd.max(adjoint_error(
        |d| g.jac_t(x, d),
        |w| g.jac(x, w),
        x.len(),
        g.len(),
        seed,
    )))
}

/// `|<fwd(d), w> - <d, adj(w)>| / (1 + |<fwd(d), w>|)` for random `d`, `w`.
pub fn adjoint_error<F, A>(fwd: F, adj: A, n: usize, k: usize, seed: u64) -> f64
where
    F: Fn(&Vector) -> Vector,
    A: Fn(&Vector) -> Vector,
{
    let mut rng = seeded_rng(seed.wrapping_add(17));
    let d = unit_gaussian(&mut rng, n);
    let w = unit_gaussian(&mut rng, k);
    let lhs = fwd(&d).dot(&w);
    let rhs = d.dot(&adj(&w));
    (lhs - rhs).abs() / (1.0 + lhs.abs())
}

/// Worst-case finite-difference errors for every derivative a problem exposes.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub objective: f64,
    pub manifold_constraint: f64,
    pub dissolving_map: f64,
    pub equalities: f64,
    pub inequalities: f64,
}

impl DerivativeReport {
    pub fn max(&self) -> f64 {
        self.objective
            .max(self.manifold_constraint)
            .max(self.dissolving_map)
            .max(self.equalities)
            .max(self.inequalities)
    }
}

pub fn check_problem_derivatives(
    problem: &ProblemSpec,
    x: &Vector,
    seed: u64,
) -> Result<DerivativeReport> {
    problem.check_point(x)?;
    let h = default_step(x);
    let m = &problem.manifold;
    let objective = finite_diff_check_seeded(
        |y| problem.objective.value(y),
        |y| problem.objective.gradient(y),
        x,
        h,
        seed,
    )?;
    let manifold_constraint = if m.num_constraints() == 0 {
        0.0
    } else {
        map_pullback_error(|y| Ok(m.constraint(y)), |y, w| Ok(m.jc(y, w)), x, h, seed)?.max(
            adjoint_error(
                |d| m.jc_t(x, d),
                |w| m.jc(x, w),
                x.len(),
                m.num_constraints(),
                seed,
            ),
        )
    };
    let dissolving_map = map_pullback_error(|y| m.dissolve(y), |y, d| m.ja(y, d), x, h, seed)?;
    let dissolving_adjoint = adjoint_error(
        |d| {
            m.ja_t(x, d)
                .unwrap_or_else(|_| Vector::from_element(x.len(), f64::NAN))
        },
        |w| {
            m.ja(x, w)
                .unwrap_or_else(|_| Vector::from_element(x.len(), f64::NAN))
        },
        x.len(),
        x.len(),
        seed,
    );
    Ok(DerivativeReport {
        objective,
        manifold_constraint,
        dissolving_map: dissolving_map.max(dissolving_adjoint),
        equalities: constraint_map_error(problem.equalities.as_ref(), x, h, seed)?,
        inequalities: constraint_map_error(problem.inequalities.as_ref(), x, h, seed)?,
    })
}
