use nalgebra::DMatrix;
use serde::Serialize;

use super::nnls::solve_mixed_nnls;
use crate::error::{Error, Result};
use crate::model::{MultiplierSet, ProblemSpec, Vector};
use crate::util::{assemble_columns, singular_range};

/// `|v_j(x)|` below this counts as active.
pub const ACTIVE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub feasibility: f64,
    #[serde(skip)]
    pub multipliers: MultiplierSet,
    pub active_set: Vec<usize>,
    pub complementarity: f64,
    pub rank_deficient: bool,
}

impl KktReport {
    /// Flat key-value view for CSV/JSON emission.
    pub fn to_record(&self) -> Vec<(String, String)> {
        vec![
            ("stationarity".into(), format!("{:e}", self.stationarity)),
            ("feasibility".into(), format!("{:e}", self.feasibility)),
            (
                "complementarity".into(),
                format!("{:e}", self.complementarity),
            ),
            (
                "multiplier_norm".into(),
                format!("{:e}", self.multipliers.norm()),
            ),
            ("active".into(), format!("{:?}", self.active_set)),
            ("rank_deficient".into(), self.rank_deficient.to_string()),
        ]
    }
}

/// `|u(x)| + |c(x)| + |max(v(x), 0)|`.
pub fn feasibility(problem: &ProblemSpec, x: &Vector) -> f64 {
    let c = problem.manifold.constraint(x).norm();
    let u = problem.equalities.eval(x).norm();
    let v = problem.inequalities.eval(x).map(|v| v.max(0.0)).norm();
    u + c + v
}

pub fn active_set(problem: &ProblemSpec, x: &Vector) -> Vec<usize> {
    problem
        .inequalities
        .eval(x)
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() <= ACTIVE_TOL)
        .map(|(j, _)| j)
        .collect()
}

/// Dense `[Jc | Ju | Jv]` at `x`.
pub fn constraint_gradients(problem: &ProblemSpec, x: &Vector) -> DMatrix<f64> {
    let n = problem.dim();
    let p = problem.manifold.num_constraints();
    let ne = problem.num_equalities();
    let ni = problem.num_inequalities();
    let mut b = DMatrix::zeros(n, p + ne + ni);
    if p > 0 {
        let jc = assemble_columns(n, p, |w| problem.manifold.jc(x, w));
        b.columns_mut(0, p).copy_from(&jc);
    }
    if ne > 0 {
        let ju = assemble_columns(n, ne, |w| problem.equalities.jac(x, w));
        b.columns_mut(p, ne).copy_from(&ju);
    }
    if ni > 0 {
        let jv = assemble_columns(n, ni, |w| problem.inequalities.jac(x, w));
        b.columns_mut(p + ne, ni).copy_from(&jv);
    }
    b
}

/// Stationarity as the smallest Lagrangian-gradient norm over admissible
/// multipliers: `min_{rho, lambda, mu >= 0} |grad f + Jc rho + Ju lambda + Jv mu|`.
pub fn kkt_residual(problem: &ProblemSpec, x: &Vector) -> Result<KktReport> {
    problem.check_point(x)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::parameter("x", "non-finite point"));
    }
    let p = problem.manifold.num_constraints();
    let ne = problem.num_equalities();
    let ni = problem.num_inequalities();
    let g = problem.objective.gradient(x);
    let b = constraint_gradients(problem, x);
    let sol = solve_mixed_nnls(&b, &(-&g), p + ne);
    let z = &sol.solution;
    let multipliers = MultiplierSet {
        rho: z.rows(0, p).into_owned(),
        lambda: z.rows(p, ne).into_owned(),
        mu: z.rows(p + ne, ni).into_owned(),
    };
    let v = problem.inequalities.eval(x);
    Ok(KktReport {
        stationarity: sol.residual_norm,
        feasibility: feasibility(problem, x),
        complementarity: multipliers.mu.dot(&v).abs(),
        active_set: active_set(problem, x),
        multipliers,
        rank_deficient: sol.rank_deficient,
    })
}

/// Linear independence of `{grad c_l} U {grad u_i} U {grad v_j : j active}`,
/// judged by `sigma_min > tol * sigma_max`.
pub fn check_licq(problem: &ProblemSpec, x: &Vector, tol: f64) -> Result<bool> {
    problem.check_point(x)?;
    let cn = problem.manifold.constraint(x).norm();
    if cn > 1e-8 {
        return Err(Error::parameter(
            "x",
            format!("LICQ needs a feasible point, |c(x)| = {cn:e}"),
        ));
    }
    let p = problem.manifold.num_constraints();
    let ne = problem.num_equalities();
    let active = active_set(problem, x);
    let all = constraint_gradients(problem, x);
    let mut cols: Vec<usize> = (0..p + ne).collect();
    cols.extend(active.iter().map(|j| p + ne + j));
    if cols.len() > problem.dim() {
        return Ok(false);
    }
    if cols.is_empty() {
        return Ok(true);
    }
    let m = all.select_columns(&cols);
    let (smin, smax) = singular_range(&m);
    Ok(smin > tol * smax)
}
