//! Instances with a planted KKT point, used as oracles.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::manifolds::{make_handle, Family};
use crate::model::{FnConstraints, FnObjective, MultiplierSet, ProblemSpec, Vector};
use crate::util::{gaussian, seeded_rng, unit_gaussian};

#[derive(Debug, Clone)]
pub struct SyntheticDims {
    pub n: usize,
    pub n_eq: usize,
    pub n_ineq: usize,
    /// The first `n_active` inequalities are active with positive multipliers.
    pub n_active: usize,
    /// Overrides the randomly drawn multipliers of the active inequalities.
    pub active_mu: Option<Vec<f64>>,
}

impl SyntheticDims {
    pub fn new(n: usize, n_eq: usize, n_ineq: usize, n_active: usize) -> Self {
        SyntheticDims {
            n,
            n_eq,
            n_ineq,
            n_active,
            active_mu: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticKkt {
    pub problem: ProblemSpec,
    pub x_star: Vector,
    pub multipliers: MultiplierSet,
}

/// Sphere-constrained quadratic program whose KKT conditions hold exactly at
/// a random `x*` with multipliers `(rho*, lambda*, mu*)`:
///
/// * `c(x) = |x|^2 - 1`, `u(x) = A^T (x - x*)`, `v(x) = B^T (x - x*) - s`
///   with `s_j = 0` on the active set and `s_j > 0` elsewhere;
/// * `f(x) = 1/2 (x - x*)^T D (x - x*) + g^T (x - x*)` with
///   `g = -(2 rho* x* + A lambda* + B mu*)`.
///
/// `rho* > 0` and `D` positive diagonal make `x*` a strict local minimizer.
pub fn make_synthetic_kkt(dims: &SyntheticDims, seed: u64) -> SyntheticKkt {
    let SyntheticDims {
        n,
        n_eq,
        n_ineq,
        n_active,
        ..
    } = *dims;
    assert!(
        n_active <= n_ineq,
        "more active inequalities than inequalities"
    );
    assert!(
        1 + n_eq + n_ineq <= n,
        "constraint gradients would be dependent"
    );
    let mut rng = seeded_rng(seed);
    let x_star = unit_gaussian(&mut rng, n);
    let a = DMatrix::from_column_slice(n, n_eq, gaussian(&mut rng, n * n_eq).as_slice());
    let b = DMatrix::from_column_slice(n, n_ineq, gaussian(&mut rng, n * n_ineq).as_slice());
    let rho: f64 = rng.random_range(0.2..1.0);
    let lambda = gaussian(&mut rng, n_eq);
    let mut mu = Vector::zeros(n_ineq);
    let mut slack = Vector::zeros(n_ineq);
    for j in 0..n_ineq {
        if j < n_active {
            mu[j] = match &dims.active_mu {
                Some(v) => v[j],
                None => rng.random_range(0.5..2.0),
            };
        } else {
            slack[j] = rng.random_range(0.5..1.0);
        }
    }
    let diag = Vector::from_iterator(n, (0..n).map(|_| rng.random_range(1.0..2.0)));
    let g = -(2.0 * rho * &x_star + &a * &lambda + &b * &mu);

    let (xs1, xs2) = (x_star.clone(), x_star.clone());
    let (d1, d2) = (diag.clone(), diag);
    let (g1, g2) = (g.clone(), g);
    let objective = FnObjective::new(
        move |x| {
            let r = x - &xs1;
            0.5 * r.dot(&d1.component_mul(&r)) + g1.dot(&r)
        },
        move |x| d2.component_mul(&(x - &xs2)) + &g2,
    );
    let u_offset = a.tr_mul(&x_star);
    let v_offset = b.tr_mul(&x_star) + &slack;
    let manifold = make_handle(Family::Sphere { n }).expect("n > 0");
    let problem = ProblemSpec::new(
        format!("synthetic_kkt(seed={seed})"),
        manifold,
        Arc::new(objective),
    )
    .with_equalities(Arc::new(FnConstraints::affine(a, u_offset)))
    .with_inequalities(Arc::new(FnConstraints::affine(b, v_offset)))
    .with_description("sphere-constrained quadratic with a planted KKT point");
    SyntheticKkt {
        problem,
        x_star,
        multipliers: MultiplierSet {
            rho: Vector::from_element(1, rho),
            lambda,
            mu,
        },
    }
}
