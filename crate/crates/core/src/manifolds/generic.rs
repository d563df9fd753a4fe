//! Dissolving map for an arbitrary smooth constraint with full-rank Jacobian:
//!
//! `A(x) = x - Jc(x) (Jc(x)^T Jc(x) + reg I)^{-1} c(x)`.
//!
//! Differentiating `A` involves the second derivatives of `c`, so the
//! constraint supplies two Hessian actions besides its Jacobian actions.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::model::{Manifold, Shape, Vector};
use crate::util::assemble_columns;

/// Largest Gram condition estimate accepted before reporting near rank deficiency.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// A smooth constraint map `c: R^n -> R^p` with the derivative actions needed
/// by [`GenericDissolver`].
pub trait SmoothConstraint: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn shape(&self) -> Shape;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn eval(&self, x: &Vector) -> Vector;
    /// `Jc(x) w`.
    fn jc(&self, x: &Vector, w: &Vector) -> Vector;
    /// `Jc(x)^T d`.
    fn jc_t(&self, x: &Vector, d: &Vector) -> Vector;
    /// `sum_l w_l hess c_l(x) v`.
    fn hess_weighted(&self, x: &Vector, w: &Vector, v: &Vector) -> Vector;
    /// `(z^T hess c_l(x) e)_l`.
    fn hess_bilinear(&self, x: &Vector, z: &Vector, e: &Vector) -> Vector;
    fn canonical_point(&self) -> Vector;
}

/// `c(x) = |x|^2 - 1`.
#[derive(Debug, Clone)]
pub struct SphereConstraint {
    n: usize,
}

impl SphereConstraint {
    pub fn new(n: usize) -> Self {
        SphereConstraint { n }
    }
}

impl SmoothConstraint for SphereConstraint {
    fn name(&self) -> &str {
        "sphere"
    }
    fn shape(&self) -> Shape {
        Shape::vector(self.n)
    }
    fn len(&self) -> usize {
        1
    }
    fn eval(&self, x: &Vector) -> Vector {
        Vector::from_element(1, x.norm_squared() - 1.0)
    }
    fn jc(&self, x: &Vector, w: &Vector) -> Vector {
        x * (2.0 * w[0])
    }
    fn jc_t(&self, x: &Vector, d: &Vector) -> Vector {
        Vector::from_element(1, 2.0 * x.dot(d))
    }
    fn hess_weighted(&self, _x: &Vector, w: &Vector, v: &Vector) -> Vector {
        v * (2.0 * w[0])
    }
    fn hess_bilinear(&self, _x: &Vector, z: &Vector, e: &Vector) -> Vector {
        Vector::from_element(1, 2.0 * z.dot(e))
    }
    fn canonical_point(&self) -> Vector {
        crate::util::basis(self.n, 0)
    }
}

/// Quantities at `x` shared by `A(x)` and both derivative actions.
struct Linearization {
    jac: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `G^{-1} c(x)`
    w: Vector,
    /// `Jc(x) w`
    z: Vector,
}

#[derive(Debug, Clone)]
pub struct GenericDissolver<C> {
    constraint: C,
    reg: f64,
    name: String,
}

impl<C: SmoothConstraint> GenericDissolver<C> {
    pub fn new(constraint: C) -> Self {
        Self::with_reg(constraint, 0.0)
    }

    pub fn with_reg(constraint: C, reg: f64) -> Self {
        let name = format!("generic[{}]", constraint.name());
        GenericDissolver {
            constraint,
            reg: reg.max(0.0),
            name,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn constraint_fn(&self) -> &C {
        &self.constraint
    }

    fn linearize(&self, x: &Vector) -> Result<Linearization> {
        let n = x.len();
        let p = self.constraint.len();
        let jac = assemble_columns(n, p, |e| self.constraint.jc(x, e));
        let gram = jac.tr_mul(&jac);
        let chol = factor_gram(gram, self.reg)?;
        let c = self.constraint.eval(x);
        let w = chol.solve(&c);
        let z = &jac * &w;
        Ok(Linearization { jac, chol, w, z })
    }

    fn pullback(&self, x: &Vector, lin: &Linearization, d: &Vector) -> Vector {
        // d - H_w d - J y + H_y z + H_w J y,  y = G^{-1} J^T d
        let y = lin.chol.solve(&lin.jac.tr_mul(d));
        let jy = &lin.jac * &y;
        let c = &self.constraint;
        d - c.hess_weighted(x, &lin.w, d) - &jy
            + c.hess_weighted(x, &y, &lin.z)
            + c.hess_weighted(x, &lin.w, &jy)
    }

    fn forward(&self, x: &Vector, lin: &Linearization, e: &Vector) -> Vector {
        // e - H_w e - J G^{-1} (J^T e - B(z, e) - J^T H_w e)
        let c = &self.constraint;
        let hw_e = c.hess_weighted(x, &lin.w, e);
        let rhs = lin.jac.tr_mul(e) - c.hess_bilinear(x, &lin.z, e) - lin.jac.tr_mul(&hw_e);
        let corr = &lin.jac * lin.chol.solve(&rhs);
        e - hw_e - corr
    }
}

/// Cholesky of `G + reg I`, retrying once with a trace-scaled regularization.
fn factor_gram(gram: DMatrix<f64>, reg: f64) -> Result<Cholesky<f64, Dyn>> {
    let p = gram.nrows();
    let trace = gram.trace();
    if !(trace > 0.0 && trace.is_finite()) {
        return Err(Error::NearRankDeficient {
            condition: f64::INFINITY,
        });
    }
    let shifted = |r: f64| {
        let mut g = gram.clone();
        for i in 0..p {
            g[(i, i)] += r;
        }
        g
    };
    let chol = match Cholesky::new(shifted(reg)) {
        Some(c) => c,
        None => {
            let scale = trace / p.max(1) as f64;
            Cholesky::new(shifted(reg + 1e-12 * scale)).ok_or(Error::NearRankDeficient {
                condition: f64::INFINITY,
            })?
        }
    };
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| {
        (lo.min(v.abs()), hi.max(v.abs()))
    });
    let finite = diag.iter().all(|v| v.is_finite());
    let condition = if finite && lo > 0.0 {
        (hi / lo).powi(2)
    } else {
        f64::INFINITY
    };
    if condition > MAX_GRAM_CONDITION {
        return Err(Error::NearRankDeficient { condition });
    }
    Ok(chol)
}

/// `x - Jc (Jc^T Jc + reg I)^{-1} c(x)` for a single point.
pub fn generic_a<C: SmoothConstraint + Clone>(
    constraint: &C,
    x: &Vector,
    reg: f64,
) -> Result<Vector> {
    GenericDissolver::with_reg(constraint.clone(), reg).dissolve(x)
}

impl<C: SmoothConstraint> Manifold for GenericDissolver<C> {
    fn name(&self) -> &str {
        &self.name
    }

    fn shape(&self) -> Shape {
        self.constraint.shape()
    }

    fn num_constraints(&self) -> usize {
        self.constraint.len()
    }

    fn constraint(&self, x: &Vector) -> Vector {
        self.constraint.eval(x)
    }

    fn jc_t(&self, x: &Vector, d: &Vector) -> Vector {
        self.constraint.jc_t(x, d)
    }

    fn jc(&self, x: &Vector, w: &Vector) -> Vector {
        self.constraint.jc(x, w)
    }

    fn dissolve(&self, x: &Vector) -> Result<Vector> {
        let lin = self.linearize(x)?;
        Ok(x - lin.z)
    }

    fn ja(&self, x: &Vector, d: &Vector) -> Result<Vector> {
        let lin = self.linearize(x)?;
        Ok(self.pullback(x, &lin, d))
    }

    fn ja_t(&self, x: &Vector, d: &Vector) -> Result<Vector> {
        let lin = self.linearize(x)?;
        Ok(self.forward(x, &lin, d))
    }

    fn dissolve_pullback(
        &self,
        x: &Vector,
        outer: &mut dyn FnMut(&Vector) -> Vector,
    ) -> Result<(Vector, Vector)> {
        let lin = self.linearize(x)?;
        let ax = x - &lin.z;
        let g = outer(&ax);
        let pulled = self.pullback(x, &lin, &g);
        Ok((ax, pulled))
    }

    fn canonical_point(&self) -> Vector {
        self.constraint.canonical_point()
    }
}
