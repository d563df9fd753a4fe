//! Symplectic Stiefel manifold `{X in R^{m x q} : X^T Q_m X = Q_q}` with the
//! standard skew form `Q_k = [[0, I], [-I, 0]]`.
//!
//! `X^T Q_m X - Q_q` is skew-symmetric, so only its strictly upper triangle
//! enters `c`, giving `p = q (q - 1) / 2` independent constraints.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::manifolds::generic::SmoothConstraint;
use crate::model::{Shape, Vector};

pub fn matrix_from_row_major(x: &Vector, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, x.as_slice())
}

pub fn row_major(m: &DMatrix<f64>) -> Vector {
    Vector::from_iterator(
        m.nrows() * m.ncols(),
        (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])),
    )
}

/// `Q_k = [[0, I_{k/2}], [-I_{k/2}, 0]]`.
pub fn standard_form(k: usize) -> DMatrix<f64> {
    let h = k / 2;
    let mut q = DMatrix::zeros(k, k);
    for i in 0..h {
        q[(i, h + i)] = 1.0;
        q[(h + i, i)] = -1.0;
    }
    q
}

/// `Q_m X` without forming `Q_m`.
fn apply_form(x: &DMatrix<f64>) -> DMatrix<f64> {
    let m = x.nrows();
    let h = m / 2;
    let mut out = DMatrix::zeros(m, x.ncols());
    for i in 0..h {
        out.set_row(i, &x.row(h + i));
        out.set_row(h + i, &(-x.row(i)));
    }
    out
}

#[derive(Debug, Clone)]
pub struct SymplecticConstraint {
    m: usize,
    q: usize,
    q_form: DMatrix<f64>,
    pairs: Vec<(usize, usize)>,
}

impl SymplecticConstraint {
    pub fn new(m: usize, q: usize) -> Result<Self> {
        if m == 0 || q == 0 || !m.is_multiple_of(2) || !q.is_multiple_of(2) {
            return Err(Error::parameter(
                "symplectic_stiefel",
                format!("m and q must be even positive integers, got m={m}, q={q}"),
            ));
        }
        if q > m {
            return Err(Error::parameter(
                "symplectic_stiefel",
                format!("q must not exceed m, got m={m}, q={q}"),
            ));
        }
        let pairs = (0..q)
            .flat_map(|a| ((a + 1)..q).map(move |b| (a, b)))
            .collect();
        Ok(SymplecticConstraint {
            m,
            q,
            q_form: standard_form(q),
            pairs,
        })
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.q
    }

    fn mat(&self, x: &Vector) -> DMatrix<f64> {
        matrix_from_row_major(x, self.m, self.q)
    }

    fn upper(&self, s: &DMatrix<f64>) -> Vector {
        Vector::from_iterator(self.pairs.len(), self.pairs.iter().map(|&(a, b)| s[(a, b)]))
    }

    fn skew(&self, w: &Vector) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.q, self.q);
        for (k, &(a, b)) in self.pairs.iter().enumerate() {
            s[(a, b)] = w[k];
            s[(b, a)] = -w[k];
        }
        s
    }

    /// `X^T Q_m X - Q_q`, the full residual.
    pub fn residual(&self, x: &Vector) -> DMatrix<f64> {
        let xm = self.mat(x);
        xm.tr_mul(&apply_form(&xm)) - &self.q_form
    }
}

impl SmoothConstraint for SymplecticConstraint {
    fn name(&self) -> &str {
        "symplectic_stiefel"
    }

    fn shape(&self) -> Shape {
        Shape::matrix(self.m, self.q)
    }

    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn eval(&self, x: &Vector) -> Vector {
        self.upper(&self.residual(x))
    }

    fn jc(&self, x: &Vector, w: &Vector) -> Vector {
        // Q X W^T
        let qx = apply_form(&self.mat(x));
        row_major(&(qx * self.skew(w).transpose()))
    }

    fn jc_t(&self, x: &Vector, d: &Vector) -> Vector {
        let xm = self.mat(x);
        let dm = self.mat(d);
        let s = dm.tr_mul(&apply_form(&xm)) + xm.tr_mul(&apply_form(&dm));
        self.upper(&s)
    }

    fn hess_weighted(&self, _x: &Vector, w: &Vector, v: &Vector) -> Vector {
        let qv = apply_form(&self.mat(v));
        row_major(&(qv * self.skew(w).transpose()))
    }

    fn hess_bilinear(&self, _x: &Vector, z: &Vector, e: &Vector) -> Vector {
        let zm = self.mat(z);
        let em = self.mat(e);
        let s = zm.tr_mul(&apply_form(&em)) + em.tr_mul(&apply_form(&zm));
        self.upper(&s)
    }

    /// Columns `e_1..e_{q/2}` and `e_{m/2+1}..e_{m/2+q/2}`.
    fn canonical_point(&self) -> Vector {
        let (hm, hq) = (self.m / 2, self.q / 2);
        let mut e = DMatrix::zeros(self.m, self.q);
        for j in 0..hq {
            e[(j, j)] = 1.0;
            e[(hm + j, hq + j)] = 1.0;
        }
        row_major(&e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd::{adjoint_error, default_step, finite_diff_check_seeded, map_pullback_error};
    use crate::util::{gaussian, seeded_rng, unit_gaussian};

    #[test]
    fn canonical_point_is_feasible() {
        for (m, q) in [(2, 2), (8, 4), (20, 6)] {
            let c = SymplecticConstraint::new(m, q).unwrap();
            let e = c.canonical_point();
            assert_eq!(c.eval(&e).amax(), 0.0);
            assert_eq!(c.residual(&e).norm(), 0.0);
            assert_eq!(c.len(), q * (q - 1) / 2);
        }
    }

    #[test]
    fn odd_dimensions_are_rejected() {
        assert!(SymplecticConstraint::new(5, 2).is_err());
        assert!(SymplecticConstraint::new(6, 3).is_err());
        assert!(SymplecticConstraint::new(2, 4).is_err());
    }

    #[test]
    fn residual_is_skew() {
        let c = SymplecticConstraint::new(6, 4).unwrap();
        let x = gaussian(&mut seeded_rng(1), 24);
        let r = c.residual(&x);
        assert!((&r + r.transpose()).amax() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let c = SymplecticConstraint::new(8, 4).unwrap();
        let mut rng = seeded_rng(5);
        for k in 0..5 {
            let x = gaussian(&mut rng, 32);
            let h = default_step(&x);
            let err =
                map_pullback_error(|y| Ok(c.eval(y)), |y, w| Ok(c.jc(y, w)), &x, h, k).unwrap();
            assert!(err < 1e-7, "jc err = {err}");
            let adj = adjoint_error(|d| c.jc_t(&x, d), |w| c.jc(&x, w), 32, c.len(), k);
            assert!(adj < 1e-12);
            // Hessian actions: derivative of w^T Jc(x)^T z along e
            let w = unit_gaussian(&mut rng, c.len());
            let z = unit_gaussian(&mut rng, 32);
            let err = finite_diff_check_seeded(
                |y| c.jc(y, &w).dot(&z),
                |y| c.hess_weighted(y, &w, &z),
                &x,
                h,
                k,
            )
            .unwrap();
            assert!(err < 1e-7, "hess err = {err}");
            let e = unit_gaussian(&mut rng, 32);
            let b = c.hess_bilinear(&x, &z, &e);
            assert!((b.dot(&w) - c.hess_weighted(&x, &w, &z).dot(&e)).abs() < 1e-12);
        }
    }
}
