//! Oblique manifold `{X in R^{m x q} : diag(X X^T) = 1}` and its row-wise
//! dissolving map `row_i -> 2 x_i / (|x_i|^2 + 1)`. The sphere is the `m = 1`
//! case.

use crate::error::Result;
use crate::model::{Manifold, Shape, Vector};

/// Row-wise dissolving map on a row-major `m x q` matrix.
pub fn oblique_a(x: &Vector, m: usize, q: usize) -> Vector {
    debug_assert_eq!(x.len(), m * q);
    let mut out = x.clone();
    for row in out.as_mut_slice().chunks_mut(q) {
        let s: f64 = row.iter().map(|v| v * v).sum();
        let scale = 2.0 / (s + 1.0);
        row.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

/// Transposed-Jacobian action of [`oblique_a`]; the Jacobian is symmetric so
/// this is also the forward derivative.
pub fn oblique_ja(x: &Vector, d: &Vector, m: usize, q: usize) -> Vector {
    debug_assert_eq!(x.len(), m * q);
    let mut out = Vector::zeros(m * q);
    let rows = x.as_slice().chunks(q).zip(d.as_slice().chunks(q));
    for (i, (xi, di)) in rows.enumerate() {
        let s: f64 = xi.iter().map(|v| v * v).sum();
        let inner: f64 = xi.iter().zip(di).map(|(a, b)| a * b).sum();
        let t = s + 1.0;
        let a = 2.0 / t;
        let b = 4.0 * inner / (t * t);
        for j in 0..q {
            out[i * q + j] = a * di[j] - b * xi[j];
        }
    }
    out
}

pub fn sphere_a(x: &Vector) -> Vector {
    oblique_a(x, 1, x.len())
}

#[derive(Debug, Clone)]
pub struct Oblique {
    m: usize,
    q: usize,
    name: String,
}

impl Oblique {
    pub fn new(m: usize, q: usize) -> Self {
        Oblique {
            m,
            q,
            name: format!("oblique({m}x{q})"),
        }
    }

    /// The unit sphere in `R^n`.
    pub fn sphere(n: usize) -> Self {
        Oblique {
            m: 1,
            q: n,
            name: format!("sphere({n})"),
        }
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.q
    }
}

impl Manifold for Oblique {
    fn name(&self) -> &str {
        &self.name
    }

    fn shape(&self) -> Shape {
        Shape::matrix(self.m, self.q)
    }

    fn num_constraints(&self) -> usize {
        self.m
    }

    fn constraint(&self, x: &Vector) -> Vector {
        Vector::from_iterator(
            self.m,
            x.as_slice()
                .chunks(self.q)
                .map(|r| r.iter().map(|v| v * v).sum::<f64>() - 1.0),
        )
    }

    fn jc_t(&self, x: &Vector, d: &Vector) -> Vector {
        Vector::from_iterator(
            self.m,
            x.as_slice()
                .chunks(self.q)
                .zip(d.as_slice().chunks(self.q))
                .map(|(a, b)| 2.0 * a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>()),
        )
    }

    fn jc(&self, x: &Vector, w: &Vector) -> Vector {
        let mut out = x.clone();
        for (i, row) in out.as_mut_slice().chunks_mut(self.q).enumerate() {
            let s = 2.0 * w[i];
            row.iter_mut().for_each(|v| *v *= s);
        }
        out
    }

    fn dissolve(&self, x: &Vector) -> Result<Vector> {
        Ok(oblique_a(x, self.m, self.q))
    }

    fn ja(&self, x: &Vector, d: &Vector) -> Result<Vector> {
        Ok(oblique_ja(x, d, self.m, self.q))
    }

    fn ja_t(&self, x: &Vector, d: &Vector) -> Result<Vector> {
        Ok(oblique_ja(x, d, self.m, self.q))
    }

    fn canonical_point(&self) -> Vector {
        let mut x = Vector::zeros(self.m * self.q);
        for i in 0..self.m {
            x[i * self.q + i % self.q] = 1.0;
        }
        x
    }
}
