//! Small numerical helpers shared across modules.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::Vector;

pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, n: usize) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Gaussian direction normalized to unit length.
pub fn unit_gaussian(rng: &mut impl Rng, n: usize) -> Vector {
    let mut v = gaussian(rng, n);
    let norm = v.norm();
    if norm > 0.0 {
        v /= norm;
    }
    v
}

pub fn basis(n: usize, i: usize) -> Vector {
    let mut e = Vector::zeros(n);
    e[i] = 1.0;
    e
}

/// Assembles the `n x k` matrix whose columns are `action(e_j)`.
pub fn assemble_columns<F>(n: usize, k: usize, mut action: F) -> DMatrix<f64>
where
    F: FnMut(&Vector) -> Vector,
{
    let mut m = DMatrix::zeros(n, k);
    for j in 0..k {
        let col = action(&basis(k, j));
        m.set_column(j, &col);
    }
    m
}

/// Extreme singular values `(sigma_min, sigma_max)` of a dense matrix.
/// For a wide matrix `sigma_min` is taken over the `min(rows, cols)` values.
pub fn singular_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 || m.ncols() == 0 {
        return (0.0, 0.0);
    }
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    (min, max)
}

/// Spectral norm of an operator known only through its action and adjoint,
/// by power iteration on `M^T M`.
pub fn operator_norm<F, A>(cols: usize, fwd: F, adj: A, iters: usize, seed: u64) -> f64
where
    F: Fn(&Vector) -> Vector,
    A: Fn(&Vector) -> Vector,
{
    if cols == 0 {
        return 0.0;
    }
    let mut rng = seeded_rng(seed);
    let mut v = unit_gaussian(&mut rng, cols);
    let mut est = 0.0;
    for _ in 0..iters {
        let mv = fwd(&v);
        let w = adj(&mv);
        let nw = w.norm();
        let next = mv.norm();
        if nw == 0.0 || !nw.is_finite() {
            return next;
        }
        v = w / nw;
        if (next - est).abs() <= 1e-10 * next.max(1.0) {
            est = next;
            break;
        }
        est = next;
    }
    est.max(fwd(&v).norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operator_norm_matches_dense_svd() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, -3.0, 0.5]);
        let (_, smax) = singular_range(&m);
        let est = operator_norm(2, |v| &m * v, |w| m.tr_mul(w), 200, 3);
        assert!((est - smax).abs() < 1e-8, "{est} vs {smax}");
    }

    #[test]
    fn assemble_recovers_matrix() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let a = assemble_columns(2, 3, |e| &m * e);
        assert_eq!(a, m);
    }
}
