//! Least squares with a mix of free and nonnegative variables, by a
//! Lawson-Hanson active-set iteration.

use nalgebra::DMatrix;

use crate::model::Vector;

#[derive(Debug, Clone)]
pub struct MixedNnls {
    pub solution: Vector,
    pub residual_norm: f64,
    /// Some passive subproblem had dependent columns and was solved in the
    /// minimum-norm sense.
    pub rank_deficient: bool,
    pub iterations: usize,
}

/// Minimum-norm least squares restricted to `cols`.
fn subset_solve(a: &DMatrix<f64>, b: &Vector, cols: &[usize]) -> (Vector, bool) {
    let mut out = Vector::zeros(a.ncols());
    if cols.is_empty() {
        return (out, false);
    }
    let sub = a.select_columns(cols);
    let svd = sub.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = smax * 1e-12 * (sub.nrows().max(sub.ncols()) as f64);
    let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
    let sol = svd.solve(b, eps).expect("U and V were computed");
    for (k, &j) in cols.iter().enumerate() {
        out[j] = sol[k];
    }
    (out, rank < cols.len())
}

/// Solves `min |A z - b|` over `z` with `z_j >= 0` for `j >= n_free`.
/// Entering indices are chosen by the largest dual value, ties going to the
/// smallest index.
pub fn solve_mixed_nnls(a: &DMatrix<f64>, b: &Vector, n_free: usize) -> MixedNnls {
    let k = a.ncols();
    let scale = (a.norm() * b.norm()).max(1.0);
    let dual_tol = 1e-13 * scale;
    let mut passive = vec![false; k];
    for p in passive.iter_mut().take(n_free) {
        *p = true;
    }
    let members = |passive: &[bool]| -> Vec<usize> { (0..k).filter(|&j| passive[j]).collect() };

    let (mut x, mut rank_deficient) = subset_solve(a, b, &members(&passive));
    let mut blocked = vec![false; k];
    let mut iterations = 0;
    let max_iter = 3 * k + 10;

    while iterations < max_iter {
        iterations += 1;
        let r = b - a * &x;
        let w = a.tr_mul(&r);
        let mut enter = None;
        let mut best = dual_tol;
        for j in n_free..k {
            if !passive[j] && !blocked[j] && w[j] > best {
                best = w[j];
                enter = Some(j);
            }
        }
        let Some(j) = enter else { break };
        passive[j] = true;

        let mut first = true;
        loop {
            let (s, deficient) = subset_solve(a, b, &members(&passive));
            rank_deficient |= deficient;
            if first && s[j] <= 0.0 {
                // no progress along j from the current point
                passive[j] = false;
                blocked[j] = true;
                break;
            }
            first = false;
            let infeasible: Vec<usize> =
                (n_free..k).filter(|&i| passive[i] && s[i] <= 0.0).collect();
            if infeasible.is_empty() {
                x = s;
                blocked.iter_mut().for_each(|b| *b = false);
                break;
            }
            let alpha = infeasible
                .iter()
                .map(|&i| x[i] / (x[i] - s[i]))
                .fold(f64::INFINITY, f64::min);
            x += alpha * (&s - &x);
            for i in n_free..k {
                if passive[i] && x[i] <= 1e-15 * scale {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            blocked.iter_mut().for_each(|b| *b = false);
        }
    }

    for v in x.iter_mut().skip(n_free) {
        *v = v.max(0.0);
    }
    let residual_norm = (a * &x - b).norm();
    MixedNnls {
        solution: x,
        residual_norm,
        rank_deficient,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recovers_interior_solution() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let z = Vector::from_vec(vec![0.5, 2.0]);
        let b = &a * &z;
        let s = solve_mixed_nnls(&a, &b, 0);
        assert!((s.solution - z).amax() < 1e-12);
        assert!(s.residual_norm < 1e-12);
    }

    #[test]
    fn clamps_negative_component() {
        // unconstrained optimum (-1, 1) for the second column set
        let a = DMatrix::identity(2, 2);
        let b = Vector::from_vec(vec![-1.0, 1.0]);
        let s = solve_mixed_nnls(&a, &b, 0);
        assert_eq!(s.solution, Vector::from_vec(vec![0.0, 1.0]));
        assert!((s.residual_norm - 1.0).abs() < 1e-15);
        // a free first variable is not clamped
        let s = solve_mixed_nnls(&a, &b, 1);
        assert!((s.solution - b).amax() < 1e-15);
    }

    #[test]
    fn duplicate_columns_are_flagged() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
        let b = Vector::from_vec(vec![1.0, 2.0, 1.0]);
        let s = solve_mixed_nnls(&a, &b, 2);
        assert!(s.rank_deficient);
        assert!((s.residual_norm - 1.0).abs() < 1e-12);
    }

    proptest! {
        // KKT conditions of the constrained least-squares problem.
        #[test]
        fn optimality_conditions_hold(seed in 0u64..500, n_free in 0usize..3) {
            use crate::util::{gaussian, seeded_rng};
            let mut rng = seeded_rng(seed);
            let (rows, cols) = (8, 5);
            let a = DMatrix::from_column_slice(rows, cols, gaussian(&mut rng, rows * cols).as_slice());
            let b = gaussian(&mut rng, rows);
            let s = solve_mixed_nnls(&a, &b, n_free);
            let grad = a.tr_mul(&(&a * &s.solution - &b));
            for j in 0..cols {
                if j < n_free || s.solution[j] > 1e-10 {
                    prop_assert!(grad[j].abs() < 1e-8, "j={} grad={}", j, grad[j]);
                } else {
                    prop_assert!(grad[j] > -1e-8);
                    prop_assert!(s.solution[j] >= 0.0);
                }
            }
        }
    }
}
