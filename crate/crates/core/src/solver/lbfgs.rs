//! Limited-memory BFGS with a strong Wolfe line search.

use std::collections::VecDeque;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsStatus {
    Converged,
    MaxIter,
    LineSearchFailure,
    MaxTime,
}

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub deadline: Option<Instant>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            tol: 1e-6,
            max_iter: 500,
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            deadline: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vector,
    pub value: f64,
    pub gradient: Vector,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
}

impl LbfgsResult {
    pub fn grad_norm(&self) -> f64 {
        self.gradient.norm()
    }
}

const MAX_LINE_SEARCH: usize = 40;

/// Objective evaluated at trial points. Failed evaluations count as `+inf`
/// so that the line search backs off.
struct Counted<F> {
    fg: F,
    evaluations: usize,
}

impl<F: FnMut(&Vector) -> Result<(f64, Vector)>> Counted<F> {
    fn eval(&mut self, x: &Vector) -> (f64, Vector) {
        self.evaluations += 1;
        match (self.fg)(x) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => (f, g),
            _ => (f64::INFINITY, Vector::from_element(x.len(), f64::NAN)),
        }
    }
}

/// Armijo decrease, or the approximate Wolfe test once the decrease is
/// below the roundoff level of `f`.
fn sufficient(f0: f64, d0: f64, cur: &Trial, c1: f64) -> bool {
    if cur.f <= f0 + c1 * cur.t * d0 {
        return true;
    }
    let noise = 1e-11 * (1.0 + f0.abs());
    cur.f <= f0 + noise && cur.d <= (2.0 * c1 - 1.0) * d0
}

struct Trial {
    t: f64,
    f: f64,
    d: f64,
    g: Vector,
}

/// Minimizes a smooth function given as `x -> (f(x), grad f(x))`.
pub fn lbfgs_minimize<F>(fg: F, x0: &Vector, opts: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&Vector) -> Result<(f64, Vector)>,
{
    if !(opts.tol > 0.0) || opts.memory == 0 {
        return Err(Error::parameter(
            "lbfgs",
            "tolerance and memory must be positive",
        ));
    }
    let mut obj = Counted { fg, evaluations: 0 };
    obj.evaluations += 1;
    let (mut f, mut g) = (obj.fg)(x0)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::EvaluatorFault {
            evaluator: "objective".into(),
            probe: 0,
        });
    }
    let mut x = x0.clone();
    let mut pairs: VecDeque<(Vector, Vector, f64)> = VecDeque::with_capacity(opts.memory);
    let mut status = LbfgsStatus::MaxIter;
    let mut iterations = 0;
    let mut restarted = false;

    while iterations < opts.max_iter {
        if g.norm() <= opts.tol {
            status = LbfgsStatus::Converged;
            break;
        }
        if opts.deadline.is_some_and(|d| Instant::now() >= d) {
            status = LbfgsStatus::MaxTime;
            break;
        }
        let mut dir = two_loop(&g, &pairs);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir = -&g;
            slope = -g.norm_squared();
        }
        let t0 = if pairs.is_empty() {
            (1.0 / g.norm()).min(1.0)
        } else {
            1.0
        };
        match strong_wolfe(&mut obj, &x, f, slope, &dir, t0, opts) {
            Some(trial) => {
                let s = trial.t * &dir;
                let y = &trial.g - &g;
                let sy = s.dot(&y);
                x += &s;
                f = trial.f;
                g = trial.g;
                if sy > 1e-12 * s.norm() * y.norm() {
                    if pairs.len() == opts.memory {
                        pairs.pop_front();
                    }
                    pairs.push_back((s, y, 1.0 / sy));
                }
                restarted = false;
                iterations += 1;
            }
            None if !restarted && !pairs.is_empty() => {
                pairs.clear();
                restarted = true;
            }
            None => {
                status = LbfgsStatus::LineSearchFailure;
                break;
            }
        }
    }
    if status == LbfgsStatus::MaxIter && g.norm() <= opts.tol {
        status = LbfgsStatus::Converged;
    }
    Ok(LbfgsResult {
        x,
        value: f,
        gradient: g,
        iterations,
        evaluations: obj.evaluations,
        status,
    })
}

fn two_loop(g: &Vector, pairs: &VecDeque<(Vector, Vector, f64)>) -> Vector {
    let mut q = g.clone();
    let mut alpha = vec![0.0; pairs.len()];
    for (i, (s, y, rho)) in pairs.iter().enumerate().rev() {
        alpha[i] = rho * s.dot(&q);
        q.axpy(-alpha[i], y, 1.0);
    }
    if let Some((s, y, _)) = pairs.back() {
        q *= s.dot(y) / y.norm_squared();
    }
    for (i, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * y.dot(&q);
        q.axpy(alpha[i] - b, s, 1.0);
    }
    -q
}

fn strong_wolfe<F>(
    obj: &mut Counted<F>,
    x: &Vector,
    f0: f64,
    d0: f64,
    dir: &Vector,
    t_init: f64,
    opts: &LbfgsOptions,
) -> Option<Trial>
where
    F: FnMut(&Vector) -> Result<(f64, Vector)>,
{
    let probe = |obj: &mut Counted<F>, t: f64| {
        let (f, g) = obj.eval(&(x + t * dir));
        let d = if f.is_finite() { g.dot(dir) } else { f64::NAN };
        Trial { t, f, d, g }
    };
    let mut prev = Trial {
        t: 0.0,
        f: f0,
        d: d0,
        g: Vector::zeros(0),
    };
    let mut t = t_init;
    for i in 0..MAX_LINE_SEARCH {
        let cur = probe(obj, t);
        if !cur.f.is_finite() {
            // shrink into the region where the function is defined
            t = 0.5 * (prev.t + t);
            if t - prev.t <= f64::EPSILON * t.max(1.0) {
                return None;
            }
            continue;
        }
        if !sufficient(f0, d0, &cur, opts.c1) || (i > 0 && cur.f >= prev.f) {
            return zoom(obj, x, dir, f0, d0, prev, cur, opts);
        }
        if cur.d.abs() <= -opts.c2 * d0 {
            return Some(cur);
        }
        if cur.d >= 0.0 {
            return zoom(obj, x, dir, f0, d0, cur, prev, opts);
        }
        t = (2.0 * t).min(t + 1e6 * t_init);
        prev = cur;
    }
    (prev.t > 0.0).then_some(prev)
}

#[allow(clippy::too_many_arguments)]
fn zoom<F>(
    obj: &mut Counted<F>,
    x: &Vector,
    dir: &Vector,
    f0: f64,
    d0: f64,
    mut lo: Trial,
    mut hi: Trial,
    opts: &LbfgsOptions,
) -> Option<Trial>
where
    F: FnMut(&Vector) -> Result<(f64, Vector)>,
{
    for _ in 0..MAX_LINE_SEARCH {
        let t = interpolate(&lo, &hi);
        if (hi.t - lo.t).abs() <= 1e-16 * lo.t.abs().max(1.0) {
            break;
        }
        let (f, g) = obj.eval(&(x + t * dir));
        let cur = Trial {
            t,
            f,
            d: if f.is_finite() { g.dot(dir) } else { f64::NAN },
            g,
        };
        if !cur.f.is_finite() || !sufficient(f0, d0, &cur, opts.c1) || cur.f > lo.f {
            hi = cur;
            continue;
        }
        if cur.d.abs() <= -opts.c2 * d0 {
            return Some(cur);
        }
        if cur.d * (hi.t - lo.t) >= 0.0 {
            hi = std::mem::replace(&mut lo, cur);
        } else {
            lo = cur;
        }
    }
    // accept a point with sufficient decrease even if curvature is not met
    (lo.t > 0.0 && lo.f <= f0).then_some(lo)
}

/// Cubic interpolation between bracket ends, safeguarded to the middle of
/// the interval.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.t.min(hi.t), lo.t.max(hi.t));
    let mid = 0.5 * (a + b);
    if !hi.f.is_finite() || !hi.d.is_finite() || !lo.d.is_finite() {
        return mid;
    }
    let dt = hi.t - lo.t;
    let d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (lo.t - hi.t);
    let disc = d1 * d1 - lo.d * hi.d;
    if disc < 0.0 {
        return mid;
    }
    let d2 = disc.sqrt() * dt.signum();
    let t = hi.t - dt * (hi.d + d2 - d1) / (hi.d - lo.d + 2.0 * d2);
    let margin = 0.1 * (b - a);
    if t.is_finite() && t > a + margin && t < b - margin {
        t
    } else {
        mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(d: Vector) -> impl FnMut(&Vector) -> Result<(f64, Vector)> {
        move |x: &Vector| Ok((x.dot(&d.component_mul(x)), 2.0 * d.component_mul(x)))
    }

    #[test]
    fn convex_quadratic_reaches_zero() {
        let d = Vector::from_vec(vec![1.0, 2.0, 5.0, 10.0, 0.5]);
        let x0 = Vector::from_element(5, 1.0);
        let opts = LbfgsOptions {
            tol: 1e-10,
            ..Default::default()
        };
        let r = lbfgs_minimize(quad(d), &x0, &opts).unwrap();
        assert_eq!(r.status, LbfgsStatus::Converged);
        assert!(r.x.norm() <= 1e-8, "{}", r.x.norm());
        assert!(r.iterations <= 20);
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let rosen = |x: &Vector| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = Vector::from_vec(vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            Ok((f, g))
        };
        let opts = LbfgsOptions {
            tol: 1e-10,
            max_iter: 1000,
            ..Default::default()
        };
        let r = lbfgs_minimize(rosen, &Vector::from_vec(vec![-1.2, 1.0]), &opts).unwrap();
        assert_eq!(r.status, LbfgsStatus::Converged);
        assert!(
            (r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let x0 = Vector::zeros(3);
        let r = lbfgs_minimize(
            quad(Vector::from_element(3, 1.0)),
            &x0,
            &LbfgsOptions::default(),
        )
        .unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.evaluations, 1);
        assert_eq!(r.x, x0);
    }

    #[test]
    fn undefined_regions_are_avoided() {
        // -log(x) + x, minimum at 1, undefined for x <= 0
        let f = |x: &Vector| {
            if x[0] <= 0.0 {
                Err(Error::parameter("x", "outside domain"))
            } else {
                Ok((-x[0].ln() + x[0], Vector::from_element(1, 1.0 - 1.0 / x[0])))
            }
        };
        let opts = LbfgsOptions {
            tol: 1e-10,
            ..Default::default()
        };
        let r = lbfgs_minimize(f, &Vector::from_element(1, 0.05), &opts).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn linear_function_runs_out_of_iterations() {
        let opts = LbfgsOptions {
            max_iter: 5,
            ..Default::default()
        };
        let r = lbfgs_minimize(
            |x: &Vector| Ok((x[0], Vector::from_element(1, 1.0))),
            &Vector::zeros(1),
            &opts,
        )
        .unwrap();
        assert_ne!(r.status, LbfgsStatus::Converged);
        assert!(r.value < 0.0);
    }
}
