//! Sampled estimates of the local constants around a feasible point.
//!
//! Suprema are estimated as maxima over samples in a ball and Lipschitz
//! constants as maxima of difference quotients over nearby pairs, so every
//! estimate is a lower bound on the true value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ProblemSpec, Vector};
use crate::util::{assemble_columns, operator_norm, seeded_rng, singular_range, unit_gaussian};
use rand::Rng;

const POWER_ITERS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimates {
    /// `sigma_min(Jc(x))`
    pub sigma1x: f64,
    pub m_c: f64,
    pub m_a: f64,
    pub m_u: f64,
    pub m_v: f64,
    pub l_f: f64,
    pub l_c: f64,
    pub l_a: f64,
    pub l_ac: f64,
    /// Largest tested radius keeping `sigma_min(Jc) >= sigma1x / 2`.
    pub rho_x: f64,
    pub epsilon_x: f64,
    pub omega_bar_radius: f64,
    pub sample_count: usize,
    pub radius: f64,
}

impl ConstantEstimates {
    /// Fills in `epsilon_x` and the inner radius from the other fields.
    pub fn derive_radii(&mut self) {
        let sigma = self.sigma1x;
        let safe_div = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::INFINITY };
        self.epsilon_x = (self.rho_x / 2.0)
            .min(safe_div(sigma, 32.0 * self.l_c * (self.m_a + 1.0)))
            .min(safe_div(sigma * sigma, 8.0 * self.l_ac * self.m_c));
        self.omega_bar_radius =
            sigma * self.epsilon_x / (4.0 * self.m_c * (self.m_a + 1.0) + sigma);
    }

    /// `M_{x, lambda, mu} = L_f + |lambda|_1 M_u + |mu|_1 M_v`.
    pub fn multiplier_scale(&self, l1_lambda: f64, l1_mu: f64) -> f64 {
        self.l_f + l1_lambda * self.m_u + l1_mu * self.m_v
    }
}

fn sigma_min_jc(problem: &ProblemSpec, y: &Vector) -> f64 {
    let p = problem.manifold.num_constraints();
    let jc = assemble_columns(problem.dim(), p, |w| problem.manifold.jc(y, w));
    singular_range(&jc).0
}

fn ball_point(rng: &mut impl Rng, x: &Vector, radius: f64) -> Vector {
    let u = unit_gaussian(rng, x.len());
    let r: f64 = rng.random::<f64>().powf(0.25);
    x + (radius * r) * u
}

pub fn estimate_constants(
    problem: &ProblemSpec,
    x: &Vector,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<ConstantEstimates> {
    problem.check_point(x)?;
    if !(radius > 0.0 && radius <= 1.0) {
        return Err(Error::parameter(
            "radius",
            format!("must lie in (0, 1], got {radius}"),
        ));
    }
    let m = problem.manifold.as_ref();
    let u = problem.equalities.as_ref();
    let v = problem.inequalities.as_ref();
    let p = m.num_constraints();
    let n = problem.dim();

    let sigma1x = sigma_min_jc(problem, x);
    if !(sigma1x > 1e-10) {
        return Err(Error::RankDeficient { sigma_min: sigma1x });
    }

    let mut est = ConstantEstimates {
        sigma1x,
        m_c: 0.0,
        m_a: 0.0,
        m_u: 0.0,
        m_v: 0.0,
        l_f: 0.0,
        l_c: 0.0,
        l_a: 0.0,
        l_ac: 0.0,
        rho_x: 0.0,
        epsilon_x: 0.0,
        omega_bar_radius: 0.0,
        sample_count: samples,
        radius,
    };

    let mut rng = seeded_rng(seed);
    let pair_step = 1e-3 * radius;
    let nan = || Vector::from_element(n, f64::NAN);
    // J_A(y) Jc(A(y)) w and its adjoint Jc(A(y))^T J_A(y)^T d
    let jajc =
        |y: &Vector, ay: &Vector, w: &Vector| m.ja(y, &m.jc(ay, w)).unwrap_or_else(|_| nan());
    let jajc_t =
        |y: &Vector, ay: &Vector, d: &Vector| m.jc_t(ay, &m.ja_t(y, d).unwrap_or_else(|_| nan()));

    for k in 0..=samples {
        let y = if k == 0 {
            x.clone()
        } else {
            ball_point(&mut rng, x, radius)
        };
        let dir = unit_gaussian(&mut rng, n);
        let s = seed.wrapping_add(k as u64);

        est.m_c = est.m_c.max(operator_norm(
            p,
            |w| m.jc(&y, w),
            |d| m.jc_t(&y, d),
            POWER_ITERS,
            s,
        ));
        est.m_a = est.m_a.max(operator_norm(
            n,
            |d| m.ja(&y, d).unwrap_or_else(|_| nan()),
            |d| m.ja_t(&y, d).unwrap_or_else(|_| nan()),
            POWER_ITERS,
            s,
        ));
        est.m_u = est.m_u.max(operator_norm(
            u.len(),
            |w| u.jac(&y, w),
            |d| u.jac_t(&y, d),
            POWER_ITERS,
            s,
        ));
        est.m_v = est.m_v.max(operator_norm(
            v.len(),
            |w| v.jac(&y, w),
            |d| v.jac_t(&y, d),
            POWER_ITERS,
            s,
        ));
        let ay = m.dissolve(&y)?;
        est.l_f = est.l_f.max(problem.objective.gradient(&ay).norm());

        if k == 0 {
            continue;
        }
        let z = &y + pair_step * &dir;
        let az = m.dissolve(&z)?;
        let dist = (&y - &z).norm();
        let l_c = operator_norm(
            p,
            |w| m.jc(&y, w) - m.jc(&z, w),
            |d| m.jc_t(&y, d) - m.jc_t(&z, d),
            POWER_ITERS,
            s,
        );
        let l_a = operator_norm(
            n,
            |d| m.ja(&y, d).unwrap_or_else(|_| nan()) - m.ja(&z, d).unwrap_or_else(|_| nan()),
            |d| m.ja_t(&y, d).unwrap_or_else(|_| nan()) - m.ja_t(&z, d).unwrap_or_else(|_| nan()),
            POWER_ITERS,
            s,
        );
        let l_ac = operator_norm(
            p,
            |w| jajc(&y, &ay, w) - jajc(&z, &az, w),
            |d| jajc_t(&y, &ay, d) - jajc_t(&z, &az, d),
            POWER_ITERS,
            s,
        );
        est.l_c = est.l_c.max(l_c / dist);
        est.l_a = est.l_a.max(l_a / dist);
        est.l_ac = est.l_ac.max(l_ac / dist);
    }

    est.rho_x = estimate_rho(problem, x, sigma1x, seed);
    est.derive_radii();
    Ok(est)
}

/// Largest radius on the grid `1, 1/2, 1/4, ...` at which sampled points keep
/// `sigma_min(Jc) >= sigma1x / 2`.
fn estimate_rho(problem: &ProblemSpec, x: &Vector, sigma1x: f64, seed: u64) -> f64 {
    const PROBES: usize = 8;
    let mut rng = seeded_rng(seed ^ 0x5a5a);
    let mut r = 1.0;
    for _ in 0..30 {
        let ok = (0..PROBES).all(|_| {
            let y = ball_point(&mut rng, x, r);
            sigma_min_jc(problem, &y) >= 0.5 * sigma1x
        });
        if ok {
            return r;
        }
        r *= 0.5;
    }
    r
}
