//! Penalty-parameter conditions under which the CDP is an exact reformulation.
//!
//! Thresholds are computed from sampled constants, which underestimate the
//! true suprema, so each threshold carries a safety multiplier.

use serde::Serialize;

use super::constants::ConstantEstimates;
use crate::model::{MultiplierSet, PenaltyParams};

pub const SAFETY_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// `value - threshold`; negative means the inequality fails.
    pub slack: f64,
    pub holds: bool,
}

impl InequalityCheck {
    fn new(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        let slack = value - threshold;
        InequalityCheck {
            name: name.into(),
            value,
            threshold,
            slack,
            holds: slack >= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    /// `beta` against the objective-only bound.
    pub beta_check: InequalityCheck,
    /// One entry per inequality constraint.
    pub gamma_checks: Vec<InequalityCheck>,
    /// Effective penalty against the stationarity transfer bound.
    pub transfer_check: Option<InequalityCheck>,
    /// Effective penalty against the Lagrangian decrease bound.
    pub decrease_check: Option<InequalityCheck>,
    pub multiplier_scale: Option<f64>,
    pub num_equalities: usize,
}

impl ConditionReport {
    /// The inequality-only condition on `beta` and every `gamma_j`.
    pub fn inequality_condition_met(&self) -> bool {
        self.beta_check.holds && self.gamma_checks.iter().all(|c| c.holds)
    }

    pub fn transfer_condition_met(&self) -> Option<bool> {
        self.transfer_check.as_ref().map(|c| c.holds)
    }

    /// Hypotheses of the Lagrangian decrease guarantee. The `h`-decrease
    /// inequality additionally needs the inequality-only condition when no
    /// equalities are present.
    pub fn decrease_condition_met(&self) -> bool {
        let mult_ok = self.decrease_check.as_ref().is_none_or(|c| c.holds);
        let ineq_ok = self.num_equalities > 0 || self.inequality_condition_met();
        mult_ok && ineq_ok
    }

    /// Flat key/value view for CSV and JSON emission.
    pub fn to_record(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let mut push = |c: &InequalityCheck| {
            out.push((format!("{}.threshold", c.name), c.threshold));
            out.push((format!("{}.slack", c.name), c.slack));
        };
        push(&self.beta_check);
        self.gamma_checks.iter().for_each(&mut push);
        if let Some(c) = &self.transfer_check {
            push(c);
        }
        if let Some(c) = &self.decrease_check {
            push(c);
        }
        out
    }
}

/// Threshold on `beta` from the objective alone.
pub fn beta_threshold(e: &ConstantEstimates) -> f64 {
    let s = e.sigma1x;
    SAFETY_FACTOR * 64.0 * e.l_f * (e.m_a + 1.0) * (e.l_ac + s * e.l_a) / s.powi(3)
}

/// Threshold on each `gamma_j`.
pub fn gamma_threshold(e: &ConstantEstimates) -> f64 {
    SAFETY_FACTOR * 32.0 * e.l_a * e.m_v * (e.m_a + 1.0) / e.sigma1x.powi(2)
}

/// Unscaled bound `32 L_A (M_A + 1) M / sigma^2` on the effective penalty.
pub fn transfer_bound(e: &ConstantEstimates, multiplier_scale: f64) -> f64 {
    32.0 * e.l_a * (e.m_a + 1.0) * multiplier_scale / e.sigma1x.powi(2)
}

/// Unscaled bound `8 M (M_A + 1) L_Ac / sigma^3` on the effective penalty.
pub fn decrease_bound(e: &ConstantEstimates, multiplier_scale: f64) -> f64 {
    8.0 * multiplier_scale * (e.m_a + 1.0) * e.l_ac / e.sigma1x.powi(3)
}

/// Smallest `beta` for which the effective penalty meets the transfer bound,
/// without the safety multiplier.
pub fn beta_required(e: &ConstantEstimates, params: &PenaltyParams, mult: &MultiplierSet) -> f64 {
    let scale = e.multiplier_scale(mult.l1_lambda(), mult.l1_mu());
    let extra = params.effective_beta(mult) - params.beta;
    transfer_bound(e, scale) - extra
}

pub fn check_condition(
    estimates: &ConstantEstimates,
    params: &PenaltyParams,
    mult: Option<&MultiplierSet>,
) -> ConditionReport {
    let gamma_t = gamma_threshold(estimates);
    let beta_check = InequalityCheck::new("beta", params.beta, beta_threshold(estimates));
    let gamma_checks = params
        .gamma
        .iter()
        .enumerate()
        .map(|(j, &g)| InequalityCheck::new(format!("gamma[{j}]"), g, gamma_t))
        .collect();
    let (transfer_check, decrease_check, multiplier_scale) = match mult {
        Some(m) => {
            let scale = estimates.multiplier_scale(m.l1_lambda(), m.l1_mu());
            let eff = params.effective_beta(m);
            (
                Some(InequalityCheck::new(
                    "transfer",
                    eff,
                    SAFETY_FACTOR * transfer_bound(estimates, scale),
                )),
                Some(InequalityCheck::new(
                    "decrease",
                    eff,
                    SAFETY_FACTOR * decrease_bound(estimates, scale),
                )),
                Some(scale),
            )
        }
        None => (None, None, None),
    };
    ConditionReport {
        beta_check,
        gamma_checks,
        transfer_check,
        decrease_check,
        multiplier_scale,
        num_equalities: params.tau.len(),
    }
}

/// Lower bound `(sigma / (8 (M_A + 1))) B |c(y)|` on the CDP Lagrangian
/// gradient norm near the manifold, valid once `B` meets the transfer bound.
pub fn stationarity_lower_bound(e: &ConstantEstimates, effective_beta: f64, c_norm: f64) -> f64 {
    e.sigma1x / (8.0 * (e.m_a + 1.0)) * effective_beta * c_norm
}
