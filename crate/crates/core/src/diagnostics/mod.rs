//! KKT residuals, constraint qualifications, local constants and penalty
//! conditions.

pub mod condition;
pub mod constants;
pub mod kkt;
pub mod nnls;
pub mod synthetic;

pub use condition::{
    beta_required, beta_threshold, check_condition, decrease_bound, gamma_threshold,
    stationarity_lower_bound, transfer_bound, ConditionReport, InequalityCheck,
};
pub use constants::{estimate_constants, ConstantEstimates};
pub use kkt::{
    active_set, check_licq, constraint_gradients, feasibility, kkt_residual, KktReport, ACTIVE_TOL,
};
pub use nnls::{solve_mixed_nnls, MixedNnls};
pub use synthetic::{make_synthetic_kkt, SyntheticDims, SyntheticKkt};
