//! Augmented Lagrangian solver with an L-BFGS inner loop.

pub mod alm;
pub mod lbfgs;

pub use alm::{
    alm_solve_cdp, alm_solve_nlp_direct, estimate_multipliers, AlmOptions, SolveResult, SolveStatus,
};
pub use lbfgs::{lbfgs_minimize, LbfgsOptions, LbfgsResult, LbfgsStatus};
