//! Constraint dissolving reformulations of manifold-constrained nonlinear
//! programs, an augmented Lagrangian solver for them, and numerical checks of
//! the equivalence theory.

// `!(x > 0.0)` is used on purpose so that NaN fails parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod diagnostics;
pub mod dissolve;
pub mod error;
pub mod experiments;
pub mod fd;
pub mod manifolds;
pub mod model;
pub mod solver;
pub mod util;

pub use diagnostics::{ConstantEstimates, KktReport};
pub use dissolve::{build_cdp, CdpInstance};
pub use error::{Error, Result};
pub use manifolds::{make_handle, Family};
pub use model::{
    ConstraintMap, Manifold, ManifoldHandle, MultiplierSet, Objective, PenaltyParams, Point,
    ProblemSpec, Shape, SolveTrace, TraceRecord, Vector,
};
pub use solver::{alm_solve_cdp, alm_solve_nlp_direct, AlmOptions, SolveResult, SolveStatus};
