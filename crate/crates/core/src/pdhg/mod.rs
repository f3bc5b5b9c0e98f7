//! Per-agent primal-dual iteration on the decomposed market problem.
//!
//! Every agent keeps `Phi_i = [p, q, P, Q, v, e_j...]`, duals `lambda_a` for its
//! global rows and `lambda_b >= 0` for its local rows. The primal step is a
//! plain gradient step on the augmented Lagrangian; equality rows are priced
//! by `lambda_a` and a quadratic penalty, inequality rows by projected ascent.

mod agent;
mod analysis;
pub mod centralized;
mod kkt;
pub mod qp;
mod residual;

pub use agent::{
    cost, cost_gradient, dual_update_global_incremental, dual_update_global_nonincremental,
    dual_update_local, grad_primal, lagrangian, primal_update, AgentState, BlindedResidual,
    StepParams,
};
pub use analysis::{feasible_range, linear_rate_bound, Condition, FeasibleRange, RangeInputs};
pub use kkt::{kkt_residual, KktReport};
pub use residual::{dual_residual, primal_residual, ResidualReport};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdhgError {
    #[error("agent {agent}: expected {expected} coupled terms, got {got}")]
    MissingCoupling { agent: usize, expected: usize, got: usize },
    #[error("blinded residual from round {got} used in round {expected}")]
    StaleProduct { expected: u64, got: u64 },
    #[error("analysis precondition violated: {0}")]
    Precondition(String),
    #[error("rate bound {0} is not below one")]
    RateBound(f64),
    #[error("centralized solver failed: {0}")]
    Solver(String),
}
