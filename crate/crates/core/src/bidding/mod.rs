//! Bid policies and the dual fits that parameterise them.

mod active_set;
mod fit;
mod formulas;
mod lambda;
mod online;
mod robust;
mod search;

use serde::Serialize;
use thiserror::Error;

pub use active_set::{set_map, solve_active_set, ActiveSetRule, ActiveSolve, Reduction, MAX_SWEEPS};
pub use fit::{
    dual_objective, fit_duals, fit_duals_joint, fit_duals_nonrobust, fit_duals_robust_ctr, fit_duals_robust_cvr,
    DualEval, DualFit, FitOptions, HistoryView, Robustness,
};
pub use formulas::{bid_nonrobust, bid_risk, joint_a_term, SINGULAR_TOL};
pub use lambda::{fit_lambdas, lambda_objective, LambdaFit, LAMBDA_CAP, LAMBDA_MARGIN};
pub use online::{online_bid, OnlineBid, OnlineContext};
pub use robust::{active_set_ctr, bids_robust, bids_robust_ctr, bids_robust_cvr, bids_robust_joint, RobustBids};
pub use search::{minimize_quadrant, SearchOptions, SearchResult};

#[derive(Debug, Error, PartialEq)]
pub enum BiddingError {
    #[error("p + q must be positive for the bid formula")]
    ZeroDenominator,
    #[error("4·λa·λb − 1 = {0} is too close to zero")]
    SingularDenominator(f64),
    #[error("history is empty")]
    EmptyHistory,
    #[error("input vectors have different lengths")]
    LengthMismatch,
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
}

/// Bid for one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BidDecision {
    pub t: usize,
    pub bid: f64,
    /// Robust correction, never positive; zero for the baselines.
    pub delta: f64,
    pub active: bool,
}

/// Rounds receiving the robust correction, in increasing order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ActiveSet {
    pub indices: Vec<usize>,
}

impl ActiveSet {
    pub fn from_mask(mask: &[bool]) -> Self {
        Self { indices: mask.iter().enumerate().filter(|(_, &a)| a).map(|(t, _)| t).collect() }
    }

    pub fn contains(&self, t: usize) -> bool {
        self.indices.binary_search(&t).is_ok()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}
