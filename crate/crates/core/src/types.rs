//! Domain vocabulary shared by every other module: rate vectors, campaigns,
//! auction rounds, dual variables, simulation state and sweep rows.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inclusive range for uncertainty budgets used in experiments.
pub const EPS_RANGE: (f64, f64) = (1e-6, 1e-2);

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("{field}[{index}] = {value} is not a probability in [0, 1]")]
    RateOutOfRange {
        field: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{field} = {value} must be finite and non-negative")]
    Negative { field: &'static str, value: f64 },
    #[error("{field} = {value} must be strictly positive")]
    NotPositive { field: &'static str, value: f64 },
    #[error("{field} = {value} lies outside the experiment range [{lo}, {hi}]")]
    EpsilonOutOfRange {
        field: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
}

pub(crate) fn check_probability(field: &'static str, index: usize, value: f64) -> Result<(), TypeError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(TypeError::RateOutOfRange { field, index, value })
    }
}

pub(crate) fn check_nonneg(field: &'static str, value: f64) -> Result<(), TypeError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(TypeError::Negative { field, value })
    }
}

/// A vector of probabilities over the simulation horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateVector(Vec<f64>);

impl RateVector {
    pub fn new(values: Vec<f64>) -> Result<Self, TypeError> {
        for (i, &v) in values.iter().enumerate() {
            check_probability("rate", i, v)?;
        }
        Ok(Self(values))
    }

    /// Builds a vector by clipping every entry into [0, 1].
    pub fn clipped(values: Vec<f64>) -> Self {
        Self(values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for RateVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Bidding policy of a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    NonRobust,
    Risk,
    RobustCtr,
    RobustCvr,
    RobustJoint,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::NonRobust,
        Policy::Risk,
        Policy::RobustCtr,
        Policy::RobustCvr,
        Policy::RobustJoint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::NonRobust => "non-robust",
            Policy::Risk => "risk",
            Policy::RobustCtr => "robust-ctr",
            Policy::RobustCvr => "robust-cvr",
            Policy::RobustJoint => "robust-joint",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| TypeError::UnknownPolicy(s.to_string()))
    }
}

/// One advertiser: budget, CPC cap, policy and uncertainty budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub id: usize,
    pub budget: f64,
    pub cpc_cap: f64,
    pub policy: Policy,
    pub eps_a: f64,
    pub eps_b: f64,
    pub risk_alpha: f64,
}

impl Campaign {
    /// Checks the campaign invariants. `allow_any_eps` lifts the experiment
    /// range restriction on the uncertainty budgets (they must still be >= 0).
    pub fn validate(&self, allow_any_eps: bool) -> Result<(), TypeError> {
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(TypeError::NotPositive { field: "budget", value: self.budget });
        }
        if !(self.cpc_cap > 0.0 && self.cpc_cap.is_finite()) {
            return Err(TypeError::NotPositive { field: "cpc_cap", value: self.cpc_cap });
        }
        check_nonneg("risk_alpha", self.risk_alpha)?;
        for (field, value) in [("eps_a", self.eps_a), ("eps_b", self.eps_b)] {
            check_nonneg(field, value)?;
            if !allow_any_eps && !(EPS_RANGE.0..=EPS_RANGE.1).contains(&value) {
                return Err(TypeError::EpsilonOutOfRange {
                    field,
                    value,
                    lo: EPS_RANGE.0,
                    hi: EPS_RANGE.1,
                });
            }
        }
        Ok(())
    }
}

/// Rates for one auction, one entry per advertiser, plus the exogenous
/// competitor bids. `winning_price` is filled once the auction is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionRound {
    pub t: usize,
    pub ctr_true: Vec<f64>,
    pub cvr_true: Vec<f64>,
    pub ctr_pred: Vec<f64>,
    pub cvr_pred: Vec<f64>,
    pub competitor_bids: Vec<f64>,
    pub winning_price: Option<f64>,
}

impl AuctionRound {
    pub fn n_advertisers(&self) -> usize {
        self.ctr_true.len()
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        let n = self.ctr_true.len();
        for (what, v) in [
            ("cvr_true", &self.cvr_true),
            ("ctr_pred", &self.ctr_pred),
            ("cvr_pred", &self.cvr_pred),
        ] {
            if v.len() != n {
                return Err(TypeError::LengthMismatch { what, got: v.len(), expected: n });
            }
        }
        for (field, v) in [
            ("ctr_true", &self.ctr_true),
            ("cvr_true", &self.cvr_true),
            ("ctr_pred", &self.ctr_pred),
            ("cvr_pred", &self.cvr_pred),
        ] {
            for (i, &x) in v.iter().enumerate() {
                check_probability(field, i, x)?;
            }
        }
        for &b in &self.competitor_bids {
            check_nonneg("competitor_bid", b)?;
        }
        if let Some(wp) = self.winning_price {
            check_nonneg("winning_price", wp)?;
        }
        Ok(())
    }

    /// Highest exogenous competitor bid, 0 when there is none.
    pub fn max_competitor_bid(&self) -> f64 {
        self.competitor_bids.iter().copied().fold(0.0, f64::max)
    }
}

/// Fitted dual variables. `p` prices the budget constraint, `q` the CPC
/// constraint; `lambda_a`/`lambda_b` are only meaningful for the joint policy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DualVars {
    pub p: f64,
    pub q: f64,
    pub lambda_a: f64,
    pub lambda_b: f64,
}

impl DualVars {
    pub fn new(p: f64, q: f64) -> Self {
        Self { p, q, lambda_a: 0.0, lambda_b: 0.0 }
    }

    pub fn with_lambdas(mut self, lambda_a: f64, lambda_b: f64) -> Self {
        self.lambda_a = lambda_a;
        self.lambda_b = lambda_b;
        self
    }

    pub fn denominator(&self) -> f64 {
        self.p + self.q
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        check_nonneg("p", self.p)?;
        check_nonneg("q", self.q)?;
        check_nonneg("lambda_a", self.lambda_a)?;
        check_nonneg("lambda_b", self.lambda_b)
    }
}

/// Completed auction with its outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: AuctionRound,
    /// Bid submitted by each campaign.
    pub bids: Vec<f64>,
    /// Winning campaign, `None` when an exogenous competitor won or nobody bid.
    pub winner: Option<usize>,
    /// Amount actually charged to the winner.
    pub charged: f64,
}

impl RoundRecord {
    pub fn winning_price(&self) -> f64 {
        self.round.winning_price.unwrap_or(0.0)
    }
}

/// Mutable accounting of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationState {
    pub initial_budget: Vec<f64>,
    pub remaining_budget: Vec<f64>,
    pub spend: Vec<f64>,
    pub expected_clicks: Vec<f64>,
    pub expected_conversions: Vec<f64>,
    /// `wins[i][t]` is the win indicator of campaign `i` in round `t`.
    pub wins: Vec<Vec<bool>>,
    pub history: Vec<RoundRecord>,
}

impl SimulationState {
    pub fn new(budgets: &[f64]) -> Self {
        let n = budgets.len();
        Self {
            initial_budget: budgets.to_vec(),
            remaining_budget: budgets.to_vec(),
            spend: vec![0.0; n],
            expected_clicks: vec![0.0; n],
            expected_conversions: vec![0.0; n],
            wins: vec![Vec::new(); n],
            history: Vec::new(),
        }
    }

    pub fn n_campaigns(&self) -> usize {
        self.initial_budget.len()
    }

    /// Largest violation of `spend + remaining = initial` over all campaigns.
    pub fn accounting_residual(&self) -> f64 {
        (0..self.n_campaigns())
            .map(|i| (self.spend[i] + self.remaining_budget[i] - self.initial_budget[i]).abs())
            .fold(0.0, f64::max)
    }
}

/// Counters for conditions encountered during a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFlags {
    pub dual_nonconverged: u32,
    pub active_set_nonconverged: u32,
    pub lambda_infeasible: u32,
    pub negative_bid_clamped: u32,
    pub a_term_negative: u32,
}

impl RunFlags {
    pub fn merge(&mut self, other: &RunFlags) {
        self.dual_nonconverged += other.dual_nonconverged;
        self.active_set_nonconverged += other.active_set_nonconverged;
        self.lambda_infeasible += other.lambda_infeasible;
        self.negative_bid_clamped += other.negative_bid_clamped;
        self.a_term_negative += other.a_term_negative;
    }

    /// True when a numerical routine failed to converge. Clamp counters are
    /// informational and do not count.
    pub fn has_convergence_issue(&self) -> bool {
        self.dual_nonconverged + self.active_set_nonconverged + self.lambda_infeasible > 0
    }

    pub fn is_empty(&self) -> bool {
        *self == RunFlags::default()
    }

    /// `name=count` pairs joined by `;`, empty when nothing was flagged.
    pub fn to_field(&self) -> String {
        [
            ("dual_nonconverged", self.dual_nonconverged),
            ("active_set_nonconverged", self.active_set_nonconverged),
            ("lambda_infeasible", self.lambda_infeasible),
            ("negative_bid_clamped", self.negative_bid_clamped),
            ("a_term_negative", self.a_term_negative),
        ]
        .iter()
        .filter(|(_, n)| *n > 0)
        .map(|(k, n)| format!("{k}={n}"))
        .collect::<Vec<_>>()
        .join(";")
    }
}

/// Metrics of one (policy, eps_a, eps_b, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub policy: Policy,
    pub eps_a: f64,
    pub eps_b: f64,
    pub seed: u64,
    pub tcv: f64,
    /// `None` when no click was bought.
    pub cpc_avg: Option<f64>,
    pub spend_total: f64,
    pub clicks_expected: f64,
    pub flags: RunFlags,
}
