//! Dual fitting on a history of rounds.
//!
//! Every policy reduces to a search over the budget dual `γ` (mapped to
//! `p`) and the CPC dual `u₀` (mapped to `q`) of
//!
//! `J(γ, u₀) = γ·B + Σ_t max(0, v_t + u₀·(C·ctr_t − wp_t) − γ·wp_t − 1[t ∈ S]·r_t(S))`
//!
//! where the inner variables have been eliminated in closed form, `S` is
//! the active set at `(γ, u₀)` and `r_t` the policy's reduction. The joint
//! policy alternates this search with the multiplier fit of
//! [`super::lambda`].

use serde::Serialize;

use super::active_set::{solve_active_set_into, ActiveSetRule, Reduction};
use super::formulas::joint_a_term;
use super::lambda::{fit_lambdas, LambdaFit, LAMBDA_CAP};
use super::search::{minimize_quadrant, SearchOptions};
use super::BiddingError;
use crate::types::{DualVars, RunFlags};
use crate::uncertainty::radius;

/// Read-only view of past rounds for one campaign: predicted rates and the
/// winning price of each round.
#[derive(Debug, Clone, Copy)]
pub struct HistoryView<'a> {
    pub ctr: &'a [f64],
    pub cvr: &'a [f64],
    pub wp: &'a [f64],
}

impl<'a> HistoryView<'a> {
    pub fn new(ctr: &'a [f64], cvr: &'a [f64], wp: &'a [f64]) -> Result<Self, BiddingError> {
        if ctr.len() != cvr.len() || ctr.len() != wp.len() {
            return Err(BiddingError::LengthMismatch);
        }
        Ok(Self { ctr, cvr, wp })
    }

    pub fn len(&self) -> usize {
        self.ctr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ctr.is_empty()
    }
}

/// Which rates are uncertain, with the loss budgets of their balls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Robustness {
    Nominal,
    Ctr { eps_a: f64 },
    Cvr { eps_b: f64 },
    Joint { eps_a: f64, eps_b: f64 },
}

impl Robustness {
    pub fn is_joint(&self) -> bool {
        matches!(self, Robustness::Joint { .. })
    }

    fn check(&self) -> Result<(), BiddingError> {
        let ok = |e: f64| e.is_finite() && e >= 0.0;
        let valid = match *self {
            Robustness::Nominal => true,
            Robustness::Ctr { eps_a } => ok(eps_a),
            Robustness::Cvr { eps_b } => ok(eps_b),
            Robustness::Joint { eps_a, eps_b } => ok(eps_a) && ok(eps_b),
        };
        if valid {
            Ok(())
        } else {
            Err(BiddingError::InvalidInput("uncertainty budgets must be finite and non-negative"))
        }
    }
}

/// Whether the reduction is built for the dual bound or for the bid.
/// They differ only for CVR uncertainty, where the bid divides the plain
/// CTR by its norm while the dual term is the squared CTR.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ReductionUse {
    Dual,
    Bid,
}

/// Builds the reduction for `rob` over `ctr`/`cvr`. The second value counts
/// negative joint correction terms that were clamped to zero.
pub(crate) fn build_reduction(
    ctr: &[f64],
    cvr: &[f64],
    cpc_cap: f64,
    rob: Robustness,
    lambdas: (f64, f64),
    usage: ReductionUse,
) -> Result<(Reduction, u32), BiddingError> {
    Ok(match rob {
        Robustness::Nominal => (Reduction::none(), 0),
        Robustness::Ctr { eps_a } => (
            Reduction {
                alpha: radius(eps_a),
                count_weight: cpc_cap,
                norm_weights: cvr.to_vec(),
                numer: cvr.iter().map(|b| b * b).collect(),
                fixed: Vec::new(),
            },
            0,
        ),
        Robustness::Cvr { eps_b } => (
            Reduction {
                alpha: radius(eps_b),
                count_weight: 0.0,
                norm_weights: ctr.to_vec(),
                numer: match usage {
                    ReductionUse::Dual => ctr.iter().map(|a| a * a).collect(),
                    ReductionUse::Bid => ctr.to_vec(),
                },
                fixed: Vec::new(),
            },
            0,
        ),
        Robustness::Joint { eps_a, .. } => {
            let mut negative = 0;
            let mut fixed = Vec::with_capacity(ctr.len());
            for (&a, &b) in ctr.iter().zip(cvr) {
                let term = joint_a_term(lambdas.0, lambdas.1, a, b)?;
                if term < 0.0 {
                    negative += 1;
                }
                fixed.push(term.max(0.0));
            }
            (
                Reduction {
                    alpha: radius(eps_a),
                    count_weight: 1.0,
                    norm_weights: Vec::new(),
                    numer: Vec::new(),
                    fixed,
                },
                negative,
            )
        }
    })
}

/// Dual objective at fixed duals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualEval {
    pub value: f64,
    pub active: Vec<bool>,
    pub converged: bool,
}

struct Problem<'a> {
    h: HistoryView<'a>,
    budget: f64,
    value: Vec<f64>,
    cpc_slack: Vec<f64>,
    free: Vec<bool>,
    rule: ActiveSetRule,
    base: Vec<f64>,
    active: Vec<bool>,
}

impl<'a> Problem<'a> {
    fn new(h: HistoryView<'a>, budget: f64, cpc_cap: f64, rule: ActiveSetRule) -> Self {
        let n = h.len();
        Self {
            h,
            budget,
            value: (0..n).map(|t| h.ctr[t] * h.cvr[t]).collect(),
            cpc_slack: (0..n).map(|t| cpc_cap * h.ctr[t] - h.wp[t]).collect(),
            free: h.wp.iter().map(|&w| w <= 0.0).collect(),
            rule,
            base: vec![0.0; n],
            active: Vec::with_capacity(n),
        }
    }

    fn eval(&mut self, gamma: f64, u0: f64, red: &Reduction) -> (f64, bool) {
        let n = self.h.len();
        for t in 0..n {
            self.base[t] = self.value[t] + u0 * self.cpc_slack[t] - gamma * self.h.wp[t];
        }
        let converged = match self.rule {
            ActiveSetRule::Won => solve_active_set_into(&self.base, &self.free, red, u0, &mut self.active).0,
            ActiveSetRule::Lost => {
                self.active.clear();
                self.active.extend(self.base.iter().map(|&b| b <= 0.0));
                true
            }
        };
        let mut total = gamma * self.budget;
        if red.is_zero() {
            for &b in &self.base {
                total += b.max(0.0);
            }
        } else {
            let (count, sumsq) = red.stats(&self.active);
            for t in 0..n {
                let r = if self.active[t] { red.at(t, u0, count, sumsq) } else { 0.0 };
                total += (self.base[t] - r).max(0.0);
            }
        }
        (total, converged)
    }

    fn scale(&self) -> [f64; 2] {
        let n = self.h.len().max(1) as f64;
        let mean_v = self.value.iter().sum::<f64>() / n;
        let mean_wp = self.h.wp.iter().sum::<f64>() / n;
        let s = if mean_wp > 0.0 && mean_v > 0.0 { mean_v / mean_wp } else { 1.0 };
        [s, s]
    }
}

/// Evaluates the dual objective of `rob` at `duals`. For joint
/// uncertainty the multipliers stored in `duals` are used as given.
pub fn dual_objective(
    h: HistoryView<'_>,
    budget: f64,
    cpc_cap: f64,
    rob: Robustness,
    duals: &DualVars,
    rule: ActiveSetRule,
) -> Result<DualEval, BiddingError> {
    rob.check()?;
    let (red, _) = build_reduction(h.ctr, h.cvr, cpc_cap, rob, (duals.lambda_a, duals.lambda_b), ReductionUse::Dual)?;
    let mut prob = Problem::new(h, budget, cpc_cap, rule);
    let (value, converged) = prob.eval(duals.p, duals.q, &red);
    Ok(DualEval { value, active: prob.active, converged })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub search: SearchOptions,
    /// Previous solution used as an extra starting point.
    pub warm: Option<DualVars>,
    pub rule: ActiveSetRule,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { search: SearchOptions::THOROUGH, warm: None, rule: ActiveSetRule::Won }
    }
}

/// Fitted duals with their objective and active set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualFit {
    pub duals: DualVars,
    pub objective: f64,
    pub active: Vec<bool>,
    pub flags: RunFlags,
}

const JOINT_ROUNDS: usize = 5;

/// Fits the duals of `rob` on `h` with budget `budget` and CPC cap `cpc_cap`.
pub fn fit_duals(
    h: HistoryView<'_>,
    budget: f64,
    cpc_cap: f64,
    rob: Robustness,
    opts: &FitOptions,
) -> Result<DualFit, BiddingError> {
    if h.is_empty() {
        return Err(BiddingError::EmptyHistory);
    }
    if !(budget >= 0.0 && budget.is_finite()) || !(cpc_cap >= 0.0 && cpc_cap.is_finite()) {
        return Err(BiddingError::InvalidInput("budget and CPC cap must be finite and non-negative"));
    }
    rob.check()?;
    let mut prob = Problem::new(h, budget, cpc_cap, opts.rule);
    let scale = prob.scale();
    let warm = opts.warm.map(|d| [d.p, d.q]);
    let mut flags = RunFlags::default();

    let (eps_a, eps_b) = match rob {
        Robustness::Joint { eps_a, eps_b } => (eps_a, eps_b),
        _ => {
            let (red, _) = build_reduction(h.ctr, h.cvr, cpc_cap, rob, (0.0, 0.0), ReductionUse::Dual)?;
            let res = minimize_quadrant(|x| prob.eval(x[0], x[1], &red).0, scale, warm, &opts.search);
            let (objective, converged) = prob.eval(res.x[0], res.x[1], &red);
            flags.dual_nonconverged += u32::from(!res.converged);
            flags.active_set_nonconverged += u32::from(!converged);
            return Ok(DualFit { duals: DualVars::new(res.x[0], res.x[1]), objective, active: prob.active, flags });
        }
    };

    let (ra, rb) = (radius(eps_a), radius(eps_b));
    let all = vec![true; h.len()];
    let mut lam = match opts.warm {
        Some(w) if w.lambda_a > 0.0 && w.lambda_b > 0.0 && 4.0 * w.lambda_a * w.lambda_b > 1.0 => {
            LambdaFit { lambda_a: w.lambda_a, lambda_b: w.lambda_b, feasible: true }
        }
        _ => fit_lambdas(h.ctr, h.cvr, &all, ra, rb),
    };
    let mut x = warm;
    let mut result = None;
    let rounds = if ra == 0.0 { 1 } else { JOINT_ROUNDS };
    for _ in 0..rounds {
        let (red, negative) =
            build_reduction(h.ctr, h.cvr, cpc_cap, rob, (lam.lambda_a, lam.lambda_b), ReductionUse::Dual)?;
        let res = minimize_quadrant(|x| prob.eval(x[0], x[1], &red).0, scale, x, &opts.search);
        let (objective, converged) = prob.eval(res.x[0], res.x[1], &red);
        x = Some(res.x);
        result = Some((res, objective, converged, negative, lam, prob.active.clone()));

        // A single round pins the multipliers to the singular boundary, so
        // small sets fall back to the whole history.
        let mask = if prob.active.iter().filter(|&&a| a).count() >= 2 { &prob.active } else { &all };
        let next = fit_lambdas(h.ctr, h.cvr, mask, ra, rb);
        let moved = |a: f64, b: f64| (a - b).abs() > 1e-6 * a.abs().max(b.abs());
        let changed = moved(next.lambda_a, lam.lambda_a) || moved(next.lambda_b, lam.lambda_b);
        if !changed {
            break;
        }
        lam = next;
    }
    let (res, objective, converged, negative, lam, active) = result.expect("at least one round");
    flags.dual_nonconverged += u32::from(!res.converged);
    flags.active_set_nonconverged += u32::from(!converged);
    flags.lambda_infeasible += u32::from(!lam.feasible);
    flags.a_term_negative += negative;
    let (la, lb) = if ra == 0.0 && rb == 0.0 { (LAMBDA_CAP, LAMBDA_CAP) } else { (lam.lambda_a, lam.lambda_b) };
    Ok(DualFit {
        duals: DualVars::new(res.x[0], res.x[1]).with_lambdas(la, lb),
        objective,
        active,
        flags,
    })
}

pub fn fit_duals_nonrobust(h: HistoryView<'_>, budget: f64, cpc_cap: f64) -> Result<DualFit, BiddingError> {
    fit_duals(h, budget, cpc_cap, Robustness::Nominal, &FitOptions::default())
}

pub fn fit_duals_robust_ctr(h: HistoryView<'_>, budget: f64, cpc_cap: f64, eps_a: f64) -> Result<DualFit, BiddingError> {
    fit_duals(h, budget, cpc_cap, Robustness::Ctr { eps_a }, &FitOptions::default())
}

pub fn fit_duals_robust_cvr(h: HistoryView<'_>, budget: f64, cpc_cap: f64, eps_b: f64) -> Result<DualFit, BiddingError> {
    fit_duals(h, budget, cpc_cap, Robustness::Cvr { eps_b }, &FitOptions::default())
}

pub fn fit_duals_joint(
    h: HistoryView<'_>,
    budget: f64,
    cpc_cap: f64,
    eps_a: f64,
    eps_b: f64,
) -> Result<DualFit, BiddingError> {
    fit_duals(h, budget, cpc_cap, Robustness::Joint { eps_a, eps_b }, &FitOptions::default())
}
