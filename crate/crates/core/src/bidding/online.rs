//! Bid for the next round given fitted duals, the past rounds and the
//! current predictions. The winning price of the current round is unknown,
//! so the correction is computed as if the round joins the active set of
//! the history.

use super::active_set::solve_active_set;
use super::fit::{build_reduction, HistoryView, ReductionUse, Robustness};
use super::formulas::{bid_nonrobust, bid_risk, joint_a_term};
use super::BiddingError;
use crate::types::{DualVars, Policy, RunFlags};

/// Campaign parameters needed to bid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineContext {
    pub policy: Policy,
    pub cpc_cap: f64,
    pub eps_a: f64,
    pub eps_b: f64,
    pub risk_alpha: f64,
}

impl OnlineContext {
    pub fn robustness(&self) -> Robustness {
        match self.policy {
            Policy::NonRobust | Policy::Risk => Robustness::Nominal,
            Policy::RobustCtr => Robustness::Ctr { eps_a: self.eps_a },
            Policy::RobustCvr => Robustness::Cvr { eps_b: self.eps_b },
            Policy::RobustJoint => Robustness::Joint { eps_a: self.eps_a, eps_b: self.eps_b },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineBid {
    pub bid: f64,
    pub delta: f64,
    pub flags: RunFlags,
}

/// Bid of `ctx.policy` for a round with predictions `ctr`/`cvr`.
/// `ctr_std` is only used by the risk policy.
pub fn online_bid(
    ctx: &OnlineContext,
    duals: &DualVars,
    history: HistoryView<'_>,
    ctr: f64,
    cvr: f64,
    ctr_std: f64,
) -> Result<OnlineBid, BiddingError> {
    let mut flags = RunFlags::default();
    let rob = ctx.robustness();
    let nominal = match ctx.policy {
        Policy::Risk => bid_risk(duals, ctx.cpc_cap, ctr, ctr_std, ctx.risk_alpha, cvr)?,
        _ => bid_nonrobust(duals, ctx.cpc_cap, ctr, cvr)?,
    };
    if rob == Robustness::Nominal {
        return Ok(OnlineBid { bid: nominal, delta: 0.0, flags });
    }

    let n = history.len();
    let mut all_ctr = history.ctr.to_vec();
    all_ctr.push(ctr);
    let mut all_cvr = history.cvr.to_vec();
    all_cvr.push(cvr);
    let (red, _) =
        build_reduction(&all_ctr, &all_cvr, ctx.cpc_cap, rob, (duals.lambda_a, duals.lambda_b), ReductionUse::Bid)?;
    if rob.is_joint() && joint_a_term(duals.lambda_a, duals.lambda_b, ctr, cvr)? < 0.0 {
        flags.a_term_negative += 1;
    }
    if red.is_zero() {
        return Ok(OnlineBid { bid: nominal, delta: 0.0, flags });
    }

    // The current round is treated as won: it stays in the set throughout.
    let denom = duals.denominator();
    let mut base: Vec<f64> = (0..n)
        .map(|t| history.ctr[t] * history.cvr[t] + duals.q * ctx.cpc_cap * history.ctr[t] - denom * history.wp[t])
        .collect();
    base.push(0.0);
    let mut free: Vec<bool> = history.wp.iter().map(|&w| w <= 0.0).collect();
    free.push(true);
    let solve = solve_active_set(&base, &free, &red, duals.q);
    flags.active_set_nonconverged += u32::from(!solve.converged);
    let (count, sumsq) = red.stats(&solve.active);
    let delta = -red.at(n, duals.q, count, sumsq) / denom;
    let raw = nominal + delta;
    if raw < 0.0 {
        flags.negative_bid_clamped += 1;
    }
    Ok(OnlineBid { bid: raw.max(0.0), delta, flags })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(policy: Policy) -> OnlineContext {
        OnlineContext { policy, cpc_cap: 1.0, eps_a: 1e-3, eps_b: 1e-3, risk_alpha: 1.0 }
    }

    #[test]
    fn empty_history_applies_single_round_correction() {
        let d = DualVars::new(1.0, 1.0);
        let h = HistoryView::new(&[], &[], &[]).unwrap();
        let b = online_bid(&ctx(Policy::RobustCtr), &d, h, 0.5, 0.1, 0.0).unwrap();
        let alpha = (2e-3f64).sqrt();
        let expected = -(alpha / 2.0) * (1.0 + 0.01 / 0.1);
        assert!((b.delta - expected).abs() < 1e-15);
    }

    #[test]
    fn baselines_have_no_correction() {
        let d = DualVars::new(1.0, 0.5);
        let h = HistoryView::new(&[0.1], &[0.1], &[0.01]).unwrap();
        for p in [Policy::NonRobust, Policy::Risk] {
            let b = online_bid(&ctx(p), &d, h, 0.1, 0.1, 0.01).unwrap();
            assert_eq!(b.delta, 0.0);
        }
        let risk = online_bid(&ctx(Policy::Risk), &d, h, 0.1, 0.1, 0.01).unwrap().bid;
        let nominal = online_bid(&ctx(Policy::NonRobust), &d, h, 0.1, 0.1, 0.01).unwrap().bid;
        assert!(risk < nominal);
    }

    #[test]
    fn matches_batch_bids_when_the_round_wins() {
        use crate::bidding::bids_robust;
        use crate::bidding::ActiveSetRule;
        let d = DualVars::new(0.8, 0.3).with_lambdas(4.0, 3.0);
        let ctr = [0.05, 0.08, 0.03, 0.09];
        let cvr = [0.04, 0.02, 0.07, 0.05];
        let wp = [0.001, 0.002, 0.5, 0.0];
        for policy in [Policy::RobustCtr, Policy::RobustCvr, Policy::RobustJoint] {
            let c = ctx(policy);
            let batch = bids_robust(&d, 1.0, &ctr, &cvr, &wp, c.robustness(), ActiveSetRule::Won).unwrap();
            assert!(batch.decisions[3].active);
            let h = HistoryView::new(&ctr[..3], &cvr[..3], &wp[..3]).unwrap();
            let online = online_bid(&c, &d, h, ctr[3], cvr[3], 0.0).unwrap();
            assert!((online.bid - batch.decisions[3].bid).abs() < 1e-15, "{policy}");
        }
    }
}
