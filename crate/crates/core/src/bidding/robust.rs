//! Robust bids over a batch of rounds with known winning prices.

use super::active_set::{solve_active_set, ActiveSetRule};
use super::fit::{build_reduction, ReductionUse, Robustness};
use super::{ActiveSet, BidDecision, BiddingError};
use crate::types::{DualVars, RunFlags};

#[derive(Debug, Clone, PartialEq)]
pub struct RobustBids {
    pub decisions: Vec<BidDecision>,
    pub active: ActiveSet,
    pub converged: bool,
    pub flags: RunFlags,
}

fn check_lengths(ctr: &[f64], cvr: &[f64], wp: &[f64]) -> Result<(), BiddingError> {
    if ctr.len() != cvr.len() || ctr.len() != wp.len() {
        Err(BiddingError::LengthMismatch)
    } else {
        Ok(())
    }
}

/// Bids of policy `rob` for every round, with the correction applied on
/// the active set selected by `rule`.
pub fn bids_robust(
    duals: &DualVars,
    cpc_cap: f64,
    ctr: &[f64],
    cvr: &[f64],
    wp: &[f64],
    rob: Robustness,
    rule: ActiveSetRule,
) -> Result<RobustBids, BiddingError> {
    check_lengths(ctr, cvr, wp)?;
    let denom = duals.denominator();
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(BiddingError::ZeroDenominator);
    }
    let mut flags = RunFlags::default();
    let (red, negative) = build_reduction(ctr, cvr, cpc_cap, rob, (duals.lambda_a, duals.lambda_b), ReductionUse::Bid)?;
    flags.a_term_negative += negative;

    let numer: Vec<f64> = (0..ctr.len()).map(|t| ctr[t] * cvr[t] + duals.q * cpc_cap * ctr[t]).collect();
    let base: Vec<f64> = (0..ctr.len()).map(|t| numer[t] - denom * wp[t]).collect();
    let free: Vec<bool> = wp.iter().map(|&w| w <= 0.0).collect();
    let (mask, converged) = match rule {
        ActiveSetRule::Won => {
            let s = solve_active_set(&base, &free, &red, duals.q);
            (s.active, s.converged)
        }
        ActiveSetRule::Lost => (base.iter().map(|&b| b <= 0.0).collect(), true),
    };
    flags.active_set_nonconverged += u32::from(!converged);
    let (count, sumsq) = red.stats(&mask);

    let decisions = (0..ctr.len())
        .map(|t| {
            let delta = if mask[t] { -red.at(t, duals.q, count, sumsq) / denom } else { 0.0 };
            let raw = numer[t] / denom + delta;
            if raw < 0.0 {
                flags.negative_bid_clamped += 1;
            }
            BidDecision { t, bid: raw.max(0.0), delta, active: mask[t] }
        })
        .collect();
    Ok(RobustBids { decisions, active: ActiveSet::from_mask(&mask), converged, flags })
}

/// Active set of the CTR-robust policy.
pub fn active_set_ctr(
    duals: &DualVars,
    cpc_cap: f64,
    ctr: &[f64],
    cvr: &[f64],
    wp: &[f64],
    eps_a: f64,
    rule: ActiveSetRule,
) -> Result<(ActiveSet, bool), BiddingError> {
    let b = bids_robust(duals, cpc_cap, ctr, cvr, wp, Robustness::Ctr { eps_a }, rule)?;
    Ok((b.active, b.converged))
}

pub fn bids_robust_ctr(
    duals: &DualVars,
    cpc_cap: f64,
    ctr_pred: &[f64],
    cvr: &[f64],
    wp: &[f64],
    eps_a: f64,
) -> Result<RobustBids, BiddingError> {
    bids_robust(duals, cpc_cap, ctr_pred, cvr, wp, Robustness::Ctr { eps_a }, ActiveSetRule::Won)
}

pub fn bids_robust_cvr(
    duals: &DualVars,
    cpc_cap: f64,
    ctr: &[f64],
    cvr_pred: &[f64],
    wp: &[f64],
    eps_b: f64,
) -> Result<RobustBids, BiddingError> {
    bids_robust(duals, cpc_cap, ctr, cvr_pred, wp, Robustness::Cvr { eps_b }, ActiveSetRule::Won)
}

#[allow(clippy::too_many_arguments)]
pub fn bids_robust_joint(
    duals: &DualVars,
    cpc_cap: f64,
    ctr_pred: &[f64],
    cvr_pred: &[f64],
    wp: &[f64],
    eps_a: f64,
    eps_b: f64,
) -> Result<RobustBids, BiddingError> {
    bids_robust(duals, cpc_cap, ctr_pred, cvr_pred, wp, Robustness::Joint { eps_a, eps_b }, ActiveSetRule::Won)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bidding::bid_nonrobust;
    use proptest::prelude::*;

    #[test]
    fn ctr_single_round() {
        let d = DualVars::new(1.0, 1.0);
        let b = bids_robust_ctr(&d, 1.0, &[0.5], &[0.1], &[0.0], 0.005).unwrap();
        assert!((b.decisions[0].delta + 0.055).abs() < 1e-15, "{:?}", b.decisions);
        assert!(b.decisions[0].active);
    }

    #[test]
    fn cvr_single_round() {
        let d = DualVars::new(1.0, 1.0);
        let b = bids_robust_cvr(&d, 1.0, &[0.2], &[0.5], &[0.0], 0.02).unwrap();
        assert!((b.decisions[0].delta + 0.1).abs() < 1e-15, "{:?}", b.decisions);
        // No dependence on C or q beyond 1/(p + q).
        let b2 = bids_robust_cvr(&DualVars::new(0.5, 1.5), 7.0, &[0.2], &[0.5], &[0.0], 0.02).unwrap();
        assert_eq!(b.decisions[0].delta, b2.decisions[0].delta);
    }

    #[test]
    fn infinite_prices_deactivate_everything() {
        let d = DualVars::new(1.0, 0.5).with_lambdas(2.0, 2.0);
        let wp = vec![f64::INFINITY; 3];
        let b = bids_robust_joint(&d, 1.0, &[0.1; 3], &[0.1; 3], &wp, 1e-3, 1e-3).unwrap();
        assert!(b.active.is_empty());
        assert!(b.decisions.iter().all(|d| d.delta == 0.0));
    }

    #[test]
    fn zero_prices_activate_everything() {
        let d = DualVars::new(1.0, 0.5);
        let (set, ok) = active_set_ctr(&d, 1.0, &[0.1; 4], &[0.1; 4], &[0.0; 4], 1e-3, ActiveSetRule::Won).unwrap();
        assert!(ok);
        assert_eq!(set.indices, vec![0, 1, 2, 3]);
    }

    #[test]
    fn joint_requires_nonsingular_lambdas() {
        let d = DualVars::new(1.0, 0.5).with_lambdas(0.5, 0.5);
        assert!(matches!(
            bids_robust_joint(&d, 1.0, &[0.1], &[0.1], &[0.0], 1e-3, 1e-3),
            Err(BiddingError::SingularDenominator(_))
        ));
    }

    #[test]
    fn lost_rule_targets_losing_rounds() {
        let d = DualVars::new(1.0, 0.0);
        // Base bids are 0.01 and 0.04.
        let b = bids_robust(&d, 1.0, &[0.1, 0.2], &[0.1, 0.2], &[0.02, 0.02], Robustness::Ctr { eps_a: 1e-3 }, ActiveSetRule::Lost)
            .unwrap();
        assert_eq!(b.active.indices, vec![0]);
    }

    /// Bid at `t` with the correction computed on a given set.
    fn bids_robust_forced(d: &DualVars, ctr: &[f64], cvr: &[f64], rob: Robustness, mask: &[bool], t: usize) -> f64 {
        let (red, _) = build_reduction(ctr, cvr, 1.0, rob, (d.lambda_a, d.lambda_b), ReductionUse::Bid).unwrap();
        let (count, sumsq) = red.stats(mask);
        bid_nonrobust(d, 1.0, ctr[t], cvr[t]).unwrap() - red.at(t, d.q, count, sumsq) / d.denominator()
    }

    fn rates() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..25).prop_flat_map(|t| {
            (
                proptest::collection::vec(0.001f64..0.3, t),
                proptest::collection::vec(0.001f64..0.3, t),
                proptest::collection::vec(0.0f64..0.2, t),
            )
        })
    }

    fn all_policies(eps: f64) -> [Robustness; 3] {
        [Robustness::Ctr { eps_a: eps }, Robustness::Cvr { eps_b: eps }, Robustness::Joint { eps_a: eps, eps_b: eps }]
    }

    proptest! {
        #[test]
        fn zero_budget_reproduces_classic_bids(
            (ctr, cvr, wp) in rates(), p in 0.01f64..5.0, q in 0.0f64..5.0, c in 0.5f64..3.0,
            la in 0.6f64..50.0, lb in 0.6f64..50.0,
        ) {
            let d = DualVars::new(p, q).with_lambdas(la, lb);
            for rob in all_policies(0.0) {
                let b = bids_robust(&d, c, &ctr, &cvr, &wp, rob, ActiveSetRule::Won).unwrap();
                for (t, dec) in b.decisions.iter().enumerate() {
                    let nominal = bid_nonrobust(&d, c, ctr[t], cvr[t]).unwrap();
                    prop_assert!((dec.bid - nominal).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn corrections_are_nonpositive_and_monotone(
            (ctr, cvr, wp) in rates(), p in 0.01f64..5.0, q in 0.0f64..5.0,
            eps in 1e-6f64..1e-2, la in 0.6f64..50.0, lb in 0.6f64..50.0,
        ) {
            let d = DualVars::new(p, q).with_lambdas(la, lb);
            for (small, large) in all_policies(eps).into_iter().zip(all_policies(2.0 * eps)) {
                let a = bids_robust(&d, 1.0, &ctr, &cvr, &wp, small, ActiveSetRule::Won).unwrap();
                let b = bids_robust(&d, 1.0, &ctr, &cvr, &wp, large, ActiveSetRule::Won).unwrap();
                for t in 0..ctr.len() {
                    let nominal = bid_nonrobust(&d, 1.0, ctr[t], cvr[t]).unwrap();
                    prop_assert!(a.decisions[t].delta <= 0.0);
                    prop_assert!(a.decisions[t].bid <= nominal + 1e-15);
                    // With the set held fixed, a larger budget only lowers the bid.
                    if a.active == b.active && a.decisions[t].active {
                        prop_assert!(b.decisions[t].delta <= a.decisions[t].delta + 1e-15);
                    }
                }
            }
        }

        #[test]
        fn active_set_is_self_consistent(
            (ctr, cvr, wp) in rates(), p in 0.01f64..5.0, q in 0.0f64..5.0, eps in 1e-6f64..1e-2,
        ) {
            let d = DualVars::new(p, q).with_lambdas(3.0, 3.0);
            for rob in all_policies(eps) {
                let b = bids_robust(&d, 1.0, &ctr, &cvr, &wp, rob, ActiveSetRule::Won).unwrap();
                prop_assert!(b.converged);
                for (t, dec) in b.decisions.iter().enumerate() {
                    let nominal = bid_nonrobust(&d, 1.0, ctr[t], cvr[t]).unwrap();
                    if dec.active {
                        prop_assert!(dec.bid >= wp[t] - 1e-12);
                    } else if nominal > wp[t] {
                        // Won only without the correction: dropping it must be forced.
                        let mut with_t = b.active.indices.clone();
                        with_t.push(t);
                        with_t.sort_unstable();
                        let mask: Vec<bool> = (0..ctr.len()).map(|i| with_t.contains(&i)).collect();
                        let forced = bids_robust_forced(&d, &ctr, &cvr, rob, &mask, t);
                        prop_assert!(forced < wp[t] + 1e-12);
                    }
                }
            }
        }
    }
}
