//! Closed-form bids: the classic value-plus-CPC bid, the risk-adjusted
//! variant, and the bilinear correction term of the joint policy.

use super::BiddingError;
use crate::types::DualVars;

/// Smallest admissible `|4·λa·λb − 1|` for [`joint_a_term`].
pub const SINGULAR_TOL: f64 = 1e-12;

fn check_duals(duals: &DualVars) -> Result<f64, BiddingError> {
    let denom = duals.denominator();
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(BiddingError::ZeroDenominator);
    }
    Ok(denom)
}

/// `(ctr·cvr + q·C·ctr) / (p + q)`.
pub fn bid_nonrobust(duals: &DualVars, cpc_cap: f64, ctr: f64, cvr: f64) -> Result<f64, BiddingError> {
    let denom = check_duals(duals)?;
    Ok((ctr * cvr + duals.q * cpc_cap * ctr) / denom)
}

/// Non-robust bid evaluated at `max(0, ctr − alpha·ctr_std)`.
pub fn bid_risk(
    duals: &DualVars,
    cpc_cap: f64,
    ctr: f64,
    ctr_std: f64,
    alpha: f64,
    cvr: f64,
) -> Result<f64, BiddingError> {
    if !(ctr_std >= 0.0) {
        return Err(BiddingError::InvalidInput("ctr_std must be non-negative"));
    }
    bid_nonrobust(duals, cpc_cap, (ctr - alpha * ctr_std).max(0.0), cvr)
}

/// Bilinear correction of the joint policy:
///
/// `(4N − 6P)/D + 4(N − P)/D²` with `N = λa·ctr² + λb·cvr²`, `P = ctr·cvr`
/// and `D = 4·λa·λb − 1`.
pub fn joint_a_term(lambda_a: f64, lambda_b: f64, ctr: f64, cvr: f64) -> Result<f64, BiddingError> {
    let d = 4.0 * lambda_a * lambda_b - 1.0;
    if !(d.abs() >= SINGULAR_TOL) {
        return Err(BiddingError::SingularDenominator(d));
    }
    let n = lambda_a * ctr * ctr + lambda_b * cvr * cvr;
    let p = ctr * cvr;
    Ok((4.0 * n - 6.0 * p) / d + 4.0 * (n - p) / (d * d))
}
