//! Multipliers of the two uncertainty balls in the joint policy.
//!
//! For a fixed set of rounds the multipliers maximise
//!
//! `h(λa, λb) = −λa·ra² − λb·rb² − 2·(λa·Σctr² + λb·Σcvr² − Σctr·cvr) / (4·λa·λb − 1)`
//!
//! which is concave on `4·λa·λb > 1`. Each coordinate has a closed-form
//! maximiser, `4·λa·λb − 1 = sqrt(2·Σ(cvr − 2·λa·ctr)²) / rb` and its mirror
//! image, so the fit is plain coordinate ascent.

use serde::Serialize;

/// Multiplier used for a ball of radius zero.
pub const LAMBDA_CAP: f64 = 1e8;
/// Enforced lower bound on `4·λa·λb − 1`.
pub const LAMBDA_MARGIN: f64 = 1e-3;

const MAX_ROUNDS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaFit {
    pub lambda_a: f64,
    pub lambda_b: f64,
    /// False when the margin had to be imposed by hand.
    pub feasible: bool,
}

fn clamp(v: f64) -> f64 {
    if v.is_finite() {
        v.clamp(1e-12, LAMBDA_CAP)
    } else {
        LAMBDA_CAP
    }
}

/// Concave objective maximised by [`fit_lambdas`], over rounds with
/// `mask[t]` set.
pub fn lambda_objective(ctr: &[f64], cvr: &[f64], mask: &[bool], ra: f64, rb: f64, la: f64, lb: f64) -> f64 {
    let d = 4.0 * la * lb - 1.0;
    let mut s = 0.0;
    for t in 0..ctr.len() {
        if mask[t] {
            s += la * ctr[t] * ctr[t] + lb * cvr[t] * cvr[t] - ctr[t] * cvr[t];
        }
    }
    -la * ra * ra - lb * rb * rb - 2.0 * s / d
}

/// Coordinate ascent on the multipliers. `ra`, `rb` are the ball radii of
/// the CTR and CVR sets.
pub fn fit_lambdas(ctr: &[f64], cvr: &[f64], mask: &[bool], ra: f64, rb: f64) -> LambdaFit {
    let sum_sq = |x: f64, y: &[f64], z: &[f64]| -> f64 {
        // Σ (y − 2·x·z)² over the mask
        (0..y.len()).filter(|&t| mask[t]).map(|t| (y[t] - 2.0 * x * z[t]).powi(2)).sum()
    };
    let mut la = if ra > 0.0 { 1.0 } else { LAMBDA_CAP };
    let mut lb = if rb > 0.0 { 1.0 } else { LAMBDA_CAP };
    for _ in 0..MAX_ROUNDS {
        let (pa, pb) = (la, lb);
        if rb > 0.0 {
            lb = clamp((1.0 + (2.0 * sum_sq(la, cvr, ctr)).sqrt() / rb) / (4.0 * la));
        }
        if ra > 0.0 {
            la = clamp((1.0 + (2.0 * sum_sq(lb, ctr, cvr)).sqrt() / ra) / (4.0 * lb));
        }
        if (la - pa).abs() <= 1e-13 * la && (lb - pb).abs() <= 1e-13 * lb {
            break;
        }
    }
    let mut feasible = true;
    if 4.0 * la * lb - 1.0 < LAMBDA_MARGIN {
        feasible = false;
        lb = (1.0 + LAMBDA_MARGIN) / (4.0 * la);
    }
    LambdaFit { lambda_a: la, lambda_b: lb, feasible }
}
