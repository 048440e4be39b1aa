//! Uncertainty sets built from the squared loss `½‖a − â‖₂² ≤ ε`:
//! calibration of `ε`, closed-form worst-case rates, the non-negativity
//! bound on `ε`, and the perturbations injected into experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::types::RateVector;

#[derive(Debug, Error, PartialEq)]
pub enum UncertaintyError {
    #[error("empty loss sample")]
    EmptySample,
    #[error("confidence {0} must lie strictly between 0 and 1")]
    InvalidConfidence(f64),
    #[error("advertiser count must be at least 1")]
    NoAdvertisers,
    #[error("epsilon {0} must be finite and non-negative")]
    InvalidEpsilon(f64),
    #[error("length mismatch: {0} rates vs {1} weights")]
    LengthMismatch(usize, usize),
    #[error("weights must be non-negative (index {0})")]
    NegativeWeight(usize),
}

/// An uncertainty budget together with its ball radius `sqrt(2ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UncertaintyBudget {
    epsilon: f64,
    radius: f64,
}

impl UncertaintyBudget {
    pub fn new(epsilon: f64) -> Result<Self, UncertaintyError> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(UncertaintyError::InvalidEpsilon(epsilon));
        }
        Ok(Self { epsilon, radius: (2.0 * epsilon).sqrt() })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// Radius `sqrt(2ε)` of the squared-loss ball.
pub fn radius(epsilon: f64) -> f64 {
    (2.0 * epsilon.max(0.0)).sqrt()
}

/// Result of [`calibrate_epsilon`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub epsilon: f64,
    /// Quantile level actually used, after clamping to 1.
    pub level: f64,
    /// Set when the finite-sample correction pushed the level above 1.
    pub level_clamped: bool,
}

/// Conformal calibration of the uncertainty budget.
///
/// Returns the `⌈λ·n⌉`-th order statistic of `losses` with
/// `λ = (1 + 1/I)·q`, so that a fresh loss falls below the returned value
/// with probability at least `q`. When `λ > 1` the sample maximum is
/// returned and `level_clamped` is set.
pub fn calibrate_epsilon(
    losses: &[f64],
    confidence: f64,
    n_advertisers: usize,
) -> Result<Calibration, UncertaintyError> {
    if losses.is_empty() {
        return Err(UncertaintyError::EmptySample);
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(UncertaintyError::InvalidConfidence(confidence));
    }
    if n_advertisers == 0 {
        return Err(UncertaintyError::NoAdvertisers);
    }
    let raw_level = (1.0 + 1.0 / n_advertisers as f64) * confidence;
    let level_clamped = raw_level > 1.0;
    let level = raw_level.min(1.0);

    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // Guard against 0.99 * 100 = 99.00000000000001 rounding up to 100.
    let k = ((level * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Ok(Calibration { epsilon: sorted[k - 1], level, level_clamped })
}

fn check_weights(rate_pred: &[f64], weights: &[f64]) -> Result<(), UncertaintyError> {
    if rate_pred.len() != weights.len() {
        return Err(UncertaintyError::LengthMismatch(rate_pred.len(), weights.len()));
    }
    if let Some(i) = weights.iter().position(|&w| !(w >= 0.0)) {
        return Err(UncertaintyError::NegativeWeight(i));
    }
    Ok(())
}

/// Minimiser of `mᵀa` over `½‖a − â‖₂² ≤ ε`: `â − α·m/‖m‖₂`, `α = sqrt(2ε)`.
///
/// The box `[0, 1]` is not imposed; entries can go negative once `ε`
/// exceeds [`epsilon_nonneg_bound`]. With `m = 0` the objective is constant
/// and the prediction is returned unchanged.
pub fn worst_case_rates(
    rate_pred: &[f64],
    weights: &[f64],
    budget: UncertaintyBudget,
) -> Result<Vec<f64>, UncertaintyError> {
    check_weights(rate_pred, weights)?;
    let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    if norm == 0.0 || budget.radius == 0.0 {
        return Ok(rate_pred.to_vec());
    }
    let step = budget.radius / norm;
    Ok(rate_pred.iter().zip(weights).map(|(a, m)| a - step * m).collect())
}

/// Largest budgets keeping the worst-case rates non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonBound {
    /// `½·min_t (â_t‖m‖₂/m_t)²`, the exact non-negativity threshold.
    pub exact: f64,
    /// `min_t â_t‖m‖₂/m_t` without square or ½, as the bound is usually
    /// printed. Not used for decisions.
    pub printed: f64,
}

/// Non-negativity bound on `ε` for [`worst_case_rates`]. Both values are
/// `+∞` when every weight is zero.
pub fn epsilon_nonneg_bound(
    rate_pred: &[f64],
    weights: &[f64],
) -> Result<EpsilonBound, UncertaintyError> {
    check_weights(rate_pred, weights)?;
    let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    let printed = rate_pred
        .iter()
        .zip(weights)
        .filter(|(_, &m)| m > 0.0)
        .map(|(&a, &m)| a * norm / m)
        .fold(f64::INFINITY, f64::min);
    Ok(EpsilonBound { exact: 0.5 * printed * printed, printed })
}

/// Moves `rate_true` to a uniformly random point on the sphere
/// `½‖a − rate_true‖₂² = ε`, then clips into [0, 1]. Clipping can only
/// shrink the distance, so the loss never exceeds `ε`.
pub fn perturb_rates(rate_true: &[f64], epsilon: f64, rng_seed: u64) -> Result<RateVector, UncertaintyError> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(UncertaintyError::InvalidEpsilon(epsilon));
    }
    if epsilon == 0.0 || rate_true.is_empty() {
        return Ok(RateVector::clipped(rate_true.to_vec()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut direction: Vec<f64> = Vec::with_capacity(rate_true.len());
    let mut norm = 0.0;
    while norm == 0.0 {
        direction.clear();
        direction.extend((0..rate_true.len()).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
        norm = direction.iter().map(|d: &f64| d * d).sum::<f64>().sqrt();
    }
    let scale = radius(epsilon) / norm;
    Ok(RateVector::clipped(
        rate_true.iter().zip(&direction).map(|(a, d)| a + scale * d).collect(),
    ))
}

/// Squared loss `½‖a − b‖₂²`.
pub fn squared_loss(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn calibrate_single_sample() {
        let c = calibrate_epsilon(&[0.1], 0.5, 1).unwrap();
        assert_eq!(c.epsilon, 0.1);
    }

    #[test]
    fn calibrate_order_statistic() {
        // level (1 + 1/3)·0.75 = 1 -> the 4th of 4 order statistics.
        let c = calibrate_epsilon(&[3.0, 1.0, 4.0, 2.0], 0.75, 3).unwrap();
        assert_eq!(c.epsilon, 4.0);
        assert!(!c.level_clamped);
        // level (1 + 1/4)·0.5 = 0.625 -> ceil(2.5) = 3rd.
        let c = calibrate_epsilon(&[3.0, 1.0, 4.0, 2.0], 0.5, 4).unwrap();
        assert_eq!(c.epsilon, 3.0);
    }

    #[test]
    fn calibrate_clamps_level() {
        let c = calibrate_epsilon(&[1.0, 5.0, 2.0], 0.9, 1).unwrap();
        assert!(c.level_clamped);
        assert_eq!(c.level, 1.0);
        assert_eq!(c.epsilon, 5.0);
    }

    #[test]
    fn calibrate_errors() {
        assert_eq!(calibrate_epsilon(&[], 0.5, 1), Err(UncertaintyError::EmptySample));
        assert!(calibrate_epsilon(&[1.0], 1.0, 1).is_err());
        assert!(calibrate_epsilon(&[1.0], 0.0, 1).is_err());
        assert!(calibrate_epsilon(&[1.0], 0.5, 0).is_err());
    }

    #[test]
    fn calibrate_coverage_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 1000;
        let mut covered = 0usize;
        let mut total = 0usize;
        for _ in 0..trials {
            let sample: Vec<f64> = (0..100).map(|_| rng.random::<f64>().powi(2)).collect();
            let eps = calibrate_epsilon(&sample, 0.9, 10).unwrap().epsilon;
            for _ in 0..1000 {
                total += 1;
                if rng.random::<f64>().powi(2) <= eps {
                    covered += 1;
                }
            }
        }
        let coverage = covered as f64 / total as f64;
        assert!(coverage >= 0.9, "coverage {coverage}");
    }

    #[test]
    fn worst_case_examples() {
        let b = UncertaintyBudget::new(0.0).unwrap();
        assert_eq!(worst_case_rates(&[0.3, 0.4], &[1.0, 2.0], b).unwrap(), vec![0.3, 0.4]);

        let b = UncertaintyBudget::new(0.02).unwrap();
        let a = worst_case_rates(&[0.5, 0.5], &[1.0, 0.0], b).unwrap();
        assert!((a[0] - 0.3).abs() < 1e-15 && a[1] == 0.5);

        // Zero weights leave the prediction untouched.
        assert_eq!(worst_case_rates(&[0.2, 0.7], &[0.0, 0.0], b).unwrap(), vec![0.2, 0.7]);
        assert!(worst_case_rates(&[0.2], &[-1.0], b).is_err());
        assert!(worst_case_rates(&[0.2], &[1.0, 1.0], b).is_err());
    }

    #[test]
    fn budget_radius() {
        let b = UncertaintyBudget::new(0.005).unwrap();
        assert!((b.radius() * b.radius() - 0.01).abs() <= f64::EPSILON);
        assert!(UncertaintyBudget::new(-1.0).is_err());
    }

    #[test]
    fn nonneg_bound_examples() {
        let b = epsilon_nonneg_bound(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((b.exact - 0.125).abs() < 1e-15);
        assert!((b.printed - 0.5).abs() < 1e-15);
        assert_eq!(epsilon_nonneg_bound(&[0.5], &[0.0]).unwrap().exact, f64::INFINITY);

        // Symmetric point: m_t = w, â_t = c for all t gives ½·c²·T.
        let t = 7;
        let b = epsilon_nonneg_bound(&vec![0.05; t], &vec![0.3; t]).unwrap();
        assert!((b.exact - 0.5 * 0.05f64.powi(2) * t as f64).abs() < 1e-15);
    }

    #[test]
    fn nonneg_bound_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let t = rng.random_range(1..20);
            let pred: Vec<f64> = (0..t).map(|_| rng.random_range(0.01..1.0)).collect();
            let m: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..1.0)).collect();
            let bound = epsilon_nonneg_bound(&pred, &m).unwrap().exact;
            let a = worst_case_rates(&pred, &m, UncertaintyBudget::new(bound).unwrap()).unwrap();
            let min = a.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(min.abs() < 1e-9, "min {min}");
        }
    }

    #[test]
    fn perturb_zero_is_identity() {
        let v = vec![0.1, 0.2, 0.9];
        assert_eq!(perturb_rates(&v, 0.0, 3).unwrap().into_inner(), v);
    }

    #[test]
    fn perturb_mean_loss_scale() {
        let truth: Vec<f64> = (0..100).map(|i| 0.01 + 0.0009 * i as f64).collect();
        let eps = 1e-2;
        let losses: Vec<f64> = (0..10)
            .map(|s| squared_loss(perturb_rates(&truth, eps, s).unwrap().as_slice(), &truth))
            .collect();
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        assert!(losses.iter().all(|&l| l <= eps * (1.0 + 1e-12)));
        assert!(mean >= 0.5 * eps, "mean loss {mean}");
    }

    proptest! {
        #[test]
        fn perturb_stays_in_ball(
            truth in proptest::collection::vec(0.0f64..=1.0, 1..40),
            eps in 0.0f64..0.1,
            seed in any::<u64>(),
        ) {
            let out = perturb_rates(&truth, eps, seed).unwrap();
            prop_assert!(squared_loss(out.as_slice(), &truth) <= eps * (1.0 + 1e-12) + 1e-300);
            prop_assert!(out.as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert_eq!(out, perturb_rates(&truth, eps, seed).unwrap());
        }

        #[test]
        fn worst_case_on_boundary_and_optimal(
            pred in proptest::collection::vec(0.0f64..=1.0, 1..20),
            seed in any::<u64>(),
            eps in 1e-6f64..1e-2,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m: Vec<f64> = pred.iter().map(|_| rng.random_range(0.0..1.0)).collect();
            let budget = UncertaintyBudget::new(eps).unwrap();
            let a = worst_case_rates(&pred, &m, budget).unwrap();
            let obj = |x: &[f64]| x.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>();
            if m.iter().any(|&w| w > 0.0) {
                prop_assert!((squared_loss(&a, &pred) - eps).abs() <= 1e-12);
            }
            let best = obj(&a);
            for _ in 0..50 {
                // random point inside the ball
                let dir: Vec<f64> = pred.iter().map(|_| -> f64 { StandardNormal.sample(&mut rng) }).collect();
                let n = dir.iter().map(|d: &f64| d * d).sum::<f64>().sqrt().max(1e-300);
                let r = budget.radius() * rng.random::<f64>();
                let p: Vec<f64> = pred.iter().zip(&dir).map(|(x, d)| x + r * d / n).collect();
                prop_assert!(best <= obj(&p) + 1e-12);
            }
            // monotone in epsilon
            let bigger = worst_case_rates(&pred, &m, UncertaintyBudget::new(eps * 2.0).unwrap()).unwrap();
            prop_assert!(obj(&bigger) <= best + 1e-15);
        }
    }
}
