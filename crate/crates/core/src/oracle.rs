//! Slow reference computations used to check the closed forms: projected
//! gradient over a ball, exhaustive enumeration of allocations, an
//! eigenvalue test of the block matrix behind the multiplier condition,
//! and a finite-difference derivative.
//!
//! Nothing here calls into the bidding or uncertainty modules.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("horizon {got} exceeds the enumeration cap {cap}")]
    TooLarge { got: usize, cap: usize },
    #[error("length mismatch")]
    LengthMismatch,
    #[error("tolerance must be positive")]
    BadTolerance,
}

/// Largest horizon enumerated for single-ball modes.
pub const MAX_T: usize = 12;
/// Largest horizon enumerated for the joint mode.
pub const MAX_T_JOINT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallMin {
    pub argmin: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Euclidean projection onto `{a : ‖a − center‖ ≤ r}`.
fn project_ball(x: &mut [f64], center: &[f64], r: f64) {
    let d: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
    if d > r {
        let s = if d > 0.0 { r / d } else { 0.0 };
        for (a, c) in x.iter_mut().zip(center) {
            *a = c + (*a - c) * s;
        }
    }
}

/// Projected gradient descent of `mᵀa` over `½‖a − â‖² ≤ ε`. Stops when an
/// iteration moves the point by at most `tol·(r + tol)`.
pub fn numeric_ball_minimizer(rate_pred: &[f64], weights: &[f64], epsilon: f64, tol: f64) -> Result<BallMin, OracleError> {
    if rate_pred.len() != weights.len() {
        return Err(OracleError::LengthMismatch);
    }
    if !(tol > 0.0) {
        return Err(OracleError::BadTolerance);
    }
    let r = (2.0 * epsilon.max(0.0)).sqrt();
    let mut a = rate_pred.to_vec();
    let g = norm(weights);
    if g == 0.0 || r == 0.0 {
        let objective = dot(weights, &a);
        return Ok(BallMin { argmin: a, objective, iterations: 0, converged: true });
    }
    let step = r / (4.0 * g);
    let max_iter = 10_000;
    for it in 1..=max_iter {
        let prev = a.clone();
        for (x, m) in a.iter_mut().zip(weights) {
            *x -= step * m;
        }
        project_ball(&mut a, rate_pred, r);
        let moved = a.iter().zip(&prev).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        if moved <= tol * (r + tol) {
            let objective = dot(weights, &a);
            return Ok(BallMin { argmin: a, objective, iterations: it, converged: true });
        }
    }
    let objective = dot(weights, &a);
    Ok(BallMin { argmin: a, objective, iterations: max_iter, converged: false })
}

/// Which rates are uncertain in [`brute_force_primal`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PrimalMode {
    Nominal,
    Ctr { eps_a: f64 },
    Cvr { eps_b: f64 },
    Joint { eps_a: f64, eps_b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimalBest {
    pub value: f64,
    pub allocation: Vec<bool>,
}

const BALL_TOL: f64 = 1e-12;
const ALTERNATIONS: usize = 200;
const RESTARTS: usize = 5;

/// Worst case of `Σ x_t a_t b_t` over both balls by alternating exact
/// ball steps, starting from `b` and minimising over `a` first. Returns
/// the objective after every half-step.
pub fn alternating_joint_min(
    ctr: &[f64],
    cvr: &[f64],
    x: &[f64],
    eps_a: f64,
    eps_b: f64,
    start_b: &[f64],
) -> Vec<f64> {
    let mut b = start_b.to_vec();
    let mut trace: Vec<f64> = Vec::with_capacity(2 * ALTERNATIONS);
    for _ in 0..ALTERNATIONS {
        let wa: Vec<f64> = x.iter().zip(&b).map(|(x, b)| x * b).collect();
        let a = numeric_ball_minimizer(ctr, &wa, eps_a, BALL_TOL).expect("lengths match").argmin;
        trace.push(x.iter().zip(&a).zip(&b).map(|((x, a), b)| x * a * b).sum());
        let wb: Vec<f64> = x.iter().zip(&a).map(|(x, a)| x * a).collect();
        b = numeric_ball_minimizer(cvr, &wb, eps_b, BALL_TOL).expect("lengths match").argmin;
        trace.push(x.iter().zip(&a).zip(&b).map(|((x, a), b)| x * a * b).sum());
        let n = trace.len();
        if n >= 4 && (trace[n - 3] - trace[n - 1]).abs() <= 1e-16 {
            break;
        }
    }
    trace
}

fn joint_worst_case(ctr: &[f64], cvr: &[f64], x: &[f64], eps_a: f64, eps_b: f64, rng: &mut ChaCha8Rng) -> f64 {
    let rb = (2.0 * eps_b).sqrt();
    let mut best = *alternating_joint_min(ctr, cvr, x, eps_a, eps_b, cvr).last().unwrap_or(&0.0);
    for _ in 0..RESTARTS {
        let mut b: Vec<f64> = cvr.iter().map(|&c| c + rng.random_range(-1.0..1.0) * rb).collect();
        project_ball(&mut b, cvr, rb);
        let v = *alternating_joint_min(ctr, cvr, x, eps_a, eps_b, &b).last().unwrap_or(&0.0);
        best = best.min(v);
    }
    best
}

/// Best objective over all binary allocations satisfying the budget and
/// the (worst-case) CPC constraint, with the objective evaluated at the
/// worst-case rates of `mode`.
pub fn brute_force_primal(
    ctr: &[f64],
    cvr: &[f64],
    wp: &[f64],
    budget: f64,
    cpc_cap: f64,
    mode: PrimalMode,
) -> Result<PrimalBest, OracleError> {
    let t = ctr.len();
    if cvr.len() != t || wp.len() != t {
        return Err(OracleError::LengthMismatch);
    }
    let cap = if matches!(mode, PrimalMode::Joint { .. }) { MAX_T_JOINT } else { MAX_T };
    if t > cap {
        return Err(OracleError::TooLarge { got: t, cap });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut best = PrimalBest { value: 0.0, allocation: vec![false; t] };
    for mask in 1u32..(1u32 << t) {
        let x: Vec<f64> = (0..t).map(|i| f64::from(mask >> i & 1)).collect();
        let spend = dot(&x, wp);
        if spend > budget {
            continue;
        }
        let clicks = match mode {
            PrimalMode::Ctr { eps_a } | PrimalMode::Joint { eps_a, .. } => {
                numeric_ball_minimizer(ctr, &x, eps_a, BALL_TOL)?.objective
            }
            _ => dot(&x, ctr),
        };
        if spend > cpc_cap * clicks {
            continue;
        }
        let value = match mode {
            PrimalMode::Nominal => x.iter().zip(ctr).zip(cvr).map(|((x, a), b)| x * a * b).sum(),
            PrimalMode::Ctr { eps_a } => {
                let w: Vec<f64> = x.iter().zip(cvr).map(|(x, b)| x * b).collect();
                numeric_ball_minimizer(ctr, &w, eps_a, BALL_TOL)?.objective
            }
            PrimalMode::Cvr { eps_b } => {
                let w: Vec<f64> = x.iter().zip(ctr).map(|(x, a)| x * a).collect();
                numeric_ball_minimizer(cvr, &w, eps_b, BALL_TOL)?.objective
            }
            PrimalMode::Joint { eps_a, eps_b } => joint_worst_case(ctr, cvr, &x, eps_a, eps_b, &mut rng),
        };
        if value > best.value {
            best = PrimalBest { value, allocation: x.iter().map(|&v| v > 0.5).collect() };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsdCheck {
    pub min_eigenvalue: f64,
    pub matrix_psd: bool,
    pub scalar_condition: bool,
}

/// Builds `[[λa·I, ½·diag(x)], [½·diag(x), λb·I]]`, tests it for positive
/// semidefiniteness by eigenvalues, and evaluates the scalar condition
/// `λa ≥ 0 ∧ λb ≥ 0 ∧ λa·λb ≥ ¼·max x_t²` alongside.
pub fn psd_check(lambda_a: f64, lambda_b: f64, x: &[f64], tol: f64) -> Result<PsdCheck, OracleError> {
    let t = x.len();
    if t > 50 {
        return Err(OracleError::TooLarge { got: t, cap: 50 });
    }
    let mut m = DMatrix::<f64>::zeros(2 * t, 2 * t);
    for i in 0..t {
        m[(i, i)] = lambda_a;
        m[(t + i, t + i)] = lambda_b;
        m[(i, t + i)] = 0.5 * x[i];
        m[(t + i, i)] = 0.5 * x[i];
    }
    let min_eigenvalue = m.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max_x2 = x.iter().map(|v| v * v).fold(0.0, f64::max);
    Ok(PsdCheck {
        min_eigenvalue,
        matrix_psd: min_eigenvalue >= -tol,
        scalar_condition: lambda_a >= 0.0 && lambda_b >= 0.0 && lambda_a * lambda_b >= 0.25 * max_x2,
    })
}

/// Per-round term of the joint penalty as a function of the allocation
/// weight `x`: `(2x²·(λb·cvr² + λa·ctr²) − 2x³·ctr·cvr) / (4·λa·λb − x²)`.
pub fn joint_penalty(x: f64, lambda_a: f64, lambda_b: f64, ctr: f64, cvr: f64) -> f64 {
    (2.0 * x * x * (lambda_b * cvr * cvr + lambda_a * ctr * ctr) - 2.0 * x * x * x * ctr * cvr)
        / (4.0 * lambda_a * lambda_b - x * x)
}

/// Five-point central difference of `f` at `x` with step `h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn ball_trivial_cases() {
        let r = numeric_ball_minimizer(&[0.1, 0.2], &[1.0, 1.0], 0.0, 1e-12).unwrap();
        assert_eq!(r.argmin, vec![0.1, 0.2]);
        let r = numeric_ball_minimizer(&[0.1, 0.2], &[0.0, 0.0], 0.01, 1e-12).unwrap();
        assert_eq!(r.objective, 0.0);
        assert!(numeric_ball_minimizer(&[0.1], &[1.0], 0.01, 0.0).is_err());
    }

    #[test]
    fn ball_single_coordinate() {
        let r = numeric_ball_minimizer(&[0.5, 0.5], &[1.0, 0.0], 0.02, 1e-12).unwrap();
        assert!(r.converged);
        assert!((r.argmin[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn primal_trivial_cases() {
        let ctr = [0.1, 0.05, 0.08];
        let cvr = [0.02, 0.09, 0.04];
        let wp = [0.01, 0.02, 0.03];
        let b = brute_force_primal(&ctr, &cvr, &wp, 0.0, 1.0, PrimalMode::Nominal).unwrap();
        assert_eq!(b.value, 0.0);
        let b = brute_force_primal(&ctr, &cvr, &wp, 1e9, 1e9, PrimalMode::Nominal).unwrap();
        let total: f64 = ctr.iter().zip(&cvr).map(|(a, b)| a * b).sum();
        assert!((b.value - total).abs() < 1e-15);
        assert!(b.allocation.iter().all(|&x| x));
        assert!(brute_force_primal(&[0.1; 13], &[0.1; 13], &[0.1; 13], 1.0, 1.0, PrimalMode::Nominal).is_err());
        assert!(brute_force_primal(&[0.1; 9], &[0.1; 9], &[0.1; 9], 1.0, 1.0, PrimalMode::Joint { eps_a: 0.0, eps_b: 0.0 })
            .is_err());
    }

    #[test]
    fn robust_primal_is_below_nominal() {
        let ctr = [0.1, 0.05, 0.08, 0.07];
        let cvr = [0.02, 0.09, 0.04, 0.05];
        let wp = [0.01, 0.02, 0.03, 0.02];
        let nominal = brute_force_primal(&ctr, &cvr, &wp, 0.05, 1.0, PrimalMode::Nominal).unwrap().value;
        for mode in [
            PrimalMode::Ctr { eps_a: 1e-4 },
            PrimalMode::Cvr { eps_b: 1e-4 },
            PrimalMode::Joint { eps_a: 1e-4, eps_b: 1e-4 },
        ] {
            let v = brute_force_primal(&ctr, &cvr, &wp, 0.05, 1.0, mode).unwrap().value;
            assert!(v <= nominal, "{mode:?}");
        }
    }

    #[test]
    fn psd_examples() {
        let p = psd_check(1.0, 1.0, &[1.0; 4], 1e-10).unwrap();
        assert!(p.matrix_psd && p.scalar_condition);
        assert!((p.min_eigenvalue - 0.5).abs() < 1e-12);
        let p = psd_check(0.4, 0.4, &[1.0; 4], 1e-10).unwrap();
        assert!(!p.matrix_psd && !p.scalar_condition);
    }

    #[test]
    fn finite_difference_of_cubic() {
        let d = central_difference(|x| x * x * x, 2.0, 1e-3);
        assert!((d - 12.0).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn alternation_is_monotone(
            seed in any::<u64>(),
            t in 1usize..8,
            eps_a in 1e-6f64..1e-2,
            eps_b in 1e-6f64..1e-2,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ctr: Vec<f64> = (0..t).map(|_| rng.random_range(0.01..0.5)).collect();
            let cvr: Vec<f64> = (0..t).map(|_| rng.random_range(0.01..0.5)).collect();
            let x: Vec<f64> = (0..t).map(|_| f64::from(rng.random_range(0..2u8))).collect();
            let trace = alternating_joint_min(&ctr, &cvr, &x, eps_a, eps_b, &cvr);
            for w in trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-15);
            }
        }

        #[test]
        fn pgd_stays_in_ball(
            pred in proptest::collection::vec(0.0f64..1.0, 1..15),
            eps in 1e-6f64..1e-2,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m: Vec<f64> = pred.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = numeric_ball_minimizer(&pred, &m, eps, 1e-12).unwrap();
            let loss: f64 = 0.5 * r.argmin.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            prop_assert!(loss <= eps * (1.0 + 1e-9));
            prop_assert!(r.converged);
        }
    }
}
