//! Set-dependent bid reductions and the fixed point that decides which
//! rounds they apply to.
//!
//! All quantities here live in "coefficient" units: the base coefficient of
//! round `t` is `v_t + q·C·ctr_t − (p + q)·wp_t`, which is `(p + q)` times
//! the margin of the classic bid over the winning price. A robust policy
//! subtracts a reduction `r_t(S)` that depends on the active set `S`
//! through `|S|` and a weighted norm over `S`.

use serde::Serialize;

/// Upper bound on fixed-point sweeps.
pub const MAX_SWEEPS: usize = 50;

/// Which rounds receive the robust perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum ActiveSetRule {
    /// Rounds whose perturbed bid still reaches the winning price.
    #[default]
    Won,
    /// Rounds whose classic bid does not exceed the winning price. Kept for
    /// comparison only.
    Lost,
}

/// Reduction `r_t(S) = α·(q·k/√|S| + n_t/‖w_S‖₂ + f_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub alpha: f64,
    /// Weight `k` of the count term, multiplied by the CPC dual.
    pub count_weight: f64,
    /// Weights `w` whose norm over the set normalises `numer`.
    pub norm_weights: Vec<f64>,
    pub numer: Vec<f64>,
    /// Set-independent per-round term.
    pub fixed: Vec<f64>,
}

impl Reduction {
    pub fn none() -> Self {
        Self { alpha: 0.0, count_weight: 0.0, norm_weights: Vec::new(), numer: Vec::new(), fixed: Vec::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.alpha == 0.0
    }

    /// Value at round `t` for a set with `count` members and squared weight
    /// norm `sumsq`, both including `t`.
    #[inline]
    pub fn at(&self, t: usize, q: f64, count: usize, sumsq: f64) -> f64 {
        if self.alpha == 0.0 {
            return 0.0;
        }
        let mut r = 0.0;
        if self.count_weight != 0.0 && count > 0 {
            r += q * self.count_weight / (count as f64).sqrt();
        }
        if !self.numer.is_empty() && sumsq > 0.0 {
            r += self.numer[t] / sumsq.sqrt();
        }
        if !self.fixed.is_empty() {
            r += self.fixed[t];
        }
        self.alpha * r
    }

    pub fn weight_sq(&self, t: usize) -> f64 {
        self.norm_weights.get(t).map_or(0.0, |w| w * w)
    }

    /// `(|S|, Σ_{S} w²)`.
    pub fn stats(&self, set: &[bool]) -> (usize, f64) {
        let mut count = 0;
        let mut sumsq = 0.0;
        for (t, &a) in set.iter().enumerate() {
            if a {
                count += 1;
                sumsq += self.weight_sq(t);
            }
        }
        (count, sumsq)
    }
}

/// Result of [`solve_active_set`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSolve {
    pub active: Vec<bool>,
    pub converged: bool,
    pub sweeps: usize,
}

/// Greatest self-consistent active set.
///
/// Starts from the rounds whose base coefficient is non-negative and drops
/// every round whose reduced coefficient turns negative, until nothing
/// changes. Rounds flagged in `free` (zero winning price) are always kept.
/// Reductions shrink as the set grows, so the sequence decreases
/// monotonically and stops at the largest fixed point.
pub fn solve_active_set(base: &[f64], free: &[bool], red: &Reduction, q: f64) -> ActiveSolve {
    let mut active = Vec::with_capacity(base.len());
    let (converged, sweeps) = solve_active_set_into(base, free, red, q, &mut active);
    ActiveSolve { active, converged, sweeps }
}

/// [`solve_active_set`] writing into a reusable buffer. Returns
/// `(converged, sweeps)`.
pub fn solve_active_set_into(base: &[f64], free: &[bool], red: &Reduction, q: f64, active: &mut Vec<bool>) -> (bool, usize) {
    active.clear();
    active.extend(base.iter().zip(free).map(|(&b, &f)| f || b >= 0.0));
    if red.is_zero() {
        return (true, 0);
    }
    for sweep in 1..=MAX_SWEEPS {
        let (count, sumsq) = red.stats(active);
        let mut changed = false;
        for t in 0..base.len() {
            if active[t] && !free[t] && base[t] - red.at(t, q, count, sumsq) < 0.0 {
                active[t] = false;
                changed = true;
            }
        }
        if !changed {
            return (true, sweep);
        }
    }
    (false, MAX_SWEEPS)
}

/// One application of the set map `S ↦ {t : base_t − r_t(S ∪ {t}) ≥ 0}`.
pub fn set_map(base: &[f64], free: &[bool], red: &Reduction, q: f64, set: &[bool]) -> Vec<bool> {
    let (count, sumsq) = red.stats(set);
    (0..base.len())
        .map(|t| {
            let (c, s) = if set[t] { (count, sumsq) } else { (count + 1, sumsq + red.weight_sq(t)) };
            free[t] || base[t] - red.at(t, q, c, s) >= 0.0
        })
        .collect()
}
