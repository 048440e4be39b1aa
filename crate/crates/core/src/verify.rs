//! Cross-checks of the closed forms against the reference oracles, grouped
//! into named suites with a plain-text pass/fail table.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bidding::{
    bid_nonrobust, bids_robust, fit_duals, ActiveSetRule, FitOptions, HistoryView, Robustness,
};
use crate::metrics::{aggregate, cpc_avg, tcv};
use crate::oracle::{brute_force_primal, numeric_ball_minimizer, psd_check, PrimalMode};
use crate::types::{AuctionRound, DualVars, Policy, RoundRecord, RunFlags, SweepResult};
use crate::uncertainty::{worst_case_rates, UncertaintyBudget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    WorstCase,
    Duality,
    Consistency,
    Psd,
    Metrics,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::WorstCase, Suite::Duality, Suite::Consistency, Suite::Psd, Suite::Metrics];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::WorstCase => "worst_case",
            Suite::Duality => "duality",
            Suite::Consistency => "consistency",
            Suite::Psd => "psd",
            Suite::Metrics => "metrics",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (expected one of worst_case, duality, consistency, psd, metrics)"))
    }
}

/// One row of a report. `worst` is the largest error seen, compared
/// against `tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: &str, tolerance: f64) -> Self {
        Self { name: name.to_string(), cases: 0, failures: 0, worst: 0.0, tolerance }
    }

    fn record(&mut self, error: f64) {
        self.cases += 1;
        if !(error <= self.tolerance) {
            self.failures += 1;
        }
        if error.is_nan() || error > self.worst {
            self.worst = error;
        }
    }

    pub fn passed(&self) -> bool {
        self.cases > 0 && self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    /// Header plus one comma-separated line per check.
    pub fn to_table(&self) -> String {
        let mut s = String::from("suite,check,cases,failures,worst,tolerance,status\n");
        for c in &self.checks {
            s.push_str(&format!(
                "{},{},{},{},{:e},{:e},{}\n",
                self.suite,
                c.name,
                c.cases,
                c.failures,
                c.worst,
                c.tolerance,
                if c.passed() { "PASS" } else { "FAIL" }
            ));
        }
        s
    }
}

pub fn run_suite(suite: Suite) -> Report {
    let checks = match suite {
        Suite::WorstCase => worst_case(100, 1),
        Suite::Duality => duality(50, 2),
        Suite::Consistency => consistency(50, 3),
        Suite::Psd => psd(1000, 4),
        Suite::Metrics => metrics(100, 5),
    };
    Report { suite, checks }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

fn rates(rng: &mut ChaCha8Rng, t: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..t).map(|_| rng.random_range(lo..hi)).collect()
}

/// Analytic worst case against projected gradient on random instances.
pub fn worst_case(n: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objective = Check::new("objective_rel", 1e-6);
    let mut boundary = Check::new("on_sphere_rel", 1e-9);
    for _ in 0..n {
        let t = rng.random_range(5..=20);
        let pred = rates(&mut rng, t, 0.0, 1.0);
        let weights = rates(&mut rng, t, 0.0, 1.0);
        let eps = log_uniform(&mut rng, 1e-6, 1e-2);
        let a = worst_case_rates(&pred, &weights, UncertaintyBudget::new(eps).expect("valid budget"))
            .expect("valid instance");
        let analytic: f64 = a.iter().zip(&weights).map(|(x, m)| x * m).sum();
        let numeric = numeric_ball_minimizer(&pred, &weights, eps, 1e-13).expect("valid instance");
        objective.record((analytic - numeric.objective).abs() / numeric.objective.abs().max(1e-12));
        let loss = 0.5 * a.iter().zip(&pred).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        boundary.record((loss - eps).abs() / eps);
    }
    vec![objective, boundary]
}

struct Instance {
    ctr: Vec<f64>,
    cvr: Vec<f64>,
    wp: Vec<f64>,
    budget: f64,
    cap: f64,
}

fn instance(rng: &mut ChaCha8Rng, t: usize) -> Instance {
    let ctr = rates(rng, t, 0.01, 0.3);
    let cvr = rates(rng, t, 0.01, 0.3);
    let wp = rates(rng, t, 0.0, 0.1);
    let budget = rng.random_range(0.05..0.6) * wp.iter().sum::<f64>();
    Instance { ctr, cvr, wp, budget, cap: rng.random_range(1.0..3.0) }
}

/// Fitted dual objective against the best feasible binary allocation.
pub fn duality(n: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<(usize, Instance, f64, f64)> = (0..n)
        .map(|k| {
            let mode = k % 4;
            let t = if mode == 3 { rng.random_range(2..=8) } else { rng.random_range(2..=12) };
            let inst = instance(&mut rng, t);
            (mode, inst, log_uniform(&mut rng, 1e-6, 1e-2), log_uniform(&mut rng, 1e-6, 1e-2))
        })
        .collect();
    let gaps: Vec<(usize, f64)> = cases
        .par_iter()
        .map(|(mode, inst, ea, eb)| {
            let (rob, primal) = match mode {
                0 => (Robustness::Nominal, PrimalMode::Nominal),
                1 => (Robustness::Ctr { eps_a: *ea }, PrimalMode::Ctr { eps_a: *ea }),
                2 => (Robustness::Cvr { eps_b: *eb }, PrimalMode::Cvr { eps_b: *eb }),
                _ => (Robustness::Joint { eps_a: *ea, eps_b: *eb }, PrimalMode::Joint { eps_a: *ea, eps_b: *eb }),
            };
            let h = HistoryView::new(&inst.ctr, &inst.cvr, &inst.wp).expect("equal lengths");
            let fit = fit_duals(h, inst.budget, inst.cap, rob, &FitOptions::default()).expect("valid instance");
            let best = brute_force_primal(&inst.ctr, &inst.cvr, &inst.wp, inst.budget, inst.cap, primal)
                .expect("within enumeration cap");
            (*mode, (best.value - fit.objective).max(0.0))
        })
        .collect();
    let mut checks: Vec<Check> =
        ["nominal", "ctr", "cvr", "joint"].iter().map(|m| Check::new(&format!("{m}_dual_minus_primal"), 1e-6)).collect();
    for (mode, gap) in gaps {
        checks[mode].record(gap);
    }
    checks
}

/// With zero budgets the robust bids and fits reduce to the nominal ones.
pub fn consistency(n: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bids = Check::new("bid_abs", 1e-9);
    let mut fits = Check::new("fit_objective_abs", 1e-6);
    let zero = [Robustness::Ctr { eps_a: 0.0 }, Robustness::Cvr { eps_b: 0.0 }, Robustness::Joint { eps_a: 0.0, eps_b: 0.0 }];
    for _ in 0..n {
        let t = rng.random_range(5..=20);
        let inst = instance(&mut rng, t);
        let duals = DualVars::new(rng.random_range(0.01..2.0), rng.random_range(0.0..2.0))
            .with_lambdas(rng.random_range(1.0..10.0), rng.random_range(1.0..10.0));
        for rob in zero {
            let robust = bids_robust(&duals, inst.cap, &inst.ctr, &inst.cvr, &inst.wp, rob, ActiveSetRule::Won)
                .expect("valid instance");
            for d in &robust.decisions {
                let nominal = bid_nonrobust(&duals, inst.cap, inst.ctr[d.t], inst.cvr[d.t]).expect("positive duals");
                bids.record((d.bid - nominal).abs());
            }
        }
        let h = HistoryView::new(&inst.ctr, &inst.cvr, &inst.wp).expect("equal lengths");
        let opts = FitOptions::default();
        let nominal = fit_duals(h, inst.budget, inst.cap, Robustness::Nominal, &opts).expect("valid instance");
        for rob in zero {
            let fit = fit_duals(h, inst.budget, inst.cap, rob, &opts).expect("valid instance");
            fits.record((fit.objective - nominal.objective).abs());
        }
    }
    vec![bids, fits]
}

/// Eigenvalue test of the block matrix against the scalar condition.
pub fn psd(n: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = Check::new("matrix_vs_scalar_disagreements", 0.0);
    let mut both = [0usize; 2];
    for k in 0..n {
        let t = rng.random_range(1..=50);
        let x: Vec<f64> = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
        let la: f64 = rng.random_range(-0.5..2.0);
        let lb = if k % 2 == 0 {
            rng.random_range(-0.5..2.0)
        } else {
            // Straddle the boundary so both outcomes are common.
            let max_x2 = x.iter().map(|v| v * v).fold(0.0, f64::max);
            0.25 * max_x2 / la.abs().max(1e-3) * rng.random_range(0.5..1.5)
        };
        let c = psd_check(la, lb, &x, 1e-10).expect("T within cap");
        both[usize::from(c.matrix_psd)] += 1;
        agree.record(if c.matrix_psd == c.scalar_condition { 0.0 } else { 1.0 });
    }
    let mut coverage = Check::new("both_outcomes_seen", 0.0);
    coverage.record(if both[0] > 0 && both[1] > 0 { 0.0 } else { 1.0 });
    vec![agree, coverage]
}

fn round_record(ctr: f64, cvr: f64, bid: f64, won: bool) -> RoundRecord {
    RoundRecord {
        round: AuctionRound {
            t: 0,
            ctr_true: vec![ctr],
            cvr_true: vec![cvr],
            ctr_pred: vec![ctr],
            cvr_pred: vec![cvr],
            competitor_bids: vec![],
            winning_price: Some(bid),
        },
        bids: vec![bid],
        winner: won.then_some(0),
        charged: if won { bid } else { 0.0 },
    }
}

/// Metric definitions on hand-checked and random histories.
pub fn metrics(n: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Check::new("examples_abs", 1e-15);
    examples.record(tcv(&[]).abs());
    examples.record(if cpc_avg(&[round_record(0.1, 0.05, 0.2, false)]).is_none() { 0.0 } else { 1.0 });
    let one = [round_record(0.1, 0.05, 0.2, true)];
    examples.record((tcv(&one) - 0.005).abs());
    examples.record((cpc_avg(&one).unwrap_or(f64::NAN) - 2.0).abs());

    let mut homogeneous = Check::new("cpc_scales_with_bids_rel", 1e-12);
    let mut tcv_fixed = Check::new("tcv_ignores_bid_scale_abs", 0.0);
    for _ in 0..n {
        let t = rng.random_range(1..=30);
        let h: Vec<RoundRecord> = (0..t)
            .map(|_| round_record(rng.random_range(0.01..0.3), rng.random_range(0.01..0.3), rng.random_range(0.0..1.0), true))
            .collect();
        let k = rng.random_range(0.1..10.0);
        let scaled: Vec<RoundRecord> = h
            .iter()
            .map(|r| round_record(r.round.ctr_true[0], r.round.cvr_true[0], k * r.bids[0], true))
            .collect();
        let (a, b) = (cpc_avg(&h).unwrap_or(f64::NAN), cpc_avg(&scaled).unwrap_or(f64::NAN));
        homogeneous.record((b - k * a).abs() / (k * a).max(1e-300));
        tcv_fixed.record((tcv(&h) - tcv(&scaled)).abs());
    }

    let mut summary = Check::new("aggregate_abs", 1e-15);
    let run = |tcv: f64| SweepResult {
        policy: Policy::RobustJoint,
        eps_a: 1e-3,
        eps_b: 1e-3,
        seed: 0,
        tcv,
        cpc_avg: None,
        spend_total: 0.0,
        clicks_expected: 0.0,
        flags: RunFlags::default(),
    };
    let cells = aggregate(&[run(1.0), run(3.0)]);
    summary.record((cells[0].mean_tcv - 2.0).abs());
    summary.record((cells[0].std_tcv - 2f64.sqrt()).abs());
    let single = aggregate(&[run(1.0)]);
    summary.record(if single[0].single_seed && single[0].std_tcv == 0.0 { 0.0 } else { 1.0 });
    vec![examples, homogeneous, tcv_fixed, summary]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.as_str().parse::<Suite>().unwrap(), s);
        }
        assert!("everything".parse::<Suite>().is_err());
    }

    #[test]
    fn small_suites_pass() {
        for checks in [worst_case(10, 7), consistency(5, 7), psd(50, 7), metrics(10, 7)] {
            for c in checks {
                assert!(c.passed(), "{c:?}");
            }
        }
    }

    #[test]
    fn table_marks_failures() {
        let mut c = Check::new("x", 1e-3);
        c.record(1.0);
        let r = Report { suite: Suite::Psd, checks: vec![c] };
        assert!(!r.passed());
        assert!(r.to_table().lines().nth(1).unwrap().ends_with(",FAIL"));
    }
}
