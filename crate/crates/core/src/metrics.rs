//! Total conversion value, average cost per click and cross-seed summaries.

use serde::Serialize;

use crate::types::{Policy, RoundRecord, SweepResult};

/// `Σ_t CTR·CVR` of the winning campaign, from the true rates.
pub fn tcv(history: &[RoundRecord]) -> f64 {
    history
        .iter()
        .filter_map(|r| r.winner.map(|w| r.round.ctr_true[w] * r.round.cvr_true[w]))
        .sum()
}

/// Total winning bids over total expected clicks. `None` when no click was
/// bought.
pub fn cpc_avg(history: &[RoundRecord]) -> Option<f64> {
    let mut spend = 0.0;
    let mut clicks = 0.0;
    for r in history {
        if let Some(w) = r.winner {
            spend += r.bids[w];
            clicks += r.round.ctr_true[w];
        }
    }
    (clicks > 0.0).then(|| spend / clicks)
}

/// Mean and sample standard deviation of one (policy, eps_a, eps_b) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub policy: Policy,
    pub eps_a: f64,
    pub eps_b: f64,
    pub n_seeds: usize,
    /// Runs with a convergence flag.
    pub n_flagged: usize,
    pub mean_tcv: f64,
    pub std_tcv: f64,
    /// Over the runs where the CPC is defined; `None` if there are none.
    pub mean_cpc: Option<f64>,
    pub std_cpc: Option<f64>,
    /// Set when the cell holds a single run, whose std is reported as 0.
    pub single_seed: bool,
}

/// `(mean, std)` with the `n − 1` denominator; std is 0 for one value.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

/// Groups by (policy, eps_a, eps_b) in order of first appearance.
pub fn aggregate(results: &[SweepResult]) -> Vec<CellSummary> {
    let mut keys: Vec<(Policy, u64, u64)> = Vec::new();
    let mut groups: Vec<Vec<&SweepResult>> = Vec::new();
    for r in results {
        let key = (r.policy, r.eps_a.to_bits(), r.eps_b.to_bits());
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r),
            None => {
                keys.push(key);
                groups.push(vec![r]);
            }
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let tcv: Vec<f64> = g.iter().map(|r| r.tcv).collect();
            let cpc: Vec<f64> = g.iter().filter_map(|r| r.cpc_avg).collect();
            let (mean_tcv, std_tcv) = mean_std(&tcv).expect("groups are non-empty");
            let cpc_stats = mean_std(&cpc);
            CellSummary {
                policy: g[0].policy,
                eps_a: g[0].eps_a,
                eps_b: g[0].eps_b,
                n_seeds: g.len(),
                n_flagged: g.iter().filter(|r| r.flags.has_convergence_issue()).count(),
                mean_tcv,
                std_tcv,
                mean_cpc: cpc_stats.map(|s| s.0),
                std_cpc: cpc_stats.map(|s| s.1),
                single_seed: g.len() == 1,
            }
        })
        .collect()
}
