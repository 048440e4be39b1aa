//! Experiment sweeps: the cross product of policies, uncertainty grids and
//! seeds, run in parallel and written as a long-form CSV plus a JSON
//! summary.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{generate_synthetic, load_csv, Bandwidth, Dataset, DatasetError, DatasetKind, DatasetSpec, Preset};
use crate::metrics::{aggregate, CellSummary};
use crate::simulator::{run_simulation, OutcomeMode, SimulationConfig, SimulationError};
use crate::types::{Campaign, Policy, SweepResult};

pub const RESULTS_HEADER: &str = "policy,eps_a,eps_b,seed,tcv,cpc_avg,spend_total,clicks_expected,flags";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("config: {0}")]
    Config(String),
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("run {policy} eps_a={eps_a} eps_b={eps_b} seed={seed}: {source}")]
    Run { policy: Policy, eps_a: f64, eps_b: f64, seed: u64, source: SimulationError },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

/// Seven points over `[1e-6, 1e-2]`.
pub fn default_eps_grid() -> Vec<f64> {
    log_grid(1e-6, 1e-2, 7)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub policies: Vec<Policy>,
    #[serde(default = "default_eps_grid")]
    pub eps_a: Vec<f64>,
    #[serde(default = "default_eps_grid")]
    pub eps_b: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "one")]
    pub risk_alpha: f64,
}

fn one() -> f64 {
    1.0
}

/// Dataset settings. With `preset` set, the remaining fields override the
/// preset's values; otherwise `kind` is required.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub preset: Option<Preset>,
    pub kind: Option<DatasetKind>,
    pub horizon: Option<usize>,
    pub n_advertisers: Option<usize>,
    pub ctr_range: Option<(f64, f64)>,
    pub cvr_range: Option<(f64, f64)>,
    pub path: Option<PathBuf>,
    pub kde_bandwidth: Option<Bandwidth>,
    pub competitors: Option<usize>,
    pub competitor_max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSection {
    /// Overrides the per-advertiser budgets of the dataset and preset.
    pub budget: Option<f64>,
    pub cpc_cap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// Defaults to the dataset horizon.
    pub horizon: Option<usize>,
    #[serde(default = "five")]
    pub warmup_rounds: usize,
    #[serde(default = "tenth")]
    pub warmup_fraction: f64,
    pub warmup_bid: Option<f64>,
    #[serde(default)]
    pub bernoulli_outcomes: bool,
    /// Perturb predictions by the cell's uncertainty budgets.
    #[serde(default = "yes")]
    pub inject_noise: bool,
}

fn five() -> usize {
    5
}
fn tenth() -> f64 {
    0.1
}
fn yes() -> bool {
    true
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            horizon: None,
            warmup_rounds: 5,
            warmup_fraction: 0.1,
            warmup_bid: None,
            bernoulli_outcomes: false,
            inject_noise: true,
        }
    }
}

/// Parsed sweep configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub sweep: SweepSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub campaign: CampaignSection,
    #[serde(default)]
    pub simulation: SimulationSection,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self, SweepError> {
        let cfg: SweepConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, SweepError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        // relative dataset paths are taken from the config's directory
        if let (Some(p), Some(dir)) = (&cfg.dataset.path, path.parent()) {
            if p.is_relative() {
                cfg.dataset.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    /// Full synthetic benchmark grid: every policy, default grids, ten seeds.
    pub fn preset(preset: Preset) -> Self {
        Self {
            sweep: SweepSection {
                policies: Policy::ALL.to_vec(),
                eps_a: default_eps_grid(),
                eps_b: default_eps_grid(),
                seeds: (0..10).collect(),
                risk_alpha: 1.0,
            },
            dataset: DatasetSection { preset: Some(preset), ..Default::default() },
            campaign: CampaignSection::default(),
            simulation: SimulationSection::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let err = |m: &str| Err(SweepError::Config(m.to_string()));
        let s = &self.sweep;
        if s.policies.is_empty() {
            return err("sweep.policies is empty");
        }
        if s.eps_a.is_empty() || s.eps_b.is_empty() {
            return err("uncertainty grid is empty");
        }
        if s.eps_a.iter().chain(&s.eps_b).any(|e| !(e.is_finite() && *e >= 0.0)) {
            return err("uncertainty grid values must be finite and non-negative");
        }
        if s.seeds.is_empty() {
            return err("sweep.seeds is empty");
        }
        if !(s.risk_alpha.is_finite() && s.risk_alpha >= 0.0) {
            return err("sweep.risk_alpha must be finite and non-negative");
        }
        for v in [self.campaign.budget, self.campaign.cpc_cap].into_iter().flatten() {
            if !(v.is_finite() && v > 0.0) {
                return err("campaign budget and cpc_cap must be positive");
            }
        }
        if self.dataset.preset.is_none() && self.dataset.kind.is_none() {
            return err("dataset needs either `preset` or `kind`");
        }
        self.dataset_spec()?.validate()?;
        Ok(())
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec, SweepError> {
        let d = &self.dataset;
        let mut spec = match (d.preset, d.kind) {
            (Some(p), _) => p.spec(),
            (None, Some(kind)) => DatasetSpec { kind, ..DatasetSpec::synthetic(100, 10) },
            (None, None) => return Err(SweepError::Config("dataset needs either `preset` or `kind`".into())),
        };
        if let Some(k) = d.kind {
            spec.kind = k;
        }
        if let Some(v) = d.horizon {
            spec.horizon = v;
        }
        if let Some(v) = d.n_advertisers {
            spec.n_advertisers = v;
        }
        if let Some(v) = d.ctr_range {
            spec.ctr_range = v;
        }
        if let Some(v) = d.cvr_range {
            spec.cvr_range = v;
        }
        if d.path.is_some() {
            spec.path = d.path.clone();
        }
        if let Some(v) = d.kde_bandwidth {
            spec.kde_bandwidth = v;
        }
        if let Some(v) = d.competitors {
            spec.competitors = v;
        }
        if let Some(v) = d.competitor_max {
            spec.competitor_max = v;
        }
        Ok(spec)
    }

    fn dataset_for_seed(&self, seed: u64) -> Result<Dataset, SweepError> {
        let spec = self.dataset_spec()?;
        Ok(match (self.dataset.preset, spec.kind) {
            (Some(p), DatasetKind::Synthetic) => p.generate_from(&spec, seed)?,
            (None, DatasetKind::Synthetic) => generate_synthetic(&spec, seed)?,
            _ => load_csv(&spec, seed)?,
        })
    }

    fn campaigns(&self, ds: &Dataset, policy: Policy, eps_a: f64, eps_b: f64) -> Vec<Campaign> {
        let (budget, cap) = self.dataset.preset.map_or((1.0, 1.0), Preset::budget_and_cap);
        (0..ds.n_advertisers())
            .map(|id| Campaign {
                id,
                budget: self.campaign.budget.or(ds.budgets.as_ref().map(|b| b[id])).unwrap_or(budget),
                cpc_cap: self.campaign.cpc_cap.or(ds.cpc_caps.as_ref().map(|c| c[id])).unwrap_or(cap),
                policy,
                eps_a,
                eps_b,
                risk_alpha: self.sweep.risk_alpha,
            })
            .collect()
    }
}

/// One simulated cell with its budget audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub result: SweepResult,
    /// Largest `spend − budget` seen over all campaigns and steps.
    pub max_overspend: f64,
    pub budget_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepMetadata {
    pub dataset_kind: DatasetKind,
    pub preset: Option<Preset>,
    pub build_id: String,
    pub horizon: usize,
    pub n_campaigns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutput {
    pub metadata: SweepMetadata,
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
}

impl SweepOutput {
    pub fn results(&self) -> Vec<SweepResult> {
        self.runs.iter().map(|r| r.result.clone()).collect()
    }
}

/// Version plus the build-time `ROBUSTBID_BUILD_ID`, when set.
pub fn build_id() -> String {
    match option_env!("ROBUSTBID_BUILD_ID") {
        Some(id) if !id.is_empty() => format!("v{}-{id}", env!("CARGO_PKG_VERSION")),
        _ => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

/// Runs every cell of `cfg` on `jobs` worker threads (0 = rayon default).
/// Results are ordered by policy, eps_a, eps_b and seed as listed in the
/// config regardless of scheduling.
pub fn run_sweep(cfg: &SweepConfig, jobs: usize) -> Result<SweepOutput, SweepError> {
    cfg.validate()?;
    let datasets: Vec<Dataset> = cfg.sweep.seeds.iter().map(|&s| cfg.dataset_for_seed(s)).collect::<Result<_, _>>()?;
    let horizon = cfg.simulation.horizon.unwrap_or(datasets[0].horizon());
    let n_campaigns = datasets[0].n_advertisers();

    let mut cells = Vec::new();
    for &policy in &cfg.sweep.policies {
        for &eps_a in &cfg.sweep.eps_a {
            for &eps_b in &cfg.sweep.eps_b {
                for (k, &seed) in cfg.sweep.seeds.iter().enumerate() {
                    cells.push((policy, eps_a, eps_b, seed, k));
                }
            }
        }
    }
    let run_cell = |&(policy, eps_a, eps_b, seed, k): &(Policy, f64, f64, u64, usize)| -> Result<RunRecord, SweepError> {
        let ds = &datasets[k];
        let sim = &cfg.simulation;
        let mut sc = SimulationConfig::new(horizon, cfg.campaigns(ds, policy, eps_a, eps_b), seed);
        if sim.inject_noise {
            sc.eps_a = eps_a;
            sc.eps_b = eps_b;
        }
        sc.warmup_rounds = sim.warmup_rounds;
        sc.warmup_fraction = sim.warmup_fraction;
        sc.warmup_bid = sim.warmup_bid;
        if sim.bernoulli_outcomes {
            sc.outcome = OutcomeMode::Bernoulli;
        }
        let out = run_simulation(sc, ds).map_err(|source| SweepError::Run { policy, eps_a, eps_b, seed, source })?;
        let mut spend = vec![0.0; out.state.n_campaigns()];
        let mut max_overspend = f64::NEG_INFINITY;
        let mut budget_violations = 0;
        for rec in &out.state.history {
            if let Some(w) = rec.winner {
                spend[w] += rec.charged;
            }
            for (i, s) in spend.iter().enumerate() {
                let over = s - out.state.initial_budget[i];
                max_overspend = max_overspend.max(over);
                if over > 1e-12 * out.state.initial_budget[i] {
                    budget_violations += 1;
                }
            }
        }
        Ok(RunRecord {
            result: SweepResult {
                policy,
                eps_a,
                eps_b,
                seed,
                tcv: out.tcv,
                cpc_avg: out.cpc_avg,
                spend_total: out.spend_total,
                clicks_expected: out.clicks_expected,
                flags: out.flags,
            },
            max_overspend,
            budget_violations,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| SweepError::Pool(e.to_string()))?;
    let runs: Vec<RunRecord> = pool.install(|| cells.par_iter().map(run_cell).collect::<Result<_, _>>())?;
    let results: Vec<SweepResult> = runs.iter().map(|r| r.result.clone()).collect();
    Ok(SweepOutput {
        metadata: SweepMetadata {
            dataset_kind: datasets[0].kind,
            preset: cfg.dataset.preset,
            build_id: build_id(),
            horizon,
            n_campaigns,
        },
        cells: aggregate(&results),
        runs,
    })
}

/// Writes rows under [`RESULTS_HEADER`]. An undefined CPC is an empty field.
pub fn write_results_csv<W: Write>(results: &[SweepResult], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{RESULTS_HEADER}")?;
    for r in results {
        let cpc = r.cpc_avg.map(|c| c.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.policy, r.eps_a, r.eps_b, r.seed, r.tcv, cpc, r.spend_total, r.clicks_expected, r.flags.to_field()
        )?;
    }
    w.flush()
}

#[derive(Serialize)]
struct Summary<'a> {
    metadata: &'a SweepMetadata,
    cells: &'a [CellSummary],
}

pub fn write_summary_json<W: Write>(out: &SweepOutput, mut w: W) -> Result<(), SweepError> {
    serde_json::to_writer_pretty(&mut w, &Summary { metadata: &out.metadata, cells: &out.cells })?;
    writeln!(w)?;
    Ok(())
}

/// Writes `results.csv` and `summary.json` into `dir`, creating it.
pub fn write_outputs(out: &SweepOutput, dir: &Path) -> Result<(PathBuf, PathBuf), SweepError> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join("results.csv");
    let json_path = dir.join("summary.json");
    write_results_csv(&out.results(), std::io::BufWriter::new(std::fs::File::create(&csv_path)?))?;
    write_summary_json(out, std::io::BufWriter::new(std::fs::File::create(&json_path)?))?;
    Ok((csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid() {
        let g = default_eps_grid();
        assert_eq!(g.len(), 7);
        assert!((g[0] - 1e-6).abs() < 1e-20 && (g[6] - 1e-2).abs() < 1e-16);
        assert!((g[3] - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn config_errors() {
        let bad = "[sweep]\npolicies = [\"non-robust\"]\neps_a = []\nseeds = [1]\n[dataset]\npreset = \"synthetic\"\n";
        assert!(matches!(SweepConfig::from_toml(bad), Err(SweepError::Config(_))));
        let bad = "[sweep]\npolicies = [\"greedy\"]\nseeds = [1]\n";
        assert!(matches!(SweepConfig::from_toml(bad), Err(SweepError::Parse(_))));
        let bad = "[sweep]\npolicies = [\"risk\"]\nseeds = [1]\n";
        assert!(SweepConfig::from_toml(bad).is_err());
        let bad = "[sweep]\npolicies = [\"risk\"]\nseeds = [1]\ntypo = 3\n[dataset]\npreset = \"synthetic\"\n";
        assert!(SweepConfig::from_toml(bad).is_err());
    }

    #[test]
    fn tiny_sweep_rows_and_order() {
        let text = r#"
[sweep]
policies = ["non-robust", "robust-joint"]
eps_a = [1e-4, 1e-3]
eps_b = [1e-4]
seeds = [3, 1]

[dataset]
preset = "synthetic"
horizon = 15
n_advertisers = 3
"#;
        let cfg = SweepConfig::from_toml(text).unwrap();
        let out = run_sweep(&cfg, 1).unwrap();
        assert_eq!(out.runs.len(), 2 * 2 * 2);
        let keys: Vec<(Policy, f64, u64)> = out.runs.iter().map(|r| (r.result.policy, r.result.eps_a, r.result.seed)).collect();
        assert_eq!(keys[0], (Policy::NonRobust, 1e-4, 3));
        assert_eq!(keys[1], (Policy::NonRobust, 1e-4, 1));
        assert_eq!(keys[7], (Policy::RobustJoint, 1e-3, 1));
        assert_eq!(out.cells.len(), 4);
        assert!(out.runs.iter().all(|r| r.budget_violations == 0));

        let mut a = Vec::new();
        write_results_csv(&out.results(), &mut a).unwrap();
        let again = run_sweep(&cfg, 2).unwrap();
        let mut b = Vec::new();
        write_results_csv(&again.results(), &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with(RESULTS_HEADER));
        assert_eq!(text.lines().count(), 9);
    }

    #[test]
    fn csv_marks_undefined_cpc_as_empty() {
        let r = SweepResult {
            policy: Policy::Risk,
            eps_a: 1e-6,
            eps_b: 0.01,
            seed: 42,
            tcv: 0.0,
            cpc_avg: None,
            spend_total: 0.0,
            clicks_expected: 0.0,
            flags: Default::default(),
        };
        let mut buf = Vec::new();
        write_results_csv(&[r], &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap().lines().nth(1).unwrap().to_string();
        assert_eq!(line, "risk,0.000001,0.01,42,0,,0,0,");
    }
}
