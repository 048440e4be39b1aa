//! Auction streams: synthetic generation, CSV ingestion and export, the
//! smoothed competitor-bid sampler, and the three benchmark presets.

use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{AuctionRound, TypeError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error("raw bid sample is empty")]
    EmptySample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Synthetic,
    CsvReplay,
    CsvSmoothed,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Synthetic => "synthetic",
            DatasetKind::CsvReplay => "csv-replay",
            DatasetKind::CsvSmoothed => "csv-smoothed",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kernel bandwidth of the competitor-bid sampler.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Auto => s.serialize_str("auto"),
            Bandwidth::Fixed(h) => s.serialize_f64(*h),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(h) if h >= 0.0 && h.is_finite() => Ok(Bandwidth::Fixed(h)),
            Raw::Num(h) => Err(serde::de::Error::custom(format!("bandwidth {h} must be finite and >= 0"))),
            Raw::Str(s) if s == "auto" => Ok(Bandwidth::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("unknown bandwidth `{s}`"))),
        }
    }
}

/// Where rounds come from and how they are shaped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_advertisers")]
    pub n_advertisers: usize,
    /// Half-open `(low, high]` range of true CTRs.
    #[serde(default = "default_range")]
    pub ctr_range: (f64, f64),
    #[serde(default = "default_range")]
    pub cvr_range: (f64, f64),
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub kde_bandwidth: Bandwidth,
    /// Exogenous competitor bids per synthetic round.
    #[serde(default = "default_competitors")]
    pub competitors: usize,
    /// Synthetic competitor bids are uniform on `(0, competitor_max]`.
    #[serde(default = "default_competitor_max")]
    pub competitor_max: f64,
}

fn default_horizon() -> usize {
    100
}
fn default_advertisers() -> usize {
    10
}
fn default_range() -> (f64, f64) {
    (0.01, 0.1)
}
fn default_competitors() -> usize {
    1
}
fn default_competitor_max() -> f64 {
    0.1
}

impl DatasetSpec {
    pub fn synthetic(horizon: usize, n_advertisers: usize) -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            horizon,
            n_advertisers,
            ctr_range: default_range(),
            cvr_range: default_range(),
            path: None,
            kde_bandwidth: Bandwidth::Auto,
            competitors: default_competitors(),
            competitor_max: default_competitor_max(),
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let err = |m: String| Err(DatasetError::Spec(m));
        if self.horizon == 0 {
            return err("horizon must be at least 1".into());
        }
        if self.kind == DatasetKind::Synthetic && self.n_advertisers == 0 {
            return err("n_advertisers must be at least 1".into());
        }
        for (name, (lo, hi)) in [("ctr_range", self.ctr_range), ("cvr_range", self.cvr_range)] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0 && hi > 0.0) {
                return err(format!("{name} = ({lo}, {hi}] must lie within (0, 1]"));
            }
        }
        if !(self.competitor_max >= 0.0 && self.competitor_max.is_finite()) {
            return err("competitor_max must be finite and non-negative".into());
        }
        if self.kind != DatasetKind::Synthetic && self.path.is_none() {
            return err(format!("{} datasets need a path", self.kind));
        }
        Ok(())
    }
}

/// Rounds plus optional per-advertiser budget and CPC cap read from CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub rounds: Vec<AuctionRound>,
    pub budgets: Option<Vec<f64>>,
    pub cpc_caps: Option<Vec<f64>>,
}

impl Dataset {
    pub fn n_advertisers(&self) -> usize {
        self.rounds.first().map_or(0, AuctionRound::n_advertisers)
    }

    pub fn horizon(&self) -> usize {
        self.rounds.len()
    }
}

/// Uniform draw on `(lo, hi]`.
fn half_open<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    hi - rng.random::<f64>() * (hi - lo)
}

/// iid uniform rates in the configured ranges and `spec.competitors`
/// competitor bids per round. Predictions equal the true rates.
pub fn generate_synthetic(spec: &DatasetSpec, seed: u64) -> Result<Dataset, DatasetError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n_advertisers;
    let rounds = (0..spec.horizon)
        .map(|t| {
            let ctr: Vec<f64> = (0..n).map(|_| half_open(&mut rng, spec.ctr_range.0, spec.ctr_range.1)).collect();
            let cvr: Vec<f64> = (0..n).map(|_| half_open(&mut rng, spec.cvr_range.0, spec.cvr_range.1)).collect();
            let competitor_bids = (0..spec.competitors).map(|_| half_open(&mut rng, 0.0, spec.competitor_max)).collect();
            AuctionRound {
                t,
                ctr_pred: ctr.clone(),
                cvr_pred: cvr.clone(),
                ctr_true: ctr,
                cvr_true: cvr,
                competitor_bids,
                winning_price: None,
            }
        })
        .collect();
    Ok(Dataset { kind: DatasetKind::Synthetic, rounds, budgets: None, cpc_caps: None })
}

/// Competitor-bid sampler: a raw bid drawn uniformly plus Gaussian jitter,
/// truncated at zero.
#[derive(Debug, Clone)]
pub struct BidSampler {
    raw: Vec<f64>,
    bandwidth: f64,
    rng: ChaCha8Rng,
}

/// Rule-of-thumb bandwidth `1.06·σ̂·n^(−1/5)`, at least `1e-6`.
pub fn auto_bandwidth(raw: &[f64]) -> f64 {
    let n = raw.len() as f64;
    let sd = if raw.len() > 1 {
        let mean = raw.iter().sum::<f64>() / n;
        (raw.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (1.06 * sd * n.powf(-0.2)).max(1e-6)
}

impl BidSampler {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn sample(&mut self) -> f64 {
        let base = self.raw[self.rng.random_range(0..self.raw.len())];
        if self.bandwidth == 0.0 {
            return base;
        }
        let jitter: f64 = Normal::new(0.0, self.bandwidth).expect("finite bandwidth").sample(&mut self.rng);
        (base + jitter).max(0.0)
    }
}

pub fn smooth_bid_distribution(raw_bids: &[f64], bandwidth: Bandwidth, seed: u64) -> Result<BidSampler, DatasetError> {
    if raw_bids.is_empty() {
        return Err(DatasetError::EmptySample);
    }
    if raw_bids.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
        return Err(DatasetError::Spec("raw bids must be finite and non-negative".into()));
    }
    let bandwidth = match bandwidth {
        Bandwidth::Auto => auto_bandwidth(raw_bids),
        Bandwidth::Fixed(h) if h >= 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(DatasetError::Spec(format!("bandwidth {h} must be finite and >= 0"))),
    };
    Ok(BidSampler { raw: raw_bids.to_vec(), bandwidth, rng: ChaCha8Rng::seed_from_u64(seed) })
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    t: usize,
    advertiser_id: usize,
    ctr_true: f64,
    cvr_true: f64,
    #[serde(default)]
    ctr_pred: Option<f64>,
    #[serde(default)]
    cvr_pred: Option<f64>,
    #[serde(default)]
    competitor_bid: Option<f64>,
    #[serde(default)]
    budget: Option<f64>,
    #[serde(default)]
    cpc_cap: Option<f64>,
}

/// Parses the CSV schema `t, advertiser_id, ctr_true, cvr_true, ctr_pred,
/// cvr_pred, competitor_bid, budget, cpc_cap`. The prediction columns may
/// be missing, in which case the true rates are used. Each row may carry
/// one competitor bid for its round. Errors name the 1-based data row.
pub fn read_csv<R: Read>(reader: R, kind: DatasetKind) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in ["t", "advertiser_id", "ctr_true", "cvr_true"] {
        if !headers.iter().any(|h| h == required) {
            return Err(DatasetError::Row { row: 0, message: format!("missing column `{required}`") });
        }
    }
    let mut rows: Vec<(usize, CsvRow)> = Vec::new();
    for (i, rec) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = i + 1;
        let r = rec.map_err(|e| DatasetError::Row { row, message: e.to_string() })?;
        let bad = |e: TypeError| DatasetError::Row { row, message: e.to_string() };
        for (field, v) in [
            ("ctr_true", Some(r.ctr_true)),
            ("cvr_true", Some(r.cvr_true)),
            ("ctr_pred", r.ctr_pred),
            ("cvr_pred", r.cvr_pred),
        ] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(bad(TypeError::RateOutOfRange { field, index: r.advertiser_id, value: v }));
                }
            }
        }
        for (field, v) in [("competitor_bid", r.competitor_bid), ("budget", r.budget), ("cpc_cap", r.cpc_cap)] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(bad(TypeError::Negative { field, value: v }));
                }
            }
        }
        rows.push((row, r));
    }
    if rows.is_empty() {
        return Err(DatasetError::Spec("no data rows".into()));
    }
    rows.sort_by_key(|(_, r)| (r.t, r.advertiser_id));

    let n = rows.iter().map(|(_, r)| r.advertiser_id).max().unwrap_or(0) + 1;
    let mut budgets: Vec<Option<f64>> = vec![None; n];
    let mut caps: Vec<Option<f64>> = vec![None; n];
    let mut rounds: Vec<AuctionRound> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let t = rows[i].1.t;
        let mut j = i;
        while j < rows.len() && rows[j].1.t == t {
            j += 1;
        }
        let group = &rows[i..j];
        // repeated rows of an advertiser only add competitor bids
        let mut ids: Vec<usize> = group.iter().map(|(_, r)| r.advertiser_id).collect();
        ids.dedup();
        if ids != (0..n).collect::<Vec<_>>() {
            return Err(DatasetError::Row {
                row: group[0].0,
                message: format!("round t={t} must list advertisers 0..{}", n - 1),
            });
        }
        let mut round = AuctionRound {
            t: rounds.len(),
            ctr_true: Vec::with_capacity(n),
            cvr_true: Vec::with_capacity(n),
            ctr_pred: Vec::with_capacity(n),
            cvr_pred: Vec::with_capacity(n),
            competitor_bids: Vec::new(),
            winning_price: None,
        };
        for (row, r) in group {
            let rates = [r.ctr_true, r.cvr_true, r.ctr_pred.unwrap_or(r.ctr_true), r.cvr_pred.unwrap_or(r.cvr_true)];
            if r.advertiser_id < round.ctr_true.len() {
                let id = r.advertiser_id;
                let first = [round.ctr_true[id], round.cvr_true[id], round.ctr_pred[id], round.cvr_pred[id]];
                if rates != first {
                    return Err(DatasetError::Row {
                        row: *row,
                        message: format!("repeated row for advertiser {id} at t={t} has different rates"),
                    });
                }
            } else {
                round.ctr_true.push(rates[0]);
                round.cvr_true.push(rates[1]);
                round.ctr_pred.push(rates[2]);
                round.cvr_pred.push(rates[3]);
            }
            if let Some(b) = r.competitor_bid {
                round.competitor_bids.push(b);
            }
            for (slot, v, name) in [(&mut budgets, r.budget, "budget"), (&mut caps, r.cpc_cap, "cpc_cap")] {
                if let Some(v) = v {
                    match slot[r.advertiser_id] {
                        Some(prev) if prev != v => {
                            return Err(DatasetError::Row {
                                row: *row,
                                message: format!("{name} {v} conflicts with earlier value {prev} for advertiser {}", r.advertiser_id),
                            })
                        }
                        _ => slot[r.advertiser_id] = Some(v),
                    }
                }
            }
        }
        rounds.push(round);
        i = j;
    }
    let collect = |v: Vec<Option<f64>>| v.iter().all(Option::is_some).then(|| v.into_iter().flatten().collect());
    Ok(Dataset { kind, rounds, budgets: collect(budgets), cpc_caps: collect(caps) })
}

/// Reads the file at `spec.path`. For `CsvSmoothed` the competitor bids of
/// every round are redrawn from the smoothed distribution of all bids in
/// the file, keeping the per-round count (at least one).
pub fn load_csv(spec: &DatasetSpec, seed: u64) -> Result<Dataset, DatasetError> {
    spec.validate()?;
    let path = spec.path.as_ref().ok_or_else(|| DatasetError::Spec("missing path".into()))?;
    let file = std::fs::File::open(path)?;
    let mut ds = read_csv(std::io::BufReader::new(file), spec.kind)?;
    if spec.kind == DatasetKind::CsvSmoothed {
        let raw: Vec<f64> = ds.rounds.iter().flat_map(|r| r.competitor_bids.iter().copied()).collect();
        let mut sampler = smooth_bid_distribution(&raw, spec.kde_bandwidth, seed)?;
        for r in &mut ds.rounds {
            let k = r.competitor_bids.len().max(1);
            r.competitor_bids = (0..k).map(|_| sampler.sample()).collect();
        }
    }
    Ok(ds)
}

/// Writes `ds` in the schema read by [`read_csv`]. Round `t`'s competitor
/// bids go on its rows, one per row; when there are more bids than
/// advertisers the last advertiser's row is repeated to carry the rest.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "advertiser_id", "ctr_true", "cvr_true", "ctr_pred", "cvr_pred", "competitor_bid", "budget", "cpc_cap"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &ds.rounds {
        let n = r.n_advertisers();
        if n == 0 {
            return Err(DatasetError::Spec(format!("round {} has no advertisers", r.t)));
        }
        for j in 0..n.max(r.competitor_bids.len()) {
            let i = j.min(n - 1);
            w.write_record([
                r.t.to_string(),
                i.to_string(),
                r.ctr_true[i].to_string(),
                r.cvr_true[i].to_string(),
                r.ctr_pred[i].to_string(),
                r.cvr_pred[i].to_string(),
                opt(r.competitor_bids.get(j).copied()),
                opt(ds.budgets.as_ref().map(|b| b[i])),
                opt(ds.cpc_caps.as_ref().map(|c| c[i])),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Built-in benchmark configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Synthetic,
    IpinyouLike,
    BatLike,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Synthetic, Preset::IpinyouLike, Preset::BatLike];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Synthetic => "synthetic",
            Preset::IpinyouLike => "ipinyou-like",
            Preset::BatLike => "bat-like",
        }
    }

    /// Default budget and CPC cap of every campaign.
    pub fn budget_and_cap(self) -> (f64, f64) {
        match self {
            Preset::Synthetic => (1.0, 1.0),
            Preset::IpinyouLike => (500.0, 500.0),
            Preset::BatLike => (300.0, 300.0),
        }
    }

    pub fn spec(self) -> DatasetSpec {
        let mut spec = DatasetSpec::synthetic(100, 10);
        match self {
            Preset::Synthetic => {}
            Preset::IpinyouLike => {
                spec.n_advertisers = 1;
                spec.competitors = IPINYOU_COMPETITORS;
            }
            Preset::BatLike => {
                spec.ctr_range = (0.0017, 0.63);
                spec.cvr_range = (0.001, 0.3);
                spec.competitor_max = 0.63 * 300.0;
            }
        }
        spec
    }

    /// Generates the preset's dataset.
    ///
    /// * `synthetic`: uniform rates in (0.01, 0.1], one competitor bid per
    ///   round uniform in (0, 0.1].
    /// * `ipinyou-like`: one campaign against nine competitors whose bids
    ///   come from a smoothed distribution of typical exchange bid prices.
    /// * `bat-like`: wide rate ranges, per-campaign budgets log-uniform in
    ///   [4, 6700] and a CPC cap of 300.
    pub fn generate(self, seed: u64) -> Result<Dataset, DatasetError> {
        self.generate_from(&self.spec(), seed)
    }

    /// [`Preset::generate`] with the base generator settings replaced by
    /// `spec`.
    pub fn generate_from(self, spec: &DatasetSpec, seed: u64) -> Result<Dataset, DatasetError> {
        let mut ds = generate_synthetic(spec, seed)?;
        match self {
            Preset::Synthetic => {}
            Preset::IpinyouLike => {
                let mut sampler = smooth_bid_distribution(&IPINYOU_RAW_BIDS, Bandwidth::Auto, seed ^ 0x9e37_79b9_7f4a_7c15)?;
                for r in &mut ds.rounds {
                    r.competitor_bids = (0..IPINYOU_COMPETITORS).map(|_| sampler.sample()).collect();
                }
                ds.kind = DatasetKind::CsvSmoothed;
            }
            Preset::BatLike => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb47);
                let n = ds.n_advertisers();
                let (lo, hi) = (4f64.ln(), 6700f64.ln());
                ds.budgets = Some((0..n).map(|_| rng.random_range(lo..=hi).exp()).collect());
                ds.cpc_caps = Some(vec![300.0; n]);
            }
        }
        Ok(ds)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| DatasetError::Spec(format!("unknown preset `{s}`")))
    }
}

const IPINYOU_COMPETITORS: usize = 9;

/// Representative per-impression bid prices, in the exchange's units.
const IPINYOU_RAW_BIDS: [f64; 24] = [
    12.0, 15.0, 18.0, 20.0, 20.0, 22.0, 23.0, 24.0, 25.0, 25.0, 25.0, 26.0, 27.0, 28.0, 30.0, 30.0, 31.0, 33.0, 35.0,
    38.0, 40.0, 45.0, 52.0, 60.0,
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_respects_ranges() {
        let ds = generate_synthetic(&DatasetSpec::synthetic(100, 10), 7).unwrap();
        assert_eq!(ds.rounds.len(), 100);
        for r in &ds.rounds {
            r.validate().unwrap();
            for v in r.ctr_true.iter().chain(&r.cvr_true) {
                assert!(*v > 0.01 && *v <= 0.1);
            }
            assert_eq!(r.competitor_bids.len(), 1);
            assert!(r.competitor_bids[0] > 0.0 && r.competitor_bids[0] <= 0.1);
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = DatasetSpec::synthetic(20, 3);
        let a = generate_synthetic(&spec, 1).unwrap();
        let b = generate_synthetic(&spec, 1).unwrap();
        let c = generate_synthetic(&spec, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_csv(&a, &mut buf_a).unwrap();
        write_csv(&b, &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn degenerate_range() {
        let mut spec = DatasetSpec::synthetic(5, 2);
        spec.ctr_range = (0.05, 0.05);
        let ds = generate_synthetic(&spec, 0).unwrap();
        assert!(ds.rounds.iter().all(|r| r.ctr_true.iter().all(|&c| c == 0.05)));
    }

    #[test]
    fn minimal_file() {
        let text = "t,advertiser_id,ctr_true,cvr_true,competitor_bid\n0,0,0.1,0.2,0.05\n";
        let ds = read_csv(text.as_bytes(), DatasetKind::CsvReplay).unwrap();
        assert_eq!(ds.rounds.len(), 1);
        assert_eq!(ds.rounds[0].ctr_pred, vec![0.1]);
        assert_eq!(ds.rounds[0].competitor_bids, vec![0.05]);
        assert!(ds.budgets.is_none());
    }

    #[test]
    fn bad_rate_names_row() {
        let mut text = String::from("t,advertiser_id,ctr_true,cvr_true\n");
        for t in 0..6 {
            text.push_str(&format!("{t},0,0.1,0.1\n"));
        }
        text.push_str("6,0,1.5,0.1\n");
        let err = read_csv(text.as_bytes(), DatasetKind::CsvReplay).unwrap_err();
        assert!(err.to_string().starts_with("row 7:"), "{err}");
    }

    #[test]
    fn missing_column_and_negative_price() {
        let err = read_csv("t,advertiser_id,ctr_true\n0,0,0.1\n".as_bytes(), DatasetKind::CsvReplay).unwrap_err();
        assert!(err.to_string().contains("cvr_true"));
        let err = read_csv("t,advertiser_id,ctr_true,cvr_true,competitor_bid\n0,0,0.1,0.1,-1\n".as_bytes(), DatasetKind::CsvReplay)
            .unwrap_err();
        assert!(err.to_string().starts_with("row 1:"));
    }

    #[test]
    fn bat_style_rates_parse() {
        let text = "t,advertiser_id,ctr_true,cvr_true,ctr_pred,cvr_pred,competitor_bid,budget,cpc_cap\n\
                    0,0,0.0017,0.001,0.0017,0.001,10,4,300\n\
                    0,1,0.63,0.3,0.6,0.29,,6700,300\n";
        let ds = read_csv(text.as_bytes(), DatasetKind::CsvReplay).unwrap();
        assert_eq!(ds.budgets, Some(vec![4.0, 6700.0]));
        assert_eq!(ds.cpc_caps, Some(vec![300.0, 300.0]));
        assert_eq!(ds.rounds[0].competitor_bids, vec![10.0]);
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        for preset in Preset::ALL {
            let ds = preset.generate(3).unwrap();
            let mut buf = Vec::new();
            write_csv(&ds, &mut buf).unwrap();
            let back = read_csv(buf.as_slice(), ds.kind).unwrap();
            assert_eq!(back, ds, "{preset}");
        }
    }

    #[test]
    fn sampler_properties() {
        let mut s = smooth_bid_distribution(&[1.0, 2.0], Bandwidth::Fixed(0.0), 1).unwrap();
        for _ in 0..100 {
            let v = s.sample();
            assert!(v == 1.0 || v == 2.0);
        }
        let mut s = smooth_bid_distribution(&[0.0, 0.01], Bandwidth::Fixed(1.0), 1).unwrap();
        assert!((0..1000).all(|_| s.sample() >= 0.0));
        let mut s = smooth_bid_distribution(&[2.0, 3.0], Bandwidth::Fixed(0.1), 5).unwrap();
        let mean = (0..100_000).map(|_| s.sample()).sum::<f64>() / 1e5;
        assert!((mean - 2.5).abs() < 0.01, "{mean}");
        let s = smooth_bid_distribution(&[4.0, 4.0, 4.0], Bandwidth::Auto, 0).unwrap();
        assert_eq!(s.bandwidth(), 1e-6);
        assert!(smooth_bid_distribution(&[], Bandwidth::Auto, 0).is_err());
    }

    #[test]
    fn presets() {
        let ds = Preset::IpinyouLike.generate(0).unwrap();
        assert_eq!(ds.n_advertisers(), 1);
        assert!(ds.rounds.iter().all(|r| r.competitor_bids.len() == 9));
        let ds = Preset::BatLike.generate(0).unwrap();
        let budgets = ds.budgets.unwrap();
        assert!(budgets.iter().all(|&b| (4.0..=6700.0).contains(&b)));
        for r in &ds.rounds {
            assert!(r.ctr_true.iter().all(|&c| c > 0.0017 && c <= 0.63));
        }
    }
}
