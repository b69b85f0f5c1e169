//! Synthetic regime-switching corpora.
//!
//! Each farm carries a latent level in [0, 1] driven by a cyclic schedule of
//! regime segments. Different base-model families win in different regimes:
//! a strongly autocorrelated AR(1) regime favors lag-following models, a
//! bounded-trend regime favors short-horizon extrapolation, and a piecewise
//! threshold map defeats linear predictors outright. Farm innovations are
//! mixed across the k-NN graph with weights `rho^hops`, so cross-farm
//! correlation decays with graph distance and vanishes at rho = 0.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::frames::{FarmMeta, TimeSeriesFrame};
use super::graph::build_graph;
use crate::error::{Error, Result};
use crate::seed;

/// Default corpus start: 2010-01-01T00:00:00Z.
pub const DEFAULT_START_EPOCH: i64 = 1262304000;

const CLAMP_LO: f64 = 0.01;
const CLAMP_HI: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegimeKind {
    /// Mean-reverting linear dynamics around `level`:
    /// z' = level + coef * (z - level) + noise.
    Ar1 { coef: f64, level: f64 },
    /// Drift with reflection at [lo, hi]: z' = reflect(z + slope) + noise.
    Trend { slope: f64, lo: f64, hi: f64 },
    /// Piecewise-constant map: z' = levels[bucket(z)] + noise, where
    /// bucket(z) counts the cuts below z. Needs len(levels) = len(cuts)+1.
    Threshold { cuts: Vec<f64>, levels: Vec<f64> },
}

impl RegimeKind {
    pub fn name(&self) -> &'static str {
        match self {
            RegimeKind::Ar1 { .. } => "ar1",
            RegimeKind::Trend { .. } => "trend",
            RegimeKind::Threshold { .. } => "threshold",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            RegimeKind::Ar1 { coef, level } => {
                if coef.abs() >= 1.0 {
                    return Err(Error::config("regimes.coef", "|coef| must be < 1"));
                }
                if !(0.0..=1.0).contains(level) {
                    return Err(Error::config("regimes.level", "level must be in [0, 1]"));
                }
            }
            RegimeKind::Trend { slope, lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::config("regimes.lo", "needs lo < hi"));
                }
                if slope.abs() >= hi - lo {
                    return Err(Error::config("regimes.slope", "slope exceeds the band"));
                }
            }
            RegimeKind::Threshold { cuts, levels } => {
                if levels.len() != cuts.len() + 1 {
                    return Err(Error::config(
                        "regimes.levels",
                        "needs exactly len(cuts) + 1 levels",
                    ));
                }
                if cuts.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::config("regimes.cuts", "cuts must be increasing"));
                }
                if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
                    return Err(Error::config("regimes.levels", "levels must be in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Deterministic part of the next level.
    fn advance(&self, z: f64) -> f64 {
        match self {
            RegimeKind::Ar1 { coef, level } => level + coef * (z - level),
            RegimeKind::Trend { slope, lo, hi } => {
                let mut next = z + slope;
                if next > *hi {
                    next = hi - (next - hi);
                }
                if next < *lo {
                    next = lo + (lo - next);
                }
                next.clamp(*lo, *hi)
            }
            RegimeKind::Threshold { cuts, levels } => {
                let bucket = cuts.iter().filter(|&&c| z >= c).count();
                levels[bucket]
            }
        }
    }
}

/// One segment of the (cyclically repeated) regime schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    #[serde(flatten)]
    pub kind: RegimeKind,
    pub len: usize,
    /// Per-segment noise override; falls back to the corpus noise_sd.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub farms: usize,
    pub length: usize,
    #[serde(default = "default_step")]
    pub step_seconds: i64,
    #[serde(default = "default_start")]
    pub start_epoch: i64,
    #[serde(default)]
    pub spatial_rho: f64,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    #[serde(default = "default_graph_k")]
    pub graph_k: usize,
    pub segments: Vec<Segment>,
}

fn default_step() -> i64 {
    3600
}
fn default_start() -> i64 {
    DEFAULT_START_EPOCH
}
fn default_noise() -> f64 {
    0.02
}
fn default_graph_k() -> usize {
    2
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.farms == 0 {
            return Err(Error::config("synthetic.farms", "must be positive"));
        }
        if self.length == 0 {
            return Err(Error::config("synthetic.length", "must be positive"));
        }
        if self.step_seconds <= 0 {
            return Err(Error::config("synthetic.step_seconds", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.spatial_rho) {
            return Err(Error::config("synthetic.spatial_rho", "must be in [0, 1)"));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::config("synthetic.noise_sd", "must be non-negative"));
        }
        if self.segments.is_empty() {
            return Err(Error::config("synthetic.segments", "needs at least one segment"));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.len == 0 {
                return Err(Error::config(
                    format!("synthetic.segments[{i}].len"),
                    "must be positive",
                ));
            }
            seg.kind.validate()?;
        }
        Ok(())
    }
}

/// Which schedule slot produced a time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub slot: usize,
    pub name: String,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub frames: Vec<TimeSeriesFrame>,
    pub farms: Vec<FarmMeta>,
    pub labels: Vec<RegimeLabel>,
}

/// Farms placed along a coast-like arc; ids sort in placement order.
pub fn synthetic_farms(n: usize) -> Vec<FarmMeta> {
    (0..n)
        .map(|i| FarmMeta {
            farm_id: format!("farm_{i:02}"),
            latitude: 38.5 + 0.3 * i as f64,
            longitude: -74.0 + 0.12 * (i as f64 * 0.9).sin(),
            capacity: Some(16.0),
        })
        .collect()
}

/// Generate a corpus. Identical (config, seed) pairs produce bit-identical
/// output. Regime labels are global across farms.
pub fn gen_synthetic(cfg: &SynthConfig, master_seed: u64) -> Result<SynthCorpus> {
    cfg.validate()?;
    let farms = synthetic_farms(cfg.farms);
    let graph = build_graph(&farms, cfg.graph_k)?;

    // Mixing weights over graph hop distance, row-normalized to unit L2 so
    // innovations keep their variance. rho = 0 reduces to the identity.
    let n = cfg.farms;
    let mut mix = vec![vec![0.0; n]; n];
    for f in 0..n {
        let hops = graph.hop_distances(f);
        let mut row = vec![0.0; n];
        for g in 0..n {
            row[g] = match hops[g] {
                Some(0) => 1.0,
                Some(h) => cfg.spatial_rho.powi(h as i32),
                None => 0.0,
            };
        }
        let norm = row.iter().map(|w| w * w).sum::<f64>().sqrt();
        for g in 0..n {
            mix[f][g] = row[g] / norm;
        }
    }

    let mut rngs: Vec<_> = (0..n)
        .map(|f| seed::rng(seed::derive_indexed(master_seed, "synth.farm", f as u64)))
        .collect();

    let schedule: Vec<(usize, &Segment)> = cfg.segments.iter().enumerate().collect();
    let mut labels = Vec::with_capacity(cfg.length);
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.length); n];
    let mut state = vec![0.5; n];

    let mut slot = 0usize;
    let mut remaining = schedule[0].1.len;
    for _t in 0..cfg.length {
        let (slot_idx, segment) = schedule[slot];
        let sd = segment.noise.unwrap_or(cfg.noise_sd);
        // Raw innovations for every farm, then the spatial mix.
        let eta: Vec<f64> = rngs
            .iter_mut()
            .map(|r| {
                let u: f64 = r.sample(StandardNormal);
                u * sd
            })
            .collect();
        for f in 0..n {
            let mut eps = 0.0;
            for g in 0..n {
                eps += mix[f][g] * eta[g];
            }
            let next = segment.kind.advance(state[f]) + eps;
            state[f] = next.clamp(CLAMP_LO, CLAMP_HI);
            series[f].push(state[f]);
        }
        labels.push(RegimeLabel {
            slot: slot_idx,
            name: format!("{}_{}", segment.kind.name(), slot_idx),
        });
        remaining -= 1;
        if remaining == 0 {
            slot = (slot + 1) % schedule.len();
            remaining = schedule[slot].1.len;
        }
    }

    let frames = farms
        .iter()
        .zip(series)
        .map(|(farm, power)| {
            TimeSeriesFrame::new(farm.farm_id.clone(), cfg.start_epoch, cfg.step_seconds, power)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SynthCorpus {
        frames,
        farms,
        labels,
    })
}
