//! Run configuration: one audited home for every knob the pipeline needs.
//! Unknown keys are rejected at parse time; `validate` names the offending
//! field before any computation starts.

use serde::{Deserialize, Serialize};

use crate::basemodels::{BaseModelSpec, LossKind};
use crate::data::{SeriesSchema, SynthConfig};
use crate::embedding::EmbeddingSpec;
use crate::error::{Error, Result};
use crate::rlens::ActorCriticConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusConfig {
    Csv {
        series_path: String,
        meta_path: String,
        schema: SeriesSchema,
        #[serde(default)]
        forward_fill: bool,
        #[serde(default = "default_fill_cap")]
        forward_fill_cap: usize,
    },
    Synthetic {
        #[serde(flatten)]
        spec: SynthConfig,
    },
}

fn default_fill_cap() -> usize {
    3
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// ISO-8601 boundary; train is strictly before.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
    /// Alternative: train fraction in (0, 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_window() -> usize {
    24
}
fn default_horizon() -> usize {
    1
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window: default_window(),
            horizon: default_horizon(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    3
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { k: default_k() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricScale {
    /// Metrics on the normalized [0, 1] scale (default).
    Normalized,
    /// Metrics de-normalized back to the raw power scale.
    Raw,
}

impl Default for MetricScale {
    fn default() -> Self {
        MetricScale::Normalized
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub metric_scale: MetricScale,
    #[serde(default = "default_loss_kind")]
    pub loss_kind: LossKind,
}

fn default_reps() -> usize {
    1
}
fn default_seed() -> u64 {
    42
}
fn default_loss_kind() -> LossKind {
    LossKind::Absolute
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            repetitions: default_reps(),
            seed: default_seed(),
            metric_scale: MetricScale::default(),
            loss_kind: default_loss_kind(),
        }
    }
}

/// The resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub windowing: WindowConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    pub embedding: EmbeddingSpec,
    pub pool: Vec<BaseModelSpec>,
    pub agent: ActorCriticConfig,
    #[serde(default)]
    pub run: RunSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.corpus {
            CorpusConfig::Csv {
                series_path,
                meta_path,
                forward_fill_cap,
                ..
            } => {
                if series_path.is_empty() {
                    return Err(Error::config("corpus.series_path", "must not be empty"));
                }
                if meta_path.is_empty() {
                    return Err(Error::config("corpus.meta_path", "must not be empty"));
                }
                if *forward_fill_cap == 0 {
                    return Err(Error::config("corpus.forward_fill_cap", "must be >= 1"));
                }
            }
            CorpusConfig::Synthetic { spec } => spec.validate()?,
        }
        match (self.split.date.as_deref(), self.split.fraction) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "split",
                    "give either a date or a fraction, not both",
                ))
            }
            (None, None) => {
                return Err(Error::config("split", "needs a date or a fraction"));
            }
            (None, Some(f)) if !(f > 0.0 && f < 1.0) => {
                return Err(Error::config("split.fraction", "must be in (0, 1)"));
            }
            _ => {}
        }
        if self.windowing.window == 0 || self.windowing.horizon == 0 {
            return Err(Error::config("windowing", "window and horizon must be >= 1"));
        }
        self.embedding.validate()?;
        if self.pool.is_empty() {
            return Err(Error::config("pool", "needs at least one base model"));
        }
        for spec in &self.pool {
            spec.validate()?;
        }
        if self.embedding.n_models != self.pool.len() {
            return Err(Error::config(
                "embedding.n_models",
                format!(
                    "must equal the pool size ({} models configured)",
                    self.pool.len()
                ),
            ));
        }
        self.agent.validate()?;
        if self.run.repetitions == 0 {
            return Err(Error::config("run.repetitions", "must be >= 1"));
        }
        Ok(())
    }

    /// Stable fingerprint of the resolved configuration.
    pub fn fingerprint(&self) -> String {
        let canon = serde_json::to_string(self).unwrap_or_default();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in canon.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{RegimeKind, Segment};

    pub(crate) fn synthetic_run_config() -> RunConfig {
        RunConfig {
            corpus: CorpusConfig::Synthetic {
                spec: SynthConfig {
                    farms: 2,
                    length: 400,
                    step_seconds: 3600,
                    start_epoch: crate::data::synth::DEFAULT_START_EPOCH,
                    spatial_rho: 0.2,
                    noise_sd: 0.02,
                    graph_k: 1,
                    segments: vec![Segment {
                        kind: RegimeKind::Ar1 {
                            coef: 0.8,
                            level: 0.5,
                        },
                        len: 400,
                        noise: None,
                    }],
                },
            },
            split: SplitConfig {
                date: None,
                fraction: Some(0.7),
            },
            windowing: WindowConfig {
                window: 8,
                horizon: 1,
            },
            graph: GraphConfig { k: 1 },
            embedding: EmbeddingSpec {
                stse_dim: 4,
                mle_dim: 4,
                loss_horizon: 4,
                n_models: 2,
                encoder_channels: 2,
                encoder_kernel: 2,
                encoder_dilations: vec![1, 2],
                gnn_layers: 1,
                mle_hidden: 8,
                mle_encoder: crate::embedding::MleEncoderKind::Mlp,
            },
            pool: vec![
                BaseModelSpec::Persistence,
                BaseModelSpec::Autoregressive { order: 2 },
            ],
            agent: ActorCriticConfig {
                steps: 200,
                batch: 8,
                hidden: 8,
                capacity: 256,
                ..ActorCriticConfig::default()
            },
            run: RunSection::default(),
        }
    }

    #[test]
    fn valid_config_passes() {
        assert!(synthetic_run_config().validate().is_ok());
    }

    #[test]
    fn pool_size_must_match_embedding() {
        let mut cfg = synthetic_run_config();
        cfg.pool.push(BaseModelSpec::Persistence);
        match cfg.validate().unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "embedding.n_models"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn split_must_be_exactly_one_of_date_fraction() {
        let mut cfg = synthetic_run_config();
        cfg.split = SplitConfig {
            date: None,
            fraction: None,
        };
        assert!(cfg.validate().is_err());
        cfg.split = SplitConfig {
            date: Some("2010-06-01T00:00:00".into()),
            fraction: Some(0.5),
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let cfg = synthetic_run_config();
        assert_eq!(cfg.fingerprint(), cfg.fingerprint());
        let mut other = cfg.clone();
        other.windowing.window = 9;
        assert_ne!(cfg.fingerprint(), other.fingerprint());
    }
}
