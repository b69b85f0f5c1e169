//! State assembly: spatio-temporal part from the encoder + graph pass,
//! loss part from the pool's recent loss block, concatenated per farm.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basemodels::LossHistory;
use crate::data::WindFarmGraph;
use crate::diffcore::{MlpSpec, NodeId, ParamSet, Tape, Vec1};
use crate::error::{Error, Result};

use super::encoder::ConvEncoder;
use super::gnn::{gnn_forward, GnnLayer};

/// How the loss block is compressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MleEncoderKind {
    /// Two-layer MLP over the flattened loss block (the default).
    Mlp,
    /// Dilated convolutions over each model's loss column, pooled and
    /// projected; selectable alternative to the MLP.
    DilatedConv,
}

impl Default for MleEncoderKind {
    fn default() -> Self {
        MleEncoderKind::Mlp
    }
}

/// Dimensions of the embedding stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSpec {
    pub stse_dim: usize,
    pub mle_dim: usize,
    /// Rows of loss history fed to the loss encoder.
    pub loss_horizon: usize,
    pub n_models: usize,
    pub encoder_channels: usize,
    pub encoder_kernel: usize,
    pub encoder_dilations: Vec<usize>,
    pub gnn_layers: usize,
    pub mle_hidden: usize,
    #[serde(default)]
    pub mle_encoder: MleEncoderKind,
}

impl EmbeddingSpec {
    pub fn defaults(n_models: usize) -> Self {
        EmbeddingSpec {
            stse_dim: 16,
            mle_dim: 8,
            loss_horizon: 16,
            n_models,
            encoder_channels: 8,
            encoder_kernel: 2,
            encoder_dilations: vec![1, 2, 4],
            gnn_layers: 1,
            mle_hidden: 32,
            mle_encoder: MleEncoderKind::Mlp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("embedding.stse_dim", self.stse_dim),
            ("embedding.loss_horizon", self.loss_horizon),
            ("embedding.n_models", self.n_models),
            ("embedding.encoder_channels", self.encoder_channels),
            ("embedding.encoder_kernel", self.encoder_kernel),
            ("embedding.mle_hidden", self.mle_hidden),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.encoder_dilations.is_empty() || self.encoder_dilations.iter().any(|&d| d == 0) {
            return Err(Error::config(
                "embedding.encoder_dilations",
                "needs positive dilations",
            ));
        }
        Ok(())
    }

    /// State length: stse + mle (mle_dim may be zero for the ablated form).
    pub fn state_len(&self) -> usize {
        self.stse_dim + self.mle_dim
    }
}

/// The embedding parameters plus the component layouts. All blocks live in
/// one `ParamSet` so checkpoints are a single document.
#[derive(Debug, Clone)]
pub struct EmbeddingNet {
    pub spec: EmbeddingSpec,
    encoder: ConvEncoder,
    layers: Vec<GnnLayer>,
    mle_mlp: Option<MlpSpec>,
    mle_conv: Option<ConvEncoder>,
}

impl EmbeddingNet {
    pub fn new(spec: EmbeddingSpec) -> Result<Self> {
        spec.validate()?;
        let encoder = ConvEncoder::new(
            "emb.enc",
            spec.encoder_channels,
            spec.encoder_kernel,
            spec.encoder_dilations.clone(),
            spec.stse_dim,
        )?;
        let layers = (0..spec.gnn_layers)
            .map(|l| GnnLayer::new("emb.gnn", l, spec.stse_dim))
            .collect();
        let (mle_mlp, mle_conv) = if spec.mle_dim == 0 {
            (None, None)
        } else {
            match spec.mle_encoder {
                MleEncoderKind::Mlp => (
                    Some(MlpSpec::new(
                        "emb.mle",
                        vec![
                            spec.loss_horizon * spec.n_models,
                            spec.mle_hidden,
                            spec.mle_dim,
                        ],
                    )?),
                    None,
                ),
                MleEncoderKind::DilatedConv => {
                    // one conv stack shared across model columns, pooled per
                    // column, projected from n_models * channels
                    let conv = ConvEncoder::new(
                        "emb.mle.conv",
                        4,
                        2,
                        vec![1, 2],
                        spec.mle_dim,
                    )?;
                    (None, Some(conv))
                }
            }
        };
        Ok(EmbeddingNet {
            spec,
            encoder,
            layers,
            mle_mlp,
            mle_conv,
        })
    }

    pub fn receptive_field(&self) -> usize {
        self.encoder.receptive_field()
    }

    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Result<ParamSet> {
        let mut ps = ParamSet::new();
        self.encoder.init_into(&mut ps, rng)?;
        for layer in &self.layers {
            layer.init_into(&mut ps, rng)?;
        }
        if let Some(mlp) = &self.mle_mlp {
            mlp.init_into(&mut ps, rng)?;
        }
        if let Some(conv) = &self.mle_conv {
            conv.init_into(&mut ps, rng)?;
            // per-column conv embeddings are averaged, then projected
        }
        Ok(ps)
    }

    /// Encode one window (no graph pass).
    pub fn encode_temporal(&self, tape: &mut Tape, ps: &ParamSet, window: &[f64]) -> Result<NodeId> {
        let w = tape.input(window)?;
        self.encoder.forward(tape, ps, w)
    }

    /// Spatio-temporal part for every farm: encode each farm's current
    /// window, then run the synchronous graph pass.
    pub fn compute_stse(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        graph: &WindFarmGraph,
        windows: &[Vec<f64>],
    ) -> Result<Vec<NodeId>> {
        if windows.len() != graph.node_count() {
            return Err(Error::DimMismatch {
                context: "compute_stse windows (one per farm)".into(),
                expected: graph.node_count(),
                got: windows.len(),
            });
        }
        let mut initial = Vec::with_capacity(windows.len());
        for w in windows {
            initial.push(self.encode_temporal(tape, ps, w)?);
        }
        gnn_forward(tape, ps, graph, initial, &self.layers)
    }

    /// Loss part: the padded loss block through the configured compressor.
    /// Requires at least one recorded loss row.
    pub fn compute_mle(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        history: &LossHistory,
    ) -> Result<NodeId> {
        if self.spec.mle_dim == 0 {
            return tape.input(&[]);
        }
        if history.is_empty() {
            return Err(Error::invalid(
                "loss history holds no rows yet; record at least one loss row",
            ));
        }
        if history.horizon() != self.spec.loss_horizon || history.n_models() != self.spec.n_models {
            return Err(Error::DimMismatch {
                context: "loss history shape".into(),
                expected: self.spec.loss_horizon * self.spec.n_models,
                got: history.horizon() * history.n_models(),
            });
        }
        let flat = history.flattened_padded();
        match (&self.mle_mlp, &self.mle_conv) {
            (Some(mlp), _) => {
                let x = tape.input(&flat)?;
                mlp.forward(tape, ps, x)
            }
            (None, Some(conv)) => {
                // column-major scan: one conv pass per model column
                let h = self.spec.loss_horizon;
                let n = self.spec.n_models;
                let mut embeddings = Vec::with_capacity(n);
                for m in 0..n {
                    let column: Vec<f64> = (0..h).map(|r| flat[r * n + m]).collect();
                    if column.len() < conv.receptive_field() {
                        return Err(Error::SignalTooShort {
                            required: conv.receptive_field(),
                            got: column.len(),
                        });
                    }
                    let node = tape.input(&column)?;
                    embeddings.push(conv.forward(tape, ps, node)?);
                }
                tape.mean_stack(&embeddings, self.spec.mle_dim)
            }
            (None, None) => unreachable!("mle_dim > 0 implies a compressor"),
        }
    }
}

/// Per-farm state: spatio-temporal part first, loss part second.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEmbedding {
    pub stse: Vec1,
    pub mle: Vec1,
    pub farm_id: String,
    pub t_index: usize,
}

impl StateEmbedding {
    pub fn len(&self) -> usize {
        self.stse.len() + self.mle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The concatenated vector the agent consumes.
    pub fn full(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.stse);
        out.extend_from_slice(&self.mle);
        out
    }
}

/// Splice the two parts; STSE first.
pub fn build_state(stse: Vec1, mle: Vec1, farm_id: impl Into<String>, t_index: usize) -> StateEmbedding {
    StateEmbedding {
        stse,
        mle,
        farm_id: farm_id.into(),
        t_index,
    }
}

/// Free-function forms matching the rest of the crate's call style.
pub fn compute_stse(
    net: &EmbeddingNet,
    tape: &mut Tape,
    ps: &ParamSet,
    graph: &WindFarmGraph,
    windows: &[Vec<f64>],
) -> Result<Vec<NodeId>> {
    net.compute_stse(tape, ps, graph, windows)
}

pub fn compute_mle(
    net: &EmbeddingNet,
    tape: &mut Tape,
    ps: &ParamSet,
    history: &LossHistory,
) -> Result<NodeId> {
    net.compute_mle(tape, ps, history)
}
