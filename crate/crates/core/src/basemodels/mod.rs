//! Pool of base forecasters with a uniform fit/predict interface and the
//! per-step loss bookkeeping that feeds the model-loss embedding.
//!
//! The pool members are deliberately small: persistence, an autoregressive
//! model fitted by least squares, greedy boosted regression stumps, a
//! single-cell gated recurrent net, and a graph-aware regressor that reuses
//! the embedding machinery. Every member is deterministic at inference.

pub mod ar;
pub mod graphreg;
pub mod recurrent;
pub mod stumps;

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{WindFarmGraph, WindowSample};
use crate::diffcore::ParamSet;
use crate::error::{Error, Result};

pub use stumps::Stump;

/// Pool member kind plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseModelSpec {
    Persistence,
    Autoregressive {
        order: usize,
    },
    BoostedStumps {
        rounds: usize,
        #[serde(default = "default_shrinkage")]
        shrinkage: f64,
    },
    Recurrent {
        #[serde(default = "default_hidden")]
        hidden_dim: usize,
        #[serde(default = "default_epochs")]
        epochs: usize,
        #[serde(default = "default_batch")]
        batch: usize,
        #[serde(default = "default_lr")]
        learning_rate: f64,
    },
    GraphRegressor {
        #[serde(default = "default_gnn_layers")]
        gnn_layers: usize,
        #[serde(default = "default_epochs")]
        epochs: usize,
        #[serde(default = "default_lr")]
        learning_rate: f64,
    },
}

fn default_shrinkage() -> f64 {
    0.5
}
fn default_hidden() -> usize {
    16
}
fn default_epochs() -> usize {
    5
}
fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-3
}
fn default_gnn_layers() -> usize {
    1
}

impl BaseModelSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            BaseModelSpec::Persistence => "persistence",
            BaseModelSpec::Autoregressive { .. } => "ar",
            BaseModelSpec::BoostedStumps { .. } => "stumps",
            BaseModelSpec::Recurrent { .. } => "recurrent",
            BaseModelSpec::GraphRegressor { .. } => "graph_regressor",
        }
    }

    pub fn needs_graph(&self) -> bool {
        matches!(self, BaseModelSpec::GraphRegressor { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaseModelSpec::Persistence => Ok(()),
            BaseModelSpec::Autoregressive { order } => {
                if *order == 0 {
                    Err(Error::config("pool.order", "autoregressive order must be >= 1"))
                } else {
                    Ok(())
                }
            }
            BaseModelSpec::BoostedStumps { rounds, shrinkage } => {
                if *rounds == 0 {
                    return Err(Error::config("pool.rounds", "needs at least one round"));
                }
                if !(*shrinkage > 0.0 && *shrinkage <= 1.0) {
                    return Err(Error::config("pool.shrinkage", "must be in (0, 1]"));
                }
                Ok(())
            }
            BaseModelSpec::Recurrent {
                hidden_dim,
                epochs,
                batch,
                learning_rate,
            } => {
                if *hidden_dim == 0 {
                    return Err(Error::config("pool.hidden_dim", "must be >= 1"));
                }
                if *epochs == 0 || *batch == 0 {
                    return Err(Error::config("pool.epochs", "epochs and batch must be >= 1"));
                }
                if !(*learning_rate > 0.0) {
                    return Err(Error::config("pool.learning_rate", "must be positive"));
                }
                Ok(())
            }
            BaseModelSpec::GraphRegressor {
                gnn_layers,
                epochs,
                learning_rate,
            } => {
                if *gnn_layers == 0 || *epochs == 0 {
                    return Err(Error::config(
                        "pool.gnn_layers",
                        "layers and epochs must be >= 1",
                    ));
                }
                if !(*learning_rate > 0.0) {
                    return Err(Error::config("pool.learning_rate", "must be positive"));
                }
                Ok(())
            }
        }
    }
}

/// Learned parameters of one fitted member.
#[derive(Debug, Clone)]
pub enum FittedParams {
    Persistence,
    Ar {
        coefficients: Vec<f64>,
        intercept: f64,
    },
    Stumps(stumps::StumpEnsemble),
    Recurrent(recurrent::RecurrentNet),
    Graph(graphreg::GraphRegressor),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub final_loss: f64,
    pub iterations: usize,
}

/// One fitted pool member. Prediction is deterministic given the parameters
/// and the input.
#[derive(Debug, Clone)]
pub struct FittedBase {
    pub spec: BaseModelSpec,
    pub params: FittedParams,
    pub summary: TrainSummary,
}

/// Neighborhood context for graph-aware prediction: all farms' windows at
/// the sample's time index, plus which node is being forecast.
pub struct GraphContext<'a> {
    pub graph: &'a WindFarmGraph,
    pub windows: &'a [Vec<f64>],
    pub target_node: usize,
}

/// Fit one pool member on the pooled training windows. `graph` is required
/// exactly for graph-aware kinds.
pub fn fit_base(
    spec: &BaseModelSpec,
    train: &[WindowSample],
    graph: Option<&WindFarmGraph>,
    seed: u64,
) -> Result<FittedBase> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("cannot fit on an empty training set"));
    }
    if spec.needs_graph() && graph.is_none() {
        return Err(Error::invalid(format!(
            "`{}` needs the farm graph to fit",
            spec.kind_name()
        )));
    }
    let (params, summary) = match spec {
        BaseModelSpec::Persistence => (
            FittedParams::Persistence,
            TrainSummary {
                final_loss: 0.0,
                iterations: 0,
            },
        ),
        BaseModelSpec::Autoregressive { order } => {
            let (coefficients, intercept, final_loss) = ar::fit(train, *order)?;
            (
                FittedParams::Ar {
                    coefficients,
                    intercept,
                },
                TrainSummary {
                    final_loss,
                    iterations: 1,
                },
            )
        }
        BaseModelSpec::BoostedStumps { rounds, shrinkage } => {
            let ensemble = stumps::fit(train, *rounds, *shrinkage)?;
            let final_loss = ensemble.training_loss;
            (
                FittedParams::Stumps(ensemble),
                TrainSummary {
                    final_loss,
                    iterations: *rounds,
                },
            )
        }
        BaseModelSpec::Recurrent {
            hidden_dim,
            epochs,
            batch,
            learning_rate,
        } => {
            let (net, summary) =
                recurrent::fit(train, *hidden_dim, *epochs, *batch, *learning_rate, seed)?;
            (FittedParams::Recurrent(net), summary)
        }
        BaseModelSpec::GraphRegressor {
            gnn_layers,
            epochs,
            learning_rate,
        } => {
            let graph = graph.expect("checked above");
            let (net, summary) =
                graphreg::fit(train, graph, *gnn_layers, *epochs, *learning_rate, seed)?;
            (FittedParams::Graph(net), summary)
        }
    };
    Ok(FittedBase {
        spec: spec.clone(),
        params,
        summary,
    })
}

/// One normalized-scale forecast for a window sample.
pub fn predict_base(
    model: &FittedBase,
    sample: &WindowSample,
    context: Option<&GraphContext<'_>>,
) -> Result<f64> {
    match &model.params {
        FittedParams::Persistence => sample
            .window
            .last()
            .copied()
            .ok_or_else(|| Error::invalid("empty window")),
        FittedParams::Ar {
            coefficients,
            intercept,
        } => ar::predict(coefficients, *intercept, &sample.window),
        FittedParams::Stumps(ensemble) => ensemble.predict(&sample.window),
        FittedParams::Recurrent(net) => net.predict(&sample.window),
        FittedParams::Graph(net) => {
            let ctx = context.ok_or_else(|| {
                Error::invalid("graph_regressor prediction needs a graph context")
            })?;
            net.predict(ctx)
        }
    }
}

impl FittedBase {
    pub fn predict(&self, sample: &WindowSample, context: Option<&GraphContext<'_>>) -> Result<f64> {
        predict_base(self, sample, context)
    }

    /// Checkpoint: a JSON header line (kind, hyperparameters, summary,
    /// plain-numeric learned values) followed, for network models, by the
    /// parameter-set body in its own bit-exact format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader::from_model(self);
        let mut text = serde_json::to_string(&header).map_err(|e| Error::File {
            path: path.into(),
            message: e.to_string(),
        })?;
        text.push('\n');
        match &self.params {
            FittedParams::Recurrent(net) => text.push_str(&net.params.to_text()),
            FittedParams::Graph(net) => text.push_str(&net.params.to_text()),
            _ => {}
        }
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.into(),
            source,
        })?;
        let (header_line, rest) = text.split_once('\n').ok_or_else(|| Error::File {
            path: path.into(),
            message: "missing checkpoint header".into(),
        })?;
        let header: CheckpointHeader =
            serde_json::from_str(header_line).map_err(|e| Error::File {
                path: path.into(),
                message: format!("bad checkpoint header: {e}"),
            })?;
        header.into_model(rest)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    spec: BaseModelSpec,
    summary: TrainSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ar: Option<(Vec<f64>, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stumps: Option<stumps::StumpEnsemble>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    recurrent_dims: Option<recurrent::NetDims>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph_dims: Option<graphreg::NetDims>,
}

impl CheckpointHeader {
    fn from_model(model: &FittedBase) -> Self {
        let mut header = CheckpointHeader {
            spec: model.spec.clone(),
            summary: model.summary,
            ar: None,
            stumps: None,
            recurrent_dims: None,
            graph_dims: None,
        };
        match &model.params {
            FittedParams::Persistence => {}
            FittedParams::Ar {
                coefficients,
                intercept,
            } => header.ar = Some((coefficients.clone(), *intercept)),
            FittedParams::Stumps(e) => header.stumps = Some(e.clone()),
            FittedParams::Recurrent(net) => header.recurrent_dims = Some(net.dims()),
            FittedParams::Graph(net) => header.graph_dims = Some(net.dims()),
        }
        header
    }

    fn into_model(self, body: &str) -> Result<FittedBase> {
        let params = match (&self.spec, self.ar, self.stumps, self.recurrent_dims, self.graph_dims)
        {
            (BaseModelSpec::Persistence, ..) => FittedParams::Persistence,
            (BaseModelSpec::Autoregressive { .. }, Some((coefficients, intercept)), ..) => {
                FittedParams::Ar {
                    coefficients,
                    intercept,
                }
            }
            (BaseModelSpec::BoostedStumps { .. }, _, Some(ensemble), ..) => {
                FittedParams::Stumps(ensemble)
            }
            (BaseModelSpec::Recurrent { .. }, _, _, Some(dims), _) => {
                let params = ParamSet::from_text(body)?;
                FittedParams::Recurrent(recurrent::RecurrentNet::from_parts(dims, params)?)
            }
            (BaseModelSpec::GraphRegressor { .. }, _, _, _, Some(dims)) => {
                let params = ParamSet::from_text(body)?;
                FittedParams::Graph(graphreg::GraphRegressor::from_parts(dims, params)?)
            }
            _ => return Err(Error::invalid("checkpoint header does not match its kind")),
        };
        Ok(FittedBase {
            spec: self.spec,
            params,
            summary: self.summary,
        })
    }
}

/// Which per-step loss feeds the history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Absolute,
    Squared,
}

/// Ring of the most recent per-model loss rows for one farm.
#[derive(Debug, Clone)]
pub struct LossHistory {
    horizon: usize,
    n_models: usize,
    loss_kind: LossKind,
    rows: VecDeque<Vec<f64>>,
}

impl LossHistory {
    pub fn new(horizon: usize, n_models: usize, loss_kind: LossKind) -> Result<Self> {
        if horizon == 0 || n_models == 0 {
            return Err(Error::invalid("loss history needs horizon >= 1, models >= 1"));
        }
        Ok(LossHistory {
            horizon,
            n_models,
            loss_kind,
            rows: VecDeque::with_capacity(horizon),
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(Vec::as_slice)
    }

    /// Append one loss row, evicting the oldest beyond the horizon.
    pub fn push_row(&mut self, losses: Vec<f64>) -> Result<()> {
        if losses.len() != self.n_models {
            return Err(Error::DimMismatch {
                context: "loss history row".into(),
                expected: self.n_models,
                got: losses.len(),
            });
        }
        if losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::NonFinite("loss history row".into()));
        }
        if self.rows.len() == self.horizon {
            self.rows.pop_front();
        }
        self.rows.push_back(losses);
        Ok(())
    }

    /// The most recent `horizon x n_models` block flattened row-major,
    /// oldest row first, zero-padded at the old end when short.
    pub fn flattened_padded(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.horizon * self.n_models];
        let pad_rows = self.horizon - self.rows.len();
        for (i, row) in self.rows.iter().enumerate() {
            let base = (pad_rows + i) * self.n_models;
            out[base..base + self.n_models].copy_from_slice(row);
        }
        out
    }
}

/// Score every pool member on a sample, append the loss row, and return it.
pub fn record_losses(
    pool: &[FittedBase],
    sample: &WindowSample,
    context: Option<&GraphContext<'_>>,
    truth: f64,
    history: &mut LossHistory,
) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(pool.len());
    for model in pool {
        let forecast = predict_base(model, sample, context)?;
        let err = forecast - truth;
        row.push(match history.loss_kind {
            LossKind::Absolute => err.abs(),
            LossKind::Squared => err * err,
        });
    }
    history.push_row(row.clone())?;
    Ok(row)
}
