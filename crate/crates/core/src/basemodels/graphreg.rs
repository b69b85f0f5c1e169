//! Graph-aware regressor: the temporal encoder and message-passing layers
//! from the embedding stack, topped with a shared linear readout per node.
//!
//! Forecasting farm v at time t consumes the windows of every farm at t, so
//! training regroups the pooled samples by time index and runs one joint
//! pass per index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{WindFarmGraph, WindowSample};
use crate::diffcore::{Direction, NodeId, OptimConfig, Optimizer, ParamSet, Tape};
use crate::embedding::{encoder::ConvEncoder, gnn, gnn::GnnLayer};
use crate::error::{Error, Result};
use crate::seed;

use super::{GraphContext, TrainSummary};

const NODE_DIM: usize = 8;
const ENC_CHANNELS: usize = 4;
const ENC_KERNEL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetDims {
    pub gnn_layers: usize,
}

#[derive(Debug, Clone)]
pub struct GraphRegressor {
    pub gnn_layers: usize,
    pub params: ParamSet,
}

fn encoder() -> ConvEncoder {
    ConvEncoder::new("greg.enc", ENC_CHANNELS, ENC_KERNEL, vec![1, 2], NODE_DIM)
        .expect("static dims")
}

fn layers(count: usize) -> Vec<GnnLayer> {
    (0..count)
        .map(|l| GnnLayer::new("greg.gnn", l, NODE_DIM))
        .collect()
}

impl GraphRegressor {
    pub fn dims(&self) -> NetDims {
        NetDims {
            gnn_layers: self.gnn_layers,
        }
    }

    pub fn from_parts(dims: NetDims, params: ParamSet) -> Result<Self> {
        params.block("greg.ro.w")?;
        Ok(GraphRegressor {
            gnn_layers: dims.gnn_layers,
            params,
        })
    }

    pub fn init(gnn_layers: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Self> {
        let mut ps = ParamSet::new();
        encoder().init_into(&mut ps, rng)?;
        for layer in layers(gnn_layers) {
            layer.init_into(&mut ps, rng)?;
        }
        ps.insert_matrix_uniform("greg.ro.w", 1, NODE_DIM, rng)?;
        ps.insert_vector_zero("greg.ro.b", 1)?;
        Ok(GraphRegressor {
            gnn_layers,
            params: ps,
        })
    }

    /// Minimum window length the encoder accepts.
    pub fn receptive_field() -> usize {
        encoder().receptive_field()
    }

    /// Joint pass over all nodes; returns one scalar forecast node per farm.
    fn forward_all(
        &self,
        tape: &mut Tape,
        graph: &WindFarmGraph,
        windows: &[Vec<f64>],
    ) -> Result<Vec<NodeId>> {
        if windows.len() != graph.node_count() {
            return Err(Error::DimMismatch {
                context: "graph regressor windows".into(),
                expected: graph.node_count(),
                got: windows.len(),
            });
        }
        let enc = encoder();
        let mut initial = Vec::with_capacity(windows.len());
        for w in windows {
            let node = tape.input(w)?;
            initial.push(enc.forward(tape, &self.params, node)?);
        }
        let hidden = gnn::gnn_forward(
            tape,
            &self.params,
            graph,
            initial,
            &layers(self.gnn_layers),
        )?;
        hidden
            .into_iter()
            .map(|h| tape.linear(&self.params, "greg.ro.w", Some("greg.ro.b"), h))
            .collect()
    }

    pub fn predict(&self, ctx: &GraphContext<'_>) -> Result<f64> {
        let mut tape = Tape::new();
        let outs = self.forward_all(&mut tape, ctx.graph, ctx.windows)?;
        if ctx.target_node >= outs.len() {
            return Err(Error::DimMismatch {
                context: "graph regressor target node".into(),
                expected: outs.len(),
                got: ctx.target_node,
            });
        }
        Ok(tape.scalar(outs[ctx.target_node]))
    }
}

/// Regroup pooled samples into (t_index -> per-node window + target) and
/// train on joint per-index passes. Every node must be present at every
/// index used.
pub fn fit(
    train: &[WindowSample],
    graph: &WindFarmGraph,
    gnn_layers: usize,
    epochs: usize,
    learning_rate: f64,
    seed_value: u64,
) -> Result<(GraphRegressor, TrainSummary)> {
    let n = graph.node_count();
    let mut grouped: BTreeMap<usize, Vec<Option<(&WindowSample, usize)>>> = BTreeMap::new();
    for s in train {
        let node = graph.node_index(&s.farm_id).ok_or_else(|| {
            Error::invalid(format!("sample farm `{}` is not in the graph", s.farm_id))
        })?;
        grouped.entry(s.t_index).or_insert_with(|| vec![None; n])[node] = Some((s, node));
    }
    let mut batches: Vec<(Vec<Vec<f64>>, Vec<f64>)> = Vec::new();
    for (_, slots) in grouped {
        if slots.iter().any(Option::is_none) {
            continue; // incomplete index; skip rather than guess missing farms
        }
        let windows: Vec<Vec<f64>> = slots
            .iter()
            .map(|s| s.as_ref().unwrap().0.window.clone())
            .collect();
        let targets: Vec<f64> = slots.iter().map(|s| s.as_ref().unwrap().0.target).collect();
        batches.push((windows, targets));
    }
    if batches.is_empty() {
        return Err(Error::invalid(
            "graph regressor needs at least one time index with a window for every farm",
        ));
    }

    let mut rng = seed::rng(seed::derive(seed_value, "basemodels.graphreg"));
    let mut net = GraphRegressor::init(gnn_layers, &mut rng)?;
    let mut opt = Optimizer::new(OptimConfig::adam(learning_rate))?;
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut last_loss = f64::NAN;
    let mut prev_epoch = f64::INFINITY;
    let mut epochs_run = 0;
    for _ in 0..epochs {
        epochs_run += 1;
        super::recurrent::shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        for &bi in &order {
            let (windows, targets) = &batches[bi];
            let mut tape = Tape::new();
            let outs = net.forward_all(&mut tape, graph, windows)?;
            let mut acc: Option<NodeId> = None;
            for (out, &target) in outs.iter().zip(targets) {
                let t = tape.scalar_input(target)?;
                let diff = tape.sub(*out, t)?;
                let sq = tape.mul(diff, diff)?;
                acc = Some(match acc {
                    None => sq,
                    Some(a) => tape.add(a, sq)?,
                });
            }
            let loss = tape.scale(acc.expect("n >= 1"), 1.0 / n as f64);
            epoch_loss += tape.scalar(loss);
            let grads = tape.backward(loss, &[&net.params])?;
            opt.step(&mut net.params, &grads, Direction::Descent)?;
        }
        epoch_loss /= batches.len() as f64;
        last_loss = epoch_loss;
        if (prev_epoch - epoch_loss).abs() <= 1e-6 * prev_epoch.max(1e-12) {
            break;
        }
        prev_epoch = epoch_loss;
    }
    Ok((
        net,
        TrainSummary {
            final_loss: last_loss,
            iterations: epochs_run,
        },
    ))
}
