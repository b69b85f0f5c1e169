//! Single-cell gated recurrent forecaster.
//!
//! One gated cell scans the window (each power value enters as a length-1
//! vector), a linear readout maps the final hidden state to the forecast.
//! Trained by minibatch adaptive gradient descent on squared error until
//! the epoch budget runs out or the loss plateaus.

use serde::{Deserialize, Serialize};

use crate::data::WindowSample;
use crate::diffcore::{Direction, NodeId, OptimConfig, Optimizer, ParamSet, Tape};
use crate::error::{Error, Result};
use crate::seed;

use super::TrainSummary;

const PLATEAU_REL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetDims {
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct RecurrentNet {
    pub hidden: usize,
    pub params: ParamSet,
}

impl RecurrentNet {
    pub fn dims(&self) -> NetDims {
        NetDims {
            hidden: self.hidden,
        }
    }

    pub fn from_parts(dims: NetDims, params: ParamSet) -> Result<Self> {
        let net = RecurrentNet {
            hidden: dims.hidden,
            params,
        };
        // shape sanity
        for name in ["gru.wz", "gru.uz", "gru.wr", "gru.ur", "gru.wh", "gru.uh"] {
            net.params.block(name)?;
        }
        Ok(net)
    }

    pub fn init(hidden: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Self> {
        let mut ps = ParamSet::new();
        for gate in ["z", "r", "h"] {
            ps.insert_matrix_uniform(&format!("gru.w{gate}"), hidden, 1, rng)?;
            ps.insert_matrix_uniform(&format!("gru.u{gate}"), hidden, hidden, rng)?;
            ps.insert_vector_zero(&format!("gru.b{gate}"), hidden)?;
        }
        ps.insert_matrix_uniform("gru.ro.w", 1, hidden, rng)?;
        ps.insert_vector_zero("gru.ro.b", 1)?;
        Ok(RecurrentNet { hidden, params: ps })
    }

    /// Record the scan over one window; returns the scalar forecast node.
    pub fn forward(&self, tape: &mut Tape, window: &[f64]) -> Result<NodeId> {
        if window.is_empty() {
            return Err(Error::invalid("recurrent forecaster needs a non-empty window"));
        }
        let ps = &self.params;
        let mut h = tape.input(&vec![0.0; self.hidden])?;
        for &x in window {
            let xv = tape.scalar_input(x)?;
            let z = {
                let a = tape.linear(ps, "gru.wz", Some("gru.bz"), xv)?;
                let b = tape.linear(ps, "gru.uz", None, h)?;
                let s = tape.add(a, b)?;
                tape.sigmoid(s)
            };
            let r = {
                let a = tape.linear(ps, "gru.wr", Some("gru.br"), xv)?;
                let b = tape.linear(ps, "gru.ur", None, h)?;
                let s = tape.add(a, b)?;
                tape.sigmoid(s)
            };
            let candidate = {
                let gated = tape.mul(r, h)?;
                let a = tape.linear(ps, "gru.wh", Some("gru.bh"), xv)?;
                let b = tape.linear(ps, "gru.uh", None, gated)?;
                let s = tape.add(a, b)?;
                tape.tanh(s)
            };
            // h' = h + z * (candidate - h)
            let delta = tape.sub(candidate, h)?;
            let scaled = tape.mul(z, delta)?;
            h = tape.add(h, scaled)?;
        }
        tape.linear(ps, "gru.ro.w", Some("gru.ro.b"), h)
    }

    pub fn predict(&self, window: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, window)?;
        Ok(tape.scalar(out))
    }
}

pub fn fit(
    train: &[WindowSample],
    hidden: usize,
    epochs: usize,
    batch: usize,
    learning_rate: f64,
    seed_value: u64,
) -> Result<(RecurrentNet, TrainSummary)> {
    let mut rng = seed::rng(seed::derive(seed_value, "basemodels.recurrent"));
    let mut net = RecurrentNet::init(hidden, &mut rng)?;
    let mut opt = Optimizer::new(OptimConfig::adam(learning_rate))?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut prev_epoch_loss = f64::INFINITY;
    let mut epochs_run = 0;
    let mut last_loss = f64::NAN;
    for _ in 0..epochs {
        epochs_run += 1;
        shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut tape = Tape::new();
            let mut acc: Option<NodeId> = None;
            for &i in chunk {
                let s = &train[i];
                let pred = net.forward(&mut tape, &s.window)?;
                let target = tape.scalar_input(s.target)?;
                let diff = tape.sub(pred, target)?;
                let sq = tape.mul(diff, diff)?;
                acc = Some(match acc {
                    None => sq,
                    Some(a) => tape.add(a, sq)?,
                });
            }
            let loss = tape.scale(acc.expect("non-empty chunk"), 1.0 / chunk.len() as f64);
            epoch_loss += tape.scalar(loss) * chunk.len() as f64;
            let grads = tape.backward(loss, &[&net.params])?;
            opt.step(&mut net.params, &grads, Direction::Descent)?;
        }
        epoch_loss /= train.len() as f64;
        last_loss = epoch_loss;
        if (prev_epoch_loss - epoch_loss).abs() <= PLATEAU_REL * prev_epoch_loss.max(1e-12) {
            break;
        }
        prev_epoch_loss = epoch_loss;
    }
    Ok((
        net,
        TrainSummary {
            final_loss: last_loss,
            iterations: epochs_run,
        },
    ))
}

pub(crate) fn shuffle(order: &mut [usize], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}
