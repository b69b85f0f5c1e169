//! Central finite-difference verification of every differentiable path:
//! the primitive operations, the temporal encoder, a graph layer, the loss
//! compressor, and the actor/critic heads. Inputs live in the parameter set
//! alongside the weights so both get checked.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::mlp::MlpSpec;
use super::params::ParamSet;
use super::tape::{NodeId, Tape};
use crate::data::{build_graph, FarmMeta};
use crate::embedding::encoder::ConvEncoder;
use crate::embedding::gnn::{gnn_forward, GnnLayer};
use crate::error::Result;
use crate::seed;

pub const FD_EPSILON: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op: String,
    pub points: usize,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_TOLERANCE
    }
}

type LossBuilder = Box<dyn Fn(&ParamSet) -> Result<(Tape, NodeId)>>;

fn probe_loss(tape: &mut Tape, out: NodeId, probe: &[f64]) -> Result<NodeId> {
    let p = tape.input(probe)?;
    let prod = tape.mul(out, p)?;
    let m = tape.mean(prod)?;
    Ok(tape.scale(m, probe.len() as f64))
}

fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// Compare tape gradients with central differences over every coordinate of
/// every block, across `configs` random configurations.
fn check_one<B>(name: &str, configs: usize, master_seed: u64, build: B) -> Result<GradCheckReport>
where
    B: Fn(&mut ChaCha8Rng) -> Result<(ParamSet, LossBuilder)>,
{
    let mut points = 0usize;
    let mut max_rel_err: f64 = 0.0;
    for c in 0..configs {
        let mut rng = seed::rng(seed::derive_indexed(master_seed, name, c as u64));
        let (mut ps, loss_fn) = build(&mut rng)?;
        let (tape, loss) = loss_fn(&ps)?;
        let grads = tape.backward(loss, &[&ps])?;
        let block_names: Vec<String> = ps.names().map(str::to_string).collect();
        for block_name in block_names {
            let len = ps.block(&block_name)?.len();
            for k in 0..len {
                let original = ps.block(&block_name)?.data[k];
                ps.block_mut(&block_name)?.data[k] = original + FD_EPSILON;
                let (t_plus, l_plus) = loss_fn(&ps)?;
                let f_plus = t_plus.scalar(l_plus);
                ps.block_mut(&block_name)?.data[k] = original - FD_EPSILON;
                let (t_minus, l_minus) = loss_fn(&ps)?;
                let f_minus = t_minus.scalar(l_minus);
                ps.block_mut(&block_name)?.data[k] = original;
                let fd = (f_plus - f_minus) / (2.0 * FD_EPSILON);
                let ad = grads.get(&block_name).expect("all blocks keyed")[k];
                let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6);
                if rel > max_rel_err {
                    max_rel_err = rel;
                }
                points += 1;
            }
        }
    }
    Ok(GradCheckReport {
        op: name.into(),
        points,
        max_rel_err,
    })
}

fn check_linear(seed_value: u64) -> Result<GradCheckReport> {
    check_one("linear", 4, seed_value, |rng| {
        let mut ps = ParamSet::new();
        ps.insert_matrix("w", 5, 4, uniform_vec(rng, 20, 0.8))?;
        ps.insert_vector("b", uniform_vec(rng, 5, 0.5))?;
        ps.insert_vector("x", uniform_vec(rng, 4, 0.8))?;
        let probe = uniform_vec(rng, 5, 1.0);
        let f: LossBuilder = Box::new(move |ps| {
            let mut tape = Tape::new();
            let x = tape.param(ps, "x")?;
            let y = tape.linear(ps, "w", Some("b"), x)?;
            let loss = probe_loss(&mut tape, y, &probe)?;
            Ok((tape, loss))
        });
        Ok((ps, f))
    })
}

fn check_conv(seed_value: u64) -> Result<GradCheckReport> {
    check_one("conv1d_dilated", 7, seed_value, |rng| {
        let mut ps = ParamSet::new();
        ps.insert_vector("signal", uniform_vec(rng, 12, 0.8))?;
        ps.insert_vector("kernel", uniform_vec(rng, 3, 0.8))?;
        let probe = uniform_vec(rng, 12 - 2 * 2, 1.0);
        let f: LossBuilder = Box::new(move |ps| {
            let mut tape = Tape::new();
            let s = tape.param(ps, "signal")?;
            let k = tape.param(ps, "kernel")?;
            let y = tape.conv1d_dilated(s, k, 2)?;
            let loss = probe_loss(&mut tape, y, &probe)?;
            Ok((tape, loss))
        });
        Ok((ps, f))
    })
}

fn check_softmax(seed_value: u64) -> Result<GradCheckReport> {
    check_one("softmax", 17, seed_value, |rng| {
        let mut ps = ParamSet::new();
        ps.insert_vector("logits", uniform_vec(rng, 6, 2.0))?;
        let probe = uniform_vec(rng, 6, 1.0);
        let f: LossBuilder = Box::new(move |ps| {
            let mut tape = Tape::new();
            let x = tape.param(ps, "logits")?;
            let y = tape.softmax(x)?;
            let loss = probe_loss(&mut tape, y, &probe)?;
            Ok((tape, loss))
        });
        Ok((ps, f))
    })
}

fn check_gnn_layer(seed_value: u64) -> Result<GradCheckReport> {
    let farms: Vec<FarmMeta> = (0..4)
        .map(|i| FarmMeta {
            farm_id: format!("gc{i}"),
            latitude: 40.0 + 0.2 * i as f64,
            longitude: 0.07 * ((i * i) as f64),
            capacity: None,
        })
        .collect();
    let graph = build_graph(&farms, 2)?;
    check_one("gnn_layer", 3, seed_value, move |rng| {
        let dim = 3;
        let layer = GnnLayer::new("gnn", 0, dim);
        let mut ps = ParamSet::new();
        layer.init_into(&mut ps, rng)?;
        for v in 0..4 {
            ps.insert_vector(&format!("h{v}"), uniform_vec(rng, dim, 0.7))?;
        }
        let probe = uniform_vec(rng, dim * 4, 1.0);
        let graph = graph.clone();
        let layer_c = layer.clone();
        let f: LossBuilder = Box::new(move |ps| {
            let mut tape = Tape::new();
            let initial: Vec<NodeId> = (0..4)
                .map(|v| tape.param(ps, &format!("h{v}")))
                .collect::<Result<_>>()?;
            let out = gnn_forward(&mut tape, ps, &graph, initial, std::slice::from_ref(&layer_c))?;
            let joined = tape.concat(&out)?;
            let loss = probe_loss(&mut tape, joined, &probe)?;
            Ok((tape, loss))
        });
        Ok((ps, f))
    })
}

fn check_mle_mlp(seed_value: u64) -> Result<GradCheckReport> {
    check_one("mle_mlp", 2, seed_value, |rng| {
        // the loss-compressor layout: flattened H x N block in, short vector out
        let spec = MlpSpec::new("mle", vec![16, 12, 8])?;
        let mut ps = ParamSet::new();
        spec.init_into(&mut ps, rng)?;
        ps.insert_vector("losses", uniform_vec(rng, 16, 0.5).iter().map(|v| v.abs()).collect())?;
        let probe = uniform_vec(rng, 8, 1.0);
        let f: LossBuilder = Box::new(move |ps| {
            let mut tape = Tape::new();
            let x = tape.param(ps, "losses")?;
            let y = spec.forward(&mut tape, ps, x)?;
            let loss = probe_loss(&mut tape, y, &probe)?;
            Ok((tape, loss))
        });
        Ok((ps, f))
    })
}

fn check_actor(seed_value: u64) -> Result<GradCheckReport> {
    check_one("actor", 2, seed_value, |rng| {
        let spec = MlpSpec::new("actor", vec![10, 8, 4])?;
        let mut ps = ParamSet::new();
        spec.init_into(&mut ps, rng)?;
        ps.insert_vector("state", uniform_vec(rng, 10, 0.8))?;
        let probe = uniform_vec(rng, 4, 1.0);
        let f: LossBuilder = Box::new(move |ps| {
            let mut tape = Tape::new();
            let s = tape.param(ps, "state")?;
            let logits = spec.forward(&mut tape, ps, s)?;
            let weights = tape.softmax(logits)?;
            let loss = probe_loss(&mut tape, weights, &probe)?;
            Ok((tape, loss))
        });
        Ok((ps, f))
    })
}

fn check_critic(seed_value: u64) -> Result<GradCheckReport> {
    check_one("critic", 2, seed_value, |rng| {
        let spec = MlpSpec::new("critic", vec![14, 8, 1])?;
        let mut ps = ParamSet::new();
        spec.init_into(&mut ps, rng)?;
        ps.insert_vector("state", uniform_vec(rng, 10, 0.8))?;
        ps.insert_vector("action", uniform_vec(rng, 4, 0.5))?;
        let f: LossBuilder = Box::new(move |ps| {
            let mut tape = Tape::new();
            let s = tape.param(ps, "state")?;
            let a = tape.param(ps, "action")?;
            let joined = tape.concat(&[s, a])?;
            let q = spec.forward(&mut tape, ps, joined)?;
            let loss = probe_loss(&mut tape, q, &[1.0])?;
            Ok((tape, loss))
        });
        Ok((ps, f))
    })
}

fn check_temporal_encoder(seed_value: u64) -> Result<GradCheckReport> {
    check_one("temporal_encoder", 2, seed_value, |rng| {
        let enc = ConvEncoder::new("enc", 3, 2, vec![1, 2], 5)?;
        let mut ps = ParamSet::new();
        enc.init_into(&mut ps, rng)?;
        ps.insert_vector("window", uniform_vec(rng, 10, 0.8))?;
        let probe = uniform_vec(rng, 5, 1.0);
        let f: LossBuilder = Box::new(move |ps| {
            let mut tape = Tape::new();
            let w = tape.param(ps, "window")?;
            let y = enc.forward(&mut tape, ps, w)?;
            let loss = probe_loss(&mut tape, y, &probe)?;
            Ok((tape, loss))
        });
        Ok((ps, f))
    })
}

fn check_recurrent_cell(seed_value: u64) -> Result<GradCheckReport> {
    check_one("recurrent_cell", 2, seed_value, |rng| {
        let net = crate::basemodels::recurrent::RecurrentNet::init(4, rng)?;
        let window = uniform_vec(rng, 5, 0.8);
        let params = net.params.clone();
        let hidden = net.hidden;
        let f: LossBuilder = Box::new(move |ps| {
            let runner = crate::basemodels::recurrent::RecurrentNet {
                hidden,
                params: ps.clone(),
            };
            let mut tape = Tape::new();
            let out = runner.forward(&mut tape, &window)?;
            let sq = tape.mul(out, out)?;
            Ok((tape, sq))
        });
        Ok((params, f))
    })
}

const SUITE: [fn(u64) -> Result<GradCheckReport>; 9] = [
    check_linear,
    check_conv,
    check_softmax,
    check_gnn_layer,
    check_mle_mlp,
    check_actor,
    check_critic,
    check_temporal_encoder,
    check_recurrent_cell,
];

/// Run the whole suite. Each entry checks at least 100 coordinates against
/// central differences at epsilon 1e-5.
pub fn run_full_suite(master_seed: u64) -> Result<Vec<GradCheckReport>> {
    crate::par::map_slice(&SUITE, |check| check(master_seed))
        .into_iter()
        .collect()
}

/// Sequential twin of [`run_full_suite`]; identical output, used by the
/// benchmark comparison.
pub fn run_full_suite_sequential(master_seed: u64) -> Result<Vec<GradCheckReport>> {
    SUITE.iter().map(|check| check(master_seed)).collect()
}
