//! Graph message passing over the farm graph.
//!
//! One layer per step: every node computes a message from its hidden state
//! (linear + tanh), each node averages the messages of its neighbors, and
//! the update consumes the concatenation of the aggregate and the node's
//! own message (linear + tanh). Aggregation is an order-insensitive mean,
//! so neighbor permutations and node relabelings change nothing, bit for bit.

use rand_chacha::ChaCha8Rng;

use crate::data::WindFarmGraph;
use crate::diffcore::{NodeId, ParamSet, Tape};
use crate::error::Result;

/// Parameter naming and dimensions of one message-passing layer.
#[derive(Debug, Clone)]
pub struct GnnLayer {
    pub prefix: String,
    pub layer: usize,
    /// Hidden dim entering the layer; message dim and output dim match it.
    pub dim: usize,
}

impl GnnLayer {
    pub fn new(prefix: impl Into<String>, layer: usize, dim: usize) -> Self {
        GnnLayer {
            prefix: prefix.into(),
            layer,
            dim,
        }
    }

    fn msg_w(&self) -> String {
        format!("{}.l{}.msg.w", self.prefix, self.layer)
    }

    fn msg_b(&self) -> String {
        format!("{}.l{}.msg.b", self.prefix, self.layer)
    }

    fn upd_w(&self) -> String {
        format!("{}.l{}.upd.w", self.prefix, self.layer)
    }

    fn upd_b(&self) -> String {
        format!("{}.l{}.upd.b", self.prefix, self.layer)
    }

    pub fn init_into(&self, ps: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<()> {
        ps.insert_matrix_uniform(&self.msg_w(), self.dim, self.dim, rng)?;
        ps.insert_vector_zero(&self.msg_b(), self.dim)?;
        ps.insert_matrix_uniform(&self.upd_w(), self.dim, 2 * self.dim, rng)?;
        ps.insert_vector_zero(&self.upd_b(), self.dim)?;
        Ok(())
    }

    /// Message from one node's hidden state.
    pub fn message_compute(&self, tape: &mut Tape, ps: &ParamSet, h: NodeId) -> Result<NodeId> {
        let lin = tape.linear(ps, &self.msg_w(), Some(&self.msg_b()), h)?;
        Ok(tape.tanh(lin))
    }

    /// Order-insensitive mean of neighbor messages; empty -> zero vector.
    pub fn message_aggregate(
        &self,
        tape: &mut Tape,
        messages: &[NodeId],
    ) -> Result<NodeId> {
        tape.mean_stack(messages, self.dim)
    }

    /// Next hidden state from the aggregate and the node's own message.
    pub fn message_update(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        aggregate: NodeId,
        own_message: NodeId,
    ) -> Result<NodeId> {
        let joined = tape.concat(&[aggregate, own_message])?;
        let lin = tape.linear(ps, &self.upd_w(), Some(&self.upd_b()), joined)?;
        Ok(tape.tanh(lin))
    }
}

/// Apply the layers synchronously across all nodes. `initial` must hold one
/// hidden-state node per graph node; zero layers return it unchanged.
pub fn gnn_forward(
    tape: &mut Tape,
    ps: &ParamSet,
    graph: &WindFarmGraph,
    initial: Vec<NodeId>,
    layers: &[GnnLayer],
) -> Result<Vec<NodeId>> {
    if initial.len() != graph.node_count() {
        return Err(crate::error::Error::DimMismatch {
            context: "gnn_forward initial states".into(),
            expected: graph.node_count(),
            got: initial.len(),
        });
    }
    let mut hidden = initial;
    for layer in layers {
        let messages: Vec<NodeId> = hidden
            .iter()
            .map(|&h| layer.message_compute(tape, ps, h))
            .collect::<Result<_>>()?;
        let mut next = Vec::with_capacity(hidden.len());
        for v in 0..graph.node_count() {
            let neighbor_msgs: Vec<NodeId> =
                graph.neighbors(v).iter().map(|&u| messages[u]).collect();
            let aggregate = layer.message_aggregate(tape, &neighbor_msgs)?;
            next.push(layer.message_update(tape, ps, aggregate, messages[v])?);
        }
        hidden = next;
    }
    Ok(hidden)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_graph, FarmMeta};
    use crate::seed;

    fn farm(id: &str, lat: f64, lon: f64) -> FarmMeta {
        FarmMeta {
            farm_id: id.into(),
            latitude: lat,
            longitude: lon,
            capacity: None,
        }
    }

    fn layer_with_params(dim: usize, seed_label: &str) -> (GnnLayer, ParamSet) {
        let layer = GnnLayer::new("gnn", 0, dim);
        let mut ps = ParamSet::new();
        let mut rng = seed::rng(seed::derive(13, seed_label));
        layer.init_into(&mut ps, &mut rng).unwrap();
        (layer, ps)
    }

    #[test]
    fn zero_hidden_zero_bias_gives_zero_message() {
        let (layer, ps) = layer_with_params(3, "zero-msg");
        let mut tape = Tape::new();
        let h = tape.input(&[0.0, 0.0, 0.0]).unwrap();
        let m = layer.message_compute(&mut tape, &ps, h).unwrap();
        assert_eq!(tape.value(m), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_message_block_is_tanh() {
        let layer = GnnLayer::new("gnn", 0, 2);
        let mut ps = ParamSet::new();
        ps.insert_matrix("gnn.l0.msg.w", 2, 2, vec![1.0, 0.0, 0.0, 1.0])
            .unwrap();
        ps.insert_vector_zero("gnn.l0.msg.b", 2).unwrap();
        let mut tape = Tape::new();
        let h = tape.input(&[0.4, -1.2]).unwrap();
        let m = layer.message_compute(&mut tape, &ps, h).unwrap();
        assert_eq!(tape.value(m), &[0.4f64.tanh(), (-1.2f64).tanh()]);
    }

    #[test]
    fn aggregate_examples() {
        let (layer, _) = layer_with_params(2, "agg");
        let mut tape = Tape::new();
        let a = tape.input(&[1.0, 3.0]).unwrap();
        let b = tape.input(&[3.0, 1.0]).unwrap();
        let mean = layer.message_aggregate(&mut tape, &[a, b]).unwrap();
        assert_eq!(tape.value(mean), &[2.0, 2.0]);

        let single = layer.message_aggregate(&mut tape, &[a]).unwrap();
        assert_eq!(tape.value(single), tape.value(a));

        let empty = layer.message_aggregate(&mut tape, &[]).unwrap();
        assert_eq!(tape.value(empty), &[0.0, 0.0]);
    }

    #[test]
    fn aggregate_matches_summation_oracle() {
        let (layer, _) = layer_with_params(4, "agg-oracle");
        let mut tape = Tape::new();
        let values: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.321).sin()).collect())
            .collect();
        let nodes: Vec<NodeId> = values.iter().map(|v| tape.input(v).unwrap()).collect();
        let mean = layer.message_aggregate(&mut tape, &nodes).unwrap();
        for j in 0..4 {
            let expect: f64 = values.iter().map(|v| v[j]).sum::<f64>() / 5.0;
            assert!((tape.value(mean)[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn update_zero_inputs_zero_bias_is_zero() {
        let (layer, ps) = layer_with_params(3, "upd-zero");
        let mut tape = Tape::new();
        let z = tape.input(&[0.0, 0.0, 0.0]).unwrap();
        let out = layer.message_update(&mut tape, &ps, z, z).unwrap();
        assert_eq!(tape.value(out), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn neighbor_permutation_is_exact() {
        // All 24 orderings of 4 neighbor messages produce bit-identical
        // aggregates and updates.
        let (layer, ps) = layer_with_params(3, "perm");
        let mut tape = Tape::new();
        let msgs: Vec<NodeId> = (0..4)
            .map(|i| {
                tape.input(&[0.1 * i as f64 + 0.05, -0.2 * i as f64, (i as f64).sin()])
                    .unwrap()
            })
            .collect();
        let own = tape.input(&[0.3, -0.1, 0.2]).unwrap();
        let mut reference: Option<Vec<f64>> = None;
        let perms = permutations(&[0, 1, 2, 3]);
        assert_eq!(perms.len(), 24);
        for perm in perms {
            let ordered: Vec<NodeId> = perm.iter().map(|&i| msgs[i]).collect();
            let agg = layer.message_aggregate(&mut tape, &ordered).unwrap();
            let out = layer.message_update(&mut tape, &ps, agg, own).unwrap();
            match &reference {
                None => reference = Some(tape.value(out).to_vec()),
                Some(r) => {
                    assert!(tape
                        .value(out)
                        .iter()
                        .zip(r)
                        .all(|(a, b)| a.to_bits() == b.to_bits()));
                }
            }
        }
    }

    fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for (i, &head) in items.iter().enumerate() {
            let rest: Vec<usize> = items
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, &v)| v)
                .collect();
            for mut tail in permutations(&rest) {
                tail.insert(0, head);
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn zero_layers_return_initial_state() {
        let farms = [farm("a", 40.0, 0.0), farm("b", 40.0, 0.2)];
        let graph = build_graph(&farms, 1).unwrap();
        let ps = ParamSet::new();
        let mut tape = Tape::new();
        let h0 = tape.input(&[0.5, 0.5]).unwrap();
        let h1 = tape.input(&[-0.5, 0.1]).unwrap();
        let out = gnn_forward(&mut tape, &ps, &graph, vec![h0, h1], &[]).unwrap();
        assert_eq!(tape.value(out[0]), &[0.5, 0.5]);
        assert_eq!(tape.value(out[1]), &[-0.5, 0.1]);
    }

    #[test]
    fn edgeless_graph_equals_per_node_processing() {
        // k = 0 graph: the aggregate is forced zero, so each node's output
        // must match the isolated computation update(0, message(h)).
        let farms: Vec<FarmMeta> = (0..3)
            .map(|i| farm(&format!("n{i}"), 40.0 + i as f64, 0.0))
            .collect();
        let graph = build_graph(&farms, 0).unwrap();
        let (layer, ps) = layer_with_params(3, "edgeless");
        let states = [[0.2, -0.4, 0.6], [0.0, 0.5, -0.5], [0.9, 0.1, -0.3]];
        let mut tape = Tape::new();
        let initial: Vec<NodeId> = states.iter().map(|s| tape.input(s).unwrap()).collect();
        let out = gnn_forward(&mut tape, &ps, &graph, initial, std::slice::from_ref(&layer)).unwrap();
        for (i, s) in states.iter().enumerate() {
            let mut solo = Tape::new();
            let h = solo.input(s).unwrap();
            let m = layer.message_compute(&mut solo, &ps, h).unwrap();
            let zero = layer.message_aggregate(&mut solo, &[]).unwrap();
            let expect = layer.message_update(&mut solo, &ps, zero, m).unwrap();
            for (a, b) in tape.value(out[i]).iter().zip(solo.value(expect)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn isomorphic_graphs_give_permuted_identical_outputs() {
        // Same geometry, relabeled ids: outputs must match farm-by-farm
        // bit for bit.
        let coords = [
            (40.0, 0.00),
            (40.2, 0.10),
            (40.4, 0.05),
            (40.6, 0.20),
            (40.8, 0.15),
            (41.0, 0.25),
        ];
        let ids_a = ["a", "b", "c", "d", "e", "f"];
        let ids_b = ["f", "e", "d", "c", "b", "a"]; // relabeled
        let farms_a: Vec<FarmMeta> = coords
            .iter()
            .zip(ids_a)
            .map(|(&(la, lo), id)| farm(id, la, lo))
            .collect();
        let farms_b: Vec<FarmMeta> = coords
            .iter()
            .zip(ids_b)
            .map(|(&(la, lo), id)| farm(id, la, lo))
            .collect();
        let ga = build_graph(&farms_a, 2).unwrap();
        let gb = build_graph(&farms_b, 2).unwrap();
        let (layer, ps) = layer_with_params(3, "iso");

        let states: Vec<[f64; 3]> = (0..6)
            .map(|i| [(i as f64 * 0.3).sin(), 0.1 * i as f64, -0.05 * i as f64])
            .collect();
        let run = |g: &WindFarmGraph, ids: &[&str]| -> Vec<(String, Vec<f64>)> {
            let mut tape = Tape::new();
            // feed each geometric site the same state regardless of label
            let initial: Vec<NodeId> = (0..g.node_count())
                .map(|v| {
                    let site = ids
                        .iter()
                        .position(|id| *id == g.node(v).farm_id)
                        .unwrap();
                    tape.input(&states[site]).unwrap()
                })
                .collect();
            let out = gnn_forward(&mut tape, &ps, g, initial, std::slice::from_ref(&layer)).unwrap();
            (0..g.node_count())
                .map(|v| (g.node(v).farm_id.clone(), tape.value(out[v]).to_vec()))
                .collect()
        };
        let out_a = run(&ga, &ids_a);
        let out_b = run(&gb, &ids_b);
        // match by geometric site
        for (site, (&(la, lo), _)) in coords.iter().zip(ids_a).enumerate() {
            let id_a = ids_a[site];
            let id_b = ids_b[coords
                .iter()
                .position(|&(x, y)| x == la && y == lo)
                .unwrap()];
            let va = &out_a.iter().find(|(id, _)| id == id_a).unwrap().1;
            let vb = &out_b.iter().find(|(id, _)| id == id_b).unwrap().1;
            assert!(va.iter().zip(vb.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
