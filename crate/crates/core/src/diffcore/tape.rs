//! Operation tape for reverse-mode differentiation.
//!
//! Nodes hold vector values and are recorded in execution order; the backward
//! pass walks them once in reverse. Parameter-consuming operations store the
//! owning set's id and the block name rather than a copy of the weights, so
//! `backward` re-reads the blocks from the sets the caller passes in and
//! refuses to run if any of them changed since recording.
//!
//! The tape is single-threaded by design. Concurrent evaluation of frozen
//! parameters is done by giving each worker its own tape over a shared
//! `&ParamSet`.

use std::collections::BTreeMap;

use super::params::{Gradients, ParamSet};
use crate::error::{Error, Result};

/// Index of a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Constant leaf; no gradient.
    Input,
    /// Trainable leaf: a contiguous slice of a parameter block.
    ParamSlice {
        set: u64,
        name: String,
        offset: usize,
    },
    /// W.x + b with W (and optional b) read from a parameter set.
    Linear {
        set: u64,
        w: String,
        b: Option<String>,
        x: NodeId,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Broadcast-add a length-1 node to every element of `x`.
    AddScalar { x: NodeId, s: NodeId },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Ln(NodeId),
    Softmax(NodeId),
    Conv1dDilated {
        signal: NodeId,
        kernel: NodeId,
        dilation: usize,
    },
    Mean(NodeId),
    /// Order-insensitive elementwise mean over equally-shaped nodes.
    /// Empty input list yields a zero vector of `dim`.
    MeanStack(Vec<NodeId>),
    Concat(Vec<NodeId>),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Recorded forward pass over one or more parameter sets.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    // set id -> version observed when first touched
    versions: BTreeMap<u64, u64>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite node value");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    fn touch(&mut self, ps: &ParamSet) -> Result<()> {
        match self.versions.get(&ps.id()) {
            None => {
                self.versions.insert(ps.id(), ps.version());
                Ok(())
            }
            Some(&v) if v == ps.version() => Ok(()),
            Some(_) => Err(Error::StaleTape),
        }
    }

    /// Constant leaf. Rejects non-finite entries.
    pub fn input(&mut self, values: &[f64]) -> Result<NodeId> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tape input".into()));
        }
        Ok(self.push(values.to_vec(), Op::Input))
    }

    pub fn scalar_input(&mut self, value: f64) -> Result<NodeId> {
        self.input(&[value])
    }

    /// Whole parameter block as a trainable leaf (flattened row-major).
    pub fn param(&mut self, ps: &ParamSet, name: &str) -> Result<NodeId> {
        let len = ps.block(name)?.len();
        self.param_slice(ps, name, 0, len)
    }

    /// Contiguous slice of a parameter block as a trainable leaf.
    pub fn param_slice(
        &mut self,
        ps: &ParamSet,
        name: &str,
        offset: usize,
        len: usize,
    ) -> Result<NodeId> {
        let block = ps.block(name)?;
        if offset + len > block.len() {
            return Err(Error::DimMismatch {
                context: format!("param slice `{name}`[{offset}..{}]", offset + len),
                expected: block.len(),
                got: offset + len,
            });
        }
        self.touch(ps)?;
        let value = block.data[offset..offset + len].to_vec();
        Ok(self.push(
            value,
            Op::ParamSlice {
                set: ps.id(),
                name: name.into(),
                offset,
            },
        ))
    }

    /// W.x + b. `w` must be a `rows x cols` block with `cols == len(x)`;
    /// `b`, when given, a length-`rows` vector block.
    pub fn linear(
        &mut self,
        ps: &ParamSet,
        w: &str,
        b: Option<&str>,
        x: NodeId,
    ) -> Result<NodeId> {
        let wb = ps.block(w)?;
        let xv = &self.nodes[x.0].value;
        if wb.cols != xv.len() {
            return Err(Error::DimMismatch {
                context: format!("linear `{w}`"),
                expected: wb.cols,
                got: xv.len(),
            });
        }
        let mut out = match b {
            Some(bn) => {
                let bb = ps.block(bn)?;
                if bb.len() != wb.rows {
                    return Err(Error::DimMismatch {
                        context: format!("bias `{bn}` for `{w}`"),
                        expected: wb.rows,
                        got: bb.len(),
                    });
                }
                bb.data.clone()
            }
            None => vec![0.0; wb.rows],
        };
        for r in 0..wb.rows {
            let row = &wb.data[r * wb.cols..(r + 1) * wb.cols];
            let mut acc = 0.0;
            for (wv, xvv) in row.iter().zip(xv.iter()) {
                acc += wv * xvv;
            }
            out[r] += acc;
        }
        self.touch(ps)?;
        Ok(self.push(
            out,
            Op::Linear {
                set: ps.id(),
                w: w.into(),
                b: b.map(Into::into),
                x,
            },
        ))
    }

    fn binary_values(&self, a: NodeId, b: NodeId, what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.len() != bv.len() {
            return Err(Error::DimMismatch {
                context: what.into(),
                expected: av.len(),
                got: bv.len(),
            });
        }
        Ok((av.clone(), bv.clone()))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = self.binary_values(a, b, "add")?;
        let out = av.iter().zip(&bv).map(|(x, y)| x + y).collect();
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = self.binary_values(a, b, "sub")?;
        let out = av.iter().zip(&bv).map(|(x, y)| x - y).collect();
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = self.binary_values(a, b, "mul")?;
        let out = av.iter().zip(&bv).map(|(x, y)| x * y).collect();
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.nodes[x.0].value.iter().map(|v| v * c).collect();
        self.push(out, Op::Scale(x, c))
    }

    /// x + s broadcast, with s a length-1 node.
    pub fn add_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.nodes[s.0].value.len() != 1 {
            return Err(Error::DimMismatch {
                context: "add_scalar broadcast operand".into(),
                expected: 1,
                got: self.nodes[s.0].value.len(),
            });
        }
        let sv = self.nodes[s.0].value[0];
        let out = self.nodes[x.0].value.iter().map(|v| v + sv).collect();
        Ok(self.push(out, Op::AddScalar { x, s }))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0]
            .value
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        self.push(out, Op::Sigmoid(x))
    }

    /// Elementwise natural log; requires strictly positive inputs.
    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        if self.nodes[x.0].value.iter().any(|&v| v <= 0.0) {
            return Err(Error::NonFinite("ln of non-positive value".into()));
        }
        let out = self.nodes[x.0].value.iter().map(|v| v.ln()).collect();
        Ok(self.push(out, Op::Ln(x)))
    }

    /// Numerically stable softmax (max subtraction). Empty input is an error.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        if xv.is_empty() {
            return Err(Error::invalid("softmax of empty vector"));
        }
        let max = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let out = exps.iter().map(|e| e / sum).collect();
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Valid (no-padding) dilated convolution.
    /// Output length = len(signal) - (len(kernel) - 1) * dilation.
    pub fn conv1d_dilated(
        &mut self,
        signal: NodeId,
        kernel: NodeId,
        dilation: usize,
    ) -> Result<NodeId> {
        if dilation == 0 {
            return Err(Error::invalid("dilation must be positive"));
        }
        let sv = &self.nodes[signal.0].value;
        let kv = &self.nodes[kernel.0].value;
        if kv.is_empty() {
            return Err(Error::invalid("empty convolution kernel"));
        }
        let required = (kv.len() - 1) * dilation + 1;
        if sv.len() < required {
            return Err(Error::SignalTooShort {
                required,
                got: sv.len(),
            });
        }
        let out_len = sv.len() - (kv.len() - 1) * dilation;
        let mut out = vec![0.0; out_len];
        for (t, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, k) in kv.iter().enumerate() {
                acc += k * sv[t + j * dilation];
            }
            *o = acc;
        }
        Ok(self.push(
            out,
            Op::Conv1dDilated {
                signal,
                kernel,
                dilation,
            },
        ))
    }

    /// Mean over all elements; yields a length-1 node.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        if xv.is_empty() {
            return Err(Error::invalid("mean of empty vector"));
        }
        let m = xv.iter().sum::<f64>() / xv.len() as f64;
        Ok(self.push(vec![m], Op::Mean(x)))
    }

    /// Elementwise mean over a family of equally-shaped nodes. The summation
    /// order per coordinate is canonicalized by sorting the summands, so the
    /// result is bit-identical under any permutation of `inputs`. An empty
    /// family yields a zero vector of `dim`.
    pub fn mean_stack(&mut self, inputs: &[NodeId], dim: usize) -> Result<NodeId> {
        for &id in inputs {
            let len = self.nodes[id.0].value.len();
            if len != dim {
                return Err(Error::DimMismatch {
                    context: "mean_stack".into(),
                    expected: dim,
                    got: len,
                });
            }
        }
        let value = if inputs.is_empty() {
            vec![0.0; dim]
        } else {
            let k = inputs.len() as f64;
            let mut out = vec![0.0; dim];
            let mut column: Vec<f64> = Vec::with_capacity(inputs.len());
            for (j, o) in out.iter_mut().enumerate() {
                column.clear();
                column.extend(inputs.iter().map(|id| self.nodes[id.0].value[j]));
                column.sort_by(f64::total_cmp);
                *o = column.iter().sum::<f64>() / k;
            }
            out
        };
        Ok(self.push(value, Op::MeanStack(inputs.to_vec())))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::invalid("concat of zero nodes"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Reverse pass from a scalar loss node. Returns gradients for every
    /// block of every set in `sets` (zeros for untouched blocks). The tape
    /// itself is unchanged and may be replayed.
    pub fn backward(&self, loss: NodeId, sets: &[&ParamSet]) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[loss.0].value.len()));
        }
        // Every set touched during recording must be supplied and unchanged.
        for (&set_id, &version) in &self.versions {
            let ps = sets
                .iter()
                .find(|ps| ps.id() == set_id)
                .ok_or_else(|| Error::invalid("backward missing a recorded parameter set"))?;
            if ps.version() != version {
                return Err(Error::StaleTape);
            }
        }
        let find_set = |id: u64| sets.iter().find(|ps| ps.id() == id).copied();

        let mut adjoints: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        adjoints[loss.0][0] = 1.0;

        let mut grads = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if adjoints[i].iter().all(|&g| g == 0.0) {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::ParamSlice { set, name, offset } => {
                    let ps = find_set(*set).expect("checked above");
                    let block_len = ps.block(name)?.len();
                    let g = grads.ensure(name, block_len);
                    for (j, gv) in adjoints[i].iter().enumerate() {
                        g[offset + j] += gv;
                    }
                }
                Op::Linear { set, w, b, x } => {
                    let ps = find_set(*set).expect("checked above");
                    let wb = ps.block(w)?;
                    let xv = &self.nodes[x.0].value;
                    let out_grad = adjoints[i].clone();
                    {
                        let gw = grads.ensure(w, wb.len());
                        for (r, orow) in out_grad.iter().enumerate() {
                            for (c, xvv) in xv.iter().enumerate() {
                                gw[r * wb.cols + c] += orow * xvv;
                            }
                        }
                    }
                    if let Some(bn) = b {
                        let gb = grads.ensure(bn, wb.rows);
                        for (r, orow) in out_grad.iter().enumerate() {
                            gb[r] += orow;
                        }
                    }
                    let gx = &mut adjoints[x.0];
                    for (r, orow) in out_grad.iter().enumerate() {
                        let row = &wb.data[r * wb.cols..(r + 1) * wb.cols];
                        for (c, wv) in row.iter().enumerate() {
                            gx[c] += orow * wv;
                        }
                    }
                }
                Op::Add(a, b) => {
                    let g = adjoints[i].clone();
                    for (j, gv) in g.iter().enumerate() {
                        adjoints[a.0][j] += gv;
                    }
                    for (j, gv) in g.iter().enumerate() {
                        adjoints[b.0][j] += gv;
                    }
                }
                Op::Sub(a, b) => {
                    let g = adjoints[i].clone();
                    for (j, gv) in g.iter().enumerate() {
                        adjoints[a.0][j] += gv;
                    }
                    for (j, gv) in g.iter().enumerate() {
                        adjoints[b.0][j] -= gv;
                    }
                }
                Op::Mul(a, b) => {
                    let g = adjoints[i].clone();
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    for (j, gv) in g.iter().enumerate() {
                        adjoints[a.0][j] += gv * bv[j];
                    }
                    for (j, gv) in g.iter().enumerate() {
                        adjoints[b.0][j] += gv * av[j];
                    }
                }
                Op::Scale(x, c) => {
                    let g = adjoints[i].clone();
                    for (j, gv) in g.iter().enumerate() {
                        adjoints[x.0][j] += gv * c;
                    }
                }
                Op::AddScalar { x, s } => {
                    let g = adjoints[i].clone();
                    for (j, gv) in g.iter().enumerate() {
                        adjoints[x.0][j] += gv;
                    }
                    adjoints[s.0][0] += g.iter().sum::<f64>();
                }
                Op::Tanh(x) => {
                    let g = adjoints[i].clone();
                    let yv = node.value.clone();
                    for (j, gv) in g.iter().enumerate() {
                        adjoints[x.0][j] += gv * (1.0 - yv[j] * yv[j]);
                    }
                }
                Op::Sigmoid(x) => {
                    let g = adjoints[i].clone();
                    let yv = node.value.clone();
                    for (j, gv) in g.iter().enumerate() {
                        adjoints[x.0][j] += gv * yv[j] * (1.0 - yv[j]);
                    }
                }
                Op::Ln(x) => {
                    let g = adjoints[i].clone();
                    let xv = self.nodes[x.0].value.clone();
                    for (j, gv) in g.iter().enumerate() {
                        adjoints[x.0][j] += gv / xv[j];
                    }
                }
                Op::Softmax(x) => {
                    let g = adjoints[i].clone();
                    let yv = node.value.clone();
                    let dot: f64 = g.iter().zip(&yv).map(|(gv, yvv)| gv * yvv).sum();
                    for j in 0..g.len() {
                        adjoints[x.0][j] += yv[j] * (g[j] - dot);
                    }
                }
                Op::Conv1dDilated {
                    signal,
                    kernel,
                    dilation,
                } => {
                    let g = adjoints[i].clone();
                    let sv = self.nodes[signal.0].value.clone();
                    let kv = self.nodes[kernel.0].value.clone();
                    for (t, gv) in g.iter().enumerate() {
                        for (j, k) in kv.iter().enumerate() {
                            adjoints[signal.0][t + j * dilation] += gv * k;
                        }
                    }
                    for (j, _) in kv.iter().enumerate() {
                        let mut acc = 0.0;
                        for (t, gv) in g.iter().enumerate() {
                            acc += gv * sv[t + j * dilation];
                        }
                        adjoints[kernel.0][j] += acc;
                    }
                }
                Op::Mean(x) => {
                    let g = adjoints[i][0];
                    let n = self.nodes[x.0].value.len() as f64;
                    for gv in adjoints[x.0].iter_mut() {
                        *gv += g / n;
                    }
                }
                Op::MeanStack(inputs) => {
                    if !inputs.is_empty() {
                        let g = adjoints[i].clone();
                        let k = inputs.len() as f64;
                        for &inp in inputs {
                            for (j, gv) in g.iter().enumerate() {
                                adjoints[inp.0][j] += gv / k;
                            }
                        }
                    }
                }
                Op::Concat(parts) => {
                    let g = adjoints[i].clone();
                    let mut off = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.len();
                        for j in 0..len {
                            adjoints[p.0][j] += g[off + j];
                        }
                        off += len;
                    }
                }
            }
        }

        // Zero-fill untouched blocks so every block of every set is keyed.
        for ps in sets {
            for (name, block) in ps.iter() {
                grads.ensure(name, block.len());
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(name: &str, data: Vec<f64>) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert_vector(name, data).unwrap();
        ps
    }

    #[test]
    fn linear_identity() {
        let mut ps = ParamSet::new();
        ps.insert_matrix("w", 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        ps.insert_vector("b", vec![0.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(&[1.0, 2.0]).unwrap();
        let y = tape.linear(&ps, "w", Some("b"), x).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0]);
    }

    #[test]
    fn linear_forced_arithmetic() {
        let mut ps = ParamSet::new();
        ps.insert_matrix("w", 2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        ps.insert_vector("b", vec![0.0, 1.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(&[1.0, 1.0]).unwrap();
        let y = tape.linear(&ps, "w", Some("b"), x).unwrap();
        assert_eq!(tape.value(y), &[2.0, 1.0]);
    }

    #[test]
    fn linear_matches_dense_product_oracle() {
        // 4 -> 3 layer against an independent triple-loop product.
        let mut rng = crate::seed::rng(crate::seed::derive(11, "linear-oracle"));
        use rand::Rng;
        let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ps = ParamSet::new();
        ps.insert_matrix("w", 3, 4, w.clone()).unwrap();
        ps.insert_vector("b", b.clone()).unwrap();
        let mut tape = Tape::new();
        let xn = tape.input(&x).unwrap();
        let y = tape.linear(&ps, "w", Some("b"), xn).unwrap();
        for r in 0..3 {
            let mut expect = b[r];
            for c in 0..4 {
                expect += w[r * 4 + c] * x[c];
            }
            assert!((tape.value(y)[r] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_dimension_mismatch_names_both() {
        let mut ps = ParamSet::new();
        ps.insert_matrix("w", 2, 3, vec![0.0; 6]).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(&[1.0, 2.0]).unwrap();
        let err = tape.linear(&ps, "w", None, x).unwrap_err();
        match err {
            Error::DimMismatch { expected, got, .. } => {
                assert_eq!(expected, 3);
                assert_eq!(got, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::new();
        let s = tape.input(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        let k = tape.input(&[1.0]).unwrap();
        let y = tape.conv1d_dilated(s, k, 1).unwrap();
        assert_eq!(tape.value(y), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn conv_dilation_two_sliding_window() {
        let mut tape = Tape::new();
        let s = tape.input(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let k = tape.input(&[1.0, 1.0]).unwrap();
        let y = tape.conv1d_dilated(s, k, 2).unwrap();
        assert_eq!(tape.value(y), &[4.0, 6.0, 8.0]);
        // independent sliding-window oracle
        let sig = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ker = [1.0, 1.0];
        for t in 0..3 {
            let mut acc = 0.0;
            for (j, kv) in ker.iter().enumerate() {
                acc += kv * sig[t + 2 * j];
            }
            assert_eq!(tape.value(y)[t], acc);
        }
    }

    #[test]
    fn conv_too_short_reports_required_length() {
        let mut tape = Tape::new();
        let s = tape.input(&[1.0, 2.0]).unwrap();
        let k = tape.input(&[1.0, 1.0]).unwrap();
        match tape.conv1d_dilated(s, k, 4).unwrap_err() {
            Error::SignalTooShort { required, got } => {
                assert_eq!(required, 5);
                assert_eq!(got, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn stacked_kernel2_dilations_124_have_receptive_field_8() {
        // Receptive field recurrence: 1 + sum (k-1) * d = 1 + 1 + 2 + 4 = 8.
        let rf = 1 + [1usize, 2, 4].iter().map(|d| (2 - 1) * d).sum::<usize>();
        assert_eq!(rf, 8);
        // Perturbing inputs outside the last output's receptive field leaves
        // the final element unchanged; inside, it moves.
        let n = 16;
        let run = |sig: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let mut cur = tape.input(sig).unwrap();
            for d in [1usize, 2, 4] {
                let k = tape.input(&[0.6, -0.4]).unwrap();
                cur = tape.conv1d_dilated(cur, k, d).unwrap();
            }
            *tape.value(cur).last().unwrap()
        };
        let base: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let y0 = run(&base);
        for i in 0..n {
            let mut perturbed = base.clone();
            perturbed[i] += 1.0;
            let y = run(&perturbed);
            if i < n - rf {
                assert_eq!(y, y0, "input {i} is outside the receptive field");
            } else {
                assert_ne!(y, y0, "input {i} is inside the receptive field");
            }
        }
    }

    #[test]
    fn softmax_uniform_and_shift_invariance() {
        let mut tape = Tape::new();
        let x = tape.input(&[0.0, 0.0, 0.0, 0.0]).unwrap();
        let y = tape.softmax(x).unwrap();
        for v in tape.value(y) {
            assert!((v - 0.25).abs() < 1e-15);
        }
        for c in [-1000.0, -3.5, 0.0, 7.25, 1000.0] {
            let mut t = Tape::new();
            let x = t.input(&[c, c]).unwrap();
            let y = t.softmax(x).unwrap();
            assert_eq!(t.value(y), &[0.5, 0.5]);
        }
    }

    #[test]
    fn softmax_overflow_guard() {
        let mut tape = Tape::new();
        let x = tape.input(&[1000.0, 0.0]).unwrap();
        let y = tape.softmax(x).unwrap();
        let v = tape.value(y);
        assert!(v.iter().all(|p| p.is_finite()));
        // exp(-1000) underflows to zero in double precision.
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!(v[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_empty_is_error() {
        let mut tape = Tape::new();
        let x = tape.input(&[]).unwrap();
        assert!(tape.softmax(x).is_err());
    }

    #[test]
    fn backward_square() {
        let ps = single_param("x", vec![3.0]);
        let mut tape = Tape::new();
        let x = tape.param(&ps, "x").unwrap();
        let sq = tape.mul(x, x).unwrap();
        let grads = tape.backward(sq, &[&ps]).unwrap();
        assert!((grads.get("x").unwrap()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn backward_softmax_cross_entropy_symmetry() {
        // Uniform logits, uniform target: gradient is exactly zero.
        let ps = single_param("logits", vec![0.5, 0.5, 0.5, 0.5]);
        let mut tape = Tape::new();
        let x = tape.param(&ps, "logits").unwrap();
        let sm = tape.softmax(x).unwrap();
        let lsm = tape.ln(sm).unwrap();
        let target = tape.input(&[0.25, 0.25, 0.25, 0.25]).unwrap();
        let prod = tape.mul(lsm, target).unwrap();
        let m = tape.mean(prod).unwrap();
        let loss = tape.scale(m, -4.0); // -sum t_i ln y_i
        let grads = tape.backward(loss, &[&ps]).unwrap();
        for g in grads.get("logits").unwrap() {
            assert!(g.abs() < 1e-15);
        }
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let ps = single_param("x", vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let x = tape.param(&ps, "x").unwrap();
        assert!(matches!(
            tape.backward(x, &[&ps]),
            Err(Error::NonScalarLoss(2))
        ));
    }

    #[test]
    fn backward_is_rerunnable() {
        let ps = single_param("x", vec![2.0]);
        let mut tape = Tape::new();
        let x = tape.param(&ps, "x").unwrap();
        let sq = tape.mul(x, x).unwrap();
        let a = tape.backward(sq, &[&ps]).unwrap();
        let b = tape.backward(sq, &[&ps]).unwrap();
        assert_eq!(a.get("x").unwrap(), b.get("x").unwrap());
    }

    #[test]
    fn stale_params_are_rejected() {
        let mut ps = single_param("x", vec![2.0]);
        let mut tape = Tape::new();
        let x = tape.param(&ps, "x").unwrap();
        let sq = tape.mul(x, x).unwrap();
        ps.bump_version();
        assert!(matches!(tape.backward(sq, &[&ps]), Err(Error::StaleTape)));
    }

    #[test]
    fn mean_stack_is_permutation_exact() {
        let mut tape = Tape::new();
        let a = tape.input(&[0.1, 0.7]).unwrap();
        let b = tape.input(&[-0.3, 0.2]).unwrap();
        let c = tape.input(&[0.9, -0.5]).unwrap();
        let d = tape.input(&[0.25, 0.4]).unwrap();
        let fwd = tape.mean_stack(&[a, b, c, d], 2).unwrap();
        let rev = tape.mean_stack(&[d, c, b, a], 2).unwrap();
        let mix = tape.mean_stack(&[c, a, d, b], 2).unwrap();
        assert_eq!(tape.value(fwd), tape.value(rev));
        assert_eq!(tape.value(fwd), tape.value(mix));
    }

    #[test]
    fn mean_stack_empty_is_zero() {
        let mut tape = Tape::new();
        let z = tape.mean_stack(&[], 3).unwrap();
        assert_eq!(tape.value(z), &[0.0, 0.0, 0.0]);
    }
}
