//! Temporal encoder: stacked dilated convolutions compress a raw power
//! window into a fixed-length vector.
//!
//! Each layer convolves every input channel with a per-(out, in) kernel,
//! sums, adds a per-channel bias, and applies tanh. After the stack, each
//! channel is averaged over its remaining time positions and the pooled
//! vector goes through a linear projection. Output length is fixed by the
//! projection regardless of the window length.

use rand_chacha::ChaCha8Rng;

use crate::diffcore::{NodeId, ParamSet, Tape};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ConvEncoder {
    pub prefix: String,
    /// Channel counts per stage, `[in, c1, c2, ...]`; input is 1 channel.
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// One dilation per conv layer; layer count = channels.len() - 1.
    pub dilations: Vec<usize>,
    pub out_dim: usize,
}

impl ConvEncoder {
    pub fn new(
        prefix: impl Into<String>,
        hidden_channels: usize,
        kernel: usize,
        dilations: Vec<usize>,
        out_dim: usize,
    ) -> Result<Self> {
        if hidden_channels == 0 || kernel == 0 || out_dim == 0 {
            return Err(Error::invalid("encoder dims must be positive"));
        }
        if dilations.is_empty() || dilations.iter().any(|&d| d == 0) {
            return Err(Error::invalid("encoder needs positive dilations"));
        }
        let mut channels = vec![1];
        channels.extend(std::iter::repeat(hidden_channels).take(dilations.len()));
        Ok(ConvEncoder {
            prefix: prefix.into(),
            channels,
            kernel,
            dilations,
            out_dim,
        })
    }

    /// Shortest window the stack accepts: 1 + sum (kernel - 1) * dilation.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .dilations
            .iter()
            .map(|d| (self.kernel - 1) * d)
            .sum::<usize>()
    }

    fn kernel_block(&self, layer: usize) -> String {
        format!("{}.l{}.k", self.prefix, layer)
    }

    fn bias_block(&self, layer: usize) -> String {
        format!("{}.l{}.b", self.prefix, layer)
    }

    fn proj_w(&self) -> String {
        format!("{}.proj.w", self.prefix)
    }

    fn proj_b(&self) -> String {
        format!("{}.proj.b", self.prefix)
    }

    pub fn init_into(&self, ps: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<()> {
        for l in 0..self.dilations.len() {
            let (c_in, c_out) = (self.channels[l], self.channels[l + 1]);
            // rows = c_out * c_in kernels of length `kernel`
            ps.insert_matrix_uniform(&self.kernel_block(l), c_out * c_in, self.kernel, rng)?;
            ps.insert_vector_zero(&self.bias_block(l), c_out)?;
        }
        let c_last = *self.channels.last().unwrap();
        ps.insert_matrix_uniform(&self.proj_w(), self.out_dim, c_last, rng)?;
        ps.insert_vector_zero(&self.proj_b(), self.out_dim)?;
        Ok(())
    }

    /// Run the conv stack only, returning one node per channel (pre-pooling
    /// activations). Exposed so locality over the receptive field can be
    /// checked directly.
    pub fn forward_prepool(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        window: NodeId,
    ) -> Result<Vec<NodeId>> {
        let rf = self.receptive_field();
        let got = tape.value(window).len();
        if got < rf {
            return Err(Error::SignalTooShort { required: rf, got });
        }
        let mut current = vec![window];
        for (l, &dilation) in self.dilations.iter().enumerate() {
            let (c_in, c_out) = (self.channels[l], self.channels[l + 1]);
            let kname = self.kernel_block(l);
            let bname = self.bias_block(l);
            let mut next = Vec::with_capacity(c_out);
            for o in 0..c_out {
                let mut acc: Option<NodeId> = None;
                for (i, &input) in current.iter().enumerate().take(c_in) {
                    let k = tape.param_slice(ps, &kname, (o * c_in + i) * self.kernel, self.kernel)?;
                    let conv = tape.conv1d_dilated(input, k, dilation)?;
                    acc = Some(match acc {
                        None => conv,
                        Some(a) => tape.add(a, conv)?,
                    });
                }
                let b = tape.param_slice(ps, &bname, o, 1)?;
                let biased = tape.add_scalar(acc.expect("c_in >= 1"), b)?;
                next.push(tape.tanh(biased));
            }
            current = next;
        }
        Ok(current)
    }

    /// Full encoder: conv stack, per-channel global average, projection.
    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, window: NodeId) -> Result<NodeId> {
        let channels = self.forward_prepool(tape, ps, window)?;
        let mut pooled = Vec::with_capacity(channels.len());
        for ch in channels {
            pooled.push(tape.mean(ch)?);
        }
        let stacked = tape.concat(&pooled)?;
        tape.linear(ps, &self.proj_w(), Some(&self.proj_b()), stacked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn encoder() -> ConvEncoder {
        ConvEncoder::new("enc", 4, 2, vec![1, 2, 4], 16).unwrap()
    }

    #[test]
    fn receptive_field_recurrence() {
        assert_eq!(encoder().receptive_field(), 8);
        let e2 = ConvEncoder::new("enc", 4, 3, vec![1, 2], 8).unwrap();
        assert_eq!(e2.receptive_field(), 1 + 2 + 4);
    }

    #[test]
    fn constant_window_equals_projected_constant() {
        // A constant window stays constant through every conv layer, so the
        // encoder output equals the projection of the per-position value,
        // reproduced here by a scalar recurrence.
        let enc = encoder();
        let mut ps = ParamSet::new();
        let mut rng = seed::rng(seed::derive(5, "enc-const"));
        enc.init_into(&mut ps, &mut rng).unwrap();
        let c0 = 0.37;
        let mut tape = Tape::new();
        let w = tape.input(&vec![c0; 24]).unwrap();
        let y = enc.forward(&mut tape, &ps, w).unwrap();

        // scalar recurrence over channels
        let mut level = vec![c0]; // one input channel
        for l in 0..enc.dilations.len() {
            let (c_in, c_out) = (enc.channels[l], enc.channels[l + 1]);
            let kb = ps.block(&format!("enc.l{l}.k")).unwrap();
            let bb = ps.block(&format!("enc.l{l}.b")).unwrap();
            let mut next = Vec::with_capacity(c_out);
            for o in 0..c_out {
                let mut acc = bb.data[o];
                for (i, lv) in level.iter().enumerate().take(c_in) {
                    let ksum: f64 = kb.data
                        [(o * c_in + i) * enc.kernel..(o * c_in + i + 1) * enc.kernel]
                        .iter()
                        .sum();
                    acc += ksum * lv;
                }
                next.push(acc.tanh());
            }
            level = next;
        }
        let pw = ps.block("enc.proj.w").unwrap();
        let pb = ps.block("enc.proj.b").unwrap();
        for r in 0..enc.out_dim {
            let mut expect = pb.data[r];
            for (c, lv) in level.iter().enumerate() {
                expect += pw.data[r * pw.cols + c] * lv;
            }
            assert!(
                (tape.value(y)[r] - expect).abs() < 1e-12,
                "row {r}: {} vs {}",
                tape.value(y)[r],
                expect
            );
        }
    }

    #[test]
    fn final_prepool_column_ignores_positions_outside_receptive_field() {
        let enc = encoder();
        let mut ps = ParamSet::new();
        let mut rng = seed::rng(seed::derive(6, "enc-rf"));
        enc.init_into(&mut ps, &mut rng).unwrap();
        let n = 24;
        let rf = enc.receptive_field();
        let base: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.41).sin() * 0.5).collect();

        let last_column = |window: &[f64]| -> Vec<f64> {
            let mut tape = Tape::new();
            let w = tape.input(window).unwrap();
            let chans = enc.forward_prepool(&mut tape, &ps, w).unwrap();
            chans
                .iter()
                .map(|&ch| *tape.value(ch).last().unwrap())
                .collect()
        };
        let baseline = last_column(&base);
        let mut outside = base.clone();
        for v in outside.iter_mut().take(n - rf) {
            *v += 0.3;
        }
        assert_eq!(last_column(&outside), baseline);
        let mut inside = base.clone();
        inside[n - 1] += 0.3;
        assert_ne!(last_column(&inside), baseline);
    }

    #[test]
    fn output_length_is_fixed_across_window_sizes() {
        let enc = encoder();
        let mut ps = ParamSet::new();
        let mut rng = seed::rng(seed::derive(7, "enc-shape"));
        enc.init_into(&mut ps, &mut rng).unwrap();
        for w_len in [16usize, 24, 48] {
            let mut tape = Tape::new();
            let window: Vec<f64> = (0..w_len).map(|i| (i as f64 * 0.2).cos() * 0.4).collect();
            let w = tape.input(&window).unwrap();
            let y = enc.forward(&mut tape, &ps, w).unwrap();
            assert_eq!(tape.value(y).len(), 16);
        }
    }

    #[test]
    fn short_window_is_an_error() {
        let enc = encoder();
        let mut ps = ParamSet::new();
        let mut rng = seed::rng(seed::derive(8, "enc-short"));
        enc.init_into(&mut ps, &mut rng).unwrap();
        let mut tape = Tape::new();
        let w = tape.input(&[0.1; 7]).unwrap();
        assert!(matches!(
            enc.forward(&mut tape, &ps, w),
            Err(Error::SignalTooShort { required: 8, got: 7 })
        ));
    }
}
