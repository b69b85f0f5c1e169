//! Small fully-connected networks: tanh hidden layers, linear output.

use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

/// Layer sizes and the block-name prefix of one MLP.
/// Blocks are `{prefix}.w{l}` (rows x cols) and `{prefix}.b{l}`.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub prefix: String,
    pub dims: Vec<usize>,
}

impl MlpSpec {
    pub fn new(prefix: impl Into<String>, dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("MLP needs at least input and output dims"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("MLP layer dims must be positive"));
        }
        Ok(MlpSpec {
            prefix: prefix.into(),
            dims,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn w_name(&self, layer: usize) -> String {
        format!("{}.w{}", self.prefix, layer)
    }

    fn b_name(&self, layer: usize) -> String {
        format!("{}.b{}", self.prefix, layer)
    }

    /// Seeded uniform weight init, zero biases.
    pub fn init_into(&self, ps: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<()> {
        for l in 0..self.dims.len() - 1 {
            ps.insert_matrix_uniform(&self.w_name(l), self.dims[l + 1], self.dims[l], rng)?;
            ps.insert_vector_zero(&self.b_name(l), self.dims[l + 1])?;
        }
        Ok(())
    }

    /// All-zero init; useful for symmetry tests.
    pub fn init_zero_into(&self, ps: &mut ParamSet) -> Result<()> {
        for l in 0..self.dims.len() - 1 {
            ps.insert_matrix(
                &self.w_name(l),
                self.dims[l + 1],
                self.dims[l],
                vec![0.0; self.dims[l + 1] * self.dims[l]],
            )?;
            ps.insert_vector_zero(&self.b_name(l), self.dims[l + 1])?;
        }
        Ok(())
    }

    /// Record the forward pass; tanh after every layer except the last.
    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, x: NodeId) -> Result<NodeId> {
        let mut cur = x;
        let layers = self.dims.len() - 1;
        for l in 0..layers {
            cur = tape.linear(ps, &self.w_name(l), Some(&self.b_name(l)), cur)?;
            if l + 1 < layers {
                cur = tape.tanh(cur);
            }
        }
        Ok(cur)
    }
}
