//! Minimal reverse-mode differentiation core.
//!
//! Just enough machinery for the networks in this crate: named parameter
//! blocks ([`ParamSet`]), an operation tape ([`Tape`]) with vector-valued
//! nodes, plain and moment-based optimizers, small MLP helpers, and a
//! finite-difference gradient checker. Double precision throughout; no
//! dynamic shapes, no fusion, no GPU.

pub mod check;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod tape;

pub use mlp::MlpSpec;
pub use optim::{Direction, OptimConfig, OptimKind, Optimizer};
pub use params::{Block, Gradients, ParamSet};
pub use tape::{NodeId, Tape};

use crate::error::{Error, Result};

/// A finite 1-D vector of scalars; the carrier for node states, messages,
/// embeddings, and weight vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Vec1(Vec<f64>);

impl Vec1 {
    /// Wrap a vector, rejecting NaN/Inf entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Vec1".into()));
        }
        Ok(Vec1(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for Vec1 {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Vec1 {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}
