//! Fixed-capacity FIFO replay buffer with seeded uniform sampling.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::StateEmbedding;
use crate::error::{Error, Result};
use crate::seed;

/// One stored interaction: state, simplex action, reward, next state.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: StateEmbedding,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: StateEmbedding,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.action.iter().sum();
        if self.action.iter().any(|&a| a < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "action off the simplex (sum {sum})"
            )));
        }
        Ok(())
    }
}

/// Ring of the most recent transitions; eviction is strictly oldest-first,
/// sampling is uniform without replacement within a batch.
#[derive(Debug)]
pub struct ReplayBuffer {
    ring: VecDeque<Transition>,
    capacity: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, sampler_seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay buffer capacity must be positive"));
        }
        Ok(ReplayBuffer {
            ring: VecDeque::with_capacity(capacity),
            capacity,
            rng: seed::rng(sampler_seed),
        })
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, transition: Transition) -> Result<()> {
        transition.validate()?;
        if self.ring.len() == self.capacity {
            self.ring.pop_front();
        }
        self.ring.push_back(transition);
        Ok(())
    }

    /// Oldest-first view, for tests and diagnostics.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.ring.iter()
    }

    /// Uniform batch without replacement (partial Fisher-Yates over the
    /// current indices). Errors until the buffer holds at least `batch`.
    pub fn sample(&mut self, batch: usize) -> Result<Vec<&Transition>> {
        if batch == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.ring.len() < batch {
            return Err(Error::BufferWarmup {
                have: self.ring.len(),
                need: batch,
            });
        }
        let n = self.ring.len();
        let mut indices: Vec<usize> = (0..n).collect();
        for i in 0..batch {
            let j = self.rng.random_range(i..n);
            indices.swap(i, j);
        }
        Ok(indices[..batch].iter().map(|&i| &self.ring[i]).collect())
    }
}
