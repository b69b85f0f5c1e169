//! Gradient-step optimizers: plain steps for exact-arithmetic tests,
//! a moment-based adaptive step for network training.

use std::collections::BTreeMap;

use super::params::{Gradients, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimKind {
    /// w <- w -/+ lr * g
    Plain,
    /// Adaptive step with first/second moment estimates.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub kind: OptimKind,
}

impl OptimConfig {
    pub fn plain(learning_rate: f64) -> Self {
        OptimConfig {
            learning_rate,
            kind: OptimKind::Plain,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimConfig {
            learning_rate,
            kind: OptimKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(
                "learning_rate",
                format!("must be a positive real, got {}", self.learning_rate),
            ));
        }
        if let OptimKind::Adam { beta1, beta2, eps } = self.kind {
            for (name, v) in [("beta1", beta1), ("beta2", beta2)] {
                if !(0.0..1.0).contains(&v) {
                    return Err(Error::config(name, format!("must be in [0,1), got {v}")));
                }
            }
            if !(eps > 0.0) {
                return Err(Error::config("eps", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Step direction: descent minimizes, ascent maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descent,
    Ascent,
}

/// Stateful optimizer bound by convention to one `ParamSet`.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimConfig,
    step_count: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Optimizer {
            cfg,
            step_count: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    /// Apply one step over every block of `params`. Requires a gradient
    /// entry (with matching length) for every block.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &Gradients,
        direction: Direction,
    ) -> Result<()> {
        let sign = match direction {
            Direction::Descent => 1.0,
            Direction::Ascent => -1.0,
        };
        self.step_count += 1;
        let lr = self.cfg.learning_rate;
        for (name, block) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::MissingGradient(name.into()))?;
            if g.len() != block.data.len() {
                return Err(Error::DimMismatch {
                    context: format!("gradient for `{name}`"),
                    expected: block.data.len(),
                    got: g.len(),
                });
            }
            match self.cfg.kind {
                OptimKind::Plain => {
                    for (w, gv) in block.data.iter_mut().zip(g) {
                        *w -= sign * lr * gv;
                    }
                }
                OptimKind::Adam { beta1, beta2, eps } => {
                    let m = self
                        .m
                        .entry(name.to_string())
                        .or_insert_with(|| vec![0.0; g.len()]);
                    let v = self
                        .v
                        .entry(name.to_string())
                        .or_insert_with(|| vec![0.0; g.len()]);
                    let bc1 = 1.0 - beta1.powi(self.step_count as i32);
                    let bc2 = 1.0 - beta2.powi(self.step_count as i32);
                    for ((w, gv), (mv, vv)) in block
                        .data
                        .iter_mut()
                        .zip(g)
                        .zip(m.iter_mut().zip(v.iter_mut()))
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *w -= sign * lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            if block.data.iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFinite(format!("block `{name}` after step")));
            }
        }
        params.bump_version();
        Ok(())
    }
}
