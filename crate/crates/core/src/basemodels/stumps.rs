//! Gradient-boosted depth-1 regression trees.
//!
//! Greedy residual fitting: each round scans every feature and every
//! midpoint threshold for the split minimizing the squared error, takes the
//! residual means as leaf values, and adds the stump scaled by the
//! shrinkage. The first prediction is zero, so on constant targets a single
//! full-shrinkage stump predicts the mean. Training loss never increases
//! from round to round for shrinkage in (0, 1].

use serde::{Deserialize, Serialize};

use crate::data::WindowSample;
use crate::error::{Error, Result};

/// One axis-aligned split: `x[feature] <= threshold` picks `left`.
/// A constant stump uses `threshold = +inf` with equal leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

impl Stump {
    fn apply(&self, x: &[f64]) -> f64 {
        if x[self.feature] <= self.threshold {
            self.left
        } else {
            self.right
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StumpEnsemble {
    pub stumps: Vec<Stump>,
    pub shrinkage: f64,
    pub training_loss: f64,
}

impl StumpEnsemble {
    pub fn predict(&self, window: &[f64]) -> Result<f64> {
        for stump in &self.stumps {
            if stump.feature >= window.len() {
                return Err(Error::DimMismatch {
                    context: "stump feature index".into(),
                    expected: stump.feature + 1,
                    got: window.len(),
                });
            }
        }
        Ok(self
            .stumps
            .iter()
            .map(|s| self.shrinkage * s.apply(window))
            .sum())
    }

    /// Prediction truncated to the first `rounds` stumps.
    pub fn predict_partial(&self, window: &[f64], rounds: usize) -> Result<f64> {
        Ok(self
            .stumps
            .iter()
            .take(rounds)
            .map(|s| self.shrinkage * s.apply(window))
            .sum())
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    left: f64,
    right: f64,
}

pub fn fit(train: &[WindowSample], rounds: usize, shrinkage: f64) -> Result<StumpEnsemble> {
    let n = train.len();
    let width = train[0].window.len();
    if width == 0 {
        return Err(Error::invalid("stumps need non-empty windows"));
    }
    for s in train {
        if s.window.len() != width {
            return Err(Error::DimMismatch {
                context: "stump training windows".into(),
                expected: width,
                got: s.window.len(),
            });
        }
    }

    // Per-feature sample order, computed once.
    let mut orders: Vec<Vec<usize>> = Vec::with_capacity(width);
    for f in 0..width {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| train[a].window[f].total_cmp(&train[b].window[f]));
        orders.push(idx);
    }

    let mut residuals: Vec<f64> = train.iter().map(|s| s.target).collect();
    let mut stumps = Vec::with_capacity(rounds);

    for _ in 0..rounds {
        let total: f64 = residuals.iter().sum();
        let mean = total / n as f64;
        // SSE = sum r^2 - explained; maximizing the explained term over
        // splits minimizes the SSE. The constant stump explains total^2/n.
        let mut best = BestSplit {
            feature: 0,
            threshold: f64::INFINITY,
            left: mean,
            right: mean,
        };
        let mut best_explained = total * total / n as f64;
        for (f, order) in orders.iter().enumerate() {
            // prefix scan over the sorted order
            let mut left_sum = 0.0;
            for split in 1..n {
                left_sum += residuals[order[split - 1]];
                let a = train[order[split - 1]].window[f];
                let b = train[order[split]].window[f];
                if a == b {
                    continue; // threshold must separate distinct values
                }
                let left_n = split as f64;
                let right_n = (n - split) as f64;
                let right_sum = total - left_sum;
                let explained = left_sum * left_sum / left_n + right_sum * right_sum / right_n;
                if explained > best_explained + 1e-15 {
                    best_explained = explained;
                    best = BestSplit {
                        feature: f,
                        threshold: 0.5 * (a + b),
                        left: left_sum / left_n,
                        right: right_sum / right_n,
                    };
                }
            }
        }
        let stump = Stump {
            feature: best.feature,
            threshold: best.threshold,
            left: best.left,
            right: best.right,
        };
        for (i, s) in train.iter().enumerate() {
            residuals[i] -= shrinkage * stump.apply(&s.window);
        }
        stumps.push(stump);
    }

    let training_loss = residuals.iter().map(|r| r * r).sum::<f64>() / n as f64;
    Ok(StumpEnsemble {
        stumps,
        shrinkage,
        training_loss,
    })
}
