//! Windmix: multi-farm wind power forecasting with a pool of base forecasters
//! whose per-step mixture weights are produced by an actor-critic agent.
//!
//! The pipeline, end to end:
//!
//! 1. [`data`] ingests (or synthesizes) per-farm power series, normalizes them,
//!    splits train/test, windows them, and builds a k-nearest-neighbor farm graph.
//! 2. [`basemodels`] fits a pool of independent forecasters (persistence,
//!    autoregressive, boosted stumps, a small recurrent net, and a graph-aware
//!    regressor) and tracks their rolling per-step losses.
//! 3. [`embedding`] turns each farm's recent window, its graph neighborhood, and
//!    the pool's recent losses into a fixed-length state vector.
//! 4. [`rlens`] trains an actor-critic agent that maps state vectors to mixture
//!    weights over the pool; the weighted combination is the final forecast.
//! 5. [`eval`] scores everything (MAE/RMSE), compares against the uniform-average
//!    ensemble and each base model, and emits reports.
//!
//! All numerics run in double precision on a small tape-based reverse-mode
//! differentiation core ([`diffcore`]); every run is reproducible from a single
//! master seed. With the `parallel` feature (default) the data-parallel stages
//! (seeded repetitions, batch evaluation, gradient checks) fan out via rayon;
//! without it everything runs sequentially with identical results.

pub mod basemodels;
pub mod config;
pub mod data;
pub mod diffcore;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod par;
pub mod rlens;
pub mod seed;

pub use error::{Error, Result};
