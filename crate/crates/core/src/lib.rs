//! Pareto set approximation by fusing task-specific checkpoints.
//!
//! Given `T` checkpoints fine-tuned from a shared pre-trained model, the
//! crate up-scales selected layers into preference-conditioned
//! weight-ensembling MoE layers: a small router maps a preference vector `r`
//! on the simplex to routing weights `w`, and the layer parameters are decoded
//! as `φ0 + D w`, where the columns of `D` are task vectors. Training the
//! routers over Dirichlet-sampled preferences yields one model that can be
//! unloaded into a plain network for any trade-off.
//!
//! Alongside the MoE module the crate ships the merge baselines (simple
//! averaging, task arithmetic, Ties, Fisher, RegMean), gradient scalarizers
//! (linear, EPO, MGDA) and Pareto-front evaluation tools.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod export;
pub mod merge;
pub mod moe;
pub mod nn;
pub mod pareto;
pub mod scalarize;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};
