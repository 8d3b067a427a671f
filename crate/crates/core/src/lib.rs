//! Sparse, graph-regularized mixtures of Gaussian hidden Markov models.
//!
//! Sequences are produced by the nodes of a weighted graph. Every node models
//! its sequences as a mixture over one shared dictionary of HMMs, and the
//! training objective can reward nodes joined by positive edges for sharing
//! components. Besides training, the crate scores sequences (anomaly
//! detection), continues them from a prefix (forecasting) and groups nodes
//! by their dominant component (clustering).

pub mod adam;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod graph;
pub mod hmm;
pub mod io;
pub mod kmeans;
pub mod logspace;
pub mod mixture;
pub mod standardize;
pub mod train;

pub use dataset::{Label, SequenceDataset, SequenceItem};
pub use error::{Error, Result};
pub use graph::AffinityGraph;
pub use hmm::{GaussianHmm, StatePosteriors};
pub use mixture::{MixtureSufficientStats, SparseMixtureModel};
pub use train::{fit, FitResult, InitSpec, TrainConfig};
