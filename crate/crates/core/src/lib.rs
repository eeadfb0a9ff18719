//! Top-n recommendation for occasional groups.
//!
//! Users, items and groups are embedded from three interaction graphs
//! (user-item, group-item and the user-user social network). A group's
//! representation is aggregated from its members with multi-head
//! self-attention followed by attention pooling; member representations come
//! from a centrality-aware graph convolution over the social network, fused
//! across several centrality "views". Everything is trained with
//! negative-sampling SGD.
//!
//! Module map:
//!
//! * [`graph`]: dataset loading, id mapping and graph queries.
//! * [`centrality`]: PageRank, eigenvector, closeness and betweenness scores,
//!   and the ranked neighbor views derived from them.
//! * [`params`]: trainable arrays, initialization, gradients, model files.
//! * [`conv`]: per-view convolution, view fusion and their backward pass.
//! * [`attention`]: self-attentive group aggregation and baselines.
//! * [`sampling`]: alias tables, noise distributions, edge and graph choice.
//! * [`train`]: per-step losses and the three optimization procedures.
//! * [`eval`]: temporal split, ranking, Hits@n and MRR.
//! * [`synth`]: planted-cluster dataset generator.
//! * [`gradcheck`]: finite-difference verification of every gradient.
//! * [`pipeline`]: dataset preparation, training and evaluation in one call.

pub mod attention;
pub mod centrality;
pub mod config;
pub mod conv;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
mod linalg;
pub mod params;
pub mod pipeline;
pub mod sampling;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use params::Real;
