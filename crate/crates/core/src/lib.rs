//! Grouped network autoregression with a graph-assisted Chinese restaurant
//! process prior, fitted by collapsed Gibbs sampling.
//!
//! The usual flow is [`PreparedData::new`] from a panel and a graph,
//! [`run_chain_prepared`] (or [`select_h`] over a grid of smoothing
//! values), then [`dahl_select`] for the point estimate.

pub mod draws;
pub mod error;
pub mod graph;
pub mod io;
mod linalg;
pub mod model;
pub mod posthoc;
pub mod sampler;
pub mod simgen;

pub use nalgebra;

pub use error::{Error, Result};
pub use graph::{
    build_weights, row_normalized_adjacency, shortest_path_distances, AdjacencyMatrix, DistanceMatrix, IdBase,
    RowNormalizedAdjacency, WeightMatrix,
};
pub use model::{
    build_designs, log_marginal_likelihood, nig_posterior, GroupParams, NigHyper, NigPosterior, NodeDesign,
    PanelData,
};
pub use posthoc::{
    adjusted_rand_index, dahl_select, hpd_interval, lpml, predict, remspe, rmse_params, select_h, FitResult,
    HSelection,
};
pub use sampler::{run_chain, run_chain_prepared, ChainDraws, ChainState, Draw, PreparedData, SamplerConfig};
