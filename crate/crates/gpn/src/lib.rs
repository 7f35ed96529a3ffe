//! Evidential uncertainty for graph node classification.
//!
//! This crate trains a posterior network over graphs: an MLP encoder maps
//! node features to a latent space, per-class radial normalizing flows turn
//! latent positions into class evidence, and personalized-PageRank diffusion
//! propagates evidence along edges. Predictions are Dirichlet distributions
//! whose concentration separates aleatoric from epistemic uncertainty, which
//! is what the evaluation harness scores for out-of-distribution and
//! misclassification detection. A latent-distance (or evidence-divergence)
//! regularizer keeps connected nodes close so that unseen feature directions
//! cannot hide in the latent map.
//!
//! The `examples/` directory is the front door: one runnable example per
//! capability (gradient checking, flow densities, diffusion, training,
//! OOD evaluation, ablations, the closed-form linear scenario). The same
//! operations are scriptable through the thin `gpn` binary; see the README.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod dirichlet;
pub mod encoder;
pub mod flow;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod special;
pub mod trainer;
