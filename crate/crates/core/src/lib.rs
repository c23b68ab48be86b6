//! Interpretable latent-subspace discovery for differentiable image
//! generators, and counterfactuals restricted to the discovered subspaces.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod counterfactual;
pub mod criteria;
pub mod error;
pub mod eval;
pub mod image;
pub mod linalg;
pub mod rng;
pub mod subspace;
pub mod synth;

pub use error::{Error, Result};
