//! Bayesian spatio-temporal fusion of sparse station observations with
//! dense, biased gridded forecast output.
//!
//! Latent Matérn fields are represented as sparse Gaussian Markov random
//! fields on a triangulated mesh, evolve in time as AR(1) processes, and are
//! combined with Gaussian likelihoods so that inference given the
//! hyperparameters is exact. The multiplicative bias of the gridded source is
//! handled by averaging fits over a grid of candidate values.

pub mod error;
pub mod geometry;
pub mod inference;
pub mod lgocv;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod priors;
pub mod simulation;
pub mod spacetime;
pub mod spde;
mod special;

pub use error::{Error, Result};
