//! Entropic multi-marginal optimal transport on one-dimensional grids.
//!
//! The crate solves the multi-marginal Schrödinger system by Sinkhorn
//! iteration, measures how the Schrödinger potentials depend on the
//! marginals, and simulates the Wasserstein gradient flows driven by the
//! entropic transport cost.

pub mod analysis;
pub mod cli;
pub mod cost;
pub mod error;
pub mod flow;
pub mod io;
mod kernel;
pub mod measure;
pub mod potential;
pub mod solver;

pub use error::{Error, Result};
