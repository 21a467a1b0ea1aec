//! Learning the dependency structure of weak supervision sources.
//!
//! Sources and the latent label form a binary Ising model. The observed
//! inverse covariance splits into a graph-structured sparse part and a
//! rank-one part contributed by the latent label; a sparse plus low-rank
//! decomposition recovers the source graph from the sparse part.
//!
//! Modules, bottom up: [`mrf`] (model, exact enumeration, Gibbs sampling),
//! [`covariance`], [`rpca`] (the decomposition solver), [`structure`]
//! (thresholding and scoring), [`analysis`] (identifiability and
//! sample-complexity diagnostics), [`experiments`] (ensembles, sweeps, a
//! node-wise baseline), [`io`] and [`cli`].

pub mod analysis;
pub mod cli;
pub mod covariance;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod mrf;
pub mod rpca;
pub mod structure;

pub use error::{Error, Result};
