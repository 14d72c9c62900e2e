//! Latent graphical block model pipeline.
//!
//! Implements the full estimation chain for block-structured Gaussian
//! graphical models over latent code embeddings: simulate token corpora from
//! a hidden-Markov discourse process, count windowed co-occurrences, build
//! PMI/SPPMI matrices, recover the code partition, and estimate the
//! cluster-level and code-level precision matrices via constrained l1
//! minimization (CLIME).

pub mod error;
pub mod bench;
pub mod cluster;
pub mod cooc;
pub mod corpus;
pub mod model;
pub mod metrics;
pub mod pmi;
pub mod precision;
pub mod simplex;

pub use error::{Error, Result};
