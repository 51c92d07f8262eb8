//! Text-embedding innovation and knowledge-spillover measurement.
//!
//! The crate is organized bottom-up:
//!
//! - [`corpus`] and [`embeddings`]: document metadata, `EMB1` matrices, field
//!   sets and filtered views.
//! - [`similarity`]: windowed pools, the k-top mean cosine kernel and
//!   embedding-space diagnostics.
//! - [`measures`]: innovation, created and received spillover indices.
//! - [`clustering`]: per-subject PCA, density clustering, noise handling and
//!   keyword labels.
//! - [`econometrics`]: fixed-effects OLS with clustered errors, placebo
//!   p-values, event-study difference-in-differences and binscatter.
//! - [`synth`]: seeded corpus and panel generators plus brute-force oracles.
//! - [`analysis`]: regression designs built from measure records.

pub mod analysis;
pub mod clustering;
pub mod corpus;
pub mod econometrics;
pub mod embeddings;
pub mod error;
pub mod measures;
pub mod similarity;
pub mod synth;

pub use error::{Error, Result};
