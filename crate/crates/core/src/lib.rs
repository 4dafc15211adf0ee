//! Bias measurement for static word embeddings.
//!
//! Three families of analysis live here:
//!
//! * classical single-number metrics (direct bias, WEAT, MAC) in [`geometry`]
//!   and [`metrics`];
//! * null-model simulations showing how those metrics behave when no bias
//!   exists, in [`nullsim`];
//! * a hierarchical Bayesian model over raw cosine distances with MCMC
//!   fitting, HPDIs, posterior predictive checks and before/after
//!   comparison, in [`bayes`].
//!
//! Word lists and the long-format distance table that feeds the Bayesian
//! model are in [`datasets`]; embedding file parsing is in [`embedding`].

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod datasets;
pub mod embedding;
pub mod geometry;
pub mod metrics;
pub mod nullsim;
pub mod stats;

pub use datasets::{AssociationCategory, BiasDataset, LongTable};
pub use embedding::{Embedding, EmbeddingFormat, Lookup, MissingPolicy};
