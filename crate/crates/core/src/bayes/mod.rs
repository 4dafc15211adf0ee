//! Hierarchical Bayesian model over raw cosine distances.
//!
//! Each row of a [`LongTable`](crate::LongTable) is one distance between a
//! protected word and an attribute. Distances are normal around a
//! per-(word, category) coefficient; coefficients are normal around a
//! per-category global mean:
//!
//! ```text
//! distance  ~ Normal(theta[word, cat], sigma[cat])
//! theta     ~ Normal(bar[cat], sd[cat])
//! bar       ~ Normal(hyper_mean, hyper_sd)
//! sd, sigma ~ Exponential(sd_rate)
//! ```
//!
//! Fitting uses Metropolis-within-Gibbs: exact conjugate draws for every
//! location parameter and adaptive log-scale random walks for the scales.
//! Each spread is updated with its category's coefficients integrated out
//! and the coefficients are redrawn straight after, and a joint shift of
//! each global mean with its coefficients follows the Gibbs sweep. Both keep
//! the chains moving when between-word spread is close to zero.

mod compare;
pub mod conditionals;
mod diagnostics;
mod model;
mod posterior;
mod ppc;
mod sampler;
mod synthetic;

use thiserror::Error;

use crate::datasets::AssociationCategory;

pub use compare::{compare, ComparisonReport, GapReport, ParameterComparison};
pub use diagnostics::{ess_bulk, hpdi, split_rhat, Hpdi};
pub use model::{log_posterior, CellStats, ModelData, ModelSpec, NoiseStructure, ParamKind, ParamLayout};
pub use posterior::{Chain, ConvergenceReport, ParamDiagnostics, ParamSummary, Posterior};
pub use ppc::{posterior_predictive_check, CategoryPpc, PpcOptions, PpcReport, PpcRow};
pub use sampler::{fit, McmcConfig};
pub use synthetic::{synthetic_table, SyntheticTruth};

#[derive(Debug, Error)]
pub enum BayesError {
    #[error("parameter vector has {found} entries, layout needs {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("protected word {0:?} is not in the parameter layout")]
    UnknownWord(String),
    #[error("category {0} is not in the parameter layout")]
    UnknownCategory(AssociationCategory),
    #[error("protected word {word:?} has no rows in category {category}")]
    EmptyCell {
        word: String,
        category: AssociationCategory,
    },
    #[error("the distance table is empty")]
    EmptyTable,
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid MCMC config: {0}")]
    InvalidConfig(String),
    #[error("no samples")]
    EmptySamples,
    #[error("HPDI mass must be in (0, 1), got {0}")]
    InvalidMass(f64),
    #[error("posteriors differ in structure; missing parameters: {}", missing.join(", "))]
    StructureMismatch { missing: Vec<String> },
    #[error("bad posterior CSV: {0}")]
    BadCsv(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
