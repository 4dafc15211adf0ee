use rand::Rng;
use rand_distr::StandardNormal;

use super::model::{NoiseStructure, ParamLayout};
use super::BayesError;
use crate::datasets::{AssociationCategory, LongRow, LongTable};
use crate::stats::stream_rng;

/// A known parameter vector to generate distance tables from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub layout: ParamLayout,
    pub theta: Vec<f64>,
}

impl SyntheticTruth {
    pub fn new(layout: ParamLayout, theta: Vec<f64>) -> Result<Self, BayesError> {
        if theta.len() != layout.dim() {
            return Err(BayesError::DimensionMismatch {
                expected: layout.dim(),
                found: theta.len(),
            });
        }
        if layout.scale_indices().any(|i| !(theta[i] > 0.0)) {
            return Err(BayesError::InvalidSpec("scales must be positive".to_string()));
        }
        Ok(Self { layout, theta })
    }

    /// All four categories with realistic distance scales; per-word
    /// coefficients drawn from their hierarchical prior.
    pub fn example(n_words: usize, seed: u64) -> Self {
        let words = (0..n_words).map(|w| format!("w{w:02}")).collect();
        let layout = ParamLayout::new(words, AssociationCategory::ALL.to_vec(), NoiseStructure::PerCategory);
        let bars = [0.85, 0.95, 0.9, 1.0];
        let sds = [0.05, 0.04, 0.06, 0.03];
        let sigmas = [0.08, 0.07, 0.09, 0.1];
        let mut theta = vec![0.0; layout.dim()];
        let mut rng = stream_rng(seed, u64::MAX);
        for k in 0..4 {
            theta[layout.bar(k)] = bars[k];
            theta[layout.sd(k)] = sds[k];
            theta[layout.sigma(k)] = sigmas[k];
            for w in 0..n_words {
                let z: f64 = rng.sample(StandardNormal);
                theta[layout.theta(w, k)] = bars[k] + sds[k] * z;
            }
        }
        Self { layout, theta }
    }

    pub fn table(&self, rows_per_cell: usize, seed: u64) -> Result<LongTable, BayesError> {
        synthetic_table(self, rows_per_cell, seed)
    }
}

/// `rows_per_cell` distances per (word, category), each drawn from
/// `Normal(theta[word, cat], sigma[cat])`.
pub fn synthetic_table(truth: &SyntheticTruth, rows_per_cell: usize, seed: u64) -> Result<LongTable, BayesError> {
    let l = &truth.layout;
    let mut rng = stream_rng(seed, 0);
    let mut rows = Vec::with_capacity(l.words().len() * l.n_categories() * rows_per_cell);
    for (w, word) in l.words().iter().enumerate() {
        for (k, &category) in l.categories().iter().enumerate() {
            let mu = truth.theta[l.theta(w, k)];
            let sigma = truth.theta[l.sigma_for(k)];
            for i in 0..rows_per_cell {
                let z: f64 = rng.sample(StandardNormal);
                rows.push(LongRow {
                    protected: word.clone(),
                    attribute: format!("{}{i:04}", category.letter()),
                    category,
                    distance: mu + sigma * z,
                });
            }
        }
    }
    LongTable::from_rows(rows).map_err(|e| BayesError::BadCsv(e.to_string()))
}
