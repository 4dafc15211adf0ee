use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{hpdi_sorted, Hpdi};
use super::model::ModelData;
use super::posterior::Posterior;
use super::BayesError;
use crate::datasets::{AssociationCategory, LongTable};
use crate::stats::{mean, population_sd, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpcOptions {
    /// Upper bound on posterior draws used per row; draws are thinned
    /// evenly when the posterior holds more.
    pub max_draws: usize,
    pub seed: u64,
}

impl Default for PpcOptions {
    fn default() -> Self {
        Self {
            max_draws: 4000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcRow {
    pub protected: String,
    pub attribute: String,
    pub category: AssociationCategory,
    pub observed: f64,
    pub predicted_mean: f64,
    pub hpdi89: Hpdi,
    pub hpdi50: Hpdi,
}

/// Observed and replicated distance summaries for one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryPpc {
    pub n_rows: usize,
    pub coverage89: f64,
    pub coverage50: f64,
    pub observed_mean: f64,
    pub observed_sd: f64,
    pub predicted_mean: f64,
    pub predicted_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcReport {
    pub coverage89: f64,
    pub coverage50: f64,
    pub n_rows: usize,
    pub n_draws_used: usize,
    pub by_category: BTreeMap<AssociationCategory, CategoryPpc>,
    pub rows: Vec<PpcRow>,
}

/// Simulates replicate distances for each table row from the posterior and
/// reports how often the observed distance lands in the replicates' 89%
/// and 50% HPDIs.
pub fn posterior_predictive_check(
    post: &Posterior,
    table: &LongTable,
    opts: &PpcOptions,
) -> Result<PpcReport, BayesError> {
    if table.is_empty() {
        return Err(BayesError::EmptyTable);
    }
    let layout = post.layout();
    let data = ModelData::new(layout.clone(), table)?;
    let total = post.n_chains() * post.n_draws();
    let stride = total.div_ceil(opts.max_draws.max(1));
    let draws: Vec<&[f64]> = post.iter_draws().step_by(stride).collect();

    struct RowResult {
        row: PpcRow,
        rep_sum: f64,
        rep_sumsq: f64,
    }
    let results: Vec<RowResult> = data
        .rows()
        .par_iter()
        .enumerate()
        .map(|(r, &(w, k, y))| {
            let mut rng = stream_rng(opts.seed, r as u64);
            let (mu_i, sigma_i) = (layout.theta(w, k), layout.sigma_for(k));
            let mut reps: Vec<f64> = draws
                .iter()
                .map(|d| {
                    let z: f64 = rng.sample(StandardNormal);
                    d[mu_i] + d[sigma_i] * z
                })
                .collect();
            let rep_sum: f64 = reps.iter().sum();
            let rep_sumsq: f64 = reps.iter().map(|x| x * x).sum();
            reps.sort_by(f64::total_cmp);
            let src = &table.rows()[r];
            RowResult {
                row: PpcRow {
                    protected: src.protected.clone(),
                    attribute: src.attribute.clone(),
                    category: src.category,
                    observed: y,
                    predicted_mean: rep_sum / reps.len() as f64,
                    hpdi89: hpdi_sorted(&reps, 0.89),
                    hpdi50: hpdi_sorted(&reps, 0.5),
                },
                rep_sum,
                rep_sumsq,
            }
        })
        .collect();

    let coverage = |rows: &[&RowResult], pick: fn(&PpcRow) -> &Hpdi| {
        rows.iter().filter(|r| pick(&r.row).contains(r.row.observed)).count() as f64 / rows.len() as f64
    };
    let all: Vec<&RowResult> = results.iter().collect();
    let mut by_category = BTreeMap::new();
    for &c in layout.categories() {
        let rows: Vec<&RowResult> = results.iter().filter(|r| r.row.category == c).collect();
        if rows.is_empty() {
            continue;
        }
        let observed: Vec<f64> = rows.iter().map(|r| r.row.observed).collect();
        let n_rep = (rows.len() * draws.len()) as f64;
        let rep_mean = rows.iter().map(|r| r.rep_sum).sum::<f64>() / n_rep;
        let rep_var = rows.iter().map(|r| r.rep_sumsq).sum::<f64>() / n_rep - rep_mean * rep_mean;
        by_category.insert(
            c,
            CategoryPpc {
                n_rows: rows.len(),
                coverage89: coverage(&rows, |r| &r.hpdi89),
                coverage50: coverage(&rows, |r| &r.hpdi50),
                observed_mean: mean(&observed),
                observed_sd: population_sd(&observed),
                predicted_mean: rep_mean,
                predicted_sd: rep_var.max(0.0).sqrt(),
            },
        );
    }
    Ok(PpcReport {
        coverage89: coverage(&all, |r| &r.hpdi89),
        coverage50: coverage(&all, |r| &r.hpdi50),
        n_rows: results.len(),
        n_draws_used: draws.len(),
        by_category,
        rows: results.into_iter().map(|r| r.row).collect(),
    })
}
