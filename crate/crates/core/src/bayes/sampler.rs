use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::conditionals::{log_scale_conditional, log_sd_marginal, sample_bar, sample_theta, sample_translation};
use super::model::ParamKind;
use super::model::{ModelData, ModelSpec, ParamLayout};
use super::posterior::{Chain, Posterior};
use super::BayesError;
use crate::datasets::LongTable;
use crate::stats::stream_rng;

const TARGET_ACCEPTANCE: f64 = 0.44;
const ADAPT_BATCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            draws: 2000,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), BayesError> {
        let mut problems = Vec::new();
        if self.chains < 2 {
            problems.push(format!("at least 2 chains are needed (got {})", self.chains));
        }
        if self.draws < 1 {
            problems.push("draws must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(BayesError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Draws from the posterior of the model given `table`.
///
/// Each chain runs on its own RNG stream, so the result depends only on the
/// inputs and `config.seed`.
pub fn fit(table: &LongTable, spec: &ModelSpec, config: &McmcConfig) -> Result<Posterior, BayesError> {
    spec.validate()?;
    config.validate()?;
    let layout = ParamLayout::from_table(table, spec.noise);
    let data = ModelData::new(layout.clone(), table)?;
    data.require_full()?;
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(&data, spec, config, c as u64))
        .collect::<Vec<_>>();
    Posterior::new(layout, *spec, *config, chains)
}

fn initial_state<R: Rng>(data: &ModelData, rng: &mut R) -> Vec<f64> {
    let l = data.layout();
    let nw = l.words().len();
    let mut state = vec![0.0; l.dim()];
    let jitter = |rng: &mut R| rng.random_range(-0.05..0.05);
    let spread = |rng: &mut R| rng.random_range(-0.5f64..0.5).exp();
    for k in 0..l.n_categories() {
        let means: Vec<f64> = (0..nw)
            .map(|w| {
                let c = data.cell(w, k);
                c.sum / c.n as f64
            })
            .collect();
        for (w, m) in means.iter().enumerate() {
            state[l.theta(w, k)] = m + jitter(rng);
        }
        let grand = means.iter().sum::<f64>() / nw as f64;
        state[l.bar(k)] = grand + jitter(rng);
        let sd = (means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / nw as f64).sqrt();
        state[l.sd(k)] = sd.max(0.01) * spread(rng);
    }
    for j in 0..l.n_sigmas() {
        let mut n = 0usize;
        let mut ss = 0.0;
        for k in (0..l.n_categories()).filter(|&k| l.sigma_for(k) == l.sigma(j)) {
            for w in 0..nw {
                let c = data.cell(w, k);
                n += c.n;
                ss += c.residual_ss(c.sum / c.n as f64);
            }
        }
        state[l.sigma(j)] = (ss / n as f64).sqrt().max(0.01) * spread(rng);
    }
    state
}

fn run_chain(data: &ModelData, spec: &ModelSpec, config: &McmcConfig, chain: u64) -> Chain {
    let l = data.layout();
    let mut rng = stream_rng(config.seed, chain);
    let mut state = initial_state(data, &mut rng);
    let scales: Vec<usize> = l.scale_indices().collect();
    let nk = l.n_categories();
    let mut log_step = vec![(0.5f64).ln(); scales.len()];
    let mut batch_accepts = vec![0usize; scales.len()];
    let mut kept_accepts = vec![0usize; scales.len()];
    let mut draws = Vec::with_capacity(config.draws * l.dim());
    let mut batch = 0usize;

    for iter in 0..config.warmup + config.draws {
        for w in 0..l.words().len() {
            for k in 0..l.n_categories() {
                sample_theta(data, &mut state, w, k, &mut rng);
            }
        }
        for k in 0..l.n_categories() {
            sample_bar(data, spec, &mut state, k, &mut rng);
        }
        for k in 0..nk {
            sample_translation(data, spec, &mut state, k, &mut rng);
        }
        for (s, &i) in scales.iter().enumerate() {
            let current = state[i].ln();
            let z: f64 = rng.sample(StandardNormal);
            let proposal = current + log_step[s].exp() * z;
            let log_ratio = match l.kind(i) {
                ParamKind::Sd(k) => {
                    log_sd_marginal(data, spec, &state, k, proposal) - log_sd_marginal(data, spec, &state, k, current)
                }
                _ => {
                    log_scale_conditional(data, spec, &state, i, proposal)
                        - log_scale_conditional(data, spec, &state, i, current)
                }
            };
            let u: f64 = rng.random();
            if u.ln() < log_ratio {
                state[i] = proposal.exp();
                if iter < config.warmup {
                    batch_accepts[s] += 1;
                } else {
                    kept_accepts[s] += 1;
                }
            }
            // the spread was drawn with its coefficients integrated out;
            // completing the block means redrawing them
            if let ParamKind::Sd(k) = l.kind(i) {
                for w in 0..l.words().len() {
                    sample_theta(data, &mut state, w, k, &mut rng);
                }
            }
        }
        if iter < config.warmup && (iter + 1) % ADAPT_BATCH == 0 {
            batch += 1;
            let delta = (0.1f64).min(1.0 / (batch as f64).sqrt());
            for s in 0..scales.len() {
                let rate = batch_accepts[s] as f64 / ADAPT_BATCH as f64;
                log_step[s] += if rate > TARGET_ACCEPTANCE { delta } else { -delta };
                batch_accepts[s] = 0;
            }
        }
        if iter >= config.warmup {
            draws.extend_from_slice(&state);
        }
    }
    Chain {
        draws,
        acceptance: kept_accepts.iter().map(|&a| a as f64 / config.draws as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::synthetic::SyntheticTruth;

    fn quick() -> McmcConfig {
        McmcConfig {
            chains: 2,
            warmup: 200,
            draws: 300,
            seed: 9,
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let truth = SyntheticTruth::example(5, 1);
        let table = truth.table(10, 2).unwrap();
        let a = fit(&table, &ModelSpec::default(), &quick()).unwrap();
        let b = fit(&table, &ModelSpec::default(), &quick()).unwrap();
        assert_eq!(a.chains(), b.chains());
        let c = fit(&table, &ModelSpec::default(), &McmcConfig { seed: 10, ..quick() }).unwrap();
        assert_ne!(a.chains(), c.chains());
    }

    #[test]
    fn acceptance_near_target() {
        let truth = SyntheticTruth::example(8, 4);
        let table = truth.table(20, 5).unwrap();
        let post = fit(
            &table,
            &ModelSpec::default(),
            &McmcConfig {
                warmup: 1000,
                draws: 1000,
                ..quick()
            },
        )
        .unwrap();
        for chain in post.chains() {
            for &a in &chain.acceptance {
                assert!((0.25..0.65).contains(&a), "{a}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let truth = SyntheticTruth::example(3, 1);
        let table = truth.table(4, 1).unwrap();
        let one_chain = McmcConfig { chains: 1, ..quick() };
        assert!(matches!(
            fit(&table, &ModelSpec::default(), &one_chain),
            Err(BayesError::InvalidConfig(_))
        ));
        let partial = table.filter_categories(|c| c != crate::AssociationCategory::Neutral);
        let mut rows = partial.rows().to_vec();
        rows.retain(|r| !(r.protected == "w00" && r.category == crate::AssociationCategory::Human));
        let holey = LongTable::from_rows(rows).unwrap();
        assert!(matches!(
            fit(&holey, &ModelSpec::default(), &quick()),
            Err(BayesError::EmptyCell { .. })
        ));
        assert!(matches!(
            fit(&LongTable::default(), &ModelSpec::default(), &quick()),
            Err(BayesError::EmptyTable)
        ));
    }
}
