//! Null-model simulations: what WEAT reports when no group difference exists.
//!
//! Every cell of a [`NullSample`] is an i.i.d. Normal(mu, sigma) association
//! score. Each simulation draws from its own ChaCha stream, keyed by the
//! master seed and the simulation index, so results do not depend on thread
//! scheduling.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::metrics::{self, MetricsError, PValueRule, PermutationMode, PermutationOptions};
pub use crate::stats::stream_rng;
use crate::stats::{mean, population_sd, sample_variance};

#[derive(Debug, Error, PartialEq)]
pub enum NullSimError {
    #[error("invalid null configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("empty value list")]
    Empty,
    #[error("each group needs at least two values (got {a} and {b})")]
    TooFewValues { a: usize, b: usize },
    #[error("both groups have zero variance")]
    DegenerateVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NullConfig {
    pub n_per_group: usize,
    pub n_attrs_per_set: usize,
    pub mu: f64,
    pub sigma: f64,
    pub n_sims: usize,
    pub seed: u64,
}

impl Default for NullConfig {
    fn default() -> Self {
        Self {
            n_per_group: 8,
            n_attrs_per_set: 8,
            mu: 0.0,
            sigma: 0.08,
            n_sims: 10_000,
            seed: 2022,
        }
    }
}

impl NullConfig {
    pub fn validate(&self) -> Result<(), NullSimError> {
        let mut problems = Vec::new();
        if self.n_per_group < 2 {
            problems.push(format!("n_per_group must be at least 2 (got {})", self.n_per_group));
        }
        if self.n_attrs_per_set < 1 {
            problems.push("n_attrs_per_set must be at least 1".to_string());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            problems.push(format!("sigma must be positive (got {})", self.sigma));
        }
        if !self.mu.is_finite() {
            problems.push("mu must be finite".to_string());
        }
        if self.n_sims < 1 {
            problems.push("n_sims must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(NullSimError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// A `(2n) × (2m)` score matrix. Rows `0..n` are group X, rows `n..2n` group
/// Y; columns `0..m` are scores against set A, columns `m..2m` against B.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSample {
    n_per_group: usize,
    n_attrs: usize,
    cells: Vec<f64>,
}

impl NullSample {
    pub fn from_cells(n_per_group: usize, n_attrs: usize, cells: Vec<f64>) -> Result<Self, NullSimError> {
        if n_per_group < 1 || n_attrs < 1 || cells.len() != 4 * n_per_group * n_attrs {
            return Err(NullSimError::InvalidConfig(format!(
                "{} cells do not form a {}x{} matrix",
                cells.len(),
                2 * n_per_group,
                2 * n_attrs
            )));
        }
        Ok(Self {
            n_per_group,
            n_attrs,
            cells,
        })
    }

    pub fn n_rows(&self) -> usize {
        2 * self.n_per_group
    }

    pub fn n_cols(&self) -> usize {
        2 * self.n_attrs
    }

    pub fn n_per_group(&self) -> usize {
        self.n_per_group
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.cells[i * w..(i + 1) * w]
    }

    /// Per-word association scores, X rows first.
    pub fn scores(&self) -> Vec<f64> {
        (0..self.n_rows())
            .map(|i| {
                let (a, b) = self.row(i).split_at(self.n_attrs);
                metrics::association_score(a, b)
            })
            .collect()
    }

    /// Raw scores of the given row range against one attribute block.
    fn block(&self, rows: std::ops::Range<usize>, set_b: bool) -> Vec<f64> {
        let off = if set_b { self.n_attrs } else { 0 };
        rows.flat_map(|i| self.row(i)[off..off + self.n_attrs].iter().copied())
            .collect()
    }

    pub fn s_statistic(&self) -> f64 {
        let s = self.scores();
        let (x, y) = s.split_at(self.n_per_group);
        x.iter().sum::<f64>() - y.iter().sum::<f64>()
    }

    pub fn effect_size(&self) -> Result<f64, MetricsError> {
        metrics::effect_size(&self.scores(), self.n_per_group)
    }
}

/// Sample number `stream_index` of the study defined by `cfg`.
pub fn draw_null_sample(cfg: &NullConfig, stream_index: u64) -> Result<NullSample, NullSimError> {
    cfg.validate()?;
    let normal = Normal::new(cfg.mu, cfg.sigma).map_err(|e| NullSimError::InvalidConfig(e.to_string()))?;
    let mut rng = stream_rng(cfg.seed, stream_index);
    let n = 4 * cfg.n_per_group * cfg.n_attrs_per_set;
    let cells = (0..n).map(|_| normal.sample(&mut rng)).collect();
    NullSample::from_cells(cfg.n_per_group, cfg.n_attrs_per_set, cells)
}

/// Statistic and effect size under every equal split of the sample's words.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionDistribution {
    pub s_distribution: Vec<f64>,
    pub effect_distribution: Vec<f64>,
}

pub fn bootstrap_partitions(sample: &NullSample) -> Result<PartitionDistribution, NullSimError> {
    let scores = sample.scores();
    let n = sample.n_per_group;
    let s_distribution = metrics::exact_partition_statistics(&scores, n)?;
    // the pooled sd does not depend on the split
    let sd = population_sd(&scores);
    let effect_distribution = if sd > 0.0 {
        s_distribution.iter().map(|s| s / n as f64 / sd).collect()
    } else {
        vec![f64::NAN; s_distribution.len()]
    };
    Ok(PartitionDistribution {
        s_distribution,
        effect_distribution,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub effect_sizes: Vec<f64>,
    pub s_statistics: Vec<f64>,
}

impl SimulationSummary {
    pub fn effect_tail(&self, threshold: f64, sidedness: Sidedness) -> Result<f64, NullSimError> {
        tail_fraction(&self.effect_sizes, threshold, sidedness)
    }

    pub fn s_tail(&self, threshold: f64, sidedness: Sidedness) -> Result<f64, NullSimError> {
        tail_fraction(&self.s_statistics, threshold, sidedness)
    }
}

/// Observed effect size and statistic for `cfg.n_sims` independent samples.
pub fn run_null_study(cfg: &NullConfig) -> Result<SimulationSummary, NullSimError> {
    cfg.validate()?;
    let pairs: Vec<(f64, f64)> = (0..cfg.n_sims as u64)
        .into_par_iter()
        .map(|i| {
            let sample = draw_null_sample(cfg, i)?;
            Ok((sample.effect_size()?, sample.s_statistic()))
        })
        .collect::<Result<_, NullSimError>>()?;
    let (effect_sizes, s_statistics) = pairs.into_iter().unzip();
    Ok(SimulationSummary {
        effect_sizes,
        s_statistics,
    })
}

/// Exact permutation p-value of each simulated sample's own labeling.
pub fn null_p_values(cfg: &NullConfig, rule: PValueRule) -> Result<Vec<f64>, NullSimError> {
    cfg.validate()?;
    let opts = PermutationOptions {
        mode: PermutationMode::Exact,
        rule,
        ..Default::default()
    };
    (0..cfg.n_sims as u64)
        .into_par_iter()
        .map(|i| {
            let sample = draw_null_sample(cfg, i)?;
            Ok(metrics::permutation_test(&sample.scores(), cfg.n_per_group, &opts)?.p_value)
        })
        .collect()
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `values` and
/// Uniform[0, 1].
pub fn ks_distance_uniform(values: &[f64]) -> Result<f64, NullSimError> {
    if values.is_empty() {
        return Err(NullSimError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, v) in sorted.iter().enumerate() {
        let f = v.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sidedness {
    /// `v ≥ threshold`
    One,
    /// `|v| ≥ |threshold|`
    Two,
}

impl std::str::FromStr for Sidedness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one" | "one-sided" => Ok(Self::One),
            "two" | "two-sided" => Ok(Self::Two),
            _ => Err(format!("unknown sidedness {s:?} (expected one or two)")),
        }
    }
}

pub fn tail_fraction(values: &[f64], threshold: f64, sidedness: Sidedness) -> Result<f64, NullSimError> {
    if values.is_empty() {
        return Err(NullSimError::Empty);
    }
    let hits = match sidedness {
        Sidedness::One => values.iter().filter(|&&v| v >= threshold).count(),
        Sidedness::Two => values.iter().filter(|v| v.abs() >= threshold.abs()).count(),
    };
    Ok(hits as f64 / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// 95% interval for `mean(a) - mean(b)`.
    pub ci95: (f64, f64),
}

/// Two-sided Welch unequal-variance t-test of `mean(a) - mean(b)`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, NullSimError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(NullSimError::TooFewValues { a: a.len(), b: b.len() });
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a) / na, sample_variance(b) / nb);
    let se2 = va + vb;
    if !(se2 > 0.0) {
        return Err(NullSimError::DegenerateVariance);
    }
    let diff = mean(a) - mean(b);
    let se = se2.sqrt();
    let t = diff / se;
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|_| NullSimError::DegenerateVariance)?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    let q = dist.inverse_cdf(0.975);
    Ok(WelchResult {
        t,
        df,
        p,
        ci95: (diff - q * se, diff + q * se),
    })
}

/// The two raw-score comparisons: X vs Y against set A, and against set B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RawTests {
    pub against_a: WelchResult,
    pub against_b: WelchResult,
}

pub fn raw_score_tests(sample: &NullSample) -> Result<RawTests, NullSimError> {
    let n = sample.n_per_group;
    let test = |set_b| welch_t_test(&sample.block(0..n, set_b), &sample.block(n..2 * n, set_b));
    Ok(RawTests {
        against_a: test(false)?,
        against_b: test(true)?,
    })
}
