//! Single-number bias metrics: WEAT association scores, effect size and
//! permutation p-values, MAC, and band fractions of similarity values.
//!
//! WEAT works on similarities (higher = closer); MAC works on cosine
//! distances. [`band_fraction`] takes similarities.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{AssociationCategory, BiasDataset, LongTable};
use crate::embedding::{Embedding, MissingPolicy, ResolveError};
use crate::geometry::{cosine_distance, cosine_similarity, GeometryError};
use crate::stats::{binomial, mean, population_sd};

/// Upper bound on the number of partitions enumerated in exact mode.
pub const MAX_EXACT_PARTITIONS: u128 = 2_000_000;
pub const MIN_SAMPLED_PERMUTATIONS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("target groups differ in size ({x} vs {y})")]
    UnequalGroups { x: usize, y: usize },
    #[error("effect size undefined: all association scores are equal")]
    UndefinedEffect,
    #[error("exact enumeration needs {count} partitions (limit {MAX_EXACT_PARTITIONS}); use sampled mode")]
    EnumerationTooLarge { count: u128 },
    #[error("sampled mode needs at least {MIN_SAMPLED_PERMUTATIONS} permutations, got {0}")]
    TooFewSamples(usize),
    #[error("dataset must have exactly two protected classes and one attribute set per class for WEAT ({0})")]
    NotPairwise(String),
}

/// `s(t, A, B)` from precomputed similarities of `t` to `A` and to `B`.
pub fn association_score(sims_a: &[f64], sims_b: &[f64]) -> f64 {
    mean(sims_a) - mean(sims_b)
}

/// Mean cosine similarity of `t` to `A` minus mean similarity to `B`.
pub fn weat_s_word<S: AsRef<str>>(t: &str, a: &[S], b: &[S], emb: &Embedding) -> Result<f64, MetricsError> {
    if a.is_empty() {
        return Err(MetricsError::Empty("attribute set A"));
    }
    if b.is_empty() {
        return Err(MetricsError::Empty("attribute set B"));
    }
    let mut skipped = Vec::new();
    let tv = emb.resolve("target", std::slice::from_ref(&t), MissingPolicy::Error, &mut skipped)?[0].1;
    let av = emb.resolve("attribute set A", a, MissingPolicy::Error, &mut skipped)?;
    let bv = emb.resolve("attribute set B", b, MissingPolicy::Error, &mut skipped)?;
    Ok(score_against(tv, &av, &bv)?)
}

fn score_against(t: &[f32], a: &[(&str, &[f32])], b: &[(&str, &[f32])]) -> Result<f64, GeometryError> {
    let sims = |set: &[(&str, &[f32])]| -> Result<Vec<f64>, GeometryError> {
        set.iter().map(|(_, v)| cosine_similarity(t, v)).collect()
    };
    Ok(association_score(&sims(a)?, &sims(b)?))
}

/// Target and attribute lists for one WEAT comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeatInput {
    pub x: Vec<String>,
    pub y: Vec<String>,
    pub a: Vec<String>,
    pub b: Vec<String>,
}

impl WeatInput {
    /// X and Y are the first and second protected classes; A and B the
    /// attribute sets labelled with those classes.
    pub fn from_dataset(ds: &BiasDataset) -> Result<Self, MetricsError> {
        let [cx, cy] = ds.classes() else {
            return Err(MetricsError::NotPairwise(format!("{} classes", ds.classes().len())));
        };
        let set_for = |class: &str| {
            let mut sets = ds.attribute_sets().iter().filter(|s| s.class == class);
            match (sets.next(), sets.next()) {
                (Some(s), None) => Ok(s.tokens.clone()),
                _ => Err(MetricsError::NotPairwise(format!(
                    "class {class:?} needs exactly one attribute set"
                ))),
            }
        };
        let owned = |v: Vec<&str>| v.into_iter().map(String::from).collect();
        Ok(Self {
            x: owned(ds.protected_in(cx)),
            y: owned(ds.protected_in(cy)),
            a: set_for(cx)?,
            b: set_for(cy)?,
        })
    }

    pub fn scores(&self, emb: &Embedding, policy: MissingPolicy) -> Result<WeatScores, MetricsError> {
        let mut skipped = Vec::new();
        let x = emb.resolve("X", &self.x, policy, &mut skipped)?;
        let y = emb.resolve("Y", &self.y, policy, &mut skipped)?;
        let a = emb.resolve("A", &self.a, policy, &mut skipped)?;
        let b = emb.resolve("B", &self.b, policy, &mut skipped)?;
        let score_group = |group: &[(&str, &[f32])]| -> Result<Vec<(String, f64)>, MetricsError> {
            group
                .iter()
                .map(|(t, v)| Ok((t.to_string(), score_against(v, &a, &b)?)))
                .collect()
        };
        let mut scores = WeatScores::new(score_group(&x)?, score_group(&y)?)?;
        scores.skipped = skipped;
        Ok(scores)
    }
}

/// Per-word association scores for the two target groups.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatScores {
    x: Vec<(String, f64)>,
    y: Vec<(String, f64)>,
    skipped: Vec<String>,
}

impl WeatScores {
    pub fn new(x: Vec<(String, f64)>, y: Vec<(String, f64)>) -> Result<Self, MetricsError> {
        if x.is_empty() {
            return Err(MetricsError::Empty("target group X"));
        }
        if x.len() != y.len() {
            return Err(MetricsError::UnequalGroups { x: x.len(), y: y.len() });
        }
        Ok(Self {
            x,
            y,
            skipped: Vec::new(),
        })
    }

    /// Scores from a similarity table: each entry is `(token, sims to A, sims to B)`.
    pub fn from_similarities(x: &[(&str, &[f64], &[f64])], y: &[(&str, &[f64], &[f64])]) -> Result<Self, MetricsError> {
        let score = |rows: &[(&str, &[f64], &[f64])]| -> Result<Vec<(String, f64)>, MetricsError> {
            rows.iter()
                .map(|(t, sa, sb)| {
                    if sa.is_empty() || sb.is_empty() {
                        return Err(MetricsError::Empty("attribute similarities"));
                    }
                    Ok((t.to_string(), association_score(sa, sb)))
                })
                .collect()
        };
        Self::new(score(x)?, score(y)?)
    }

    pub fn x(&self) -> &[(String, f64)] {
        &self.x
    }

    pub fn y(&self) -> &[(String, f64)] {
        &self.y
    }

    pub fn skipped(&self) -> &[String] {
        &self.skipped
    }

    /// All scores, X first then Y.
    pub fn values(&self) -> Vec<f64> {
        self.x.iter().chain(&self.y).map(|(_, s)| *s).collect()
    }

    /// `Σ_X s - Σ_Y s`.
    pub fn s_statistic(&self) -> f64 {
        self.x.iter().map(|(_, s)| s).sum::<f64>() - self.y.iter().map(|(_, s)| s).sum::<f64>()
    }

    /// Difference of group means over the population standard deviation of
    /// all scores.
    pub fn effect_size(&self) -> Result<f64, MetricsError> {
        effect_size(&self.values(), self.x.len())
    }

    pub fn p_value(&self, opts: &PermutationOptions) -> Result<PermutationResult, MetricsError> {
        permutation_test(&self.values(), self.x.len(), opts)
    }

    pub fn report(&self, opts: &PermutationOptions) -> Result<WeatReport, MetricsError> {
        let perm = self.p_value(opts)?;
        Ok(WeatReport {
            x: self.x.iter().map(|(t, _)| t.clone()).collect(),
            y: self.y.iter().map(|(t, _)| t.clone()).collect(),
            s_per_word: self.x.iter().chain(&self.y).cloned().collect(),
            s_statistic: self.s_statistic(),
            effect_size: self.effect_size()?,
            p_value: perm.p_value,
            p_mode: perm.mode,
            p_rule: perm.rule,
            n_partitions_evaluated: perm.n_evaluated,
            skipped: self.skipped.clone(),
        })
    }
}

/// Effect size for scores whose first `n_x` entries form group X.
pub fn effect_size(values: &[f64], n_x: usize) -> Result<f64, MetricsError> {
    if n_x == 0 || n_x >= values.len() {
        return Err(MetricsError::Empty("target group"));
    }
    let sd = population_sd(values);
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if !(sd > 1e-12 * scale) {
        return Err(MetricsError::UndefinedEffect);
    }
    Ok((mean(&values[..n_x]) - mean(&values[n_x..])) / sd)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermutationMode {
    Exact,
    Sampled,
}

/// Which partitions count toward the p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueRule {
    /// Fraction of partitions with a strictly larger statistic; may be 0.
    #[default]
    Strict,
    /// Fraction with a statistic at least as large, observed split included.
    Conservative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationOptions {
    pub mode: PermutationMode,
    pub n_samples: usize,
    pub seed: u64,
    pub rule: PValueRule,
    pub keep_distribution: bool,
}

impl Default for PermutationOptions {
    fn default() -> Self {
        Self {
            mode: PermutationMode::Exact,
            n_samples: 10_000,
            seed: 0,
            rule: PValueRule::Strict,
            keep_distribution: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationResult {
    pub observed: f64,
    pub p_value: f64,
    pub n_evaluated: usize,
    pub mode: PermutationMode,
    pub rule: PValueRule,
    pub distribution: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeatReport {
    pub x: Vec<String>,
    pub y: Vec<String>,
    pub s_per_word: IndexMap<String, f64>,
    pub s_statistic: f64,
    pub effect_size: f64,
    pub p_value: f64,
    pub p_mode: PermutationMode,
    pub p_rule: PValueRule,
    pub n_partitions_evaluated: usize,
    pub skipped: Vec<String>,
}

/// Calls `f` with every `k`-subset of `0..n`, in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Number of equal-size relabelings enumerated in exact mode, checked
/// against [`MAX_EXACT_PARTITIONS`].
pub fn exact_partition_count(n_total: usize, n_x: usize) -> Result<usize, MetricsError> {
    let count = binomial(n_total as u64, n_x as u64);
    if count > MAX_EXACT_PARTITIONS {
        return Err(MetricsError::EnumerationTooLarge { count });
    }
    Ok(count as usize)
}

/// `s(X_i, Y_i)` for every choice of `n_x` indices as `X_i`; the first entry
/// is the observed labeling (`X = values[..n_x]`).
pub fn exact_partition_statistics(values: &[f64], n_x: usize) -> Result<Vec<f64>, MetricsError> {
    let count = exact_partition_count(values.len(), n_x)?;
    let total: f64 = values.iter().sum();
    let mut out = Vec::with_capacity(count);
    for_each_combination(values.len(), n_x, |idx| {
        let sx: f64 = idx.iter().map(|&i| values[i]).sum();
        out.push(sx - (total - sx));
    });
    Ok(out)
}

fn tie_tolerance(values: &[f64]) -> f64 {
    1e-12 * values.iter().map(|v| v.abs()).sum::<f64>().max(1e-300)
}

/// Permutation test of `s(X, Y)` where `X = values[..n_x]`.
pub fn permutation_test(
    values: &[f64],
    n_x: usize,
    opts: &PermutationOptions,
) -> Result<PermutationResult, MetricsError> {
    if n_x == 0 || n_x >= values.len() {
        return Err(MetricsError::Empty("target group"));
    }
    let tol = tie_tolerance(values);
    let total: f64 = values.iter().sum();
    let observed = {
        let sx: f64 = values[..n_x].iter().sum();
        sx - (total - sx)
    };
    let (stats, p_value, n_evaluated) = match opts.mode {
        PermutationMode::Exact => {
            let stats = exact_partition_statistics(values, n_x)?;
            let n = stats.len();
            let count = match opts.rule {
                PValueRule::Strict => stats.iter().filter(|&&s| s > observed + tol).count(),
                PValueRule::Conservative => stats.iter().filter(|&&s| s >= observed - tol).count(),
            };
            (stats, count as f64 / n as f64, n)
        }
        PermutationMode::Sampled => {
            if opts.n_samples < MIN_SAMPLED_PERMUTATIONS {
                return Err(MetricsError::TooFewSamples(opts.n_samples));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut shuffled = values.to_vec();
            let mut stats = Vec::with_capacity(opts.n_samples);
            for _ in 0..opts.n_samples {
                shuffled.shuffle(&mut rng);
                let sx: f64 = shuffled[..n_x].iter().sum();
                stats.push(sx - (total - sx));
            }
            match opts.rule {
                PValueRule::Strict => {
                    let count = stats.iter().filter(|&&s| s > observed + tol).count();
                    (stats, count as f64 / opts.n_samples as f64, opts.n_samples)
                }
                PValueRule::Conservative => {
                    let count = stats.iter().filter(|&&s| s >= observed - tol).count() + 1;
                    let n = opts.n_samples + 1;
                    (stats, count as f64 / n as f64, n)
                }
            }
        }
    };
    Ok(PermutationResult {
        observed,
        p_value,
        n_evaluated,
        mode: opts.mode,
        rule: opts.rule,
        distribution: opts.keep_distribution.then_some(stats),
    })
}

/// Mean cosine distance from `t` to the members of `attrs`.
pub fn mac_s<S: AsRef<str>>(t: &str, attrs: &[S], emb: &Embedding) -> Result<f64, MetricsError> {
    if attrs.is_empty() {
        return Err(MetricsError::Empty("attribute set"));
    }
    let mut skipped = Vec::new();
    let tv = emb.resolve("target", std::slice::from_ref(&t), MissingPolicy::Error, &mut skipped)?[0].1;
    let av = emb.resolve("attribute set", attrs, MissingPolicy::Error, &mut skipped)?;
    mean_distance(tv, &av)
}

fn mean_distance(t: &[f32], attrs: &[(&str, &[f32])]) -> Result<f64, MetricsError> {
    let d: Vec<f64> = attrs
        .iter()
        .map(|(_, a)| cosine_distance(t, a))
        .collect::<Result<_, _>>()?;
    Ok(mean(&d))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacPair {
    pub token: String,
    pub set_id: String,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacReport {
    pub s_per_pair: Vec<MacPair>,
    pub mac: f64,
    /// Fraction of similarities within `±(1 - mac)` of zero, per category.
    pub band: f64,
    pub band_fractions: BTreeMap<AssociationCategory, f64>,
    pub skipped: Vec<String>,
}

/// Mean over every (protected word, attribute set) pair of [`mac_s`].
pub fn mac<S: AsRef<str>>(
    targets: &[S],
    attribute_sets: &[(&str, &[S])],
    emb: &Embedding,
    policy: MissingPolicy,
) -> Result<MacReport, MetricsError> {
    if targets.is_empty() {
        return Err(MetricsError::Empty("protected word list"));
    }
    if attribute_sets.is_empty() {
        return Err(MetricsError::Empty("attribute set list"));
    }
    let mut skipped = Vec::new();
    let t = emb.resolve("protected words", targets, policy, &mut skipped)?;
    let mut sets = Vec::new();
    for (id, tokens) in attribute_sets {
        if tokens.is_empty() {
            return Err(MetricsError::Empty("attribute set"));
        }
        sets.push((
            *id,
            emb.resolve(&format!("attribute set {id}"), tokens, policy, &mut skipped)?,
        ));
    }
    let mut pairs = Vec::with_capacity(t.len() * sets.len());
    for (tok, tv) in &t {
        for (id, attrs) in &sets {
            pairs.push(MacPair {
                token: tok.to_string(),
                set_id: id.to_string(),
                s: mean_distance(tv, attrs)?,
            });
        }
    }
    let mac = pairs.iter().map(|p| p.s).sum::<f64>() / pairs.len() as f64;
    Ok(MacReport {
        s_per_pair: pairs,
        mac,
        band: 1.0 - mac,
        band_fractions: BTreeMap::new(),
        skipped,
    })
}

/// MAC of a dataset's protected words against its stereotype sets, with band
/// fractions taken from `table` at `±(1 - mac)`.
pub fn mac_for_dataset(
    ds: &BiasDataset,
    emb: &Embedding,
    table: &LongTable,
    policy: MissingPolicy,
) -> Result<MacReport, MetricsError> {
    let targets: Vec<&str> = ds.protected().iter().map(|p| p.token.as_str()).collect();
    let set_tokens: Vec<Vec<&str>> = ds
        .attribute_sets()
        .iter()
        .map(|s| s.tokens.iter().map(String::as_str).collect())
        .collect();
    let sets: Vec<(&str, &[&str])> = ds
        .attribute_sets()
        .iter()
        .zip(&set_tokens)
        .map(|(s, t)| (s.id.as_str(), &t[..]))
        .collect();
    let mut report = mac(&targets, &sets, emb, policy)?;
    report.band_fractions = band_fractions(table, report.band)?;
    Ok(report)
}

/// Fraction of `similarities` with `|v| ≤ band`.
pub fn band_fraction(similarities: &[f64], band: f64) -> Result<f64, MetricsError> {
    if similarities.is_empty() {
        return Err(MetricsError::Empty("similarity list"));
    }
    let inside = similarities.iter().filter(|v| v.abs() <= band).count();
    Ok(inside as f64 / similarities.len() as f64)
}

/// [`band_fraction`] of each category's similarities in a long table.
pub fn band_fractions(table: &LongTable, band: f64) -> Result<BTreeMap<AssociationCategory, f64>, MetricsError> {
    table
        .similarities_by_category()
        .into_iter()
        .map(|(c, sims)| Ok((c, band_fraction(&sims, band)?)))
        .collect()
}
