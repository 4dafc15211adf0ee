use serde::{Deserialize, Serialize};

use super::BayesError;
use crate::datasets::{AssociationCategory, LongTable};
use crate::stats::{exponential_log_pdf, normal_log_pdf};

/// How observation noise is indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseStructure {
    /// One sigma per association category.
    #[default]
    PerCategory,
    /// One sigma for all rows.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hyper_mean: f64,
    pub hyper_sd: f64,
    pub sd_rate: f64,
    pub noise: NoiseStructure,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hyper_mean: 1.0,
            hyper_sd: 0.3,
            sd_rate: 2.0,
            noise: NoiseStructure::PerCategory,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), BayesError> {
        let mut problems = Vec::new();
        if !self.hyper_mean.is_finite() {
            problems.push(format!("hyper_mean must be finite (got {})", self.hyper_mean));
        }
        if !(self.hyper_sd > 0.0 && self.hyper_sd.is_finite()) {
            problems.push(format!("hyper_sd must be positive (got {})", self.hyper_sd));
        }
        if !(self.sd_rate > 0.0 && self.sd_rate.is_finite()) {
            problems.push(format!("sd_rate must be positive (got {})", self.sd_rate));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(BayesError::InvalidSpec(problems.join("; ")))
        }
    }
}

/// What a slot in the parameter vector holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Global mean of a category.
    Bar(usize),
    /// Spread of per-word coefficients around a global mean.
    Sd(usize),
    /// Observation noise; index into the sigma block.
    Sigma(usize),
    /// Per-word coefficient `(word, category)`.
    Theta(usize, usize),
}

/// Positions and names of the model parameters.
///
/// Order: global means, coefficient spreads, noise scales, then one block
/// per protected word with one coefficient per category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    words: Vec<String>,
    categories: Vec<AssociationCategory>,
    noise: NoiseStructure,
}

impl ParamLayout {
    pub fn new(words: Vec<String>, mut categories: Vec<AssociationCategory>, noise: NoiseStructure) -> Self {
        categories.sort();
        categories.dedup();
        Self {
            words,
            categories,
            noise,
        }
    }

    /// Words and categories present in `table`.
    pub fn from_table(table: &LongTable, noise: NoiseStructure) -> Self {
        Self::new(
            table.protected_words().into_iter().map(String::from).collect(),
            table.categories(),
            noise,
        )
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn categories(&self) -> &[AssociationCategory] {
        &self.categories
    }

    pub fn noise(&self) -> NoiseStructure {
        self.noise
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn n_sigmas(&self) -> usize {
        match self.noise {
            NoiseStructure::PerCategory => self.categories.len(),
            NoiseStructure::Shared => 1,
        }
    }

    pub fn n_global(&self) -> usize {
        2 * self.n_categories() + self.n_sigmas()
    }

    pub fn dim(&self) -> usize {
        self.n_global() + self.words.len() * self.n_categories()
    }

    pub fn bar(&self, k: usize) -> usize {
        k
    }

    pub fn sd(&self, k: usize) -> usize {
        self.n_categories() + k
    }

    /// Sigma slot used by category `k`.
    pub fn sigma_for(&self, k: usize) -> usize {
        2 * self.n_categories()
            + match self.noise {
                NoiseStructure::PerCategory => k,
                NoiseStructure::Shared => 0,
            }
    }

    pub fn sigma(&self, j: usize) -> usize {
        2 * self.n_categories() + j
    }

    pub fn theta(&self, w: usize, k: usize) -> usize {
        self.n_global() + w * self.n_categories() + k
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    pub fn category_index(&self, c: AssociationCategory) -> Option<usize> {
        self.categories.iter().position(|&x| x == c)
    }

    /// Indices of the scale parameters (spreads then noise scales).
    pub fn scale_indices(&self) -> std::ops::Range<usize> {
        self.n_categories()..self.n_global()
    }

    pub fn kind(&self, i: usize) -> ParamKind {
        let k = self.n_categories();
        if i < k {
            ParamKind::Bar(i)
        } else if i < 2 * k {
            ParamKind::Sd(i - k)
        } else if i < self.n_global() {
            ParamKind::Sigma(i - 2 * k)
        } else {
            let j = i - self.n_global();
            ParamKind::Theta(j / k, j % k)
        }
    }

    pub fn is_global(&self, i: usize) -> bool {
        i < self.n_global()
    }

    pub fn name(&self, i: usize) -> String {
        match self.kind(i) {
            ParamKind::Bar(k) => format!("{}bar", self.categories[k].letter()),
            ParamKind::Sd(k) => format!("sd_{}", self.categories[k].letter()),
            ParamKind::Sigma(j) => match self.noise {
                NoiseStructure::PerCategory => format!("sigma_{}", self.categories[j]),
                NoiseStructure::Shared => "sigma".to_string(),
            },
            ParamKind::Theta(w, k) => format!("{}[{}]", self.categories[k].letter(), self.words[w]),
        }
    }

    pub fn names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| self.name(i)).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        (0..self.dim()).find(|&i| self.name(i) == name)
    }

    /// Rebuilds a layout from parameter names in canonical order.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, BayesError> {
        let bad = |msg: String| BayesError::BadCsv(msg);
        let mut categories = Vec::new();
        let mut words: Vec<String> = Vec::new();
        let mut shared = false;
        for name in names {
            let name = name.as_ref();
            if let Some(letter) = name.strip_suffix("bar") {
                categories
                    .push(category_from_letter(letter).ok_or_else(|| bad(format!("unknown parameter {name:?}")))?);
            } else if name == "sigma" {
                shared = true;
            } else if let Some((letter, rest)) = name.split_once('[') {
                let word = rest
                    .strip_suffix(']')
                    .ok_or_else(|| bad(format!("unknown parameter {name:?}")))?;
                category_from_letter(letter).ok_or_else(|| bad(format!("unknown parameter {name:?}")))?;
                if words.last().map(String::as_str) != Some(word) {
                    words.push(word.to_string());
                }
            }
        }
        let noise = if shared {
            NoiseStructure::Shared
        } else {
            NoiseStructure::PerCategory
        };
        let layout = Self::new(words, categories, noise);
        let expected = layout.names();
        if expected.len() != names.len() || expected.iter().zip(names).any(|(e, n)| e != n.as_ref()) {
            return Err(bad("parameter columns are not in canonical order".to_string()));
        }
        Ok(layout)
    }
}

fn category_from_letter(letter: &str) -> Option<AssociationCategory> {
    AssociationCategory::ALL
        .into_iter()
        .find(|c| letter.len() == 1 && letter.starts_with(c.letter()))
}

/// Count, sum and sum of squares of one (word, category) cell.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellStats {
    pub n: usize,
    pub sum: f64,
    pub sumsq: f64,
}

impl CellStats {
    /// `Σ (y - mu)²` over the cell.
    pub fn residual_ss(&self, mu: f64) -> f64 {
        (self.sumsq - 2.0 * mu * self.sum + self.n as f64 * mu * mu).max(0.0)
    }
}

/// A table mapped onto a layout, with per-cell sufficient statistics.
#[derive(Debug, Clone)]
pub struct ModelData {
    layout: ParamLayout,
    cells: Vec<CellStats>,
    rows: Vec<(usize, usize, f64)>,
}

impl ModelData {
    pub fn new(layout: ParamLayout, table: &LongTable) -> Result<Self, BayesError> {
        let nk = layout.n_categories();
        let mut cells = vec![CellStats::default(); layout.words().len() * nk];
        let mut rows = Vec::with_capacity(table.len());
        for r in table.rows() {
            let w = layout
                .word_index(&r.protected)
                .ok_or_else(|| BayesError::UnknownWord(r.protected.clone()))?;
            let k = layout
                .category_index(r.category)
                .ok_or(BayesError::UnknownCategory(r.category))?;
            let c = &mut cells[w * nk + k];
            c.n += 1;
            c.sum += r.distance;
            c.sumsq += r.distance * r.distance;
            rows.push((w, k, r.distance));
        }
        Ok(Self { layout, cells, rows })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn cell(&self, w: usize, k: usize) -> &CellStats {
        &self.cells[w * self.layout.n_categories() + k]
    }

    /// `(word index, category index, distance)` per row.
    pub fn rows(&self) -> &[(usize, usize, f64)] {
        &self.rows
    }

    /// Fails on the first (word, category) cell without rows.
    pub fn require_full(&self) -> Result<(), BayesError> {
        if self.rows.is_empty() {
            return Err(BayesError::EmptyTable);
        }
        for (w, word) in self.layout.words().iter().enumerate() {
            for (k, &category) in self.layout.categories().iter().enumerate() {
                if self.cell(w, k).n == 0 {
                    return Err(BayesError::EmptyCell {
                        word: word.clone(),
                        category,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Unnormalised log posterior density of `theta`; `-inf` when any scale is
/// not strictly positive.
pub fn log_posterior(
    theta: &[f64],
    layout: &ParamLayout,
    table: &LongTable,
    spec: &ModelSpec,
) -> Result<f64, BayesError> {
    if theta.len() != layout.dim() {
        return Err(BayesError::DimensionMismatch {
            expected: layout.dim(),
            found: theta.len(),
        });
    }
    let data = ModelData::new(layout.clone(), table)?;
    if layout.scale_indices().any(|i| !(theta[i] > 0.0)) {
        return Ok(f64::NEG_INFINITY);
    }
    let mut lp = 0.0;
    for &(w, k, y) in data.rows() {
        lp += normal_log_pdf(y, theta[layout.theta(w, k)], theta[layout.sigma_for(k)]);
    }
    for w in 0..layout.words().len() {
        for k in 0..layout.n_categories() {
            lp += normal_log_pdf(theta[layout.theta(w, k)], theta[layout.bar(k)], theta[layout.sd(k)]);
        }
    }
    for k in 0..layout.n_categories() {
        lp += normal_log_pdf(theta[layout.bar(k)], spec.hyper_mean, spec.hyper_sd);
    }
    for i in layout.scale_indices() {
        lp += exponential_log_pdf(theta[i], spec.sd_rate);
    }
    Ok(lp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::LongRow;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;
    use AssociationCategory::*;

    fn row(p: &str, a: &str, c: AssociationCategory, d: f64) -> LongRow {
        LongRow {
            protected: p.into(),
            attribute: a.into(),
            category: c,
            distance: d,
        }
    }

    fn full_layout() -> ParamLayout {
        ParamLayout::new(
            vec!["jew".into(), "muslim".into()],
            AssociationCategory::ALL.to_vec(),
            NoiseStructure::PerCategory,
        )
    }

    #[test]
    fn layout_names_and_dimension() {
        let l = full_layout();
        assert_eq!(l.dim(), 4 * 2 + 12);
        let names = l.names();
        assert_eq!(&names[..4], ["abar", "dbar", "hbar", "nbar"]);
        assert_eq!(&names[4..8], ["sd_a", "sd_d", "sd_h", "sd_n"]);
        assert_eq!(names[8], "sigma_associated");
        assert_eq!(names[12], "a[jew]");
        assert_eq!(names[19], "n[muslim]");
        assert_eq!(ParamLayout::from_names(&names).unwrap(), l);
        assert_eq!(l.kind(13), ParamKind::Theta(0, 1));

        let shared = ParamLayout::new(l.words().to_vec(), vec![Different, Associated], NoiseStructure::Shared);
        assert_eq!(shared.dim(), 2 * 2 + 4 + 1);
        assert_eq!(shared.sigma_for(1), shared.sigma_for(0));
        assert_eq!(ParamLayout::from_names(&shared.names()).unwrap(), shared);
        assert!(ParamLayout::from_names(&["abar", "zbar"]).is_err());
    }

    #[test]
    fn prior_only_matches_direct_arithmetic() {
        let l = full_layout();
        let spec = ModelSpec::default();
        // prior modes: bars at 1, scales at 0 is outside support, so use 0.5
        let mut theta = vec![0.0; l.dim()];
        for k in 0..4 {
            theta[l.bar(k)] = 1.0;
            theta[l.sd(k)] = 0.5;
            theta[l.sigma(k)] = 0.25;
        }
        for w in 0..2 {
            for k in 0..4 {
                theta[l.theta(w, k)] = 0.9;
            }
        }
        let lp = log_posterior(&theta, &l, &LongTable::default(), &spec).unwrap();

        let npdf = |x: f64, m: f64, s: f64| (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt());
        let epdf = |x: f64, r: f64| r * (-r * x).exp();
        let mut expect = 0.0;
        expect += 8.0 * npdf(0.9, 1.0, 0.5).ln();
        expect += 4.0 * npdf(1.0, 1.0, 0.3).ln();
        expect += 4.0 * epdf(0.5, 2.0).ln() + 4.0 * epdf(0.25, 2.0).ln();
        assert_abs_diff_eq!(lp, expect, epsilon = 1e-10);
    }

    #[test]
    fn row_at_its_mean_adds_normalising_constant() {
        let l = full_layout();
        let spec = ModelSpec::default();
        let mut theta = vec![0.7; l.dim()];
        theta[l.sigma(2)] = 0.13;
        let base = log_posterior(&theta, &l, &LongTable::default(), &spec).unwrap();
        let mu = theta[l.theta(1, 2)];
        let table = LongTable::from_rows(vec![row("muslim", "person", Human, mu)]).unwrap();
        let with = log_posterior(&theta, &l, &table, &spec).unwrap();
        assert_abs_diff_eq!(with - base, (1.0 / (0.13 * (2.0 * PI).sqrt())).ln(), epsilon = 1e-12);
    }

    #[test]
    fn zero_scale_is_outside_support() {
        let l = full_layout();
        let mut theta = vec![0.5; l.dim()];
        theta[l.sd(1)] = 0.0;
        assert_eq!(
            log_posterior(&theta, &l, &LongTable::default(), &ModelSpec::default()).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(matches!(
            log_posterior(&theta[1..], &l, &LongTable::default(), &ModelSpec::default()),
            Err(BayesError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn likelihood_is_additive_over_rows() {
        let l = full_layout();
        let spec = ModelSpec::default();
        let theta: Vec<f64> = (0..l.dim()).map(|i| 0.3 + 0.01 * i as f64).collect();
        let t1 = [
            row("jew", "greedy", Associated, 0.8),
            row("muslim", "dog", Neutral, 1.1),
        ];
        let t2 = vec![
            row("jew", "cat", Neutral, 0.95),
            row("muslim", "violent", Associated, 0.7),
        ];
        let both: Vec<LongRow> = t1.iter().chain(&t2).cloned().collect();
        let lp_both = log_posterior(&theta, &l, &LongTable::from_rows(both).unwrap(), &spec).unwrap();
        let lp_2 = log_posterior(&theta, &l, &LongTable::from_rows(t2).unwrap(), &spec).unwrap();
        let lik_1: f64 = t1
            .iter()
            .map(|r| {
                let w = l.word_index(&r.protected).unwrap();
                let k = l.category_index(r.category).unwrap();
                normal_log_pdf(r.distance, theta[l.theta(w, k)], theta[l.sigma_for(k)])
            })
            .sum();
        assert_abs_diff_eq!(lp_both - lp_2, lik_1, epsilon = 1e-10);
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::default().validate().is_ok());
        let bad = ModelSpec {
            hyper_sd: 0.0,
            sd_rate: -1.0,
            ..Default::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("hyper_sd") && msg.contains("sd_rate"));
    }

    #[test]
    fn model_data_rejects_unknown_rows_and_empty_cells() {
        let l = ParamLayout::new(
            vec!["jew".into()],
            vec![Associated, Neutral],
            NoiseStructure::PerCategory,
        );
        let t = LongTable::from_rows(vec![row("christian", "x", Associated, 0.5)]).unwrap();
        assert!(matches!(ModelData::new(l.clone(), &t), Err(BayesError::UnknownWord(_))));
        let t = LongTable::from_rows(vec![row("jew", "x", Associated, 0.5), row("jew", "y", Associated, 0.7)]).unwrap();
        let data = ModelData::new(l, &t).unwrap();
        assert_eq!(data.cell(0, 0).n, 2);
        assert_abs_diff_eq!(data.cell(0, 0).residual_ss(0.6), 0.02, epsilon = 1e-12);
        assert!(matches!(
            data.require_full(),
            Err(BayesError::EmptyCell { category: Neutral, .. })
        ));
    }
}
