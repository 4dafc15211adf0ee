use serde::{Deserialize, Serialize};

use super::diagnostics::{hpdi, Hpdi};
use super::posterior::Posterior;
use super::BayesError;
use crate::stats::mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterComparison {
    pub name: String,
    pub before_mean: f64,
    pub after_mean: f64,
    /// `after_mean - before_mean`
    pub shift: f64,
    pub before_hpdi: Hpdi,
    pub after_hpdi: Hpdi,
    pub overlap: bool,
}

/// The gap between the associated and different global means, whose
/// shrinking is what debiasing should achieve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub before_mean: f64,
    pub after_mean: f64,
    pub before_hpdi: Hpdi,
    pub after_hpdi: Hpdi,
    /// `|after| - |before|` on the posterior means; negative when the gap
    /// shrinks.
    pub abs_change: f64,
    pub shrinks: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub mass: f64,
    pub global: Vec<ParameterComparison>,
    pub per_word: Vec<ParameterComparison>,
    /// `abar - dbar`; absent when either category is missing.
    pub associated_different_gap: Option<GapReport>,
}

impl ComparisonReport {
    pub fn get(&self, name: &str) -> Option<&ParameterComparison> {
        self.global.iter().chain(&self.per_word).find(|p| p.name == name)
    }
}

fn gap_draws(post: &Posterior) -> Option<Vec<f64>> {
    let a = post.param_draws_by_name("abar")?;
    let d = post.param_draws_by_name("dbar")?;
    Some(a.iter().zip(&d).map(|(a, d)| a - d).collect())
}

/// Parameter-by-parameter comparison of two posteriors over the same
/// structure.
pub fn compare(before: &Posterior, after: &Posterior, mass: f64) -> Result<ComparisonReport, BayesError> {
    let before_names = before.layout().names();
    let after_names = after.layout().names();
    let mut missing: Vec<String> = before_names
        .iter()
        .filter(|n| !after_names.contains(n))
        .map(|n| format!("{n} (after)"))
        .collect();
    missing.extend(
        after_names
            .iter()
            .filter(|n| !before_names.contains(n))
            .map(|n| format!("{n} (before)")),
    );
    if !missing.is_empty() || before_names != after_names {
        return Err(BayesError::StructureMismatch { missing });
    }

    let mut global = Vec::new();
    let mut per_word = Vec::new();
    for (j, name) in before_names.into_iter().enumerate() {
        let b = before.param_draws(j);
        let a = after.param_draws(j);
        let before_hpdi = hpdi(&b, mass)?;
        let after_hpdi = hpdi(&a, mass)?;
        let (bm, am) = (mean(&b), mean(&a));
        let cmp = ParameterComparison {
            name,
            before_mean: bm,
            after_mean: am,
            shift: am - bm,
            overlap: before_hpdi.overlaps(&after_hpdi),
            before_hpdi,
            after_hpdi,
        };
        if before.layout().is_global(j) {
            global.push(cmp);
        } else {
            per_word.push(cmp);
        }
    }

    let gap = match (gap_draws(before), gap_draws(after)) {
        (Some(b), Some(a)) => {
            let (bm, am) = (mean(&b), mean(&a));
            Some(GapReport {
                before_mean: bm,
                after_mean: am,
                before_hpdi: hpdi(&b, mass)?,
                after_hpdi: hpdi(&a, mass)?,
                abs_change: am.abs() - bm.abs(),
                shrinks: am.abs() < bm.abs(),
            })
        }
        _ => None,
    };
    Ok(ComparisonReport {
        mass,
        global,
        per_word,
        associated_different_gap: gap,
    })
}
