//! Convergence diagnostics and highest-density intervals from draws.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::BayesError;

/// Splits each chain in half (dropping the middle draw of odd-length
/// chains).
fn split<T: AsRef<[f64]>>(chains: &[T]) -> Vec<&[f64]> {
    chains
        .iter()
        .flat_map(|c| {
            let c = c.as_ref();
            let half = c.len() / 2;
            [&c[..half], &c[c.len() - half..]]
        })
        .collect()
}

/// Normal scores of pooled fractional ranks (average ranks for ties).
fn rank_normalize(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let pooled: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, xs)| xs.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    let s = pooled.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| pooled[a].0.total_cmp(&pooled[b].0));
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && pooled[order[j + 1]].0 == pooled[order[i]].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    let std = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    for (p, &(_, c, i)) in pooled.iter().enumerate() {
        out[c][i] = std.inverse_cdf((ranks[p] - 0.375) / (s as f64 + 0.25));
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Classic potential scale reduction of equal-length chains.
fn basic_rhat<T: AsRef<[f64]>>(chains: &[T]) -> Option<f64> {
    let m = chains.len() as f64;
    let n = chains[0].as_ref().len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c.as_ref())).collect();
    let w = chains.iter().map(|c| variance(c.as_ref())).sum::<f64>() / m;
    let b = n * variance(&means);
    if !(w > 0.0) {
        return None;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt())
}

fn usable<T: AsRef<[f64]>>(chains: &[T]) -> bool {
    let Some(first) = chains.first() else {
        return false;
    };
    let n = first.as_ref().len();
    n >= 4 && chains.iter().all(|c| c.as_ref().len() == n)
}

/// Rank-normalized split R-hat: the larger of the bulk and folded-tail
/// versions. `None` when chains are too short or constant.
pub fn split_rhat<T: AsRef<[f64]>>(chains: &[T]) -> Option<f64> {
    if !usable(chains) {
        return None;
    }
    let halves = split(chains);
    let bulk = basic_rhat(&rank_normalize(&halves))?;
    let pooled: Vec<f64> = halves.iter().flat_map(|c| c.iter().copied()).collect();
    let med = median(&pooled);
    let folded: Vec<Vec<f64>> = halves
        .iter()
        .map(|c| c.iter().map(|x| (x - med).abs()).collect())
        .collect();
    let folded_refs: Vec<&[f64]> = folded.iter().map(Vec::as_slice).collect();
    let tail = basic_rhat(&rank_normalize(&folded_refs)).unwrap_or(bulk);
    Some(bulk.max(tail))
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Effective sample size of equal-length chains via Geyer's initial
/// monotone sequence over the multi-chain autocorrelation estimate.
fn ess_raw<T: AsRef<[f64]>>(chains: &[T]) -> Option<f64> {
    let m = chains.len();
    let n = chains[0].as_ref().len();
    let centered: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| {
            let mu = mean(c.as_ref());
            c.as_ref().iter().map(|x| x - mu).collect()
        })
        .collect();
    let acov = |t: usize| -> f64 {
        centered
            .iter()
            .map(|c| c[..n - t].iter().zip(&c[t..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
            .sum::<f64>()
            / m as f64
    };
    let means: Vec<f64> = chains.iter().map(|c| mean(c.as_ref())).collect();
    let w = acov(0) * n as f64 / (n as f64 - 1.0);
    let b_over_n = if m > 1 { variance(&means) } else { 0.0 };
    let var_plus = w * (n as f64 - 1.0) / n as f64 + b_over_n;
    if !(var_plus > 0.0) {
        return None;
    }
    let rho = |t: usize| 1.0 - (w - acov(t)) / var_plus;

    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = if t == 0 { 1.0 + rho(1) } else { rho(t) + rho(t + 1) };
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = tau.max(1.0 / total.log10().max(1.0));
    Some(total / tau)
}

/// Bulk effective sample size: ESS of the rank-normalized split chains.
pub fn ess_bulk<T: AsRef<[f64]>>(chains: &[T]) -> Option<f64> {
    if !usable(chains) {
        return None;
    }
    let halves = split(chains);
    ess_raw(&rank_normalize(&halves))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hpdi {
    pub lower: f64,
    pub upper: f64,
    pub mass: f64,
}

impl Hpdi {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn overlaps(&self, other: &Hpdi) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }
}

/// Narrowest window of `ceil(mass * n)` sorted samples; the first one wins
/// ties.
pub fn hpdi(samples: &[f64], mass: f64) -> Result<Hpdi, BayesError> {
    if samples.is_empty() {
        return Err(BayesError::EmptySamples);
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(BayesError::InvalidMass(mass));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(hpdi_sorted(&sorted, mass))
}

pub(crate) fn hpdi_sorted(sorted: &[f64], mass: f64) -> Hpdi {
    let n = sorted.len();
    // the small offset stops products like 0.89 * 100 = 89.00000000000001
    // from rounding up to an extra sample
    let m = ((mass * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut best = 0;
    let mut best_width = f64::INFINITY;
    for i in 0..=n - m {
        let width = sorted[i + m - 1] - sorted[i];
        if width < best_width {
            best_width = width;
            best = i;
        }
    }
    Hpdi {
        lower: sorted[best],
        upper: sorted[best + m - 1],
        mass,
    }
}
