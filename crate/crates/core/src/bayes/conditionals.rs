//! Full conditional distributions used by the sampler.
//!
//! Location parameters have closed-form normal conditionals. Scale
//! parameters do not; [`log_scale_conditional`] gives their unnormalised
//! log density on the log scale, ready for a random-walk update.

use rand::Rng;
use rand_distr::StandardNormal;

use super::model::{ModelData, ModelSpec, ParamKind};
use crate::stats::{exponential_log_pdf, normal_log_pdf};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalMoments {
    pub mean: f64,
    pub sd: f64,
}

impl NormalMoments {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.sd * z
    }
}

/// Precision-weighted combination of a normal prior and a normal likelihood
/// summarised by `n` observations with total `sum` and noise `sigma`.
fn combine(prior_mean: f64, prior_sd: f64, n: f64, sum: f64, sigma: f64) -> NormalMoments {
    let prior_prec = 1.0 / (prior_sd * prior_sd);
    let data_prec = n / (sigma * sigma);
    let prec = prior_prec + data_prec;
    NormalMoments {
        mean: (prior_mean * prior_prec + sum / (sigma * sigma)) / prec,
        sd: prec.sqrt().recip(),
    }
}

/// Conditional of the coefficient for word `w`, category `k`.
pub fn theta_conditional(data: &ModelData, state: &[f64], w: usize, k: usize) -> NormalMoments {
    let l = data.layout();
    let cell = data.cell(w, k);
    combine(
        state[l.bar(k)],
        state[l.sd(k)],
        cell.n as f64,
        cell.sum,
        state[l.sigma_for(k)],
    )
}

/// Conditional of the global mean of category `k`.
pub fn bar_conditional(data: &ModelData, spec: &ModelSpec, state: &[f64], k: usize) -> NormalMoments {
    let l = data.layout();
    let n = l.words().len();
    let sum: f64 = (0..n).map(|w| state[l.theta(w, k)]).sum();
    combine(spec.hyper_mean, spec.hyper_sd, n as f64, sum, state[l.sd(k)])
}

pub fn sample_theta<R: Rng + ?Sized>(data: &ModelData, state: &mut [f64], w: usize, k: usize, rng: &mut R) {
    let i = data.layout().theta(w, k);
    state[i] = theta_conditional(data, state, w, k).sample(rng);
}

pub fn sample_bar<R: Rng + ?Sized>(data: &ModelData, spec: &ModelSpec, state: &mut [f64], k: usize, rng: &mut R) {
    let i = data.layout().bar(k);
    state[i] = bar_conditional(data, spec, state, k).sample(rng);
}

/// Shifts the global mean of category `k` and all of its per-word
/// coefficients by a common offset drawn from its exact conditional.
///
/// Leaves every coefficient's deviation from the mean unchanged, so it moves
/// the mean along the ridge that one-at-a-time updates cross slowly.
pub fn sample_translation<R: Rng + ?Sized>(
    data: &ModelData,
    spec: &ModelSpec,
    state: &mut [f64],
    k: usize,
    rng: &mut R,
) {
    let l = data.layout();
    let sigma = state[l.sigma_for(k)];
    let mut n = 0usize;
    let mut resid = 0.0;
    for w in 0..l.words().len() {
        let cell = data.cell(w, k);
        n += cell.n;
        resid += cell.sum - cell.n as f64 * state[l.theta(w, k)];
    }
    let bar = state[l.bar(k)];
    let delta = combine(spec.hyper_mean - bar, spec.hyper_sd, n as f64, resid, sigma).sample(rng);
    state[l.bar(k)] += delta;
    for w in 0..l.words().len() {
        state[l.theta(w, k)] += delta;
    }
}

/// Log density of the spread of category `k` at `exp(log_sd)` with that
/// category's per-word coefficients integrated out, including the
/// log-transform Jacobian.
///
/// Each cell mean is then `Normal(bar, sqrt(sd² + sigma² / n))`. Updating the
/// spread from this density and redrawing the coefficients afterwards is a
/// joint draw of the whole block, which avoids the slow back-and-forth
/// between a near-zero spread and coefficients shrunk onto the mean.
pub fn log_sd_marginal(data: &ModelData, spec: &ModelSpec, state: &[f64], k: usize, log_sd: f64) -> f64 {
    let l = data.layout();
    let s = log_sd.exp();
    if !(s > 0.0 && s.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let bar = state[l.bar(k)];
    let sigma = state[l.sigma_for(k)];
    let lik: f64 = (0..l.words().len())
        .map(|w| {
            let cell = data.cell(w, k);
            let n = cell.n as f64;
            normal_log_pdf(cell.sum / n, bar, (s * s + sigma * sigma / n).sqrt())
        })
        .sum();
    lik + exponential_log_pdf(s, spec.sd_rate) + log_sd
}

/// Log conditional density of scale parameter `i` at `exp(log_value)`,
/// including the log-transform Jacobian.
pub fn log_scale_conditional(data: &ModelData, spec: &ModelSpec, state: &[f64], i: usize, log_value: f64) -> f64 {
    let l = data.layout();
    let s = log_value.exp();
    if !(s > 0.0 && s.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let prior = exponential_log_pdf(s, spec.sd_rate) + log_value;
    let lik = match l.kind(i) {
        ParamKind::Sd(k) => (0..l.words().len())
            .map(|w| normal_log_pdf(state[l.theta(w, k)], state[l.bar(k)], s))
            .sum::<f64>(),
        ParamKind::Sigma(j) => {
            let mut n = 0usize;
            let mut ss = 0.0;
            for k in 0..l.n_categories() {
                if l.sigma_for(k) != l.sigma(j) {
                    continue;
                }
                for w in 0..l.words().len() {
                    let cell = data.cell(w, k);
                    n += cell.n;
                    ss += cell.residual_ss(state[l.theta(w, k)]);
                }
            }
            -(n as f64) * log_value - ss / (2.0 * s * s)
        }
        _ => panic!("parameter {i} is not a scale"),
    };
    lik + prior
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::model::{NoiseStructure, ParamLayout};
    use crate::datasets::{AssociationCategory, LongRow, LongTable};
    use crate::stats::stream_rng;
    use approx::assert_abs_diff_eq;

    fn data() -> ModelData {
        let rows = vec![
            LongRow {
                protected: "w".into(),
                attribute: "x".into(),
                category: AssociationCategory::Associated,
                distance: 0.8,
            },
            LongRow {
                protected: "w".into(),
                attribute: "y".into(),
                category: AssociationCategory::Associated,
                distance: 0.9,
            },
        ];
        let table = LongTable::from_rows(rows).unwrap();
        ModelData::new(ParamLayout::from_table(&table, NoiseStructure::PerCategory), &table).unwrap()
    }

    #[test]
    fn theta_conditional_closed_form() {
        let d = data();
        // [abar, sd_a, sigma_a, a[w]]
        let state = [1.0, 0.2, 0.1, 0.5];
        let m = theta_conditional(&d, &state, 0, 0);
        let prec: f64 = 1.0 / 0.04 + 2.0 / 0.01;
        assert_abs_diff_eq!(m.sd, prec.powf(-0.5), epsilon = 1e-14);
        assert_abs_diff_eq!(m.mean, (1.0 / 0.04 + 1.7 / 0.01) / prec, epsilon = 1e-14);
    }

    #[test]
    fn scale_conditional_matches_density_difference() {
        let d = data();
        let spec = ModelSpec::default();
        let state = [1.0, 0.2, 0.1, 0.85];
        // sigma: two rows around 0.85 with residuals ±0.05
        let at = |s: f64| log_scale_conditional(&d, &spec, &state, 2, s.ln());
        let direct =
            |s: f64| normal_log_pdf(0.8, 0.85, s) + normal_log_pdf(0.9, 0.85, s) + exponential_log_pdf(s, 2.0) + s.ln();
        assert_abs_diff_eq!(at(0.3) - at(0.07), direct(0.3) - direct(0.07), epsilon = 1e-10);
        let sd_at = |s: f64| log_scale_conditional(&d, &spec, &state, 1, s.ln());
        let sd_direct = |s: f64| normal_log_pdf(0.85, 1.0, s) + exponential_log_pdf(s, 2.0) + s.ln();
        assert_abs_diff_eq!(
            sd_at(0.3) - sd_at(0.07),
            sd_direct(0.3) - sd_direct(0.07),
            epsilon = 1e-10
        );
    }

    #[test]
    fn sd_marginal_matches_numerical_integration() {
        let d = data();
        let spec = ModelSpec::default();
        let state = [0.95, 0.2, 0.1, 0.5];
        // oracle: integrate theta out of prior × likelihood on a fine grid
        let integrated = |s: f64| {
            let (lo, hi, n) = (-1.0, 3.0, 200_000);
            let h = (hi - lo) / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let t = lo + i as f64 * h;
                let wgt = if i == 0 || i == n { 0.5 } else { 1.0 };
                let lp = normal_log_pdf(t, 0.95, s) + normal_log_pdf(0.8, t, 0.1) + normal_log_pdf(0.9, t, 0.1);
                acc += wgt * lp.exp();
            }
            (acc * h).ln() + exponential_log_pdf(s, 2.0) + s.ln()
        };
        let got = |s: f64| log_sd_marginal(&d, &spec, &state, 0, s.ln());
        // the marginal drops factors free of the spread, so compare differences
        assert_abs_diff_eq!(got(0.3) - got(0.05), integrated(0.3) - integrated(0.05), epsilon = 1e-8);
    }

    #[test]
    fn sampled_bar_matches_moments() {
        let d = data();
        let spec = ModelSpec::default();
        let mut state = [1.0, 0.2, 0.1, 0.5];
        let mut rng = stream_rng(3, 0);
        let n = 50_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                sample_bar(&d, &spec, &mut state, 0, &mut rng);
                state[0]
            })
            .collect();
        let prec: f64 = 1.0 / 0.09 + 1.0 / 0.04;
        let mean = (1.0 / 0.09 + 0.5 / 0.04) / prec;
        let m = draws.iter().sum::<f64>() / n as f64;
        assert!(((m - mean) / (prec.powf(-0.5) / (n as f64).sqrt())).abs() < 4.0);
    }
}
