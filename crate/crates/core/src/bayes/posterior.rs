use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{ess_bulk, hpdi_sorted, split_rhat, Hpdi};
use super::model::{ModelSpec, ParamLayout};
use super::sampler::McmcConfig;
use super::BayesError;
use crate::stats::round_sig;

pub const RHAT_THRESHOLD: f64 = 1.05;
pub const GLOBAL_ESS_THRESHOLD: f64 = 400.0;
pub const ESS_THRESHOLD: f64 = 100.0;

/// Kept draws of one chain, row-major (`draws × dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub draws: Vec<f64>,
    /// Post-warmup acceptance rate of each scale parameter.
    pub acceptance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    layout: ParamLayout,
    spec: ModelSpec,
    config: McmcConfig,
    chains: Vec<Chain>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    pub min_global_ess: Option<f64>,
    /// Parameters breaking a threshold, with the reason.
    pub flagged: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub hpdi: Hpdi,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

impl Posterior {
    pub fn new(
        layout: ParamLayout,
        spec: ModelSpec,
        config: McmcConfig,
        chains: Vec<Chain>,
    ) -> Result<Self, BayesError> {
        let dim = layout.dim();
        let Some(first) = chains.first() else {
            return Err(BayesError::EmptySamples);
        };
        let len = first.draws.len();
        if len == 0 || dim == 0 || len % dim != 0 || chains.iter().any(|c| c.draws.len() != len) {
            return Err(BayesError::DimensionMismatch {
                expected: dim,
                found: len,
            });
        }
        Ok(Self {
            layout,
            spec,
            config: McmcConfig {
                chains: chains.len(),
                draws: len / dim,
                ..config
            },
            chains,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn config(&self) -> &McmcConfig {
        &self.config
    }

    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_draws(&self) -> usize {
        self.config.draws
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn draw(&self, chain: usize, i: usize) -> &[f64] {
        let d = self.dim();
        &self.chains[chain].draws[i * d..(i + 1) * d]
    }

    /// Iterates over every kept draw, chain by chain.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.chains.iter().flat_map(move |c| c.draws.chunks_exact(self.dim()))
    }

    /// Draws of parameter `j`, one vector per chain.
    pub fn param_chains(&self, j: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        self.chains
            .iter()
            .map(|c| c.draws.iter().skip(j).step_by(d).copied().collect())
            .collect()
    }

    /// Draws of parameter `j` pooled over chains.
    pub fn param_draws(&self, j: usize) -> Vec<f64> {
        self.param_chains(j).concat()
    }

    pub fn param_draws_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.layout.index_of(name).map(|j| self.param_draws(j))
    }

    pub fn diagnostics(&self) -> Vec<ParamDiagnostics> {
        (0..self.dim())
            .into_par_iter()
            .map(|j| {
                let chains = self.param_chains(j);
                ParamDiagnostics {
                    name: self.layout.name(j),
                    rhat: split_rhat(&chains),
                    ess: ess_bulk(&chains),
                }
            })
            .collect()
    }

    /// Converged when every R-hat is below 1.05, every ESS is at least 100
    /// and every global parameter has ESS above 400.
    pub fn convergence(&self, diagnostics: &[ParamDiagnostics]) -> ConvergenceReport {
        let mut flagged = Vec::new();
        let mut max_rhat: Option<f64> = None;
        let mut min_ess: Option<f64> = None;
        let mut min_global: Option<f64> = None;
        for (j, d) in diagnostics.iter().enumerate() {
            match d.rhat {
                Some(r) => {
                    max_rhat = Some(max_rhat.map_or(r, |m| m.max(r)));
                    if !(r < RHAT_THRESHOLD) {
                        flagged.push(format!("{}: rhat {r:.3}", d.name));
                    }
                }
                None => flagged.push(format!("{}: rhat undefined", d.name)),
            }
            match d.ess {
                Some(e) => {
                    min_ess = Some(min_ess.map_or(e, |m| m.min(e)));
                    let global = self.layout.is_global(j);
                    if global {
                        min_global = Some(min_global.map_or(e, |m| m.min(e)));
                    }
                    let enough = if global {
                        e > GLOBAL_ESS_THRESHOLD
                    } else {
                        e >= ESS_THRESHOLD
                    };
                    if !enough {
                        flagged.push(format!("{}: ess {e:.0}", d.name));
                    }
                }
                None => flagged.push(format!("{}: ess undefined", d.name)),
            }
        }
        ConvergenceReport {
            converged: flagged.is_empty(),
            max_rhat,
            min_ess,
            min_global_ess: min_global,
            flagged,
        }
    }

    /// Per-parameter mean, sd, HPDI and diagnostics in layout order (global
    /// parameters first).
    pub fn summarize(&self, mass: f64) -> Result<Vec<ParamSummary>, BayesError> {
        if !(mass > 0.0 && mass < 1.0) {
            return Err(BayesError::InvalidMass(mass));
        }
        let diags = self.diagnostics();
        Ok(diags
            .into_par_iter()
            .enumerate()
            .map(|(j, d)| {
                let mut xs = self.param_draws(j);
                // sorting first makes the sums independent of chain order
                xs.sort_by(f64::total_cmp);
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                ParamSummary {
                    name: d.name,
                    mean,
                    sd,
                    hpdi: hpdi_sorted(&xs, mass),
                    rhat: d.rhat,
                    ess: d.ess,
                }
            })
            .collect())
    }

    /// CSV with a `chain` column, a `draw` column and one column per
    /// parameter; values rounded to 9 significant digits.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), BayesError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.layout.names());
        w.write_record(&header)?;
        for c in 0..self.n_chains() {
            for i in 0..self.n_draws() {
                let mut rec = vec![c.to_string(), i.to_string()];
                rec.extend(self.draw(c, i).iter().map(|v| round_sig(*v, 9).to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads draws written by [`Posterior::write_csv`]. Warmup length and
    /// seed are not stored in the CSV and come from `config`.
    pub fn read_csv<R: io::Read>(input: R, spec: ModelSpec, config: McmcConfig) -> Result<Self, BayesError> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.len() < 3 || &headers[0] != "chain" || &headers[1] != "draw" {
            return Err(BayesError::BadCsv(
                "expected chain,draw,<parameters> header".to_string(),
            ));
        }
        let names: Vec<&str> = headers.iter().skip(2).collect();
        let layout = ParamLayout::from_names(&names)?;
        let mut chains: Vec<Chain> = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| BayesError::BadCsv(format!("row {}: {what}", line + 1));
            let c: usize = rec[0].parse().map_err(|_| bad("bad chain index"))?;
            if c > chains.len() {
                return Err(bad("chains out of order"));
            }
            if c == chains.len() {
                chains.push(Chain {
                    draws: Vec::new(),
                    acceptance: Vec::new(),
                });
            }
            for field in rec.iter().skip(2) {
                chains[c].draws.push(field.parse().map_err(|_| bad("bad value"))?);
            }
        }
        // the columns decide the noise structure
        let spec = ModelSpec {
            noise: layout.noise(),
            ..spec
        };
        Self::new(layout, spec, config, chains)
    }
}
