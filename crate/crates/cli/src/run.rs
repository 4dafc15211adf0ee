//! Executes a [`RunConfig`] and writes its output set.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use embias_core::bayes::{
    compare, fit, posterior_predictive_check, ConvergenceReport, ParamDiagnostics, ParamSummary, Posterior, PpcOptions,
};
use embias_core::datasets::build_long_table;
use embias_core::geometry::{cosine_similarity, direct_bias, principal_direction};
use embias_core::metrics::{
    exact_partition_count, mac_for_dataset, PermutationMode, PermutationOptions, WeatInput, WeatReport,
};
use embias_core::nullsim::{
    bootstrap_partitions, draw_null_sample, ks_distance_uniform, null_p_values, raw_score_tests, run_null_study,
    tail_fraction, NullConfig, Sidedness,
};
use embias_core::{BiasDataset, Embedding, LongTable, MissingPolicy};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{DatasetSource, ModelSettings, RunConfig, Task, WeatMode};
use crate::output::{csv_bytes, fmt_float, json_bytes, sha256_file, sha256_hex, write_set, OutFile};
use crate::svg::{density_plot, interval_plot, Interval};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit status when `fit` misses the convergence thresholds.
pub const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run, written as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub kind: &'static str,
    pub tool_version: &'static str,
    pub command_line: Vec<String>,
    pub config: RunConfig,
    pub threads: usize,
    pub inputs: Vec<InputRecord>,
    pub skipped_tokens: Vec<String>,
    pub timings: Vec<StageTiming>,
    pub outputs: Vec<OutputRecord>,
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// `Some` for subcommands that fit a model.
    pub converged: Option<bool>,
    pub exit_code: u8,
}

struct Stages {
    timings: Vec<StageTiming>,
}

impl Stages {
    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        eprintln!("embias: {stage}");
        let start = Instant::now();
        let out = f();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

/// Results of one subcommand before they are written.
struct Product {
    report_name: &'static str,
    result: Value,
    files: Vec<OutFile>,
    skipped: Vec<String>,
    converged: Option<bool>,
}

struct Inputs {
    embeddings: Vec<Embedding>,
    dataset: Option<BiasDataset>,
    records: Vec<InputRecord>,
}

fn load_inputs(cfg: &RunConfig, stages: &mut Stages) -> Result<Inputs> {
    let mut records = Vec::new();
    let mut embeddings = Vec::new();
    let roles: &[&str] = if cfg.embeddings.len() == 2 {
        &["before", "after"]
    } else {
        &["embedding"]
    };
    for (path, role) in cfg.embeddings.iter().zip(roles) {
        let (sha256, bytes) = stages.run(&format!("hashing {}", path.display()), || sha256_file(path))?;
        let emb = stages.run(&format!("loading {}", path.display()), || {
            Embedding::load(path, cfg.format).with_context(|| format!("cannot load embedding {}", path.display()))
        })?;
        records.push(InputRecord {
            role: role.to_string(),
            path: path.clone(),
            sha256,
            bytes,
        });
        embeddings.push(emb);
    }
    let dataset = match &cfg.dataset {
        None => None,
        Some(DatasetSource::Builtin(name)) => Some(BiasDataset::builtin(name)?),
        Some(DatasetSource::File(path)) => {
            let (sha256, bytes) = sha256_file(path)?;
            records.push(InputRecord {
                role: "dataset".into(),
                path: path.clone(),
                sha256,
                bytes,
            });
            Some(BiasDataset::load(path).with_context(|| format!("cannot load dataset {}", path.display()))?)
        }
    };
    Ok(Inputs {
        embeddings,
        dataset,
        records,
    })
}

/// `<subcommand>-<dataset>-<digest8>`, where the digest covers the
/// embedding files (or the simulation settings for `nullsim`).
pub fn output_dir_name(cfg: &RunConfig, dataset: &str, embedding_digests: &[String]) -> Result<String> {
    let digest = match &cfg.task {
        Task::Nullsim { null, .. } => sha256_hex(&serde_json::to_vec(null)?),
        _ if embedding_digests.len() == 1 => embedding_digests[0].clone(),
        _ => sha256_hex(embedding_digests.join("\n").as_bytes()),
    };
    let label: String = dataset
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    Ok(format!("{}-{}-{}", cfg.task.name(), label, &digest[..8]))
}

/// Runs `cfg` and writes its output set. `argv` is recorded in the manifest.
pub fn run(cfg: &RunConfig, argv: &[String]) -> Result<Outcome> {
    let mut stages = Stages { timings: Vec::new() };
    let inputs = load_inputs(cfg, &mut stages)?;
    let dataset_label = inputs
        .dataset
        .as_ref()
        .map(|d| d.name().to_string())
        .unwrap_or_else(|| "null".into());
    let digests: Vec<String> = inputs
        .records
        .iter()
        .filter(|r| r.role != "dataset")
        .map(|r| r.sha256.clone())
        .collect();
    let dir = cfg.out.join(output_dir_name(cfg, &dataset_label, &digests)?);

    let ds = inputs.dataset.as_ref();
    let embs = &inputs.embeddings;
    let product = match &cfg.task {
        Task::Weat { mode, samples, rule } => weat(cfg, ds.unwrap(), &embs[0], *mode, *samples, *rule, &mut stages)?,
        Task::Mac => mac(cfg, ds.unwrap(), &embs[0], &mut stages)?,
        Task::Nullsim {
            null: sim,
            threshold,
            sidedness,
            p_value_sims,
        } => nullsim(cfg, sim, *threshold, *sidedness, *p_value_sims, &mut stages)?,
        Task::Fit { model, .. } => fit_cmd(cfg, ds.unwrap(), &embs[0], model, &mut stages)?,
        Task::Ppc {
            model,
            draws,
            max_draws,
        } => ppc(
            cfg,
            ds.unwrap(),
            &embs[0],
            model,
            draws.as_deref(),
            *max_draws,
            &mut stages,
        )?,
        Task::Compare { model } => compare_cmd(cfg, ds.unwrap(), &embs[0], &embs[1], model, &mut stages)?,
        Task::DumpTable => dump_table(cfg, ds.unwrap(), &embs[0], &mut stages)?,
        Task::Directbias { c } => directbias(cfg, ds.unwrap(), &embs[0], *c, &mut stages)?,
    };

    let report = json!({
        "kind": cfg.task.name(),
        "tool_version": TOOL_VERSION,
        "dataset": dataset_label,
        "inputs": inputs.records.iter().map(|r| json!({"role": r.role, "sha256": r.sha256})).collect::<Vec<_>>(),
        "result": product.result,
    });
    let mut files = vec![OutFile::new(product.report_name, json_bytes(&report)?)];
    files.extend(product.files);
    let mut written = stages.run(&format!("writing {}", dir.display()), || write_set(&dir, &files))?;

    let manifest = RunManifest {
        kind: "manifest",
        tool_version: TOOL_VERSION,
        command_line: argv.to_vec(),
        config: cfg.clone(),
        threads: rayon::current_num_threads(),
        inputs: inputs.records,
        skipped_tokens: product.skipped,
        timings: stages.timings,
        outputs: files
            .iter()
            .map(|f| OutputRecord {
                file: f.name.clone(),
                sha256: sha256_hex(&f.bytes),
            })
            .collect(),
    };
    written.extend(write_set(
        &dir,
        &[OutFile::new("manifest.json", json_bytes(&manifest)?)],
    )?);

    let allow = matches!(
        cfg.task,
        Task::Fit {
            allow_nonconverged: true,
            ..
        }
    );
    let exit_code = match (&cfg.task, product.converged) {
        (Task::Fit { .. }, Some(false)) if !allow => EXIT_NOT_CONVERGED,
        _ => 0,
    };
    Ok(Outcome {
        dir,
        files: written,
        converged: product.converged,
        exit_code,
    })
}

fn long_table(ds: &BiasDataset, emb: &Embedding, policy: MissingPolicy, stages: &mut Stages) -> Result<LongTable> {
    stages.run("building distance table", || Ok(build_long_table(ds, emb, policy)?))
}

fn weat(
    cfg: &RunConfig,
    ds: &BiasDataset,
    emb: &Embedding,
    mode: WeatMode,
    samples: usize,
    rule: embias_core::metrics::PValueRule,
    stages: &mut Stages,
) -> Result<Product> {
    let input = WeatInput::from_dataset(ds)?;
    let scores = stages.run("scoring", || Ok(input.scores(emb, cfg.missing)?))?;
    let n_total = scores.x().len() + scores.y().len();
    let mode = match mode {
        WeatMode::Exact => PermutationMode::Exact,
        WeatMode::Sampled => PermutationMode::Sampled,
        WeatMode::Auto => match exact_partition_count(n_total, scores.x().len()) {
            Ok(_) => PermutationMode::Exact,
            Err(_) => PermutationMode::Sampled,
        },
    };
    let opts = PermutationOptions {
        mode,
        n_samples: samples,
        seed: cfg.seed,
        rule,
        keep_distribution: cfg.emit.svg,
    };
    let perm = stages.run("permutation test", || Ok(scores.p_value(&opts)?))?;
    let report = WeatReport {
        x: scores.x().iter().map(|(t, _)| t.clone()).collect(),
        y: scores.y().iter().map(|(t, _)| t.clone()).collect(),
        s_per_word: scores.x().iter().chain(scores.y()).cloned().collect(),
        s_statistic: scores.s_statistic(),
        effect_size: scores.effect_size()?,
        p_value: perm.p_value,
        p_mode: perm.mode,
        p_rule: perm.rule,
        n_partitions_evaluated: perm.n_evaluated,
        skipped: scores.skipped().to_vec(),
    };

    let mut files = Vec::new();
    if cfg.emit.csv {
        let rows = scores
            .x()
            .iter()
            .map(|(t, s)| ("X", t, s))
            .chain(scores.y().iter().map(|(t, s)| ("Y", t, s)))
            .map(|(g, t, s)| vec![t.clone(), g.to_string(), fmt_float(*s)]);
        files.push(OutFile::new(
            "weat_scores.csv",
            csv_bytes(&["token", "group", "s"], rows)?,
        ));
    }
    if let Some(dist) = perm.distribution.as_ref().filter(|_| cfg.emit.svg) {
        let svg = density_plot(
            &format!("{}: permutation distribution of s", ds.name()),
            "test statistic s",
            &[("partitions".into(), dist.clone())],
            &[(perm.observed, "observed".into())],
        );
        files.push(OutFile::new("weat_permutations.svg", svg.into_bytes()));
    }
    Ok(Product {
        report_name: "weat.json",
        result: serde_json::to_value(&report)?,
        files,
        skipped: report.skipped,
        converged: None,
    })
}

fn similarities_by_category(table: &LongTable) -> Vec<(String, Vec<f64>)> {
    table
        .similarities_by_category()
        .into_iter()
        .map(|(c, v)| (c.to_string(), v))
        .collect()
}

fn mac(cfg: &RunConfig, ds: &BiasDataset, emb: &Embedding, stages: &mut Stages) -> Result<Product> {
    let table = long_table(ds, emb, cfg.missing, stages)?;
    let report = stages.run("mean average cosine", || {
        Ok(mac_for_dataset(ds, emb, &table, cfg.missing)?)
    })?;
    let mut files = Vec::new();
    if cfg.emit.csv {
        let rows = report
            .s_per_pair
            .iter()
            .map(|p| vec![p.token.clone(), p.set_id.clone(), fmt_float(p.s)]);
        files.push(OutFile::new(
            "mac_pairs.csv",
            csv_bytes(&["token", "set_id", "mean_distance"], rows)?,
        ));
    }
    if cfg.emit.svg {
        let svg = density_plot(
            &format!("{}: cosine similarity by category", ds.name()),
            "cosine similarity",
            &similarities_by_category(&table),
            &[(-report.band, "-(1 - MAC)".into()), (report.band, "1 - MAC".into())],
        );
        files.push(OutFile::new("mac_density.svg", svg.into_bytes()));
    }
    let mut skipped = report.skipped.clone();
    for s in table.skipped() {
        if !skipped.contains(s) {
            skipped.push(s.clone());
        }
    }
    Ok(Product {
        report_name: "mac.json",
        result: serde_json::to_value(&report)?,
        files,
        skipped,
        converged: None,
    })
}

fn quantiles(values: &[f64], probs: &[f64]) -> BTreeMap<String, f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    probs
        .iter()
        .map(|&p| {
            // linear interpolation between order statistics
            let h = (sorted.len() - 1) as f64 * p;
            let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
            (format!("{p}"), sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
        })
        .collect()
}

fn nullsim(
    cfg: &RunConfig,
    sim: &NullConfig,
    threshold: f64,
    sidedness: Sidedness,
    p_value_sims: usize,
    stages: &mut Stages,
) -> Result<Product> {
    let summary = stages.run(&format!("simulating {} null samples", sim.n_sims), || {
        Ok(run_null_study(sim)?)
    })?;
    let probs = [0.025, 0.25, 0.5, 0.75, 0.975];
    let first = draw_null_sample(sim, 0)?;
    let partitions = stages.run("partition distribution of the first sample", || {
        Ok(bootstrap_partitions(&first)?)
    })?;
    let p_values = if p_value_sims > 0 {
        let sub = NullConfig {
            n_sims: p_value_sims.min(sim.n_sims),
            ..sim.clone()
        };
        let ps = stages.run("permutation p-values", || Ok(null_p_values(&sub, Default::default())?))?;
        let below = ps.iter().filter(|&&p| p < 0.05).count() as f64 / ps.len() as f64;
        json!({
            "n": ps.len(),
            "ks_distance_uniform": ks_distance_uniform(&ps)?,
            "fraction_below_0.05": below,
        })
    } else {
        Value::Null
    };
    let raw = raw_score_tests(&first).ok();
    let result = json!({
        "config": sim,
        "threshold": threshold,
        "sidedness": sidedness,
        "effect_tail_fraction": summary.effect_tail(threshold, sidedness)?,
        "effect_size_quantiles": quantiles(&summary.effect_sizes, &probs),
        "s_statistic_quantiles": quantiles(&summary.s_statistics, &probs),
        "first_sample": {
            "effect_size": first.effect_size()?,
            "partition_effect_tail_fraction": tail_fraction(&partitions.effect_distribution, threshold, sidedness)?,
            "raw_score_tests": raw,
        },
        "p_values": p_values,
    });

    let mut files = Vec::new();
    if cfg.emit.csv {
        let rows = summary
            .effect_sizes
            .iter()
            .zip(&summary.s_statistics)
            .enumerate()
            .map(|(i, (e, s))| vec![i.to_string(), fmt_float(*e), fmt_float(*s)]);
        files.push(OutFile::new(
            "nullsim_samples.csv",
            csv_bytes(&["sim", "effect_size", "s_statistic"], rows)?,
        ));
    }
    if cfg.emit.svg {
        let mut lines = vec![(threshold, format!("{threshold}"))];
        if sidedness == Sidedness::Two && threshold > 0.0 {
            lines.insert(0, (-threshold, format!("-{threshold}")));
        }
        let svg = density_plot(
            "WEAT effect sizes under the null model",
            "effect size",
            &[
                ("independent samples".into(), summary.effect_sizes.clone()),
                ("partitions of sample 0".into(), partitions.effect_distribution.clone()),
            ],
            &lines,
        );
        files.push(OutFile::new("nullsim_effects.svg", svg.into_bytes()));
    }
    Ok(Product {
        report_name: "nullsim.json",
        result,
        files,
        skipped: Vec::new(),
        converged: None,
    })
}

fn fit_model(table: &LongTable, model: &ModelSettings, label: &str, stages: &mut Stages) -> Result<Posterior> {
    let m = &model.mcmc;
    stages.run(
        &format!(
            "sampling {label}: {} chains x ({} warmup + {} draws)",
            m.chains, m.warmup, m.draws
        ),
        || Ok(fit(table, &model.spec, m)?),
    )
}

/// Summary plus the convergence verdict derived from it.
fn summarize(post: &Posterior, mass: f64, stages: &mut Stages) -> Result<(Vec<ParamSummary>, ConvergenceReport)> {
    stages.run("diagnostics", || {
        let summary = post.summarize(mass)?;
        let diags: Vec<ParamDiagnostics> = summary
            .iter()
            .map(|s| ParamDiagnostics {
                name: s.name.clone(),
                rhat: s.rhat,
                ess: s.ess,
            })
            .collect();
        let conv = post.convergence(&diags);
        Ok((summary, conv))
    })
}

fn summary_rows(summary: &[ParamSummary]) -> Vec<(String, Vec<Interval>)> {
    summary
        .iter()
        .map(|s| {
            (
                s.name.clone(),
                vec![Interval {
                    lower: s.hpdi.lower,
                    upper: s.hpdi.upper,
                    point: s.mean,
                    series: 0,
                }],
            )
        })
        .collect()
}

fn fit_cmd(
    cfg: &RunConfig,
    ds: &BiasDataset,
    emb: &Embedding,
    model: &ModelSettings,
    stages: &mut Stages,
) -> Result<Product> {
    let table = long_table(ds, emb, cfg.missing, stages)?;
    let post = fit_model(&table, model, ds.name(), stages)?;
    let (summary, conv) = summarize(&post, model.mass, stages)?;
    if !conv.converged {
        eprintln!("embias: warning: not converged: {}", conv.flagged.join("; "));
    }
    let acceptance: Vec<Value> = post
        .chains()
        .iter()
        .map(|c| {
            let names = post.layout().scale_indices().map(|i| post.layout().name(i));
            Value::Object(names.zip(&c.acceptance).map(|(n, a)| (n, json!(a))).collect())
        })
        .collect();
    let result = json!({
        "n_rows": table.len(),
        "mass": model.mass,
        "mcmc": post.config(),
        "spec": post.spec(),
        "convergence": conv,
        "acceptance": acceptance,
        "parameters": summary,
    });

    let mut files = Vec::new();
    if cfg.emit.csv {
        let mut buf = Vec::new();
        stages.run("writing draws", || Ok(post.write_csv(&mut buf)?))?;
        files.push(OutFile::new("posterior_draws.csv", buf));
    }
    if cfg.emit.svg {
        let svg = interval_plot(
            &format!("{}: posterior means and {}% HPDIs", ds.name(), model.mass * 100.0),
            "cosine distance scale",
            &["posterior"],
            &summary_rows(&summary),
        );
        files.push(OutFile::new("interval_plot.svg", svg.into_bytes()));
    }
    Ok(Product {
        report_name: "diagnostics.json",
        result,
        files,
        skipped: table.skipped().to_vec(),
        converged: Some(conv.converged),
    })
}

fn ppc(
    cfg: &RunConfig,
    ds: &BiasDataset,
    emb: &Embedding,
    model: &ModelSettings,
    draws: Option<&Path>,
    max_draws: usize,
    stages: &mut Stages,
) -> Result<Product> {
    let table = long_table(ds, emb, cfg.missing, stages)?;
    let (post, convergence) = match draws {
        Some(path) => {
            let post = stages.run(&format!("reading {}", path.display()), || {
                let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
                Posterior::read_csv(f, model.spec, model.mcmc)
                    .with_context(|| format!("cannot read draws {}", path.display()))
            })?;
            (post, None)
        }
        None => {
            let post = fit_model(&table, model, ds.name(), stages)?;
            let (_, conv) = summarize(&post, model.mass, stages)?;
            (post, Some(conv))
        }
    };
    let opts = PpcOptions {
        max_draws,
        seed: cfg.seed,
    };
    let report = stages.run("posterior predictive check", || {
        Ok(posterior_predictive_check(&post, &table, &opts)?)
    })?;
    let result = json!({
        "coverage89": report.coverage89,
        "coverage50": report.coverage50,
        "n_rows": report.n_rows,
        "n_draws_used": report.n_draws_used,
        "by_category": report.by_category,
        "convergence": convergence,
    });

    let mut files = Vec::new();
    if cfg.emit.csv {
        let rows = report.rows.iter().map(|r| {
            vec![
                r.protected.clone(),
                r.attribute.clone(),
                r.category.to_string(),
                fmt_float(r.observed),
                fmt_float(r.predicted_mean),
                fmt_float(r.hpdi89.lower),
                fmt_float(r.hpdi89.upper),
                fmt_float(r.hpdi50.lower),
                fmt_float(r.hpdi50.upper),
            ]
        });
        let header = [
            "protected",
            "attribute",
            "category",
            "observed",
            "predicted_mean",
            "hpdi89_lower",
            "hpdi89_upper",
            "hpdi50_lower",
            "hpdi50_upper",
        ];
        files.push(OutFile::new("ppc_rows.csv", csv_bytes(&header, rows)?));
    }
    if cfg.emit.svg {
        let rows = report
            .by_category
            .iter()
            .map(|(c, p)| {
                let iv = |mean: f64, sd: f64, series| Interval {
                    lower: mean - sd,
                    upper: mean + sd,
                    point: mean,
                    series,
                };
                (
                    c.to_string(),
                    vec![
                        iv(p.observed_mean, p.observed_sd, 0),
                        iv(p.predicted_mean, p.predicted_sd, 1),
                    ],
                )
            })
            .collect::<Vec<_>>();
        let svg = interval_plot(
            &format!("{}: observed and replicated distances (mean ± sd)", ds.name()),
            "cosine distance",
            &["observed", "replicated"],
            &rows,
        );
        files.push(OutFile::new("ppc_plot.svg", svg.into_bytes()));
    }
    Ok(Product {
        report_name: "ppc.json",
        result,
        files,
        skipped: table.skipped().to_vec(),
        converged: convergence.map(|c| c.converged),
    })
}

fn compare_cmd(
    cfg: &RunConfig,
    ds: &BiasDataset,
    before: &Embedding,
    after: &Embedding,
    model: &ModelSettings,
    stages: &mut Stages,
) -> Result<Product> {
    let t_before = long_table(ds, before, cfg.missing, stages)?;
    let t_after = long_table(ds, after, cfg.missing, stages)?;
    let p_before = fit_model(&t_before, model, "before", stages)?;
    let p_after = fit_model(&t_after, model, "after", stages)?;
    let (_, c_before) = summarize(&p_before, model.mass, stages)?;
    let (_, c_after) = summarize(&p_after, model.mass, stages)?;
    let report = stages.run("comparing posteriors", || Ok(compare(&p_before, &p_after, model.mass)?))?;
    let converged = c_before.converged && c_after.converged;
    let mut result = serde_json::to_value(&report)?;
    result["convergence"] = json!({"before": c_before, "after": c_after});

    let params = || report.global.iter().chain(&report.per_word);
    let mut files = Vec::new();
    if cfg.emit.csv {
        let rows = params().map(|p| {
            vec![
                p.name.clone(),
                fmt_float(p.before_mean),
                fmt_float(p.after_mean),
                fmt_float(p.shift),
                fmt_float(p.before_hpdi.lower),
                fmt_float(p.before_hpdi.upper),
                fmt_float(p.after_hpdi.lower),
                fmt_float(p.after_hpdi.upper),
                p.overlap.to_string(),
            ]
        });
        let header = [
            "parameter",
            "before_mean",
            "after_mean",
            "shift",
            "before_lower",
            "before_upper",
            "after_lower",
            "after_upper",
            "overlap",
        ];
        files.push(OutFile::new("compare_params.csv", csv_bytes(&header, rows)?));
    }
    if cfg.emit.svg {
        let rows = params()
            .map(|p| {
                let iv = |h: &embias_core::bayes::Hpdi, point, series| Interval {
                    lower: h.lower,
                    upper: h.upper,
                    point,
                    series,
                };
                (
                    p.name.clone(),
                    vec![iv(&p.before_hpdi, p.before_mean, 0), iv(&p.after_hpdi, p.after_mean, 1)],
                )
            })
            .collect::<Vec<_>>();
        let svg = interval_plot(
            &format!(
                "{}: posterior {}% HPDIs before and after",
                ds.name(),
                model.mass * 100.0
            ),
            "cosine distance scale",
            &["before", "after"],
            &rows,
        );
        files.push(OutFile::new("compare_plot.svg", svg.into_bytes()));
    }
    let mut skipped = t_before.skipped().to_vec();
    for s in t_after.skipped() {
        if !skipped.contains(s) {
            skipped.push(s.clone());
        }
    }
    Ok(Product {
        report_name: "compare.json",
        result,
        files,
        skipped,
        converged: Some(converged),
    })
}

fn dump_table(cfg: &RunConfig, ds: &BiasDataset, emb: &Embedding, stages: &mut Stages) -> Result<Product> {
    let table = long_table(ds, emb, cfg.missing, stages)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in table.rows() {
        *counts.entry(r.category.to_string()).or_default() += 1;
    }
    let result = json!({
        "n_rows": table.len(),
        "protected_words": table.protected_words(),
        "rows_per_category": counts,
        "skipped": table.skipped(),
    });
    let mut files = Vec::new();
    if cfg.emit.csv {
        let mut buf = Vec::new();
        table.write_csv(&mut buf)?;
        files.push(OutFile::new("table.csv", buf));
    }
    if cfg.emit.svg {
        let series: Vec<(String, Vec<f64>)> = similarities_by_category(&table)
            .into_iter()
            .map(|(c, v)| (c, v.into_iter().map(|s| 1.0 - s).collect()))
            .collect();
        let svg = density_plot(
            &format!("{}: cosine distance by category", ds.name()),
            "cosine distance",
            &series,
            &[],
        );
        files.push(OutFile::new("distance_density.svg", svg.into_bytes()));
    }
    Ok(Product {
        report_name: "dump_table.json",
        result,
        files,
        skipped: table.skipped().to_vec(),
        converged: None,
    })
}

fn directbias(cfg: &RunConfig, ds: &BiasDataset, emb: &Embedding, c: f64, stages: &mut Stages) -> Result<Product> {
    let [first, second, ..] = ds.classes() else {
        bail!(
            "directbias needs at least two protected classes; {} has {}",
            ds.name(),
            ds.classes().len()
        );
    };
    let (a, b) = (ds.protected_in(first), ds.protected_in(second));
    if a.len() != b.len() {
        bail!(
            "directbias pairs the words of {first:?} and {second:?} by position, but they have {} and {} words",
            a.len(),
            b.len()
        );
    }
    let mut skipped = Vec::new();
    let mut pairs = Vec::new();
    let mut used = Vec::new();
    for (x, y) in a.iter().zip(&b) {
        match (emb.vector(x), emb.vector(y)) {
            (Some(u), Some(v)) => {
                pairs.push((u, v));
                used.push(json!([x, y]));
            }
            _ if cfg.missing == MissingPolicy::Skip => {
                for t in [x, y] {
                    if !emb.contains(t) && !skipped.iter().any(|s: &String| s == t) {
                        skipped.push(t.to_string());
                    }
                }
            }
            _ => bail!("pair ({x}, {y}) is not fully in the embedding vocabulary"),
        }
    }
    if pairs.is_empty() {
        bail!("no definitional pair is fully in the embedding vocabulary");
    }
    let pd = stages.run("principal direction", || Ok(principal_direction(&pairs)?))?;
    let neutral = emb.resolve("neutral list", ds.neutral(), cfg.missing, &mut skipped)?;
    let vectors: Vec<&[f32]> = neutral.iter().map(|(_, v)| *v).collect();
    let value = direct_bias(&vectors, &pd.direction, c)?;
    let cosines: Vec<(String, f64)> = neutral
        .iter()
        .map(|(t, v)| Ok((t.to_string(), cosine_similarity(v, pd.direction.as_slice())?)))
        .collect::<Result<_>>()?;
    if pd.degenerate {
        eprintln!("embias: warning: the top eigenvalue is repeated; the bias direction is not unique");
    }
    let result = json!({
        "c": c,
        "direct_bias": value,
        "classes": [first, second],
        "pairs": used,
        "n_neutral_words": vectors.len(),
        "eigenvalue": pd.eigenvalue,
        "second_eigenvalue": pd.second_eigenvalue,
        "degenerate": pd.degenerate,
        "skipped": skipped,
    });
    let mut files = Vec::new();
    if cfg.emit.csv {
        let rows = cosines.iter().map(|(t, s)| vec![t.clone(), fmt_float(*s)]);
        files.push(OutFile::new(
            "directbias_words.csv",
            csv_bytes(&["token", "cos"], rows)?,
        ));
    }
    if cfg.emit.svg {
        let svg = density_plot(
            &format!("{}: neutral words along the bias direction", ds.name()),
            "cosine with bias direction",
            &[("neutral".into(), cosines.iter().map(|(_, s)| *s).collect())],
            &[(0.0, "0".into())],
        );
        files.push(OutFile::new("directbias_cos.svg", svg.into_bytes()));
    }
    Ok(Product {
        report_name: "directbias.json",
        result,
        files,
        skipped,
        converged: None,
    })
}
