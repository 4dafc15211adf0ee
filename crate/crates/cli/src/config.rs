//! Command-line parsing and run configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use embias_core::bayes::{McmcConfig, ModelSpec, NoiseStructure};
use embias_core::datasets::BUILTIN_NAMES;
use embias_core::metrics::{PValueRule, MIN_SAMPLED_PERMUTATIONS};
use embias_core::nullsim::{NullConfig, Sidedness};
use embias_core::{EmbeddingFormat, MissingPolicy};
use serde::{Deserialize, Serialize};

const AFTER_HELP: &str = "Exit status: 0 on success, 1 on a runtime error, 2 on a usage error, \
3 when `fit` does not meet the convergence thresholds (unless --allow-nonconverged).\n\
EMBIAS_THREADS caps the number of worker threads.";

#[derive(Debug, Parser)]
#[command(name = "embias", version, about = "Measure bias in static word embeddings", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// WEAT effect size and permutation p-value for the first two classes
    Weat {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Enumerate every partition, sample them, or enumerate when feasible
        #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
        permutations: ModeArg,
        /// Permutations drawn in sampled mode
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// p-value counting rule: `strict` (>) or `conservative` (>=, includes the observed split)
        #[arg(long, value_enum, default_value_t = RuleArg::Strict)]
        rule: RuleArg,
    },
    /// Mean average cosine distance and ±(1 - MAC) band fractions
    Mac {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Null-model simulation of WEAT effect sizes
    Nullsim {
        #[command(flatten)]
        output: OutputArgs,
        /// Protected words per group
        #[arg(long, default_value_t = 8)]
        n_per_group: usize,
        /// Attribute words per set
        #[arg(long, default_value_t = 8)]
        n_attrs: usize,
        /// Mean of the simulated cosine similarities
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        mu: f64,
        /// Standard deviation of the simulated cosine similarities
        #[arg(long, default_value_t = 0.08)]
        sigma: f64,
        /// Number of simulated datasets
        #[arg(long, default_value_t = 10_000)]
        sims: usize,
        /// Effect-size threshold for the reported tail fraction
        #[arg(long, default_value_t = 1.27)]
        threshold: f64,
        /// Count |effect| (two) or the signed effect (one) at or above the threshold
        #[arg(long, value_enum, default_value_t = SideArg::Two)]
        sidedness: SideArg,
        /// Simulations whose permutation p-values are checked for uniformity (0 disables)
        #[arg(long, default_value_t = 1000)]
        p_value_sims: usize,
    },
    /// Fit the hierarchical model and report posterior summaries
    Fit {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        mcmc: McmcArgs,
        /// Exit 0 even when convergence thresholds are not met
        #[arg(long)]
        allow_nonconverged: bool,
    },
    /// Posterior predictive check of a fitted model
    Ppc {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        mcmc: McmcArgs,
        /// Reuse posterior draws written by `fit` instead of fitting again
        #[arg(long)]
        draws: Option<PathBuf>,
        /// Posterior draws used for replication
        #[arg(long, default_value_t = 4000)]
        max_draws: usize,
    },
    /// Compare posteriors fitted on two embeddings (before, after)
    Compare {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        mcmc: McmcArgs,
    },
    /// Write the long distance table used by the model
    DumpTable {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Direct bias of the neutral words along the first two classes' direction
    Directbias {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Exponent applied to |cos|
        #[arg(long, default_value_t = 1.0)]
        c: f64,
    },
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Embedding file; give twice for `compare`
    #[arg(long = "embedding", value_name = "PATH")]
    embeddings: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Word2vecBin)]
    format: FormatArg,
    /// Built-in dataset name
    #[arg(long, value_name = "NAME")]
    dataset: Option<String>,
    /// Dataset JSON file
    #[arg(long, value_name = "PATH")]
    dataset_file: Option<PathBuf>,
    /// Drop tokens missing from the embedding instead of failing
    #[arg(long)]
    skip_missing: bool,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Parent directory for run directories
    #[arg(long, default_value = "embias-out")]
    out: PathBuf,
    /// Outputs to write besides the JSON report, which is always written
    #[arg(long, value_enum, value_delimiter = ',', default_value = "json,csv,svg")]
    emit: Vec<EmitArg>,
    /// Base RNG seed [default: 2022 for nullsim, 0 otherwise]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct McmcArgs {
    /// Independent chains [default: 4]
    #[arg(long)]
    chains: Option<usize>,
    /// Adaptation iterations per chain, discarded [default: 1000]
    #[arg(long)]
    warmup: Option<usize>,
    /// Kept draws per chain [default: 2000]
    #[arg(long)]
    draws_per_chain: Option<usize>,
    /// One noise scale per category or a single shared one
    #[arg(long, value_enum, default_value_t = NoiseArg::PerCategory)]
    noise: NoiseArg,
    /// HPDI mass
    #[arg(long, default_value_t = 0.89)]
    mass: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    #[value(name = "word2vec-bin")]
    Word2vecBin,
    GloveTxt,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Auto,
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RuleArg {
    Strict,
    Conservative,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SideArg {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NoiseArg {
    PerCategory,
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmitArg {
    Json,
    Csv,
    Svg,
}

/// Where the word lists come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Builtin(String),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Emit {
    pub json: bool,
    pub csv: bool,
    pub svg: bool,
}

/// Resolved sampler settings for the posterior-based subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub mcmc: McmcConfig,
    pub spec: ModelSpec,
    pub mass: f64,
}

/// Permutation strategy for `weat`. `Auto` enumerates exactly when the
/// partition count is within the enumeration cap and samples otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatMode {
    Auto,
    Exact,
    Sampled,
}

/// Subcommand with its own options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Task {
    Weat {
        mode: WeatMode,
        samples: usize,
        rule: PValueRule,
    },
    Mac,
    Nullsim {
        null: NullConfig,
        threshold: f64,
        sidedness: Sidedness,
        p_value_sims: usize,
    },
    Fit {
        model: ModelSettings,
        allow_nonconverged: bool,
    },
    Ppc {
        model: ModelSettings,
        draws: Option<PathBuf>,
        max_draws: usize,
    },
    Compare {
        model: ModelSettings,
    },
    DumpTable,
    Directbias {
        c: f64,
    },
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Weat { .. } => "weat",
            Task::Mac => "mac",
            Task::Nullsim { .. } => "nullsim",
            Task::Fit { .. } => "fit",
            Task::Ppc { .. } => "ppc",
            Task::Compare { .. } => "compare",
            Task::DumpTable => "dump-table",
            Task::Directbias { .. } => "directbias",
        }
    }
}

/// Fully validated configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub task: Task,
    pub embeddings: Vec<PathBuf>,
    pub format: EmbeddingFormat,
    pub dataset: Option<DatasetSource>,
    pub missing: MissingPolicy,
    pub seed: u64,
    pub out: PathBuf,
    pub emit: Emit,
}

#[derive(Debug)]
pub enum ParseError {
    /// Rejected by the argument parser (unknown flag, missing value, help).
    Clap(clap::Error),
    /// Parsed, but the combination of arguments is invalid.
    Invalid(Vec<String>),
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseError::Clap(e) => write!(f, "{e}"),
            ParseError::Invalid(v) => {
                writeln!(f, "error: invalid arguments:")?;
                for p in v {
                    writeln!(f, "  - {p}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ParseError {}

impl ParseError {
    pub fn violations(&self) -> &[String] {
        match self {
            ParseError::Invalid(v) => v,
            ParseError::Clap(_) => &[],
        }
    }
}

/// How many embeddings a subcommand takes and whether it reads a dataset.
fn needs(task: &Task) -> (usize, bool) {
    match task {
        Task::Nullsim { .. } => (0, false),
        Task::Compare { .. } => (2, true),
        _ => (1, true),
    }
}

fn model_settings(m: McmcArgs, seed: u64, problems: &mut Vec<String>) -> ModelSettings {
    let defaults = McmcConfig::default();
    let mcmc = McmcConfig {
        chains: m.chains.unwrap_or(defaults.chains),
        warmup: m.warmup.unwrap_or(defaults.warmup),
        draws: m.draws_per_chain.unwrap_or(defaults.draws),
        seed,
    };
    if let Err(e) = mcmc.validate() {
        problems.push(e.to_string());
    }
    if !(m.mass > 0.0 && m.mass < 1.0) {
        problems.push(format!("--mass must be in (0, 1), got {}", m.mass));
    }
    let spec = ModelSpec {
        noise: match m.noise {
            NoiseArg::PerCategory => NoiseStructure::PerCategory,
            NoiseArg::Shared => NoiseStructure::Shared,
        },
        ..Default::default()
    };
    ModelSettings {
        mcmc,
        spec,
        mass: m.mass,
    }
}

/// True when `dir` exists as a writable directory or could be created
/// under a writable ancestor.
fn writable_location(dir: &Path) -> Result<(), String> {
    let mut probe = Some(dir);
    while let Some(p) = probe {
        if let Ok(meta) = p.metadata() {
            if !meta.is_dir() {
                return Err(format!("output path {} is not a directory", p.display()));
            }
            if meta.permissions().readonly() {
                return Err(format!("output directory {} is not writable", p.display()));
            }
            return Ok(());
        }
        probe = p.parent().filter(|q| !q.as_os_str().is_empty());
    }
    Ok(())
}

/// Parses `argv` (program name first) into a validated [`RunConfig`].
///
/// Argument-level errors come from the parser; every violation of the
/// cross-argument rules is collected and reported together.
pub fn parse_config<I, T>(argv: I) -> Result<RunConfig, ParseError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(ParseError::Clap)?;
    let mut problems = Vec::new();

    let (task, input, output) = match cli.command {
        Command::Weat {
            input,
            output,
            permutations,
            samples,
            rule,
        } => {
            let mode = match permutations {
                ModeArg::Auto => WeatMode::Auto,
                ModeArg::Exact => WeatMode::Exact,
                ModeArg::Sampled => WeatMode::Sampled,
            };
            if mode != WeatMode::Exact && samples < MIN_SAMPLED_PERMUTATIONS {
                problems.push(format!(
                    "--samples must be at least {MIN_SAMPLED_PERMUTATIONS} in sampled mode"
                ));
            }
            let rule = match rule {
                RuleArg::Strict => PValueRule::Strict,
                RuleArg::Conservative => PValueRule::Conservative,
            };
            (Task::Weat { mode, samples, rule }, Some(input), output)
        }
        Command::Mac { input, output } => (Task::Mac, Some(input), output),
        Command::Nullsim {
            output,
            n_per_group,
            n_attrs,
            mu,
            sigma,
            sims,
            threshold,
            sidedness,
            p_value_sims,
        } => {
            let null = NullConfig {
                n_per_group,
                n_attrs_per_set: n_attrs,
                mu,
                sigma,
                n_sims: sims,
                seed: output.seed.unwrap_or(NullConfig::default().seed),
            };
            if let Err(e) = null.validate() {
                problems.push(e.to_string());
            }
            if !(threshold.is_finite() && threshold >= 0.0) {
                problems.push(format!("--threshold must be a non-negative number, got {threshold}"));
            }
            let sidedness = match sidedness {
                SideArg::One => Sidedness::One,
                SideArg::Two => Sidedness::Two,
            };
            (
                Task::Nullsim {
                    null,
                    threshold,
                    sidedness,
                    p_value_sims,
                },
                None,
                output,
            )
        }
        Command::Fit {
            input,
            output,
            mcmc,
            allow_nonconverged,
        } => {
            let model = model_settings(mcmc, output.seed.unwrap_or(0), &mut problems);
            (
                Task::Fit {
                    model,
                    allow_nonconverged,
                },
                Some(input),
                output,
            )
        }
        Command::Ppc {
            input,
            output,
            mcmc,
            draws,
            max_draws,
        } => {
            let model = model_settings(mcmc, output.seed.unwrap_or(0), &mut problems);
            if max_draws == 0 {
                problems.push("--max-draws must be at least 1".into());
            }
            if let Some(d) = &draws {
                if !d.is_file() {
                    problems.push(format!("draws file {} does not exist", d.display()));
                }
            }
            (
                Task::Ppc {
                    model,
                    draws,
                    max_draws,
                },
                Some(input),
                output,
            )
        }
        Command::Compare { input, output, mcmc } => {
            let model = model_settings(mcmc, output.seed.unwrap_or(0), &mut problems);
            (Task::Compare { model }, Some(input), output)
        }
        Command::DumpTable { input, output } => (Task::DumpTable, Some(input), output),
        Command::Directbias { input, output, c } => {
            if !(c > 0.0 && c.is_finite()) {
                problems.push(format!("--c must be positive, got {c}"));
            }
            (Task::Directbias { c }, Some(input), output)
        }
    };

    let (n_embeddings, wants_dataset) = needs(&task);
    let mut embeddings = Vec::new();
    let mut format = EmbeddingFormat::Word2VecBin;
    let mut dataset = None;
    let mut missing = MissingPolicy::Error;
    if let Some(input) = input {
        let name = task.name();
        match (n_embeddings, input.embeddings.len()) {
            (2, n) if n != 2 => problems.push(format!(
                "{name} requires exactly two --embedding arguments (before, after), got {n}"
            )),
            (1, n) if n != 1 => problems.push(format!("{name} requires exactly one --embedding argument, got {n}")),
            _ => {}
        }
        for e in &input.embeddings {
            if !e.is_file() {
                problems.push(format!("embedding file {} does not exist", e.display()));
            }
        }
        embeddings = input.embeddings;
        format = match input.format {
            FormatArg::Word2vecBin => EmbeddingFormat::Word2VecBin,
            FormatArg::GloveTxt => EmbeddingFormat::GloveTxt,
        };
        if wants_dataset {
            match (input.dataset, input.dataset_file) {
                (Some(_), Some(_)) => problems
                    .push("conflicting dataset sources: give either --dataset or --dataset-file, not both".into()),
                (None, None) => problems.push(format!("{name} requires a dataset (--dataset or --dataset-file)")),
                (Some(d), None) => {
                    if !BUILTIN_NAMES.contains(&d.as_str()) {
                        problems.push(format!(
                            "unknown dataset {d:?}; built-in datasets are {}",
                            BUILTIN_NAMES.join(", ")
                        ));
                    }
                    dataset = Some(DatasetSource::Builtin(d));
                }
                (None, Some(p)) => {
                    if !p.is_file() {
                        problems.push(format!("dataset file {} does not exist", p.display()));
                    }
                    dataset = Some(DatasetSource::File(p));
                }
            }
        }
        if input.skip_missing {
            missing = MissingPolicy::Skip;
        }
    }

    if let Err(e) = writable_location(&output.out) {
        problems.push(e);
    }
    let emit = Emit {
        json: true,
        csv: output.emit.contains(&EmitArg::Csv),
        svg: output.emit.contains(&EmitArg::Svg),
    };
    let seed = match &task {
        Task::Nullsim { null, .. } => null.seed,
        _ => output.seed.unwrap_or(0),
    };

    if !problems.is_empty() {
        return Err(ParseError::Invalid(problems));
    }
    Ok(RunConfig {
        task,
        embeddings,
        format,
        dataset,
        missing,
        seed,
        out: output.out,
        emit,
    })
}

/// Worker-thread cap from `EMBIAS_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var("EMBIAS_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("EMBIAS_THREADS must be a positive integer, got {v:?}")),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_files() -> (tempfile::TempDir, String, String) {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        std::fs::write(&a, b"").unwrap();
        std::fs::write(&b, b"").unwrap();
        (dir, a.display().to_string(), b.display().to_string())
    }

    fn parse(args: &[&str]) -> Result<RunConfig, ParseError> {
        parse_config(std::iter::once("embias").chain(args.iter().copied()))
    }

    #[test]
    fn weat_config() {
        let (_d, a, _) = with_files();
        let cfg = parse(&[
            "weat",
            "--embedding",
            &a,
            "--format",
            "word2vec-bin",
            "--dataset",
            "weat1",
        ])
        .unwrap();
        assert_eq!(cfg.task.name(), "weat");
        assert_eq!(cfg.dataset, Some(DatasetSource::Builtin("weat1".into())));
        assert_eq!(cfg.format, EmbeddingFormat::Word2VecBin);
        assert!(cfg.emit.csv && cfg.emit.svg && cfg.emit.json);
        assert_eq!(cfg.missing, MissingPolicy::Error);
    }

    #[test]
    fn compare_needs_two_embeddings() {
        let (_d, a, _) = with_files();
        let err = parse(&["compare", "--embedding", &a, "--dataset", "gender"]).unwrap_err();
        assert!(err.violations()[0].contains("exactly two"), "{err}");
        let err = parse(&["compare", "--dataset", "gender"]).unwrap_err();
        assert!(err.violations()[0].contains("got 0"));
    }

    #[test]
    fn every_violation_is_reported() {
        let (_d, a, _) = with_files();
        let err = parse(&[
            "fit",
            "--embedding",
            &a,
            "--embedding",
            "/nope.bin",
            "--dataset",
            "religion",
            "--dataset-file",
            "x.json",
            "--chains",
            "1",
            "--mass",
            "1.5",
        ])
        .unwrap_err();
        let v = err.violations().join("\n");
        for needle in [
            "exactly one --embedding",
            "/nope.bin",
            "conflicting dataset sources",
            "at least 2 chains",
            "--mass",
        ] {
            assert!(v.contains(needle), "missing {needle:?} in\n{v}");
        }
    }

    #[test]
    fn parser_errors() {
        assert!(matches!(parse(&["weat", "--bogus"]), Err(ParseError::Clap(_))));
        assert!(matches!(parse(&[]), Err(ParseError::Clap(_))));
        assert!(matches!(
            parse(&["weat", "--format", "fasttext"]),
            Err(ParseError::Clap(_))
        ));
    }

    #[test]
    fn nullsim_takes_no_inputs_and_defaults_its_seed() {
        let cfg = parse(&["nullsim", "--sims", "200"]).unwrap();
        let Task::Nullsim { null, .. } = &cfg.task else {
            panic!()
        };
        assert_eq!(null.n_sims, 200);
        assert_eq!(cfg.seed, 2022);
        assert!(parse(&["nullsim", "--sigma", "0"]).is_err());
        assert!(matches!(
            parse(&["nullsim", "--dataset", "religion"]),
            Err(ParseError::Clap(_))
        ));
    }

    #[test]
    fn emit_and_overrides() {
        let (_d, a, _) = with_files();
        let cfg = parse(&[
            "fit",
            "--embedding",
            &a,
            "--dataset",
            "gender",
            "--emit",
            "csv",
            "--chains",
            "3",
            "--seed",
            "7",
            "--noise",
            "shared",
            "--skip-missing",
        ])
        .unwrap();
        assert!(cfg.emit.json && cfg.emit.csv && !cfg.emit.svg);
        let Task::Fit { model, .. } = &cfg.task else { panic!() };
        assert_eq!(model.mcmc.chains, 3);
        assert_eq!(model.mcmc.seed, 7);
        assert_eq!(model.spec.noise, NoiseStructure::Shared);
        assert_eq!(cfg.missing, MissingPolicy::Skip);
    }

    #[test]
    fn unknown_builtin_and_bad_out() {
        let (d, a, _) = with_files();
        let err = parse(&["mac", "--embedding", &a, "--dataset", "caste", "--out", &a]).unwrap_err();
        let v = err.violations().join("\n");
        assert!(v.contains("unknown dataset") && v.contains("not a directory"), "{v}");
        let nested = d.path().join("x/y/z");
        assert!(parse(&[
            "mac",
            "--embedding",
            &a,
            "--dataset",
            "religion",
            "--out",
            nested.to_str().unwrap()
        ])
        .is_ok());
    }

    #[test]
    fn config_round_trips_through_json() {
        let (_d, a, b) = with_files();
        let cfg = parse(&["compare", "--embedding", &a, "--embedding", &b, "--dataset", "gender"]).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"subcommand\":\"compare\""));
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
