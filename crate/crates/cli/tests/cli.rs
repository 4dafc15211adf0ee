use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use embias_cli::output::sha256_file;
use embias_cli::{run, RunConfig};
use embias_core::bayes::{McmcConfig, ModelSpec, Posterior};
use embias_core::datasets::BUILTIN_NAMES;
use embias_core::stats::stream_rng;
use embias_core::{BiasDataset, Embedding, LongTable};
use rand::Rng;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_embias");

/// Random 20-dim embedding covering every builtin word list, minus `drop`.
fn write_embedding(dir: &Path, name: &str, seed: u64, drop: &[&str]) -> PathBuf {
    let mut words = BTreeSet::new();
    for n in BUILTIN_NAMES {
        let ds = BiasDataset::builtin(n).unwrap();
        words.extend(ds.protected().iter().map(|p| p.token.clone()));
        for s in ds.attribute_sets() {
            words.extend(s.tokens.iter().cloned());
        }
        words.extend(ds.neutral().iter().cloned());
        words.extend(ds.human().iter().cloned());
    }
    let words: Vec<String> = words.into_iter().filter(|w| !drop.contains(&w.as_str())).collect();
    let dim = 20;
    let mut rng = stream_rng(seed, 0);
    let matrix = (0..words.len() * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let emb = Embedding::from_rows(words, matrix, dim).unwrap();
    let path = dir.join(name);
    emb.write_word2vec_binary(fs::File::create(&path).unwrap()).unwrap();
    path
}

fn embias(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// The single run directory under `out`.
fn run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

fn file_names(dir: &Path) -> BTreeSet<String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

const QUICK: [&str; 6] = ["--chains", "2", "--warmup", "300", "--draws-per-chain", "400"];

#[test]
fn mac_writes_its_file_set_under_a_digest_named_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let emb = write_embedding(tmp.path(), "e.bin", 1, &[]);
    let out = tmp.path().join("out");
    let o = embias(
        &[
            "mac",
            "--embedding",
            emb.to_str().unwrap(),
            "--format",
            "word2vec-bin",
            "--dataset",
            "religion",
            "--out",
            out.to_str().unwrap(),
            "--emit",
            "json,csv,svg",
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = run_dir(&out);
    let (digest, _) = sha256_file(&emb).unwrap();
    assert_eq!(
        dir.file_name().unwrap().to_str().unwrap(),
        format!("mac-religion-{}", &digest[..8])
    );
    let expected: BTreeSet<String> = ["mac.json", "mac_pairs.csv", "mac_density.svg", "manifest.json"]
        .map(String::from)
        .into();
    assert_eq!(file_names(&dir), expected);

    let report = read_json(&dir.join("mac.json"));
    assert_eq!(report["kind"], "mac");
    let mac = report["result"]["mac"].as_f64().unwrap();
    assert!((mac - (1.0 - report["result"]["band"].as_f64().unwrap())).abs() < 1e-8);
    // 15 protected words x 3 attribute sets
    let pairs = fs::read_to_string(dir.join("mac_pairs.csv")).unwrap();
    assert_eq!(pairs.lines().count(), 1 + 45);
    assert!(pairs.starts_with("token,set_id,mean_distance\n"));

    let manifest = read_json(&dir.join("manifest.json"));
    assert_eq!(manifest["inputs"][0]["sha256"], digest.as_str());
    let listed: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["file"].as_str().unwrap())
        .collect();
    assert_eq!(listed, ["mac.json", "mac_pairs.csv", "mac_density.svg"]);
    for o in manifest["outputs"].as_array().unwrap() {
        let (sha, _) = sha256_file(&dir.join(o["file"].as_str().unwrap())).unwrap();
        assert_eq!(o["sha256"], sha.as_str());
    }
}

#[test]
fn emit_flags_limit_the_file_set() {
    let tmp = tempfile::tempdir().unwrap();
    let emb = write_embedding(tmp.path(), "e.bin", 1, &[]);
    let out = tmp.path().join("out");
    let o = embias(
        &[
            "mac",
            "--embedding",
            emb.to_str().unwrap(),
            "--dataset",
            "gender",
            "--out",
            out.to_str().unwrap(),
            "--emit",
            "json",
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let expected: BTreeSet<String> = ["mac.json", "manifest.json"].map(String::from).into();
    assert_eq!(file_names(&run_dir(&out)), expected);
}

#[test]
fn reruns_are_byte_identical_regardless_of_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let emb = write_embedding(tmp.path(), "e.bin", 2, &[]);
    let cases: [(&[&str], &[&str]); 2] = [
        (
            &["mac", "--dataset", "race", "--embedding", emb.to_str().unwrap()],
            &["mac.json", "mac_pairs.csv", "mac_density.svg"],
        ),
        (
            &["nullsim", "--sims", "300", "--p-value-sims", "50"],
            &["nullsim.json", "nullsim_samples.csv", "nullsim_effects.svg"],
        ),
    ];
    for (args, files) in cases {
        let mut dirs = Vec::new();
        for (i, threads) in ["1", "3"].iter().enumerate() {
            let out = tmp.path().join(format!("{}-{i}", args[0]));
            let mut full = args.to_vec();
            full.extend(["--out", out.to_str().unwrap()]);
            let o = embias(&full, &[("EMBIAS_THREADS", threads)]);
            assert!(o.status.success(), "{}", stderr(&o));
            dirs.push(run_dir(&out));
        }
        assert_eq!(dirs[0].file_name(), dirs[1].file_name());
        for f in files {
            assert_eq!(
                fs::read(dirs[0].join(f)).unwrap(),
                fs::read(dirs[1].join(f)).unwrap(),
                "{f} differs"
            );
        }
        let threads: Vec<u64> = dirs
            .iter()
            .map(|d| read_json(&d.join("manifest.json"))["threads"].as_u64().unwrap())
            .collect();
        assert_eq!(threads, [1, 3]);
    }
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = embias(
        &["nullsim", "--sims", "10", "--out", out.to_str().unwrap()],
        &[("EMBIAS_THREADS", "zero")],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("EMBIAS_THREADS"));
}

#[test]
fn fit_file_set_and_exit_status() {
    let tmp = tempfile::tempdir().unwrap();
    let emb = write_embedding(tmp.path(), "e.bin", 3, &[]);
    let out = tmp.path().join("out");
    let mut args = vec![
        "fit",
        "--embedding",
        emb.to_str().unwrap(),
        "--dataset",
        "gender",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend(QUICK);
    let o = embias(&args, &[]);
    let dir = run_dir(&out);
    let expected: BTreeSet<String> = [
        "posterior_draws.csv",
        "diagnostics.json",
        "interval_plot.svg",
        "manifest.json",
    ]
    .map(String::from)
    .into();
    assert_eq!(file_names(&dir), expected);
    let diag = read_json(&dir.join("diagnostics.json"));
    let converged = diag["result"]["convergence"]["converged"].as_bool().unwrap();
    assert_eq!(o.status.success(), converged, "{}", stderr(&o));
    assert_eq!(diag["result"]["parameters"].as_array().unwrap().len(), 4 * 14 + 12);

    let post = Posterior::read_csv(
        fs::File::open(dir.join("posterior_draws.csv")).unwrap(),
        ModelSpec::default(),
        McmcConfig::default(),
    )
    .unwrap();
    assert_eq!((post.n_chains(), post.n_draws()), (2, 400));

    // far too short to converge
    let out2 = tmp.path().join("short");
    let short = [
        "fit",
        "--embedding",
        emb.to_str().unwrap(),
        "--dataset",
        "gender",
        "--out",
        out2.to_str().unwrap(),
        "--chains",
        "2",
        "--warmup",
        "2",
        "--draws-per-chain",
        "8",
    ];
    let o = embias(&short, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("--allow-nonconverged"));
    let diag = read_json(&run_dir(&out2).join("diagnostics.json"));
    assert_eq!(diag["result"]["convergence"]["converged"], false);
    let mut allowed = short.to_vec();
    allowed.push("--allow-nonconverged");
    assert_eq!(embias(&allowed, &[]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_2_and_list_every_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let emb = write_embedding(tmp.path(), "e.bin", 1, &[]);
    let e = emb.to_str().unwrap();
    let o = embias(&["compare", "--embedding", e, "--dataset", "gender"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("exactly two --embedding"));

    let o = embias(
        &[
            "weat",
            "--embedding",
            e,
            "--dataset",
            "religion",
            "--dataset-file",
            "x.json",
            "--permutations",
            "sampled",
            "--samples",
            "5",
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("conflicting dataset sources") && err.contains("--samples"),
        "{err}"
    );

    let o = embias(&["weat", "--embedding", e, "--dataset", "weat1", "--colour"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--colour"));
    assert_eq!(embias(&["--help"], &[]).status.code(), Some(0));
}

#[test]
fn runtime_errors_name_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("broken.json");
    fs::write(&bad, "{ not json").unwrap();
    let emb = write_embedding(tmp.path(), "e.bin", 1, &[]);
    let o = embias(
        &[
            "mac",
            "--embedding",
            emb.to_str().unwrap(),
            "--dataset-file",
            bad.to_str().unwrap(),
            "--out",
            tmp.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("broken.json"), "{}", stderr(&o));

    let glove = tmp.path().join("e.txt");
    fs::write(&glove, "he 1 0\nshe 0 1\n").unwrap();
    let o = embias(
        &[
            "mac",
            "--embedding",
            glove.to_str().unwrap(),
            "--dataset",
            "gender",
            "--out",
            tmp.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("e.txt"), "{}", stderr(&o));
}

#[test]
fn missing_tokens_fail_unless_skipped_and_are_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let emb = write_embedding(tmp.path(), "e.bin", 4, &["muslim", "greedy"]);
    let out = tmp.path().join("out");
    let base = [
        "dump-table",
        "--embedding",
        emb.to_str().unwrap(),
        "--dataset",
        "religion",
        "--out",
        out.to_str().unwrap(),
    ];
    let o = embias(&base, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not in the embedding vocabulary"), "{}", stderr(&o));

    let mut skip = base.to_vec();
    skip.push("--skip-missing");
    let o = embias(&skip, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = run_dir(&out);
    let manifest = read_json(&dir.join("manifest.json"));
    let skipped: Vec<&str> = manifest["skipped_tokens"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(
        skipped.contains(&"muslim") && skipped.contains(&"greedy"),
        "{skipped:?}"
    );
    let table = LongTable::read_csv(fs::File::open(dir.join("table.csv")).unwrap()).unwrap();
    assert!(table
        .rows()
        .iter()
        .all(|r| r.protected != "muslim" && r.attribute != "greedy"));
    assert_eq!(read_json(&dir.join("dump_table.json"))["result"]["n_rows"], table.len());
}

#[test]
fn manifest_config_reproduces_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let emb = write_embedding(tmp.path(), "e.bin", 5, &[]);
    let out = tmp.path().join("out");
    let o = embias(
        &[
            "weat",
            "--embedding",
            emb.to_str().unwrap(),
            "--dataset",
            "weat7",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = run_dir(&out);
    let manifest = read_json(&dir.join("manifest.json"));
    let mut cfg: RunConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    cfg.out = tmp.path().join("again");
    let outcome = run(&cfg, &[]).unwrap();
    assert_eq!(outcome.exit_code, 0);
    for f in ["weat.json", "weat_scores.csv", "weat_permutations.svg"] {
        assert_eq!(
            fs::read(dir.join(f)).unwrap(),
            fs::read(outcome.dir.join(f)).unwrap(),
            "{f}"
        );
    }
    let report = read_json(&dir.join("weat.json"));
    assert_eq!(report["result"]["p_mode"], "exact");
    assert_eq!(report["result"]["n_partitions_evaluated"], 12870);
}

#[test]
fn weat_falls_back_to_sampling_for_large_groups() {
    let tmp = tempfile::tempdir().unwrap();
    let emb = write_embedding(tmp.path(), "e.bin", 6, &[]);
    let out = tmp.path().join("out");
    let o = embias(
        &[
            "weat",
            "--embedding",
            emb.to_str().unwrap(),
            "--dataset",
            "weat1",
            "--samples",
            "2000",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&run_dir(&out).join("weat.json"));
    assert_eq!(report["result"]["p_mode"], "sampled");
    assert_eq!(report["result"]["n_partitions_evaluated"], 2000);

    let out = tmp.path().join("exact");
    let o = embias(
        &[
            "weat",
            "--embedding",
            emb.to_str().unwrap(),
            "--dataset",
            "weat1",
            "--permutations",
            "exact",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sampled mode"), "{}", stderr(&o));
}

#[test]
fn ppc_can_reuse_fit_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let emb = write_embedding(tmp.path(), "e.bin", 7, &[]);
    let e = emb.to_str().unwrap();
    let fit_out = tmp.path().join("fit");
    let mut args = vec![
        "fit",
        "--embedding",
        e,
        "--dataset",
        "race",
        "--out",
        fit_out.to_str().unwrap(),
        "--allow-nonconverged",
    ];
    args.extend(QUICK);
    assert!(embias(&args, &[]).status.success());
    let draws = run_dir(&fit_out).join("posterior_draws.csv");
    let ppc_out = tmp.path().join("ppc");
    let o = embias(
        &[
            "ppc",
            "--embedding",
            e,
            "--dataset",
            "race",
            "--draws",
            draws.to_str().unwrap(),
            "--out",
            ppc_out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = run_dir(&ppc_out);
    let report = read_json(&dir.join("ppc.json"));
    assert_eq!(report["result"]["convergence"], Value::Null);
    let c89 = report["result"]["coverage89"].as_f64().unwrap();
    assert!((0.8..=0.97).contains(&c89), "{c89}");
    let rows = fs::read_to_string(dir.join("ppc_rows.csv")).unwrap();
    assert_eq!(
        rows.lines().count() - 1,
        report["result"]["n_rows"].as_u64().unwrap() as usize
    );

    // a posterior for a different word list is refused
    let o = embias(
        &[
            "ppc",
            "--embedding",
            e,
            "--dataset",
            "gender",
            "--draws",
            draws.to_str().unwrap(),
            "--out",
            ppc_out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn every_report_validates_against_the_published_schema() {
    let schema: Value = serde_json::from_str(
        &fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../report.schema.json")).unwrap(),
    )
    .unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();

    let tmp = tempfile::tempdir().unwrap();
    let a = write_embedding(tmp.path(), "a.bin", 8, &[]);
    let b = write_embedding(tmp.path(), "b.bin", 9, &[]);
    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();
    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());
    let mut runs: Vec<Vec<&str>> = vec![
        vec!["weat", "--embedding", a, "--dataset", "weat7"],
        vec!["mac", "--embedding", a, "--dataset", "religion"],
        vec!["nullsim", "--sims", "200", "--p-value-sims", "20"],
        vec![
            "nullsim",
            "--sims",
            "200",
            "--p-value-sims",
            "0",
            "--sidedness",
            "one",
            "--seed",
            "3",
        ],
        vec!["dump-table", "--embedding", a, "--dataset", "race"],
        vec!["directbias", "--embedding", a, "--dataset", "gender", "--c", "0.5"],
    ];
    for cmd in ["fit", "ppc"] {
        let mut v = vec![cmd, "--embedding", a, "--dataset", "gender", "--allow-nonconverged"];
        if cmd == "ppc" {
            v.pop();
        }
        v.extend(QUICK);
        runs.push(v);
    }
    let mut cmp = vec![
        "compare",
        "--embedding",
        a,
        "--embedding",
        b,
        "--dataset",
        "religion",
        "--noise",
        "shared",
    ];
    cmp.extend(QUICK);
    runs.push(cmp);

    for args in &runs {
        let mut full = args.clone();
        full.extend(["--out", o]);
        let r = embias(&full, &[]);
        assert!(r.status.code() == Some(0), "{args:?}: {}", stderr(&r));
    }
    let mut kinds = BTreeSet::new();
    let mut checked = 0;
    for dir in fs::read_dir(&out).unwrap() {
        for f in fs::read_dir(dir.unwrap().path()).unwrap() {
            let path = f.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                let doc = read_json(&path);
                let errors: Vec<String> = validator
                    .iter_errors(&doc)
                    .map(|e| format!("{} at {}", e, e.instance_path))
                    .collect();
                assert!(errors.is_empty(), "{}: {errors:?}", path.display());
                kinds.insert(doc["kind"].as_str().unwrap().to_string());
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 2 * runs.len());
    assert_eq!(kinds.len(), 9, "{kinds:?}");

    // the schema is not vacuous
    let mut doc = read_json(&run_dir_named(&out, "mac-").join("mac.json"));
    doc["result"]["mac"] = Value::String("0.9".into());
    assert!(!validator.is_valid(&doc));
    doc["result"]["mac"] = serde_json::json!(0.9);
    doc["result"]["extra"] = serde_json::json!(1);
    assert!(!validator.is_valid(&doc));
}

fn run_dir_named(out: &Path, prefix: &str) -> PathBuf {
    fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with(prefix))
        .unwrap()
}
