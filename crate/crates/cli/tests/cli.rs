use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use hydec_core::bench::{SweepKind, SweepResult};
use hydec_core::generators::SamplingParams;
use hydec_core::jsonl::{read_jsonl, Manifest};
use hydec_core::synth::{ChunkPair, ResponsePair};
use hydec_core::BOS;
use serde_json::Value;

struct Fixture {
    _root: tempfile::TempDir,
    config: PathBuf,
    work: PathBuf,
}

fn corpus(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/corpus")
        .join(name)
        .canonicalize()
        .unwrap()
        .display()
        .to_string()
}

fn write_config(dir: &Path) -> PathBuf {
    let work = dir.join("work");
    let text = format!(
        "work_dir = {:?}\nlog_level = \"warn\"\n\n[paths]\ncorpus = [{:?}, {:?}]\n\n[synth]\nn_prompts = 100\n\n[train]\nepochs = 2\n",
        work.display().to_string(),
        corpus("stories.txt"),
        corpus("notes.txt"),
    );
    let p = dir.join("hydec.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn hydec(config: Option<&Path>, args: &[&str]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hydec"));
    if let Some(p) = config {
        c.arg("--config").arg(p);
    }
    c.args(args).env_remove("HYDEC_SEED").output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = tempfile::tempdir().unwrap();
        let config = write_config(root.path());
        for stage in ["build-models", "synth-prompts", "gen-pairs", "chunk", "train-reward"] {
            ok(hydec(Some(&config), &[stage]));
        }
        Fixture {
            work: root.path().join("work"),
            _root: root,
            config,
        }
    })
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    assert_eq!(hydec(None, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(hydec(None, &["decode"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[hybrid]\nthreshhold = 1\n").unwrap();
    let out = hydec(Some(&bad), &["build-models"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert_eq!(hydec(Some(&dir.path().join("missing.toml")), &["build-models"]).status.code(), Some(1));
    assert!(hydec(None, &["--help"]).status.success());
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = hydec(Some(&cfg), &["decode", "--prompt", "the"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_artifacts_and_counts() {
    let f = fixture();
    let pairs = Manifest::read_for(&f.work.join("pairs.jsonl")).unwrap();
    let chunks = Manifest::read_for(&f.work.join("chunks.jsonl")).unwrap();
    let prompts = Manifest::read_for(&f.work.join("prompts.jsonl")).unwrap();
    assert_eq!(prompts.records, 100);
    // prompts whose generation came back empty are dropped before chunking
    assert!(pairs.records >= 95 && pairs.records <= 100);
    assert_eq!(chunks.records, pairs.records * 3);
    assert_eq!(pairs.vocab_hash, chunks.vocab_hash);
    for name in ["vocab.bin", "slm.ngram", "llm.ngram", "reward.rm", "train_report.jsonl", "length_bias.json"] {
        assert!(f.work.join(name).is_file(), "{name} missing");
    }
    let report: Vec<Value> = read_jsonl(&f.work.join("train_report.jsonl")).unwrap();
    assert_eq!(report.len(), 2);
    let probe: Value = serde_json::from_str(&std::fs::read_to_string(f.work.join("length_bias.json")).unwrap()).unwrap();
    assert_eq!(probe["lengths"], serde_json::json!([1, 2, 4, 8]));
}

#[test]
fn chunking_one_hundred_pairs_gives_three_hundred_records() {
    let f = fixture();
    let cfg = hydec::config::AppConfig::load(Some(&f.config), &Default::default()).unwrap();
    let s = hydec::pipeline::Surrogates::load(&cfg).unwrap();
    let p = SamplingParams::greedy();
    let pairs: Vec<ResponsePair> = (0..100)
        .map(|i| ResponsePair {
            pair_id: format!("x{i:03}"),
            prompt_ids: vec![BOS].into(),
            chosen_ids: s.vocab.tokenize("the quiet harbour").into(),
            rejected_ids: s.vocab.tokenize(&"ab ".repeat(1 + i % 7)).into(),
            slm_params: p,
            llm_params: p,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("p.jsonl");
    let output = dir.path().join("c.jsonl");
    hydec::pipeline::write_dataset(&input, &pairs, "pairs", s.vocab.hash(), 0).unwrap();
    ok(hydec(
        Some(&f.config),
        &[
            "chunk",
            "--pairs",
            input.to_str().unwrap(),
            "--out",
            output.to_str().unwrap(),
            "--chunks-per-pair",
            "3",
        ],
    ));
    let chunks: Vec<ChunkPair> = read_jsonl(&output).unwrap();
    assert_eq!(chunks.len(), 300);
    assert_eq!(Manifest::read_for(&output).unwrap().records, 300);
}

#[test]
fn decode_limits_match_single_backends() {
    let f = fixture();
    let c = Some(f.config.as_path());
    let prompt = "the old man";
    let hybrid_lo = ok(hydec(c, &["decode", "--prompt", prompt, "--threshold", "-inf", "--format", "tokens"]));
    let slm = ok(hydec(c, &["decode", "--prompt", prompt, "--backend", "slm", "--format", "tokens"]));
    assert_eq!(hybrid_lo, slm);
    let hybrid_hi = ok(hydec(c, &["decode", "--prompt", prompt, "--threshold", "inf", "--format", "tokens"]));
    let llm = ok(hydec(c, &["decode", "--prompt", prompt, "--backend", "llm", "--format", "tokens"]));
    assert_eq!(hybrid_hi, llm);
    assert!(!slm.trim().is_empty());
}

#[test]
fn decode_steps_and_trace_file() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let out = ok(hydec(
        Some(&f.config),
        &[
            "decode",
            "--prompt",
            "she said",
            "--threshold",
            "-inf",
            "--max-tokens",
            "5",
            "--trace-out",
            trace.to_str().unwrap(),
        ],
    ));
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines.last().unwrap().starts_with("# threshold=-inf slm_steps="));
    assert!(lines.len() <= 6);
    assert!(lines[0].starts_with("0\tslm\t"));
    let steps = std::fs::read_to_string(&trace).unwrap();
    assert!(!steps.trim().is_empty());
    for l in steps.lines() {
        serde_json::from_str::<Value>(l).unwrap();
    }
}

#[test]
fn sweep_and_report() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("s.jsonl");
    let report = dir.path().join("report");
    let text = ok(hydec(
        Some(&f.config),
        &[
            "sweep",
            "--thresholds",
            "q:0.1,0.5,0.9",
            "--n-prompts",
            "20",
            "--out",
            results.to_str().unwrap(),
        ],
    ));
    assert!(text.contains("slm-only") && text.contains("llm-only"));
    let rows: Vec<SweepResult> = read_jsonl(&results).unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows.iter().filter(|r| r.kind == SweepKind::Hybrid).count(), 3);
    assert!(rows.iter().all(|r| r.n_prompts == 20));
    let args = ["report", "--results", results.to_str().unwrap(), "--out", report.to_str().unwrap()];
    let printed = ok(hydec(Some(&f.config), &args));
    for name in ["report.txt", "activation.svg", "quality.svg", "throughput.svg"] {
        assert!(report.join(name).is_file());
    }
    assert_eq!(printed, std::fs::read_to_string(report.join("report.txt")).unwrap());
    let raw = ok(hydec(
        Some(&f.config),
        &["sweep", "--thresholds", "-inf,inf", "--n-prompts", "5", "--out", results.to_str().unwrap()],
    ));
    assert!(raw.contains("-inf"));
}

#[test]
fn seed_flag_and_env_change_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    ok(hydec(Some(&cfg), &["build-models"]));
    let read = || std::fs::read(dir.path().join("work/prompts.jsonl")).unwrap();
    ok(hydec(Some(&cfg), &["synth-prompts", "--n", "20"]));
    let base = read();
    ok(hydec(Some(&cfg), &["synth-prompts", "--n", "20"]));
    assert_eq!(read(), base);
    ok(hydec(Some(&cfg), &["--seed", "5", "synth-prompts", "--n", "20"]));
    let flagged = read();
    assert_ne!(flagged, base);
    let out = Command::new(env!("CARGO_BIN_EXE_hydec"))
        .arg("--config")
        .arg(&cfg)
        .args(["synth-prompts", "--n", "20"])
        .env("HYDEC_SEED", "5")
        .output()
        .unwrap();
    ok(out);
    assert_eq!(read(), flagged);
}
