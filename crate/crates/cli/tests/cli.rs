use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use genex_core::model::{ModelConfig, Variant};
use genex_core::tokenizer::Vocab;
use genex_core::training::{checkpoint_bytes, load_checkpoint, TrainConfig, TrainState};

fn genex(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genex"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = genex(dir, args);
    assert!(
        out.status.success(),
        "genex {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TOY_CFG: &str = "variant = genex\nd_model = 16\nhead_dim = 8\nffn_dim = 32\nmax_input_len = 64\nlr = 0.001\nbatch_tokens = 256\n";

/// Synthetic data, a vocabulary and a small config in a fresh directory.
fn workspace() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    ok(&dir, &["synth", "--n", "40", "--out", "d.jsonl"]);
    ok(&dir, &["build-vocab", "--input", "d.jsonl", "--size", "300", "--out", "v.txt"]);
    fs::write(dir.join("toy.cfg"), TOY_CFG).unwrap();
    (tmp, dir)
}

#[test]
fn unknown_flag_and_subcommand_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["synth", "--bogus"], &["evaluate"], &["--threads", "0", "selftest"]] {
        let out = genex(tmp.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(genex(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_or_malformed_input_is_a_data_error() {
    let (_t, dir) = workspace();
    let out = genex(&dir, &["evaluate", "--pred", "absent.jsonl", "--gold", "d.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(dir.join("bad.jsonl"), "{not json\n").unwrap();
    let out = genex(&dir, &["evaluate", "--pred", "bad.jsonl", "--gold", "d.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(dir.join("bad.cfg"), "d_model = 16\nwidth = 3\n").unwrap();
    let out = genex(&dir, &["train", "--data", "d.jsonl", "--vocab", "v.txt", "--config", "bad.cfg", "--out", "c"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));
}

#[test]
fn evaluate_on_identical_files_gives_one() {
    let (_t, dir) = workspace();
    let stdout = ok(
        &dir,
        &["evaluate", "--pred", "d.jsonl", "--gold", "d.jsonl", "--metrics", "bleu1,rouge1", "--out", "r.json"],
    );
    assert!(stdout.contains("bleu1\tcorpus 1.000000"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("r.json")).unwrap()).unwrap();
    for m in ["bleu1", "rouge1"] {
        assert_eq!(report["metrics"][m]["corpus"], 1.0);
    }
}

#[test]
fn zero_epochs_writes_the_initialisation() {
    let (_t, dir) = workspace();
    ok(
        &dir,
        &["--seed", "7", "train", "--data", "d.jsonl", "--vocab", "v.txt", "--config", "toy.cfg", "--epochs", "0", "--out", "c.ckpt"],
    );
    let vocab = Vocab::load(&dir.join("v.txt")).unwrap();
    let mut model = ModelConfig::desk(Variant::Genex);
    model.d_model = 16;
    model.head_dim = 8;
    model.ffn_dim = 32;
    model.max_input_len = 64;
    model.vocab_size = vocab.len();
    let mut train = TrainConfig {
        batch_tokens: 256,
        epochs: 0,
        ..TrainConfig::default()
    };
    train.adam.lr = 0.001;
    let fresh = TrainState::new(model, train, 7).unwrap();
    assert_eq!(fs::read(dir.join("c.ckpt")).unwrap(), checkpoint_bytes(&fresh));
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let (_t, dir) = workspace();
    let base = ["train", "--data", "d.jsonl", "--vocab", "v.txt", "--config", "toy.cfg"];
    ok(&dir, &[&base[..], &["--epochs", "3", "--out", "full.ckpt"]].concat());
    ok(&dir, &[&base[..], &["--epochs", "1", "--out", "part.ckpt"]].concat());
    ok(&dir, &[&base[..], &["--epochs", "3", "--resume", "part.ckpt", "--out", "part.ckpt"]].concat());
    assert_eq!(fs::read(dir.join("full.ckpt")).unwrap(), fs::read(dir.join("part.ckpt")).unwrap());
    assert_eq!(load_checkpoint(&dir.join("full.ckpt")).unwrap().epoch, 3);
}

#[test]
fn decode_then_evaluate() {
    let (_t, dir) = workspace();
    let train = ["train", "--data", "d.jsonl", "--vocab", "v.txt", "--config", "toy.cfg", "--epochs", "1", "--out", "c.ckpt"];
    ok(&dir, &train);
    ok(&dir, &["decode", "--checkpoint", "c.ckpt", "--vocab", "v.txt", "--input", "d.jsonl", "--out", "p.jsonl", "--max-len", "4"]);
    let preds = fs::read_to_string(dir.join("p.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 40);
    ok(&dir, &["evaluate", "--pred", "p.jsonl", "--gold", "d.jsonl", "--compare", "d.jsonl", "--out", "r.json", "--tsv", "r.tsv"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("r.json")).unwrap()).unwrap();
    assert!(report["comparison"]["ttest"]["rougeL"]["p"].is_number());
    assert_eq!(fs::read_to_string(dir.join("r.tsv")).unwrap().lines().count(), 42);
    let out = genex(&dir, &["decode", "--checkpoint", "c.ckpt", "--vocab", "v.txt", "--input", "d.jsonl", "--out", "p.jsonl", "--max-len", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn baselines_write_one_prediction_per_record() {
    let (_t, dir) = workspace();
    for method in ["textrank", "ts-textrank", "lime", "sensitivity"] {
        ok(&dir, &["baseline", method, "--input", "d.jsonl", "--out", "b.jsonl", "--scores", "s.jsonl", "--samples", "40"]);
        let preds = fs::read_to_string(dir.join("b.jsonl")).unwrap();
        assert_eq!(preds.lines().count(), 40, "{method}");
        let first: serde_json::Value = serde_json::from_str(preds.lines().next().unwrap()).unwrap();
        let words = first["prediction"].as_str().unwrap().split_whitespace().count();
        assert!((1..=3).contains(&words), "{method}: {first}");
    }
}

#[test]
fn data_builders_run_on_the_fixtures() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/golden");
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let g = |f: &str| golden.join(f).to_str().unwrap().to_string();
    ok(dir, &["build-wiki", "--input", &g("wiki_input.jsonl"), "--out", "w.jsonl", "--stats", "ws.json"]);
    assert_eq!(fs::read_to_string(dir.join("w.jsonl")).unwrap(), fs::read_to_string(g("wiki_expected.jsonl")).unwrap());
    ok(dir, &["build-anchors", "--anchors", &g("anchors_input.jsonl"), "--pages", &g("pages.jsonl"), "--out", "a.jsonl"]);
    assert_eq!(fs::read_to_string(dir.join("a.jsonl")).unwrap(), fs::read_to_string(g("anchors_expected.jsonl")).unwrap());
    ok(dir, &["summarize", "--input", "w.jsonl", "--cap", "25", "--out", "s.jsonl"]);
    for line in fs::read_to_string(dir.join("s.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["document"].as_str().unwrap().split_whitespace().count() <= 25);
    }
}

#[test]
fn gradcheck_reports_and_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["gradcheck", "--seed", "1"]);
    assert!(stdout.contains("max relative error"));
    fs::write(tmp.path().join("toy.cfg"), "variant = orig\nd_model = 8\nhead_dim = 4\nffn_dim = 8\nvocab_size = 12\n").unwrap();
    let stdout = ok(tmp.path(), &["gradcheck", "--config", "toy.cfg", "--per-tensor", "3"]);
    assert!(stdout.starts_with("orig\t"));
}
