use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn vmtlab(args: &[&str]) -> Output {
    vmtlab_env(args, &[])
}

fn vmtlab_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vmtlab"));
    cmd.args(args).env_remove("VMTLAB_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> &Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("valid JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_exit_codes() {
    assert_eq!(vmtlab(&["--help"]).status.code(), Some(0));
    assert_eq!(vmtlab(&["eval", "--help"]).status.code(), Some(0));
    assert_eq!(vmtlab(&["eval", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(vmtlab(&["frobnicate"]).status.code(), Some(2));

    let out = vmtlab(&["eval", "--input", "/definitely/not/here.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let err = json(&out.stderr);
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("not/here"));
}

#[test]
fn build_two_chunk_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let out = vmtlab(&["build", "--input", s(&fixture("two_chunks.srt")), "-o", s(&corpus)]);
    let counts = json(&ok(&out).stdout);
    assert_eq!(counts["chunks"], 2);
    assert_eq!(counts["records"], 1);

    let text = fs::read_to_string(&corpus).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| json(l.as_bytes())).collect();
    assert_eq!(lines.len(), 1);
    let r = &lines[0];
    assert_eq!(r["id"], "two_chunks#000000");
    assert_eq!(r["src"], "Hello world.");
    assert_eq!(r["tgt"], "你好世界。");
    assert_eq!(r["clip_start_ms"], 0);
    assert_eq!(r["clip_end_ms"], 4000);
    assert_eq!(r["split"], "train");
}

#[test]
fn build_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    ok(&vmtlab(&["build", "--input", s(&fixture("two_chunks.srt")), "-o", s(&a)]));
    ok(&vmtlab(&["build", "--input", s(&fixture("two_chunks.srt")), "-o", s(&b)]));
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn filter_applies_threshold_rule() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    ok(&vmtlab(&["build", "--input", s(&fixture("two_chunks.srt")), "-o", s(&corpus)]));
    let kept = dir.path().join("kept.jsonl");
    let scores = fixture("scores.tsv");
    let run = |specs: [&str; 3]| {
        let mut args = vec!["filter", "--corpus", s(&corpus), "--scores", s(&scores), "-o", s(&kept)];
        for spec in &specs {
            args.extend(["--scorer", spec]);
        }
        json(&ok(&vmtlab(&args)).stdout)
    };
    // Scores are (0.05, 5, 25): one failure against (0.1, 4, 20) keeps the pair.
    let report = run(["comet:0.1:higher", "embedding_distance:4:higher", "round_trip_bleu:20:higher"]);
    assert_eq!(report["kept"], 1);
    // Raising the second threshold makes it fail twice.
    let report = run(["comet:0.1:higher", "embedding_distance:6:higher", "round_trip_bleu:20:higher"]);
    assert_eq!(report["kept"], 0);
    assert_eq!(report["dropped"][0]["failing"], serde_json::json!(["comet", "embedding_distance"]));
}

#[test]
fn eval_identity_is_perfect() {
    let out = vmtlab(&[
        "eval",
        "--input",
        s(&fixture("pairs.jsonl")),
        "--annotations",
        s(&fixture("annotations.jsonl")),
        "--per-record",
    ]);
    let report = json(&ok(&out).stdout);
    assert_eq!(report["bleu"]["bleu"].as_f64().unwrap(), 100.0);
    assert_eq!(report["terms"]["one_minus_term"].as_f64().unwrap(), 1.0);
    assert_eq!(report["terms"]["exact_match"].as_f64().unwrap(), 1.0);
    assert_eq!(report["per_record"].as_array().unwrap().len(), 2);
}

#[test]
fn stats_reports_ngrams() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    ok(&vmtlab(&["build", "--input", s(&fixture("two_chunks.srt")), "-o", s(&corpus)]));
    let report = json(&ok(&vmtlab(&["stats", "--corpus", s(&corpus)])).stdout);
    assert_eq!(report["records"], 1);
    assert_eq!(report["src_ngrams"]["orders"][0]["unique"], 2);
    let tsv = ok(&vmtlab(&["stats", "--corpus", s(&corpus), "--tsv"])).stdout.clone();
    assert!(String::from_utf8(tsv).unwrap().starts_with("metric\tvalue\n"));
}

#[test]
fn config_file_is_validated_and_applied() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[synth]\nsizes = 3\n").unwrap();
    let out = vmtlab(&["--config", s(&bad), "synth", "--output-dir", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out.stderr)["error"], "config");

    let good = dir.path().join("good.toml");
    fs::write(&good, "seed = 3\n[paths]\noutput_dir = \"toy\"\n[synth]\nsize = 10\ntest_size = 2\n").unwrap();
    let summary = json(&ok(&vmtlab(&["--config", s(&good), "synth"])).stdout);
    assert_eq!(summary["splits"]["train"], 10);
    assert!(dir.path().join("toy/corpus.jsonl").exists());

    // Flags win over the file.
    let summary = json(&ok(&vmtlab(&["--config", s(&good), "synth", "--size", "6"])).stdout);
    assert_eq!(summary["splits"]["train"], 6);
}

fn synth_bytes(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Vec<u8> {
    let mut all = vec!["synth", "--output-dir", s(dir), "--size", "12", "--test-size", "2"];
    all.extend_from_slice(args);
    ok(&vmtlab_env(&all, env));
    fs::read(dir.join("corpus.jsonl")).unwrap()
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let a = synth_bytes(&p("a"), &["--seed", "5"], &[]);
    let b = synth_bytes(&p("b"), &["--seed", "5"], &[]);
    assert_eq!(a, b);
    let env = synth_bytes(&p("c"), &[], &[("VMTLAB_SEED", "5")]);
    assert_eq!(a, env);
    let other = synth_bytes(&p("d"), &[], &[("VMTLAB_SEED", "6")]);
    assert_ne!(a, other);
    let flag_wins = synth_bytes(&p("e"), &["--seed", "5"], &[("VMTLAB_SEED", "6")]);
    assert_eq!(a, flag_wins);

    let out = vmtlab_env(&["synth", "--output-dir", s(&p("f"))], &[("VMTLAB_SEED", "abc")]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out.stderr)["error"], "config");
}

struct Toy {
    dir: tempfile::TempDir,
}

impl Toy {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        ok(&vmtlab(&["synth", "--output-dir", s(&dir.path().join("toy")), "--size", "24", "--test-size", "8"]));
        Toy { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn train(&self, out: &str, steps: &str) -> PathBuf {
        let out_dir = self.path(out);
        ok(&vmtlab(&[
            "train",
            "--corpus",
            s(&self.path("toy/corpus.jsonl")),
            "--features",
            s(&self.path("toy/manifest.jsonl")),
            "--output-dir",
            s(&out_dir),
            "--steps",
            steps,
            "--seed",
            "2",
        ]));
        out_dir
    }
}

#[test]
fn training_is_reproducible() {
    let toy = Toy::new();
    let a = toy.train("a", "4");
    let b = toy.train("b", "4");
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    let log_a = fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    assert_eq!(log_a, fs::read_to_string(b.join("train_log.jsonl")).unwrap());
    let lines: Vec<Value> = log_a.lines().map(|l| json(l.as_bytes())).collect();
    assert_eq!(lines.len(), 4);
    for key in ["step", "ce", "ctr", "total", "lr"] {
        assert!(lines[0].get(key).is_some(), "log line lacks `{key}`");
    }
}

#[test]
fn translate_then_eval() {
    let toy = Toy::new();
    let run = toy.train("run", "3");
    let hyps = toy.path("hyps.jsonl");
    ok(&vmtlab(&[
        "translate",
        "--checkpoint",
        s(&run.join("model.ckpt")),
        "--corpus",
        s(&toy.path("toy/corpus.jsonl")),
        "--features",
        s(&toy.path("toy/manifest.jsonl")),
        "--split",
        "test-ambiguous",
        "--beam",
        "2",
        "-o",
        s(&hyps),
    ]));
    let text = fs::read_to_string(&hyps).unwrap();
    assert_eq!(text.lines().count(), 8);
    let report = json(&ok(&vmtlab(&["eval", "--input", s(&hyps), "--annotations", s(&toy.path("toy/annotations.jsonl"))])).stdout);
    assert_eq!(report["terms"]["counts"]["pairs"], 8);
}

#[test]
fn probe_untrained_model_is_insensitive_to_video() {
    let toy = Toy::new();
    let run = toy.train("untrained", "0");
    let probe = |seed: &str| {
        json(
            &ok(&vmtlab(&[
                "probe",
                "--checkpoint",
                s(&run.join("model.ckpt")),
                "--corpus",
                s(&toy.path("toy/corpus.jsonl")),
                "--features",
                s(&toy.path("toy/manifest.jsonl")),
                "--annotations",
                s(&toy.path("toy/annotations.jsonl")),
                "--seed",
                seed,
            ]))
            .stdout,
        )
    };
    let report = probe("1");
    let delta = report["delta"]["bleu"].as_f64().unwrap();
    assert!(delta.abs() <= 2.0, "BLEU moved by {delta} on an untrained model");
    let assignment: Vec<u64> = report["assignment"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert!(assignment.iter().enumerate().all(|(i, &j)| i as u64 != j));
    assert_eq!(report, probe("1"));
}

#[test]
fn translate_rejects_garbage_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.ckpt");
    fs::write(&ckpt, b"not a checkpoint").unwrap();
    let out = vmtlab(&["translate", "--checkpoint", s(&ckpt), "--corpus", "c", "--features", "f"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out.stderr)["error"], "checkpoint");
}
