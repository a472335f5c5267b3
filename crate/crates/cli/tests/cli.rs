//! Drives the `prlab` binary through a tiny train → eval → generate → attn run.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "model_dim = 16
ff_dim = 32
heads = 2
enc_layers = 1
dec_layers = 1
steps = 3
checkpoint_every = 2
batch_size = 2
speakers = 4
utterances_per_speaker = 3
";

fn prlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prlab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = prlab(args);
    assert!(
        out.status.success(),
        "prlab {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_eval_generate_attn() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&run)]);
    for f in ["config.txt", "manifest.jsonl", "metrics.jsonl", "step2.ckpt", "final.ckpt"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    assert_eq!(fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count(), 3);

    // resuming from step 2 appends the one remaining step
    ok(&["train", "--config", s(&cfg), "--out", s(&run), "--resume", s(&run.join("step2.ckpt"))]);
    assert_eq!(fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count(), 4);

    let ckpt = run.join("final.ckpt");
    let report = dir.path().join("short.jsonl");
    let stdout = ok(&["eval", "--ckpt", s(&ckpt), "--set", "short", "--report", s(&report), "--count", "2"]);
    assert!(stdout.contains("TER="));
    assert_eq!(fs::read_to_string(&report).unwrap().lines().count(), 3);

    let manifest = fs::read_to_string(run.join("manifest.jsonl")).unwrap();
    let ids: Vec<u64> = manifest
        .lines()
        .take(2)
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["utterance_id"].as_u64().unwrap())
        .collect();
    let gen = dir.path().join("gen.json");
    ok(&[
        "generate",
        "--ckpt",
        s(&ckpt),
        "--prompt-id",
        &ids[0].to_string(),
        "--text-id",
        &ids[1].to_string(),
        "--duration-frames",
        "12",
        "--seed",
        "3",
        "--out",
        s(&gen),
    ]);
    let rec: serde_json::Value = serde_json::from_str(&fs::read_to_string(&gen).unwrap()).unwrap();
    assert_eq!(rec["generated_frames"], 12);
    assert_eq!(rec["tokens"][0].as_array().unwrap().len(), 12);

    let map = dir.path().join("map.pgm");
    ok(&["attn", "--ckpt", s(&ckpt), "--example", "1", "--layer", "0", "--out", s(&map)]);
    assert!(fs::read(&map).unwrap().starts_with(b"P"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "model_dimension = 16\n").unwrap();
    let out = prlab(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model_dimension"));

    let out = prlab(&["eval", "--ckpt", s(&cfg), "--set", "short", "--report", "x.jsonl"]);
    assert!(!out.status.success());
    assert!(!prlab(&["experiment", "--name", "nope", "--out", "x"]).status.success());
}
