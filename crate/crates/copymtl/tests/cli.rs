//! End-to-end checks of the command-line binary, including the exit
//! code contract: 0 ok, 1 usage, 2 data, 3 numeric.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_copymtl"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("copymtl_cli_{}_{name}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn full_pipeline_synth_train_eval_decode_diagnose() {
    let dir = tmp("pipeline");
    let data = dir.join("data");
    let ckpt = dir.join("ckpt");
    let metrics = dir.join("metrics.csv");

    let out = run(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--seed",
        "3",
        "--sentences",
        "40",
        "--vocab",
        "80",
        "--relations",
        "3",
        "--max-triplets",
        "2",
        "--multi-token",
        "0.2",
        "--overlap",
        "0.2",
    ]);
    assert_code(&out, 0);

    let train_file = data.join("train.jsonl");
    let test_file = data.join("test.jsonl");
    let out = run(&[
        "train",
        "--train",
        train_file.to_str().unwrap(),
        "--test",
        test_file.to_str().unwrap(),
        "--epochs",
        "2",
        "--batch-size",
        "8",
        "--eval-every",
        "2",
        "--out-dir",
        ckpt.to_str().unwrap(),
        "--metrics",
        metrics.to_str().unwrap(),
    ]);
    assert_code(&out, 0);

    let csv = std::fs::read_to_string(&metrics).expect("metrics written");
    assert!(csv.starts_with("epoch,split,precision,recall,f1,rel_f1,ent_f1,loss_d,loss_e\n"));
    assert!(csv.lines().count() >= 3);

    let stem = ckpt.join("final");
    let out = run(&[
        "eval",
        "--checkpoint",
        stem.to_str().unwrap(),
        "--data",
        test_file.to_str().unwrap(),
        "--mode",
        "relaxed",
    ]);
    assert_code(&out, 0);
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("eval prints JSON");
    assert!(report.get("f1").is_some());
    assert!(report.get("relation_f1").is_some());

    let out = run(&[
        "decode",
        "--checkpoint",
        stem.to_str().unwrap(),
        "--data",
        test_file.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let stdout = String::from_utf8(out.stdout).expect("utf8");
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 8, "one JSONL line per input sentence");
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).expect("decode output is JSONL");
        assert!(v.get("tokens").is_some() && v.get("triplets").is_some());
    }

    let out = run(&[
        "diagnose",
        "--checkpoint",
        stem.to_str().unwrap(),
        "--data",
        test_file.to_str().unwrap(),
        "--trials",
        "10",
        "--seed",
        "1",
    ]);
    assert_code(&out, 0);
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("diagnose prints JSON");
    for field in [
        "reduction_max_tv",
        "f1_masked",
        "f1_unmasked",
        "swap_rate",
        "head_eq_tail_rate",
    ] {
        assert!(report.get(field).is_some(), "missing {field}");
    }

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn usage_errors_exit_one() {
    assert_code(&run(&[]), 1);
    assert_code(&run(&["frobnicate"]), 1);
    assert_code(&run(&["train"]), 1);
    assert_code(&run(&["train", "--no-such-flag", "x"]), 1);
    assert_code(&run(&["eval", "--checkpoint"]), 1);
    assert_code(&run(&["synth", "--out", "/tmp/x", "--multi-token", "nope"]), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = tmp("data_errors");
    // missing file
    let out = run(&["train", "--train", dir.join("missing.jsonl").to_str().unwrap()]);
    assert_code(&out, 2);
    // malformed jsonl
    let bad = dir.join("bad.jsonl");
    std::fs::write(&bad, "{\"tokens\": [\"a\"], \"triplets\": oops\n").unwrap();
    let out = run(&["train", "--train", bad.to_str().unwrap()]);
    assert_code(&out, 2);
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("line 1"), "stderr: {err}");
    // out-of-range span
    let bad_span = dir.join("bad_span.jsonl");
    std::fs::write(
        &bad_span,
        "{\"tokens\":[\"a\"],\"triplets\":[{\"relation\":\"r\",\"head\":[0,0],\"tail\":[0,3]}]}\n",
    )
    .unwrap();
    let out = run(&["train", "--train", bad_span.to_str().unwrap()]);
    assert_code(&out, 2);
    // truncated checkpoint
    let out = run(&[
        "eval",
        "--checkpoint",
        dir.join("nonexistent").to_str().unwrap(),
        "--data",
        bad.to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn help_prints_usage() {
    let out = run(&["help"]);
    assert_code(&out, 0);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    for cmd in ["train", "eval", "decode", "diagnose", "synth"] {
        assert!(text.contains(cmd));
    }
}
