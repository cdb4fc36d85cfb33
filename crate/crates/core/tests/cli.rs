mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::test_engine;
use tv2tv::model::{save_checkpoint, Checkpoint};
use tv2tv::sequence::Variant;

fn tv2tv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tv2tv")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn save_test_checkpoint(path: &Path, bof_bias: f32) {
    let engine = test_engine(Variant::Tv2tv, 3, bof_bias, -8.0);
    let ck = Checkpoint {
        params: (*engine.params).clone(),
        train: None,
        meta: serde_json::json!({"variant": "tv2tv"}),
    };
    save_checkpoint(path, &ck).unwrap();
}

#[test]
fn gen_data_writes_episode_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    ok(&tv2tv(&["gen-data", "--episodes", "4", "--seed", "1", "--out", out.to_str().unwrap()]));
    let n = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().join("meta.json").exists())
        .count();
    assert_eq!(n, 4);
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    let out = tv2tv(&["gen-data", "--episodes", "1", "--out", "x", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(tv2tv(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(tv2tv(&[]).status.code(), Some(2));

    let out = tv2tv(&["generate", "--ckpt", "/nonexistent.ckpt", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn train_then_eval_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    ok(&tv2tv(&["gen-data", "--episodes", "3", "--out", &p("data")]));
    std::fs::write(
        p("run.toml"),
        "[model]\nlayers = 1\nd_model = 16\nn_heads = 2\nn_kv_heads = 1\nd_ffn = 32\ntime_dim = 8\nup_hidden = 16\n\n[train]\nsteps = 3\nbatch_size = 2\ncheckpoint_every = 2\n",
    )
    .unwrap();
    ok(&tv2tv(&[
        "train",
        "--config",
        &p("run.toml"),
        "--variant",
        "think2v",
        "--data",
        &p("data"),
        "--out",
        &p("run"),
    ]));
    for f in ["final.ckpt", "step_000002.ckpt", "metrics.csv", "config.toml"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(p("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);

    ok(&tv2tv(&[
        "eval",
        "intervention",
        "--ckpt",
        &p("run/final.ckpt"),
        "--out",
        &p("eval"),
        "--rollouts",
        "2",
        "--fork-after",
        "1",
        "--ode-steps",
        "2",
        "--max-elements",
        "60",
    ]));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["variant"], "think2v");
    assert!(report["base_rate"].is_number());
    assert!(report["per_action"][0]["base_rate"].is_number());
    assert!(std::fs::read_to_string(p("eval/report.svg")).unwrap().starts_with("<svg"));
    assert!(Path::new(&p("eval/report.txt")).exists());

    save_test_checkpoint(Path::new(&p("biased.ckpt")), 1.0);
    ok(&tv2tv(&[
        "eval",
        "variants",
        "--ckpt",
        &p("run/final.ckpt"),
        "--ckpt",
        &p("biased.ckpt"),
        "--out",
        &p("variants"),
        "--rollouts",
        "1",
        "--fork-after",
        "1",
        "--ode-steps",
        "2",
        "--max-elements",
        "60",
    ]));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("variants/report.json")).unwrap()).unwrap();
    assert_eq!(report["variants"].as_array().unwrap().len(), 2);
}

#[test]
fn generate_places_timed_interventions() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    save_test_checkpoint(Path::new(&p("m.ckpt")), 8.0);
    let frame = tv2tv::toyworld::gen_episode(4, 1, tv2tv::toyworld::Policy::Random).unwrap().frames[0].clone();
    tv2tv::toyworld::write_png(Path::new(&p("first.png")), &frame).unwrap();
    ok(&tv2tv(&[
        "generate",
        "--ckpt",
        &p("m.ckpt"),
        "--prompt",
        "a red sprite.",
        "--cond-frame",
        &p("first.png"),
        "--intervene",
        "t=0:(left).",
        "--intervene",
        "t=0.5:(stay). jump.",
        "--max-chunks",
        "3",
        "--ode-steps",
        "2",
        "--seed",
        "4",
        "--out",
        &p("gen"),
    ]));
    let t = std::fs::read_to_string(p("gen/transcript.jsonl")).unwrap();
    let users: Vec<serde_json::Value> = t
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["source"] == "user" && v["type"] == "text")
        .collect();
    assert_eq!(users.len(), 3, "prompt plus two interventions:\n{t}");
    assert_eq!(users[1]["text"], "(left).");
    assert_eq!(users[1]["timestamp_s"], 0.0625);
    assert_eq!(users[2]["text"], "(stay). jump.");
    assert_eq!(users[2]["timestamp_s"], 0.5625);
    let frames = std::fs::read_dir(p("gen/frames")).unwrap().count();
    assert_eq!(frames, 13);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("gen/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["chunks"], 3);
    assert_eq!(summary["done"], "max_chunks");

    let bad = tv2tv(&["generate", "--ckpt", &p("m.ckpt"), "--intervene", "t=abc:(left).", "--out", &p("gen2")]);
    assert_eq!(bad.status.code(), Some(1));
}
