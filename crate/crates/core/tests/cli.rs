mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

fn koap(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_koap"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("KOAP_SEED")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "koap {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn pipeline(dir: &Path, config: &str) -> Vec<u8> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    koap(&[
        "gen-data",
        "--config",
        config,
        "--n-traj",
        "40",
        "--seed",
        "0",
        "--out",
        &p("pool.jsonl"),
    ]);
    koap(&[
        "train-planner",
        "--config",
        config,
        "--data",
        &p("pool.jsonl"),
        "--out",
        &p("planner.ckpt"),
    ]);
    koap(&[
        "train-controller",
        "--config",
        config,
        "--method",
        "koap",
        "--level",
        "0.1",
        "--bundle",
        &p("pool.jsonl"),
        "--out",
        &p("ctrl.ckpt"),
    ]);
    koap(&[
        "evaluate",
        "--config",
        config,
        "--controller",
        &p("ctrl.ckpt"),
        "--planner",
        &p("planner.ckpt"),
        "--episodes",
        "2",
        "--seeds",
        "0,1",
        "--out",
        &p("eval.csv"),
    ]);
    fs::read(dir.join("eval.csv")).unwrap()
}

#[test]
fn pipeline_csv_is_byte_identical_across_runs() {
    let root = tempfile::tempdir().unwrap();
    let config = root.path().join("config.json");
    fs::write(&config, serde_json::to_vec_pretty(&common::tiny_config()).unwrap()).unwrap();
    let config = config.to_string_lossy().into_owned();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    let first = pipeline(&a, &config);
    let second = pipeline(&b, &config);
    assert_eq!(first, second);
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("method,seed,episodes,success\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn config_and_sample_plan_subcommands() {
    let out = koap(&["config", "--env", "lti"]);
    let cfg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["env"]["kind"], "lti");

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, serde_json::to_vec(&common::tiny_config()).unwrap()).unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let c = config.to_string_lossy().into_owned();
    koap(&["gen-data", "--config", &c, "--n-traj", "10", "--out", &p("pool.jsonl")]);
    koap(&[
        "train-planner",
        "--config",
        &c,
        "--data",
        &p("pool.jsonl"),
        "--out",
        &p("planner.ckpt"),
    ]);
    let cond = r#"{"current":[0.0,0.5],"history":[[0.0,0.5],[0.0,0.5]]}"#;
    let plan = koap(&[
        "sample-plan",
        "--planner",
        &p("planner.ckpt"),
        "--conditioning",
        cond,
        "--seed",
        "3",
    ]);
    let again = koap(&[
        "sample-plan",
        "--planner",
        &p("planner.ckpt"),
        "--conditioning",
        cond,
        "--seed",
        "3",
    ]);
    assert_eq!(plan.stdout, again.stdout);
    let v: serde_json::Value = serde_json::from_slice(&plan.stdout).unwrap();
    let states = v["states"].as_array().unwrap();
    assert_eq!(states.len(), 13);
    assert_eq!(states[0], serde_json::json!([0.0, 0.5]));
}

#[test]
fn bad_arguments_fail_with_a_message() {
    let out = Command::new(env!("CARGO_BIN_EXE_koap"))
        .args([
            "train-controller",
            "--config",
            "/nonexistent.json",
            "--method",
            "nope",
            "--level",
            "0.1",
            "--bundle",
            "x",
            "--out",
            "y",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
