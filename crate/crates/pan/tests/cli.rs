//! End-to-end checks of the `pan` binary: exit codes, output formats,
//! and determinism of every subcommand.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pan() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pan"))
}

fn run(args: &[&str]) -> Output {
    pan().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn write_k3_and_star(dir: &Path) -> (String, String) {
    let k3 = dir.join("k3.json");
    fs::write(
        &k3,
        r#"{"graphs":[{"num_nodes":3,"edges":[[0,1],[1,2],[0,2]],
            "node_feat":[[0],[0],[0]],"edge_feat":[[0],[0],[0]],"label":1}]}"#,
    )
    .unwrap();
    let star = dir.join("star.json");
    fs::write(
        &star,
        r#"{"graphs":[{"num_nodes":4,"edges":[[0,1],[0,2],[0,3]],
            "node_feat":[[0],[0],[0],[0]],"edge_feat":[[0],[0],[0]],"label":0}]}"#,
    )
    .unwrap();
    (k3.display().to_string(), star.display().to_string())
}

#[test]
fn train_writes_logs_checkpoints_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let out_s = out.display().to_string();
    let result = run(&[
        "train", "--synthetic", "12", "--epochs", "2", "--emb-dim", "4", "--cutoffs", "2",
        "--alpha", "1", "--runs", "2", "--seed", "1", "--out", &out_s,
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    for name in ["run-0.jsonl", "run-0.panw", "run-1.jsonl", "run-1.panw", "summary.json"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let text = stdout(&result);
    assert!(text.contains("mean ± sample std"), "{text}");
    assert!(text.contains("run 0: seed 1"), "{text}");
    assert!(text.contains("run 1: seed 2"), "{text}");

    // Each log line is one JSON document with the epoch fields.
    let log = fs::read_to_string(out.join("run-0.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("mean_loss").is_some());
    }
}

#[test]
fn train_json_is_one_document_and_reruns_match() {
    let dir = tempfile::tempdir().unwrap();
    let out_s = dir.path().join("exp").display().to_string();
    let args = [
        "train", "--synthetic", "12", "--epochs", "2", "--emb-dim", "4", "--cutoffs", "2",
        "--runs", "2", "--seed", "3", "--out", &out_s, "--json",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&a)).unwrap();
    assert_eq!(doc["runs"].as_array().unwrap().len(), 2);
    assert!(doc["test_auc"]["mean"].is_number());
    // Stdout is byte-stable across reruns of the same flags.
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn missing_dataset_path_exits_3() {
    let result = run(&["train", "--data", "/nonexistent/never.json"]);
    assert_eq!(result.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&result.stderr).contains("missing file"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"embdim": 8}"#).unwrap();
    let result = run(&["train", "--config", &cfg.display().to_string(), "--synthetic", "4"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn invalid_thread_cap_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_s = dir.path().join("x").display().to_string();
    let result = pan()
        .args(["train", "--synthetic", "8", "--epochs", "1", "--emb-dim", "4",
               "--cutoffs", "2", "--out", &out_s])
        .env("PAN_NUM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn eval_roundtrip_is_deterministic_and_config_checked() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let out_s = out.display().to_string();
    assert!(run(&[
        "train", "--synthetic", "16", "--epochs", "2", "--emb-dim", "4", "--cutoffs", "2",
        "--out", &out_s,
    ])
    .status
    .success());
    let (k3, _) = write_k3_and_star(dir.path());
    let ckpt = out.join("run-0.panw").display().to_string();

    // Unreadable checkpoint: exit 3.
    let bad = run(&["eval", "--checkpoint", "/nonexistent.panw", "--data", &k3]);
    assert_eq!(bad.status.code(), Some(3));

    // Single-class split: scoring is impossible, not a crash.
    let degenerate = run(&["eval", "--checkpoint", &ckpt, "--data", &k3, "--split", "train"]);
    assert_eq!(degenerate.status.code(), Some(3));

    // Mismatched config (different emb_dim): exit 2.
    let cfg = dir.path().join("other.json");
    fs::write(&cfg, r#"{"emb_dim": 8, "conv_cutoffs": [2]}"#).unwrap();
    let mismatch = run(&[
        "eval", "--checkpoint", &ckpt, "--data", &k3, "--config", &cfg.display().to_string(),
    ]);
    assert_eq!(mismatch.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("emb_dim"));

    // A labeled two-class file scores, in [0,1], and identically twice.
    let two = dir.path().join("two.json");
    fs::write(
        &two,
        r#"{"graphs":[
            {"num_nodes":3,"edges":[[0,1],[1,2],[0,2]],"node_feat":[[0],[0],[0]],"edge_feat":[[0],[0],[0]],"label":1},
            {"num_nodes":3,"edges":[[0,1],[1,2]],"node_feat":[[0],[0],[0]],"edge_feat":[[0],[0]],"label":0}]}"#,
    )
    .unwrap();
    let two_s = two.display().to_string();
    let a = run(&["eval", "--checkpoint", &ckpt, "--data", &two_s, "--split", "train", "--json"]);
    let b = run(&["eval", "--checkpoint", &ckpt, "--data", &two_s, "--split", "train", "--json"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(stdout(&a), stdout(&b));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&a)).unwrap();
    let auc = doc["roc_auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
}

#[test]
fn inspect_met_matches_module_examples() {
    let dir = tempfile::tempdir().unwrap();
    let (k3, star) = write_k3_and_star(dir.path());

    // Triangle at L=2: symmetric matrix with equal diagonal entries.
    let out = run(&["inspect-met", "--data", &k3, "--cutoff", "2", "--json"]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let m = doc["matrix"].as_array().unwrap();
    let get = |i: usize, j: usize| m[i].as_array().unwrap()[j].as_f64().unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((get(i, j) - get(j, i)).abs() < 1e-12);
        }
    }
    let d = doc["diag"].as_array().unwrap();
    assert!((d[0].as_f64().unwrap() - d[1].as_f64().unwrap()).abs() < 1e-12);
    assert!((d[1].as_f64().unwrap() - d[2].as_f64().unwrap()).abs() < 1e-12);

    // L = 0: the identity.
    let out = run(&["inspect-met", "--data", &k3, "--cutoff", "0", "--json"]);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let m = doc["matrix"].as_array().unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let expect = if i == j { 1.0 } else { 0.0 };
            assert_eq!(m[i].as_array().unwrap()[j].as_f64().unwrap(), expect);
        }
    }

    // Star with unweighted walk sums: the center is ranked first.
    let out = run(&[
        "inspect-met", "--data", &star, "--weights", "1,1,1",
        "--normalization", "row-stochastic", "--json",
    ]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["ranking"][0].as_u64(), Some(0));

    // Bad graph index: exit 3.
    let out = run(&["inspect-met", "--data", &k3, "--index", "5"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gradcheck_exit_codes_demonstrate_sensitivity() {
    let pass = run(&["gradcheck", "--variant", "pan"]);
    assert_eq!(pass.status.code(), Some(0), "{}", stdout(&pass));
    assert!(stdout(&pass).contains("PASS"));

    let fail = run(&["gradcheck", "--variant", "pan", "--tol", "1e-12"]);
    assert_eq!(fail.status.code(), Some(5));
    assert!(stdout(&fail).contains("FAIL"));
}

#[test]
fn ingest_converts_raw_csv_to_json() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    fs::create_dir(&raw).unwrap();
    let write = |name: &str, text: &str| fs::write(raw.join(name), text).unwrap();
    write("edge.csv", "0,1\n1,0\n1,2\n2,1\n0,2\n2,0\n0,1\n1,0\n");
    write("num-node-list.csv", "3\n2\n");
    write("num-edge-list.csv", "6\n2\n");
    write("node-feat.csv", "4,0\n5,1\n6,0\n7,1\n8,0\n");
    write("edge-feat.csv", "1\n1\n2\n2\n3\n3\n9\n9\n");
    write("graph-label.csv", "1\n0\n");
    write("train.csv", "0\n");
    write("valid.csv", "1\n");
    write("test.csv", "");
    let out = dir.path().join("converted.json");
    let result = run(&[
        "ingest", "--raw", &raw.display().to_string(), "--out", &out.display().to_string(),
        "--json",
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&result)).unwrap();
    assert_eq!(doc["graphs"].as_u64(), Some(2));
    assert_eq!(doc["train"].as_u64(), Some(1));

    // The converted file feeds inspect-met directly.
    let inspect = run(&["inspect-met", "--data", &out.display().to_string(), "--cutoff", "1"]);
    assert!(inspect.status.success());
}

#[test]
fn thread_cap_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let out_s = dir.path().join("exp").display().to_string();
    let args = [
        "train", "--synthetic", "12", "--epochs", "1", "--emb-dim", "4", "--cutoffs", "2",
        "--runs", "3", "--seed", "5", "--out", &out_s, "--json",
    ];
    let serial = pan().args(args).env("PAN_NUM_THREADS", "1").output().unwrap();
    assert!(serial.status.success());
    let parallel = pan().args(args).env("PAN_NUM_THREADS", "3").output().unwrap();
    // Run results are independent of the pool width.
    assert_eq!(stdout(&serial), stdout(&parallel));
}
