use std::path::Path;
use std::process::Command;

use stagewise::data::read_dataset;
use stagewise::harness::RunLog;

fn run(args: &[&str], cwd: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_stagewise"))
        .args(args)
        .current_dir(cwd)
        .env_remove("STAGEWISE_SEED")
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into(), String::from_utf8_lossy(&out.stderr).into())
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = run(&[], dir.path());
    assert_eq!(code, 1);
    assert!(format!("{out}{err}").contains("Usage"));
    assert_eq!(run(&["--help"], dir.path()).0, 0);
    assert_eq!(run(&["frobnicate"], dir.path()).0, 1);
    assert_eq!(run(&["gen-data", "--n", "10"], dir.path()).0, 1);
    assert_eq!(run(&["gen-data", "--n", "10", "--out", "x.bin", "--bogus"], dir.path()).0, 1);
}

#[test]
fn gen_data_writes_a_readable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) =
        run(&["gen-data", "--n", "100", "--classes", "4", "--size", "16", "--seed", "7", "--out", "d.bin"], dir.path());
    assert_eq!(code, 0, "{err}");
    let ds = read_dataset(dir.path().join("d.bin")).unwrap();
    assert_eq!((ds.n, ds.n_classes, ds.height, ds.channels), (100, 4, 16, 3));
    assert_eq!(run(&["gen-data", "--n", "10", "--classes", "1", "--out", "e.bin"], dir.path()).0, 1);
}

#[test]
fn train_with_missing_dataset_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"data.train": "absent.bin", "data.eval": "absent.bin"}"#).unwrap();
    let (code, _, err) = run(&["train", "--config", "c.json"], dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("absent.bin"), "{err}");

    std::fs::write(dir.path().join("bad.json"), r#"{"model.dimm": 8}"#).unwrap();
    let (code, _, err) = run(&["train", "--config", "bad.json"], dir.path());
    assert_eq!(code, 1);
    assert!(err.contains("model.dimm"));
    assert_eq!(run(&["train", "--config", "nowhere.json"], dir.path()).0, 2);
}

#[test]
fn train_analyze_probe_report_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (name, seed) in [("train.bin", "1"), ("eval.bin", "2")] {
        let args = ["gen-data", "--n", "64", "--classes", "4", "--size", "8", "--noise", "0.5", "--seed", seed, "--out", name];
        assert_eq!(run(&args, d).0, 0);
    }
    let config = r#"{"model": {"image_size": 8, "patch_size": 2, "dim": 8, "depth": 1, "heads": 2, "n_classes": 4},
        "train.epochs": 10, "train.batch_size": 16, "optim.warmup_epochs": 1, "log.wall_time": false,
        "data.train": "train.bin", "data.eval": "eval.bin"}"#;
    std::fs::write(d.join("c.json"), config).unwrap();

    let (code, out, err) = run(&["train", "--config", "c.json", "--run-dir", "run"], d);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("epoch  10"));
    let log = RunLog::read(d.join("run/runlog.jsonl")).unwrap();
    assert_eq!(log.epochs().count(), 10);
    assert!(d.join("run/checkpoint.bin").exists());
    let saved = std::fs::read_to_string(d.join("run/config.json")).unwrap();
    assert!(saved.contains("\"model.dim\": 8"));

    // Default run directories are named by config hash and a timestamp.
    assert_eq!(run(&["train", "--config", "c.json", "--runs", "runs"], d).0, 0);
    let names: Vec<String> =
        std::fs::read_dir(d.join("runs")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(names.len(), 1);
    let (hash, stamp) = names[0].split_once('-').unwrap();
    assert_eq!(hash.len(), 8);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    assert!(stamp.parse::<u64>().is_ok());
    let again = std::fs::read(d.join("runs").join(&names[0]).join("runlog.jsonl")).unwrap();
    assert_eq!(again, std::fs::read(d.join("run/runlog.jsonl")).unwrap());

    let seeded = Command::new(env!("CARGO_BIN_EXE_stagewise"))
        .args(["train", "--config", "c.json", "--run-dir", "seeded"])
        .current_dir(d)
        .env("STAGEWISE_SEED", "99")
        .output()
        .unwrap();
    assert!(seeded.status.success());
    assert!(std::fs::read_to_string(d.join("seeded/config.json")).unwrap().contains("\"train.seed\": 99"));
    assert_ne!(std::fs::read(d.join("seeded/runlog.jsonl")).unwrap(), again);

    let (code, out, err) = run(&["analyze", "--log", "run/runlog.jsonl", "--fit-degree", "3"], d);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("t1_end"));
    for f in ["ddp.csv", "kar.csv", "stages.json", "curves.svg"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    assert_eq!(run(&["analyze", "--log", "c.json", "--out", "x"], d).0, 2);
    assert_eq!(run(&["analyze", "--log", "run/runlog.jsonl", "--alpha", "0.1"], d).0, 1);

    let (code, out, err) = run(&["probe", "--checkpoint", "run/checkpoint.bin", "--data", "train.bin", "--ks", "0,1,4"], d);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("k,p_k,top1\n0,"));
    assert_eq!(std::fs::read_to_string(d.join("run/probe.csv")).unwrap(), out);
    assert_eq!(run(&["probe", "--checkpoint", "run/checkpoint.bin", "--data", "train.bin", "--ks", "0,99"], d).0, 1);

    let (code, out, _) =
        run(&["report", "--a", "run/runlog.jsonl", "--b", "seeded/runlog.jsonl", "--out", "delta.csv"], d);
    assert_eq!(code, 0);
    assert!(out.contains("10 shared epochs"));
    assert_eq!(std::fs::read_to_string(d.join("delta.csv")).unwrap().lines().count(), 11);
}

#[test]
fn divergence_exits_with_code_three_and_keeps_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["gen-data", "--n", "32", "--classes", "4", "--size", "8", "--out", "d.bin"];
    assert_eq!(run(&args, d).0, 0);
    let config = r#"{"model": {"image_size": 8, "patch_size": 2, "dim": 8, "depth": 1, "heads": 2, "n_classes": 4},
        "train.epochs": 3, "train.batch_size": 16, "optim.lr": 1e30, "optim.min_lr": 1e30,
        "aug.mode": "vanilla", "data.train": "d.bin", "data.eval": "d.bin"}"#;
    std::fs::write(d.join("c.json"), config).unwrap();
    let (code, _, err) = run(&["train", "--config", "c.json", "--run-dir", "run"], d);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("diverged"));
    assert!(d.join("run/checkpoint.bin").exists());
}
