//! End-to-end command-line tests against the built binary.

use std::path::Path;
use std::process::Command;

use slicetrack::config::ExperimentConfig;
use slicetrack::network::ModelConfig;
use slicetrack::training::TrainConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slicetrack"))
}

/// Tiny configuration: everything runs in seconds.
fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = ExperimentConfig::desk();
    cfg.data.volume_dim = 32;
    cfg.data.train_subjects = 1;
    cfg.data.val_subjects = 1;
    cfg.data.test_subjects = 1;
    cfg.data.test_sequences_per_subject = 2;
    cfg.model = ModelConfig {
        input_size: 16,
        conv_channels: vec![4, 8],
        hidden: 16,
        rot_hidden: 8,
        decoder_embed: 8,
        ..ModelConfig::default()
    };
    cfg.train = TrainConfig {
        epochs: 2,
        sequences_per_subject: 2,
        val_sequences_per_subject: 1,
        batch_size: 2,
        slice_size: 16,
        ..cfg.train
    };
    let path = dir.join("tiny.toml");
    cfg.save(&path).unwrap();
    path
}

#[test]
fn gen_data_is_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    for name in ["a.shard", "b.shard"] {
        let out = bin()
            .args([
                "gen-data",
                "--config",
                cfg.to_str().unwrap(),
                "--subjects",
                "1",
                "--per-subject",
                "4",
                "--seed",
                "7",
                "--out",
            ])
            .arg(dir.path().join(name))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a.shard")).unwrap();
    let b = std::fs::read(dir.path().join("b.shard")).unwrap();
    assert_eq!(a, b, "same seed must give bit-identical shards");
}

#[test]
fn eval_without_checkpoint_is_usage_error() {
    let out = bin().args(["eval", "--out", "/tmp/x.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = bin()
        .args(["gen-phantoms", "--does-not-exist", "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_yields_json_error_and_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["eval", "--checkpoint", "/does/not/exist.ckpt", "--out"])
        .arg(dir.path().join("r.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let parsed: serde_json::Value =
        serde_json::from_str(stderr.lines().last().unwrap()).expect("stderr is JSON");
    assert!(parsed.get("error").is_some());
}

#[test]
fn pipeline_gen_train_eval_predict_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfgs = cfg.to_str().unwrap();

    // Phantoms to a directory.
    let out = bin()
        .args(["gen-phantoms", "--config", cfgs, "--count", "1", "--seed", "3", "--out"])
        .arg(dir.path().join("vols"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_dir(dir.path().join("vols")).unwrap().count() == 1);

    // Dataset shard.
    let shard = dir.path().join("data.shard");
    let out = bin()
        .args(["gen-data", "--config", cfgs, "--per-subject", "3", "--seed", "5", "--out"])
        .arg(&shard)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Train the full variant for 2 epochs.
    let out = bin()
        .args(["train", "--config", cfgs, "--seed", "9", "--reference", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = dir.path().join("full.ckpt");
    assert!(ckpt.exists());
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert!(history.starts_with("# config_hash="));
    assert!(history.lines().nth(1).unwrap().starts_with("epoch,train_total,"));

    // Evaluate on a synthesized test set.
    let report = dir.path().join("report.json");
    let out = bin()
        .args(["eval", "--config", cfgs, "--seed", "9", "--checkpoint"])
        .arg(&ckpt)
        .arg("--out")
        .arg(&report)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(report.exists());
    assert!(dir.path().join("report.csv").exists());

    // Evaluating twice gives byte-identical reports.
    let report2 = dir.path().join("report2.json");
    let out = bin()
        .args(["eval", "--config", cfgs, "--seed", "9", "--checkpoint"])
        .arg(&ckpt)
        .arg("--out")
        .arg(&report2)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(&report).unwrap(),
        std::fs::read(&report2).unwrap()
    );

    // Predict a single sequence: 20 pose rows.
    let csv = dir.path().join("poses.csv");
    let out = bin()
        .args(["predict", "--config", cfgs, "--checkpoint"])
        .arg(&ckpt)
        .arg("--input")
        .arg(&shard)
        .arg("--index")
        .arg("0")
        .arg("--out")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("t,"))
        .collect();
    assert_eq!(rows.len(), 20, "10 estimation + 10 prediction rows");

    // Plots from the report.
    let plots = dir.path().join("plots");
    let out = bin()
        .args(["plot", "--report"])
        .arg(&report)
        .arg("--out")
        .arg(&plots)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["error_vs_horizon.svg", "boxplot_age.svg", "boxplot_speed.svg"] {
        let p = plots.join(f);
        assert!(p.exists(), "missing {f}");
        let body = std::fs::read_to_string(&p).unwrap();
        assert!(body.starts_with("<svg"));
    }

    // Latency benchmark emits stats and respects reps=0 error.
    let lat = dir.path().join("latency.json");
    let out = bin()
        .args(["bench-latency", "--config", cfgs, "--checkpoint"])
        .arg(&ckpt)
        .arg("--reps")
        .arg("5")
        .arg("--out")
        .arg(&lat)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&lat).unwrap()).unwrap();
    assert!(stats["latency"]["median_ms"].as_f64().unwrap() > 0.0);

    let out = bin()
        .args(["bench-latency", "--config", cfgs, "--checkpoint"])
        .arg(&ckpt)
        .arg("--reps")
        .arg("0")
        .arg("--out")
        .arg(&lat)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
