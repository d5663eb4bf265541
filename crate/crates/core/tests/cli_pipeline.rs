use std::path::Path;
use std::process::Command;

fn sslora(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sslora"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let cfg = r#"{
        "data_dir": "data",
        "out_dir": "out",
        "data": {"num_domains": 2, "num_classes": 3, "input_dim": 12, "n_train": 20, "n_val": 10,
                 "noise_std": 0.5, "seed": 3},
        "network": {"input_dim": 12, "hidden_dim": 12, "num_blocks": 1, "num_classes": 3,
                    "num_domains": 2, "structure": "all_flat", "rank": 2, "threshold": 0.9},
        "pretrain": {"epochs": 5, "batch_size": 16, "lr": 0.005},
        "train": {"max_steps": 40, "eval_every": 10, "lr": 0.001}
    }"#;
    let path = dir.join("cfg.json");
    std::fs::write(&path, cfg).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn help_exits_zero_and_bad_flags_exit_one() {
    let out = sslora(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    let out = sslora(&["train", "--config", "x.json", "--nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(sslora(&["train", "--config", "/missing/cfg.json"]).status.code(), Some(1));
}

#[test]
fn full_pipeline_produces_declared_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = |args: &[&str]| {
        let out = sslora(args);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    };
    run(&["gen-data", "--config", &cfg]);
    for f in ["manifest.json", "domain0_train.csv", "domain1_val.csv"] {
        assert!(dir.path().join("data").join(f).is_file(), "{f}");
    }
    run(&["pretrain", "--config", &cfg]);
    let base = dir.path().join("out/base.sslw");
    assert!(base.is_file());

    let decomp = dir.path().join("decomp.sslw");
    let summary = dir.path().join("summary.json");
    run(&[
        "decompose",
        "--weights",
        base.to_str().unwrap(),
        "--threshold",
        "0.9",
        "--out",
        decomp.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ]);
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(&summary).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let k = row["k"].as_u64().unwrap();
        let s = row["s"].as_u64().unwrap();
        assert_eq!(k + s, 12);
        assert_eq!(row["d'"].as_u64(), Some(12));
    }

    run(&["train", "--config", &cfg]);
    let ckpt = dir.path().join("out/checkpoint.sslw");
    let metrics = dir.path().join("out/metrics.csv");
    assert!(ckpt.is_file());
    let text = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(text.lines().count(), 41);
    assert!(text.starts_with("step,domain,ce,orth,ss,total,lr,val_acc_d0,val_acc_d1"));

    let eval = run(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        dir.path().join("data").to_str().unwrap(),
    ]);
    let eval: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(eval.as_array().unwrap().len(), 2);

    let report = dir.path().join("analysis/report.csv");
    run(&["analyze", "--ckpt", ckpt.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    let rows = std::fs::read_to_string(&report).unwrap().lines().count() - 1;
    // two layers × (shared + two domains) × rank 2
    assert_eq!(rows, 2 * 3 * 2);
    assert!(dir.path().join("analysis/pairs.csv").is_file());

    // Resuming a finished run with a longer budget continues from step 40.
    let longer = std::fs::read_to_string(&cfg).unwrap().replace("\"max_steps\": 40", "\"max_steps\": 50");
    std::fs::write(&cfg, longer).unwrap();
    run(&["train", "--config", &cfg, "--resume", ckpt.to_str().unwrap()]);
    let text = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(text.lines().count(), 51);
}
