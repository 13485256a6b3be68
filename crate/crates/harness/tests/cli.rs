use std::path::Path;
use std::process::{Command, Output};

fn geomsign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geomsign"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn synth(dir: &Path) {
    let out = dir.to_str().unwrap();
    let o = geomsign(&[
        "synth",
        "--classes",
        "3",
        "--signers",
        "5",
        "--frames",
        "8",
        "--seed",
        "2",
        "--out",
        out,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_validate_stats_split() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let manifest = dir.path().join("manifest.json");
    let m = manifest.to_str().unwrap();
    assert_eq!(code(&geomsign(&["validate", m])), 0);

    let report = dir.path().join("stats.csv");
    assert_eq!(
        code(&geomsign(&["stats", m, "--out", report.to_str().unwrap()])),
        0
    );
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "gloss_id,signer,view,frames,success_ratio"
    );
    // 3 glosses x 5 signers x 3 views
    assert_eq!(text.lines().count(), 1 + 3 * 5 * 3);

    let plans = dir.path().join("plans");
    let o = geomsign(&[
        "split",
        m,
        "--views",
        "f",
        "--sb",
        "--out",
        plans.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_dir(&plans).unwrap().count(), 9);
}

#[test]
fn corrupted_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let manifest = dir.path().join("manifest.json");
    let first = std::fs::read_dir(dir.path().join("poses"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    std::fs::write(&first, b"XXXX").unwrap();
    assert_eq!(
        code(&geomsign(&["validate", manifest.to_str().unwrap()])),
        2
    );

    let bogus = dir.path().join("bogus.json");
    std::fs::write(&bogus, "{not json").unwrap();
    assert_eq!(code(&geomsign(&["validate", bogus.to_str().unwrap()])), 2);
}

#[test]
fn runtime_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let m = dir.path().join("manifest.json");
    let plans = dir.path().join("plans");
    geomsign(&[
        "split",
        m.to_str().unwrap(),
        "--views",
        "f",
        "--out",
        plans.to_str().unwrap(),
    ]);
    let plan = plans.join("block0_fold0.json");
    let o = geomsign(&[
        "eval",
        m.to_str().unwrap(),
        "--plan",
        plan.to_str().unwrap(),
        "--checkpoint",
        dir.path().join("missing").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let m = dir.path().join("manifest.json");
    let plans = dir.path().join("plans");
    geomsign(&[
        "split",
        m.to_str().unwrap(),
        "--views",
        "f",
        "--out",
        plans.to_str().unwrap(),
    ]);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"hidden_dim": 8, "num_layers": 1, "basis_dim": 8, "temporal_kernel": 3},
            "train": {"batch_size": 8, "max_epochs": 2, "frames": 8, "warmup_steps": 1}}"#,
    )
    .unwrap();
    let plan = plans.join("block1_fold2.json");
    let run = dir.path().join("run");
    let o = geomsign(&[
        "train",
        m.to_str().unwrap(),
        "--plan",
        plan.to_str().unwrap(),
        "--variant",
        "baseline",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "4",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "curves.csv",
        "metrics.csv",
        "run.json",
        "checkpoint/checkpoint.json",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert!(metrics.contains("baseline"));

    let evald = dir.path().join("eval.csv");
    let o = geomsign(&[
        "eval",
        m.to_str().unwrap(),
        "--plan",
        plan.to_str().unwrap(),
        "--checkpoint",
        run.join("checkpoint").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        evald.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&evald).unwrap(), metrics);

    let rep = dir.path().join("rep");
    let o = geomsign(&[
        "report",
        evald.to_str().unwrap(),
        "--out",
        rep.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert!(rep.join("report.md").exists() && rep.join("report.csv").exists());
}

#[test]
fn graph_dump_is_json() {
    let o = geomsign(&["graph", "--dump-map"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["node_map"]["indices"].as_array().unwrap().len(), 27);
    assert_eq!(v["edges"]["edges"].as_array().unwrap().len(), 26);
}
