use std::fs;
use std::path::Path;
use std::process::Command;

use imdd::config::LinkConfig;
use imdd::equalizer::TrainSpec;
use imdd::sweep::{read_results_csv, run_sweep, SweepOptions, SweepSpec};

fn tiny() -> LinkConfig {
    let mut c = LinkConfig::desk_scaled();
    c.frames.payload_symbols = 256;
    c.frames.train_frames = 2;
    c.frames.eval_frames = 1;
    c.stages = 2;
    c.train = TrainSpec {
        epochs: 2,
        batch_size: 128,
        hidden_widths: vec![16, 16],
        window_half_width: 3,
        ..TrainSpec::default()
    };
    c
}

fn spec() -> SweepSpec {
    SweepSpec {
        base: tiny(),
        orders: vec![],
        stages: vec![],
        diff_precode: vec![],
        symbol_rates_baud: vec![],
        rops_dbm: vec![],
        offsets: vec![0.4, 1.0],
        repetitions: 1,
    }
}

fn options() -> SweepOptions {
    SweepOptions {
        git_rev: "test".into(),
        save_checkpoints: false,
    }
}

#[test]
fn two_point_grid_writes_canonical_rows() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_sweep(&spec(), dir.path(), &options()).unwrap();
    assert_eq!(summary.points, 2);
    assert_eq!(summary.skipped, 0);
    // 2 points x 2 stages x {genie, decision}
    let rows = read_results_csv(&dir.path().join("results.csv")).unwrap();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows, summary.rows);
    assert!(rows[..4].iter().all(|r| r.offset == 0.4));
    assert!(rows.iter().all(|r| r.net_rate_bps == r.aggregate_bpcu * r.symbol_rate_baud));
    for r in &rows {
        assert!(dir.path().join("configs").join(format!("{}.json", r.config_hash)).exists());
    }
}

#[test]
fn interrupted_sweep_resumes_to_identical_results() {
    let full = tempfile::tempdir().unwrap();
    run_sweep(&spec(), full.path(), &options()).unwrap();
    let expected = fs::read(full.path().join("results.csv")).unwrap();

    let partial = tempfile::tempdir().unwrap();
    run_sweep(&spec(), partial.path(), &options()).unwrap();
    // Drop the second point and tear the manifest mid-line.
    let manifest = partial.path().join("manifest.jsonl");
    let text = fs::read_to_string(&manifest).unwrap();
    let first = text.lines().next().unwrap();
    fs::write(&manifest, format!("{first}\n{{\"config_ha")).unwrap();
    fs::remove_file(partial.path().join("results.csv")).unwrap();
    let summary = run_sweep(&spec(), partial.path(), &options()).unwrap();
    assert_eq!(summary.skipped, 1);
    assert_eq!(fs::read(partial.path().join("results.csv")).unwrap(), expected);

    let again = run_sweep(&spec(), partial.path(), &options()).unwrap();
    assert_eq!(again.skipped, 2);
    assert_eq!(fs::read(partial.path().join("results.csv")).unwrap(), expected);
}

fn imdd(args: &[&str], cwd: &Path) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_imdd"))
        .args(args)
        .current_dir(cwd)
        .env("IMDD_GIT_REV", "test")
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn cli_config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_imdd"))
        .args(["config", "--order", "7"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_imdd"))
        .args(["config", "--set", "fiber.length_km=-1"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_train_evaluate_and_export_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), tiny().to_json()).unwrap();
    let hash_a = imdd(&["simulate", "--config", "cfg.json", "--split", "eval", "--out", "a.bin"], d).stdout;
    let hash_b = imdd(&["simulate", "--config", "cfg.json", "--split", "eval", "--out", "b.bin"], d).stdout;
    assert_eq!(hash_a, hash_b);
    assert_eq!(fs::read(d.join("a.bin")).unwrap(), fs::read(d.join("b.bin")).unwrap());

    imdd(&["train", "--config", "cfg.json", "--out", "ck1"], d);
    imdd(&["train", "--config", "cfg.json", "--out", "ck2"], d);
    for f in ["stage0.bin", "stage1.bin", "stage0.json"] {
        assert_eq!(fs::read(d.join("ck1").join(f)).unwrap(), fs::read(d.join("ck2").join(f)).unwrap());
    }
    let e1 = imdd(&["evaluate", "--config", "cfg.json", "--checkpoint", "ck1"], d).stdout;
    let e2 = imdd(&["evaluate", "--config", "cfg.json", "--checkpoint", "ck2", "--dataset", "a.bin"], d).stdout;
    assert_eq!(e1, e2);
    assert_eq!(String::from_utf8(e1.clone()).unwrap().lines().count(), 5);

    fs::write(d.join("r.csv"), &e1).unwrap();
    let b1 = imdd(&["export-best", "--results", "r.csv"], d).stdout;
    let b2 = imdd(&["export-best", "--results", "r.csv"], d).stdout;
    assert_eq!(b1, b2);
    assert_eq!(String::from_utf8(b1).unwrap().lines().count(), 3);
}

#[test]
fn cli_sweep_and_oracle_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("spec.json"), serde_json::to_string(&spec()).unwrap()).unwrap();
    imdd(&["sweep", "--spec", "spec.json", "--out", "s1"], d);
    imdd(&["sweep", "--spec", "spec.json", "--out", "s2", "--checkpoints"], d);
    assert_eq!(
        fs::read(d.join("s1/results.csv")).unwrap(),
        fs::read(d.join("s2/results.csv")).unwrap()
    );
    assert!(d.join("s2/checkpoints").exists());

    let args = ["oracle", "--preset", "desk", "--order", "2", "--memory", "2", "--symbols", "2000", "--fit-symbols", "2000"];
    let o1 = imdd(&args, d).stdout;
    let o2 = imdd(&args, d).stdout;
    assert_eq!(o1, o2);
    let doc: serde_json::Value = serde_json::from_slice(&o1).unwrap();
    assert!(doc["result"]["jdd"]["rate"].as_f64().unwrap() > 0.0);
}
