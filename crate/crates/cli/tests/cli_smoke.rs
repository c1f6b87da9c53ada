//! End-to-end exercises of the `weakheight` binary on the smoke preset:
//! the full synth/train/eval/predict/report pipeline, dataset determinism,
//! the exit-code contract, and the self-documenting help text.

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

const BIN: &str = env!("CARGO_BIN_EXE_weakheight");

fn weakheight(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("WEAKHEIGHT_CACHE")
        .output()
        .expect("binary spawns")
}

fn run_ok(args: &[&str]) -> String {
    let output = weakheight(args);
    assert!(
        output.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout).expect("utf-8 stdout")
}

fn assert_exit(args: &[&str], code: i32, stderr_needle: &str) {
    let output = weakheight(args);
    assert_eq!(
        output.status.code(),
        Some(code),
        "{args:?}: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains(stderr_needle),
        "stderr of {args:?} should mention {stderr_needle:?}, got: {stderr}"
    );
}

fn path_str(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

#[test]
fn smoke_pipeline_runs_end_to_end_quickly() {
    let started = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let run = root.path().join("run");
    let eval_dir = root.path().join("eval");
    let pred_dir = root.path().join("pred");
    let report_dir = root.path().join("report");

    run_ok(&[
        "synth",
        "--profile",
        "smoke",
        "--seed",
        "11",
        "--out",
        path_str(&data),
    ]);
    assert!(data.join("manifest.json").is_file());
    assert!(data.join("run-config.json").is_file());
    assert!(data.join("train-0000-alpha.wkh1").is_file());

    run_ok(&[
        "train",
        "--profile",
        "smoke",
        "--seed",
        "11",
        "--data",
        path_str(&data),
        "--out",
        path_str(&run),
    ]);
    let checkpoint = run.join("model.wkhc");
    assert!(checkpoint.is_file());
    let log = std::fs::read_to_string(run.join("train-log.jsonl")).unwrap();
    assert_eq!(
        log.lines()
            .filter(|l| l.contains("\"kind\":\"val\""))
            .count(),
        2,
        "one validation record per smoke epoch"
    );

    run_ok(&[
        "eval",
        "--checkpoint",
        path_str(&checkpoint),
        "--data",
        path_str(&data),
        "--out",
        path_str(&eval_dir),
    ]);
    assert!(eval_dir.join("metrics.csv").is_file());
    let report = weakheight_core::evalsuite::load_report_json(&eval_dir.join("report.json"))
        .expect("report parses back");
    assert!(report.combined_avg.is_finite());

    // Prediction preserves the argument order and writes one CSV + PNG per
    // patch; a branch index outside the model is a config error.
    let patch_b = data.join("test-0001-alpha.wkh1");
    let patch_a = data.join("test-0000-alpha.wkh1");
    let stdout = run_ok(&[
        "predict",
        "--checkpoint",
        path_str(&checkpoint),
        "--out",
        path_str(&pred_dir),
        path_str(&patch_b),
        path_str(&patch_a),
    ]);
    let first = stdout
        .find("test-0001-alpha")
        .expect("first patch reported");
    let second = stdout
        .find("test-0000-alpha")
        .expect("second patch reported");
    assert!(first < second, "outputs follow the argument order");
    for stem in ["test-0001-alpha", "test-0000-alpha"] {
        assert!(pred_dir.join(format!("{stem}-height.csv")).is_file());
        assert!(pred_dir.join(format!("{stem}-pred.png")).is_file());
    }
    run_ok(&[
        "predict",
        "--checkpoint",
        path_str(&checkpoint),
        "--out",
        path_str(&pred_dir),
        "--branch",
        "1",
        path_str(&patch_a),
    ]);
    assert_exit(
        &[
            "predict",
            "--checkpoint",
            path_str(&checkpoint),
            "--out",
            path_str(&pred_dir),
            "--branch",
            "9",
            path_str(&patch_a),
        ],
        2,
        "config error",
    );

    run_ok(&[
        "report",
        "--checkpoint",
        path_str(&checkpoint),
        "--data",
        path_str(&data),
        "--out",
        path_str(&report_dir),
        "--per-set",
        "1",
    ]);
    for suffix in ["pred", "gt", "error"] {
        assert!(report_dir
            .join("maps")
            .join(format!("alpha-00-{suffix}.png"))
            .is_file());
    }
    assert!(report_dir
        .join("maps")
        .join("alpha-00-buildings.csv")
        .is_file());

    assert!(
        started.elapsed().as_secs() < 120,
        "smoke pipeline should stay well under two minutes"
    );
}

#[test]
fn synthesis_is_deterministic_per_seed() {
    let root = tempfile::tempdir().unwrap();
    let once = root.path().join("once");
    let twice = root.path().join("twice");
    for dir in [&once, &twice] {
        run_ok(&[
            "synth",
            "--profile",
            "smoke",
            "--seed",
            "23",
            "--out",
            path_str(dir),
        ]);
    }
    for file in [
        "manifest.json",
        "train-0000-alpha.wkh1",
        "val-0000-alpha.wkh1",
    ] {
        let a = std::fs::read(once.join(file)).unwrap();
        let b = std::fs::read(twice.join(file)).unwrap();
        assert!(
            a == b,
            "{file} differs between identically seeded syntheses"
        );
    }
}

#[test]
fn exit_codes_distinguish_config_data_and_numeric_failures() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    run_ok(&[
        "synth",
        "--profile",
        "smoke",
        "--seed",
        "29",
        "--out",
        path_str(&data),
    ]);

    // Config errors: invalid hyperparameter, malformed config file.
    assert_exit(
        &[
            "train",
            "--profile",
            "smoke",
            "--lr",
            "0",
            "--data",
            path_str(&data),
            "--out",
            path_str(&root.path().join("x1")),
        ],
        2,
        "config error",
    );
    let bad_config = root.path().join("bad.json");
    std::fs::write(&bad_config, r#"{ "no_such_key": 1 }"#).unwrap();
    assert_exit(
        &[
            "train",
            "--config",
            path_str(&bad_config),
            "--data",
            path_str(&data),
            "--out",
            path_str(&root.path().join("x2")),
        ],
        2,
        "config error",
    );

    // Data errors: missing dataset directory, missing checkpoint.
    assert_exit(
        &[
            "train",
            "--profile",
            "smoke",
            "--data",
            path_str(&root.path().join("nowhere")),
            "--out",
            path_str(&root.path().join("x3")),
        ],
        3,
        "data error",
    );
    assert_exit(
        &[
            "eval",
            "--checkpoint",
            path_str(&root.path().join("ghost.wkhc")),
            "--data",
            path_str(&data),
            "--out",
            path_str(&root.path().join("x4")),
        ],
        3,
        "data error",
    );

    // Numeric failure: an absurd learning rate blows the loss up at the
    // first step, which must abort with the non-finite component named.
    assert_exit(
        &[
            "train",
            "--profile",
            "smoke",
            "--seed",
            "29",
            "--lr",
            "1e30",
            "--data",
            path_str(&data),
            "--out",
            path_str(&root.path().join("x5")),
        ],
        4,
        "numeric failure",
    );
}

#[test]
fn long_help_documents_every_config_key_and_the_exit_codes() {
    let help = run_ok(&["--help"]);
    for needle in [
        "WEAKHEIGHT_CACHE",
        "train.lambda_tau_mid",
        "train.constraint_type",
        "model.encoder_widths",
        "schema_version",
        "EXIT CODES",
    ] {
        assert!(help.contains(needle), "--help should mention {needle}");
    }
}
