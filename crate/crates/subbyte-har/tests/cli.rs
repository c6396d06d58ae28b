//! End-to-end checks of the command-line interface: exit codes, the
//! gen-data -> train -> compile -> eval pipeline, engine agreement, and
//! byte-identical artifacts for identical invocations.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_subbyte-har"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn subbyte-har")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn help_exits_zero_for_every_command() {
    for cmd in [
        "gen-data", "train", "grid", "nas", "compile", "eval", "adaptive", "sweep", "report",
    ] {
        let out = bin().args([cmd, "--help"]).output().unwrap();
        assert!(out.status.success(), "{cmd} --help");
        assert!(!out.stdout.is_empty());
    }
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
}

#[test]
fn usage_errors_exit_one() {
    let out = bin().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["gen-data", "--bogus-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_two_and_training_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["eval", "--model", "missing.sbht", "--data", "missing.csv", "--out", "."]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: kind="), "{err}");

    // A model trained for zero epochs has no input calibration, which is a
    // compile-stage failure (exit 3).
    let out = run_in(
        dir.path(),
        &["gen-data", "--out", ".", "--per-class", "8", "--classes", "2", "--length", "32"],
    );
    assert_ok(&out, "gen-data");
    let out = run_in(
        dir.path(),
        &["train", "--data", "synth.csv", "--out", ".", "--epochs", "0", "--couts", "4,4"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_gen_train_compile_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_ok(
        &run_in(d, &["gen-data", "--out", ".", "--per-class", "20", "--classes", "3", "--length", "32"]),
        "gen-data",
    );
    assert_ok(
        &run_in(
            d,
            &[
                "train", "--data", "synth.csv", "--out", ".", "--epochs", "8", "--lr", "0.01",
                "--couts", "4,8", "--bits", "4",
            ],
        ),
        "train",
    );
    assert!(d.join("model.sbht").exists());
    assert!(d.join("model.history.csv").exists());
    assert_ok(
        &run_in(d, &["compile", "--model", "model.sbht", "--out", ".", "--dump-json"]),
        "compile",
    );
    assert!(d.join("model.sbh").exists());
    assert!(d.join("model.json").exists());

    let int_out = run_in(d, &["eval", "--model", "model.sbh", "--data", "synth.csv", "--out", ".", "--engine", "integer"]);
    assert_ok(&int_out, "eval integer");
    let float_out = run_in(d, &["eval", "--model", "model.sbht", "--data", "synth.csv", "--out", ".", "--engine", "float"]);
    assert_ok(&float_out, "eval float");
    assert!(d.join("confusion.csv").exists());

    // Integer and float engines agree on the reported metrics line
    // (same argmax behavior the kernel oracle test established).
    let metrics_line = |o: &Output| {
        String::from_utf8_lossy(&o.stdout)
            .lines()
            .find(|l| l.starts_with("accuracy="))
            .unwrap()
            .to_string()
    };
    assert_eq!(metrics_line(&int_out), metrics_line(&float_out));
}

#[test]
fn identical_invocations_produce_identical_artifacts() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for d in [dir_a.path(), dir_b.path()] {
        assert_ok(
            &run_in(d, &["gen-data", "--out", ".", "--per-class", "10", "--classes", "2", "--length", "32"]),
            "gen-data",
        );
        assert_ok(
            &run_in(
                d,
                &["train", "--data", "synth.csv", "--out", ".", "--epochs", "4", "--lr", "0.01", "--couts", "4,4"],
            ),
            "train",
        );
        assert_ok(&run_in(d, &["compile", "--model", "model.sbht", "--out", "."]), "compile");
    }
    for name in ["synth.csv", "model.sbht", "model.sbh", "model.history.csv"] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical invocations");
    }
}

#[test]
fn sweep_and_report_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_ok(
        &run_in(d, &["gen-data", "--out", ".", "--per-class", "16", "--classes", "3", "--length", "32", "--easy-fraction", "0.8"]),
        "gen-data",
    );
    assert_ok(
        &run_in(
            d,
            &[
                "grid", "--data", "synth.csv", "--out", ".", "--couts", "4,8", "--ks", "7",
                "--pools", "2", "--bits", "8", "--epochs", "6", "--lr", "0.01", "--jobs", "2",
            ],
        ),
        "grid",
    );
    assert!(d.join("results.csv").exists());
    assert_ok(&run_in(d, &["report", "--out", "."]), "report");
    assert!(d.join("front_memory.csv").exists());
    assert!(d.join("front_cycles.csv").exists());

    assert_ok(
        &run_in(
            d,
            &[
                "train", "--data", "synth.csv", "--out", ".", "--epochs", "6", "--lr", "0.01",
                "--couts", "8,8", "--slimmable",
            ],
        ),
        "slimmable train",
    );
    assert_ok(
        &run_in(d, &["compile", "--model", "model.sbht", "--out", ".", "--widths", "0.5,1"]),
        "multi-width compile",
    );
    assert_ok(
        &run_in(d, &["sweep", "--model", "model.sbh", "--data", "synth.csv", "--out", ".", "--w-small", "0.5"]),
        "sweep",
    );
    let sweep = std::fs::read_to_string(d.join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("threshold,score,p_e,avg_cost,predicted_cost"));
    assert_eq!(sweep.lines().count(), 102); // header + 101 thresholds
}

#[test]
fn env_var_sets_default_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("SUBBYTE_HAR_DIR", dir.path())
        .args(["gen-data", "--per-class", "4", "--classes", "2", "--length", "16"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("synth.csv").exists());
}
