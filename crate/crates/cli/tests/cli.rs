use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stforecast"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/demo_scenario.json")
}

fn with_config(cfg: Value) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), cfg.to_string()).unwrap();
    dir
}

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn missing_counts_file_is_an_io_error_naming_the_path() {
    let dir = with_config(json!({"counts": "nowhere/counts.csv"}));
    let out = run(dir.path(), &["ingest", "--config", "cfg.json", "--out", "out"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("nowhere/counts.csv"), "{}", stderr(&out));
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = with_config(json!({"countz": "x.csv"}));
    let out = run(dir.path(), &["ingest", "--config", "cfg.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("countz"));
}

#[test]
fn stochastic_commands_need_a_seed() {
    let dir = with_config(json!({"scenario": demo()}));
    for cmd in ["synth", "bayes", "compare", "bootstrap"] {
        let out = run(dir.path(), &[cmd, "--config", "cfg.json", "--out", "out"]);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        assert!(stderr(&out).contains("--seed"), "{cmd}: {}", stderr(&out));
    }
}

#[test]
fn identity_weighting_leaves_the_panel_unchanged() {
    let dir = with_config(json!({
        "scenario": demo(),
        "counts": "out/synth/counts.csv",
        "weighting": {"kind": "identity"}
    }));
    ok(dir.path(), &["synth", "--config", "cfg.json", "--seed", "3", "--out", "out"]);
    ok(dir.path(), &["ingest", "--config", "cfg.json", "--out", "out"]);
    let hard = read(dir.path(), "out/panel_hard.csv");
    let soft = read(dir.path(), "out/panel_soft.csv");
    assert_eq!(hard, soft);
    assert_eq!(hard.lines().next().unwrap().split(',').count(), 18);
}

#[test]
fn demo_coefficients_are_recovered() {
    let dir = with_config(json!({
        "scenario": demo(),
        "panel": "out/synth/panel.csv",
        "truth": "out/synth/truth_model.json",
        "N": 6
    }));
    ok(dir.path(), &["synth", "--config", "cfg.json", "--seed", "1", "--out", "out"]);
    ok(dir.path(), &["fit", "--config", "cfg.json", "--out", "out"]);
    let rec: Value = serde_json::from_str(&read(dir.path(), "out/recovery.json")).unwrap();
    let err = rec["max_abs_error"].as_f64().unwrap();
    assert!(err < 1e-2, "{err}");
    for f in ["trig_model.json", "fitted.csv", "residuals.csv", "empirical_risk.txt"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    assert!(!dir.path().join("out/selection.csv").exists());

    std::fs::write(dir.path().join("select.json"), json!({"panel": "out/synth/panel.csv"}).to_string()).unwrap();
    ok(dir.path(), &["fit", "--config", "select.json", "--out", "sel"]);
    let table = read(dir.path(), "sel/selection.csv");
    assert!(table.lines().count() > 2, "{table}");
}

#[test]
fn truncation_beyond_region_count_is_rejected() {
    let dir = with_config(json!({
        "scenario": demo(),
        "panel": "out/synth/panel.csv",
        "N": 6,
        "kt": 40
    }));
    ok(dir.path(), &["synth", "--config", "cfg.json", "--seed", "2", "--out", "out"]);
    ok(dir.path(), &["fit", "--config", "cfg.json", "--out", "out"]);
    let out = run(dir.path(), &["residual", "--config", "cfg.json", "--out", "out"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("kt = 40"), "{}", stderr(&out));
}

#[test]
fn same_seed_replays_and_new_seed_differs() {
    let dir = with_config(json!({"scenario": demo()}));
    for (seed, out) in [("4", "a"), ("4", "b"), ("5", "c")] {
        ok(dir.path(), &["synth", "--config", "cfg.json", "--seed", seed, "--out", out]);
    }
    let a = read(dir.path(), "a/synth/counts.csv");
    assert_eq!(a, read(dir.path(), "b/synth/counts.csv"));
    assert_ne!(a, read(dir.path(), "c/synth/counts.csv"));
    let run_a: Value = serde_json::from_str(&read(dir.path(), "a/run_synth.json")).unwrap();
    assert_eq!(run_a["seed"], json!(4));
}

#[test]
fn residual_and_bayes_outputs() {
    let dir = with_config(json!({
        "scenario": demo(),
        "panel": "out/synth/panel.csv",
        "N": 6,
        "optimizer": {"population": 16, "generations": 10}
    }));
    for cmd in ["synth", "fit", "residual", "bayes", "forecast"] {
        ok(dir.path(), &[cmd, "--config", "cfg.json", "--seed", "6", "--out", "out"]);
    }
    for f in [
        "rho_classical.csv",
        "residual_pred_classical.csv",
        "bayes_fit.json",
        "rho_bayes.csv",
        "residual_pred_bayes.csv",
        "forecast/next_step.csv",
        "forecast/plot.csv",
    ] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let rho = read(dir.path(), "out/rho_classical.csv");
    assert_eq!(rho.lines().count(), 18);
}

#[test]
fn help_lists_every_subcommand() {
    let out = run(Path::new("."), &["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["ingest", "fit", "residual", "bayes", "forecast", "compare", "bootstrap", "synth", "report"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}
