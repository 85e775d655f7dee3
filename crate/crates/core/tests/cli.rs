use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_rulformer");

const SMALL_MODEL: &[&str] = &[
    "--d-model", "8", "--heads", "2", "--blocks", "1", "--dim-ffw", "6", "--epochs", "2",
    "--window", "sliding", "--window-size", "10", "--quiet",
];

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(dir: &Path) {
    ok(dir, &["synth", "--out", "data", "--units", "8", "--life-min", "40", "--life-max", "60", "--seed", "3"]);
}

fn with_model<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(SMALL_MODEL).copied().collect()
}

#[test]
fn train_then_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    for f in ["train.txt", "test.txt", "truth.txt"] {
        assert!(d.join("data").join(f).is_file());
    }
    ok(d, &with_model(&["train", "--train", "data/train.txt", "--out", "m"]));
    for f in ["model.ckpt", "regime.json", "window.json", "train_report.json", "train_loss.csv", "val_loss.csv"] {
        assert!(d.join("m").join(f).is_file(), "missing {f}");
    }
    let loss = std::fs::read_to_string(d.join("m/train_loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    assert_eq!(loss.lines().next(), Some("epoch,loss"));

    let out = ok(d, &["evaluate", "--model-dir", "m", "--test", "data/test.txt", "--truth", "data/truth.txt", "--out", "ev"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("rmse"));
    let preds = std::fs::read_to_string(d.join("ev/predictions.csv")).unwrap();
    assert_eq!(preds.lines().next(), Some("unit_id,end_cycle,true,predicted,error"));
    assert_eq!(preds.lines().count(), 9);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("ev/eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["n_units"], 8);
    assert!(report["rmse"].as_f64().unwrap() >= 0.0);
}

#[test]
fn prepared_samples_train_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    ok(d, &["prepare", "--train", "data/train.txt", "--out", "prep", "--window", "sliding", "--window-size", "10"]);
    ok(d, &with_model(&["train", "--prepared", "prep", "--out", "a"]));
    ok(d, &with_model(&["train", "--train", "data/train.txt", "--out", "b"]));
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/model.ckpt"), read("b/model.ckpt"));
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    for out in ["r1", "r2"] {
        ok(d, &with_model(&["train", "--train", "data/train.txt", "--out", out, "--seed", "9"]));
    }
    ok(d, &with_model(&["train", "--train", "data/train.txt", "--out", "r3", "--seed", "10"]));
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    for f in ["model.ckpt", "train_report.json", "regime.json", "val_loss.csv"] {
        assert_eq!(read(&format!("r1/{f}")), read(&format!("r2/{f}")), "{f} differs");
    }
    assert_ne!(read("r1/model.ckpt"), read("r3/model.ckpt"));
}

#[test]
fn config_file_supplies_settings() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    std::fs::write(
        d.join("run.toml"),
        "seed = 4\n[paths]\ntrain = \"data/train.txt\"\nout = \"cfg\"\n\
         [window]\nmode = \"sliding\"\nsize = 8\n\
         [model]\nd_model = 8\nn_heads = 2\nn_blocks = 1\ndim_ffw = 4\n\
         [train]\nmax_epochs = 1\n",
    )
    .unwrap();
    ok(d, &["train", "--config", "run.toml", "--quiet"]);
    let window: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("cfg/window.json")).unwrap()).unwrap();
    assert_eq!(window["spec"]["pad_to"], 8);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("cfg/train_report.json")).unwrap()).unwrap();
    assert_eq!(report["model"]["d_model"], 8);
    assert_eq!(report["train_loss"].as_array().unwrap().len(), 1);
}

#[test]
fn experiment_writes_comparison_table() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    ok(d, &with_model(&["experiment", "--train", "data/train.txt", "--out", "ex", "--axis", "pos_encoding", "--replications", "1"]));
    let table = std::fs::read_to_string(d.join("ex/experiment.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "variant,rmse,score,rmse_rep1,score_rep1");
    assert!(lines[1].starts_with("fixed,"));
    assert!(lines[2].starts_with("learnable,"));
    assert!(lines[3].starts_with("improvement_pct,"));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(run(d, &["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(d, &[]).status.code(), Some(2));

    let out = run(d, &["train", "--train", "missing/train.txt", "--out", "m"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing/train.txt"));

    let out = run(d, &["evaluate", "--model-dir", "nowhere", "--test", "t", "--truth", "u", "--out", "e"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));

    std::fs::write(d.join("bad.toml"), "not_a_field = 1\n").unwrap();
    let out = run(d, &["train", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));

    assert_eq!(run(d, &["train", "--dataset", "FD009", "--train", "x"]).status.code(), Some(2));
    assert_eq!(run(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_input_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("train.txt"), "1 1 0.0 0.0\n").unwrap();
    let out = run(d, &["train", "--train", "train.txt", "--out", "m"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
