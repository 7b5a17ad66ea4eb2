use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TOY: &str = "\
synth.n = 40
encoder.dim = 16
encoder.gat_layers = 1
train.epochs = 50
train.batch_size = 64
";

fn mmea(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("toy.cfg");
    if !cfg.exists() {
        fs::write(&cfg, TOY).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_mmea"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn out_dir(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn train_writes_one_history_row_per_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "run");
    ok(mmea(tmp.path(), &["train", "--out", &out]));
    let history = fs::read_to_string(Path::new(&out).join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines.len(), 51);
    let width = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == width));
    assert!(Path::new(&out).join("checkpoint.txt").exists());
    assert!(Path::new(&out).join("config.txt").exists());
}

#[test]
fn drop_visual_echoes_remaining_modalities() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "run");
    ok(mmea(
        tmp.path(),
        &["train", "--out", &out, "--ablate", "drop-v", "--set", "train.epochs=2"],
    ));
    let echo = fs::read_to_string(Path::new(&out).join("config.txt")).unwrap();
    assert!(echo.lines().any(|l| l == "modalities = g,r,t"), "{echo}");
}

#[test]
fn iterative_history_has_two_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "run");
    ok(mmea(
        tmp.path(),
        &[
            "train",
            "--out",
            &out,
            "--set",
            "train.iterative=true",
            "--set",
            "train.extra_epochs=5",
            "--set",
            "train.epochs=5",
        ],
    ));
    let history = fs::read_to_string(Path::new(&out).join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert!(lines.next().unwrap().starts_with("stage,"));
    let stages: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(stages.iter().filter(|s| **s == "1").count(), 5);
    assert_eq!(stages.iter().filter(|s| **s == "2").count(), 5);
}

#[test]
fn identical_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = out_dir(tmp.path(), name);
        ok(mmea(tmp.path(), &["train", "--out", &out, "--set", "train.epochs=10"]));
        ok(mmea(tmp.path(), &["eval", "--out", &out, "--set", "train.epochs=10"]));
        runs.push(out);
    }
    for file in [
        "config.txt",
        "history.csv",
        "energy.csv",
        "checkpoint.txt",
        "metrics.json",
        "metrics.csv",
    ] {
        let a = fs::read(Path::new(&runs[0]).join(file)).unwrap();
        let b = fs::read(Path::new(&runs[1]).join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (out_dir(tmp.path(), "a"), out_dir(tmp.path(), "b"));
    ok(mmea(tmp.path(), &["synth", "--out", &a, "--seed", "3"]));
    ok(mmea(tmp.path(), &["synth", "--out", &b, "--seed", "3"]));
    let data = Path::new(&a).join("data");
    assert!(data.join("train.tsv").exists() && data.join("source").is_dir() && data.join("target").is_dir());
    for entry in fs::read_dir(data.join("source")).unwrap() {
        let name = entry.unwrap().file_name();
        let x = fs::read(data.join("source").join(&name)).unwrap();
        let y = fs::read(Path::new(&b).join("data/source").join(&name)).unwrap();
        assert!(x == y, "{name:?} differs");
    }
}

#[test]
fn invalid_size_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "run");
    let res = mmea(tmp.path(), &["synth", "--out", &out, "--set", "synth.n=2"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn unknown_key_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "run");
    let res = mmea(tmp.path(), &["train", "--out", &out, "--set", "bogus=1"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn empty_sweep_is_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "run");
    let res = mmea(tmp.path(), &["sweep", "--out", &out, "--axis", "np"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn propagation_sweep_has_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "run");
    ok(mmea(
        tmp.path(),
        &[
            "sweep",
            "--out",
            &out,
            "--axis",
            "np",
            "--values",
            "0,1,2,3",
            "--set",
            "r_tex=0.5",
            "--set",
            "train.epochs=5",
        ],
    ));
    let csv = fs::read_to_string(Path::new(&out).join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn eval_without_checkpoint_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "run");
    let res = mmea(tmp.path(), &["eval", "--out", &out]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("checkpoint"));
}

#[test]
fn energy_report_after_training() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "run");
    ok(mmea(
        tmp.path(),
        &["train", "--out", &out, "--set", "train.epochs=3", "--set", "r_img=0.5"],
    ));
    ok(mmea(
        tmp.path(),
        &[
            "energy-report",
            "--out",
            &out,
            "--set",
            "train.epochs=3",
            "--set",
            "r_img=0.5",
        ],
    ));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&out).join("energy_report.json")).unwrap()).unwrap();
    assert!(json["energy_before"][0].as_f64().unwrap() >= 0.0);
    assert_eq!(json["propagation_steps"], 2);
}
