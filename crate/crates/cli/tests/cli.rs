//! Drives the `safe` binary end to end on a tiny synthetic table.

use std::path::Path;
use std::process::{Command, Output};

fn safe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = safe(args);
    assert!(
        out.status.success(),
        "safe {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn staged_commands_chain_together() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let raw = d.join("flows.csv");
    ok(&["synth", "--rows", "800", "--informative", "12", "--noise", "4", "--out", p(&raw)]);
    let prep = d.join("prep");
    ok(&["preprocess", "--input", p(&raw), "--attack-values", "1", "--seed", "3", "--out", p(&prep)]);
    for f in ["train.csv", "val.csv", "test.csv", "normalizer.json"] {
        assert!(prep.join(f).exists(), "{f} missing");
    }
    let ranking = d.join("ranking.json");
    ok(&["select-features", "--train", p(&prep.join("train.csv")), "--k", "10", "--out", p(&ranking)]);
    let layout = d.join("layout.json");
    ok(&[
        "fit-layout",
        "--train",
        p(&prep.join("train.csv")),
        "--ranking",
        p(&ranking),
        "--normalizer",
        p(&prep.join("normalizer.json")),
        "--grid",
        "4",
        "--iterations",
        "300",
        "--out",
        p(&layout),
    ]);
    let mut images = Vec::new();
    for part in ["train", "val", "test"] {
        let img = d.join(format!("{part}.img"));
        ok(&["map", "--layout", p(&layout), "--input", p(&prep.join(format!("{part}.csv"))), "--out", p(&img)]);
        images.push(img);
    }
    let model = d.join("mae.bin");
    ok(&["train-mae", "--images", p(&images[0]), "--epochs", "2", "--latent", "4", "--out", p(&model)]);
    let mut latents = Vec::new();
    for (img, part) in images.iter().zip(["train", "val", "test"]) {
        let z = d.join(format!("{part}_z.csv"));
        ok(&["extract", "--model", p(&model), "--images", p(img), "--out", p(&z)]);
        latents.push(z);
    }
    let detector = d.join("detector.json");
    ok(&[
        "fit-detector",
        "--latents",
        p(&latents[0]),
        "--val-latents",
        p(&latents[1]),
        "--budget",
        "4",
        "--out",
        p(&detector),
    ]);
    let scores = d.join("scores.csv");
    ok(&["score", "--detector-file", p(&detector), "--latents", p(&latents[2]), "--out", p(&scores)]);
    let text = std::fs::read_to_string(&scores).unwrap();
    let test_rows = std::fs::read_to_string(prep.join("test.csv")).unwrap().lines().count() - 1;
    assert_eq!(text.lines().count(), test_rows + 1);
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "[data.synthetic]\nn_rows = 600\nn_informative = 12\nn_noise = 4\n\
         [features]\nk = 10\n[layout]\ngrid_size = 4\niterations = 300\n\
         [mae]\nepochs = 2\nlatent_dim = 4\n[detector]\nbudget = 4\n\
         [evaluation]\nlatency_samples = 10\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let stdout = ok(&["run", "--config", p(&config), "--out", p(&out)]);
    assert!(stdout.contains("f1"));
    for f in [
        "report.json",
        "report.txt",
        "normalizer.json",
        "ranking.json",
        "layout.json",
        "mae.bin",
        "detector.json",
        "scores.csv",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn bad_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[data.synthetic]\nn_rows = 600\n[features]\nk = 99\n").unwrap();
    assert_eq!(safe(&["run", "--config", p(&config)]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_code_three() {
    let out = safe(&["preprocess", "--input", "/nonexistent/flows.csv", "--attack-values", "1", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(3));
}
