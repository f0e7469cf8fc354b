use std::path::{Path, PathBuf};
use std::process::Command;

use napinn_harness::{ExperimentConfig, Preset};

fn napinn() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_napinn"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

#[test]
fn shipped_configs_parse() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
    let full = ExperimentConfig::load(&configs().join("full.toml")).unwrap();
    assert_eq!(
        full.seeds.len(),
        ExperimentConfig::preset(Preset::Full).seeds.len()
    );
}

#[test]
fn bad_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "no_such_key = 1\n").unwrap();
    let status = napinn()
        .args(["generate", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(2));
}

#[test]
fn plots_and_evaluate_need_results() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["plots", "evaluate"] {
        let out = napinn().arg(sub).arg("--out").arg(dir.path()).output().unwrap();
        assert_eq!(out.status.code(), Some(1), "{sub}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    }
}

#[test]
fn train_evaluate_and_plot_one_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(
        &cfg,
        r#"
benchmarks = ["allen_cahn"]
seeds = [0]
snapshots = 3
solver_grid = 64
eval_grid = 20

[train.schedule]
warmup = 20
ebm_init = 20
joint = 30
collocation_batch = 32
data_batch = 64
ebm_batch = 64
log_every = 10
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let train = napinn()
        .args([
            "train",
            "--ratio",
            "0.1",
            "--seed",
            "1",
            "--seed-offset",
            "2",
            "--jobs",
            "1",
            "--config",
        ])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        train.status.success(),
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    let run = out.join("allen_cahn/napinn/0.10/3");
    for f in [
        "metrics.json",
        "dataset.csv",
        "trace.csv",
        "gate.csv",
        "density.csv",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let trained: serde_json::Value = serde_json::from_slice(&train.stdout).unwrap();

    // config comes from the echo in the output directory
    let eval = napinn()
        .arg("evaluate")
        .arg("--out")
        .arg(&out)
        .arg("--run")
        .arg(&run)
        .output()
        .unwrap();
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let again: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(trained, again);

    assert!(napinn()
        .arg("evaluate")
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status
        .success());
    assert!(out.join("summary.csv").is_file());
    assert!(napinn()
        .arg("plots")
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status
        .success());
    assert!(out.join("plots/robustness_allen_cahn.csv").is_file());
}
