use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mec-offload"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"
policy = "mec-only"
seeds = [1, 2]

[tasks]
count = 200
"#;

#[test]
fn run_twice_gives_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for out in ["a", "b"] {
        let status = bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(out))
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
    }
    for name in [
        "outcomes_mec-only_seed1.csv",
        "outcomes_mec-only_seed2.csv",
        "aggregate_mec-only.csv",
    ] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
        assert!(a.starts_with(b"# config_hash="));
    }
}

#[test]
fn seed_override_runs_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("o");
    let st = bin()
        .args(["run", "--seed", "7", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    assert!(out.join("outcomes_mec-only_seed7.csv").exists());
    assert!(!out.join("outcomes_mec-only_seed1.csv").exists());
}

#[test]
fn missing_policy_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seeds = [1]\n");
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("policy"));
}

#[test]
fn bad_field_value_and_missing_file_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "policy = \"oracle\"\n[decision]\ncandidates = 40\n",
    );
    let out = bin()
        .args(["eval-oracle", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("decision.candidates"));

    let out = bin()
        .args(["run", "--config", "/nonexistent/exp.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("s");
    let st = bin()
        .args([
            "sweep",
            "--axis",
            "lambda",
            "--values",
            "5,10",
            "--policies",
            "local-only,mec-only",
            "--config",
        ])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let text = std::fs::read_to_string(out.join("sweep_lambda.csv")).unwrap();
    // hash line, header, 2 values x 2 policies x 2 seeds
    assert_eq!(text.lines().count(), 2 + 8);

    let bad = bin()
        .args(["sweep", "--axis", "gamma", "--values", "1", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn train_estimator_saves_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "policy = \"proposed\"\n[estimator]\nsamples = 300\nepochs = 2\nhidden = [8]\n",
    );
    let out = dir.path().join("e");
    let st = bin()
        .args(["train-estimator", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    assert!(
        mec_offload::estimator::Estimator::load(&out.join("delay_estimator_seed1.json")).is_ok()
    );
    assert!(!out.join("energy_estimator_seed1.json").exists());
}
