use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
seed = 1
data.samples = 600
data.dims = [3, 3]
data.snr = [2.0, 1.0]
data.latent_dim = 2
encoder.modality_hidden = 16
encoder.modality_out = 8
encoder.fusion_hidden = 16
encoder.embedding_dim = 8
train.steps = 150
train.batch_size = 16
train.anchors_per_step = 16
train.pool_size = 32
probe.epochs = 200
"#;

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tuplelab")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn trained_encoder_probes_above_chance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    assert_eq!(run(&["gen-data", "--config", &cfg, "--out", &out("data")]).0, 0);
    assert_eq!(run(&["train", "--config", &cfg, "--out", &out("train")]).0, 0);
    let ckpt = out("train/encoder.ckpt");
    let data = out("data/data.bin");
    let (code, err) = run(&["probe", "--checkpoint", &ckpt, "--data", &data, "--config", &cfg, "--out", &out("probe")]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(tmp.path().join("probe/probe.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let accuracy: f64 = row[1].parse().unwrap();
    assert!(accuracy > 0.4, "{csv}");
    let manifest = std::fs::read_to_string(tmp.path().join("train/manifest.txt")).unwrap();
    assert!(manifest.contains("run.command"));
}

#[test]
fn configuration_problems_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "train.stepz = 3\n");
    let (code, err) = run(&["train", "--config", &bad]);
    assert_eq!(code, 1);
    assert!(err.contains("stepz"), "{err}");
    assert_eq!(run(&["train", "--config", "/nonexistent/run.toml"]).0, 1);
    assert_eq!(run(&["no-such-command"]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn invalid_values_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "proposal.alpha = [0.5, 0.5]\n");
    let out = tmp.path().join("out").to_string_lossy().into_owned();
    assert_eq!(run(&["train", "--config", &cfg, "--out", &out]).0, 1);
}

#[test]
fn missing_inputs_are_runtime_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("out").to_string_lossy().into_owned();
    let (code, _) = run(&["probe", "--checkpoint", "/nonexistent.ckpt", "--data", "/nonexistent.bin", "--config", &cfg, "--out", &out]);
    assert_eq!(code, 2);
}

#[test]
fn out_flag_beats_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let flag = tmp.path().join("flag");
    let env = tmp.path().join("env");
    let status = Command::new(env!("CARGO_BIN_EXE_tuplelab"))
        .args(["gen-data", "--config", &cfg, "--out", &flag.to_string_lossy()])
        .env("OUTPUT_DIR", &env)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(flag.join("data.bin").exists());
    assert!(!env.exists());
    let status = Command::new(env!("CARGO_BIN_EXE_tuplelab"))
        .args(["gen-data", "--config", &cfg])
        .env("OUTPUT_DIR", &env)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(env.join("data.bin").exists());
}
