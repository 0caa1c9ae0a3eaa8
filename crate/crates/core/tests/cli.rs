use std::path::Path;
use std::process::Command;

fn scalebio(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_scalebio")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn short_run_writes_outputs_and_fails_its_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "preset = \"denoise\"\n[schedule]\nsteps = 200\n");
    let out = dir.path().join("out");
    let res = scalebio(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    for name in ["trajectory.csv", "weights.svg", "report.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["preset"], "denoise");
    assert_eq!(report["verdicts"][0]["name"], "p_corrupted");
    assert_eq!(report["verdicts"][0]["pass"], false);
    assert_eq!(report["final_weights"].as_array().unwrap().len(), 2);
}

#[test]
fn default_denoise_run_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = scalebio(&["run", "--preset", "denoise", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));
    let header = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(header.starts_with("step,"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "preset = \"denoise\"\n[schedule]\nstep = 10\n");
    let res = scalebio(&["run", "--config", &config]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("config error"));
}

#[test]
fn run_without_preset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let res = scalebio(&["run", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn unknown_preset_is_a_config_error() {
    assert_eq!(scalebio(&["run", "--preset", "nope"]).status.code(), Some(2));
}

#[test]
fn verify_rejects_another_preset() {
    let res = scalebio(&["verify", "--preset", "denoise"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("quad-verify"));
}
