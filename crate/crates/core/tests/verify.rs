use scalebio::harness::{cli_verify, ExperimentConfig, FaultInjection, Preset, VerifyOptions};

fn config(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(Preset::QuadVerify);
    cfg.out = dir.to_path_buf();
    cfg
}

#[test]
fn clean_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = cli_verify(&config(dir.path()), &VerifyOptions::default()).unwrap();
    let failed: Vec<_> = report.failures().map(|v| v.name.clone()).collect();
    assert!(failed.is_empty(), "{failed:?}");
    assert!(dir.path().join("penalty_gaps.csv").exists());
    assert!(dir.path().join("theorem_scaling.csv").exists());
}

#[test]
fn corrupted_inner_gradient_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let opts = VerifyOptions {
        fault: Some(FaultInjection::CorruptInnerGradient),
    };
    let report = cli_verify(&config(dir.path()), &opts).unwrap();
    let failed: Vec<_> = report.failures().map(|v| v.name.as_str()).collect();
    assert!(failed.contains(&"gradient inner_w [quadratic]"), "{failed:?}");
    assert!(failed.iter().all(|n| n.starts_with("gradient inner_w")), "{failed:?}");
}
