use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_synthsurv"))
}

fn assets() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn write_config(dir: &std::path::Path) -> std::path::PathBuf {
    let assets = assets().canonicalize().unwrap();
    let path = dir.join("experiment.toml");
    std::fs::write(
        &path,
        format!(
            r#"label = "cli-test"
sample_file = "{a}/sample_microdata.csv"
demographic_map = "{a}/demographic_map.csv"
answer_scale = "{a}/answer_scale.csv"
component_series = "{a}/component_series.csv"
survey_month = "2023-02"
horizons = [0]
temperatures = [0.0]
"#,
            a = assets.display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn synth_data_writes_a_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sample.csv");
    let status = bin()
        .args(["synth-data", "--out"])
        .arg(&out)
        .args(["--n", "25", "--seed", "9"])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 26);
    assert!(text.starts_with("id,sex,age,"));
}

#[test]
fn calibrate_runs_offline_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let output = bin()
        .arg("--config")
        .arg(&config)
        .arg("--offline")
        .arg("--out-dir")
        .arg(&out_dir)
        .arg("calibrate")
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let table = std::fs::read_to_string(out_dir.join("calibrate.csv")).unwrap();
    assert!(table.starts_with("T,n_miss,MN,diff_MN,SD,diff_SD,L1-loss,L2-loss,pcc,pval\n"));
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn missing_config_is_an_error() {
    let output = bin().arg("calibrate").output().unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("--config"));
}
