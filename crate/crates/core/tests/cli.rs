use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hetdim() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hetdim"));
    c.env_remove("HETDIM_LOG");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn odd_k_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("odd.json");
    fs::write(&cfg, r#"{"experiment": "hetdim_symmetric", "schedule": [{"k": 17, "m": 12}]}"#).unwrap();
    let o = hetdim().arg("run").arg("--config").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("itinerary parity: k must be even"), "{}", stderr(&o));
}

#[test]
fn malformed_json_and_missing_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\"experiment\": ").unwrap();
    let o = hetdim().args(["check-model", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&o), 2);
    let o = hetdim().arg("replay").arg(dir.path().join("absent.json")).output().unwrap();
    assert_eq!(code(&o), 2);
    let o = hetdim().arg("frobnicate").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn invalid_log_level_exits_2() {
    let o = hetdim()
        .env("HETDIM_LOG", "verbose")
        .args(["check-model", "--config"])
        .arg(configs().join("hetdim_symmetric.json"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("HETDIM_LOG"));
}

#[test]
fn check_model_passes_on_the_default_model() {
    let o = hetdim()
        .env("HETDIM_LOG", "debug")
        .args(["check-model", "--config"])
        .arg(configs().join("hetdim_symmetric.json"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["first_failure"].is_null());
}

#[test]
fn emitted_certificates_replay_and_tampering_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("one.json");
    fs::write(&cfg, r#"{"experiment": "hetdim_symmetric", "schedule": [{"k": 16, "m": 12}]}"#).unwrap();
    let out = dir.path().join("out");
    let o = hetdim().arg("run").arg("--config").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cert = out.join("certificates/cycle_k16_m12.json");

    let first = hetdim().arg("replay").arg(&cert).output().unwrap();
    let second = hetdim().arg("replay").arg(&cert).output().unwrap();
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stdout));
    assert_eq!(first.stdout, second.stdout);

    let mut value: serde_json::Value = serde_json::from_slice(&fs::read(&cert).unwrap()).unwrap();
    let mu = value["parameters"]["mu"].as_f64().unwrap();
    value["parameters"]["mu"] = serde_json::json!(mu + 1e-3);
    let tampered = dir.path().join("tampered.json");
    fs::write(&tampered, serde_json::to_vec_pretty(&value).unwrap()).unwrap();
    let o = hetdim().arg("replay").arg(&tampered).output().unwrap();
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stdout));

    value["schema_version"] = serde_json::json!("two");
    fs::write(&tampered, serde_json::to_vec_pretty(&value).unwrap()).unwrap();
    let o = hetdim().arg("replay").arg(&tampered).output().unwrap();
    assert_eq!(code(&o), 2);
}
