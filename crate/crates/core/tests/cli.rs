use std::fs;

use msp_quant::cli::run;

fn msp(args: &[&str]) -> msp_quant::Result<()> {
    run(std::iter::once("msp").chain(args.iter().copied()))
}

#[test]
fn quantize_writes_model_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let float = dir.path().join("float");
    let q = dir.path().join("q");
    msp(&["init", float.to_str().unwrap(), "--arch", "mlp:8,8,2"]).unwrap();
    msp(&["quantize", float.to_str().unwrap(), q.to_str().unwrap(), "--ratio", "60:35:5"]).unwrap();
    let err = msp(&["infer", q.to_str().unwrap(), "--dataset", "moons:40"]).unwrap_err();
    assert_eq!(err.exit_code(), 2, "uncalibrated activations");
    msp(&["quantize", float.to_str().unwrap(), q.to_str().unwrap(), "--ratio", "60:35:5", "--calibrate", "moons:64"]).unwrap();
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(q.join("summary.json")).unwrap()).unwrap();
    assert!(summary.is_object());
    msp(&["infer", q.to_str().unwrap(), "--dataset", "moons:40"]).unwrap();
}

#[test]
fn bad_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let float = dir.path().join("float");
    msp(&["init", float.to_str().unwrap()]).unwrap();
    let out = dir.path().join("q");
    let err = msp(&["quantize", float.to_str().unwrap(), out.to_str().unwrap(), "--ratio", "65:30:6"]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let err = msp(&["infer", float.to_str().unwrap(), "--dataset", "moons:10"]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let err = msp(&["no-such-command"]).unwrap_err();
    assert_eq!(err.exit_code(), 2);

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"scheme": "msp", "bits": 4, "learning_rate": 1}"#).unwrap();
    assert_eq!(msp(&["train", cfg.to_str().unwrap()]).unwrap_err().exit_code(), 2);
}

#[test]
fn estimate_accepts_device_files() {
    let dir = tempfile::tempdir().unwrap();
    let device = dir.path().join("dev.json");
    let profile = serde_json::json!({
        "name": "custom",
        "dsp_total": 400,
        "lut_total": 100000,
        "bram36_total": 200.0,
        "ff_total": 200000,
        "frequency_mhz": 100.0,
        "msp_ratio": { "spot": 0.65, "fixed": 0.30, "eight": 0.05 }
    });
    fs::write(&device, serde_json::to_vec(&profile).unwrap()).unwrap();
    let out = dir.path().join("est.json");
    msp(&["estimate", "--device", device.to_str().unwrap(), "--out", out.to_str().unwrap()]).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert!(report["gops"].as_f64().unwrap() > 0.0);
}

#[test]
fn report_on_empty_directory_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    msp(&["report", dir.path().to_str().unwrap()]).unwrap();
}
