use std::process::Command;

fn vss() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vss"))
}

#[test]
fn synth_run_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"frames": 4, "grid": [8, 8], "classes": 3, "prototype_separation": 2.0, "noise_sigma": 0.2, "seed": 1}"#,
    )
    .unwrap();
    let video = tmp.path().join("video");
    let status = vss().args(["synth", "--spec"]).arg(&spec).arg("--out").arg(&video).status().unwrap();
    assert!(status.success());

    let config = tmp.path().join("config.json");
    std::fs::write(&config, r#"{"num_clusters": 4, "workers": 2}"#).unwrap();
    let out = tmp.path().join("out");
    let run = vss()
        .arg("run")
        .arg("--manifest")
        .arg(video.join("manifest.json"))
        .arg("--config")
        .arg(&config)
        .args(["--backbone", "toy", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("\"miou\""));
    assert!(out.join("frame_000003.png").exists());

    let report = tmp.path().join("report.json");
    let eval = vss()
        .args(["eval", "--pred"])
        .arg(&out)
        .arg("--gt")
        .arg(video.join("gt"))
        .arg("--report")
        .arg(&report)
        .status()
        .unwrap();
    assert!(eval.success());
    let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(parsed["miou"], 1.0);
}

#[test]
fn failures_name_the_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vss()
        .arg("run")
        .arg("--manifest")
        .arg(tmp.path().join("absent.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("MissingFile"));

    let config = tmp.path().join("bad.json");
    std::fs::write(&config, r#"{"filter_strength": 2.0}"#).unwrap();
    let spec = tmp.path().join("spec.json");
    std::fs::write(&spec, r#"{"frames": 1, "grid": [4, 4], "classes": 2, "prototype_separation": 2.0, "noise_sigma": 0.1}"#).unwrap();
    assert!(vss().args(["synth", "--spec"]).arg(&spec).arg("--out").arg(tmp.path().join("v")).status().unwrap().success());
    let out = vss()
        .arg("run")
        .arg("--manifest")
        .arg(tmp.path().join("v/manifest.json"))
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("SOutOfRange"));

    let bad_backbone = vss().args(["run", "--manifest", "m.json", "--backbone", "gpu"]).output().unwrap();
    assert!(!bad_backbone.status.success());
}
