use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const REFERENCE: &str = include_str!("../../core/scenarios/two_walkers.yaml");

fn patchsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchsim"))
        .args(args)
        .env_remove("PATCHSIM_OUT_ROOT")
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let text = REFERENCE
        .replace("\"800\"", "\"64\"")
        .replace("\"600\"", "\"48\"")
        .replace("max_frames: 300", "max_frames: 3");
    let p = dir.join("scenario.yaml");
    fs::write(&p, text).unwrap();
    p
}

fn with_patch(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(small_config(dir)).unwrap()
        + "\npatches:\n  - name: wall\n    transform:\n      location: {x: -85.02, y: 160, z: 1.6}\n      rotation: {yaw: 180}\n    size: {width: 1.5, height: 1.5}\n";
    let p = dir.join("patched.yaml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn frames_in(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("frame_"))
        .count()
}

#[test]
fn generate_and_annotate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    let o = patchsim(&["generate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("manifest.json").is_file());
    assert_eq!(frames_in(&out.join("0_sensor.camera.rgb")), 6); // rgb plus instance companion
    assert_eq!(frames_in(&out.join("2_sensor.camera.instance_segmentation")), 3);

    let o = patchsim(&["annotate", "--run", s(&out)]);
    assert!(o.status.success());
    assert!(out.join("annotations/kwcoco.json").is_file());
    let o = patchsim(&["annotate", "--run", s(&out), "--format", "mots"]);
    assert!(o.status.success());
    assert!(out.join("annotations/mots/instances_txt").is_dir());
}

#[test]
fn max_frames_underscore_alias() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    let o = patchsim(&["generate", "--config", s(&cfg), "--max_frames", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(frames_in(&out.join("2_sensor.camera.instance_segmentation")), 1);
    assert_eq!(frames_in(&out.join("1_sensor.camera.depth")), 3);
}

#[test]
fn out_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let root = tmp.path().join("root");
    let o = Command::new(env!("CARGO_BIN_EXE_patchsim"))
        .args(["--config", s(&cfg), "generate", "--max-frames", "1"])
        .env("PATCHSIM_OUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(root.join("_out/manifest.json").is_file());
}

#[test]
fn validate_config_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let o = patchsim(&["validate-config", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ok"));

    let bad = tmp.path().join("bad.yaml");
    fs::write(&bad, REFERENCE.replace("fps: 30", "fps: 0")).unwrap();
    let o = patchsim(&["validate-config", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));

    let broken = tmp.path().join("broken.yaml");
    fs::write(&broken, "carla: [unclosed").unwrap();
    assert_eq!(patchsim(&["validate-config", "--config", s(&broken)]).status.code(), Some(2));

    let missing = tmp.path().join("missing.yaml");
    assert_eq!(patchsim(&["generate", "--config", s(&missing)]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = patchsim(&["annotate", "--run", s(&empty)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let png = tmp.path().join("p.png");
    image::RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 255])).save(&png).unwrap();
    let o = patchsim(&["patch", "--method", "sideways", "--patch", s(&png), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(patchsim(&["generate"]).status.code(), Some(2));
}

#[test]
fn patch_then_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = with_patch(tmp.path());
    let png = tmp.path().join("p.png");
    image::RgbImage::from_pixel(4, 4, image::Rgb([255, 0, 255])).save(&png).unwrap();
    let out = tmp.path().join("patched");
    let o = patchsim(&[
        "patch", "--config", s(&cfg), "--method", "digital", "--patch", s(&png), "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("base/manifest.json").is_file());
    assert_eq!(frames_in(&out.join("0_sensor.camera.rgb")), 3);

    let report = tmp.path().join("ablation.json");
    let o = patchsim(&["eval", "ablation", "--run", s(&out), "--window", "3", "--output", s(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert!(v.to_string().contains("removal_rate"));

    let o = patchsim(&[
        "eval", "masks", "--run", s(&out), "--benign", s(&out.join("base")), "--stats-frames", "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 3);
}
