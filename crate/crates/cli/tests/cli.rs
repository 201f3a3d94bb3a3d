use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn platesmith(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_platesmith"))
        .args(args)
        .current_dir(dir)
        .env_remove("PLATESMITH_CONFIG")
        .output()
        .expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn render(dir: &Path, name: &str, count: &str, seed: &str) {
    let out = platesmith(dir, &["render-dataset", "--count", count, "--out", name, "--seed", seed]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(platesmith(d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(platesmith(d, &["ocr", "--in", "missing"]).status.code(), Some(1));
    assert_eq!(platesmith(d, &["render-dataset", "--count", "3", "--size", "abc", "--out", "x"]).status.code(), Some(1));
    assert_eq!(platesmith(d, &["--help"]).status.code(), Some(0));

    std::fs::write(d.join("bad.ppm"), "not an image").unwrap();
    let out = platesmith(d, &["ocr", "--in", "bad.ppm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.ppm"));
}

#[test]
fn render_read_evaluate_and_fid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    render(d, "ds", "12", "4");
    assert!(d.join("ds/manifest.json").is_file());

    let out = platesmith(d, &["ocr", "--in", "ds", "--out", "pred.csv"]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(d.join("pred.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with("id,text,min_confidence"));

    let eval = json_of(&platesmith(d, &["--json", "evaluate", "--pred", "pred.csv", "--truth", "ds"]));
    assert_eq!(eval["accuracy"], 1.0);
    assert_eq!(eval["total"], 12);

    let fid = json_of(&platesmith(d, &["--json", "fid", "--a", "ds", "--b", "ds"]));
    assert!(fid["fid"].as_f64().unwrap().abs() < 1e-9);

    let sweep = json_of(&platesmith(d, &["--json", "sweep", "--val", "ds"]));
    assert_eq!(sweep["rows"].as_array().unwrap().len(), 9);
}

#[test]
fn same_seed_reproduces_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    render(d, "a", "5", "17");
    render(d, "b", "5", "17");
    render(d, "c", "5", "18");
    let a = std::fs::read(d.join("a/images/000003.ppm")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b/images/000003.ppm")).unwrap());
    assert_ne!(a, std::fs::read(d.join("c/images/000003.ppm")).unwrap());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    render(d, "ds", "4", "1");
    std::fs::write(d.join("cfg.json"), r#"{"threshold": 0.3}"#).unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec!["--json", "classify", "--in", "ds"];
        args.extend_from_slice(extra);
        let out = Command::new(env!("CARGO_BIN_EXE_platesmith"))
            .args(&args)
            .current_dir(d)
            .env("PLATESMITH_CONFIG", "cfg.json")
            .output()
            .unwrap();
        json_of(&out)["threshold"].as_f64().unwrap()
    };
    assert_eq!(run(&[]), 0.3);
    assert_eq!(run(&["--threshold", "0.6"]), 0.6);
    assert_eq!(json_of(&platesmith(d, &["--json", "classify", "--in", "ds"]))["threshold"], 0.8);

    std::fs::write(d.join("bad.json"), r#"{"thresh": 1}"#).unwrap();
    assert_eq!(platesmith(d, &["--config", "bad.json", "classify", "--in", "ds"]).status.code(), Some(1));
}

#[test]
fn pseudolabel_round_writes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    render(d, "manual", "10", "1");
    render(d, "pool", "15", "2");
    let rep = json_of(&platesmith(
        d,
        &["--json", "pseudolabel", "--labeled", "manual", "--pool", "pool", "--out", "round1", "--tau", "0.8"],
    ));
    let accepted = rep["accepted"].as_u64().unwrap();
    assert!(accepted > 0);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(d.join("round1/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["splits"]["train"].as_array().unwrap().len() as u64, 10 + accepted);

    // Re-running into the same directory refuses to clobber it.
    let again = platesmith(d, &["pseudolabel", "--labeled", "manual", "--pool", "pool", "--out", "round1"]);
    assert_eq!(again.status.code(), Some(1));
}

#[test]
fn train_then_sample() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = platesmith(d, &["render-dataset", "--count", "8", "--size", "32x16", "--out", "small"]);
    assert!(out.status.success());
    let t = json_of(&platesmith(d, &["--json", "train", "--data", "small", "--out", "ck.json", "--steps", "4"]));
    assert_eq!(t["steps"], 4);
    let s = json_of(&platesmith(d, &["--json", "sample", "--checkpoint", "ck.json", "--count", "2", "--out", "gen"]));
    assert_eq!(s["count"], 2);
    assert!(d.join("gen/images/000001.ppm").is_file());

    // 193x72 renders do not fit the 32x16 network.
    render(d, "big", "2", "1");
    let bad = platesmith(d, &["train", "--data", "big", "--out", "x.json", "--steps", "2"]);
    assert_eq!(bad.status.code(), Some(2));
}
