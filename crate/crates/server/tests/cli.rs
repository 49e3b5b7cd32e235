use std::fs;

use breathlens::xcm::{save_model, XcmConfig, XcmModel};
use breathlens_server::cli::run;

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("breathlens").chain(list.iter().copied()).map(String::from).collect()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(args(&[])), 1);
    assert_eq!(run(args(&["frobnicate"])), 1);
    assert_eq!(run(args(&["segment"])), 1);
    assert_eq!(run(args(&["--help"])), 0);
}

#[test]
fn missing_record_is_a_data_error() {
    assert_eq!(run(args(&["segment", "--record", "missing.csv"])), 2);
}

#[test]
fn synth_segment_explain_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    assert_eq!(run(args(&["synth", "--out", d, "--records", "2", "--duration-s", "30"])), 0);
    assert!(data.join("rec00.csv").is_file());
    assert!(data.join("rec01.labels.csv").is_file());

    let segs = dir.path().join("segs.csv");
    let rec = data.join("rec00.csv");
    assert_eq!(
        run(args(&["segment", "--record", rec.to_str().unwrap(), "--out", segs.to_str().unwrap()])),
        0
    );
    let text = fs::read_to_string(&segs).unwrap();
    assert!(text.starts_with("start_idx,end_idx,label"));
    assert!(text.lines().count() > 10);

    let model = dir.path().join("m.xcm");
    let cfg = XcmConfig {
        filters_2d: 2,
        filters_1d: 2,
        filters_final: 4,
        ..XcmConfig::default()
    };
    save_model(&XcmModel::build(&cfg, 1).unwrap(), &model).unwrap();
    let out = dir.path().join("e.json");
    let code = run(args(&[
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--record",
        rec.to_str().unwrap(),
        "--breath",
        "17",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let e: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(e["combined"].as_array().unwrap().len(), 625);
    assert_eq!(e["breath_id"], "rec00:17");

    let code = run(args(&[
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--record",
        rec.to_str().unwrap(),
        "--breath",
        "100000",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 2);

    fs::write(dir.path().join("bad.xcm"), b"nope").unwrap();
    let code = run(args(&[
        "eval",
        "--model",
        dir.path().join("bad.xcm").to_str().unwrap(),
        "--data",
        d,
    ]));
    assert_eq!(code, 2);
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    assert_eq!(run(args(&["synth", "--out", d, "--records", "4", "--duration-s", "20", "--seed", "3"])), 0);
    let model = dir.path().join("m.xcm");
    let m = model.to_str().unwrap();
    let code = run(args(&[
        "train", "--data", d, "--folds", "2", "--batch", "32", "--epochs", "1", "--seed", "7",
        "--out", m, "--filters-2d", "2", "--filters-1d", "2", "--filters-final", "4",
        "--validation-records", "1", "--test-records", "1", "--quiet",
    ]));
    assert_eq!(code, 0);
    assert!(model.is_file());
    assert!(dir.path().join("m.report.json").is_file());
    let manifest = fs::read_to_string(dir.path().join("m.split.csv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.ends_with(",test")).count(), 1);

    let report = dir.path().join("r.json");
    assert_eq!(run(args(&["eval", "--model", m, "--data", d, "--out", report.to_str().unwrap()])), 0);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["records"].as_array().unwrap().len(), 1);

    let bad = run(args(&[
        "train", "--data", d, "--folds", "1", "--epochs", "1", "--out", m,
    ]));
    assert_eq!(bad, 1);
}
