use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn posekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posekit")).args(args).output().expect("spawn posekit")
}

fn posekit_env(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posekit"))
        .args(args)
        .env("POSEKIT_THREADS", threads)
        .output()
        .expect("spawn posekit")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON report")
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("scene");
    let mut args = vec!["synth", "--out", s(&out)];
    args.extend_from_slice(extra);
    let report = json(&posekit(&args));
    assert_eq!(report["kind"], "synth");
    out.join("manifest.json")
}

#[test]
fn retrieve_finds_the_prompted_object() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &["--seed", "3", "--proposals", "4"]);
    let r = json(&posekit(&["retrieve", "--manifest", s(&manifest), "--prompt", "prompt_0"]));
    assert_eq!(r["retrieval"]["best_proposal"], r["gt_proposal"]);
    assert_eq!(r["ranking"][0], r["gt_proposal"]);
    assert_eq!(r["top_k"], 3);
    assert_eq!(r["sigma"], 0.9);
}

#[test]
fn usage_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &["--views", "3"]);
    let m = s(&manifest);

    let out = posekit(&["retrieve", "--manifest", m, "--prompt", "missing"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown prompt"));

    let cases: [&[&str]; 6] = [
        &["retrieve", "--manifest", m, "--prompt", "prompt_0", "--sigma", "1.5"],
        &["retrieve", "--manifest", m, "--prompt", "prompt_0", "--top-k", "0"],
        &["pose2v", "--manifest", m, "--pair", "view_0,view_7"],
        &["pose2v", "--manifest", m, "--threshold", "0"],
        &["pose-mv", "--manifest", m, "--views", "1"],
        &["eval"],
    ];
    for args in cases {
        assert_eq!(posekit(args).status.code(), Some(2), "{args:?}");
    }
    let missing = tmp.path().join("nope.json");
    assert_eq!(posekit(&["pose2v", "--manifest", s(&missing)]).status.code(), Some(2));
}

#[test]
fn degenerate_matches_exit_with_1() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &[]);
    // Identical point sets: zero baseline, no essential matrix to find.
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    for m in v["matchsets"].as_array_mut().unwrap() {
        if m.get("prompt_id").is_none_or(Value::is_null) {
            m["points_b_path"] = m["points_a_path"].clone();
        }
    }
    std::fs::write(&manifest, serde_json::to_string(&v).unwrap()).unwrap();
    let out = posekit(&["pose2v", "--manifest", s(&manifest)]);
    assert_eq!(out.status.code(), Some(1), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pose2v_reports_errors_and_writes_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &["--noise-px", "0.5", "--outlier-ratio", "0.3", "--seed", "8"]);
    let svg = tmp.path().join("overlay.svg");
    let r = json(&posekit(&[
        "pose2v",
        "--manifest",
        s(&manifest),
        "--pair",
        "view_0,view_1",
        "--threshold",
        "2e-3",
        "--svg",
        s(&svg),
    ]));
    let pair = &r["pairs"][0];
    assert!(pair["rotation_error_deg"].as_f64().unwrap() < 1.0);
    assert!(pair["translation_error_deg"].as_f64().unwrap() < 3.0);
    assert!(pair["inlier_labels"]["recall"].as_f64().unwrap() > 0.9);
    assert_eq!(pair["scaled"], false);

    let text = std::fs::read_to_string(&svg).unwrap();
    let lines = text.matches("<polyline").count();
    assert!(lines > 0 && lines <= 50, "{lines} epipolar lines");

    // Reversed pair: the inverse rotation, equally accurate.
    let rev = json(&posekit(&["pose2v", "--manifest", s(&manifest), "--pair", "view_1,view_0", "--threshold", "2e-3"]));
    assert!(rev["pairs"][0]["rotation_error_deg"].as_f64().unwrap() < 1.0);

    let scaled = json(&posekit(&[
        "pose2v",
        "--manifest",
        s(&manifest),
        "--pair",
        "view_0,view_1",
        "--threshold",
        "2e-3",
        "--scale-prompt",
        "prompt_0",
    ]));
    assert_eq!(scaled["pairs"][0]["scaled"], true);
    assert!(scaled["pairs"][0]["scale"].as_f64().unwrap() > 0.0);
}

#[test]
fn pose_mv_registers_all_views() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &["--views", "8", "--noise-px", "0.5", "--seed", "4"]);
    let r = json(&posekit(&["pose-mv", "--manifest", s(&manifest)]));
    assert_eq!(r["registered"].as_array().unwrap().len(), 8);
    assert!(r["skipped"].as_array().unwrap().is_empty());
    assert!(r["reprojection_rms_px"].as_f64().unwrap() < 1.5);
    for e in r["view_errors"].as_array().unwrap() {
        assert!(e["rotation_error_deg"].as_f64().unwrap() < 1.0, "{e}");
    }

    let subset = json(&posekit(&["pose-mv", "--manifest", s(&manifest), "--views", "3"]));
    assert_eq!(subset["registered"].as_array().unwrap().len(), 3);
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &["--views", "4", "--noise-px", "1", "--outlier-ratio", "0.2"]);
    let strip = |out: Output| {
        let mut v = json(&out);
        v.as_object_mut().unwrap().remove("timing_ms");
        v
    };
    for cmd in ["pose2v", "pose-mv"] {
        let one = strip(posekit_env(&[cmd, "--manifest", s(&manifest)], "1"));
        let three = strip(posekit_env(&[cmd, "--manifest", s(&manifest)], "3"));
        assert_eq!(one, three, "{cmd}");
    }
    let bad = posekit_env(&["retrieve", "--manifest", s(&manifest), "--prompt", "prompt_0"], "x");
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn eval_aggregates_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &["--views", "3", "--noise-px", "0.5"]);
    let pose = tmp.path().join("pose.json");
    let ret = tmp.path().join("ret.json");
    for args in [
        ["pose2v", "--manifest", s(&manifest), "--threshold", "2e-3", "--report", s(&pose)],
        ["retrieve", "--manifest", s(&manifest), "--prompt", "prompt_0", "--report", s(&ret)],
    ] {
        let out = posekit(&args);
        assert!(out.status.success() && out.stdout.is_empty());
    }
    let r = json(&posekit(&["eval", s(&pose), s(&ret)]));
    assert_eq!(r["rotation"]["n_pairs"], 3);
    assert_eq!(r["rotation"]["acc15"], 1.0);
    assert_eq!(r["retrieval_map"], 1.0);
    assert_eq!(r["rotation_by_group"].as_object().unwrap().len(), 3);
}
