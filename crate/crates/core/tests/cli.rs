use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cropdet::pipeline::FrameResult;
use cropdet::{BBox, Detection, PipelineConfig, PlanKind};

fn cropdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cropdet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn crate_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn frame(idx: u64, dets: Vec<Detection>) -> FrameResult {
    FrameResult {
        frame_idx: idx,
        plan_kind: PlanKind::FullFrame,
        num_crops: 0,
        accepted: dets,
        latency: 0.2,
        estimated_fps: 5.0,
        error: None,
    }
}

/// Scenario with a handful of walkers, written by `simulate`.
fn small_scenario(dir: &Path) -> PathBuf {
    let params = dir.join("params.toml");
    fs::write(&params, "num_tracks = 6\n").unwrap();
    let out = dir.join("scenario.csv");
    let o = cropdet(&[
        "simulate",
        "--params",
        p(&params),
        "--frames",
        "40",
        "--dims",
        "1280x720",
        "--seed",
        "3",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cropdet(&[]).status.code(), Some(1));
    assert_eq!(cropdet(&["explode"]).status.code(), Some(1));
    let o = cropdet(&["run", "--scenario", "x", "--out", "y", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(
        cropdet(&["simulate", "--frames", "10", "--dims", "wide", "--out", "x"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(cropdet(&["--help"]).status.code(), Some(0));
    assert_eq!(cropdet(&["--version"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let out = dir.path().join("d.jsonl");

    let o = cropdet(&["run", "--scenario", "/nonexistent/s.csv", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));

    let typo = dir.path().join("typo.toml");
    fs::write(&typo, "[gate]\ntau_high = 0.6\n").unwrap();
    let o = cropdet(&[
        "run",
        "--scenario",
        p(&scenario),
        "--config",
        p(&typo),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tau_high"));

    let bad_truth = dir.path().join("bad.csv");
    fs::write(&bad_truth, "0,1,10,20,-5,9,0\n").unwrap();
    let dets = dir.path().join("empty.jsonl");
    fs::write(&dets, cropdet::io::write_detections(&[])).unwrap();
    let o = cropdet(&["eval", "--detections", p(&dets), "--truth", p(&bad_truth)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 1") && err.contains("w"), "{err}");

    let o = cropdet(&["bench", "--scenario", p(&scenario), "--sweep", "gate.nonsense=0.1,0.2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_prints_expected_ap() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth.csv");
    fs::write(
        &truth,
        "# frame,track_id,x,y,w,h,class\n0,1,0,0,10,10,0\n0,2,100,0,10,10,0\n",
    )
    .unwrap();
    let b = |x: f64| BBox::new(x, 0.0, 10.0, 10.0);
    let dets = dir.path().join("dets.jsonl");
    let results = vec![frame(
        0,
        vec![
            Detection::new(b(0.0), 0.9),
            Detection::new(b(50.0), 0.8),
            Detection::new(b(100.0), 0.7),
        ],
    )];
    fs::write(&dets, cropdet::io::write_detections(&results)).unwrap();

    let pr = dir.path().join("pr.csv");
    let o = cropdet(&[
        "eval",
        "--detections",
        p(&dets),
        "--truth",
        p(&truth),
        "--iou",
        "0.5",
        "--pr-csv",
        p(&pr),
    ]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((report["ap"].as_f64().unwrap() - 0.8333).abs() < 1e-4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("0.8333"));
    assert_eq!(fs::read_to_string(&pr).unwrap().lines().count(), 4);

    // detections equal to the truth score perfectly
    let perfect = vec![frame(
        0,
        vec![Detection::new(b(0.0), 0.9), Detection::new(b(100.0), 0.8)],
    )];
    fs::write(&dets, cropdet::io::write_detections(&perfect)).unwrap();
    let o = cropdet(&["eval", "--detections", p(&dets), "--truth", p(&truth), "--summary"]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["ap"].as_f64(), Some(1.0));
}

#[test]
fn run_is_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let out = |name: &str, seed: &str| {
        let path = dir.path().join(name);
        let o = cropdet(&[
            "run",
            "--scenario",
            p(&scenario),
            "--config",
            p(&crate_file("config/default.toml")),
            "--out",
            p(&path),
            "--seed",
            seed,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(path).unwrap()
    };
    let a = out("a.jsonl", "11");
    assert_eq!(a, out("b.jsonl", "11"));
    assert_ne!(a, out("c.jsonl", "12"));
}

#[test]
fn simulate_run_eval_bench_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let text = fs::read_to_string(&scenario).unwrap();
    assert!(text.starts_with("# cropdet scenario v1"));

    for mode in ["pipeline", "fullframe-only"] {
        let dets = dir.path().join(format!("{mode}.jsonl"));
        let o = cropdet(&["run", "--scenario", p(&scenario), "--out", p(&dets), "--mode", mode]);
        assert!(o.status.success());
        let results = cropdet::io::read_detections(&fs::read_to_string(&dets).unwrap()).unwrap();
        assert_eq!(results.len(), 40);
        let o = cropdet(&["eval", "--detections", p(&dets), "--truth", p(&scenario), "--summary"]);
        assert!(o.status.success());
        let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!(report["mean_fps"].as_f64().unwrap() > 0.0);
    }

    let csv = dir.path().join("sweep.csv");
    let o = cropdet(&[
        "bench",
        "--scenario",
        p(&scenario),
        "--sweep",
        "gate.tau_hi=0.4:0.6:0.1",
        "--out",
        p(&csv),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<String> = fs::read_to_string(&csv).unwrap().lines().map(String::from).collect();
    assert_eq!(lines[0], "gate.tau_hi,ap,mean_fps");
    let values: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(values, ["0.4", "0.5", "0.6"]);
}

#[test]
fn external_backend_over_pipes() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    // answers every request with one confident box near the input origin
    let script = dir.path().join("detector.sh");
    fs::write(
        &script,
        "while read -r line; do\n  echo '{\"detections\":[{\"x\":10,\"y\":10,\"w\":20,\"h\":40,\"confidence\":0.9}]}'\ndone\n",
    )
    .unwrap();
    let out = dir.path().join("ext.jsonl");
    let cmd = format!("sh {}", p(&script));
    let o = cropdet(&[
        "run",
        "--scenario",
        p(&scenario),
        "--out",
        p(&out),
        "--backend",
        "external",
        "--cmd",
        &cmd,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let results = cropdet::io::read_detections(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(results.len(), 40);
    assert!(results.iter().all(|r| r.error.is_none() && !r.accepted.is_empty()));

    let failing = dir.path().join("failing.sh");
    fs::write(
        &failing,
        "while read -r line; do echo '{\"error\":\"no model\"}'; done\n",
    )
    .unwrap();
    let cmd = format!("sh {}", p(&failing));
    let o = cropdet(&[
        "run",
        "--scenario",
        p(&scenario),
        "--out",
        p(&out),
        "--backend",
        "external",
        "--cmd",
        &cmd,
    ]);
    assert!(o.status.success());
    let results = cropdet::io::read_detections(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(results.iter().all(|r| r.error.is_some() && r.accepted.is_empty()));

    let o = cropdet(&[
        "run",
        "--scenario",
        p(&scenario),
        "--out",
        p(&out),
        "--backend",
        "external",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_config_files_match_defaults() {
    let text = fs::read_to_string(crate_file("config/default.toml")).unwrap();
    assert_eq!(cropdet::io::load_config(&text).unwrap(), PipelineConfig::default());
    let params: cropdet::ScenarioParams =
        cropdet::io::parse_toml(&fs::read_to_string(crate_file("config/scenario.toml")).unwrap()).unwrap();
    assert_eq!(params, cropdet::ScenarioParams::default());
    let burst: cropdet::ScenarioParams =
        cropdet::io::parse_toml(&fs::read_to_string(crate_file("config/burst.toml")).unwrap()).unwrap();
    burst.validate().unwrap();
}
