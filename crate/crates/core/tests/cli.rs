use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use osdet::evaluation::{sweep, theta_grid, EvalConfig};
use osdet::io;
use osdet::simulator::simulate_dataset;
use osdet::{Pipeline, SimulatorConfig};

fn osdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osdet")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = osdet(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Files {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Files {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn simulate(files: &Files, extra: &[&str]) -> (PathBuf, PathBuf) {
    let (det, gt) = (files.path("det.json"), files.path("gt.json"));
    let mut args = vec!["simulate", "--output", s(&det), "--ground-truth", s(&gt)];
    args.extend_from_slice(extra);
    ok(&args);
    (det, gt)
}

#[test]
fn file_pipeline_matches_library_pipeline() {
    let files = Files::new();
    let (det, gt) = simulate(&files, &["--scenes", "12", "--passes", "20", "--seed", "3"]);
    let fused = files.path("fused.json");
    let csv_direct = files.path("direct.csv");
    let csv_fused = files.path("fused.csv");
    ok(&["fuse", "--input", s(&det), "--output", s(&fused)]);
    ok(&["sweep", "--input", s(&fused), "--ground-truth", s(&gt), "--output", s(&csv_fused)]);
    ok(&["sweep", "--input", s(&det), "--ground-truth", s(&gt), "--output", s(&csv_direct)]);

    let config = SimulatorConfig { passes: 20, seed: 3, ..SimulatorConfig::default() };
    let scenes = simulate_dataset(&config, 12).unwrap();
    let pipeline = Pipeline::dropout_sampling();
    let scored: Vec<_> = scenes.iter().map(|sc| sc.observe(&pipeline).unwrap()).collect();
    let points = sweep(&scored, &theta_grid(0.1, 2.5, 25).unwrap(), &EvalConfig::default());
    let expected = io::results_csv(&points);

    assert_eq!(fs::read_to_string(&csv_direct).unwrap(), expected);
    assert_eq!(fs::read_to_string(&csv_fused).unwrap(), expected);
}

#[test]
fn fused_file_round_trips() {
    let files = Files::new();
    let (det, _) = simulate(&files, &["--scenes", "3", "--passes", "5"]);
    let fused = files.path("fused.json");
    ok(&["fuse", "--input", s(&det), "--output", s(&fused)]);
    let loaded = io::load_fused(&fused).unwrap();
    let again = files.path("again.json");
    io::save_fused(&loaded, &again).unwrap();
    assert_eq!(fs::read(&fused).unwrap(), fs::read(&again).unwrap());
    assert_eq!(loaded.images.len(), 3);
}

#[test]
fn threshold_above_max_entropy_disables_the_test() {
    let files = Files::new();
    let (det, gt) = simulate(&files, &["--scenes", "10", "--passes", "10"]);
    let common = ["evaluate", "--input", s(&det), "--ground-truth", s(&gt)];
    let disabled = ok(&common);
    let mut bounded_args = common.to_vec();
    bounded_args.extend(["--entropy-threshold", "3.1"]); // ln(21) = 3.0445
    let bounded = ok(&bounded_args);
    let counts = |text: &str| text.lines().nth(1).unwrap().split_once(',').unwrap().1.to_string();
    assert!(disabled.lines().nth(1).unwrap().starts_with("inf,"));
    assert_eq!(counts(&disabled), counts(&bounded));
}

#[test]
fn perfect_detector_reaches_full_precision() {
    let files = Files::new();
    let det = files.path("det.json");
    let gt = files.path("gt.json");
    let onehot = |label: usize| {
        let mut v = vec![0.0; 4];
        v[label] = 1.0;
        v
    };
    let pass = |label_a: usize, label_b: usize| {
        format!(
            r#"[{{"bbox": [0, 0, 40, 40], "scores": {:?}}}, {{"bbox": [100, 100, 150, 130], "scores": {:?}}}]"#,
            onehot(label_a),
            onehot(label_b)
        )
    };
    fs::write(
        &det,
        format!(
            r#"{{"class_count": 3, "images": [{{"image_id": "only", "passes": [{}, {}, {}]}}]}}"#,
            pass(2, 3),
            pass(2, 3),
            pass(2, 3)
        ),
    )
    .unwrap();
    fs::write(
        &gt,
        r#"{"class_count": 3, "images": [{"image_id": "only", "objects": [
            {"bbox": [0, 0, 40, 40], "label": 2}, {"bbox": [100, 100, 150, 130], "label": 3}]}]}"#,
    )
    .unwrap();
    let csv = files.path("curve.csv");
    let max_entropy = format!("{}", 4f64.ln());
    ok(&[
        "sweep", "--input", s(&det), "--ground-truth", s(&gt), "--output", s(&csv),
        "--theta-min", "0", "--theta-max", &max_entropy, "--theta-steps", "5",
    ]);
    let points = io::load_results(&csv).unwrap();
    let last = points.last().unwrap();
    assert_eq!(last.precision, 1.0);
    assert_eq!(last.recall, 1.0);
    assert_eq!(points.len(), 5);
}

#[test]
fn sweep_summary_reports_reference_lookups() {
    let files = Files::new();
    let (det, gt) = simulate(&files, &["--scenes", "10", "--passes", "10"]);
    let csv = files.path("c.csv");
    let summary = files.path("summary.json");
    let stdout = ok(&[
        "sweep", "--input", s(&det), "--ground-truth", s(&gt), "--output", s(&csv),
        "--reference-f1", "1.5", "--reference-ose", "1000000", "--summary-json", s(&summary),
    ]);
    assert!(stdout.contains("max F1"));
    assert!(stdout.contains("unattainable"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(json["ose_at_reference_f1"], "unattainable");
    assert_eq!(json["thresholds"], 25);
    assert_eq!(json["pipeline"], "dropout-sampling");
    let best = json["max_f1"]["f1"].as_f64().unwrap();
    assert_eq!(json["f1_at_reference_ose"]["f1"].as_f64().unwrap(), best);
}

#[test]
fn baseline_pipeline_via_flag() {
    let files = Files::new();
    let (det, gt) = simulate(&files, &["--scenes", "5", "--passes", "8"]);
    let a = ok(&["evaluate", "--input", s(&det), "--ground-truth", s(&gt), "--pipeline", "single-pass"]);
    let b = ok(&["evaluate", "--input", s(&det), "--ground-truth", s(&gt), "--passes", "1", "--cluster-iou", "1.0"]);
    // Pooling a single pass at IoU 1.0 leaves every detection on its own.
    assert_eq!(a, b);
    let c = ok(&["evaluate", "--input", s(&det), "--ground-truth", s(&gt), "--partitioner", "brute-force"]);
    let d = ok(&["evaluate", "--input", s(&det), "--ground-truth", s(&gt)]);
    assert_eq!(c, d);
}

#[test]
fn exit_codes() {
    let files = Files::new();
    let bad = files.path("bad.json");
    fs::write(
        &bad,
        r#"{"class_count": 1, "images": [{"image_id": "a", "passes": [[{"bbox": [0,0,1,1], "scores": [0.5, 0.3]}]]}]}"#,
    )
    .unwrap();
    let out = osdet(&["fuse", "--input", s(&bad), "--output", s(&files.path("o.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("image 'a' pass 0 detection 0"), "{err}");
    assert!(out.stdout.is_empty());

    assert_eq!(osdet(&["sweep"]).status.code(), Some(2));
    assert_eq!(osdet(&["simulate", "--output", "x", "--ground-truth", "y", "--frobnicate"]).status.code(), Some(2));
    let help = osdet(&["sweep", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("--theta-steps"));

    let invalid = osdet(&[
        "simulate", "--output", s(&files.path("d.json")), "--ground-truth", s(&files.path("g.json")), "--p-det", "1.5",
    ]);
    assert_eq!(invalid.status.code(), Some(1));

    let (det, gt) = simulate(&files, &["--scenes", "2", "--passes", "2"]);
    let mismatch = files.path("gt3.json");
    fs::write(&mismatch, r#"{"class_count": 3, "images": []}"#).unwrap();
    assert_eq!(osdet(&["evaluate", "--input", s(&det), "--ground-truth", s(&mismatch)]).status.code(), Some(1));
    let missing = files.path("gt-missing.json");
    fs::write(&missing, r#"{"class_count": 20, "images": []}"#).unwrap();
    assert_eq!(osdet(&["evaluate", "--input", s(&det), "--ground-truth", s(&missing)]).status.code(), Some(1));
    assert_eq!(osdet(&["evaluate", "--input", s(&det), "--ground-truth", s(&gt), "--match-iou", "0"]).status.code(), Some(1));
}

#[test]
fn simulate_accepts_config_file() {
    let files = Files::new();
    let cfg = files.path("sim.json");
    fs::write(&cfg, r#"{"passes": 3, "num_known_objects": 1, "num_unknown_objects": 0, "clutter_rate": 0.0, "p_det": 1.0}"#).unwrap();
    let (det, gt) = simulate(&files, &["--config", s(&cfg), "--scenes", "2", "--passes", "4"]);
    let loaded = io::load_detections(&det).unwrap();
    assert_eq!(loaded.images.len(), 2);
    assert!(loaded.images.iter().all(|i| i.passes.len() == 4 && i.passes.iter().all(|p| p.len() == 1)));
    assert_eq!(io::load_ground_truth(&gt).unwrap().images[0].objects.len(), 1);
}
