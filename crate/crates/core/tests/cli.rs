use std::fs;
use std::path::Path;
use std::process::Command;

use evkit::augment::{spatial_flip, FlipAxis, Sequence};
use evkit::cmax::{estimate_intervals, CmaxConfig};
use evkit::encode::encode_count;
use evkit::store::{self, read_all};
use serde_json::Value;

const SPEC: &str = r#"{
    "pattern": {"type": "checkerboard", "cell": 8.0},
    "motion": {"type": "translation", "vx": 75.0, "vy": -50.0},
    "duration": 0.12, "sim_rate": 1000.0, "frame_rate": 25.0, "flow_rate": 25.0,
    "sensor": {"width": 64, "height": 64, "threshold_pos": 0.1, "threshold_neg": 0.1}
}"#;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

fn evkit(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_evkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> Run {
    let r = evkit(dir, args);
    assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
    r
}

fn simulated(dir: &Path) {
    fs::write(dir.join("spec.json"), SPEC).unwrap();
    ok(dir, &["simulate", "--spec", "spec.json", "--out", "sim"]);
}

#[test]
fn info_reports_default_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{"pattern": {"type": "checkerboard", "cell": 6.0},
        "motion": {"type": "translation", "vx": 100.0, "vy": 0.0},
        "duration": 0.08, "sim_rate": 1000.0, "frame_rate": 25.0, "flow_rate": 25.0,
        "sensor": {"width": 40, "height": 30}}"#;
    fs::write(dir.path().join("spec.json"), spec).unwrap();
    ok(dir.path(), &["simulate", "--spec", "spec.json", "--out", "sim"]);
    let info = ok(dir.path(), &["info", "sim"]).json();
    assert_eq!(info["props"]["threshold_pos"], 0.5);
    assert_eq!(info["props"]["threshold_neg"], 0.4);
    assert_eq!(info["props"]["width"], 40);
    assert_eq!(info["props"]["height"], 30);
    assert!(info["events"].as_u64().unwrap() > 0);
}

#[test]
fn eval_of_ground_truth_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let report = ok(dir.path(), &["eval", "--pred", "sim", "--gt", "sim", "--thresholds", "1,3"]).json();
    assert_eq!(report["aee"], 0.0);
    assert_eq!(report["outliers"]["1PE"], 0.0);
    assert_eq!(report["outliers"]["3PE"], 0.0);
}

#[test]
fn pipeline_is_accurate_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulated(d);
    ok(d, &["estimate-flow", "sim", "--out", "est_a", "--trace", "trace_a.json"]);
    ok(d, &["estimate-flow", "sim", "--out", "est_b", "--trace", "trace_b.json"]);
    let a = ok(d, &["eval", "--pred", "est_a", "--gt", "sim"]);
    let b = ok(d, &["eval", "--pred", "est_b", "--gt", "sim"]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(fs::read(d.join("trace_a.json")).unwrap(), fs::read(d.join("trace_b.json")).unwrap());
    for f in ["flow.bin", "events.bin"] {
        assert_eq!(fs::read(d.join("est_a").join(f)).unwrap(), fs::read(d.join("est_b").join(f)).unwrap());
    }
    let report = a.json();
    assert!(report["aee"].as_f64().unwrap() < 0.5, "{report}");
    assert_eq!(report["outliers"]["3PE"], 0.0);
}

#[test]
fn estimate_flow_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulated(d);
    fs::write(d.join("cmax.json"), r#"{"max_iters": 40, "pyramid_levels": 2}"#).unwrap();
    ok(d, &["estimate-flow", "sim", "--config", "cmax.json", "--smoothness-weight", "2", "--out", "est"]);
    let reader = store::open(d.join("sim")).unwrap();
    let config = CmaxConfig {
        max_iters: 40,
        pyramid_levels: 2,
        smoothness_weight: 2.0,
        ..Default::default()
    };
    let (flows, _) = estimate_intervals(&reader, reader.flow_intervals(), &config).unwrap();
    let (_, _, cli_flows) = read_all(&store::open(d.join("est")).unwrap()).unwrap();
    assert_eq!(cli_flows, flows);
}

#[test]
fn encode_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulated(d);
    let out = ok(d, &["encode", "sim", "--method", "count", "--bins", "3", "--t0-ms", "10", "--t1-ms", "70", "--out", "enc"]).json();
    let reader = store::open(d.join("sim")).unwrap();
    let events = reader.read_events(0..reader.len()).unwrap();
    let frames = encode_count(&events, reader.shape(), 10_000, 70_000, 3).unwrap();
    assert_eq!(out.as_array().unwrap().len(), 3);
    for (j, f) in out.as_array().unwrap().iter().zip(&frames) {
        assert_eq!(j["pos_sum"].as_f64().unwrap(), f.pos.sum());
        assert_eq!(j["neg_sum"].as_f64().unwrap(), f.neg.sum());
    }
    assert_eq!(fs::read_dir(d.join("enc")).unwrap().count(), 3);
}

#[test]
fn augment_flip_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulated(d);
    ok(d, &["augment", "sim", "--op", "flip", "--axis", "vertical", "--out", "flipped"]);
    let reader = store::open(d.join("sim")).unwrap();
    let (events, grays, flows) = read_all(&reader).unwrap();
    let expected = spatial_flip(&Sequence { events, grays, flows }, reader.shape(), FlipAxis::Vertical).unwrap();
    let (e, g, f) = read_all(&store::open(d.join("flipped")).unwrap()).unwrap();
    assert_eq!(Sequence { events: e, grays: g, flows: f }, expected);
}

#[test]
fn augment_noise_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulated(d);
    for out in ["n1", "n2"] {
        ok(d, &["augment", "sim", "--op", "noise", "--rate", "50", "--seed", "9", "--out", out]);
    }
    assert_eq!(fs::read(d.join("n1/events.bin")).unwrap(), fs::read(d.join("n2/events.bin")).unwrap());
}

#[test]
fn slice_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulated(d);
    let s = ok(d, &["slice", "sim", "--t0-ms", "40", "--t1-ms", "80", "--out", "part"]).json();
    assert_eq!(s["flow_fields"], 1);
    let reader = store::open(d.join("sim")).unwrap();
    assert_eq!(s["events"].as_u64().unwrap() as usize, reader.slice_by_time(40, 80).unwrap().events.len());
    let r = ok(d, &["render", "sim", "--kind", "flow", "--stride-ms", "20", "--out", "frames"]).json();
    assert_eq!(r["frames"].as_u64().unwrap() as usize, reader.iterate(evkit::store::Stride::Millis(20)).unwrap().total());
}

#[test]
fn import_csv_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("ev.csv"), "0,1,1,1\n5,0,0,0\n9,1,0,1\n").unwrap();
    fs::write(d.join("props.json"), r#"{"width": 2, "height": 2}"#).unwrap();
    let info = ok(d, &["import-csv", "--events", "ev.csv", "--props", "props.json", "--out", "c", "--codec", "deflate"]).json();
    assert_eq!(info["events"], 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [vec!["frobnicate"], vec!["info"], vec!["info", "c", "--bogus"], vec!["eval", "--pred", "a"]] {
        let r = evkit(d, &args);
        assert_eq!(r.code, 2, "{args:?}");
        assert!(r.stderr.contains("Usage:"), "{}", r.stderr);
    }
    assert_eq!(evkit(d, &["render", "x", "--kind", "volume", "--out", "o"]).code, 2);
    let r = evkit(d, &["info", "missing"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.starts_with("error:"));
    assert_eq!(evkit(d, &["--help"]).code, 0);
}
