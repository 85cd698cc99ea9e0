use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use offload_core::eval::{evaluate, read_detections, read_ground_truth, EvalOptions};
use offload_core::pipeline::Platform;
use offload_core::presets::{delay_rows, per_class_fixture, tradeoff_fixture};
use offload_core::tradeoff::{read_fixture, FixtureRecord};

const BIN: &str = env!("CARGO_BIN_EXE_offload");

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("OFFLOAD_CONFIG")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn map_line(text: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix("mAP,"))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn eval_matches_library() {
    let (dets, gts) = (data("corpus/detections.csv"), data("corpus/ground_truth.csv"));
    let out = run(&["eval", "--detections", p(&dets), "--ground-truth", p(&gts)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = evaluate(
        &read_detections(fs::File::open(&dets).unwrap()).unwrap(),
        &read_ground_truth(fs::File::open(&gts).unwrap()).unwrap(),
        EvalOptions::default(),
    );
    assert!((map_line(&stdout(&out)) - summary.map.unwrap()).abs() < 1e-6);
    assert!(stdout(&out).starts_with("class_id,class,ground_truths,detections,true_positives,ap\n"));
}

#[test]
fn eval_perfect_and_empty_detections() {
    let dir = scratch("eval-edge");
    let gts = data("corpus/ground_truth.csv");
    let text = fs::read_to_string(&gts).unwrap();
    let mut perfect = String::from("frame_id,class_id,confidence,x_min,y_min,x_max,y_max\n");
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        perfect.push_str(&format!("{},{},0.9,{},{},{},{}\n", f[0], f[1], f[2], f[3], f[4], f[5]));
    }
    fs::write(dir.join("perfect.csv"), perfect).unwrap();
    fs::write(dir.join("empty.csv"), "frame_id,class_id,confidence,x_min,y_min,x_max,y_max\n").unwrap();

    let out = run(&["eval", "--detections", p(&dir.join("perfect.csv")), "--ground-truth", p(&gts)]);
    assert_eq!(map_line(&stdout(&out)), 1.0);
    let out = run(&["eval", "--detections", p(&dir.join("empty.csv")), "--ground-truth", p(&gts)]);
    assert_eq!(map_line(&stdout(&out)), 0.0);
}

#[test]
fn malformed_input_exits_1() {
    let dir = scratch("malformed");
    fs::write(dir.join("bad.csv"), "frame_id,class_id,confidence,x_min,y_min,x_max,y_max\nf,0,1.5,0,0,1,1\n").unwrap();
    let out = run(&[
        "eval",
        "--detections",
        p(&dir.join("bad.csv")),
        "--ground-truth",
        p(&data("corpus/ground_truth.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    let out = run(&["eval", "--detections", p(&dir.join("missing.csv")), "--ground-truth", p(&dir.join("bad.csv"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_config_exits_2() {
    let dir = scratch("bad-config");
    fs::write(dir.join("unknown.toml"), "no_such_key = 1\n").unwrap();
    fs::write(dir.join("range.toml"), "[selection]\nbudget_ms = -5.0\n").unwrap();
    for name in ["unknown.toml", "range.toml"] {
        let out = run(&["--config", p(&dir.join(name)), "simulate"]);
        assert_eq!(out.status.code(), Some(2), "{name}: {}", stderr(&out));
    }
    let out = run(&["tradeoff", "--format", "xml"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn inconsistent_calibration_exits_3() {
    let dir = scratch("inconsistent");
    // the larger payload arrives faster: no positive throughput fits
    fs::write(dir.join("obs.csv"), "size_bytes,measured_ms,known_ms\n100000,10.0,5.0\n1000,20.0,5.0\n").unwrap();
    let out = run(&["calibrate", "--platform", "cloud", "--observations", p(&dir.join("obs.csv"))]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    // measured below the known part
    fs::write(dir.join("short.csv"), "size_bytes,measured_ms,known_ms\n100000,10.0,50.0\n1000,20.0,5.0\n").unwrap();
    let out = run(&["calibrate", "--platform", "cloud", "--observations", p(&dir.join("short.csv"))]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn calibrate_needs_two_rows() {
    let dir = scratch("one-row");
    fs::write(dir.join("obs.csv"), "size_bytes,measured_ms,known_ms\n100000,10.0,5.0\n").unwrap();
    let out = run(&["calibrate", "--platform", "edge", "--observations", p(&dir.join("obs.csv"))]);
    assert!(!out.status.success());
    assert!(!stderr(&out).is_empty());
}

#[test]
fn calibrate_reference_links() {
    let out = run(&[
        "calibrate",
        "--platform",
        "cloud",
        "--observations",
        p(&data("cloud_calibration.csv")),
        "--pin-throughput",
        "113.94",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("throughput_mbps,113.940000"), "{text}");
    assert!(text.contains("per_packet_overhead_ms,0.124"), "{text}");
    assert!(!text.contains("-0.00"));
}

#[test]
fn help_lists_config_keys() {
    let out = run(&["--help"]);
    let text = stdout(&out);
    for key in ["budget_ms", "min_map", "throughput_mbps", "packet_payload_bytes", "OFFLOAD_CONFIG", "result_bytes"] {
        assert!(text.contains(key), "missing {key}");
    }
    let out = run(&["tradeoff", "--help"]);
    assert!(stdout(&out).contains("budget_ms"));
}

#[test]
fn env_config_applies_and_flags_override() {
    let dir = scratch("env");
    let config = dir.join("c.toml");
    fs::write(&config, "[selection]\nbudget_ms = 100.0\n").unwrap();
    let selected = |args: &[&str]| {
        let out = Command::new(BIN).args(args).env("OFFLOAD_CONFIG", &config).output().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        stderr(&out)
            .lines()
            .find_map(|l| l.strip_prefix("selected: ").map(|s| s.split_whitespace().next().unwrap().to_string()))
            .unwrap()
    };
    assert_eq!(selected(&["tradeoff"]), "cloud/JPEG-H");
    assert_eq!(selected(&["tradeoff", "--budget-ms", "50"]), "cloud/H265-M");
    assert_eq!(selected(&["tradeoff", "--rate-hz", "50"]), "local/RAW");
}

#[test]
fn infeasible_budget_reports_no_selection() {
    let out = run(&["tradeoff", "--budget-ms", "15"]);
    assert!(out.status.success());
    assert!(stderr(&out).contains("no feasible strategy within 15"), "{}", stderr(&out));
}

#[test]
fn simulate_flags_rates() {
    let out = run(&["simulate", "--rate-hz", "20", "--rate-hz", "10"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = |n: &str| header.iter().position(|h| *h == n).unwrap();
    let row = text
        .lines()
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|r| r[col("platform")] == "cloud" && r[col("scenario")] == "JPEG-H")
        .unwrap();
    assert_eq!(row[col("meets_20hz")], "false");
    assert_eq!(row[col("meets_10hz")], "true");
}

#[test]
fn stats_on_sample_dataset() {
    let dir = scratch("stats");
    let out = run(&["--out-dir", p(&dir), "stats", "--manifest", p(&data("sample_dataset/manifest.csv"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.lines().any(|l| l.starts_with("total,")));
    assert_eq!(fs::read_to_string(dir.join("stats.csv")).unwrap(), text);
}

#[test]
fn stats_lists_missing_files() {
    let dir = scratch("stats-missing");
    fs::write(dir.join("manifest.csv"), "split,path\ntrain,nowhere.txt\ntest,gone\n").unwrap();
    let out = run(&["stats", "--manifest", p(&dir.join("manifest.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("nowhere.txt") && err.contains("gone"), "{err}");
}

fn same_records(file: &str, built_in: Vec<FixtureRecord>) {
    let parsed = read_fixture(fs::File::open(data(file)).unwrap()).unwrap();
    assert_eq!(parsed.len(), built_in.len());
    for (a, b) in parsed.iter().zip(&built_in) {
        assert_eq!(a.key, b.key);
        assert_eq!(a.delay_ms, b.delay_ms, "{}", a.key);
        assert_eq!(a.map_value, b.map_value, "{}", a.key);
        assert_eq!(a.per_class_ap, b.per_class_ap, "{}", a.key);
    }
}

#[test]
fn data_files_match_built_in_fixtures() {
    same_records("reference_tradeoff.csv", tradeoff_fixture());
    same_records("reference_per_class.csv", per_class_fixture());

    let measured = fs::read_to_string(data("measured_delays.csv")).unwrap();
    let rows: Vec<String> = [Platform::Edge, Platform::Cloud]
        .into_iter()
        .flat_map(delay_rows)
        .map(|r| format!("{},{},{},{:.2}", r.platform, r.scenario, r.payload_bytes, r.delay_ms))
        .collect();
    let lines: Vec<&str> = measured.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(lines, rows);
}
