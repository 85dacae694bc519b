use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use roadshare_core::scenario::Scenario;
use roadshare_core::sensor::{Modality, SensorStream};
use roadshare_core::server::{Session, SessionConfig, Sim};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_roadshare"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("RUST_LOG", "warn").output().expect("spawn roadshare")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Record `seconds` of an unattended session straight through the library.
fn record(name: &str, seconds: u64, path: &Path) {
    let sc = Scenario::from_file(scenario(name)).unwrap();
    let sim = Sim::new(sc, SessionConfig::default()).unwrap();
    let mut s = Session::new(sim, Some(BufWriter::new(fs::File::create(path).unwrap()))).unwrap();
    for _ in 0..seconds * 100 {
        s.step().unwrap();
    }
    s.finish().unwrap();
}

#[test]
fn place_prints_synchronized_distances() {
    let o = run(&["place", p(&scenario("fig6.json"))]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for (agent, speed, dist) in [("car", "8.333", "100.0"), ("cyclist", "4.167", "50.0"), ("ped", "1.500", "18.0")] {
        let line = text.lines().find(|l| l.starts_with(agent)).unwrap_or_else(|| panic!("no row for {agent}:\n{text}"));
        let cols: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cols[3], speed, "{line}");
        assert_eq!(cols[4], dist, "{line}");
    }
}

#[test]
fn place_json_is_machine_readable() {
    let o = run(&["--json", "place", p(&scenario("fig6.json"))]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["agent"], "car");
    assert!((rows[0]["distance"].as_f64().unwrap() - 100.0).abs() < 1e-9);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["place"])), 1);
    assert_eq!(code(&run(&["validate", p(&dir.path().join("missing.json"))])), 4);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&run(&["validate", p(&bad)])), 2);

    let text = fs::read_to_string(scenario("fig6.json")).unwrap();
    let broken = text.replacen("\"conflict_point\": \"crosswalk\"", "\"conflict_point\": \"nowhere\"", 1);
    assert_ne!(text, broken, "fixture changed");
    let invalid = dir.path().join("invalid.json");
    fs::write(&invalid, broken).unwrap();
    let o = run(&["--json", "validate", p(&invalid)]);
    assert_eq!(code(&o), 2);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["valid"], false);
    assert!(v["errors"].as_u64().unwrap() >= 1);

    let o = run(&["validate", p(&scenario("fig6.json"))]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("ok: 3 agents"));
}

#[test]
fn help_lists_units_and_exit_codes() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    let t = stdout(&o);
    for needle in ["m/s", "m/s²", "Exit codes", "serve", "validate", "place", "replay", "metrics", "align", "plot"] {
        assert!(t.contains(needle), "help lacks {needle:?}");
    }
    let o = run(&["serve", "--help"]);
    assert!(stdout(&o).contains("Hz"));
}

#[test]
fn every_scenario_validates() {
    for entry in fs::read_dir(scenario("")).unwrap() {
        let path = entry.unwrap().path();
        let o = run(&["validate", p(&path)]);
        assert_eq!(code(&o), 0, "{}: {}", path.display(), stdout(&o));
    }
}

#[test]
fn replay_is_clean_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.log");
    record("fig6_scripted.json", 5, &log);
    let o = run(&["--json", "replay", p(&log)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["ticks"], 500);
    assert_eq!(v["digest"].as_str().unwrap().len(), 64);

    // Flip one hex digit of the final digest.
    let text = fs::read_to_string(&log).unwrap();
    let at = text.rfind("\"digest\":\"").unwrap() + 10;
    let mut bytes = text.into_bytes();
    bytes[at] = if bytes[at] == b'0' { b'1' } else { b'0' };
    let tampered = dir.path().join("tampered.log");
    fs::write(&tampered, bytes).unwrap();
    assert_eq!(code(&run(&["replay", p(&tampered)])), 3);
}

#[test]
fn metrics_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.log");
    record("fig6_scripted.json", 15, &log);
    let out = dir.path().join("m");
    let o = run(&["metrics", p(&log), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "lane.csv",
        "safety.csv",
        "safety_series.csv",
        "reactions.csv",
        "cyclist.csv",
        "cyclist_proximity.csv",
        "pedestrian.csv",
        "transit.csv",
        "vehicle.csv",
        "instruments.csv",
        "nback.csv",
        "summary.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["ticks"], 1500);
    assert_eq!(summary["params"]["yield_radius_m"], 20.0);

    let params = dir.path().join("params.json");
    fs::write(&params, r#"{"yield_radius_m": 12.5}"#).unwrap();
    let out2 = dir.path().join("m2");
    assert_eq!(code(&run(&["metrics", p(&log), "--out", p(&out2), "--params", p(&params)])), 0);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out2.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["params"]["yield_radius_m"], 12.5);
    assert_eq!(summary["params"]["walk_speed"], 0.3);

    fs::write(&params, r#"{"yield_radius_m": "far"}"#).unwrap();
    assert_eq!(code(&run(&["metrics", p(&log), "--out", p(&out2), "--params", p(&params)])), 2);

    let svg = dir.path().join("ttc.svg");
    let series = out.join("safety_series.csv");
    let o = run(&["plot", p(&series), "--y", "ttc_s", "--group", "agent_a", "--group", "agent_b", "--out", p(&svg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("<polyline"));
    assert_eq!(code(&run(&["plot", p(&series), "--y", "nope", "--out", p(&svg)])), 1);
}

#[test]
fn align_fits_clock_and_cuts_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.log");
    record("fig6_scripted.json", 45, &log);
    let streams = dir.path().join("streams");
    fs::create_dir(&streams).unwrap();

    // Device clock: t_dev = (t_sim − 7) / 1.002.
    let (a, b) = (1.002, 7.0);
    let dev = |t_sim: f64| (t_sim - b) / a;
    let mut marks = SensorStream::new("marks", Modality::Mark, 0.0, "wrist");
    for k in 0..5u32 {
        marks.push(dev(10.0 * k as f64), vec![k as f64]);
    }
    marks.write_csv(fs::File::create(streams.join("marks.csv")).unwrap()).unwrap();
    let mut eda = SensorStream::new("eda", Modality::Eda, 4.0, "wrist");
    for i in 0..200 {
        let t = dev(-2.0) + i as f64 / 4.0;
        eda.push(t, vec![2.0 + 0.01 * i as f64]);
    }
    eda.write_csv(fs::File::create(streams.join("eda.csv")).unwrap()).unwrap();

    let out = dir.path().join("aligned");
    let o = run(&["--json", "align", "--events", p(&log), "--streams", p(&streams), "--out", p(&out), "--code", "sync_mark"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let map = &v["clock_maps"]["wrist"];
    assert!((map["a"].as_f64().unwrap() - a).abs() < 1e-9);
    assert!((map["b"].as_f64().unwrap() - b).abs() < 1e-6);
    // Marks at 10, 20 and 30 s have the full window inside the EDA span.
    assert!(v["epochs"]["sync_mark"].as_u64().unwrap() >= 3);
    let epochs = fs::read_to_string(out.join("epochs.csv")).unwrap();
    assert!(epochs.starts_with("code,epoch,t0_s,stream,channel,t_rel_s,value,baseline_corrected"));
    assert!(out.join("eda_eda.csv").is_file() && out.join("scr_eda.csv").is_file());

    // A gain outside the accepted band is an input error.
    let mut bad = SensorStream::new("marks", Modality::Mark, 0.0, "wrist");
    for k in 0..5u32 {
        bad.push(10.0 * k as f64 / 1.05, vec![k as f64]);
    }
    bad.write_csv(fs::File::create(streams.join("marks.csv")).unwrap()).unwrap();
    assert_eq!(code(&run(&["align", "--events", p(&log), "--streams", p(&streams), "--out", p(&out)])), 2);
}

#[test]
fn serve_runs_for_a_duration_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("served.log");
    let o = run(&[
        "--json",
        "serve",
        p(&scenario("fig6_scripted.json")),
        "--udp-port",
        "0",
        "--no-ws",
        "--tick-hz",
        "200",
        "--duration",
        "0.5",
        "--log",
        p(&log),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["ticks"], 100);
    let r = run(&["--json", "replay", p(&log)]);
    assert_eq!(code(&r), 0);
    let rv: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(rv["digest"], v["digest"]);

    assert_eq!(code(&run(&["serve", p(&scenario("fig6.json")), "--tick-hz", "5", "--udp-port", "0", "--no-ws"])), 1);
}
