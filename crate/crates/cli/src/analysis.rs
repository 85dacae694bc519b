use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use roadshare_core::events::{EventCode, EventRecord};
use roadshare_core::metrics::{compute_metrics, run_data_from_log, write_metrics, MetricParams};
use roadshare_core::sensor::{
    cut_epochs, detect_fixations, eda_decompose, fit_clock_map, gaze_heatmap, hr_from_bvp, pair_marks, ClockMap,
    EdaParams, FixationParams, Modality, SensorError, SensorStream,
};
use roadshare_core::server::ReplayLog;
use serde::Serialize;
use serde_json::json;

use crate::{CmdResult, Exit, Failure, Out};

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Session log written by `serve --log`.
    pub log: PathBuf,
    /// Output directory for the CSV files and summary.json.
    #[arg(long, short)]
    pub out: PathBuf,
    /// JSON file overriding metric thresholds; missing keys keep defaults.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Session log whose events anchor the epochs.
    #[arg(long)]
    pub events: PathBuf,
    /// Directory of sensor stream CSV files.
    #[arg(long)]
    pub streams: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Event code to lock epochs to; repeatable.
    #[arg(long = "code", default_value = "hazard")]
    pub codes: Vec<String>,
    /// Epoch start before each event, s.
    #[arg(long, default_value_t = 2.0)]
    pub pre: f64,
    /// Epoch end after each event, s.
    #[arg(long, default_value_t = 5.0)]
    pub post: f64,
    /// Common epoch grid rate, Hz.
    #[arg(long, default_value_t = 10.0)]
    pub rate: f64,
    /// Heart-rate summary window, s.
    #[arg(long, default_value_t = 60.0)]
    pub hr_window: f64,
    /// Gaze heatmap grid size (rows = columns).
    #[arg(long, default_value_t = 32)]
    pub heatmap_cells: usize,
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::io(format!("cannot write {}: {e}", path.display()))
}

pub fn metrics(args: MetricsArgs, out: Out) -> CmdResult {
    let params = match &args.params {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::io(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<MetricParams>(&text)
                .map_err(|e| Failure::new(Exit::Validation, format!("{}: {e}", p.display())))?
        }
        None => MetricParams::default(),
    };
    let log = ReplayLog::from_file(&args.log)?;
    let data = run_data_from_log(&log)?;
    let report = compute_metrics(&data, &params);
    let files = write_metrics(&report, &args.out).map_err(|e| write_err(&args.out, e))?;
    let value = json!({
        "ticks": report.ticks,
        "files": files,
        "lane": report.lane.len(),
        "safety": report.safety.len(),
        "reactions": report.reactions.len(),
        "instruments": report.instruments.len(),
        "nback": report.nback.len(),
    });
    out.emit(&value, || {
        let mut t = format!("{} ticks at {} Hz\n", report.ticks, report.tick_rate_hz);
        for s in &report.safety {
            let ttc = s.min_ttc_s.map_or("-".into(), |v| format!("{v:.2} s"));
            t += &format!("pair {}-{} {:?}: min TTC {ttc}\n", s.agent_a, s.agent_b, s.relation);
        }
        for r in &report.reactions {
            match (r.value_s, &r.reason) {
                (Some(v), _) => t += &format!("{} agent {}: {v:.3} s\n", r.metric, r.agent_id),
                (None, Some(why)) => t += &format!("{} agent {}: absent ({why})\n", r.metric, r.agent_id),
                (None, None) => {}
            }
        }
        for f in &files {
            t += &format!("wrote {}\n", f.display());
        }
        t
    });
    Ok(())
}

fn sensor_failure(e: SensorError) -> Failure {
    match e {
        SensorError::Io { .. } => Failure::io(e),
        _ => Failure::new(Exit::Validation, e),
    }
}

fn load_streams(dir: &Path) -> Result<Vec<SensorStream>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::io(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();
    let mut streams = Vec::with_capacity(paths.len());
    for p in paths {
        let s = SensorStream::from_file(&p).map_err(|e| {
            let mut f = sensor_failure(e);
            f.message = format!("{}: {}", p.display(), f.message);
            f
        })?;
        s.check().map_err(sensor_failure)?;
        streams.push(s);
    }
    Ok(streams)
}

/// Fit one clock map per clock that has a MARK stream. `sim` is the
/// session clock itself.
fn clock_maps(streams: &[SensorStream], events: &[EventRecord]) -> Result<BTreeMap<String, ClockMap>, Failure> {
    let mut maps = BTreeMap::new();
    maps.insert("sim".to_string(), ClockMap::IDENTITY);
    for s in streams.iter().filter(|s| s.modality == Modality::Mark) {
        let (dev, sim) = pair_marks(s, events);
        let map = fit_clock_map(&dev, &sim).map_err(|e| {
            Failure::new(Exit::Validation, format!("clock {} (stream {}): {e}", s.clock_id, s.stream_id))
        })?;
        maps.insert(s.clock_id.clone(), map);
    }
    Ok(maps)
}

#[derive(Serialize)]
struct HrRow {
    t_s: f64,
    hr_bpm: f64,
}

#[derive(Serialize)]
struct EdaRow {
    t_s: f64,
    tonic_us: f64,
    phasic_us: f64,
}

#[derive(Serialize)]
struct ScrRow {
    onset_s: f64,
    peak_s: f64,
    amplitude_us: f64,
}

#[derive(Serialize)]
struct FixationRow {
    start_s: f64,
    end_s: f64,
    duration_s: f64,
    x_norm: f64,
    y_norm: f64,
    samples: usize,
}

#[derive(Serialize)]
struct EpochRow<'a> {
    code: String,
    epoch: usize,
    t0_s: f64,
    stream: &'a str,
    channel: &'a str,
    t_rel_s: f64,
    value: Option<f64>,
    baseline_corrected: bool,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| write_err(path, e))
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Per-stream features with every time on the sim clock.
fn stream_features(
    s: &SensorStream,
    map: &ClockMap,
    args: &AlignArgs,
    files: &mut Vec<PathBuf>,
) -> Result<serde_json::Value, Failure> {
    let id = file_stem(&s.stream_id);
    let sim = |t: f64| map.to_sim(t);
    let fail = |e: SensorError| json!({ "stream": s.stream_id, "error": e.to_string() });
    match s.modality {
        Modality::Bvp => match hr_from_bvp(s, args.hr_window) {
            Ok(hr) => {
                let path = args.out.join(format!("hr_{id}.csv"));
                let rows: Vec<HrRow> = hr.hr_bpm.iter().map(|&(t, v)| HrRow { t_s: sim(t), hr_bpm: v }).collect();
                write_rows(&path, &rows)?;
                files.push(path);
                Ok(json!({
                    "stream": s.stream_id,
                    "beats": hr.peaks.len(),
                    "mean_hr_bpm": hr.mean_hr_bpm,
                    "rmssd_ms": hr.rmssd_ms,
                    "sdnn_ms": hr.sdnn_ms,
                    "flagged": hr.flagged,
                }))
            }
            Err(e) => Ok(fail(e)),
        },
        Modality::Eda => match eda_decompose(s, &EdaParams::default()) {
            Ok(eda) => {
                let path = args.out.join(format!("eda_{id}.csv"));
                let rows: Vec<EdaRow> = (0..eda.t.len())
                    .map(|i| EdaRow {
                        t_s: sim(eda.t[i]),
                        tonic_us: eda.tonic[i],
                        phasic_us: eda.phasic[i],
                    })
                    .collect();
                write_rows(&path, &rows)?;
                files.push(path);
                let path = args.out.join(format!("scr_{id}.csv"));
                let rows: Vec<ScrRow> = eda
                    .scrs
                    .iter()
                    .map(|r| ScrRow {
                        onset_s: sim(r.onset),
                        peak_s: sim(r.peak),
                        amplitude_us: r.amplitude,
                    })
                    .collect();
                write_rows(&path, &rows)?;
                files.push(path);
                Ok(json!({ "stream": s.stream_id, "scrs": eda.scrs.len() }))
            }
            Err(e) => Ok(fail(e)),
        },
        Modality::Gaze => {
            let fixations = match detect_fixations(s, &FixationParams::default()) {
                Ok(f) => f,
                Err(e) => return Ok(fail(e)),
            };
            let path = args.out.join(format!("fixations_{id}.csv"));
            let rows: Vec<FixationRow> = fixations
                .iter()
                .map(|f| FixationRow {
                    start_s: sim(f.start),
                    end_s: sim(f.end),
                    duration_s: f.duration(),
                    x_norm: f.x,
                    y_norm: f.y,
                    samples: f.samples,
                })
                .collect();
            write_rows(&path, &rows)?;
            files.push(path);
            let n = args.heatmap_cells.max(1);
            let grid = gaze_heatmap(s, n, n, 1.0).map_err(sensor_failure)?;
            let path = args.out.join(format!("heatmap_{id}.csv"));
            let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&path).map_err(|e| write_err(&path, e))?;
            for row in &grid {
                w.serialize(row).map_err(|e| write_err(&path, e))?;
            }
            w.flush().map_err(|e| write_err(&path, e))?;
            files.push(path);
            Ok(json!({ "stream": s.stream_id, "fixations": fixations.len() }))
        }
        _ => Ok(json!({ "stream": s.stream_id })),
    }
}

pub fn align(args: AlignArgs, out: Out) -> CmdResult {
    if !(args.pre >= 0.0 && args.post >= 0.0 && args.rate > 0.0 && args.hr_window > 0.0) {
        return Err(Failure::new(Exit::Usage, "--pre/--post must be >= 0 and --rate/--hr-window > 0"));
    }
    let mut codes = Vec::with_capacity(args.codes.len());
    for c in &args.codes {
        let code = EventCode::from_name(&c.to_ascii_lowercase())
            .or_else(|| c.parse::<u16>().ok().map(EventCode))
            .ok_or_else(|| Failure::new(Exit::Usage, format!("unknown event code {c:?}")))?;
        codes.push(code);
    }
    let log = ReplayLog::from_file(&args.events)?;
    let events: Vec<EventRecord> = log.events.values().flatten().copied().collect();
    let streams = load_streams(&args.streams)?;
    let maps = clock_maps(&streams, &events)?;
    fs::create_dir_all(&args.out).map_err(|e| write_err(&args.out, e))?;

    let mut files = Vec::new();
    let mut features = Vec::new();
    let mut unmapped = Vec::new();
    for s in streams.iter().filter(|s| s.modality != Modality::Mark) {
        match maps.get(&s.clock_id) {
            Some(m) => features.push(stream_features(s, m, &args, &mut files)?),
            None => unmapped.push(s.stream_id.clone()),
        }
    }

    let path = args.out.join("epochs.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| write_err(&path, e))?;
    let mut epoch_counts = BTreeMap::new();
    let mut warnings = Vec::new();
    for &code in &codes {
        let set = cut_epochs(&streams, &maps, &events, code, args.pre, args.post, args.rate);
        epoch_counts.insert(code.to_string(), set.epochs.len());
        for (k, e) in set.epochs.iter().enumerate() {
            for st in &e.streams {
                for (c, name) in st.channel_names.iter().enumerate() {
                    for (i, &t) in e.times.iter().enumerate() {
                        w.serialize(EpochRow {
                            code: code.to_string(),
                            epoch: k,
                            t0_s: e.t0,
                            stream: &st.stream_id,
                            channel: name,
                            t_rel_s: t,
                            value: st.data[c][i],
                            baseline_corrected: st.baseline_corrected,
                        })
                        .map_err(|e| write_err(&path, e))?;
                    }
                }
            }
        }
        warnings.extend(set.warnings);
    }
    w.flush().map_err(|e| write_err(&path, e))?;
    files.push(path);

    let summary = json!({
        "streams": streams.iter().map(|s| json!({
            "stream": s.stream_id,
            "modality": s.modality,
            "clock": s.clock_id,
            "samples": s.len(),
            "hbt_derived": s.hbt_derived,
        })).collect::<Vec<_>>(),
        "clock_maps": maps,
        "unmapped_streams": unmapped,
        "features": features,
        "epochs": epoch_counts,
        "warnings": warnings,
    });
    let path = args.out.join("align.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| write_err(&path, e))?;
    fs::write(&path, text).map_err(|e| write_err(&path, e))?;
    files.push(path);

    let mut value = summary.clone();
    value["files"] = json!(files);
    out.emit(&value, || {
        let mut t = String::new();
        for (clock, m) in &maps {
            if m.marks > 0 {
                t += &format!("clock {clock}: t_sim = {:.9}·t_dev + {:.6} ({} marks, rms {:.2e} s)\n", m.a, m.b, m.marks, m.residual_rms);
            }
        }
        for s in &unmapped {
            t += &format!("warning: stream {s} has no clock map; skipped\n");
        }
        for (code, n) in &epoch_counts {
            t += &format!("{code}: {n} epoch(s)\n");
        }
        for wn in &warnings {
            t += &format!("warning: epoch at {:.3} s, stream {}: {}\n", wn.t0, wn.stream_id, wn.message);
        }
        for f in &files {
            t += &format!("wrote {}\n", f.display());
        }
        t
    });
    Ok(())
}
