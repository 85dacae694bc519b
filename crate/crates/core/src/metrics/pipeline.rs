//! Full metric extraction from a replay log.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::behavior::*;
use super::instruments::{score_instruments, Instrument, InstrumentResponse, InstrumentScores};
use super::nback::{grade_nback, NbackScore, Stimulus, NBACK_WINDOW_US};
use crate::events::{EventCode, EventRecord};
use crate::scenario::Scenario;
use crate::server::{replay, ReplayError, ReplayLog};
use crate::world::{AgentKind, ControlInput, Vec2};

/// Everything the metrics need from one session.
#[derive(Debug, Clone)]
pub struct RunData {
    pub scenario: Scenario,
    pub tick_rate_hz: u16,
    pub ticks: u64,
    pub events: Vec<EventRecord>,
    pub trajectories: Vec<Trajectory>,
}

/// Re-simulate a log and record every live agent at every tick.
pub fn run_data_from_log(log: &ReplayLog) -> Result<RunData, ReplayError> {
    let scenario = log.scenario().map_err(ReplayError::Scenario)?;
    let mut trajectories: Vec<Trajectory> = scenario
        .agents
        .iter()
        .map(|a| Trajectory {
            agent_id: a.id,
            name: a.spec.id.clone(),
            kind: a.spec.kind,
            controller: a.spec.controlled_by,
            route: a.spec.path.clone(),
            samples: Vec::new(),
        })
        .collect();
    let mut events = Vec::new();
    let report = replay(log, |sim, out| {
        events.extend_from_slice(&out.events);
        let t = out.sim_time_us as f64 / 1e6;
        for f in sim.frames().into_iter().filter(|f| f.alive) {
            let Some(traj) = trajectories.get_mut(f.state.agent_id as usize - 1) else {
                continue;
            };
            let (brake, steer) = match f.applied {
                ControlInput::Vehicle(v) => (v.brake, v.steer_wheel),
                ControlInput::Cyclist(c) => (c.brake, c.steer),
                _ => (0.0, 0.0),
            };
            traj.samples.push(TrajectorySample {
                tick: out.tick,
                sim_time: t,
                agent_id: f.state.agent_id,
                pose: f.state.pose,
                kin: f.state.kin,
                flags: f.state.flags,
                seated: f.state.seated,
                brake,
                steer,
            });
        }
    })?;
    Ok(RunData {
        scenario,
        tick_rate_hz: log.config.tick_rate_hz,
        ticks: report.ticks,
        events,
        trajectories,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaneRow {
    pub agent_id: u32,
    pub agent: String,
    pub kind: &'static str,
    pub lane: String,
    pub samples: usize,
    pub rms_offset_m: f64,
    pub max_offset_m: f64,
    pub departures: usize,
    pub departure_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyRow {
    pub agent_a: u32,
    pub agent_b: u32,
    pub relation: Relation,
    pub min_ttc_s: Option<f64>,
    pub t_min_ttc_s: Option<f64>,
    pub max_drac_mps2: Option<f64>,
    pub drac_saturated: bool,
    pub min_headway_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub t_s: f64,
    pub agent_a: u32,
    pub agent_b: u32,
    pub relation: Relation,
    pub ttc_s: Option<f64>,
    pub drac_mps2: Option<f64>,
    pub headway_s: Option<f64>,
    pub follower: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReactionRow {
    pub metric: &'static str,
    pub agent_id: u32,
    pub t_event_s: Option<f64>,
    pub value_s: Option<f64>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstrumentRow {
    pub agent_id: u32,
    /// 0-based administration of each instrument to this agent.
    pub administration: usize,
    #[serde(flatten)]
    pub scores: InstrumentScores,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NbackRow {
    pub agent_id: u32,
    pub block: usize,
    pub n: u32,
    pub stimuli: usize,
    #[serde(flatten)]
    pub score: NbackScore,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricsReport {
    pub ticks: u64,
    pub tick_rate_hz: u16,
    pub params: MetricParams,
    pub lane: Vec<LaneRow>,
    pub safety: Vec<SafetyRow>,
    #[serde(skip)]
    pub series: Vec<SeriesRow>,
    pub reactions: Vec<ReactionRow>,
    pub spontaneous_overrides: Vec<(u32, f64)>,
    pub cyclist: Vec<CyclistStats>,
    pub pedestrian: Vec<PedestrianStats>,
    pub transit: Vec<TransitStats>,
    pub vehicle: Vec<VehicleStats>,
    pub instruments: Vec<InstrumentRow>,
    pub nback: Vec<NbackRow>,
}

fn lane_for<'a>(t: &Trajectory, data: &'a RunData, params: &MetricParams) -> Option<&'a crate::world::Lane> {
    let map = &data.scenario.map;
    if let Some(l) = map.lane(&t.route) {
        return Some(l);
    }
    // Otherwise the lane holding the most samples within its width.
    map.lanes
        .iter()
        .map(|l| (l, lane_metrics(&t.samples, l, params)))
        .filter(|(l, m)| m.samples > 0 && m.rms_offset <= l.width / 2.0)
        .max_by_key(|(_, m)| m.samples)
        .map(|(l, _)| l)
}

fn safety(data: &RunData) -> (Vec<SafetyRow>, Vec<SeriesRow>) {
    let map = &data.scenario.map;
    let mut rows = Vec::new();
    let mut series = Vec::new();
    let ts = &data.trajectories;
    for (i, a) in ts.iter().enumerate() {
        for b in &ts[i + 1..] {
            let (rel, points) = if a.route == b.route {
                if a.kind.is_walker() || b.kind.is_walker() {
                    continue;
                }
                let Some(line) = map.polyline(&a.route) else { continue };
                (Relation::Following, following_series(a, b, line))
            } else {
                match (map.approach(&a.route), map.approach(&b.route)) {
                    (Some(pa), Some(pb)) if pa.conflict_point == pb.conflict_point => {
                        (Relation::Crossing, crossing_series(a, pa, b, pb))
                    }
                    _ => continue,
                }
            };
            let min_ttc = points
                .iter()
                .filter_map(|p| p.ttc.map(|v| (v, p.t)))
                .min_by(|x, y| x.0.total_cmp(&y.0));
            let max_drac = points.iter().filter_map(|p| p.drac).max_by(|x, y| x.value.total_cmp(&y.value));
            rows.push(SafetyRow {
                agent_a: a.agent_id,
                agent_b: b.agent_id,
                relation: rel,
                min_ttc_s: min_ttc.map(|m| m.0),
                t_min_ttc_s: min_ttc.map(|m| m.1),
                max_drac_mps2: max_drac.map(|d| d.value),
                drac_saturated: max_drac.is_some_and(|d| d.saturated),
                min_headway_s: points.iter().filter_map(|p| p.headway).min_by(f64::total_cmp),
            });
            series.extend(points.iter().map(|p| SeriesRow {
                t_s: p.t,
                agent_a: a.agent_id,
                agent_b: b.agent_id,
                relation: rel,
                ttc_s: p.ttc,
                drac_mps2: p.drac.map(|d| d.value),
                headway_s: p.headway,
                follower: p.follower,
            }));
        }
    }
    (rows, series)
}

fn reaction_rows(r: ReactionTimes) -> Vec<ReactionRow> {
    let mut out = Vec::new();
    for (metric, list) in [
        ("brake_rt", r.brake_rt),
        ("takeover_tti", r.takeover_tti),
        ("crossing_initiation", r.crossing_initiation),
        ("gap_accepted", r.gap_accepted),
    ] {
        out.extend(list.into_iter().map(|m| ReactionRow {
            metric,
            agent_id: m.agent_id,
            t_event_s: m.t_event,
            value_s: m.value,
            reason: m.reason,
        }));
    }
    out
}

/// Questionnaire answers grouped by agent and administration.
pub fn instrument_rows(events: &[EventRecord]) -> Vec<InstrumentRow> {
    let mut starts: BTreeMap<(u32, Instrument), usize> = BTreeMap::new();
    let mut groups: BTreeMap<(u32, usize), Vec<InstrumentResponse>> = BTreeMap::new();
    for e in events {
        match e.code {
            EventCode::QUESTIONNAIRE_START => {
                if let Some(inst) = Instrument::from_code(e.object as u8) {
                    *starts.entry((e.subject, inst)).or_insert(0) += 1;
                }
            }
            EventCode::QRESPONSE => {
                let Some(inst) = Instrument::from_code((e.object >> 8) as u8) else {
                    continue;
                };
                let admin = starts.get(&(e.subject, inst)).map_or(0, |n| n.saturating_sub(1));
                groups.entry((e.subject, admin)).or_default().push(InstrumentResponse {
                    instrument: inst,
                    item: (e.object & 0xff) as u8,
                    value: e.value,
                    sim_time_us: e.sim_time_us,
                });
            }
            _ => {}
        }
    }
    groups
        .into_iter()
        .map(|((agent_id, administration), rs)| InstrumentRow {
            agent_id,
            administration,
            scores: score_instruments(&rs),
        })
        .collect()
}

/// N-back blocks graded per responding agent. Block stimuli are the first
/// `length` NBACK_STIM events for the block's agent after its NBACK_START;
/// a block addressed to agent 0 is graded for every agent that responded.
pub fn nback_rows(events: &[EventRecord]) -> Vec<NbackRow> {
    let mut out = Vec::new();
    let mut block_index: BTreeMap<u32, usize> = BTreeMap::new();
    for (i, start) in events.iter().enumerate().filter(|(_, e)| e.code == EventCode::NBACK_START) {
        let (agent, n, length) = (start.subject, start.object, start.value as usize);
        let stimuli: Vec<Stimulus> = events[i + 1..]
            .iter()
            .filter(|e| e.code == EventCode::NBACK_STIM && e.subject == agent)
            .take(length)
            .map(|e| Stimulus {
                onset_us: e.sim_time_us,
                symbol: e.object as u8,
            })
            .collect();
        let (Some(first), Some(last)) = (stimuli.first(), stimuli.last()) else {
            continue;
        };
        let window = first.onset_us..=last.onset_us + NBACK_WINDOW_US;
        let mut responses: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
        for e in events.iter().filter(|e| e.code == EventCode::NBACK_RESP && window.contains(&e.sim_time_us)) {
            if agent == 0 || e.subject == agent {
                responses.entry(e.subject).or_default().push(e.sim_time_us);
            }
        }
        if agent != 0 {
            responses.entry(agent).or_default();
        }
        let block = block_index.entry(agent).or_insert(0);
        for (responder, times) in responses {
            out.push(NbackRow {
                agent_id: responder,
                block: *block,
                n,
                stimuli: stimuli.len(),
                score: grade_nback(&stimuli, &times, n as usize),
            });
        }
        *block += 1;
    }
    out
}

/// Every metric family over one session.
pub fn compute_metrics(data: &RunData, params: &MetricParams) -> MetricsReport {
    let map = &data.scenario.map;
    let ts = &data.trajectories;
    let all: Vec<&Trajectory> = ts.iter().collect();
    let conflicts: Vec<Vec2> = map.conflict_points.iter().map(|c| c.position).collect();
    let mut report = MetricsReport {
        ticks: data.ticks,
        tick_rate_hz: data.tick_rate_hz,
        params: *params,
        ..Default::default()
    };

    for t in ts.iter().filter(|t| !t.samples.is_empty()) {
        if t.kind.is_vehicle() || t.kind == AgentKind::Cyclist {
            if let Some(lane) = lane_for(t, data, params) {
                let m = lane_metrics(&t.samples, lane, params);
                report.lane.push(LaneRow {
                    agent_id: t.agent_id,
                    agent: t.name.clone(),
                    kind: t.kind.label(),
                    lane: lane.id.clone(),
                    samples: m.samples,
                    rms_offset_m: m.rms_offset,
                    max_offset_m: m.max_offset,
                    departures: m.departures,
                    departure_s: m.departure_s,
                });
            }
        }
        match t.kind {
            AgentKind::Cyclist => report.cyclist.extend(cyclist_stats(t, &all, &conflicts, params)),
            AgentKind::Pedestrian => report.pedestrian.extend(pedestrian_stats(t)),
            AgentKind::TransitUser => report.transit.push(transit_stats(t, &all, &data.events)),
            AgentKind::Driver | AgentKind::AutomatedVehicle => {
                // Scripted transit vehicles have no steering to speak of.
                if t.controller != crate::scenario::Controller::Script {
                    report.vehicle.extend(vehicle_stats(t, params));
                }
            }
        }
    }
    let (rows, series) = safety(data);
    report.safety = rows;
    report.series = series;
    let reactions = reaction_times(&data.events, ts, &map.approach_paths, params);
    report.spontaneous_overrides = reactions.spontaneous_overrides.clone();
    report.reactions = reaction_rows(reactions);
    report.instruments = instrument_rows(&data.events);
    report.nback = nback_rows(&data.events);
    report
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T], header: &[&str]) -> io::Result<PathBuf> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(path)
}

#[derive(Serialize)]
struct CyclistCsv {
    agent_id: u32,
    cadence_mean_rpm: f64,
    cadence_std_rpm: f64,
    speed_mean_mps: f64,
    speed_std_mps: f64,
    hard_accel_events: usize,
    yielding_events: usize,
}

#[derive(Serialize)]
struct ProximityCsv {
    agent_id: u32,
    other_id: u32,
    min_distance_m: f64,
}

#[derive(Serialize)]
struct PedestrianCsv {
    agent_id: u32,
    speed_mean_mps: f64,
    speed_std_mps: f64,
    speed_max_mps: f64,
    path_length_m: f64,
    deviation_area_m2: f64,
}

#[derive(Serialize)]
struct TransitCsv {
    agent_id: u32,
    boarded_vehicle: Option<u32>,
    board_latency_s: Option<f64>,
    dwell_s: Option<f64>,
    min_proximity_m: Option<f64>,
}

#[derive(Serialize)]
struct VehicleCsv {
    agent_id: u32,
    steer_rate_mean_abs_radps: f64,
    steer_rate_std_radps: f64,
    steer_rate_max_abs_radps: f64,
    reversals: usize,
}

#[derive(Serialize)]
struct InstrumentCsv {
    agent_id: u32,
    administration: usize,
    raw_tlx: Option<f64>,
    panas_positive: Option<u32>,
    panas_negative: Option<u32>,
    valence: Option<f64>,
    arousal: Option<f64>,
    stress: Option<f64>,
    time_ratio: Option<f64>,
    partial: String,
    rejected: usize,
}

#[derive(Serialize)]
struct NbackCsv {
    agent_id: u32,
    block: usize,
    n: u32,
    stimuli: usize,
    hits: u32,
    misses: u32,
    false_alarms: u32,
    correct_rejections: u32,
    omissions: u32,
    stray_responses: u32,
    accuracy: Option<f64>,
    mean_rt_s: Option<f64>,
}

/// Write one CSV per metric family plus `summary.json` into `dir`.
pub fn write_metrics(report: &MetricsReport, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = vec![
        write_csv(
            dir,
            "lane.csv",
            &report.lane,
            &["agent_id", "agent", "kind", "lane", "samples", "rms_offset_m", "max_offset_m", "departures", "departure_s"],
        )?,
        write_csv(
            dir,
            "safety.csv",
            &report.safety,
            &["agent_a", "agent_b", "relation", "min_ttc_s", "t_min_ttc_s", "max_drac_mps2", "drac_saturated", "min_headway_s"],
        )?,
        write_csv(
            dir,
            "safety_series.csv",
            &report.series,
            &["t_s", "agent_a", "agent_b", "relation", "ttc_s", "drac_mps2", "headway_s", "follower"],
        )?,
        write_csv(
            dir,
            "reactions.csv",
            &report.reactions,
            &["metric", "agent_id", "t_event_s", "value_s", "reason"],
        )?,
    ];
    let cyclist: Vec<CyclistCsv> = report
        .cyclist
        .iter()
        .map(|c| CyclistCsv {
            agent_id: c.agent_id,
            cadence_mean_rpm: c.cadence_mean,
            cadence_std_rpm: c.cadence_std,
            speed_mean_mps: c.speed_mean,
            speed_std_mps: c.speed_std,
            hard_accel_events: c.hard_accel_events,
            yielding_events: c.yielding_events,
        })
        .collect();
    files.push(write_csv(
        dir,
        "cyclist.csv",
        &cyclist,
        &["agent_id", "cadence_mean_rpm", "cadence_std_rpm", "speed_mean_mps", "speed_std_mps", "hard_accel_events", "yielding_events"],
    )?);
    let proximity: Vec<ProximityCsv> = report
        .cyclist
        .iter()
        .flat_map(|c| {
            c.min_distance.iter().map(|&(other_id, d)| ProximityCsv {
                agent_id: c.agent_id,
                other_id,
                min_distance_m: d,
            })
        })
        .collect();
    files.push(write_csv(dir, "cyclist_proximity.csv", &proximity, &["agent_id", "other_id", "min_distance_m"])?);
    let pedestrian: Vec<PedestrianCsv> = report
        .pedestrian
        .iter()
        .map(|p| PedestrianCsv {
            agent_id: p.agent_id,
            speed_mean_mps: p.speed_mean,
            speed_std_mps: p.speed_std,
            speed_max_mps: p.speed_max,
            path_length_m: p.path_length,
            deviation_area_m2: p.deviation_area,
        })
        .collect();
    files.push(write_csv(
        dir,
        "pedestrian.csv",
        &pedestrian,
        &["agent_id", "speed_mean_mps", "speed_std_mps", "speed_max_mps", "path_length_m", "deviation_area_m2"],
    )?);
    let transit: Vec<TransitCsv> = report
        .transit
        .iter()
        .map(|t| TransitCsv {
            agent_id: t.agent_id,
            boarded_vehicle: t.boarded_vehicle,
            board_latency_s: t.board_latency,
            dwell_s: t.dwell,
            min_proximity_m: t.min_proximity,
        })
        .collect();
    files.push(write_csv(
        dir,
        "transit.csv",
        &transit,
        &["agent_id", "boarded_vehicle", "board_latency_s", "dwell_s", "min_proximity_m"],
    )?);
    let vehicle: Vec<VehicleCsv> = report
        .vehicle
        .iter()
        .map(|v| VehicleCsv {
            agent_id: v.agent_id,
            steer_rate_mean_abs_radps: v.steer_rate_mean_abs,
            steer_rate_std_radps: v.steer_rate_std,
            steer_rate_max_abs_radps: v.steer_rate_max_abs,
            reversals: v.reversals,
        })
        .collect();
    files.push(write_csv(
        dir,
        "vehicle.csv",
        &vehicle,
        &["agent_id", "steer_rate_mean_abs_radps", "steer_rate_std_radps", "steer_rate_max_abs_radps", "reversals"],
    )?);
    let instruments: Vec<InstrumentCsv> = report
        .instruments
        .iter()
        .map(|r| InstrumentCsv {
            agent_id: r.agent_id,
            administration: r.administration,
            raw_tlx: r.scores.raw_tlx,
            panas_positive: r.scores.panas_positive,
            panas_negative: r.scores.panas_negative,
            valence: r.scores.valence,
            arousal: r.scores.arousal,
            stress: r.scores.stress,
            time_ratio: r.scores.time_ratio,
            partial: r.scores.partial.iter().map(|i| i.label()).collect::<Vec<_>>().join(";"),
            rejected: r.scores.rejected,
        })
        .collect();
    files.push(write_csv(
        dir,
        "instruments.csv",
        &instruments,
        &[
            "agent_id", "administration", "raw_tlx", "panas_positive", "panas_negative", "valence", "arousal",
            "stress", "time_ratio", "partial", "rejected",
        ],
    )?);
    let nback: Vec<NbackCsv> = report
        .nback
        .iter()
        .map(|r| NbackCsv {
            agent_id: r.agent_id,
            block: r.block,
            n: r.n,
            stimuli: r.stimuli,
            hits: r.score.hits,
            misses: r.score.misses,
            false_alarms: r.score.false_alarms,
            correct_rejections: r.score.correct_rejections,
            omissions: r.score.omissions,
            stray_responses: r.score.stray_responses,
            accuracy: r.score.accuracy,
            mean_rt_s: r.score.mean_rt,
        })
        .collect();
    files.push(write_csv(
        dir,
        "nback.csv",
        &nback,
        &[
            "agent_id", "block", "n", "stimuli", "hits", "misses", "false_alarms", "correct_rejections",
            "omissions", "stray_responses", "accuracy", "mean_rt_s",
        ],
    )?);
    let summary = dir.join("summary.json");
    fs::write(&summary, serde_json::to_string_pretty(report).map_err(io::Error::other)?)?;
    files.push(summary);
    Ok(files)
}
