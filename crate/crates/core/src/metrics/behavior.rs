//! Per-agent behaviour measures over reconstructed trajectories.

use serde::{Deserialize, Serialize};

use super::surrogate::{crossing_ttc, drac, follow_ttc, ConflictApproach, Drac};
use crate::events::{EventCode, EventRecord};
use crate::scenario::Controller;
use crate::world::{AgentFlags, AgentKind, AgentState, ApproachPath, KinematicState, Lane, Polyline, Pose2D, Vec2};

/// Thresholds used across the behaviour metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricParams {
    /// Pedal position counted as braking, 0–1.
    pub brake_threshold: f64,
    /// Walking speed that counts as crossing motion, m/s.
    pub walk_speed: f64,
    /// How long `walk_speed` must hold, s.
    pub walk_hold_s: f64,
    /// Relative speed drop that counts as yielding.
    pub yield_drop: f64,
    /// Distance to a conflict point within which yielding is considered, m.
    pub yield_radius_m: f64,
    /// Minimum steering swing between counted reversals, degrees.
    pub reversal_deg: f64,
    /// |accel| above this is a hard acceleration event, m/s².
    pub accel_event: f64,
    /// Vehicle width used for lane departure, m.
    pub vehicle_width: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            brake_threshold: 0.05,
            walk_speed: 0.3,
            walk_hold_s: 0.2,
            yield_drop: 0.3,
            yield_radius_m: 20.0,
            reversal_deg: 2.0,
            accel_event: 1.0,
            vehicle_width: 1.8,
        }
    }
}

/// One agent at one tick, as reconstructed from a replay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub tick: u64,
    /// s.
    pub sim_time: f64,
    pub agent_id: u32,
    pub pose: Pose2D,
    pub kin: KinematicState,
    pub flags: AgentFlags,
    pub seated: bool,
    /// Applied brake, 0–1; 0 for walkers.
    pub brake: f64,
    /// Applied steering: wheel angle (rad) for vehicles, bar input for cyclists.
    pub steer: f64,
}

impl TrajectorySample {
    pub fn position(&self) -> Vec2 {
        self.pose.position()
    }

    pub fn state(&self, kind: AgentKind) -> AgentState {
        let mut s = AgentState::new(self.agent_id, kind, self.pose);
        s.kin = self.kin;
        s.seated = self.seated;
        s.flags = self.flags;
        s
    }
}

/// Samples of one agent at uniform tick spacing while it is alive.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub agent_id: u32,
    pub name: String,
    pub kind: AgentKind,
    pub controller: Controller,
    /// Approach path or lane id the agent is bound to.
    pub route: String,
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn at_tick(&self, tick: u64) -> Option<&TrajectorySample> {
        let i = self.samples.partition_point(|s| s.tick < tick);
        self.samples.get(i).filter(|s| s.tick == tick)
    }

    /// Spacing between consecutive samples, s; 0 with fewer than two.
    pub fn dt(&self) -> f64 {
        match self.samples.as_slice() {
            [a, b, ..] => b.sim_time - a.sim_time,
            _ => 0.0,
        }
    }
}

/// Mean and population standard deviation; `None` when empty.
pub fn mean_std(xs: impl IntoIterator<Item = f64>) -> Option<(f64, f64)> {
    let xs: Vec<f64> = xs.into_iter().collect();
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Maximal runs of `true`, as `(first, last)` index pairs.
fn runs(mask: impl IntoIterator<Item = bool>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    let mut last = 0;
    for (i, m) in mask.into_iter().enumerate() {
        match (m, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
        last = i;
    }
    if let Some(s) = start {
        out.push((s, last));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LaneMetrics {
    /// Samples projecting onto the lane (not past either end).
    pub samples: usize,
    pub rms_offset: f64,
    pub max_offset: f64,
    /// Maximal runs with |offset| > lane_width/2 − vehicle_width/2.
    pub departures: usize,
    /// Time spent departed, s.
    pub departure_s: f64,
}

/// Lateral offset statistics against a lane centerline.
pub fn lane_metrics(samples: &[TrajectorySample], lane: &Lane, params: &MetricParams) -> LaneMetrics {
    let offsets: Vec<f64> = samples
        .iter()
        .map(|s| lane.centerline.project(s.position()))
        .filter(|p| p.overshoot == 0.0)
        .map(|p| p.lateral_offset)
        .collect();
    if offsets.is_empty() {
        return LaneMetrics::default();
    }
    let n = offsets.len() as f64;
    let limit = lane.width / 2.0 - params.vehicle_width / 2.0;
    let departed = runs(offsets.iter().map(|o| o.abs() > limit));
    let dt = match samples {
        [a, b, ..] => b.sim_time - a.sim_time,
        _ => 0.0,
    };
    LaneMetrics {
        samples: offsets.len(),
        rms_offset: (offsets.iter().map(|o| o * o).sum::<f64>() / n).sqrt(),
        max_offset: offsets.iter().fold(0.0, |m, o| m.max(o.abs())),
        departures: departed.len(),
        departure_s: departed.iter().map(|(a, b)| (b - a + 1) as f64 * dt).sum(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Crossing,
    Following,
}

/// Surrogate safety state of a pair at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairPoint {
    pub tick: u64,
    pub t: f64,
    /// Absent when the pair is not on a collision course.
    pub ttc: Option<f64>,
    /// Following only.
    pub drac: Option<Drac>,
    /// Following only: bumper gap over follower speed, s.
    pub headway: Option<f64>,
    /// Following only: id of the rear agent.
    pub follower: Option<u32>,
}

fn paired<'a>(
    a: &'a Trajectory,
    b: &'a Trajectory,
) -> impl Iterator<Item = (&'a TrajectorySample, &'a TrajectorySample)> + 'a {
    a.samples.iter().filter_map(move |sa| b.at_tick(sa.tick).map(|sb| (sa, sb)))
}

/// Crossing TTC for two agents on approaches to the same conflict point.
pub fn crossing_series(a: &Trajectory, pa: &ApproachPath, b: &Trajectory, pb: &ApproachPath) -> Vec<PairPoint> {
    let approach = |t: &Trajectory, s: &TrajectorySample, p: &ApproachPath| ConflictApproach {
        distance: p.distance_to_conflict(&s.state(t.kind)).signed(),
        speed: s.kin.speed,
        half_length: t.kind.half_length(),
    };
    paired(a, b)
        .filter(|(sa, sb)| !sa.seated && !sb.seated)
        .map(|(sa, sb)| PairPoint {
            tick: sa.tick,
            t: sa.sim_time,
            ttc: crossing_ttc(&approach(a, sa, pa), &approach(b, sb, pb)),
            drac: None,
            headway: None,
            follower: None,
        })
        .collect()
}

/// Follow TTC, DRAC and headway for two agents sharing one path. The rear
/// agent at each tick is the follower; the gap is between footprints.
pub fn following_series(a: &Trajectory, b: &Trajectory, line: &Polyline) -> Vec<PairPoint> {
    paired(a, b)
        .map(|(sa, sb)| {
            let (arc_a, arc_b) = (line.project(sa.position()).arc_length, line.project(sb.position()).arc_length);
            let ((f, sf, kf), (sl, kl)) = if arc_a <= arc_b {
                ((a.agent_id, sa, a.kind), (sb, b.kind))
            } else {
                ((b.agent_id, sb, b.kind), (sa, a.kind))
            };
            let gap = (arc_a - arc_b).abs() - kf.half_length() - kl.half_length();
            let (vf, vl) = (sf.kin.speed, sl.kin.speed);
            PairPoint {
                tick: sa.tick,
                t: sa.sim_time,
                ttc: follow_ttc(gap, vf, vl),
                drac: Some(drac(gap, vf, vl)),
                headway: (vf > 0.0).then(|| gap.max(0.0) / vf),
                follower: Some(f),
            }
        })
        .collect()
}

/// A reaction-type measure; `value` is absent with a `reason` when the
/// pairing event or response never happened.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measure {
    pub agent_id: u32,
    /// Time of the triggering event, s.
    pub t_event: Option<f64>,
    /// s.
    pub value: Option<f64>,
    pub reason: Option<String>,
}

impl Measure {
    fn present(agent_id: u32, t_event: f64, value: f64) -> Self {
        Self {
            agent_id,
            t_event: Some(t_event),
            value: Some(value),
            reason: None,
        }
    }

    fn absent(agent_id: u32, t_event: Option<f64>, reason: &str) -> Self {
        Self {
            agent_id,
            t_event,
            value: None,
            reason: Some(reason.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ReactionTimes {
    pub brake_rt: Vec<Measure>,
    pub takeover_tti: Vec<Measure>,
    /// TAKEOVER_ENGAGE events with no pending request.
    pub spontaneous_overrides: Vec<(u32, f64)>,
    pub crossing_initiation: Vec<Measure>,
    pub gap_accepted: Vec<Measure>,
}

fn event_times(events: &[EventRecord], code: EventCode) -> Vec<f64> {
    events.iter().filter(|e| e.code == code).map(EventRecord::sim_time_s).collect()
}

/// First time at or after `from` where speed holds ≥ `walk_speed` for
/// `walk_hold_s`.
pub fn motion_onset(samples: &[TrajectorySample], from: f64, params: &MetricParams) -> Option<f64> {
    let start = samples.partition_point(|s| s.sim_time < from);
    let moving: Vec<bool> = samples[start..].iter().map(|s| s.kin.speed >= params.walk_speed).collect();
    runs(moving.iter().copied()).into_iter().find_map(|(i, j)| {
        let (t0, t1) = (samples[start + i].sim_time, samples[start + j].sim_time);
        (t1 - t0 >= params.walk_hold_s - 1e-9).then_some(t0)
    })
}

/// Time for `vehicle` to reach the conflict point of `path` at `tick`, s.
fn time_to_arrival(vehicle: &Trajectory, path: &ApproachPath, tick: u64) -> Option<f64> {
    let s = vehicle.at_tick(tick)?;
    let d = path.distance_to_conflict(&s.state(vehicle.kind));
    (!d.passed && s.kin.speed > 0.0).then(|| d.distance / s.kin.speed)
}

/// Event-locked reaction measures.
///
/// Brake reactions are measured for every non-scripted vehicle and cyclist
/// after each HAZARD event; crossing initiation for every non-scripted
/// pedestrian after each CROSSING_CUE. Gap acceptance is the shortest
/// arrival time, among vehicles approaching the pedestrian's conflict
/// point, at the pedestrian's first sustained motion (after the last cue,
/// or from the start when there is none).
pub fn reaction_times(
    events: &[EventRecord],
    trajectories: &[Trajectory],
    approaches: &[ApproachPath],
    params: &MetricParams,
) -> ReactionTimes {
    let mut out = ReactionTimes::default();
    let hazards = event_times(events, EventCode::HAZARD);
    let cues = event_times(events, EventCode::CROSSING_CUE);
    let approach = |route: &str| approaches.iter().find(|p| p.id == route);

    for t in trajectories.iter().filter(|t| t.controller != Controller::Script) {
        if t.kind.is_vehicle() || t.kind == AgentKind::Cyclist {
            if hazards.is_empty() {
                out.brake_rt.push(Measure::absent(t.agent_id, None, "no hazard event"));
            }
            for &th in &hazards {
                let first = t.samples.iter().find(|s| s.sim_time >= th && s.brake > params.brake_threshold);
                out.brake_rt.push(match first {
                    Some(s) => Measure::present(t.agent_id, th, s.sim_time - th),
                    None => Measure::absent(t.agent_id, Some(th), "no brake after hazard"),
                });
            }
        }
        if t.kind != AgentKind::Pedestrian {
            continue;
        }
        if cues.is_empty() {
            out.crossing_initiation.push(Measure::absent(t.agent_id, None, "no crossing cue"));
        }
        for &tc in &cues {
            out.crossing_initiation.push(match motion_onset(&t.samples, tc, params) {
                Some(t0) => Measure::present(t.agent_id, tc, t0 - tc),
                None => Measure::absent(t.agent_id, Some(tc), "never sustained walking speed"),
            });
        }
        let from = cues.last().copied().unwrap_or(0.0);
        let onset = motion_onset(&t.samples, from, params);
        let own = approach(&t.route);
        let gap = match (onset, own) {
            (None, _) => Err("never sustained walking speed"),
            (_, None) => Err("pedestrian is not on an approach path"),
            (Some(t0), Some(p)) => {
                let tick = t.samples.iter().find(|s| s.sim_time == t0).map(|s| s.tick).unwrap_or(0);
                trajectories
                    .iter()
                    .filter(|v| v.kind.is_vehicle() && v.route != t.route)
                    .filter_map(|v| {
                        let vp = approach(&v.route).filter(|vp| vp.conflict_point == p.conflict_point)?;
                        time_to_arrival(v, vp, tick)
                    })
                    .min_by(f64::total_cmp)
                    .map(|tta| (t0, tta))
                    .ok_or("no vehicle approaching the conflict point")
            }
        };
        out.gap_accepted.push(match gap {
            Ok((t0, tta)) => Measure::present(t.agent_id, t0, tta),
            Err(reason) => Measure::absent(t.agent_id, onset, reason),
        });
    }

    let mut pending: Vec<(u32, f64)> = Vec::new();
    for e in events {
        match e.code {
            EventCode::TAKEOVER_REQUEST => pending.push((e.subject, e.sim_time_s())),
            EventCode::TAKEOVER_ENGAGE => match pending.iter().position(|p| p.0 == e.subject) {
                Some(i) => {
                    let (agent, tr) = pending.remove(i);
                    out.takeover_tti.push(Measure::present(agent, tr, e.sim_time_s() - tr));
                }
                None => out.spontaneous_overrides.push((e.subject, e.sim_time_s())),
            },
            _ => {}
        }
    }
    for (agent, tr) in pending {
        out.takeover_tti.push(Measure::absent(agent, Some(tr), "no engage after request"));
    }
    out
}

/// Number of direction changes in `angles` whose swing from the previous
/// extreme is at least `gap`.
pub fn steering_reversals(angles: &[f64], gap: f64) -> usize {
    let Some(&first) = angles.first() else {
        return 0;
    };
    let (mut lo, mut hi) = (first, first);
    let mut dir = 0i8;
    let mut ext = first;
    let mut count = 0;
    for &v in &angles[1..] {
        match dir {
            0 => {
                lo = lo.min(v);
                hi = hi.max(v);
                if v - lo >= gap {
                    dir = 1;
                    ext = v;
                } else if hi - v >= gap {
                    dir = -1;
                    ext = v;
                }
            }
            1 if v > ext => ext = v,
            1 if ext - v >= gap => {
                count += 1;
                dir = -1;
                ext = v;
            }
            -1 if v < ext => ext = v,
            -1 if v - ext >= gap => {
                count += 1;
                dir = 1;
                ext = v;
            }
            _ => {}
        }
    }
    count
}

/// Area between a walked path and the straight line joining its ends, m².
pub fn deviation_area(points: &[Vec2]) -> f64 {
    let (Some(&a), Some(&b)) = (points.first(), points.last()) else {
        return 0.0;
    };
    let chord = b - a;
    let len = chord.norm();
    if len == 0.0 {
        return 0.0;
    }
    let u = chord.scale(1.0 / len);
    let local: Vec<(f64, f64)> = points.iter().map(|&p| ((p - a).dot(u), u.cross(p - a).abs())).collect();
    local
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0).abs())
        .sum()
}

/// Minimum distance from `me` to `other` over shared ticks.
pub fn min_distance(me: &Trajectory, other: &Trajectory) -> Option<f64> {
    paired(me, other)
        .map(|(a, b)| a.position().distance(b.position()))
        .min_by(f64::total_cmp)
}

/// Approaches to a conflict point that end in a speed drop of at least
/// `yield_drop` from the running maximum, while within `yield_radius_m` of
/// the point with another vulnerable road user also within that radius.
/// Each approach counts at most once.
pub fn yielding_events(
    me: &Trajectory,
    others: &[&Trajectory],
    conflict_points: &[Vec2],
    params: &MetricParams,
) -> usize {
    let r = params.yield_radius_m;
    let mut count = 0;
    for &c in conflict_points {
        let near: Vec<bool> = me
            .samples
            .iter()
            .map(|s| {
                s.position().distance(c) <= r
                    && others.iter().any(|o| {
                        o.kind.is_vru()
                            && o.agent_id != me.agent_id
                            && o.at_tick(s.tick).is_some_and(|os| os.position().distance(c) <= r)
                    })
            })
            .collect();
        for (i, j) in runs(near) {
            let mut vmax = f64::NEG_INFINITY;
            for s in &me.samples[i..=j] {
                vmax = vmax.max(s.kin.speed);
                if vmax > 0.0 && s.kin.speed <= (1.0 - params.yield_drop) * vmax {
                    count += 1;
                    break;
                }
            }
        }
    }
    count
}

/// Count of maximal runs with |accel| above the threshold.
pub fn hard_accel_events(samples: &[TrajectorySample], threshold: f64) -> usize {
    runs(samples.iter().map(|s| s.kin.accel.abs() > threshold)).len()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CyclistStats {
    pub agent_id: u32,
    /// rpm.
    pub cadence_mean: f64,
    pub cadence_std: f64,
    /// m/s.
    pub speed_mean: f64,
    pub speed_std: f64,
    pub hard_accel_events: usize,
    pub yielding_events: usize,
    /// (other agent, minimum distance m).
    pub min_distance: Vec<(u32, f64)>,
}

pub fn cyclist_stats(
    me: &Trajectory,
    others: &[&Trajectory],
    conflict_points: &[Vec2],
    params: &MetricParams,
) -> Option<CyclistStats> {
    let (cadence_mean, cadence_std) = mean_std(me.samples.iter().map(|s| s.kin.aux))?;
    let (speed_mean, speed_std) = mean_std(me.samples.iter().map(|s| s.kin.speed))?;
    Some(CyclistStats {
        agent_id: me.agent_id,
        cadence_mean,
        cadence_std,
        speed_mean,
        speed_std,
        hard_accel_events: hard_accel_events(&me.samples, params.accel_event),
        yielding_events: yielding_events(me, others, conflict_points, params),
        min_distance: others
            .iter()
            .filter(|o| o.agent_id != me.agent_id)
            .filter_map(|o| Some((o.agent_id, min_distance(me, o)?)))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PedestrianStats {
    pub agent_id: u32,
    /// m/s.
    pub speed_mean: f64,
    pub speed_std: f64,
    pub speed_max: f64,
    /// Walked distance, m.
    pub path_length: f64,
    /// m².
    pub deviation_area: f64,
}

pub fn pedestrian_stats(me: &Trajectory) -> Option<PedestrianStats> {
    let (speed_mean, speed_std) = mean_std(me.samples.iter().map(|s| s.kin.speed))?;
    let points: Vec<Vec2> = me.samples.iter().map(|s| s.position()).collect();
    Some(PedestrianStats {
        agent_id: me.agent_id,
        speed_mean,
        speed_std,
        speed_max: me.samples.iter().fold(0.0, |m, s| m.max(s.kin.speed)),
        path_length: points.windows(2).map(|w| w[0].distance(w[1])).sum(),
        deviation_area: deviation_area(&points),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitStats {
    pub agent_id: u32,
    /// DOOR_OPEN of the boarded vehicle to the first seated sample, s.
    pub board_latency: Option<f64>,
    /// That door cycle's open duration, s.
    pub dwell: Option<f64>,
    /// Closest approach to any other agent while not seated, m.
    pub min_proximity: Option<f64>,
    pub boarded_vehicle: Option<u32>,
}

pub fn transit_stats(me: &Trajectory, others: &[&Trajectory], events: &[EventRecord]) -> TransitStats {
    let boarded = me.samples.iter().find(|s| s.seated);
    let vehicle = events
        .iter()
        .find(|e| e.code == EventCode::BOARD && e.subject == me.agent_id)
        .map(|e| e.object);
    let door = boarded.zip(vehicle).and_then(|(s, v)| {
        let open = events
            .iter()
            .filter(|e| e.code == EventCode::DOOR_OPEN && e.subject == v && e.sim_time_s() <= s.sim_time)
            .last()?;
        let close = events
            .iter()
            .find(|e| e.code == EventCode::DOOR_CLOSE && e.subject == v && e.sim_time_us >= open.sim_time_us);
        Some((s.sim_time - open.sim_time_s(), close.map(|c| c.sim_time_s() - open.sim_time_s())))
    });
    let min_proximity = me
        .samples
        .iter()
        .filter(|s| !s.seated)
        .flat_map(|s| {
            others
                .iter()
                .filter(|o| o.agent_id != me.agent_id && Some(o.agent_id) != vehicle)
                .filter_map(move |o| o.at_tick(s.tick).filter(|os| !os.seated))
                .map(move |os| s.position().distance(os.position()))
        })
        .min_by(f64::total_cmp);
    TransitStats {
        agent_id: me.agent_id,
        board_latency: door.map(|d| d.0),
        dwell: door.and_then(|d| d.1),
        min_proximity,
        boarded_vehicle: vehicle,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VehicleStats {
    pub agent_id: u32,
    /// Steering-wheel angular velocity: mean |ω|, std of ω, max |ω|; rad/s.
    pub steer_rate_mean_abs: f64,
    pub steer_rate_std: f64,
    pub steer_rate_max_abs: f64,
    pub reversals: usize,
}

pub fn vehicle_stats(me: &Trajectory, params: &MetricParams) -> Option<VehicleStats> {
    let rates: Vec<f64> = me
        .samples
        .windows(2)
        .map(|w| (w[1].steer - w[0].steer) / (w[1].sim_time - w[0].sim_time))
        .collect();
    let (mean_abs, _) = mean_std(rates.iter().map(|r| r.abs()))?;
    let (_, std) = mean_std(rates.iter().copied())?;
    let angles: Vec<f64> = me.samples.iter().map(|s| s.steer).collect();
    Some(VehicleStats {
        agent_id: me.agent_id,
        steer_rate_mean_abs: mean_abs,
        steer_rate_std: std,
        steer_rate_max_abs: rates.iter().fold(0.0, |m, r| m.max(r.abs())),
        reversals: steering_reversals(&angles, params.reversal_deg.to_radians()),
    })
}
