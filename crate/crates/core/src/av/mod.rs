//! Automated-vehicle behaviour: a five-state yielding machine, the eHMI
//! channels it drives, and the one-way handover to a human supervisor.
//!
//! ```text
//! Cruising    -> Approaching   VRU near the conflict point, own TTA < 2·ttc_yield
//! Approaching -> Yielding      crossing TTC ≤ ttc_yield, VRU arrives first, or red
//! Approaching -> Cruising      no VRU left nearby
//! Yielding    -> Stopped       v < 0.05 m/s
//! Yielding    -> Resuming      zone clear for resume_clear_time, or committed
//! Stopped     -> Resuming      zone clear for resume_clear_time
//! Resuming    -> Yielding      new conflict
//! Resuming    -> Cruising      back at cruise speed
//! ```

mod ehmi;
mod takeover;

use std::collections::BTreeMap;

pub use ehmi::{set_ehmi, AudioCue, EhmiMask, EhmiState};
pub use takeover::{exceeds_threshold, takeover, TakeoverEvent, TAKEOVER_BRAKE, TAKEOVER_STEER, TAKEOVER_THROTTLE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{VehicleParams, GRAVITY};
use crate::metrics::{crossing_ttc, ConflictApproach};
use crate::world::{limits, AgentKind, AgentState, ApproachPath, MapModel, Pose2D, Vec2, VehicleInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AvState {
    Cruising,
    Approaching,
    Yielding,
    Stopped,
    Resuming,
}

impl AvState {
    pub const ALL: [AvState; 5] = [
        AvState::Cruising,
        AvState::Approaching,
        AvState::Yielding,
        AvState::Stopped,
        AvState::Resuming,
    ];

    /// Edges of the transition graph (self-loops excluded).
    pub fn can_transition(self, to: AvState) -> bool {
        use AvState::*;
        matches!(
            (self, to),
            (Cruising, Approaching)
                | (Approaching, Cruising)
                | (Approaching, Yielding)
                | (Yielding, Stopped)
                | (Yielding, Resuming)
                | (Stopped, Resuming)
                | (Resuming, Yielding)
                | (Resuming, Cruising)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvParams {
    /// m/s
    pub v_cruise: f64,
    /// m, around the conflict point.
    pub detect_radius: f64,
    /// s
    pub ttc_yield: f64,
    /// m between front bumper and conflict point at standstill.
    pub stop_buffer: f64,
    /// m/s²
    pub comfort_decel: f64,
    /// s the zone must stay clear before moving off.
    pub resume_clear_time: f64,
    /// m; a VRU this close to the conflict point is on the crossing.
    pub zone_radius: f64,
    /// Pure-pursuit lookahead, m.
    pub lookahead: f64,
    /// Speed-hold gain, 1/s.
    pub speed_gain: f64,
    pub vehicle: VehicleParams,
}

impl Default for AvParams {
    fn default() -> Self {
        Self {
            v_cruise: 8.333,
            detect_radius: 35.0,
            ttc_yield: 4.0,
            stop_buffer: 2.0,
            comfort_decel: 2.5,
            resume_clear_time: 1.5,
            zone_radius: 3.0,
            lookahead: 8.0,
            speed_gain: 1.0,
            vehicle: VehicleParams::default(),
        }
    }
}

impl AvParams {
    pub fn validate(&self) -> Result<(), AvError> {
        let fields = [
            ("v_cruise", self.v_cruise),
            ("detect_radius", self.detect_radius),
            ("ttc_yield", self.ttc_yield),
            ("stop_buffer", self.stop_buffer),
            ("comfort_decel", self.comfort_decel),
            ("resume_clear_time", self.resume_clear_time),
            ("zone_radius", self.zone_radius),
            ("lookahead", self.lookahead),
            ("speed_gain", self.speed_gain),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AvError::BadParam(name));
            }
        }
        if self.stop_buffer >= self.detect_radius {
            return Err(AvError::BadParam("stop_buffer"));
        }
        if self.comfort_decel > self.vehicle.b_max {
            return Err(AvError::BadParam("comfort_decel"));
        }
        self.vehicle.validate().map_err(|_| AvError::BadParam("vehicle"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AvError {
    #[error("agent {0} not in world")]
    UnknownAgent(u32),
    #[error("agent {0} has no approach path")]
    NoRoute(u32),
    #[error("unknown path {0}")]
    UnknownPath(String),
    #[error("unknown conflict point {0}")]
    UnknownConflict(String),
    #[error("invalid AV parameter {0}")]
    BadParam(&'static str),
}

/// Per-AV state carried between ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AvMemory {
    pub state: AvState,
    /// Sim time since which no VRU has been in or heading for the zone.
    pub clear_since_us: Option<u64>,
}

impl Default for AvMemory {
    fn default() -> Self {
        Self {
            state: AvState::Cruising,
            clear_since_us: None,
        }
    }
}

/// Read-only view of the world handed to the policy.
pub struct AvWorld<'a> {
    pub agents: &'a [AgentState],
    pub map: &'a MapModel,
    /// Approach path id per agent.
    pub routes: &'a BTreeMap<u32, String>,
    /// Whether the AV's approach currently shows red.
    pub signal_red: bool,
    pub t_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvDecision {
    pub input: VehicleInput,
    pub memory: AvMemory,
    /// Unmasked channel state for the new AV state.
    pub ehmi: EhmiState,
}

/// A VRU as seen relative to the AV's conflict point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VruView {
    pub agent_id: u32,
    pub approach: ConflictApproach,
    /// Straight-line distance to the conflict point.
    pub radial: f64,
}

/// Extra stand-off beyond the stop buffer that absorbs the one-tick
/// position lag of explicit Euler at the end of a stop.
pub const STOP_MARGIN: f64 = 0.05;
/// Below this speed the AV counts as stopped.
pub const STOP_SPEED: f64 = 0.05;
/// VRUs slower than this toward the point are not treated as approaching.
const APPROACH_SPEED_MIN: f64 = 0.1;

/// Approach geometry for every VRU that is not riding a vehicle.
///
/// VRUs on a path to the same conflict point use path distance; anyone else
/// is measured straight-line with their velocity component toward the point.
pub fn observe_vrus(world: &AvWorld, conflict_id: &str, conflict: Vec2) -> Vec<VruView> {
    world
        .agents
        .iter()
        .filter(|a| a.kind.is_vru() && !a.seated)
        .map(|a| {
            let radial = a.position().distance(conflict);
            let on_path = world
                .routes
                .get(&a.agent_id)
                .and_then(|id| world.map.approach(id))
                .filter(|p| p.conflict_point == conflict_id);
            let approach = match on_path {
                Some(p) => ConflictApproach {
                    distance: p.distance_to_conflict(a).signed(),
                    speed: a.kin.speed,
                    half_length: a.kind.half_length(),
                },
                None => {
                    let to_point = conflict - a.position();
                    let toward = if radial > 0.0 {
                        a.kin.speed * Vec2::from_heading(a.pose.heading).dot(to_point) / radial
                    } else {
                        0.0
                    };
                    ConflictApproach {
                        distance: radial,
                        speed: toward,
                        half_length: a.kind.half_length(),
                    }
                }
            };
            VruView {
                agent_id: a.agent_id,
                approach,
                radial,
            }
        })
        .collect()
}

fn tta(a: &ConflictApproach) -> f64 {
    if a.speed > APPROACH_SPEED_MIN && a.distance > 0.0 {
        a.distance / a.speed
    } else {
        f64::INFINITY
    }
}

/// Pure-pursuit steering-wheel angle toward the point `lookahead` ahead of
/// the AV's projection on `path`.
pub fn pure_pursuit(av: &AgentState, path: &ApproachPath, lookahead: f64, vehicle: &VehicleParams) -> f64 {
    let proj = path.project(av.position());
    let target = path.path.point_at(proj.arc_length + proj.overshoot + lookahead);
    let local = av.pose.relative(&Pose2D::new(target.x, target.y, 0.0));
    let ld2 = local.x * local.x + local.y * local.y;
    if ld2 <= 0.0 {
        return 0.0;
    }
    let delta = (2.0 * local.y / ld2 * vehicle.wheelbase).atan();
    let limit = (vehicle.max_road_wheel * vehicle.steer_ratio).min(limits::STEER_WHEEL_MAX);
    (delta * vehicle.steer_ratio).clamp(-limit, limit)
}

/// Convert a desired longitudinal acceleration into pedal positions,
/// compensating drag and grade. Braking is capped at full pedal (b_max).
fn pedals(a_des: f64, v: f64, grade: f64, p: &VehicleParams) -> (f64, f64) {
    let net = a_des + p.drag_coeff * v + GRAVITY * grade;
    if net >= 0.0 {
        ((net / p.a_max).min(1.0), 0.0)
    } else {
        (0.0, (-net / p.b_max).min(1.0))
    }
}

/// One policy decision for the AV `av_id`. Pure: the same world and memory
/// always give the same decision.
pub fn av_decide(world: &AvWorld, av_id: u32, memory: &AvMemory, params: &AvParams) -> Result<AvDecision, AvError> {
    let av = world
        .agents
        .iter()
        .find(|a| a.agent_id == av_id)
        .ok_or(AvError::UnknownAgent(av_id))?;
    let path_id = world.routes.get(&av_id).ok_or(AvError::NoRoute(av_id))?;
    let path = world
        .map
        .approach(path_id)
        .ok_or_else(|| AvError::UnknownPath(path_id.clone()))?;
    let conflict = world
        .map
        .conflict_point(&path.conflict_point)
        .ok_or_else(|| AvError::UnknownConflict(path.conflict_point.clone()))?;

    let half = AgentKind::AutomatedVehicle.half_length();
    let v = av.kin.speed.max(0.0);
    let me = ConflictApproach {
        distance: path.distance_to_conflict(av).signed(),
        speed: v,
        half_length: half,
    };
    // Front bumper at or past the point: stopping would block the crossing.
    let committed = me.distance <= half;
    let my_tta = tta(&me);
    let my_exit = if v > APPROACH_SPEED_MIN {
        (me.distance + half) / v
    } else {
        f64::INFINITY
    };

    let vrus = observe_vrus(world, &conflict.id, conflict.position);
    let not_cleared = |u: &VruView| u.approach.distance > -u.approach.half_length;
    let in_zone = |u: &VruView| u.radial <= params.zone_radius;
    let nearby: Vec<&VruView> = vrus
        .iter()
        .filter(|u| u.radial <= params.detect_radius && not_cleared(u))
        .collect();

    let conflict_now = world.signal_red
        || vrus.iter().any(in_zone)
        || nearby.iter().any(|u| {
            let ttc_hit = crossing_ttc(&me, &u.approach).is_some_and(|t| t <= params.ttc_yield);
            let their_tta = tta(&u.approach);
            ttc_hit || (their_tta <= params.ttc_yield && their_tta <= my_exit)
        });
    let yield_needed = !committed && conflict_now;
    let approach_cond = !committed && my_tta < 2.0 * params.ttc_yield && (!nearby.is_empty() || world.signal_red);

    let demand = world.signal_red
        || vrus.iter().any(in_zone)
        || nearby.iter().any(|u| u.approach.speed > APPROACH_SPEED_MIN);
    let clear_since_us = if demand {
        None
    } else {
        Some(memory.clear_since_us.unwrap_or(world.t_us))
    };
    let clear_long_enough =
        clear_since_us.is_some_and(|t0| (world.t_us - t0) as f64 >= params.resume_clear_time * 1e6);

    use AvState::*;
    let next = match memory.state {
        Cruising if approach_cond => Approaching,
        Approaching if yield_needed => Yielding,
        Approaching if !approach_cond => Cruising,
        Yielding if v < STOP_SPEED => Stopped,
        Yielding if committed || clear_long_enough => Resuming,
        Stopped if clear_long_enough => Resuming,
        Resuming if yield_needed && approach_cond => Yielding,
        Resuming if (v - params.v_cruise).abs() <= 0.1 => Cruising,
        s => s,
    };

    let cruise = params.speed_gain * (params.v_cruise - v);
    let a_des = match next {
        Cruising | Approaching | Resuming => cruise,
        Yielding => {
            let stop_at = params.stop_buffer + half + STOP_MARGIN;
            let room = me.distance - stop_at;
            if room <= 0.0 {
                -params.vehicle.b_max
            } else {
                let a_req = v * v / (2.0 * room);
                if a_req >= params.comfort_decel {
                    -a_req
                } else {
                    cruise
                }
            }
        }
        Stopped => -params.comfort_decel,
    };
    let grade = path.grades.grade_at(path.project(av.position()).arc_length);
    let (throttle, brake) = pedals(a_des, v, grade, &params.vehicle);
    let steer_wheel = pure_pursuit(av, path, params.lookahead, &params.vehicle);

    Ok(AvDecision {
        input: VehicleInput {
            steer_wheel,
            throttle,
            brake,
            gear: 1,
        },
        memory: AvMemory {
            state: next,
            clear_since_us,
        },
        ehmi: set_ehmi(next),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{step_vehicle, PathFollower};
    use crate::world::{ConflictPoint, GradeProfile, Polyline};

    fn map() -> MapModel {
        MapModel {
            conflict_points: vec![ConflictPoint {
                id: "c".into(),
                position: Vec2::new(0.0, 0.0),
            }],
            approach_paths: vec![
                ApproachPath {
                    id: "car".into(),
                    conflict_point: "c".into(),
                    path: Polyline::from_xy(&[[-100.0, 0.0], [0.0, 0.0]]).unwrap(),
                    grades: GradeProfile::flat(),
                },
                ApproachPath {
                    id: "ped".into(),
                    conflict_point: "c".into(),
                    path: Polyline::from_xy(&[[0.0, -40.0], [0.0, 0.0]]).unwrap(),
                    grades: GradeProfile::flat(),
                },
            ],
            ..Default::default()
        }
    }

    struct Run {
        stop_distance: Option<f64>,
        yield_at: Option<f64>,
        states: Vec<(u64, AvState)>,
        overlap: bool,
    }

    /// Closed loop: AV under policy, pedestrian scripted at constant speed
    /// from `ped_start` metres out.
    fn run(ped_speed: Option<(f64, f64)>, dt_us: u64, seconds: f64) -> Run {
        let map = map();
        let params = AvParams::default();
        let dt = dt_us as f64 / 1e6;
        let mut routes = BTreeMap::new();
        routes.insert(1, "car".to_string());
        routes.insert(2, "ped".to_string());
        let mut av = AgentState::new(1, AgentKind::AutomatedVehicle, Pose2D::new(-100.0, 0.0, 0.0));
        av.kin.speed = params.v_cruise;
        let ped_path = map.approach("ped").unwrap().path.clone();
        let (ped_v, ped_d) = ped_speed.unwrap_or((0.0, 1000.0));
        let follower = PathFollower::new(40.0 - ped_d, ped_v);
        let mut ped = follower.apply(&AgentState::new(2, AgentKind::Pedestrian, Pose2D::default()), &ped_path, 0);
        let mut mem = AvMemory::default();
        let mut out = Run {
            stop_distance: None,
            yield_at: None,
            states: vec![(0, mem.state)],
            overlap: false,
        };
        let ticks = (seconds * 1e6) as u64 / dt_us;
        for tick in 1..=ticks {
            let t = tick * dt_us;
            let agents = [av, ped];
            let world = AvWorld {
                agents: &agents,
                map: &map,
                routes: &routes,
                signal_red: false,
                t_us: t - dt_us,
            };
            let d = av_decide(&world, 1, &mem, &params).unwrap();
            assert!(d.memory.state == mem.state || mem.state.can_transition(d.memory.state));
            if d.memory.state != mem.state {
                out.states.push((t, d.memory.state));
                if d.memory.state == AvState::Yielding && out.yield_at.is_none() {
                    out.yield_at = Some(-av.pose.x);
                }
            }
            mem = d.memory;
            av = step_vehicle(&av, &d.input, &params.vehicle, 0.0, dt).unwrap();
            ped = follower.apply(&ped, &ped_path, t);
            if av.kin.speed == 0.0 && out.stop_distance.is_none() {
                out.stop_distance = Some(-av.pose.x);
            }
            if av.pose.x.abs() <= 2.25 && ped.pose.y.abs() <= 0.3 {
                out.overlap = true;
            }
        }
        out
    }

    #[test]
    fn cruises_without_vrus() {
        let r = run(None, 10_000, 10.0);
        assert_eq!(r.states, vec![(0, AvState::Cruising)]);
        assert!(r.stop_distance.is_none());
    }

    #[test]
    fn cruise_speed_holds() {
        let map = map();
        let params = AvParams::default();
        let mut routes = BTreeMap::new();
        routes.insert(1, "car".to_string());
        let mut av = AgentState::new(1, AgentKind::AutomatedVehicle, Pose2D::new(-100.0, 0.5, 0.05));
        let mem = AvMemory::default();
        for tick in 0..3000u64 {
            let agents = [av];
            let world = AvWorld {
                agents: &agents,
                map: &map,
                routes: &routes,
                signal_red: false,
                t_us: tick * 10_000,
            };
            let d = av_decide(&world, 1, &mem, &params).unwrap();
            av = step_vehicle(&av, &d.input, &params.vehicle, 0.0, 0.01).unwrap();
        }
        assert!((av.kin.speed - params.v_cruise).abs() < 0.1);
        // Lane keeping pulled the car back onto the centreline.
        assert!(av.pose.y.abs() < 0.05, "{}", av.pose.y);
    }

    #[test]
    fn fig6_equal_tta_yields_and_stops_short() {
        // Pedestrian 18 m out at 1.5 m/s, AV 100 m out at 30 km/h: both 12 s.
        let r = run(Some((1.5, 18.0)), 1_000, 30.0);
        let yield_at = r.yield_at.expect("AV never yielded");
        assert!(yield_at > 2.0);
        let stop = r.stop_distance.expect("AV never stopped");
        assert!(stop - 2.25 >= 2.0, "front bumper {} m short", stop - 2.25);
        assert!(!r.overlap);
        let seq: Vec<AvState> = r.states.iter().map(|s| s.1).collect();
        assert_eq!(
            seq,
            vec![
                AvState::Cruising,
                AvState::Approaching,
                AvState::Yielding,
                AvState::Stopped,
                AvState::Resuming,
                AvState::Cruising
            ]
        );
    }

    #[test]
    fn resumes_after_clear_time() {
        let r = run(Some((1.5, 18.0)), 10_000, 30.0);
        let stopped = r.states.iter().find(|s| s.1 == AvState::Stopped).unwrap().0;
        let resumed = r.states.iter().find(|s| s.1 == AvState::Resuming).unwrap().0;
        // Pedestrian leaves the 3 m zone at (18 + 3)/1.5 = 14 s.
        let left_zone = 14_000_000;
        assert!(stopped < left_zone);
        assert!(resumed >= left_zone + 1_500_000);
        assert!(resumed <= left_zone + 1_500_000 + 20_000);
    }

    #[test]
    fn transitions_follow_graph() {
        for a in AvState::ALL {
            assert!(!a.can_transition(a));
        }
        assert!(!AvState::Cruising.can_transition(AvState::Stopped));
        assert!(!AvState::Stopped.can_transition(AvState::Cruising));
    }

    #[test]
    fn missing_route_is_error() {
        let map = map();
        let routes = BTreeMap::new();
        let agents = [AgentState::new(1, AgentKind::AutomatedVehicle, Pose2D::default())];
        let w = AvWorld {
            agents: &agents,
            map: &map,
            routes: &routes,
            signal_red: false,
            t_us: 0,
        };
        assert_eq!(
            av_decide(&w, 1, &AvMemory::default(), &AvParams::default()),
            Err(AvError::NoRoute(1))
        );
        assert_eq!(
            av_decide(&w, 9, &AvMemory::default(), &AvParams::default()),
            Err(AvError::UnknownAgent(9))
        );
    }
}
