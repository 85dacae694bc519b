//! Scripted motion: constant-speed path followers and transit vehicles with
//! trapezoidal speed profiles and timed stops.

use crate::world::{AgentState, Polyline, Pose2D};

/// Moves an agent along a polyline at constant speed from a start arc length.
///
/// Position is a closed-form function of elapsed time so that repeated ticks
/// accumulate no rounding drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathFollower {
    pub start_s: f64,
    pub speed: f64,
    /// Sim time (µs) at which motion began; `None` while parked.
    pub started_at_us: Option<u64>,
}

impl PathFollower {
    pub fn new(start_s: f64, speed: f64) -> Self {
        Self {
            start_s,
            speed,
            started_at_us: Some(0),
        }
    }

    pub fn parked(start_s: f64, speed: f64) -> Self {
        Self {
            start_s,
            speed,
            started_at_us: None,
        }
    }

    pub fn arc_at(&self, t_us: u64) -> f64 {
        match self.started_at_us {
            Some(t0) if t_us > t0 => {
                self.start_s + self.speed * ((t_us - t0) as f64 / 1e6)
            }
            _ => self.start_s,
        }
    }

    pub fn is_moving(&self, t_us: u64) -> bool {
        matches!(self.started_at_us, Some(t0) if t_us >= t0)
    }

    /// Place `state` on the path at time `t_us`, filling pose and kinematics.
    pub fn apply(&self, state: &AgentState, path: &Polyline, t_us: u64) -> AgentState {
        let s = self.arc_at(t_us);
        let p = path.point_at(s);
        let mut next = *state;
        next.pose = Pose2D::new(p.x, p.y, path.heading_at(s));
        next.kin.speed = if self.is_moving(t_us) { self.speed } else { 0.0 };
        next.kin.accel = 0.0;
        next.kin.yaw_rate = 0.0;
        next
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitRoute {
    /// Stop positions as arc lengths along the route, ascending.
    pub stops: Vec<f64>,
    pub dwell_s: f64,
    /// Acceleration and braking magnitude, m/s².
    pub accel: f64,
    pub cruise_speed: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Default for TransitRoute {
    fn default() -> Self {
        Self {
            stops: Vec::new(),
            dwell_s: 20.0,
            accel: 1.0,
            cruise_speed: 8.333,
            half_length: 6.0,
            half_width: 1.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransitPhase {
    Moving,
    Dwelling { stop: usize, until_us: u64 },
}

/// Door transitions reported by [`TransitScript::step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoorEvent {
    Opened(usize),
    Closed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitScript {
    pub route: TransitRoute,
    pub s: f64,
    pub v: f64,
    pub phase: TransitPhase,
    next_stop: usize,
}

impl TransitScript {
    pub fn new(route: TransitRoute, start_s: f64) -> Self {
        let next_stop = route.stops.partition_point(|&s| s < start_s);
        Self {
            route,
            s: start_s,
            v: 0.0,
            phase: TransitPhase::Moving,
            next_stop,
        }
    }

    pub fn doors_open(&self) -> bool {
        matches!(self.phase, TransitPhase::Dwelling { .. })
    }

    /// Advance one tick ending at `t_us`.
    pub fn step(&mut self, dt: f64, t_us: u64) -> Option<DoorEvent> {
        match self.phase {
            TransitPhase::Dwelling { stop, until_us } => {
                if t_us >= until_us {
                    self.phase = TransitPhase::Moving;
                    self.next_stop = stop + 1;
                    return Some(DoorEvent::Closed(stop));
                }
                None
            }
            TransitPhase::Moving => {
                let a = self.route.accel;
                let stop_s = self.route.stops.get(self.next_stop).copied();
                let mut v_cmd = (self.v + a * dt).min(self.route.cruise_speed);
                if let Some(stop_s) = stop_s {
                    let remaining = (stop_s - self.s).max(0.0);
                    v_cmd = v_cmd.min((2.0 * a * remaining).sqrt());
                    if v_cmd * dt >= remaining || remaining < 1e-6 {
                        self.s = stop_s;
                        self.v = 0.0;
                        let until_us = t_us + (self.route.dwell_s * 1e6).round() as u64;
                        self.phase = TransitPhase::Dwelling {
                            stop: self.next_stop,
                            until_us,
                        };
                        return Some(DoorEvent::Opened(self.next_stop));
                    }
                }
                self.s += v_cmd * dt;
                self.v = v_cmd;
                None
            }
        }
    }

    pub fn apply(&self, state: &AgentState, path: &Polyline, dt: f64) -> AgentState {
        let p = path.point_at(self.s);
        let mut next = *state;
        next.pose = Pose2D::new(p.x, p.y, path.heading_at(self.s));
        next.kin.accel = (self.v - state.kin.speed) / dt;
        next.kin.speed = self.v;
        next.kin.yaw_rate = 0.0;
        next
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::AgentKind;

    #[test]
    fn follower_is_closed_form() {
        let path = Polyline::from_xy(&[[0.0, 0.0], [100.0, 0.0]]).unwrap();
        let f = PathFollower::new(10.0, 2.0);
        let s = AgentState::new(1, AgentKind::Cyclist, Pose2D::default());
        let at = f.apply(&s, &path, 5_000_000);
        assert_eq!(at.pose.x, 20.0);
        assert_eq!(at.kin.speed, 2.0);
        let parked = PathFollower::parked(10.0, 2.0);
        assert_eq!(parked.apply(&s, &path, 5_000_000).pose.x, 10.0);
    }

    #[test]
    fn transit_stops_dwells_and_leaves() {
        let route = TransitRoute {
            stops: vec![50.0],
            dwell_s: 2.0,
            accel: 1.0,
            cruise_speed: 8.0,
            ..Default::default()
        };
        let mut bus = TransitScript::new(route, 0.0);
        let dt = 0.01;
        let mut events = Vec::new();
        let mut max_v: f64 = 0.0;
        for tick in 1..=6000u64 {
            if let Some(e) = bus.step(dt, tick * 10_000) {
                events.push((tick, e, bus.s));
            }
            max_v = max_v.max(bus.v);
        }
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].1, DoorEvent::Opened(0));
        assert_eq!(events[0].2, 50.0);
        assert_eq!(events[1].1, DoorEvent::Closed(0));
        assert_eq!(events[1].0 - events[0].0, 200);
        assert!(max_v <= 8.0);
        assert!(bus.s > 50.0);
    }
}
