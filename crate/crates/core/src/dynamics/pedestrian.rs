use super::check_dt;
use crate::world::{heading_delta, AgentState, Pose2D, Vec2, WalkInput, WorldError};

/// First-order walking-speed time constant, s.
pub const WALK_TAU: f64 = 0.3;
/// Maximum body turn rate, rad/s.
pub const WALK_SLEW_RATE: f64 = 4.0;
/// Walkers may only sit down below this speed, m/s.
pub const SEAT_SPEED_LIMIT: f64 = 0.1;
/// Step length used to derive the step-rate channel, m.
const STEP_LENGTH: f64 = 0.75;
const WALK_SPEED_CAP: f64 = 4.0;

/// Boarding area of a transit vehicle, an oriented rectangle around its pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitZone {
    pub vehicle_id: u32,
    pub vehicle_pose: Pose2D,
    pub half_length: f64,
    pub half_width: f64,
    pub doors_open: bool,
}

impl TransitZone {
    pub fn contains(&self, p: Vec2) -> bool {
        let local = self
            .vehicle_pose
            .relative(&Pose2D::new(p.x, p.y, 0.0));
        local.x.abs() <= self.half_length && local.y.abs() <= self.half_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedestrianOutcome {
    pub state: AgentState,
    /// Set on the tick the walker sits down: vehicle id and the walker's pose
    /// in the vehicle frame.
    pub boarded: Option<(u32, Pose2D)>,
    pub alighted: bool,
    /// A seat request was made away from any open transit zone.
    pub seat_request_ignored: bool,
}

/// Walker step: lagged speed response, slew-limited heading, and the
/// sit/stand transition inside a transit vehicle.
///
/// `zones` lists the boarding areas currently present in the world.
pub fn step_pedestrian(
    state: &AgentState,
    input: &WalkInput,
    dt: f64,
    zones: &[TransitZone],
) -> Result<PedestrianOutcome, WorldError> {
    check_dt(dt)?;
    let mut next = *state;
    let mut outcome = PedestrianOutcome {
        state: next,
        boarded: None,
        alighted: false,
        seat_request_ignored: false,
    };

    let open_zone = zones
        .iter()
        .find(|z| z.doors_open && z.contains(state.position()));

    if state.seated {
        if !input.seated_request && open_zone.is_some() {
            next.seated = false;
            outcome.alighted = true;
        }
        next.kin.speed = 0.0;
        next.kin.accel = 0.0;
        next.kin.yaw_rate = 0.0;
        next.kin.aux = 0.0;
        outcome.state = next;
        return Ok(outcome);
    }

    if input.seated_request {
        match open_zone {
            Some(zone) if state.kin.speed < SEAT_SPEED_LIMIT => {
                next.seated = true;
                next.kin = Default::default();
                outcome.boarded = Some((zone.vehicle_id, zone.vehicle_pose.relative(&state.pose)));
                outcome.state = next;
                return Ok(outcome);
            }
            Some(_) => {}
            None => outcome.seat_request_ignored = true,
        }
    }

    let v = state.kin.speed;
    let target = input.walk_speed.min(WALK_SPEED_CAP);
    let v_next = v + (target - v) * (dt / WALK_TAU).min(1.0);
    let max_turn = WALK_SLEW_RATE * dt;
    let turn = heading_delta(state.pose.heading, input.walk_heading).clamp(-max_turn, max_turn);

    next.pose = Pose2D::new(
        state.pose.x + v * state.pose.heading.cos() * dt,
        state.pose.y + v * state.pose.heading.sin() * dt,
        state.pose.heading + turn,
    );
    next.kin.speed = v_next;
    next.kin.accel = (v_next - v) / dt;
    next.kin.yaw_rate = turn / dt;
    next.kin.aux = v_next / STEP_LENGTH;
    outcome.state = next;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::AgentKind;
    use std::f64::consts::PI;

    fn walker() -> AgentState {
        AgentState::new(3, AgentKind::TransitUser, Pose2D::default())
    }

    fn walk(speed: f64, heading: f64) -> WalkInput {
        WalkInput {
            walk_speed: speed,
            walk_heading: heading,
            seated_request: false,
        }
    }

    fn bus_zone(doors_open: bool) -> TransitZone {
        TransitZone {
            vehicle_id: 9,
            vehicle_pose: Pose2D::new(0.0, 0.0, 0.0),
            half_length: 6.0,
            half_width: 1.25,
            doors_open,
        }
    }

    #[test]
    fn reaches_commanded_speed() {
        let mut s = walker();
        // After 2.5 s the first-order lag residual is 1.5·e^(−2.5/0.3) < 0.001.
        for _ in 0..250 {
            s = step_pedestrian(&s, &walk(1.5, 0.0), 0.01, &[]).unwrap().state;
        }
        assert!((s.kin.speed - 1.5).abs() < 0.001, "{}", s.kin.speed);
    }

    #[test]
    fn zero_command_from_rest() {
        let mut s = walker();
        for _ in 0..100 {
            s = step_pedestrian(&s, &walk(0.0, 0.0), 0.01, &[]).unwrap().state;
        }
        assert_eq!(s.kin.speed, 0.0);
        assert_eq!(s.pose, Pose2D::default());
    }

    #[test]
    fn heading_is_slew_limited() {
        let out = step_pedestrian(&walker(), &walk(1.0, PI), 0.01, &[]).unwrap();
        assert!((out.state.pose.heading - 0.04).abs() < 1e-12);
        let out = step_pedestrian(&walker(), &walk(1.0, 0.01), 0.01, &[]).unwrap();
        assert!((out.state.pose.heading - 0.01).abs() < 1e-12);
    }

    #[test]
    fn speed_is_capped() {
        let mut s = walker();
        for _ in 0..500 {
            s = step_pedestrian(&s, &walk(9.0, 0.0), 0.01, &[]).unwrap().state;
        }
        assert!(s.kin.speed <= 4.0 && s.kin.speed > 3.99);
    }

    #[test]
    fn sits_only_inside_open_zone() {
        let request = WalkInput {
            seated_request: true,
            ..Default::default()
        };
        let out = step_pedestrian(&walker(), &request, 0.01, &[bus_zone(true)]).unwrap();
        assert!(out.state.seated);
        assert_eq!(out.boarded.map(|b| b.0), Some(9));

        let closed = step_pedestrian(&walker(), &request, 0.01, &[bus_zone(false)]).unwrap();
        assert!(!closed.state.seated);
        assert!(closed.seat_request_ignored);

        let mut far = walker();
        far.pose.x = 20.0;
        let out = step_pedestrian(&far, &request, 0.01, &[bus_zone(true)]).unwrap();
        assert!(!out.state.seated);
        assert!(out.seat_request_ignored);
    }

    #[test]
    fn moving_walker_cannot_sit_yet() {
        let mut s = walker();
        s.kin.speed = 1.0;
        let request = WalkInput {
            seated_request: true,
            ..Default::default()
        };
        let out = step_pedestrian(&s, &request, 0.01, &[bus_zone(true)]).unwrap();
        assert!(!out.state.seated);
        assert!(!out.seat_request_ignored);
    }

    #[test]
    fn stands_when_request_released_at_stop() {
        let mut s = walker();
        s.seated = true;
        let stay = step_pedestrian(&s, &walk(0.0, 0.0), 0.01, &[bus_zone(false)]).unwrap();
        assert!(stay.state.seated);
        let leave = step_pedestrian(&s, &walk(0.0, 0.0), 0.01, &[bus_zone(true)]).unwrap();
        assert!(!leave.state.seated);
        assert!(leave.alighted);
    }
}
