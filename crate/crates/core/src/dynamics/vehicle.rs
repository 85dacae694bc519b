use super::{check_dt, GRAVITY};
use crate::world::{AgentState, Pose2D, VehicleInput, WorldError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    /// m
    pub wheelbase: f64,
    pub steer_ratio: f64,
    /// rad at the road wheels
    pub max_road_wheel: f64,
    /// m/s² at full throttle
    pub a_max: f64,
    /// m/s² at full brake
    pub b_max: f64,
    /// Linear speed drag, 1/s.
    pub drag_coeff: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.7,
            steer_ratio: 15.0,
            max_road_wheel: 0.6,
            a_max: 3.0,
            b_max: 8.0,
            drag_coeff: 0.05,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), WorldError> {
        let fields = [
            ("wheelbase", self.wheelbase),
            ("steer_ratio", self.steer_ratio),
            ("max_road_wheel", self.max_road_wheel),
            ("a_max", self.a_max),
            ("b_max", self.b_max),
            ("drag_coeff", self.drag_coeff),
        ];
        for (field, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(WorldError::OutOfRange {
                    field,
                    value,
                    min: 0.0,
                    max: f64::INFINITY,
                });
            }
        }
        Ok(())
    }

    pub fn road_wheel_angle(&self, steer_wheel: f64) -> f64 {
        (steer_wheel / self.steer_ratio).clamp(-self.max_road_wheel, self.max_road_wheel)
    }
}

fn gear_sign(gear: i8) -> f64 {
    match gear {
        g if g < 0 => -1.0,
        0 => 0.0,
        _ => 1.0,
    }
}

/// Kinematic bicycle step for cars and the AV.
///
/// Brake and drag only ever remove speed: they bring the vehicle to rest but
/// cannot reverse it, and at standstill the brake holds against the grade.
pub fn step_vehicle(
    state: &AgentState,
    input: &VehicleInput,
    params: &VehicleParams,
    grade: f64,
    dt: f64,
) -> Result<AgentState, WorldError> {
    check_dt(dt)?;
    let v = state.kin.speed;
    let delta = params.road_wheel_angle(input.steer_wheel);
    let propulsive = gear_sign(input.gear) * input.throttle * params.a_max - GRAVITY * grade;
    let brake_decel = input.brake * params.b_max;
    let accel = propulsive - v.signum_or_zero() * brake_decel - params.drag_coeff * v;

    let mut v_next = v + accel * dt;
    if v == 0.0 {
        // Static brake: holds unless the propulsive force overcomes it.
        if propulsive.abs() <= brake_decel {
            v_next = 0.0;
        } else {
            v_next = (propulsive - propulsive.signum() * brake_decel) * dt;
        }
    } else if v_next * v < 0.0 && propulsive * v >= 0.0 {
        // The dissipative terms caused the sign flip: saturate at rest.
        v_next = 0.0;
    }
    let vmax = state.kind.max_speed();
    v_next = v_next.clamp(-vmax, vmax);

    let yaw_rate = v * delta.tan() / params.wheelbase;
    let pose = Pose2D::new(
        state.pose.x + v * state.pose.heading.cos() * dt,
        state.pose.y + v * state.pose.heading.sin() * dt,
        state.pose.heading + yaw_rate * dt,
    );

    let mut next = *state;
    next.pose = pose;
    next.kin.speed = v_next;
    next.kin.accel = (v_next - v) / dt;
    next.kin.yaw_rate = yaw_rate;
    next.kin.aux = 0.0;
    Ok(next)
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::AgentKind;
    use proptest::prelude::*;

    fn car(v: f64) -> AgentState {
        let mut s = AgentState::new(1, AgentKind::Driver, Pose2D::default());
        s.kin.speed = v;
        s
    }

    fn input(steer_wheel: f64, throttle: f64, brake: f64) -> VehicleInput {
        VehicleInput {
            steer_wheel,
            throttle,
            brake,
            gear: 1,
        }
    }

    #[test]
    fn rest_without_input_stays_put() {
        let s = car(0.0);
        let next = step_vehicle(&s, &input(0.0, 0.0, 0.0), &VehicleParams::default(), 0.0, 0.01).unwrap();
        assert_eq!(next.pose, s.pose);
        assert_eq!(next.kin.speed, 0.0);
    }

    #[test]
    fn full_brake_single_step() {
        // v̇ = −8 − 0.05·10 = −8.5 with default drag.
        let p = VehicleParams::default();
        let next = step_vehicle(&car(10.0), &input(0.0, 0.0, 1.0), &p, 0.0, 0.01).unwrap();
        assert!((next.kin.speed - 9.915).abs() < 1e-12);
        // Without drag the step is the bare brake term.
        let no_drag = VehicleParams {
            drag_coeff: 0.0,
            ..p
        };
        let next = step_vehicle(&car(10.0), &input(0.0, 0.0, 1.0), &no_drag, 0.0, 0.01).unwrap();
        assert!((next.kin.speed - 9.92).abs() < 1e-12);
    }

    #[test]
    fn yaw_rate_from_steering() {
        let next = step_vehicle(&car(10.0), &input(1.5, 0.0, 0.0), &VehicleParams::default(), 0.0, 0.01).unwrap();
        let expected = 10.0 * 0.1f64.tan() / 2.7;
        assert!((next.kin.yaw_rate - expected).abs() < 1e-12);
        assert!((next.kin.yaw_rate - 0.3716).abs() < 1e-4);
    }

    #[test]
    fn steering_clamped_at_road_wheel_limit() {
        let p = VehicleParams::default();
        assert_eq!(p.road_wheel_angle(20.0), 0.6);
        assert_eq!(p.road_wheel_angle(-20.0), -0.6);
    }

    #[test]
    fn brake_saturates_at_rest() {
        let next = step_vehicle(&car(0.02), &input(0.0, 0.0, 1.0), &VehicleParams::default(), 0.0, 0.01).unwrap();
        assert_eq!(next.kin.speed, 0.0);
    }

    #[test]
    fn brake_holds_on_slope() {
        let p = VehicleParams::default();
        let held = step_vehicle(&car(0.0), &input(0.0, 0.0, 1.0), &p, 0.1, 0.01).unwrap();
        assert_eq!(held.kin.speed, 0.0);
        let rolls = step_vehicle(&car(0.0), &input(0.0, 0.0, 0.0), &p, 0.1, 0.01).unwrap();
        assert!(rolls.kin.speed < 0.0);
    }

    #[test]
    fn reverse_gear_drives_backwards() {
        let p = VehicleParams::default();
        let mut s = car(0.0);
        let cmd = VehicleInput {
            gear: -1,
            throttle: 0.5,
            ..Default::default()
        };
        for _ in 0..50 {
            s = step_vehicle(&s, &cmd, &p, 0.0, 0.01).unwrap();
        }
        assert!(s.kin.speed < 0.0);
        assert!(s.pose.x < 0.0);
    }

    proptest! {
        #[test]
        fn braking_is_monotone(v in 0.01f64..40.0, b1 in 0.0f64..1.0, b2 in 0.0f64..1.0, thr in 0.0f64..1.0, grade in -0.2f64..0.2) {
            let p = VehicleParams::default();
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let a = step_vehicle(&car(v), &input(0.0, thr, lo), &p, grade, 0.01).unwrap();
            let b = step_vehicle(&car(v), &input(0.0, thr, hi), &p, grade, 0.01).unwrap();
            prop_assert!(b.kin.speed <= a.kin.speed);
        }

        #[test]
        fn step_is_deterministic_and_keeps_invariants(v in -5.0f64..60.0, steer in -7.8f64..7.8, thr in 0.0f64..1.0, brake in 0.0f64..1.0, h in -3.1f64..3.1) {
            let p = VehicleParams::default();
            let mut s = car(v);
            s.pose.heading = h;
            let cmd = input(steer, thr, brake);
            let a = step_vehicle(&s, &cmd, &p, 0.0, 0.01).unwrap();
            let b = step_vehicle(&s, &cmd, &p, 0.0, 0.01).unwrap();
            prop_assert_eq!(a.kin.speed.to_bits(), b.kin.speed.to_bits());
            prop_assert_eq!(a.pose.x.to_bits(), b.pose.x.to_bits());
            prop_assert!(a.check().is_ok());
        }
    }
}
