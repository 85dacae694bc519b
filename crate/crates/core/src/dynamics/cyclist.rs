use super::{check_dt, GRAVITY};
use crate::world::{AgentState, AssistLevel, CyclistInput, Pose2D, WorldError};

/// Maximum braking force at full lever, N.
pub const BRAKE_FORCE_MAX: f64 = 400.0;
/// Wheelbase used for the steering model, m.
pub const BIKE_WHEELBASE: f64 = 1.1;
/// Floor on speed in the P/v propulsion term, m/s.
const PROPULSION_SPEED_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclistParams {
    /// Rider plus bike, kg.
    pub mass: f64,
    pub crr: f64,
    /// m²
    pub cda: f64,
    /// kg/m³
    pub rho: f64,
    pub drivetrain_eff: f64,
    pub g: f64,
    /// Assist is zero at and above this speed (25 km/h).
    pub assist_cutoff_speed: f64,
    /// Assist starts tapering linearly here (20 km/h).
    pub assist_taper_start: f64,
    pub gain_eco: f64,
    pub gain_tour: f64,
    pub gain_turbo: f64,
}

impl Default for CyclistParams {
    fn default() -> Self {
        Self {
            mass: 85.0,
            crr: 0.005,
            cda: 0.5,
            rho: 1.225,
            drivetrain_eff: 0.97,
            g: GRAVITY,
            assist_cutoff_speed: 6.944,
            assist_taper_start: 5.556,
            gain_eco: 0.5,
            gain_tour: 1.0,
            gain_turbo: 2.0,
        }
    }
}

impl CyclistParams {
    pub fn gain(&self, level: AssistLevel) -> f64 {
        match level {
            AssistLevel::Off => 0.0,
            AssistLevel::Eco => self.gain_eco,
            AssistLevel::Tour => self.gain_tour,
            AssistLevel::Turbo => self.gain_turbo,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.drivetrain_eff > 0.0 && self.drivetrain_eff <= 1.0) {
            return Err(WorldError::OutOfRange {
                field: "drivetrain_eff",
                value: self.drivetrain_eff,
                min: 0.0,
                max: 1.0,
            });
        }
        if self.assist_taper_start >= self.assist_cutoff_speed {
            return Err(WorldError::OutOfRange {
                field: "assist_taper_start",
                value: self.assist_taper_start,
                min: 0.0,
                max: self.assist_cutoff_speed,
            });
        }
        if !(self.mass > 0.0) {
            return Err(WorldError::OutOfRange {
                field: "mass",
                value: self.mass,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        Ok(())
    }
}

/// Motor assist as a multiple of rider power: full below the taper start,
/// linear to zero at the cutoff, zero above it.
pub fn assist_factor(speed: f64, level: AssistLevel, params: &CyclistParams) -> f64 {
    let v = speed.abs();
    let taper = if v <= params.assist_taper_start {
        1.0
    } else if v >= params.assist_cutoff_speed {
        0.0
    } else {
        (params.assist_cutoff_speed - v) / (params.assist_cutoff_speed - params.assist_taper_start)
    };
    params.gain(level) * taper
}

/// Longitudinal force balance for a rider on a (possibly assisted) bike.
///
/// Rolling resistance, aero drag and braking only oppose motion; a bike at
/// rest stays at rest unless propulsion (or a downhill) overcomes them, and
/// it never rolls backwards.
pub fn step_cyclist(
    state: &AgentState,
    input: &CyclistInput,
    params: &CyclistParams,
    grade: f64,
    dt: f64,
) -> Result<AgentState, WorldError> {
    check_dt(dt)?;
    let m = params.mass;
    let v = state.kin.speed.max(0.0);
    let theta = grade.atan();
    let p_total = input.power * (1.0 + assist_factor(v, input.assist, params));
    let f_prop = params.drivetrain_eff * p_total / v.max(PROPULSION_SPEED_FLOOR);
    let f_grade = m * params.g * theta.sin();
    let f_roll = params.crr * m * params.g * theta.cos();
    let f_aero = 0.5 * params.rho * params.cda * v * v;
    let f_brake = input.brake * BRAKE_FORCE_MAX;

    let v_next = if v > 0.0 {
        let accel = (f_prop - f_grade - f_roll - f_aero - f_brake) / m;
        (v + accel * dt).max(0.0)
    } else {
        let active = f_prop - f_grade;
        let resist = f_roll + f_brake;
        if active > resist {
            (active - resist) / m * dt
        } else {
            0.0
        }
    };
    let v_next = v_next.min(state.kind.max_speed());

    let yaw_rate = v * input.steer.tan() / BIKE_WHEELBASE;
    let mut next = *state;
    next.pose = Pose2D::new(
        state.pose.x + v * state.pose.heading.cos() * dt,
        state.pose.y + v * state.pose.heading.sin() * dt,
        state.pose.heading + yaw_rate * dt,
    );
    next.kin.speed = v_next;
    next.kin.accel = (v_next - v) / dt;
    next.kin.yaw_rate = yaw_rate;
    next.kin.aux = input.cadence;
    Ok(next)
}
