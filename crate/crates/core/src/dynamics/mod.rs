//! Fixed-timestep motion models for each agent kind, plus the actuator cue
//! laws (fan, bike tilt, motion platform).
//!
//! Every step function is pure: identical `(state, input, dt)` gives
//! bitwise-identical output. Integration is explicit Euler.

mod cyclist;
mod pedestrian;
mod script;
mod vehicle;

pub use cyclist::{assist_factor, step_cyclist, CyclistParams, BIKE_WHEELBASE, BRAKE_FORCE_MAX};
pub use pedestrian::{
    step_pedestrian, PedestrianOutcome, TransitZone, SEAT_SPEED_LIMIT, WALK_SLEW_RATE, WALK_TAU,
};
pub use script::{DoorEvent, PathFollower, TransitPhase, TransitRoute, TransitScript};
pub use vehicle::{step_vehicle, VehicleParams};

use crate::world::{AgentState, WorldError};

pub const GRAVITY: f64 = 9.81;

/// Upper bound on a single integration step, seconds.
pub const MAX_DT: f64 = 0.1;

pub(crate) fn check_dt(dt: f64) -> Result<(), WorldError> {
    if dt > 0.0 && dt <= MAX_DT {
        Ok(())
    } else {
        Err(WorldError::OutOfRange {
            field: "dt",
            value: dt,
            min: 0.0,
            max: MAX_DT,
        })
    }
}

/// Commands for the physical feedback devices attached to a station.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CueCommand {
    /// Fan output in [0, 1].
    pub fan_intensity: f64,
    /// Trainer tilt, rad.
    pub bike_tilt: f64,
    pub platform_pitch: f64,
    pub platform_roll: f64,
}

/// Speed at which the fan saturates (≈30 mph).
pub const FAN_FULL_SPEED: f64 = 13.4;
/// Grade range the tilt actuator can reproduce.
pub const TILT_GRADE_MIN: f64 = -0.10;
pub const TILT_GRADE_MAX: f64 = 0.20;
/// Tilt-coordination gain, rad per m/s².
pub const PLATFORM_GAIN: f64 = 0.05;
pub const PLATFORM_LIMIT: f64 = 0.12;

pub fn compute_cues(state: &AgentState, grade: f64) -> CueCommand {
    let v = state.kin.speed.abs();
    let a_long = state.kin.accel;
    let a_lat = state.kin.speed * state.kin.yaw_rate;
    CueCommand {
        fan_intensity: (v / FAN_FULL_SPEED).clamp(0.0, 1.0),
        bike_tilt: grade.clamp(TILT_GRADE_MIN, TILT_GRADE_MAX).atan(),
        platform_pitch: (-PLATFORM_GAIN * a_long).clamp(-PLATFORM_LIMIT, PLATFORM_LIMIT),
        platform_roll: (PLATFORM_GAIN * a_lat).clamp(-PLATFORM_LIMIT, PLATFORM_LIMIT),
    }
}
