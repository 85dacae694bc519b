//! Domain types shared by every subsystem: agents, poses, control inputs and
//! the map.
//!
//! World frame is right-handed, metres, +x east, +y north, heading 0 along +x.

mod geometry;
mod map;

pub use geometry::{
    heading_delta, normalize_heading, point_in_polygon, segments_intersect, Polyline, Projection,
    Vec2,
};
pub use map::{
    distance_to_conflict, project_to_path, ApproachPath, ConflictDistance, ConflictPoint, Crosswalk,
    GradeProfile, Lane, MapModel,
};

use bitflags::bitflags;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("path needs at least 2 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("path has zero length")]
    DegeneratePath,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("{field} = {value} outside [{min}, {max}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("control input {input} does not apply to a {kind:?}")]
    KindMismatch { kind: AgentKind, input: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Driver,
    AutomatedVehicle,
    Cyclist,
    Pedestrian,
    TransitUser,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [
        AgentKind::Driver,
        AgentKind::AutomatedVehicle,
        AgentKind::Cyclist,
        AgentKind::Pedestrian,
        AgentKind::TransitUser,
    ];

    pub fn code(self) -> u8 {
        match self {
            AgentKind::Driver => 0,
            AgentKind::AutomatedVehicle => 1,
            AgentKind::Cyclist => 2,
            AgentKind::Pedestrian => 3,
            AgentKind::TransitUser => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Speed cap in m/s.
    pub fn max_speed(self) -> f64 {
        match self {
            AgentKind::Driver | AgentKind::AutomatedVehicle => 60.0,
            AgentKind::Cyclist => 20.0,
            AgentKind::Pedestrian | AgentKind::TransitUser => 4.0,
        }
    }

    /// Half of the footprint length used for conflict-point occupancy.
    pub fn half_length(self) -> f64 {
        match self {
            AgentKind::Driver | AgentKind::AutomatedVehicle => 2.25,
            AgentKind::Cyclist => 0.9,
            AgentKind::Pedestrian | AgentKind::TransitUser => 0.3,
        }
    }

    /// Vulnerable road users: everyone outside a vehicle.
    pub fn is_vru(self) -> bool {
        matches!(
            self,
            AgentKind::Cyclist | AgentKind::Pedestrian | AgentKind::TransitUser
        )
    }

    pub fn is_vehicle(self) -> bool {
        matches!(self, AgentKind::Driver | AgentKind::AutomatedVehicle)
    }

    pub fn is_walker(self) -> bool {
        matches!(self, AgentKind::Pedestrian | AgentKind::TransitUser)
    }

    pub fn label(self) -> &'static str {
        match self {
            AgentKind::Driver => "driver",
            AgentKind::AutomatedVehicle => "av",
            AgentKind::Cyclist => "cyclist",
            AgentKind::Pedestrian => "pedestrian",
            AgentKind::TransitUser => "transit_user",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    /// Radians in (−π, π].
    pub heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_heading(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Express `other` in this pose's body frame.
    pub fn relative(&self, other: &Pose2D) -> Pose2D {
        let d = other.position() - self.position();
        let (s, c) = self.heading.sin_cos();
        Pose2D::new(
            c * d.x + s * d.y,
            -s * d.x + c * d.y,
            other.heading - self.heading,
        )
    }

    /// Inverse of [`Pose2D::relative`]: map a body-frame pose into the world.
    pub fn compose(&self, local: &Pose2D) -> Pose2D {
        let (s, c) = self.heading.sin_cos();
        Pose2D::new(
            self.x + c * local.x - s * local.y,
            self.y + s * local.x + c * local.y,
            self.heading + local.heading,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicState {
    /// m/s; negative only for vehicles in reverse.
    pub speed: f64,
    /// m/s² along the heading.
    pub accel: f64,
    /// rad/s.
    pub yaw_rate: f64,
    /// Cadence (rpm) for cyclists, step rate (Hz) for walkers, 0 otherwise.
    pub aux: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAuthority {
    Human,
    Policy,
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct AgentFlags: u8 {
        const YIELDING = 0b001;
        const BRAKING = 0b010;
        const IN_CONFLICT_ZONE = 0b100;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub agent_id: u32,
    pub kind: AgentKind,
    pub pose: Pose2D,
    pub kin: KinematicState,
    pub seated: bool,
    pub control_authority: ControlAuthority,
    pub flags: AgentFlags,
}

impl AgentState {
    pub fn new(agent_id: u32, kind: AgentKind, pose: Pose2D) -> Self {
        Self {
            agent_id,
            kind,
            pose,
            kin: KinematicState::default(),
            seated: false,
            control_authority: if kind == AgentKind::AutomatedVehicle {
                ControlAuthority::Policy
            } else {
                ControlAuthority::Human
            },
            flags: AgentFlags::empty(),
        }
    }

    pub fn position(&self) -> Vec2 {
        self.pose.position()
    }

    /// Check the per-agent invariants.
    pub fn check(&self) -> Result<(), WorldError> {
        let k = &self.kin;
        let finite = [self.pose.x, self.pose.y, self.pose.heading, k.speed, k.accel, k.yaw_rate, k.aux];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(WorldError::NonFinite("agent state"));
        }
        let vmax = self.kind.max_speed();
        if k.speed.abs() > vmax {
            return Err(WorldError::OutOfRange {
                field: "speed",
                value: k.speed,
                min: -vmax,
                max: vmax,
            });
        }
        if self.seated && k.speed != 0.0 {
            return Err(WorldError::OutOfRange {
                field: "seated speed",
                value: k.speed,
                min: 0.0,
                max: 0.0,
            });
        }
        if self.control_authority == ControlAuthority::Policy
            && self.kind != AgentKind::AutomatedVehicle
        {
            return Err(WorldError::KindMismatch {
                kind: self.kind,
                input: "policy authority",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssistLevel {
    #[default]
    Off,
    Eco,
    Tour,
    Turbo,
}

impl AssistLevel {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        [Self::Off, Self::Eco, Self::Tour, Self::Turbo]
            .get(code as usize)
            .copied()
    }
}

/// Steering wheel, pedals and shifter.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleInput {
    pub steer_wheel: f64,
    pub throttle: f64,
    pub brake: f64,
    /// −1 reverse, 0 neutral, 1..=6 forward.
    pub gear: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CyclistInput {
    pub power: f64,
    pub cadence: f64,
    pub steer: f64,
    pub brake: f64,
    pub assist: AssistLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WalkInput {
    pub walk_speed: f64,
    pub walk_heading: f64,
    pub seated_request: bool,
}

/// Mode-specific commands from a human station or the AV policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlInput {
    Vehicle(VehicleInput),
    Cyclist(CyclistInput),
    Walk(WalkInput),
    /// The AV generates its own actuation.
    Policy,
}

/// Declared input ranges. Values outside are rejected, never clamped.
pub mod limits {
    /// ±450° of steering-wheel rotation.
    pub const STEER_WHEEL_MAX: f64 = 7.854;
    pub const GEAR_MIN: i8 = -1;
    pub const GEAR_MAX: i8 = 6;
    pub const POWER_MAX: f64 = 3000.0;
    pub const CADENCE_MAX: f64 = 250.0;
    pub const BIKE_STEER_MAX: f64 = 1.0;
    pub const WALK_SPEED_MAX: f64 = 10.0;
}

fn check_range(field: &'static str, value: f64, min: f64, max: f64) -> Result<(), WorldError> {
    if !value.is_finite() {
        return Err(WorldError::NonFinite(field));
    }
    if value < min || value > max {
        return Err(WorldError::OutOfRange {
            field,
            value,
            min,
            max,
        });
    }
    Ok(())
}

impl ControlInput {
    pub fn validate(&self) -> Result<(), WorldError> {
        use limits::*;
        use std::f64::consts::PI;
        match self {
            ControlInput::Vehicle(v) => {
                check_range("steer_wheel", v.steer_wheel, -STEER_WHEEL_MAX, STEER_WHEEL_MAX)?;
                check_range("throttle", v.throttle, 0.0, 1.0)?;
                check_range("brake", v.brake, 0.0, 1.0)?;
                check_range("gear", v.gear as f64, GEAR_MIN as f64, GEAR_MAX as f64)
            }
            ControlInput::Cyclist(c) => {
                check_range("power", c.power, 0.0, POWER_MAX)?;
                check_range("cadence", c.cadence, 0.0, CADENCE_MAX)?;
                check_range("steer", c.steer, -BIKE_STEER_MAX, BIKE_STEER_MAX)?;
                check_range("brake", c.brake, 0.0, 1.0)
            }
            ControlInput::Walk(w) => {
                check_range("walk_speed", w.walk_speed, 0.0, WALK_SPEED_MAX)?;
                check_range("walk_heading", w.walk_heading, -PI, PI)
            }
            ControlInput::Policy => Ok(()),
        }
    }

    /// Whether this input variant can drive an agent of `kind`.
    pub fn applies_to(&self, kind: AgentKind) -> bool {
        match self {
            ControlInput::Vehicle(_) => kind.is_vehicle(),
            ControlInput::Cyclist(_) => kind == AgentKind::Cyclist,
            ControlInput::Walk(_) => kind.is_walker(),
            ControlInput::Policy => kind == AgentKind::AutomatedVehicle,
        }
    }

    /// Neutral command for an agent kind: no throttle, no power, standing still.
    pub fn neutral(kind: AgentKind) -> Self {
        match kind {
            AgentKind::Driver | AgentKind::AutomatedVehicle => ControlInput::Vehicle(VehicleInput {
                gear: 1,
                ..Default::default()
            }),
            AgentKind::Cyclist => ControlInput::Cyclist(CyclistInput::default()),
            AgentKind::Pedestrian | AgentKind::TransitUser => ControlInput::Walk(WalkInput::default()),
        }
    }

    /// Neutral command that also holds a walker's current heading.
    pub fn idle(state: &AgentState) -> Self {
        match Self::neutral(state.kind) {
            ControlInput::Walk(w) => ControlInput::Walk(WalkInput {
                walk_heading: state.pose.heading,
                ..w
            }),
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_codes_round_trip() {
        for k in AgentKind::ALL {
            assert_eq!(AgentKind::from_code(k.code()), Some(k));
        }
        assert_eq!(AgentKind::from_code(5), None);
    }

    #[test]
    fn input_ranges_are_rejected_not_clamped() {
        let bad = ControlInput::Vehicle(VehicleInput {
            throttle: 1.2,
            gear: 1,
            ..Default::default()
        });
        assert!(matches!(
            bad.validate(),
            Err(WorldError::OutOfRange { field: "throttle", .. })
        ));
        let gear = ControlInput::Vehicle(VehicleInput {
            gear: 7,
            ..Default::default()
        });
        assert!(gear.validate().is_err());
        let nan = ControlInput::Walk(WalkInput {
            walk_speed: f64::NAN,
            ..Default::default()
        });
        assert!(matches!(nan.validate(), Err(WorldError::NonFinite(_))));
        assert!(ControlInput::neutral(AgentKind::Cyclist).validate().is_ok());
    }

    #[test]
    fn pose_relative_compose_inverse() {
        let frame = Pose2D::new(3.0, -2.0, 0.7);
        let p = Pose2D::new(-1.0, 4.0, -2.0);
        let back = frame.compose(&frame.relative(&p));
        assert!((back.x - p.x).abs() < 1e-12);
        assert!((back.y - p.y).abs() < 1e-12);
        assert!((back.heading - p.heading).abs() < 1e-12);
    }

    #[test]
    fn policy_authority_only_for_av() {
        let mut s = AgentState::new(1, AgentKind::Cyclist, Pose2D::default());
        assert!(s.check().is_ok());
        s.control_authority = ControlAuthority::Policy;
        assert!(s.check().is_err());
        let mut seated = AgentState::new(2, AgentKind::TransitUser, Pose2D::default());
        seated.seated = true;
        seated.kin.speed = 0.5;
        assert!(seated.check().is_err());
    }
}
