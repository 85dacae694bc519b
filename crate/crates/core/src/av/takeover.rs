use crate::world::{AgentState, ControlAuthority, VehicleInput};

/// Engagement thresholds for a manual override.
pub const TAKEOVER_STEER: f64 = 0.1;
pub const TAKEOVER_BRAKE: f64 = 0.05;
pub const TAKEOVER_THROTTLE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TakeoverEvent {
    pub agent_id: u32,
    /// Sim time of the takeover request, if one was issued.
    pub request_time_us: Option<u64>,
    pub engage_time_us: u64,
}

impl TakeoverEvent {
    /// Time to intervention in seconds; `None` for spontaneous overrides.
    pub fn time_to_intervention(&self) -> Option<f64> {
        self.request_time_us
            .map(|r| self.engage_time_us.saturating_sub(r) as f64 / 1e6)
    }
}

pub fn exceeds_threshold(input: &VehicleInput) -> bool {
    input.steer_wheel.abs() > TAKEOVER_STEER || input.brake > TAKEOVER_BRAKE || input.throttle > TAKEOVER_THROTTLE
}

/// Hand an AV to its human supervisor if `manual` is above threshold.
///
/// The switch is one-way: an agent already under human control is returned
/// unchanged with no event, and sub-threshold input never transfers control.
pub fn takeover(
    state: &AgentState,
    manual: &VehicleInput,
    t_us: u64,
    request_time_us: Option<u64>,
) -> (AgentState, Option<TakeoverEvent>) {
    if state.control_authority == ControlAuthority::Human || !exceeds_threshold(manual) {
        return (*state, None);
    }
    let mut next = *state;
    next.control_authority = ControlAuthority::Human;
    (
        next,
        Some(TakeoverEvent {
            agent_id: state.agent_id,
            request_time_us,
            engage_time_us: t_us,
        }),
    )
}
