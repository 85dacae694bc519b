use std::fmt;

use serde::Serialize;

use super::{AgentSpec, Controller, ScenarioSpec};
use crate::dynamics::WALK_TAU;
use crate::world::{AgentKind, MapModel};

/// Initial position of one synchronized agent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Placement {
    pub agent: String,
    pub kind: AgentKind,
    pub path: String,
    pub speed: f64,
    /// Distance to the conflict point at t = 0, m.
    pub distance: f64,
    /// Arc length of the start position along the path.
    pub arc_start: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlacementError {
    pub agent: String,
    pub path: String,
    pub required: f64,
    pub available: f64,
}

impl fmt::Display for PlacementError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "agent {}: path {} is {:.3} m, shorter than the {:.3} m placement",
            self.agent, self.path, self.available, self.required
        )
    }
}

impl std::error::Error for PlacementError {}

/// Distance a walker starting from rest loses to the first-order speed lag
/// over `t` seconds at target speed `v`.
pub fn pedestrian_ramp(v: f64, t: f64) -> f64 {
    v * WALK_TAU * (1.0 - (-t / WALK_TAU).exp())
}

/// Whether an agent is placed by the solver: it rides an approach path and
/// has no explicit start position or transit route.
pub(crate) fn is_synchronized(agent: &AgentSpec, map: &MapModel) -> bool {
    agent.start_s.is_none() && agent.transit.is_none() && map.approach(&agent.path).is_some()
}

fn starts_from_rest(agent: &AgentSpec) -> bool {
    agent.controlled_by == Controller::Human && agent.initial_speed.unwrap_or(0.0) == 0.0
}

/// Place every synchronized agent `v·T` before its conflict point.
///
/// With `pedestrian_ramp_correction` set, walkers that start from rest are
/// moved forward by the ramp loss so that they too arrive at `T`.
pub fn solve_tta_placement(spec: &ScenarioSpec, map: &MapModel) -> Result<Vec<Placement>, Vec<PlacementError>> {
    let t = spec.sync_tta_s;
    let mut placed = Vec::new();
    let mut errors = Vec::new();
    for agent in spec.agents.iter().filter(|a| is_synchronized(a, map)) {
        let path = map.approach(&agent.path).expect("synchronized agents ride approach paths");
        let v = agent.target_speed;
        let mut d = v * t;
        if spec.pedestrian_ramp_correction && agent.kind.is_walker() && starts_from_rest(agent) {
            d -= pedestrian_ramp(v, t);
        }
        let len = path.length();
        if len < d {
            errors.push(PlacementError {
                agent: agent.id.clone(),
                path: agent.path.clone(),
                required: d,
                available: len,
            });
            continue;
        }
        placed.push(Placement {
            agent: agent.id.clone(),
            kind: agent.kind,
            path: agent.path.clone(),
            speed: v,
            distance: d,
            arc_start: len - d,
        });
    }
    if errors.is_empty() {
        Ok(placed)
    } else {
        Err(errors)
    }
}
