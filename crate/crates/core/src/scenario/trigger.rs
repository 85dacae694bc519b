use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SignalPhase;
use crate::events::EventCode;
use crate::metrics::{crossing_ttc, follow_ttc, ConflictApproach, Instrument};
use crate::world::{AgentState, MapModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Condition {
    /// Named agent within `radius` metres of a conflict point.
    AgentWithin { agent: String, radius: f64, point: String },
    /// Sim time has reached `seconds`.
    TimeElapsed { seconds: f64 },
    /// Time-to-collision between two agents at or below `seconds`.
    TtcBelow { seconds: f64, pair: [String; 2] },
    SignalPhase { phase: SignalPhase },
}

fn default_isi() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    EmitEvent {
        code: EventCode,
        #[serde(default)]
        value: f64,
    },
    RequestTakeover { agent: String },
    /// Without an agent the prompt goes to every station.
    StartQuestionnaire {
        instrument: Instrument,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent: Option<String>,
    },
    StartNback {
        n: u8,
        length: u16,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent: Option<String>,
        #[serde(default = "default_isi")]
        isi_s: f64,
    },
    /// Release a parked scripted agent.
    SpawnScript { agent: String },
}

impl Action {
    pub(crate) fn agent(&self) -> Option<&str> {
        match self {
            Action::EmitEvent { .. } => None,
            Action::RequestTakeover { agent } | Action::SpawnScript { agent } => Some(agent),
            Action::StartQuestionnaire { agent, .. } | Action::StartNback { agent, .. } => agent.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub id: String,
    pub condition: Condition,
    pub action: Action,
    /// Repeating triggers fire on every false → true edge of the condition;
    /// others fire once.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub repeating: bool,
}

/// Action with agent names resolved to ids. Agent 0 means "everyone".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolvedAction {
    EmitEvent { code: EventCode, value: f64 },
    RequestTakeover { agent: u32 },
    StartQuestionnaire { instrument: Instrument, agent: u32 },
    StartNback { n: u8, length: u16, agent: u32, isi_us: u64 },
    SpawnScript { agent: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerOutcome {
    Fire { trigger: usize, action: ResolvedAction },
    /// The condition held but the action's agent is gone.
    Dropped { trigger: usize, agent: u32 },
}

/// World view for trigger evaluation, taken after the dynamics step.
pub struct TriggerContext<'a> {
    pub t_us: u64,
    /// Live agents; despawned ones are absent.
    pub agents: &'a [AgentState],
    pub ids: &'a BTreeMap<String, u32>,
    pub map: &'a MapModel,
    pub routes: &'a BTreeMap<u32, String>,
    pub signal: Option<SignalPhase>,
}

impl TriggerContext<'_> {
    fn agent(&self, name: &str) -> Option<&AgentState> {
        let id = *self.ids.get(name)?;
        self.agents.iter().find(|a| a.agent_id == id)
    }

    fn approach(&self, a: &AgentState) -> Option<(&str, ConflictApproach)> {
        let path = self.map.approach(self.routes.get(&a.agent_id)?)?;
        Some((
            path.id.as_str(),
            ConflictApproach {
                distance: path.distance_to_conflict(a).signed(),
                speed: a.kin.speed,
                half_length: a.kind.half_length(),
            },
        ))
    }

    /// Pairwise TTC: car-following when both share a path, occupancy overlap
    /// at the conflict point otherwise.
    pub fn pair_ttc(&self, a: &str, b: &str) -> Option<f64> {
        let (a, b) = (self.agent(a)?, self.agent(b)?);
        let (pa, ca) = self.approach(a)?;
        let (pb, cb) = self.approach(b)?;
        if pa == pb {
            let (lead, follow) = if ca.distance <= cb.distance { (ca, cb) } else { (cb, ca) };
            let gap = follow.distance - lead.distance - lead.half_length - follow.half_length;
            return follow_ttc(gap, follow.speed, lead.speed);
        }
        let same_point = self.map.approach(pa)?.conflict_point == self.map.approach(pb)?.conflict_point;
        if !same_point {
            return None;
        }
        crossing_ttc(&ca, &cb)
    }

    fn holds(&self, c: &Condition) -> bool {
        match c {
            Condition::TimeElapsed { seconds } => self.t_us as f64 >= (seconds * 1e6).round(),
            Condition::AgentWithin { agent, radius, point } => {
                match (self.agent(agent), self.map.conflict_point(point)) {
                    (Some(a), Some(p)) => a.position().distance(p.position) <= *radius,
                    _ => false,
                }
            }
            Condition::TtcBelow { seconds, pair } => {
                self.pair_ttc(&pair[0], &pair[1]).is_some_and(|t| t <= *seconds)
            }
            Condition::SignalPhase { phase } => self.signal == Some(*phase),
        }
    }

    fn resolve(&self, trigger: usize, action: &Action) -> TriggerOutcome {
        let target = match action.agent() {
            None => 0,
            Some(name) => match self.ids.get(name) {
                Some(&id) if self.agents.iter().any(|a| a.agent_id == id) => id,
                Some(&id) => return TriggerOutcome::Dropped { trigger, agent: id },
                None => return TriggerOutcome::Dropped { trigger, agent: 0 },
            },
        };
        let action = match *action {
            Action::EmitEvent { code, value } => ResolvedAction::EmitEvent { code, value },
            Action::RequestTakeover { .. } => ResolvedAction::RequestTakeover { agent: target },
            Action::StartQuestionnaire { instrument, .. } => ResolvedAction::StartQuestionnaire {
                instrument,
                agent: target,
            },
            Action::StartNback { n, length, isi_s, .. } => ResolvedAction::StartNback {
                n,
                length,
                agent: target,
                isi_us: (isi_s * 1e6).round() as u64,
            },
            Action::SpawnScript { .. } => ResolvedAction::SpawnScript { agent: target },
        };
        TriggerOutcome::Fire { trigger, action }
    }
}

/// Fired/edge state for a scenario's triggers. Owned by the server loop.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TriggerRuntime {
    fired: Vec<bool>,
    last: Vec<bool>,
}

impl TriggerRuntime {
    pub fn new(n: usize) -> Self {
        Self {
            fired: vec![false; n],
            last: vec![false; n],
        }
    }

    pub fn has_fired(&self, i: usize) -> bool {
        self.fired.get(i).copied().unwrap_or(false)
    }

    /// Condition values from the last evaluation.
    pub fn last_conditions(&self) -> &[bool] {
        &self.last
    }

    pub fn fired(&self) -> &[bool] {
        &self.fired
    }

    /// Evaluate all triggers in declaration order.
    pub fn evaluate(&mut self, triggers: &[TriggerSpec], ctx: &TriggerContext) -> Vec<TriggerOutcome> {
        if self.fired.len() != triggers.len() {
            *self = Self::new(triggers.len());
        }
        let mut out = Vec::new();
        for (i, t) in triggers.iter().enumerate() {
            let now = ctx.holds(&t.condition);
            let rising = now && !self.last[i];
            self.last[i] = now;
            let fire = if t.repeating { rising } else { now && !self.fired[i] };
            if fire {
                self.fired[i] = true;
                out.push(ctx.resolve(i, &t.action));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{AgentKind, ApproachPath, ConflictPoint, GradeProfile, Polyline, Pose2D, Vec2};

    fn map() -> MapModel {
        MapModel {
            conflict_points: vec![ConflictPoint {
                id: "x".into(),
                position: Vec2::new(0.0, 0.0),
            }],
            approach_paths: vec![ApproachPath {
                id: "p".into(),
                conflict_point: "x".into(),
                path: Polyline::from_xy(&[[-50.0, 0.0], [0.0, 0.0]]).unwrap(),
                grades: GradeProfile::flat(),
            }],
            ..Default::default()
        }
    }

    fn spec(condition: Condition, repeating: bool) -> TriggerSpec {
        TriggerSpec {
            id: String::new(),
            condition,
            action: Action::EmitEvent {
                code: EventCode::HAZARD,
                value: 1.0,
            },
            repeating,
        }
    }

    #[test]
    fn once_and_repeating() {
        let map = map();
        let ids = BTreeMap::from([("a".to_string(), 1)]);
        let routes = BTreeMap::from([(1, "p".to_string())]);
        let within = Condition::AgentWithin {
            agent: "a".into(),
            radius: 10.0,
            point: "x".into(),
        };
        let triggers = [spec(within.clone(), false), spec(within, true)];
        let mut rt = TriggerRuntime::new(2);
        let mut fires = [0, 0];
        for x in [-20.0, -5.0, -5.0, -20.0, -5.0] {
            let agents = [AgentState::new(1, AgentKind::Cyclist, Pose2D::new(x, 0.0, 0.0))];
            let ctx = TriggerContext {
                t_us: 0,
                agents: &agents,
                ids: &ids,
                map: &map,
                routes: &routes,
                signal: None,
            };
            for o in rt.evaluate(&triggers, &ctx) {
                if let TriggerOutcome::Fire { trigger, .. } = o {
                    fires[trigger] += 1;
                }
            }
        }
        assert_eq!(fires, [1, 2]);
    }

    #[test]
    fn despawned_agent_drops_action() {
        let map = map();
        let ids = BTreeMap::from([("gone".to_string(), 7)]);
        let routes = BTreeMap::new();
        let t = TriggerSpec {
            id: String::new(),
            condition: Condition::TimeElapsed { seconds: 0.0 },
            action: Action::RequestTakeover { agent: "gone".into() },
            repeating: false,
        };
        let ctx = TriggerContext {
            t_us: 10_000,
            agents: &[],
            ids: &ids,
            map: &map,
            routes: &routes,
            signal: None,
        };
        let out = TriggerRuntime::new(1).evaluate(&[t], &ctx);
        assert_eq!(out, vec![TriggerOutcome::Dropped { trigger: 0, agent: 7 }]);
    }
}
