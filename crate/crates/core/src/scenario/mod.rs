//! Scenario files: map primitives, agents and their controllers, the
//! equal-time-to-arrival placement, triggers, eHMI channel mask and an
//! optional fixed-time signal.
//!
//! Loading is split in two: [`load_scenario`] parses JSON into a
//! [`ScenarioSpec`], and [`validate`] or [`Scenario::build`] check it.
//! Semantic problems are collected rather than reported one at a time.
//!
//! Agent ids are assigned 1, 2, … in declaration order.

mod placement;
mod signal;
mod trigger;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use placement::{pedestrian_ramp, solve_tta_placement, Placement, PlacementError};
pub use signal::{SignalPhase, SignalPlan};
pub use trigger::{
    Action, Condition, ResolvedAction, TriggerContext, TriggerOutcome, TriggerRuntime, TriggerSpec,
};

use crate::av::EhmiMask;
use crate::dynamics::TransitRoute;
use crate::world::{
    AgentKind, AgentState, ApproachPath, ConflictPoint, Crosswalk, GradeProfile, Lane, MapModel, Polyline,
    Pose2D, Vec2,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Human,
    Policy,
    Script,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub id: String,
    pub width: f64,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosswalkSpec {
    pub id: String,
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictPointSpec {
    pub id: String,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub id: String,
    pub conflict_point: String,
    /// Vertices in travel order; the last one sits on the conflict point.
    pub points: Vec<[f64; 2]>,
    /// (arc length, grade) breakpoints; empty is flat.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grades: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MapSpec {
    #[serde(default)]
    pub lanes: Vec<LaneSpec>,
    #[serde(default)]
    pub crosswalks: Vec<CrosswalkSpec>,
    pub conflict_points: Vec<ConflictPointSpec>,
    pub approach_paths: Vec<PathSpec>,
}

fn default_dwell() -> f64 {
    TransitRoute::default().dwell_s
}

fn default_transit_accel() -> f64 {
    TransitRoute::default().accel
}

fn default_half_length() -> f64 {
    TransitRoute::default().half_length
}

fn default_half_width() -> f64 {
    TransitRoute::default().half_width
}

/// Stop list for a scripted transit vehicle; it cruises at the agent's
/// `target_speed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitSpec {
    pub stops: Vec<f64>,
    #[serde(default = "default_dwell")]
    pub dwell_s: f64,
    #[serde(default = "default_transit_accel")]
    pub accel: f64,
    #[serde(default = "default_half_length")]
    pub half_length: f64,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    /// Name used by triggers and in reports.
    pub id: String,
    pub kind: AgentKind,
    /// Approach path or lane id.
    pub path: String,
    /// m/s.
    pub target_speed: f64,
    pub controlled_by: Controller,
    /// Speed at t = 0. Defaults to `target_speed` for script and policy
    /// agents and to 0 for human ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_speed: Option<f64>,
    /// Explicit start arc length; disables TTA placement for this agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_s: Option<f64>,
    /// Scripted agent that waits for a spawn_script action.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub parked: bool,
    /// AV slot a human supervisor may join to take over.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub supervised: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transit: Option<TransitSpec>,
}

impl AgentSpec {
    pub fn initial_speed(&self) -> f64 {
        match (self.initial_speed, self.controlled_by) {
            (Some(v), _) => v,
            (None, Controller::Script) if self.parked => 0.0,
            (None, Controller::Script) if self.transit.is_some() => 0.0,
            (None, Controller::Script | Controller::Policy) => self.target_speed,
            (None, Controller::Human) => 0.0,
        }
    }

    pub fn transit_route(&self) -> Option<TransitRoute> {
        self.transit.as_ref().map(|t| TransitRoute {
            stops: t.stops.clone(),
            dwell_s: t.dwell_s,
            accel: t.accel,
            cruise_speed: self.target_speed,
            half_length: t.half_length,
            half_width: t.half_width,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub map: MapSpec,
    pub agents: Vec<AgentSpec>,
    /// Shared conflict point the placement synchronizes on.
    pub conflict_point: String,
    pub sync_tta_s: f64,
    #[serde(default)]
    pub triggers: Vec<TriggerSpec>,
    #[serde(default)]
    pub ehmi_mask: EhmiMask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_plan: Option<SignalPlan>,
    #[serde(default)]
    pub seed: u64,
    /// Shorten walker placements by their start-up lag.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pedestrian_ramp_correction: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            message: message.into(),
        }
    }

    fn warning(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario has {} error(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Diagnostic>),
}

/// Parse a scenario document. Semantic checks are left to [`validate`].
pub fn load_scenario(text: &str) -> Result<ScenarioSpec, LoadError> {
    serde_json::from_str(text).map_err(|e| LoadError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<ScenarioSpec, LoadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_scenario(&text)
}

/// Pretty JSON that [`load_scenario`] reads back to an equal spec.
pub fn serialize_scenario(spec: &ScenarioSpec) -> String {
    serde_json::to_string_pretty(spec).expect("scenario specs always serialize")
}

/// Content hash of the spec: SHA-256 over its canonical JSON, first eight
/// bytes little-endian.
pub fn scenario_hash(spec: &ScenarioSpec) -> u64 {
    let bytes = serde_json::to_vec(spec).expect("scenario specs always serialize");
    let digest = Sha256::digest(&bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// All diagnostics for `spec`; it is usable iff none is an error.
pub fn validate(spec: &ScenarioSpec) -> Vec<Diagnostic> {
    analyze(spec).0
}

fn points(raw: &[[f64; 2]]) -> Vec<Vec2> {
    raw.iter().map(|p| Vec2::new(p[0], p[1])).collect()
}

fn build_map(spec: &MapSpec, diags: &mut Vec<Diagnostic>) -> MapModel {
    let mut map = MapModel::default();
    let mut seen = BTreeSet::new();
    let mut unique = |kind: &str, id: &str, diags: &mut Vec<Diagnostic>| {
        if !seen.insert(id.to_owned()) {
            diags.push(Diagnostic::error(format!("{kind} {id}: duplicate id")));
        }
    };
    for cp in &spec.conflict_points {
        unique("conflict point", &cp.id, diags);
        if cp.position.iter().any(|v| !v.is_finite()) {
            diags.push(Diagnostic::error(format!("conflict point {}: non-finite position", cp.id)));
            continue;
        }
        map.conflict_points.push(ConflictPoint {
            id: cp.id.clone(),
            position: Vec2::new(cp.position[0], cp.position[1]),
        });
    }
    for lane in &spec.lanes {
        unique("lane", &lane.id, diags);
        match Polyline::new(points(&lane.points)) {
            Ok(centerline) => map.lanes.push(Lane {
                id: lane.id.clone(),
                width: lane.width,
                centerline,
            }),
            Err(e) => diags.push(Diagnostic::error(format!("lane {}: {e}", lane.id))),
        }
    }
    for cw in &spec.crosswalks {
        unique("crosswalk", &cw.id, diags);
        map.crosswalks.push(Crosswalk {
            id: cw.id.clone(),
            polygon: points(&cw.polygon),
        });
    }
    for p in &spec.approach_paths {
        unique("path", &p.id, diags);
        match Polyline::new(points(&p.points)) {
            Ok(path) => map.approach_paths.push(ApproachPath {
                id: p.id.clone(),
                conflict_point: p.conflict_point.clone(),
                path,
                grades: GradeProfile {
                    points: p.grades.iter().map(|g| (g[0], g[1])).collect(),
                },
            }),
            Err(e) => diags.push(Diagnostic::error(format!("path {}: {e}", p.id))),
        }
    }
    diags.extend(map.check().into_iter().map(Diagnostic::error));
    map
}

fn check_agent(a: &AgentSpec, map: &MapModel, diags: &mut Vec<Diagnostic>) {
    let err = |diags: &mut Vec<Diagnostic>, m: String| diags.push(Diagnostic::error(format!("agent {}: {m}", a.id)));
    let vmax = a.kind.max_speed();
    if !(a.target_speed.is_finite() && a.target_speed > 0.0 && a.target_speed <= vmax) {
        err(diags, format!("target_speed {} m/s outside (0, {vmax}]", a.target_speed));
    }
    if let Some(v) = a.initial_speed {
        if !(v.is_finite() && (0.0..=vmax).contains(&v)) {
            err(diags, format!("initial_speed {v} m/s outside [0, {vmax}]"));
        }
    }
    match (a.kind, a.controlled_by) {
        (AgentKind::AutomatedVehicle, Controller::Policy) => {}
        (AgentKind::AutomatedVehicle, c) => err(diags, format!("an automated vehicle must be policy-controlled, not {c:?}")),
        (k, Controller::Policy) => err(diags, format!("policy control is only for automated vehicles, not {}", k.label())),
        _ => {}
    }
    if a.parked && a.controlled_by != Controller::Script {
        err(diags, "only scripted agents can be parked".into());
    }
    if a.supervised && a.kind != AgentKind::AutomatedVehicle {
        err(diags, "only automated vehicles can be supervised".into());
    }
    let line = match map.polyline(&a.path) {
        Some(l) => l,
        None => {
            err(diags, format!("unknown path {}", a.path));
            return;
        }
    };
    if a.kind == AgentKind::AutomatedVehicle && map.approach(&a.path).is_none() {
        err(diags, format!("automated vehicle path {} has no conflict point", a.path));
    }
    if let Some(s) = a.start_s {
        if !(s.is_finite() && (0.0..=line.length()).contains(&s)) {
            err(diags, format!("start_s {s} outside [0, {:.3}]", line.length()));
        }
    }
    if let Some(t) = &a.transit {
        if a.controlled_by != Controller::Script || a.kind != AgentKind::Driver {
            err(diags, "transit routes are for scripted driver-kind vehicles".into());
        }
        if t.stops.windows(2).any(|w| w[1] <= w[0]) {
            err(diags, "transit stops must be strictly ascending".into());
        }
        if t.stops.iter().any(|&s| !(0.0..=line.length()).contains(&s)) {
            err(diags, format!("transit stop outside path {} (length {:.3} m)", a.path, line.length()));
        }
        for (name, v) in [("dwell_s", t.dwell_s), ("accel", t.accel), ("half_length", t.half_length), ("half_width", t.half_width)] {
            if !(v.is_finite() && v > 0.0) {
                err(diags, format!("transit {name} must be > 0"));
            }
        }
    }
}

fn check_triggers(spec: &ScenarioSpec, map: &MapModel, diags: &mut Vec<Diagnostic>) {
    let agents: BTreeMap<&str, &AgentSpec> = spec.agents.iter().map(|a| (a.id.as_str(), a)).collect();
    for (i, t) in spec.triggers.iter().enumerate() {
        let label = if t.id.is_empty() { format!("trigger #{i}") } else { format!("trigger {}", t.id) };
        let mut err = |m: String| diags.push(Diagnostic::error(format!("{label}: {m}")));
        let known = |name: &str, err: &mut dyn FnMut(String)| {
            let a = agents.get(name).copied();
            if a.is_none() {
                err(format!("unknown agent {name}"));
            }
            a
        };
        match &t.condition {
            Condition::AgentWithin { agent, radius, point } => {
                known(agent, &mut err);
                if map.conflict_point(point).is_none() {
                    err(format!("unknown conflict point {point}"));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    err(format!("radius must be > 0, got {radius}"));
                }
            }
            Condition::TimeElapsed { seconds } => {
                if !(seconds.is_finite() && *seconds >= 0.0) {
                    err(format!("seconds must be ≥ 0, got {seconds}"));
                }
            }
            Condition::TtcBelow { seconds, pair } => {
                if !(seconds.is_finite() && *seconds > 0.0) {
                    err(format!("seconds must be > 0, got {seconds}"));
                }
                let a = known(&pair[0], &mut err);
                let b = known(&pair[1], &mut err);
                if let (Some(a), Some(b)) = (a, b) {
                    let cp = |x: &AgentSpec| map.approach(&x.path).map(|p| p.conflict_point.clone());
                    match (cp(a), cp(b)) {
                        (Some(x), Some(y)) if x == y => {}
                        _ => err(format!("{} and {} do not approach a common conflict point", a.id, b.id)),
                    }
                }
            }
            Condition::SignalPhase { .. } => {
                if spec.signal_plan.is_none() {
                    err("signal_phase condition without a signal_plan".into());
                }
            }
        }
        if let Some(name) = t.action.agent() {
            if let Some(a) = known(name, &mut err) {
                match &t.action {
                    Action::SpawnScript { .. } if !a.parked => err(format!("spawn_script target {name} is not parked")),
                    Action::RequestTakeover { .. } if a.kind != AgentKind::AutomatedVehicle => {
                        err(format!("request_takeover target {name} is not an automated vehicle"))
                    }
                    _ => {}
                }
            }
        }
        match &t.action {
            Action::StartNback { n, length, isi_s, .. } => {
                if !(1..=9).contains(n) {
                    err(format!("n-back n must be in 1..=9, got {n}"));
                }
                if *length == 0 {
                    err("n-back length must be ≥ 1".into());
                }
                if !(isi_s.is_finite() && *isi_s > 0.0) {
                    err(format!("n-back isi_s must be > 0, got {isi_s}"));
                }
            }
            Action::EmitEvent { value, .. } if !value.is_finite() => err("event value must be finite".into()),
            _ => {}
        }
    }
}

type Analysis = (Vec<Diagnostic>, MapModel, Vec<Placement>);

fn analyze(spec: &ScenarioSpec) -> Analysis {
    let mut diags = Vec::new();
    let map = build_map(&spec.map, &mut diags);
    if !(spec.sync_tta_s.is_finite() && spec.sync_tta_s > 0.0) {
        diags.push(Diagnostic::error(format!("sync_tta_s must be > 0, got {}", spec.sync_tta_s)));
    }
    if map.conflict_point(&spec.conflict_point).is_none() {
        diags.push(Diagnostic::error(format!("unknown conflict point {}", spec.conflict_point)));
    }
    let mut names = BTreeSet::new();
    for a in &spec.agents {
        if !names.insert(a.id.as_str()) {
            diags.push(Diagnostic::error(format!("agent {}: duplicate id", a.id)));
        }
        check_agent(a, &map, &mut diags);
        if let Some(p) = map.approach(&a.path) {
            if p.conflict_point != spec.conflict_point && placement::is_synchronized(a, &map) {
                diags.push(Diagnostic::warning(format!(
                    "agent {}: path {} leads to {}, not the synchronized conflict point {}",
                    a.id, a.path, p.conflict_point, spec.conflict_point
                )));
            }
        }
    }
    if let Some(plan) = &spec.signal_plan {
        diags.extend(plan.check().into_iter().map(Diagnostic::error));
        for p in &plan.paths {
            if map.approach(p).is_none() {
                diags.push(Diagnostic::error(format!("signal_plan: unknown path {p}")));
            }
        }
    }
    check_triggers(spec, &map, &mut diags);
    let placements = if spec.sync_tta_s > 0.0 {
        match solve_tta_placement(spec, &map) {
            Ok(p) => p,
            Err(errors) => {
                diags.extend(errors.iter().map(|e| Diagnostic::error(e.to_string())));
                Vec::new()
            }
        }
    } else {
        Vec::new()
    };
    (diags, map, placements)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioAgent {
    pub id: u32,
    pub spec: AgentSpec,
    pub start_s: f64,
    pub initial: AgentState,
    pub placement: Option<Placement>,
}

/// A validated scenario ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub map: MapModel,
    pub agents: Vec<ScenarioAgent>,
    pub warnings: Vec<Diagnostic>,
    pub hash: u64,
}

impl Scenario {
    pub fn build(spec: ScenarioSpec) -> Result<Self, LoadError> {
        let (diags, map, placements) = analyze(&spec);
        let (errors, warnings): (Vec<_>, Vec<_>) = diags.into_iter().partition(Diagnostic::is_error);
        if !errors.is_empty() {
            return Err(LoadError::Invalid(errors));
        }
        let agents = spec
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let line = map.polyline(&a.path).expect("validated path");
                let placement = placements.iter().find(|p| p.agent == a.id).cloned();
                let start_s = match (&placement, a.start_s) {
                    (Some(p), _) => p.arc_start,
                    (None, Some(s)) => s,
                    (None, None) => 0.0,
                };
                let p = line.point_at(start_s);
                let id = i as u32 + 1;
                let mut initial = AgentState::new(id, a.kind, Pose2D::new(p.x, p.y, line.heading_at(start_s)));
                initial.kin.speed = a.initial_speed();
                ScenarioAgent {
                    id,
                    spec: a.clone(),
                    start_s,
                    initial,
                    placement,
                }
            })
            .collect();
        let hash = scenario_hash(&spec);
        Ok(Self {
            spec,
            map,
            agents,
            warnings,
            hash,
        })
    }

    pub fn from_text(text: &str) -> Result<Self, LoadError> {
        Self::build(load_scenario(text)?)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LoadError> {
        Self::build(load_scenario_file(path)?)
    }

    pub fn agent(&self, name: &str) -> Option<&ScenarioAgent> {
        self.agents.iter().find(|a| a.spec.id == name)
    }

    pub fn agent_by_id(&self, id: u32) -> Option<&ScenarioAgent> {
        self.agents.get((id as usize).checked_sub(1)?)
    }

    /// Agent name → id.
    pub fn ids(&self) -> BTreeMap<String, u32> {
        self.agents.iter().map(|a| (a.spec.id.clone(), a.id)).collect()
    }

    /// Agent id → path id.
    pub fn routes(&self) -> BTreeMap<u32, String> {
        self.agents.iter().map(|a| (a.id, a.spec.path.clone())).collect()
    }

    pub fn placements(&self) -> Vec<&Placement> {
        self.agents.iter().filter_map(|a| a.placement.as_ref()).collect()
    }

    pub fn polyline(&self, agent_id: u32) -> Option<&Polyline> {
        self.map.polyline(&self.agent_by_id(agent_id)?.spec.path)
    }
}
