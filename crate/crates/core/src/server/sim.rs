use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{ServerError, SessionConfig};
use crate::av::{av_decide, takeover, AvMemory, AvParams, AvState, AvWorld, EhmiState};
use crate::dynamics::{
    step_cyclist, step_pedestrian, step_vehicle, CyclistParams, DoorEvent, PathFollower, TransitScript,
    TransitZone, VehicleParams,
};
use crate::events::{warning, EventCode, EventRecord};
use crate::protocol::{
    decode, encode, encode_snapshot, sequence_gate, AgentRecord, Body, DecodeError, EventMsg, Gate, Header, Hello,
    Message, MsgType, NBackKind, NBackMsg, Role, Snapshot, Welcome,
};
use crate::scenario::{
    Controller, ResolvedAction, Scenario, SignalPhase, TriggerContext, TriggerOutcome, TriggerRuntime,
};
use crate::world::{
    AgentFlags, AgentKind, AgentState, ControlAuthority, ControlInput, Polyline, Pose2D, VehicleInput,
};

/// Scripted agents vanish this far past the end of their path, m.
pub const DESPAWN_DISTANCE: f64 = 30.0;
/// SYNC_MARK period in sim time.
pub const SYNC_MARK_PERIOD_US: u64 = 10_000_000;
/// Brake input above which an agent is flagged as braking.
const BRAKE_FLAG: f64 = 0.05;
/// N-back stimulus alphabet.
const NBACK_LETTERS: &[u8] = b"BCDFGHJKLM";
/// Share of n-back stimuli that repeat the one n back.
const NBACK_TARGET_RATE: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, PartialEq)]
enum Driver {
    Human { input: ControlInput },
    Script(PathFollower),
    Transit(TransitScript),
    Policy { memory: AvMemory, manual: Option<VehicleInput> },
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    state: AgentState,
    alive: bool,
    controller: Controller,
    supervised: bool,
    path: String,
    driver: Driver,
    /// Source id of the station driving this agent.
    owner: Option<u32>,
    /// Masked channel state; AV only.
    ehmi: EhmiState,
    /// Vehicle id and pose in its frame while seated.
    seat: Option<(u32, Pose2D)>,
    seat_warned: bool,
    in_zone: bool,
    applied: ControlInput,
    takeover_request_us: Option<u64>,
    av_params: Option<AvParams>,
}

#[derive(Debug, Clone, PartialEq)]
struct NbackRun {
    agent: u32,
    n: u8,
    symbols: Vec<u8>,
    onsets_us: Vec<u64>,
    next: usize,
}

/// One agent as of the current tick, with the command applied in it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentFrame {
    pub state: AgentState,
    pub alive: bool,
    pub applied: ControlInput,
    pub av_state: Option<AvState>,
}

/// Datagrams for a set of stations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub to: Vec<u32>,
    pub datagrams: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub tick: u64,
    pub sim_time_us: u64,
    pub events: Vec<EventRecord>,
    pub snapshot: Option<Snapshot>,
    /// Encoded snapshot fragments, if a snapshot was due.
    pub snapshot_datagrams: Vec<Vec<u8>>,
    pub outbound: Vec<Outbound>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimStats {
    pub handled: u64,
    pub stale: u64,
    pub rejected: u64,
}

/// The authoritative world and everything that evolves it.
///
/// `Sim` is transport-free and pure: its evolution depends only on the
/// scenario, the config, and the sequence of `handle`/`step` calls.
#[derive(Debug, Clone)]
pub struct Sim {
    scenario: Scenario,
    config: SessionConfig,
    tick: u64,
    slots: Vec<Slot>,
    ids: BTreeMap<String, u32>,
    routes: BTreeMap<u32, String>,
    vehicle: VehicleParams,
    cyclist: CyclistParams,
    triggers: TriggerRuntime,
    signal: Option<SignalPhase>,
    nback: Vec<NbackRun>,
    gates: BTreeMap<(u32, u8), u32>,
    /// Source id → agent id (0 for observers).
    members: BTreeMap<u32, u32>,
    pending: Vec<(EventCode, u32, u32, f64)>,
    send_seq: BTreeMap<u8, u32>,
    /// Running hash over every handled datagram.
    chain: [u8; 32],
    stats: SimStats,
}

fn micros(tick: u64, rate: u16) -> u64 {
    ((tick as u128 * 1_000_000) / rate as u128) as u64
}

fn valid_name(name: &str) -> bool {
    !name.trim().is_empty() && !name.chars().any(char::is_control)
}

impl Sim {
    pub fn new(scenario: Scenario, config: SessionConfig) -> Result<Self, ServerError> {
        config.validate()?;
        if scenario.agents.len() > config.max_agents as usize {
            return Err(ServerError::Config(format!(
                "scenario has {} agents, max_agents is {}",
                scenario.agents.len(),
                config.max_agents
            )));
        }
        let slots = scenario
            .agents
            .iter()
            .map(|a| {
                let spec = &a.spec;
                let driver = match spec.controlled_by {
                    Controller::Human => Driver::Human {
                        input: ControlInput::idle(&a.initial),
                    },
                    Controller::Policy => Driver::Policy {
                        memory: AvMemory::default(),
                        manual: None,
                    },
                    Controller::Script => match spec.transit_route() {
                        Some(route) => Driver::Transit(TransitScript::new(route, a.start_s)),
                        None if spec.parked => Driver::Script(PathFollower::parked(a.start_s, spec.target_speed)),
                        None => Driver::Script(PathFollower::new(a.start_s, spec.target_speed)),
                    },
                };
                let av_params = (spec.kind == AgentKind::AutomatedVehicle).then(|| AvParams {
                    v_cruise: spec.target_speed,
                    ..AvParams::default()
                });
                Slot {
                    state: a.initial,
                    alive: true,
                    controller: spec.controlled_by,
                    supervised: spec.supervised,
                    path: spec.path.clone(),
                    applied: ControlInput::idle(&a.initial),
                    driver,
                    owner: None,
                    ehmi: EhmiState::default(),
                    seat: None,
                    seat_warned: false,
                    in_zone: false,
                    takeover_request_us: None,
                    av_params,
                }
            })
            .collect();
        Ok(Self {
            ids: scenario.ids(),
            routes: scenario.routes(),
            triggers: TriggerRuntime::new(scenario.spec.triggers.len()),
            scenario,
            config,
            tick: 0,
            slots,
            vehicle: VehicleParams::default(),
            cyclist: CyclistParams::default(),
            signal: None,
            nback: Vec::new(),
            gates: BTreeMap::new(),
            members: BTreeMap::new(),
            pending: Vec::new(),
            send_seq: BTreeMap::new(),
            chain: [0; 32],
            stats: SimStats::default(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn sim_time_us(&self) -> u64 {
        micros(self.tick, self.config.tick_rate_hz)
    }

    pub fn stats(&self) -> SimStats {
        self.stats
    }

    /// Sources that receive broadcasts.
    pub fn members(&self) -> Vec<u32> {
        self.members.keys().copied().collect()
    }

    /// Agent id held by a source; 0 for observers.
    pub fn member_agent(&self, source: u32) -> Option<u32> {
        self.members.get(&source).copied()
    }

    /// Live agents in id order.
    pub fn agents(&self) -> Vec<AgentState> {
        self.slots.iter().filter(|s| s.alive).map(|s| s.state).collect()
    }

    /// Every agent, live or not, with the command applied this tick.
    pub fn frames(&self) -> Vec<AgentFrame> {
        self.slots
            .iter()
            .map(|s| AgentFrame {
                state: s.state,
                alive: s.alive,
                applied: s.applied,
                av_state: match s.driver {
                    Driver::Policy { memory, .. } => Some(memory.state),
                    _ => None,
                },
            })
            .collect()
    }

    pub fn ehmi(&self, agent_id: u32) -> Option<EhmiState> {
        let s = self.slot(agent_id)?;
        s.av_params.map(|_| s.ehmi)
    }

    pub fn av_state(&self, agent_id: u32) -> Option<AvState> {
        match self.slot(agent_id)?.driver {
            Driver::Policy { memory, .. } => Some(memory.state),
            _ => None,
        }
    }

    fn slot(&self, id: u32) -> Option<&Slot> {
        self.slots.get((id as usize).checked_sub(1)?)
    }

    fn next_seq(&mut self, ty: MsgType) -> u32 {
        let s = self.send_seq.entry(ty as u8).or_insert(0);
        *s += 1;
        *s
    }

    fn header(&mut self, ty: MsgType, agent_id: u32, kind: Option<AgentKind>) -> Header {
        Header {
            flags: 0,
            kind,
            session: self.config.session,
            agent_id: agent_id as u16,
            seq: self.next_seq(ty),
            timestamp_us: self.sim_time_us(),
        }
    }

    fn datagram(&mut self, to: u32, agent_id: u32, kind: Option<AgentKind>, body: Body) -> Outbound {
        let header = self.header(body.msg_type(), agent_id, kind);
        let bytes = encode(&Message::new(header, body)).expect("server messages are valid");
        Outbound {
            to: vec![to],
            datagrams: vec![bytes],
        }
    }

    /// Current world as an authoritative snapshot.
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            tick: self.tick,
            sim_time_us: self.sim_time_us(),
            records: self
                .slots
                .iter()
                .filter(|s| s.alive)
                .map(|s| AgentRecord::from_state(&s.state, s.av_params.map(|_| &s.ehmi)))
                .collect(),
        }
    }

    /// Snapshot fragments exactly as broadcast for the current tick.
    pub fn snapshot_datagrams(&self) -> Vec<Vec<u8>> {
        let header = Header {
            flags: 0,
            kind: None,
            session: self.config.session,
            agent_id: 0,
            seq: (self.tick / self.config.snapshot_div as u64) as u32,
            timestamp_us: self.sim_time_us(),
        };
        encode_snapshot(&header, &self.snapshot()).expect("fragmented snapshots always encode")
    }

    /// Fingerprint of the complete world state, including hidden controller
    /// state and the history of handled datagrams.
    pub fn state_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.tick.to_le_bytes());
        h.update(self.chain);
        for s in &self.slots {
            let st = &s.state;
            h.update(st.agent_id.to_le_bytes());
            h.update([s.alive as u8, st.seated as u8, st.control_authority as u8, st.flags.bits()]);
            for v in [st.pose.x, st.pose.y, st.pose.heading, st.kin.speed, st.kin.accel, st.kin.yaw_rate, st.kin.aux] {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update([s.ehmi.to_bits(), s.in_zone as u8]);
            match &s.driver {
                Driver::Human { .. } => h.update([0]),
                Driver::Script(f) => {
                    h.update([1]);
                    h.update(f.started_at_us.map_or(u64::MAX, |t| t).to_le_bytes());
                }
                Driver::Transit(t) => {
                    h.update([2]);
                    h.update(t.s.to_bits().to_le_bytes());
                    h.update(t.v.to_bits().to_le_bytes());
                    h.update([t.doors_open() as u8]);
                }
                Driver::Policy { memory, .. } => {
                    h.update([3, memory.state as u8]);
                    h.update(memory.clear_since_us.map_or(u64::MAX, |t| t).to_le_bytes());
                }
            }
            if let Some((v, p)) = s.seat {
                h.update(v.to_le_bytes());
                for x in [p.x, p.y, p.heading] {
                    h.update(x.to_bits().to_le_bytes());
                }
            }
        }
        for (&f, &l) in self.triggers.fired().iter().zip(self.triggers.last_conditions()) {
            h.update([f as u8, l as u8]);
        }
        h.update([self.signal.map_or(0xFF, |p| p.code())]);
        for r in &self.nback {
            h.update(r.agent.to_le_bytes());
            h.update((r.next as u64).to_le_bytes());
            h.update(&r.symbols);
        }
        h.finalize().into()
    }

    /// Decode and apply one inbound datagram from `source`.
    ///
    /// Replies that must go out before the next tick (WELCOME, rejections)
    /// are returned; everything else surfaces through [`Sim::step`].
    pub fn handle(&mut self, source: u32, bytes: &[u8]) -> Result<Vec<Outbound>, DecodeError> {
        let msg = match decode(bytes) {
            Ok(m) => m,
            Err(e) => {
                self.stats.rejected += 1;
                self.pending.push((EventCode::WARNING, 0, warning::DECODE_ERROR, source as f64));
                return Err(e);
            }
        };
        let mut h = Sha256::new();
        h.update(self.chain);
        h.update(source.to_le_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
        self.chain = h.finalize().into();
        self.stats.handled += 1;
        Ok(self.handle_message(source, &msg))
    }

    fn handle_message(&mut self, source: u32, msg: &Message) -> Vec<Outbound> {
        let h = &msg.header;
        if let Body::Hello(hello) = &msg.body {
            return self.join(source, hello);
        }
        if matches!(msg.body, Body::Ping { .. }) {
            return Vec::new();
        }
        let key = (source, msg.msg_type() as u8);
        if sequence_gate(self.gates.get(&key).copied(), h.seq) == Gate::Stale {
            self.stats.stale += 1;
            return Vec::new();
        }
        self.gates.insert(key, h.seq);
        let member = self.members.get(&source).copied();
        match (&msg.body, member) {
            (Body::Input(input), Some(agent)) if agent != 0 && agent == h.agent_id as u32 => {
                self.accept_input(agent, input.control);
            }
            (Body::Input(_), _) => {
                self.stats.rejected += 1;
                self.pending.push((EventCode::WARNING, member.unwrap_or(0), warning::INPUT_REJECTED, source as f64));
            }
            (Body::QResponse(q), Some(agent)) => {
                let object = ((q.instrument.code() as u32) << 8) | q.item as u32;
                self.pending.push((EventCode::QRESPONSE, agent, object, q.value as f64));
            }
            (Body::NBack(nb), Some(agent)) if nb.kind == NBackKind::Response => {
                self.pending.push((EventCode::NBACK_RESP, agent, nb.symbol as u32, nb.rt_hint_us as f64 / 1e6));
            }
            (Body::Bye, Some(agent)) => {
                self.members.remove(&source);
                if let Some(slot) = agent.checked_sub(1).and_then(|i| self.slots.get_mut(i as usize)) {
                    slot.owner = None;
                    match &mut slot.driver {
                        Driver::Human { input } => *input = ControlInput::idle(&slot.state),
                        Driver::Policy { manual, .. } => *manual = None,
                        _ => {}
                    }
                }
                self.pending.push((EventCode::LEAVE, agent, source, 0.0));
            }
            _ => self.stats.rejected += 1,
        }
        Vec::new()
    }

    fn accept_input(&mut self, agent: u32, control: ControlInput) {
        let slot = &mut self.slots[agent as usize - 1];
        let kind = slot.state.kind;
        match (&mut slot.driver, control) {
            (Driver::Human { input }, c) if c.applies_to(kind) && c != ControlInput::Policy => *input = c,
            (Driver::Policy { manual, .. }, ControlInput::Vehicle(v)) => *manual = Some(v),
            _ => {
                self.stats.rejected += 1;
                self.pending.push((EventCode::WARNING, agent, warning::INPUT_REJECTED, 0.0));
            }
        }
    }

    fn welcome(&mut self, source: u32, agent: u32) -> Outbound {
        let kind = self.slot(agent).map(|s| s.state.kind);
        let body = Body::Welcome(Welcome {
            assigned_agent_id: agent,
            tick_rate_hz: self.config.tick_rate_hz,
            snapshot_div: self.config.snapshot_div,
            scenario_hash: self.scenario.hash,
        });
        self.datagram(source, agent, kind, body)
    }

    fn join(&mut self, source: u32, hello: &Hello) -> Vec<Outbound> {
        if let Some(&agent) = self.members.get(&source) {
            return vec![self.welcome(source, agent)];
        }
        let slot = match hello.role {
            _ if !valid_name(&hello.display_name) => None,
            Role::Observer => Some(0),
            Role::Agent(kind) => self
                .slots
                .iter()
                .find(|s| {
                    s.alive
                        && s.owner.is_none()
                        && s.state.kind == kind
                        && (s.controller == Controller::Human
                            || (s.supervised && s.state.control_authority == ControlAuthority::Policy))
                })
                .map(|s| s.state.agent_id),
        };
        match slot {
            Some(agent) => {
                if agent != 0 {
                    self.slots[agent as usize - 1].owner = Some(source);
                }
                self.members.insert(source, agent);
                self.pending.push((EventCode::JOIN, agent, source, hello.role.code() as f64));
                vec![self.welcome(source, agent)]
            }
            None => {
                let role = hello.role.code() as u32;
                self.pending.push((EventCode::JOIN_REJECTED, source, role, 0.0));
                let body = Body::Event(EventMsg {
                    code: EventCode::JOIN_REJECTED.0,
                    subject: source,
                    object: role,
                    value: 0.0,
                });
                vec![self.datagram(source, 0, None, body)]
            }
        }
    }

    /// Advance one tick.
    pub fn step(&mut self) -> TickOutput {
        let rate = self.config.tick_rate_hz;
        let dt = 1.0 / rate as f64;
        let t_prev = self.sim_time_us();
        self.tick += 1;
        let t = self.sim_time_us();
        let mut ev = Events {
            tick: self.tick,
            t,
            out: Vec::new(),
        };
        for (code, s, o, v) in std::mem::take(&mut self.pending) {
            ev.push(code, s, o, v);
        }

        let before = self.agents();
        let zones: Vec<TransitZone> = self
            .slots
            .iter()
            .filter(|s| s.alive)
            .filter_map(|s| match &s.driver {
                Driver::Transit(ts) => Some(TransitZone {
                    vehicle_id: s.state.agent_id,
                    vehicle_pose: s.state.pose,
                    half_length: ts.route.half_length,
                    half_width: ts.route.half_width,
                    doors_open: ts.doors_open(),
                }),
                _ => None,
            })
            .collect();

        // Supervisor takeover, then policy decisions on the pre-step world.
        for i in 0..self.slots.len() {
            self.decide(i, &before, t_prev, t, &mut ev);
        }

        // Dynamics in ascending id.
        for i in 0..self.slots.len() {
            if self.slots[i].alive {
                self.integrate(i, dt, t, &zones, &mut ev);
            }
        }

        // Passengers ride with their vehicle.
        for i in 0..self.slots.len() {
            if let Some((vid, local)) = self.slots[i].seat {
                if let Some(v) = self.slot(vid).filter(|v| v.alive).map(|v| v.state.pose) {
                    let s = &mut self.slots[i].state;
                    s.pose = v.compose(&local);
                    s.kin = Default::default();
                }
            }
        }
        self.update_flags(&mut ev);

        if let Some(plan) = &self.scenario.spec.signal_plan {
            let phase = plan.phase_at(t);
            if self.signal != Some(phase) {
                self.signal = Some(phase);
                ev.push(EventCode::SIGNAL_PHASE, 0, 0, phase.code() as f64);
            }
        }

        let mut outbound = Vec::new();
        self.run_triggers(t, &mut ev);
        self.emit_nback(t, &mut ev, &mut outbound);
        if t / SYNC_MARK_PERIOD_US > t_prev / SYNC_MARK_PERIOD_US {
            let mark = (t / SYNC_MARK_PERIOD_US) as u32;
            ev.push(EventCode::SYNC_MARK, mark, 0, t as f64 / 1e6);
        }

        let members = self.members();
        if !members.is_empty() {
            for e in &ev.out {
                let header = self.header(MsgType::Event, 0, None);
                let msg = Message::new(
                    header,
                    Body::Event(EventMsg {
                        code: e.code.0,
                        subject: e.subject,
                        object: e.object,
                        value: e.value,
                    }),
                );
                outbound.push(Outbound {
                    to: members.clone(),
                    datagrams: vec![encode(&msg).expect("events encode")],
                });
            }
        }

        let (snapshot, snapshot_datagrams) = if self.tick % self.config.snapshot_div as u64 == 0 {
            let d = self.snapshot_datagrams();
            if !members.is_empty() {
                outbound.push(Outbound {
                    to: members,
                    datagrams: d.clone(),
                });
            }
            (Some(self.snapshot()), d)
        } else {
            (None, Vec::new())
        };

        TickOutput {
            tick: self.tick,
            sim_time_us: t,
            events: ev.out,
            snapshot,
            snapshot_datagrams,
            outbound,
        }
    }

    fn decide(&mut self, i: usize, before: &[AgentState], t_prev: u64, t: u64, ev: &mut Events) {
        let slot = &self.slots[i];
        if !slot.alive {
            return;
        }
        let Driver::Policy { memory, manual } = slot.driver else {
            return;
        };
        let id = slot.state.agent_id;
        if let Some(m) = manual {
            let (next, engaged) = takeover(&slot.state, &m, t, slot.takeover_request_us);
            if let Some(e) = engaged {
                let slot = &mut self.slots[i];
                slot.state = next;
                slot.driver = Driver::Human {
                    input: ControlInput::Vehicle(m),
                };
                ev.push(EventCode::TAKEOVER_ENGAGE, id, 0, e.time_to_intervention().unwrap_or(-1.0));
                if slot.ehmi != EhmiState::default() {
                    slot.ehmi = EhmiState::default();
                    ev.push(EventCode::EHMI_CHANGE, id, 0, 0.0);
                }
                return;
            }
        }
        let params = slot.av_params.expect("policy slots carry AV params");
        let signal_red = self
            .scenario
            .spec
            .signal_plan
            .as_ref()
            .is_some_and(|p| p.is_red_for(&slot.path, t_prev));
        let world = AvWorld {
            agents: before,
            map: &self.scenario.map,
            routes: &self.routes,
            signal_red,
            t_us: t_prev,
        };
        let decision = av_decide(&world, id, &memory, &params);
        let slot = &mut self.slots[i];
        match decision {
            Ok(d) => {
                if d.memory.state != memory.state {
                    ev.push(EventCode::AV_STATE, id, d.memory.state as u32, d.memory.state as u8 as f64);
                }
                let masked = self.scenario.spec.ehmi_mask.apply(d.ehmi);
                if masked != slot.ehmi {
                    slot.ehmi = masked;
                    let bits = masked.to_bits();
                    ev.push(EventCode::EHMI_CHANGE, id, bits as u32, bits as f64);
                }
                slot.applied = ControlInput::Vehicle(d.input);
                slot.driver = Driver::Policy {
                    memory: d.memory,
                    manual,
                };
            }
            Err(e) => {
                tracing::error!(agent = id, error = %e, "AV decision failed; braking");
                slot.applied = ControlInput::Vehicle(VehicleInput {
                    brake: 1.0,
                    gear: 1,
                    ..Default::default()
                });
            }
        }
    }

    fn grade(&self, slot: &Slot) -> f64 {
        self.scenario
            .map
            .approach(&slot.path)
            .map_or(0.0, |p| p.grades.grade_at(p.project(slot.state.position()).arc_length))
    }

    fn integrate(&mut self, i: usize, dt: f64, t: u64, zones: &[TransitZone], ev: &mut Events) {
        let grade = self.grade(&self.slots[i]);
        let line: Polyline = self
            .scenario
            .map
            .polyline(&self.slots[i].path)
            .expect("validated path")
            .clone();
        let vehicle = self.vehicle;
        let cyclist = self.cyclist;
        let slot = &mut self.slots[i];
        let id = slot.state.agent_id;
        let state = slot.state;
        let next = match &mut slot.driver {
            Driver::Human { input } => {
                slot.applied = *input;
                match *input {
                    ControlInput::Vehicle(v) => step_vehicle(&state, &v, &vehicle, grade, dt).ok(),
                    ControlInput::Cyclist(c) => step_cyclist(&state, &c, &cyclist, grade, dt).ok(),
                    ControlInput::Walk(w) => match step_pedestrian(&state, &w, dt, zones) {
                        Ok(o) => {
                            if let Some(seat) = o.boarded {
                                slot.seat = Some(seat);
                                ev.push(EventCode::BOARD, id, seat.0, 0.0);
                            }
                            if o.alighted {
                                if let Some((vid, _)) = slot.seat.take() {
                                    ev.push(EventCode::ALIGHT, id, vid, 0.0);
                                }
                            }
                            if o.seat_request_ignored && !slot.seat_warned {
                                ev.push(EventCode::WARNING, id, warning::SEAT_REQUEST_IGNORED, 0.0);
                            }
                            slot.seat_warned = o.seat_request_ignored;
                            Some(o.state)
                        }
                        Err(_) => None,
                    },
                    ControlInput::Policy => None,
                }
            }
            Driver::Script(f) => {
                let s = f.arc_at(t);
                if s > line.length() + DESPAWN_DISTANCE {
                    slot.alive = false;
                    ev.push(EventCode::DESPAWN, id, 0, 0.0);
                    None
                } else {
                    Some(f.apply(&state, &line, t))
                }
            }
            Driver::Transit(ts) => {
                match ts.step(dt, t) {
                    Some(DoorEvent::Opened(k)) => ev.push(EventCode::DOOR_OPEN, id, k as u32, 0.0),
                    Some(DoorEvent::Closed(k)) => ev.push(EventCode::DOOR_CLOSE, id, k as u32, 0.0),
                    None => {}
                }
                Some(ts.apply(&state, &line, dt))
            }
            Driver::Policy { .. } => match slot.applied {
                ControlInput::Vehicle(v) => step_vehicle(&state, &v, &vehicle, grade, dt).ok(),
                _ => None,
            },
        };
        if let Some(n) = next {
            slot.state = n;
        }
    }

    fn update_flags(&mut self, ev: &mut Events) {
        let map = &self.scenario.map;
        for slot in self.slots.iter_mut().filter(|s| s.alive) {
            let mut flags = AgentFlags::empty();
            let braking = match slot.applied {
                ControlInput::Vehicle(v) => v.brake > BRAKE_FLAG,
                ControlInput::Cyclist(c) => c.brake > BRAKE_FLAG,
                _ => false,
            };
            flags.set(AgentFlags::BRAKING, braking);
            if let Driver::Policy { memory, .. } = slot.driver {
                flags.set(
                    AgentFlags::YIELDING,
                    matches!(memory.state, AvState::Yielding | AvState::Stopped),
                );
            }
            let zone = map.approach(&slot.path).and_then(|p| {
                let d = p.distance_to_conflict(&slot.state).signed();
                let h = slot.state.kind.half_length();
                (d.abs() <= h).then(|| map.conflict_points.iter().position(|c| c.id == p.conflict_point))
            });
            let in_zone = zone.is_some() && !slot.state.seated;
            flags.set(AgentFlags::IN_CONFLICT_ZONE, in_zone);
            if in_zone != slot.in_zone {
                let cp = zone.flatten().unwrap_or(0) as u32;
                let code = if in_zone { EventCode::CONFLICT_ENTER } else { EventCode::CONFLICT_EXIT };
                ev.push(code, slot.state.agent_id, cp, 0.0);
                slot.in_zone = in_zone;
            }
            slot.state.flags = flags;
        }
    }

    fn run_triggers(&mut self, t: u64, ev: &mut Events) {
        if self.scenario.spec.triggers.is_empty() {
            return;
        }
        let agents = self.agents();
        let ctx = TriggerContext {
            t_us: t,
            agents: &agents,
            ids: &self.ids,
            map: &self.scenario.map,
            routes: &self.routes,
            signal: self.signal,
        };
        let outcomes = self.triggers.evaluate(&self.scenario.spec.triggers, &ctx);
        for o in outcomes {
            match o {
                TriggerOutcome::Dropped { trigger, agent } => {
                    ev.push(EventCode::TRIGGER_FIRED, trigger as u32, 0, 0.0);
                    ev.push(EventCode::ACTION_DROPPED, trigger as u32, agent, 0.0);
                }
                TriggerOutcome::Fire { trigger, action } => {
                    ev.push(EventCode::TRIGGER_FIRED, trigger as u32, 0, 0.0);
                    self.apply_action(trigger, action, t, ev);
                }
            }
        }
    }

    fn apply_action(&mut self, trigger: usize, action: ResolvedAction, t: u64, ev: &mut Events) {
        match action {
            ResolvedAction::EmitEvent { code, value } => ev.push(code, trigger as u32, 0, value),
            ResolvedAction::RequestTakeover { agent } => {
                let slot = &mut self.slots[agent as usize - 1];
                slot.takeover_request_us.get_or_insert(t);
                ev.push(EventCode::TAKEOVER_REQUEST, agent, 0, t as f64 / 1e6);
            }
            ResolvedAction::StartQuestionnaire { instrument, agent } => {
                ev.push(EventCode::QUESTIONNAIRE_START, agent, instrument.code() as u32, 0.0);
            }
            ResolvedAction::StartNback { n, length, agent, isi_us } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.scenario.spec.seed ^ ((trigger as u64 + 1) << 32));
                let mut symbols: Vec<u8> = Vec::with_capacity(length as usize);
                for i in 0..length as usize {
                    let s = if i >= n as usize && rng.gen_bool(NBACK_TARGET_RATE) {
                        symbols[i - n as usize]
                    } else {
                        let avoid = (i >= n as usize).then(|| symbols[i - n as usize]);
                        loop {
                            let c = NBACK_LETTERS[rng.gen_range(0..NBACK_LETTERS.len())];
                            if Some(c) != avoid {
                                break c;
                            }
                        }
                    };
                    symbols.push(s);
                }
                let onsets_us = (0..length as u64).map(|i| t + i * isi_us).collect();
                ev.push(EventCode::NBACK_START, agent, n as u32, length as f64);
                self.nback.push(NbackRun {
                    agent,
                    n,
                    symbols,
                    onsets_us,
                    next: 0,
                });
            }
            ResolvedAction::SpawnScript { agent } => {
                if let Driver::Script(f) = &mut self.slots[agent as usize - 1].driver {
                    f.started_at_us.get_or_insert(t);
                }
            }
        }
    }

    fn emit_nback(&mut self, t: u64, ev: &mut Events, outbound: &mut Vec<Outbound>) {
        let mut due = Vec::new();
        for run in &mut self.nback {
            while run.next < run.symbols.len() && run.onsets_us[run.next] <= t {
                due.push((run.agent, run.n, run.symbols[run.next]));
                run.next += 1;
            }
        }
        self.nback.retain(|r| r.next < r.symbols.len());
        for (agent, n, symbol) in due {
            ev.push(EventCode::NBACK_STIM, agent, symbol as u32, n as f64);
            let to: Vec<u32> = if agent == 0 {
                self.members()
            } else {
                self.slot(agent).and_then(|s| s.owner).into_iter().collect()
            };
            for src in to {
                let body = Body::NBack(NBackMsg {
                    kind: NBackKind::Stimulus,
                    symbol,
                    rt_hint_us: 0,
                });
                outbound.push(self.datagram(src, agent, None, body));
            }
        }
    }
}

struct Events {
    tick: u64,
    t: u64,
    out: Vec<EventRecord>,
}

impl Events {
    fn push(&mut self, code: EventCode, subject: u32, object: u32, value: f64) {
        self.out.push(EventRecord {
            tick: self.tick,
            sim_time_us: self.t,
            code,
            subject,
            object,
            value,
        });
    }
}
