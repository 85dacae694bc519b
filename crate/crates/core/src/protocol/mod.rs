//! Wire protocol between agent stations and the authoritative server.
//!
//! Every datagram is a fixed 24-byte little-endian header followed by a
//! type-specific payload. Layouts are fixed:
//!
//! ```text
//! header   magic u32 | version u8 | msg_type u8 | flags u8 | kind u8
//!          | session u16 | agent_id u16 | seq u32 | timestamp_us u64
//! record   id u32 | kind u8 | flags u8 | x f64 | y f64
//!          | heading f32 | speed f32 | accel f32 | aux f32          (38 bytes)
//! SNAPSHOT tick u64 | sim_time_us u64 | n u16 | n × record         (18 + 38n)
//! ```
//!
//! Snapshots above 35 agents are split into fragments that share a tick;
//! fragment index and a more-fragments bit live in the header flags.

mod clock;
mod codec;
mod ws;

pub use clock::{estimate_offset, ClockError, ClockSample, OffsetEstimate};
pub use codec::{decode, encode, encode_snapshot, DecodeError, EncodeError, SnapshotAssembler};
pub use ws::{
    accept_key, handshake_response, masked_frame, parse_handshake, read_frame, write_frame, ws_frame, ws_unframe,
    Frame, Opcode, WsError, CLOSE_PROTOCOL_ERROR,
};

use crate::av::EhmiState;
use crate::metrics::Instrument;
use crate::world::{AgentKind, AgentState, ControlAuthority, ControlInput};

pub const MAGIC: u32 = 0x5349_4D31;
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 24;
pub const AGENT_RECORD_LEN: usize = 38;
pub const SNAPSHOT_FIXED_LEN: usize = 18;
pub const MAX_DATAGRAM: usize = 1400;
/// Largest record count that fits one datagram: 24 + 18 + 38·35 = 1372.
pub const MAX_RECORDS_PER_DATAGRAM: usize = 35;
pub const MAX_NAME_LEN: usize = 32;
/// `kind` byte for messages not tied to an agent kind.
pub const KIND_NONE: u8 = 0xFF;

pub const DEFAULT_UDP_PORT: u16 = 47810;
pub const DEFAULT_WS_PORT: u16 = 47811;

/// Snapshot header flag: more fragments follow for this tick.
pub const FLAG_MORE_FRAGMENTS: u8 = 0x80;
pub const FRAGMENT_INDEX_MASK: u8 = 0x7F;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    Welcome = 0x02,
    Input = 0x03,
    Snapshot = 0x04,
    Event = 0x05,
    Ping = 0x06,
    Pong = 0x07,
    QResponse = 0x08,
    NBack = 0x09,
    Bye = 0x0F,
}

impl MsgType {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0x01 => Self::Hello,
            0x02 => Self::Welcome,
            0x03 => Self::Input,
            0x04 => Self::Snapshot,
            0x05 => Self::Event,
            0x06 => Self::Ping,
            0x07 => Self::Pong,
            0x08 => Self::QResponse,
            0x09 => Self::NBack,
            0x0F => Self::Bye,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Header {
    pub flags: u8,
    pub kind: Option<AgentKind>,
    pub session: u16,
    pub agent_id: u16,
    /// Per-sender monotonic sequence number.
    pub seq: u32,
    /// Sender's monotonic clock, µs.
    pub timestamp_us: u64,
}

/// Who a station wants to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Agent(AgentKind),
    /// Receives snapshots and events, controls nothing.
    Observer,
}

impl Role {
    pub fn code(self) -> u8 {
        match self {
            Role::Agent(k) => k.code(),
            Role::Observer => KIND_NONE,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        if code == KIND_NONE {
            Some(Role::Observer)
        } else {
            AgentKind::from_code(code).map(Role::Agent)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hello {
    pub role: Role,
    pub display_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Welcome {
    pub assigned_agent_id: u32,
    pub tick_rate_hz: u16,
    pub snapshot_div: u8,
    pub scenario_hash: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputMsg {
    pub control: ControlInput,
    pub client_tick_hint: u64,
}

/// Light-band values carried in the record flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LightBand {
    #[default]
    Off,
    Aware,
    Yielding,
}

impl LightBand {
    pub fn code(self) -> u8 {
        match self {
            LightBand::Off => 0,
            LightBand::Aware => 1,
            LightBand::Yielding => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LightBand::Off),
            1 => Some(LightBand::Aware),
            2 => Some(LightBand::Yielding),
            _ => None,
        }
    }
}

/// Per-record flag byte.
///
/// bit 0 yielding, 1 braking, 2 in conflict zone, 3 seated, 4 policy
/// control, 5 eHMI projection on, 6–7 eHMI light band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RecordFlags(u8);

impl RecordFlags {
    pub const YIELDING: u8 = 1 << 0;
    pub const BRAKING: u8 = 1 << 1;
    pub const IN_CONFLICT_ZONE: u8 = 1 << 2;
    pub const SEATED: u8 = 1 << 3;
    pub const POLICY: u8 = 1 << 4;
    pub const PROJECTION: u8 = 1 << 5;
    const LIGHT_SHIFT: u8 = 6;

    pub fn from_bits(bits: u8) -> Option<Self> {
        LightBand::from_code(bits >> Self::LIGHT_SHIFT).map(|_| Self(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, bit: u8) -> bool {
        self.0 & bit != 0
    }

    pub fn light_band(self) -> LightBand {
        LightBand::from_code(self.0 >> Self::LIGHT_SHIFT).unwrap_or_default()
    }

    pub fn for_agent(state: &AgentState, ehmi: Option<&EhmiState>) -> Self {
        let mut bits = state.flags.bits() & 0b111;
        if state.seated {
            bits |= Self::SEATED;
        }
        if state.control_authority == ControlAuthority::Policy {
            bits |= Self::POLICY;
        }
        if let Some(e) = ehmi {
            if e.projection_on {
                bits |= Self::PROJECTION;
            }
            bits |= e.light_band.code() << Self::LIGHT_SHIFT;
        }
        Self(bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentRecord {
    pub id: u32,
    pub kind: AgentKind,
    pub flags: RecordFlags,
    pub x: f64,
    pub y: f64,
    pub heading: f32,
    pub speed: f32,
    pub accel: f32,
    pub aux: f32,
}

impl AgentRecord {
    pub fn from_state(state: &AgentState, ehmi: Option<&EhmiState>) -> Self {
        Self {
            id: state.agent_id,
            kind: state.kind,
            flags: RecordFlags::for_agent(state, ehmi),
            x: state.pose.x,
            y: state.pose.y,
            heading: state.pose.heading as f32,
            speed: state.kin.speed as f32,
            accel: state.kin.accel as f32,
            aux: state.kin.aux as f32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub tick: u64,
    pub sim_time_us: u64,
    pub records: Vec<AgentRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventMsg {
    pub code: u16,
    pub subject: u32,
    pub object: u32,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QResponse {
    pub instrument: Instrument,
    pub item: u8,
    pub value: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NBackKind {
    Stimulus,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NBackMsg {
    pub kind: NBackKind,
    pub symbol: u8,
    /// Client-measured reaction time hint, µs. Grading uses server times.
    pub rt_hint_us: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Hello(Hello),
    Welcome(Welcome),
    Input(InputMsg),
    Snapshot(Snapshot),
    Event(EventMsg),
    Ping { t0: u64 },
    Pong { t0: u64, t1: u64, t2: u64 },
    QResponse(QResponse),
    NBack(NBackMsg),
    Bye,
}

impl Body {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Body::Hello(_) => MsgType::Hello,
            Body::Welcome(_) => MsgType::Welcome,
            Body::Input(_) => MsgType::Input,
            Body::Snapshot(_) => MsgType::Snapshot,
            Body::Event(_) => MsgType::Event,
            Body::Ping { .. } => MsgType::Ping,
            Body::Pong { .. } => MsgType::Pong,
            Body::QResponse(_) => MsgType::QResponse,
            Body::NBack(_) => MsgType::NBack,
            Body::Bye => MsgType::Bye,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub header: Header,
    pub body: Body,
}

impl Message {
    pub fn new(header: Header, body: Body) -> Self {
        Self { header, body }
    }

    pub fn msg_type(&self) -> MsgType {
        self.body.msg_type()
    }
}

/// Outcome of [`sequence_gate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Accept,
    Stale,
}

/// Latest-wins gating: accept only strictly newer sequence numbers.
pub fn sequence_gate(last_seq: Option<u32>, incoming_seq: u32) -> Gate {
    match last_seq {
        Some(last) if incoming_seq <= last => Gate::Stale,
        _ => Gate::Accept,
    }
}
