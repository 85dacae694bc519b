use std::collections::BTreeMap;

use thiserror::Error;

use super::*;
use crate::world::{AssistLevel, CyclistInput, VehicleInput, WalkInput};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("truncated datagram: need {needed} bytes at offset {offset}, have {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("invalid {field} code {value}")]
    InvalidEnum { field: &'static str, value: u8 },
    #[error("invalid field {0}")]
    InvalidField(String),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("display name is not UTF-8")]
    BadUtf8,
    #[error("display name is {0} bytes, limit 32")]
    NameTooLong(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("display name is {0} bytes, limit 32")]
    NameTooLong(usize),
    #[error("snapshot of {0} records exceeds one datagram; use encode_snapshot")]
    SnapshotTooLarge(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let end = self.pos.checked_add(N).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                needed: N,
                len: self.buf.len(),
            });
        };
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.pos..end]);
        self.pos = end;
        Ok(out)
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                needed: n,
                len: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take::<1>()?[0])
    }
    fn i8(&mut self) -> Result<i8, DecodeError> {
        Ok(self.u8()? as i8)
    }
    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f32(&mut self) -> Result<f32, DecodeError> {
        Ok(f32::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn finish(self) -> Result<(), DecodeError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

const INPUT_VEHICLE: u8 = 0;
const INPUT_CYCLIST: u8 = 1;
const INPUT_WALK: u8 = 2;
const INPUT_POLICY: u8 = 3;

const NBACK_STIMULUS: u8 = 0;
const NBACK_RESPONSE: u8 = 1;

fn write_header(w: &mut Writer, h: &Header, ty: MsgType) {
    w.u32(MAGIC);
    w.u8(VERSION);
    w.u8(ty as u8);
    w.u8(h.flags);
    w.u8(h.kind.map_or(KIND_NONE, AgentKind::code));
    w.u16(h.session);
    w.u16(h.agent_id);
    w.u32(h.seq);
    w.u64(h.timestamp_us);
}

fn write_record(w: &mut Writer, r: &AgentRecord) {
    w.u32(r.id);
    w.u8(r.kind.code());
    w.u8(r.flags.bits());
    w.f64(r.x);
    w.f64(r.y);
    w.f32(r.heading);
    w.f32(r.speed);
    w.f32(r.accel);
    w.f32(r.aux);
}

fn write_input(w: &mut Writer, input: &InputMsg) -> Result<(), EncodeError> {
    input
        .control
        .validate()
        .map_err(|e| EncodeError::InvalidInput(e.to_string()))?;
    match input.control {
        ControlInput::Vehicle(v) => {
            w.u8(INPUT_VEHICLE);
            w.f64(v.steer_wheel);
            w.f64(v.throttle);
            w.f64(v.brake);
            w.u8(v.gear as u8);
        }
        ControlInput::Cyclist(c) => {
            w.u8(INPUT_CYCLIST);
            w.f64(c.power);
            w.f64(c.cadence);
            w.f64(c.steer);
            w.f64(c.brake);
            w.u8(c.assist.code());
        }
        ControlInput::Walk(p) => {
            w.u8(INPUT_WALK);
            w.f64(p.walk_speed);
            w.f64(p.walk_heading);
            w.u8(p.seated_request as u8);
        }
        ControlInput::Policy => w.u8(INPUT_POLICY),
    }
    w.u64(input.client_tick_hint);
    Ok(())
}

/// Serialize one message into a single datagram.
pub fn encode(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer(Vec::with_capacity(64));
    write_header(&mut w, &msg.header, msg.msg_type());
    match &msg.body {
        Body::Hello(h) => {
            let name = h.display_name.as_bytes();
            if name.len() > MAX_NAME_LEN {
                return Err(EncodeError::NameTooLong(name.len()));
            }
            w.u8(h.role.code());
            w.u8(name.len() as u8);
            w.0.extend_from_slice(name);
        }
        Body::Welcome(wl) => {
            w.u32(wl.assigned_agent_id);
            w.u16(wl.tick_rate_hz);
            w.u8(wl.snapshot_div);
            w.u64(wl.scenario_hash);
        }
        Body::Input(i) => write_input(&mut w, i)?,
        Body::Snapshot(s) => {
            if s.records.len() > MAX_RECORDS_PER_DATAGRAM {
                return Err(EncodeError::SnapshotTooLarge(s.records.len()));
            }
            w.u64(s.tick);
            w.u64(s.sim_time_us);
            w.u16(s.records.len() as u16);
            for r in &s.records {
                write_record(&mut w, r);
            }
        }
        Body::Event(e) => {
            w.u16(e.code);
            w.u32(e.subject);
            w.u32(e.object);
            w.f64(e.value);
        }
        Body::Ping { t0 } => w.u64(*t0),
        Body::Pong { t0, t1, t2 } => {
            w.u64(*t0);
            w.u64(*t1);
            w.u64(*t2);
        }
        Body::QResponse(q) => {
            w.u8(q.instrument.code());
            w.u8(q.item);
            w.f32(q.value);
        }
        Body::NBack(n) => {
            w.u8(match n.kind {
                NBackKind::Stimulus => NBACK_STIMULUS,
                NBackKind::Response => NBACK_RESPONSE,
            });
            w.u8(n.symbol);
            w.u32(n.rt_hint_us);
        }
        Body::Bye => {}
    }
    Ok(w.0)
}

/// Split a snapshot of any size into datagrams of at most 35 records.
///
/// Every fragment carries the full tick and sim time; the header flags hold
/// the fragment index and a more-fragments bit. An empty snapshot is one
/// datagram with n = 0.
pub fn encode_snapshot(header: &Header, snap: &Snapshot) -> Result<Vec<Vec<u8>>, EncodeError> {
    let chunks: Vec<&[AgentRecord]> = if snap.records.is_empty() {
        vec![&[]]
    } else {
        snap.records.chunks(MAX_RECORDS_PER_DATAGRAM).collect()
    };
    let last = chunks.len() - 1;
    chunks
        .iter()
        .enumerate()
        .map(|(i, recs)| {
            let mut h = *header;
            h.flags = (i as u8 & FRAGMENT_INDEX_MASK) | if i < last { FLAG_MORE_FRAGMENTS } else { 0 };
            encode(&Message::new(
                h,
                Body::Snapshot(Snapshot {
                    tick: snap.tick,
                    sim_time_us: snap.sim_time_us,
                    records: recs.to_vec(),
                }),
            ))
        })
        .collect()
}

fn read_header(r: &mut Reader) -> Result<(Header, MsgType), DecodeError> {
    let magic = r.u32()?;
    if magic != MAGIC {
        return Err(DecodeError::BadMagic(magic));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(DecodeError::BadVersion(version));
    }
    let ty_code = r.u8()?;
    let ty = MsgType::from_code(ty_code).ok_or(DecodeError::UnknownType(ty_code))?;
    let flags = r.u8()?;
    let kind_code = r.u8()?;
    let kind = if kind_code == KIND_NONE {
        None
    } else {
        Some(AgentKind::from_code(kind_code).ok_or(DecodeError::InvalidEnum {
            field: "kind",
            value: kind_code,
        })?)
    };
    Ok((
        Header {
            flags,
            kind,
            session: r.u16()?,
            agent_id: r.u16()?,
            seq: r.u32()?,
            timestamp_us: r.u64()?,
        },
        ty,
    ))
}

fn read_record(r: &mut Reader) -> Result<AgentRecord, DecodeError> {
    let id = r.u32()?;
    let kind_code = r.u8()?;
    let kind = AgentKind::from_code(kind_code).ok_or(DecodeError::InvalidEnum {
        field: "record kind",
        value: kind_code,
    })?;
    let flag_bits = r.u8()?;
    let flags = RecordFlags::from_bits(flag_bits).ok_or(DecodeError::InvalidEnum {
        field: "record flags",
        value: flag_bits,
    })?;
    Ok(AgentRecord {
        id,
        kind,
        flags,
        x: r.f64()?,
        y: r.f64()?,
        heading: r.f32()?,
        speed: r.f32()?,
        accel: r.f32()?,
        aux: r.f32()?,
    })
}

fn read_input(r: &mut Reader) -> Result<InputMsg, DecodeError> {
    let tag = r.u8()?;
    let control = match tag {
        INPUT_VEHICLE => ControlInput::Vehicle(VehicleInput {
            steer_wheel: r.f64()?,
            throttle: r.f64()?,
            brake: r.f64()?,
            gear: r.i8()?,
        }),
        INPUT_CYCLIST => {
            let power = r.f64()?;
            let cadence = r.f64()?;
            let steer = r.f64()?;
            let brake = r.f64()?;
            let code = r.u8()?;
            let assist = AssistLevel::from_code(code).ok_or(DecodeError::InvalidEnum {
                field: "assist",
                value: code,
            })?;
            ControlInput::Cyclist(CyclistInput {
                power,
                cadence,
                steer,
                brake,
                assist,
            })
        }
        INPUT_WALK => {
            let walk_speed = r.f64()?;
            let walk_heading = r.f64()?;
            let seated = r.u8()?;
            if seated > 1 {
                return Err(DecodeError::InvalidEnum {
                    field: "seated_request",
                    value: seated,
                });
            }
            ControlInput::Walk(WalkInput {
                walk_speed,
                walk_heading,
                seated_request: seated == 1,
            })
        }
        INPUT_POLICY => ControlInput::Policy,
        other => {
            return Err(DecodeError::InvalidEnum {
                field: "input tag",
                value: other,
            })
        }
    };
    control
        .validate()
        .map_err(|e| DecodeError::InvalidField(e.to_string()))?;
    Ok(InputMsg {
        control,
        client_tick_hint: r.u64()?,
    })
}

/// Parse one datagram. Never reads past `buf` and never panics.
pub fn decode(buf: &[u8]) -> Result<Message, DecodeError> {
    let mut r = Reader::new(buf);
    let (header, ty) = read_header(&mut r)?;
    let body = match ty {
        MsgType::Hello => {
            let role_code = r.u8()?;
            let role = Role::from_code(role_code).ok_or(DecodeError::InvalidEnum {
                field: "role",
                value: role_code,
            })?;
            let len = r.u8()? as usize;
            if len > MAX_NAME_LEN {
                return Err(DecodeError::NameTooLong(len));
            }
            let name = std::str::from_utf8(r.bytes(len)?).map_err(|_| DecodeError::BadUtf8)?;
            Body::Hello(Hello {
                role,
                display_name: name.to_owned(),
            })
        }
        MsgType::Welcome => Body::Welcome(Welcome {
            assigned_agent_id: r.u32()?,
            tick_rate_hz: r.u16()?,
            snapshot_div: r.u8()?,
            scenario_hash: r.u64()?,
        }),
        MsgType::Input => Body::Input(read_input(&mut r)?),
        MsgType::Snapshot => {
            let tick = r.u64()?;
            let sim_time_us = r.u64()?;
            let n = r.u16()? as usize;
            if n > MAX_RECORDS_PER_DATAGRAM {
                return Err(DecodeError::InvalidField(format!("snapshot record count {n}")));
            }
            let mut records = Vec::with_capacity(n);
            for _ in 0..n {
                records.push(read_record(&mut r)?);
            }
            Body::Snapshot(Snapshot {
                tick,
                sim_time_us,
                records,
            })
        }
        MsgType::Event => Body::Event(EventMsg {
            code: r.u16()?,
            subject: r.u32()?,
            object: r.u32()?,
            value: r.f64()?,
        }),
        MsgType::Ping => Body::Ping { t0: r.u64()? },
        MsgType::Pong => Body::Pong {
            t0: r.u64()?,
            t1: r.u64()?,
            t2: r.u64()?,
        },
        MsgType::QResponse => {
            let code = r.u8()?;
            let instrument = Instrument::from_code(code).ok_or(DecodeError::InvalidEnum {
                field: "instrument",
                value: code,
            })?;
            Body::QResponse(QResponse {
                instrument,
                item: r.u8()?,
                value: r.f32()?,
            })
        }
        MsgType::NBack => {
            let code = r.u8()?;
            let kind = match code {
                NBACK_STIMULUS => NBackKind::Stimulus,
                NBACK_RESPONSE => NBackKind::Response,
                other => {
                    return Err(DecodeError::InvalidEnum {
                        field: "nback kind",
                        value: other,
                    })
                }
            };
            Body::NBack(NBackMsg {
                kind,
                symbol: r.u8()?,
                rt_hint_us: r.u32()?,
            })
        }
        MsgType::Bye => Body::Bye,
    };
    r.finish()?;
    Ok(Message { header, body })
}

/// Reassembles fragmented snapshots. Fragments of a newer tick discard any
/// incomplete older tick.
#[derive(Debug, Default)]
pub struct SnapshotAssembler {
    tick: Option<u64>,
    sim_time_us: u64,
    parts: BTreeMap<u8, Vec<AgentRecord>>,
    last_index: Option<u8>,
}

impl SnapshotAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed one decoded SNAPSHOT datagram; returns the full snapshot once
    /// every fragment of its tick has arrived.
    pub fn push(&mut self, header: &Header, snap: Snapshot) -> Option<Snapshot> {
        match self.tick {
            Some(t) if snap.tick < t => return None,
            Some(t) if snap.tick == t => {}
            _ => {
                self.tick = Some(snap.tick);
                self.sim_time_us = snap.sim_time_us;
                self.parts.clear();
                self.last_index = None;
            }
        }
        let index = header.flags & FRAGMENT_INDEX_MASK;
        if header.flags & FLAG_MORE_FRAGMENTS == 0 {
            self.last_index = Some(index);
        }
        self.parts.insert(index, snap.records);
        let last = self.last_index?;
        if self.parts.len() != last as usize + 1 {
            return None;
        }
        let records = std::mem::take(&mut self.parts).into_values().flatten().collect();
        // Later fragments of this tick are duplicates.
        self.last_index = None;
        Some(Snapshot {
            tick: snap.tick,
            sim_time_us: self.sim_time_us,
            records,
        })
    }
}
