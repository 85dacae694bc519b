use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ServerError, SessionConfig, Sim, TickOutput};
use crate::events::EventRecord;
use crate::protocol::DecodeError;
use crate::scenario::{Scenario, ScenarioSpec};
use crate::server::Outbound;

pub const LOG_FORMAT: u32 = 1;
/// Full snapshots are written every this many ticks, and at tick 0.
pub const LOG_SNAPSHOT_EVERY: u64 = 1000;

/// One line of a replay log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        format: u32,
        scenario_hash: u64,
        seed: u64,
        tick_rate_hz: u16,
        snapshot_div: u8,
        session: u16,
        scenario: Box<ScenarioSpec>,
    },
    /// A datagram handled just before `tick` was stepped.
    Input { tick: u64, source: u32, data: String },
    Event(EventRecord),
    Snapshot {
        tick: u64,
        digest: String,
        /// Encoded snapshot fragments.
        data: Vec<String>,
    },
    End { ticks: u64, digest: String },
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("log has no header")]
    MissingHeader,
    #[error("unsupported log format {0}")]
    Format(u32),
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes records as JSON lines.
pub struct LogWriter<W: Write> {
    out: W,
}

impl<W: Write> LogWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, rec: &LogRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// A [`Sim`] that records everything needed to replay it.
pub struct Session<W: Write> {
    sim: Sim,
    log: Option<LogWriter<W>>,
}

impl<W: Write> Session<W> {
    pub fn new(sim: Sim, log: Option<W>) -> Result<Self, ServerError> {
        let mut s = Self {
            sim,
            log: log.map(LogWriter::new),
        };
        let cfg = *s.sim.config();
        let spec = &s.sim.scenario().spec;
        let header = LogRecord::Header {
            format: LOG_FORMAT,
            scenario_hash: s.sim.scenario().hash,
            seed: spec.seed,
            tick_rate_hz: cfg.tick_rate_hz,
            snapshot_div: cfg.snapshot_div,
            session: cfg.session,
            scenario: Box::new(spec.clone()),
        };
        s.record(&header)?;
        s.record_snapshot()?;
        Ok(s)
    }

    pub fn sim(&self) -> &Sim {
        &self.sim
    }

    fn record(&mut self, rec: &LogRecord) -> io::Result<()> {
        match &mut self.log {
            Some(l) => l.write(rec),
            None => Ok(()),
        }
    }

    fn record_snapshot(&mut self) -> io::Result<()> {
        if self.log.is_none() {
            return Ok(());
        }
        let rec = LogRecord::Snapshot {
            tick: self.sim.tick(),
            digest: hex(&self.sim.state_digest()),
            data: self.sim.snapshot_datagrams().iter().map(|d| B64.encode(d)).collect(),
        };
        self.record(&rec)
    }

    pub fn handle(&mut self, source: u32, bytes: &[u8]) -> io::Result<Result<Vec<Outbound>, DecodeError>> {
        let rec = LogRecord::Input {
            tick: self.sim.tick() + 1,
            source,
            data: B64.encode(bytes),
        };
        self.record(&rec)?;
        Ok(self.sim.handle(source, bytes))
    }

    pub fn step(&mut self) -> io::Result<TickOutput> {
        let out = self.sim.step();
        if self.log.is_some() {
            for e in &out.events {
                self.record(&LogRecord::Event(*e))?;
            }
            if out.tick % LOG_SNAPSHOT_EVERY == 0 {
                self.record_snapshot()?;
            }
        }
        Ok(out)
    }

    /// Write the trailer and hand back the sim and the log sink.
    pub fn finish(mut self) -> io::Result<(Sim, Option<W>)> {
        let end = LogRecord::End {
            ticks: self.sim.tick(),
            digest: hex(&self.sim.state_digest()),
        };
        self.record(&end)?;
        if let Some(l) = &mut self.log {
            l.flush()?;
        }
        Ok((self.sim, self.log.map(LogWriter::into_inner)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedSnapshot {
    pub digest: String,
    pub data: Vec<Vec<u8>>,
}

/// A parsed replay log.
#[derive(Debug, Clone)]
pub struct ReplayLog {
    pub scenario_hash: u64,
    pub config: SessionConfig,
    pub spec: ScenarioSpec,
    /// Datagrams by the tick they precede, in arrival order.
    pub inputs: BTreeMap<u64, Vec<(u32, Vec<u8>)>>,
    pub events: BTreeMap<u64, Vec<EventRecord>>,
    pub snapshots: BTreeMap<u64, LoggedSnapshot>,
    /// Final tick and digest; absent if the session did not shut down cleanly.
    pub end: Option<(u64, String)>,
}

impl ReplayLog {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|source| LogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(io::BufReader::new(f))
    }

    pub fn from_reader(r: impl BufRead) -> Result<Self, LogError> {
        let mut header: Option<(u64, SessionConfig, ScenarioSpec)> = None;
        let mut inputs: BTreeMap<u64, Vec<(u32, Vec<u8>)>> = BTreeMap::new();
        let mut events: BTreeMap<u64, Vec<EventRecord>> = BTreeMap::new();
        let mut snapshots = BTreeMap::new();
        let mut end = None;
        for (i, line) in r.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|source| LogError::Io {
                path: format!("line {line_no}"),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |m: String| LogError::Parse {
                line: line_no,
                message: m,
            };
            let rec: LogRecord = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            let b64 = |s: &str| B64.decode(s).map_err(|e| parse(e.to_string()));
            match rec {
                LogRecord::Header {
                    format,
                    scenario_hash,
                    tick_rate_hz,
                    snapshot_div,
                    session,
                    scenario,
                    ..
                } => {
                    if format != LOG_FORMAT {
                        return Err(LogError::Format(format));
                    }
                    let config = SessionConfig {
                        tick_rate_hz,
                        snapshot_div,
                        session,
                        ..SessionConfig::default()
                    };
                    header = Some((scenario_hash, config, *scenario));
                }
                _ if header.is_none() => return Err(LogError::MissingHeader),
                LogRecord::Input { tick, source, data } => {
                    inputs.entry(tick).or_default().push((source, b64(&data)?));
                }
                LogRecord::Event(e) => events.entry(e.tick).or_default().push(e),
                LogRecord::Snapshot { tick, digest, data } => {
                    let data = data.iter().map(|d| b64(d)).collect::<Result<_, _>>()?;
                    snapshots.insert(tick, LoggedSnapshot { digest, data });
                }
                LogRecord::End { ticks, digest } => end = Some((ticks, digest)),
            }
        }
        let (scenario_hash, config, spec) = header.ok_or(LogError::MissingHeader)?;
        Ok(ReplayLog {
            scenario_hash,
            config,
            spec,
            inputs,
            events,
            snapshots,
            end,
        })
    }

    /// Last tick the log covers.
    pub fn last_tick(&self) -> u64 {
        let last = |m: Option<u64>| m.unwrap_or(0);
        self.end.as_ref().map(|e| e.0).unwrap_or_else(|| {
            last(self.events.keys().next_back().copied())
                .max(last(self.snapshots.keys().next_back().copied()))
                .max(last(self.inputs.keys().next_back().copied()).saturating_sub(1))
        })
    }

    pub fn scenario(&self) -> Result<Scenario, crate::scenario::LoadError> {
        Scenario::build(self.spec.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip() {
        let rec = LogRecord::Input {
            tick: 3,
            source: 2,
            data: B64.encode([1, 2, 3]),
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.starts_with(r#"{"type":"input""#));
        assert_eq!(serde_json::from_str::<LogRecord>(&line).unwrap(), rec);
    }

    #[test]
    fn hex_is_lowercase() {
        assert_eq!(hex(&[0x0a, 0xff]), "0aff");
    }
}
