//! Authoritative simulation server: the tick loop, session recording,
//! replay, and the UDP/WebSocket transports.

mod log;
mod net;
mod pacer;
mod replay;
mod sim;

use thiserror::Error;

pub use log::{LogError, LogRecord, LogWriter, ReplayLog, Session, LOG_FORMAT, LOG_SNAPSHOT_EVERY};
pub use net::{serve, NetConfig, NetStats, ServeSummary, Server, StopHandle};
pub use pacer::{Clock, ManualClock, Pacer, PacerStats, SystemClock};
pub use replay::{replay, ReplayError, ReplayReport};
pub use sim::{AgentFrame, Outbound, Sim, SimStats, TickOutput, DESPAWN_DISTANCE, SYNC_MARK_PERIOD_US};

pub const TICK_RATE_MIN: u16 = 20;
pub const TICK_RATE_MAX: u16 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionConfig {
    pub tick_rate_hz: u16,
    /// Snapshots go out every `snapshot_div` ticks.
    pub snapshot_div: u8,
    pub max_agents: u16,
    pub session: u16,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            tick_rate_hz: 100,
            snapshot_div: 2,
            max_agents: 256,
            session: 1,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ServerError> {
        if !(TICK_RATE_MIN..=TICK_RATE_MAX).contains(&self.tick_rate_hz) {
            return Err(ServerError::Config(format!(
                "tick_rate_hz must be in [{TICK_RATE_MIN}, {TICK_RATE_MAX}], got {}",
                self.tick_rate_hz
            )));
        }
        if self.snapshot_div == 0 {
            return Err(ServerError::Config("snapshot_div must be at least 1".into()));
        }
        if self.max_agents == 0 {
            return Err(ServerError::Config("max_agents must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate_hz as f64
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("network: {0}")]
    Io(#[from] std::io::Error),
    #[error("log: {0}")]
    Log(#[from] LogError),
}
