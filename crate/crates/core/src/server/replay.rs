use thiserror::Error;

use super::log::{hex, ReplayLog};
use super::{ServerError, Sim, TickOutput};
use crate::scenario::LoadError;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("scenario hash mismatch: log has {logged:#018x}, embedded scenario hashes to {actual:#018x}")]
    HashMismatch { logged: u64, actual: u64 },
    #[error("replay diverged at tick {tick}: {what}")]
    Divergence { tick: u64, what: String },
    #[error("embedded scenario: {0}")]
    Scenario(#[from] LoadError),
    #[error(transparent)]
    Server(#[from] ServerError),
}

impl ReplayError {
    pub fn divergence_tick(&self) -> Option<u64> {
        match self {
            ReplayError::Divergence { tick, .. } => Some(*tick),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub ticks: u64,
    pub inputs: usize,
    pub events: usize,
    pub snapshots_checked: usize,
    pub digest: String,
}

fn diverged(tick: u64, what: impl Into<String>) -> ReplayError {
    ReplayError::Divergence {
        tick,
        what: what.into(),
    }
}

/// Re-run a recorded session and check it against the log.
///
/// Inputs are fed back on the ticks they were handled; every logged event,
/// snapshot and the final digest must be reproduced exactly. `visit` sees
/// the sim after each tick.
pub fn replay(log: &ReplayLog, mut visit: impl FnMut(&Sim, &TickOutput)) -> Result<ReplayReport, ReplayError> {
    let scenario = log.scenario()?;
    if scenario.hash != log.scenario_hash {
        return Err(ReplayError::HashMismatch {
            logged: log.scenario_hash,
            actual: scenario.hash,
        });
    }
    let mut sim = Sim::new(scenario, log.config)?;
    let mut report = ReplayReport {
        ticks: 0,
        inputs: 0,
        events: 0,
        snapshots_checked: 0,
        digest: String::new(),
    };
    let check_snapshot = |sim: &Sim, report: &mut ReplayReport| -> Result<(), ReplayError> {
        let Some(s) = log.snapshots.get(&sim.tick()) else {
            return Ok(());
        };
        if s.digest != hex(&sim.state_digest()) {
            return Err(diverged(sim.tick(), "state digest differs from logged snapshot"));
        }
        if s.data != sim.snapshot_datagrams() {
            return Err(diverged(sim.tick(), "snapshot bytes differ"));
        }
        report.snapshots_checked += 1;
        Ok(())
    };
    check_snapshot(&sim, &mut report)?;
    let last = log.last_tick();
    let empty = Vec::new();
    while sim.tick() < last {
        let next = sim.tick() + 1;
        for (source, bytes) in log.inputs.get(&next).unwrap_or(&empty) {
            // Malformed datagrams were rejected live too; the sim records that.
            let _ = sim.handle(*source, bytes);
            report.inputs += 1;
        }
        let out = sim.step();
        let logged = log.events.get(&out.tick).map(Vec::as_slice).unwrap_or(&[]);
        if logged != out.events.as_slice() {
            let what = match logged.iter().zip(&out.events).position(|(a, b)| a != b) {
                Some(i) => format!("event {i}: logged {:?}, replayed {:?}", logged[i], out.events[i]),
                None => format!("{} events logged, {} replayed", logged.len(), out.events.len()),
            };
            return Err(diverged(out.tick, what));
        }
        report.events += out.events.len();
        check_snapshot(&sim, &mut report)?;
        visit(&sim, &out);
    }
    report.ticks = sim.tick();
    report.digest = hex(&sim.state_digest());
    if let Some((ticks, digest)) = &log.end {
        if *ticks != sim.tick() || *digest != report.digest {
            return Err(diverged(sim.tick(), "final digest differs"));
        }
    }
    Ok(report)
}
