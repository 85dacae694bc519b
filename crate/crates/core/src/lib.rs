//! Core of the roadshare simulator.
//!
//! An authoritative server owns the world and advances it on a fixed tick;
//! human stations and the AV policy feed it control inputs over a compact
//! binary protocol. Around that loop sit the scenario format and TTA
//! placement solver, post-hoc safety and behaviour metrics, and the
//! physiological/gaze stream alignment pipeline.

pub mod av;
pub mod dynamics;
pub mod events;
pub mod metrics;
pub mod protocol;
pub mod scenario;
pub mod sensor;
pub mod server;
pub mod world;
