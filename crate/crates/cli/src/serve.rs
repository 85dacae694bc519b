use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use clap::Args;
use roadshare_core::scenario::Scenario;
use roadshare_core::server::{NetConfig, Server, ServerError, Session, SessionConfig, Sim, StopHandle};
use serde_json::json;

use crate::{CmdResult, Exit, Failure, Out};

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Scenario JSON file.
    pub scenario: PathBuf,
    /// Address to bind both listeners on.
    #[arg(long, default_value = "0.0.0.0")]
    pub bind: IpAddr,
    /// UDP port for station datagrams (0 picks a free port).
    #[arg(long, default_value_t = 47810)]
    pub udp_port: u16,
    /// WebSocket bridge port (0 picks a free port).
    #[arg(long, default_value_t = 47811)]
    pub ws_port: u16,
    /// Disable the WebSocket bridge.
    #[arg(long)]
    pub no_ws: bool,
    /// Simulation tick rate, Hz (20 to 1000).
    #[arg(long, default_value_t = 100)]
    pub tick_hz: u16,
    /// Broadcast a snapshot every this many ticks.
    #[arg(long, default_value_t = 2)]
    pub snapshot_div: u8,
    /// Maximum simultaneous agents.
    #[arg(long, default_value_t = 256)]
    pub max_agents: u16,
    /// Session id stamped on every message.
    #[arg(long, default_value_t = 1)]
    pub session: u16,
    /// Write a replayable session log here.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Stop after this much sim time, s.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Stop once every station that joined has left.
    #[arg(long)]
    pub exit_when_empty: bool,
}

fn server_failure(e: ServerError) -> Failure {
    match e {
        ServerError::Config(_) => Failure::new(Exit::Usage, e),
        ServerError::Io(_) | ServerError::Log(_) => Failure::io(e),
    }
}

pub fn run(args: ServeArgs, out: Out) -> CmdResult {
    if args.duration.is_some_and(|d| !(d.is_finite() && d >= 0.0)) {
        return Err(Failure::new(Exit::Usage, "--duration must be a non-negative number of seconds"));
    }
    let scenario = Scenario::from_file(&args.scenario)?;
    for w in &scenario.warnings {
        tracing::warn!("{w}");
    }
    let config = SessionConfig {
        tick_rate_hz: args.tick_hz,
        snapshot_div: args.snapshot_div,
        max_agents: args.max_agents,
        session: args.session,
    };
    config.validate().map_err(server_failure)?;
    let sim = Sim::new(scenario, config).map_err(server_failure)?;
    let log = match &args.log {
        Some(p) => Some(BufWriter::new(
            File::create(p).map_err(|e| Failure::io(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => None,
    };
    let session = Session::new(sim, log).map_err(server_failure)?;
    let net = NetConfig {
        udp: Some(SocketAddr::new(args.bind, args.udp_port)),
        ws: (!args.no_ws).then_some(SocketAddr::new(args.bind, args.ws_port)),
        duration_s: args.duration,
        exit_when_empty: args.exit_when_empty,
        ..NetConfig::default()
    };
    let server = Server::bind(net).map_err(server_failure)?;
    let udp = server.udp_addr();
    let ws = server.ws_addr();
    if let Some(a) = udp {
        tracing::info!("udp listening on {a}");
    }
    if let Some(a) = ws {
        tracing::info!("websocket bridge on ws://{a}");
    }
    tracing::info!(tick_hz = config.tick_rate_hz, "session {} running; ctrl-c stops", config.session);

    let stop = StopHandle::new();
    let handle = stop.clone();
    ctrlc::set_handler(move || handle.stop()).map_err(|e| Failure::io(format!("cannot install signal handler: {e}")))?;

    let (summary, sink) = server.run(session, stop).map_err(server_failure)?;
    if let Some(mut w) = sink {
        w.flush().map_err(|e| Failure::io(format!("log: {e}")))?;
    }
    let value = json!({
        "ticks": summary.ticks,
        "digest": summary.digest,
        "udp": udp,
        "ws": ws,
        "log": args.log,
        "late_ticks": summary.pacer.late_ticks,
        "max_lag_us": summary.pacer.max_lag_us,
        "received": summary.net.received,
        "dropped": summary.net.dropped,
        "decode_errors": summary.net.decode_errors,
        "sent": summary.net.sent,
        "handled": summary.sim.handled,
        "stale": summary.sim.stale,
        "rejected": summary.sim.rejected,
    });
    out.emit(&value, || {
        format!(
            "stopped after {} ticks\ndigest {}\ndatagrams: {} received, {} dropped, {} undecodable, {} sent\nlate ticks: {} (max lag {} µs)\n",
            summary.ticks,
            summary.digest,
            summary.net.received,
            summary.net.dropped,
            summary.net.decode_errors,
            summary.net.sent,
            summary.pacer.late_ticks,
            summary.pacer.max_lag_us
        )
    });
    Ok(())
}
