//! `roadshare`: run sessions, check scenarios, replay logs and turn them
//! into metrics, aligned sensor epochs and charts.

mod analysis;
mod plot;
mod serve;

use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use roadshare_core::scenario::{load_scenario_file, validate, LoadError, Scenario, Severity};
use roadshare_core::server::{replay, LogError, ReplayError, ReplayLog};
use serde::Serialize;
use serde_json::json;

const UNITS: &str = "\
Units:
  distance, position     m
  speed                  m/s
  time, TTC, headway     s (sim clock unless noted)
  DRAC, acceleration     m/s²
  angles, steering       rad (gaze dispersion in degrees)
  rates                  Hz
  heart rate             bpm; HRV in ms
  EDA                    µS

Exit codes:
  0  success
  1  usage error
  2  scenario or input validation failure
  3  replay divergence
  4  I/O error";

#[derive(Parser, Debug)]
#[command(name = "roadshare", version, about = "Shared-road multi-agent simulation server and analysis tools", after_help = UNITS)]
struct Cli {
    /// Print a machine-readable JSON result on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the authoritative server for a scenario.
    #[command(after_help = UNITS)]
    Serve(serve::ServeArgs),
    /// Check a scenario file and report every problem found.
    #[command(after_help = UNITS)]
    Validate(ScenarioArg),
    /// Print the solved start placement of each synchronized agent.
    #[command(after_help = UNITS)]
    Place(ScenarioArg),
    /// Re-run a session log and verify it reproduces exactly.
    #[command(after_help = UNITS)]
    Replay(ReplayArgs),
    /// Compute safety and behaviour metrics from a session log.
    #[command(after_help = UNITS)]
    Metrics(analysis::MetricsArgs),
    /// Align sensor streams to the session clock and cut event epochs.
    #[command(after_help = UNITS)]
    Align(analysis::AlignArgs),
    /// Render columns of a CSV file as an SVG line chart.
    #[command(after_help = UNITS)]
    Plot(plot::PlotArgs),
}

#[derive(Args, Debug)]
struct ScenarioArg {
    /// Scenario JSON file.
    scenario: PathBuf,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Session log written by `serve --log`.
    log: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Usage = 1,
    Validation = 2,
    Divergence = 3,
    Io = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
    /// Extra structured detail for `--json` output.
    pub detail: Option<serde_json::Value>,
}

impl Failure {
    pub fn new(exit: Exit, message: impl Display) -> Self {
        Self {
            exit,
            message: message.to_string(),
            detail: None,
        }
    }

    pub fn io(message: impl Display) -> Self {
        Self::new(Exit::Io, message)
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.detail = Some(detail);
        self
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        match &e {
            LoadError::Io { .. } => Failure::io(&e),
            LoadError::Invalid(d) => Failure::new(Exit::Validation, &e).with_detail(json!({ "diagnostics": d })),
            LoadError::Parse { .. } => Failure::new(Exit::Validation, &e),
        }
    }
}

impl From<LogError> for Failure {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Io { .. } => Failure::io(e),
            _ => Failure::new(Exit::Validation, e),
        }
    }
}

impl From<ReplayError> for Failure {
    fn from(e: ReplayError) -> Self {
        match &e {
            ReplayError::Divergence { tick, .. } => Failure::new(Exit::Divergence, &e).with_detail(json!({ "tick": tick })),
            ReplayError::HashMismatch { .. } => Failure::new(Exit::Divergence, &e),
            ReplayError::Scenario(_) => Failure::new(Exit::Validation, &e),
            ReplayError::Server(_) => Failure::new(Exit::Validation, &e),
        }
    }
}

pub type CmdResult = Result<(), Failure>;

/// Where a command's result goes: human text or one JSON document.
#[derive(Debug, Clone, Copy)]
pub struct Out {
    pub json: bool,
}

impl Out {
    /// Print `value` as JSON, or the text produced by `text`.
    pub fn emit<T: Serialize>(&self, value: &T, text: impl FnOnce() -> String) {
        if self.json {
            match serde_json::to_string_pretty(value) {
                Ok(s) => println!("{s}"),
                Err(e) => eprintln!("error: {e}"),
            }
        } else {
            let t = text();
            if !t.is_empty() {
                println!("{}", t.trim_end());
            }
        }
    }
}

fn cmd_validate(args: ScenarioArg, out: Out) -> CmdResult {
    let spec = load_scenario_file(&args.scenario)?;
    let diags = validate(&spec);
    let errors = diags.iter().filter(|d| d.severity == Severity::Error).count();
    let scenario = if errors == 0 { Some(Scenario::build(spec)?) } else { None };
    let value = json!({
        "scenario": args.scenario,
        "valid": errors == 0,
        "errors": errors,
        "warnings": diags.len() - errors,
        "diagnostics": diags,
        "hash": scenario.as_ref().map(|s| format!("{:016x}", s.hash)),
        "agents": scenario.as_ref().map(|s| s.agents.len()),
    });
    out.emit(&value, || {
        let mut t = String::new();
        for d in &diags {
            t += &format!("{d}\n");
        }
        match &scenario {
            Some(s) => t += &format!("ok: {} agents, hash {:016x}\n", s.agents.len(), s.hash),
            None => t += &format!("invalid: {errors} error(s)\n"),
        }
        t
    });
    if errors > 0 {
        // The diagnostics are already on stdout.
        return Err(Failure::new(Exit::Validation, format!("{} has {errors} error(s)", args.scenario.display())).with_detail(json!({ "reported": true })));
    }
    Ok(())
}

fn cmd_place(args: ScenarioArg, out: Out) -> CmdResult {
    let scenario = Scenario::from_file(&args.scenario)?;
    let rows = scenario.placements();
    out.emit(&rows, || {
        let mut t = format!(
            "conflict point {}, tta {} s\n{:<12} {:<12} {:<16} {:>11} {:>12}\n",
            scenario.spec.conflict_point, scenario.spec.sync_tta_s, "agent", "kind", "path", "speed_m/s", "distance_m"
        );
        for p in &rows {
            t += &format!("{:<12} {:<12} {:<16} {:>11.3} {:>12.1}\n", p.agent, format!("{:?}", p.kind).to_lowercase(), p.path, p.speed, p.distance);
        }
        t
    });
    Ok(())
}

fn cmd_replay(args: ReplayArgs, out: Out) -> CmdResult {
    let log = ReplayLog::from_file(&args.log)?;
    let report = replay(&log, |_, _| {})?;
    let clean_end = log.end.as_ref().map(|(_, d)| d == &report.digest);
    let value = json!({
        "log": args.log,
        "ticks": report.ticks,
        "inputs": report.inputs,
        "events": report.events,
        "snapshots_checked": report.snapshots_checked,
        "digest": report.digest,
        "trailer": log.end.is_some(),
        "identical": true,
    });
    out.emit(&value, || {
        let mut t = format!(
            "replayed {} ticks: {} inputs, {} events, {} snapshots checked\ndigest {}\n",
            report.ticks, report.inputs, report.events, report.snapshots_checked, report.digest
        );
        if clean_end.is_none() {
            t += "note: log has no trailer; the session did not shut down cleanly\n";
        }
        t += "identical\n";
        t
    });
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let out = Out { json: cli.json };
    match cli.command {
        Command::Serve(a) => serve::run(a, out),
        Command::Validate(a) => cmd_validate(a, out),
        Command::Place(a) => cmd_place(a, out),
        Command::Replay(a) => cmd_replay(a, out),
        Command::Metrics(a) => analysis::metrics(a, out),
        Command::Align(a) => analysis::align(a, out),
        Command::Plot(a) => plot::run(a, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(Exit::Usage as u8) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let json = cli.json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let reported = f.detail.as_ref().is_some_and(|d| d.get("reported").is_some());
            if json && !reported {
                let v = json!({ "error": f.message, "exit_code": f.exit as u8, "detail": f.detail });
                println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            }
            eprintln!("error: {}", f.message);
            ExitCode::from(f.exit as u8)
        }
    }
}
