use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use codedq_cli::{presets, run, Command, ConfigSource, Overrides};

/// Capacity, regime, routing and simulation experiments for multi-access
/// server systems with erasure-coded servers.
///
/// Every command prints a JSON document on stdout. With --out the document
/// and any CSV artifacts are also written to that directory.
/// Exit codes: 0 ok, 1 internal error, 2 config error, 3 infeasible or unstable.
#[derive(Parser)]
#[command(name = "codedq", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Grid membership of the coded and uncoded capacity regions (k = 2, 3),
    /// and the two-type boundary curve.
    Capacity(Common),
    /// Traffic-regime label of one arrival vector.
    Regime(Common),
    /// Discrete-event simulation: single point, scaling sweep or
    /// time-varying traffic.
    Simulate(Common),
    /// Build a routing policy and report its loads and approximate response.
    Route(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long, value_name = "PATH", conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in config; see the list below.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Master seed of every random stream [default: 42, or run.seed].
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Directory for the JSON document and CSV artifacts.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Departures per replication.
    #[arg(long, value_name = "N")]
    departures: Option<u64>,
    /// Independent replications.
    #[arg(long, value_name = "N")]
    replications: Option<usize>,
}

fn main() -> ExitCode {
    let listing = presets::listing();
    let mut cmd = Cli::command().after_help(listing.clone());
    for name in ["capacity", "regime", "simulate", "route"] {
        cmd = cmd.mut_subcommand(name, |s| s.after_help(listing.clone()));
    }
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let (command, common) = match cli.command {
        Cmd::Capacity(c) => (Command::Capacity, c),
        Cmd::Regime(c) => (Command::Regime, c),
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Route(c) => (Command::Route, c),
    };
    let source = match (&common.config, &common.preset) {
        (Some(p), _) => ConfigSource::Path(p),
        (None, Some(name)) => ConfigSource::Preset(name),
        (None, None) => unreachable!("clap requires one of --config and --preset"),
    };
    let overrides = Overrides {
        seed: common.seed,
        departures: common.departures,
        replications: common.replications,
    };
    let result = run(command, source, &overrides).and_then(|report| {
        if let Some(dir) = &common.out {
            for f in report.write_to(command, dir)? {
                eprintln!("wrote {}", dir.join(f).display());
            }
        }
        Ok(report)
    });
    match result {
        Ok(report) => {
            print!("{}", report.json());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
