//! Library side of the `codedq` binary: config loading, presets and the
//! four subcommands. Every command yields a JSON document plus named CSV
//! artifacts; nothing is printed or written here.

pub mod commands;
pub mod config;
pub mod presets;
pub mod workload;

use std::fs;
use std::path::Path;

use serde_json::Value;

pub use config::{Command, ExperimentConfig};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    /// Infeasible arrival vector or an unstable run.
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<coded_queue::Error> for CliError {
    fn from(e: coded_queue::Error) -> Self {
        use coded_queue::Error as E;
        match e {
            E::InvalidSystem(_) | E::DimensionMismatch { .. } | E::InvalidInput(_) | E::Unsupported(_) => {
                CliError::Config(e.to_string())
            }
            E::CodedInfeasible(_) | E::NotStabilizing { .. } | E::Unstable { .. } => {
                CliError::Infeasible(e.to_string())
            }
            E::Internal(_) => CliError::Internal(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub document: Value,
    /// `(file name, contents)` pairs, in generation order.
    pub files: Vec<(String, String)>,
}

impl Report {
    pub fn new(document: Value, files: Vec<(String, String)>) -> Self {
        Report { document, files }
    }

    pub fn json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.document).expect("JSON values serialise");
        s.push('\n');
        s
    }

    /// Writes `<command>.json` and every artifact into `dir`.
    pub fn write_to(&self, command: Command, dir: &Path) -> Result<Vec<String>, CliError> {
        let io = |e: std::io::Error| CliError::Internal(format!("cannot write to {}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        let mut written = vec![format!("{}.json", command.name())];
        fs::write(dir.join(&written[0]), self.json()).map_err(io)?;
        for (name, body) in &self.files {
            fs::write(dir.join(name), body).map_err(io)?;
            written.push(name.clone());
        }
        Ok(written)
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub departures: Option<u64>,
    pub replications: Option<usize>,
}

pub enum ConfigSource<'a> {
    Path(&'a Path),
    Preset(&'a str),
    Text(&'a str),
}

pub fn load_config(command: Command, source: ConfigSource<'_>) -> Result<ExperimentConfig, CliError> {
    let text = match source {
        ConfigSource::Path(p) => fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        ConfigSource::Preset(name) => {
            let p = presets::find(name).ok_or_else(|| {
                CliError::Config(format!("unknown preset {name:?}; available: {}", presets::names().join(", ")))
            })?;
            if p.command != command {
                return Err(CliError::Config(format!(
                    "preset {name} belongs to the {} command",
                    p.command.name()
                )));
            }
            p.json.to_string()
        }
        ConfigSource::Text(t) => t.to_string(),
    };
    ExperimentConfig::parse(command, &text)
}

pub fn apply_overrides(config: &mut ExperimentConfig, o: &Overrides) {
    if let ExperimentConfig::Simulate(sim) = config {
        let run = sim.run_mut();
        if let Some(seed) = o.seed {
            run.seed = seed;
        }
        if let Some(d) = o.departures {
            run.target_departures = d;
        }
        if let Some(r) = o.replications {
            run.replications = r;
        }
    }
}

pub fn execute(config: &ExperimentConfig, o: &Overrides) -> Result<Report, CliError> {
    match config {
        ExperimentConfig::Capacity(c) => commands::capacity(c),
        ExperimentConfig::Regime(c) => commands::regime(c),
        ExperimentConfig::Route(c) => commands::route(c, o.seed.unwrap_or(DEFAULT_SEED)),
        ExperimentConfig::Simulate(c) => commands::simulate_cmd(c),
    }
}

/// Load, override and execute in one step.
pub fn run(command: Command, source: ConfigSource<'_>, o: &Overrides) -> Result<Report, CliError> {
    let mut config = load_config(command, source)?;
    apply_overrides(&mut config, o);
    execute(&config, o)
}
