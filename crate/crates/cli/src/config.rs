//! JSON experiment documents. Every struct rejects unknown keys.

use coded_queue::regimes::{bottleneck_index, classify_regime, slack_profile};
use coded_queue::routing::{
    heavy_regime_policy, optimize_routing, uniform_uncoded_policy, OptimizedPolicy, OptimizerConfig,
};
use coded_queue::{RoutingPolicy, RunConfig, SquareWave, SystemSpec, Thresholds};
use serde::{Deserialize, Serialize};

use crate::workload::Workload;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub n: usize,
    pub k: usize,
    pub n_coded: usize,
    /// Defaults to the uniform split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
}

impl SystemBlock {
    pub fn alpha(&self) -> Vec<f64> {
        self.alpha
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.k.max(1) as f64; self.k])
    }

    pub fn build(&self) -> Result<SystemSpec, CliError> {
        Ok(SystemSpec::build(self.n, self.k, self.n_coded, &self.alpha())?)
    }

    /// Same `n` and `alpha` without coded servers.
    pub fn uncoded(&self) -> Result<SystemSpec, CliError> {
        Ok(SystemSpec::build(self.n, self.k, 0, &self.alpha())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadRef {
    pub workload: Workload,
}

/// An explicit rate vector or a named workload scaled to the system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Explicit(Vec<f64>),
    Named(WorkloadRef),
}

impl LambdaSpec {
    pub fn resolve(&self, system: &SystemBlock) -> Result<Vec<f64>, CliError> {
        match self {
            LambdaSpec::Explicit(l) => Ok(l.clone()),
            LambdaSpec::Named(w) => w.workload.lambda(system.n, &system.alpha()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySelector {
    UncodedUniform {},
    HeavyRegime {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        istar: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kstar: Option<usize>,
    },
    PseudoOptimal {
        #[serde(default)]
        optimizer: OptimizerConfig,
    },
    Explicit {
        policy: RoutingPolicy,
    },
}

/// A policy plus, when it came from the optimiser, how it was found.
pub struct ResolvedPolicy {
    pub policy: RoutingPolicy,
    pub optimized: Option<OptimizedPolicy>,
}

impl PolicySelector {
    pub fn is_rate_dependent(&self) -> bool {
        matches!(self, PolicySelector::HeavyRegime { .. } | PolicySelector::PseudoOptimal { .. })
    }

    /// The selector's optimiser restarts draw from `seed`.
    pub fn resolve(
        &self,
        system: &SystemSpec,
        lambda: &[f64],
        thresholds: &Thresholds,
        seed: u64,
    ) -> Result<ResolvedPolicy, CliError> {
        let (policy, optimized) = match self {
            PolicySelector::UncodedUniform {} => (uniform_uncoded_policy(system), None),
            PolicySelector::Explicit { policy } => {
                policy.check(system)?;
                (policy.clone(), None)
            }
            PolicySelector::HeavyRegime { istar, kstar } => {
                let istar = match istar {
                    Some(i) => *i,
                    None => bottleneck_index(&slack_profile(system, lambda)?.sorted_alpha(system))?,
                };
                let kstar = match kstar {
                    Some(j) => *j,
                    None => classify_regime(system, lambda, thresholds)?.kstar.unwrap_or(1),
                };
                (heavy_regime_policy(system, lambda, istar, kstar)?, None)
            }
            PolicySelector::PseudoOptimal { optimizer } => {
                let cfg = OptimizerConfig { seed, ..*optimizer };
                let o = optimize_routing(system, lambda, &cfg)?;
                (o.policy.clone(), Some(o))
            }
        };
        Ok(ResolvedPolicy { policy, optimized })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    /// Spacing of the lattice on every axis.
    pub step: f64,
    /// Per-axis upper end; defaults to the largest coordinate either region
    /// can reach.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
}

impl Default for GridBlock {
    fn default() -> Self {
        GridBlock { step: 1.0, upper: None }
    }
}

fn default_boundary_points() -> usize {
    101
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityConfig {
    pub system: SystemBlock,
    #[serde(default)]
    pub grid: GridBlock,
    /// Samples of the two-type boundary curve.
    #[serde(default = "default_boundary_points")]
    pub boundary_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    pub system: SystemBlock,
    pub lambda: LambdaSpec,
    #[serde(default)]
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteConfig {
    pub system: SystemBlock,
    pub lambda: LambdaSpec,
    pub policy: PolicySelector,
    #[serde(default)]
    pub thresholds: Thresholds,
}

/// Rule choosing the number of coded servers from `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodedRule {
    /// `floor(n / d)`.
    Fraction(usize),
    /// `ceil(sqrt(n))`.
    Sqrt,
    Fixed(usize),
}

impl CodedRule {
    pub fn apply(self, n: usize) -> usize {
        match self {
            CodedRule::Fraction(d) => n / d.max(1),
            CodedRule::Sqrt => (n as f64).sqrt().ceil() as usize,
            CodedRule::Fixed(c) => c,
        }
    }

    pub fn label(self) -> String {
        match self {
            CodedRule::Fraction(d) => format!("n/{d}"),
            CodedRule::Sqrt => "sqrt(n)".into(),
            CodedRule::Fixed(c) => format!("{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleRun {
    pub system: SystemBlock,
    pub lambda: LambdaSpec,
    pub policy: PolicySelector,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingRun {
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    pub n: Vec<usize>,
    pub n_coded: Vec<CodedRule>,
    pub workloads: Vec<Workload>,
    pub policy: PolicySelector,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedSystem {
    pub name: String,
    pub system: SystemBlock,
    pub policy: PolicySelector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeVaryingRun {
    pub systems: Vec<NamedSystem>,
    /// One wave per job type.
    pub waves: Vec<SquareWave>,
    pub run: RunConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum SimulateConfig {
    Single(SingleRun),
    Scaling(ScalingRun),
    TimeVarying(TimeVaryingRun),
}

impl SimulateConfig {
    pub fn run_mut(&mut self) -> &mut RunConfig {
        match self {
            SimulateConfig::Single(c) => &mut c.run,
            SimulateConfig::Scaling(c) => &mut c.run,
            SimulateConfig::TimeVarying(c) => &mut c.run,
        }
    }
}

/// Configuration of any subcommand, tagged by the command name.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ExperimentConfig {
    Capacity(CapacityConfig),
    Regime(RegimeConfig),
    Simulate(SimulateConfig),
    Route(RouteConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Capacity,
    Regime,
    Simulate,
    Route,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Capacity => "capacity",
            Command::Regime => "regime",
            Command::Simulate => "simulate",
            Command::Route => "route",
        }
    }
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
}

impl ExperimentConfig {
    pub fn parse(command: Command, text: &str) -> Result<Self, CliError> {
        Ok(match command {
            Command::Capacity => ExperimentConfig::Capacity(parse(text)?),
            Command::Regime => ExperimentConfig::Regime(parse(text)?),
            Command::Simulate => ExperimentConfig::Simulate(parse(text)?),
            Command::Route => ExperimentConfig::Route(parse(text)?),
        })
    }
}
