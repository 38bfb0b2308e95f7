//! Exact discrete-event simulation of the fork-join system.
//!
//! Every arriving job samples a recovery pattern from the routing policy,
//! places one task on distinct uniformly chosen servers of each class the
//! pattern uses, and departs once all its tasks finish. Servers are FCFS
//! with i.i.d. unit-rate exponential service.
//!
//! Randomness comes from ChaCha8 (`rand_chacha` 0.9). One replication seeds
//! every generator with the same 64-bit seed and keeps purposes apart by
//! stream id: one stream per job type for inter-arrival times, one per job
//! type for routing decisions and one per server for service times.
//! Replication `r` of master seed `s` uses `splitmix64(s + r)`.

mod arrivals;
mod engine;
mod stats;

pub use arrivals::{ArrivalSchedule, SquareWave};
pub use stats::{trajectory_csv, SimStats, TrajectoryPoint};

use crate::error::{check_len, Error, Result};
use crate::model::SystemSpec;
use crate::routing::RoutingPolicy;
use engine::{Arrivals, EngineConfig, Stop};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Departures simulated per replication when no horizon is set.
    pub target_departures: u64,
    /// Simulated time per replication; overrides `target_departures`.
    pub horizon: Option<f64>,
    /// Fraction of departures (or of the horizon) discarded as warm-up.
    pub warmup_fraction: f64,
    /// Explicit warm-up time for horizon runs.
    pub warmup_time: Option<f64>,
    pub seed: u64,
    pub replications: usize,
    /// Abort with `UNSTABLE` once this many jobs are in the system.
    pub occupancy_cap: usize,
    /// Occupancy sampling step; `None` disables the trajectory.
    pub sample_interval: Option<f64>,
    /// Batches used for the single-run standard error.
    pub batches: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            target_departures: 1_000_000,
            horizon: None,
            warmup_fraction: 0.1,
            warmup_time: None,
            seed: 42,
            replications: 20,
            occupancy_cap: 1_000_000,
            sample_interval: None,
            batches: 20,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_departures == 0 {
            return Err(Error::InvalidInput("target_departures must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidInput("warmup_fraction must lie in [0, 1)".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidInput("replications must be at least 1".into()));
        }
        if let Some(h) = self.horizon {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidInput("horizon must be positive".into()));
            }
        }
        if let Some(w) = self.warmup_time {
            if !(w.is_finite() && w >= 0.0 && self.horizon.is_none_or(|h| w < h)) {
                return Err(Error::InvalidInput("warmup_time must lie in [0, horizon)".into()));
            }
        }
        if let Some(dt) = self.sample_interval {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::InvalidInput("sample_interval must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Routing in force over time: one policy, or one per distinct rate vector
/// of a piecewise-constant schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySchedule {
    Fixed(RoutingPolicy),
    PerPhase(Vec<(Vec<f64>, RoutingPolicy)>),
}

impl PolicySchedule {
    /// Computes `make(rates)` once for every distinct phase up to `horizon`.
    pub fn per_phase<F>(schedule: &ArrivalSchedule, horizon: f64, mut make: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Result<RoutingPolicy>,
    {
        let mut list = Vec::new();
        for (_, rates) in schedule.phases(horizon) {
            let p = make(&rates)?;
            list.push((rates, p));
        }
        Ok(PolicySchedule::PerPhase(list))
    }

    fn check(&self, system: &SystemSpec) -> Result<()> {
        match self {
            PolicySchedule::Fixed(p) => p.check(system),
            PolicySchedule::PerPhase(list) => {
                if list.is_empty() {
                    return Err(Error::InvalidInput("empty policy schedule".into()));
                }
                list.iter().try_for_each(|(_, p)| p.check(system))
            }
        }
    }

    fn covers(&self, schedule: &ArrivalSchedule, horizon: f64) -> Result<()> {
        if let PolicySchedule::PerPhase(list) = self {
            for (_, rates) in schedule.phases(horizon) {
                if !list.iter().any(|(r, _)| *r == rates) {
                    return Err(Error::InvalidInput(format!(
                        "no policy for the phase with rates {rates:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// 64-bit finaliser from SplitMix64.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn replication_seed(master: u64, replication: u64) -> u64 {
    splitmix64(master.wrapping_add(replication))
}

fn engine_config(cfg: &RunConfig, seed: u64) -> EngineConfig {
    let stop = match cfg.horizon {
        Some(h) => Stop::Horizon {
            horizon: h,
            warmup: cfg.warmup_time.unwrap_or(cfg.warmup_fraction * h),
        },
        None => Stop::Departures {
            target: cfg.target_departures,
            warmup: (cfg.warmup_fraction * cfg.target_departures as f64).floor() as u64,
        },
    };
    EngineConfig {
        stop,
        seed,
        occupancy_cap: cfg.occupancy_cap,
        sample_interval: cfg.sample_interval,
        batches: cfg.batches,
    }
}

fn run_one(
    system: &SystemSpec,
    schedule: &ArrivalSchedule,
    policies: &PolicySchedule,
    cfg: &RunConfig,
    replication: u64,
) -> Result<SimStats> {
    let ec = engine_config(cfg, replication_seed(cfg.seed, replication));
    engine::run(system, Arrivals::Schedule(schedule), policies, &ec)
}

fn check_inputs(system: &SystemSpec, schedule: &ArrivalSchedule, policies: &PolicySchedule, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    check_len(system.k(), schedule.k())?;
    schedule.validate()?;
    policies.check(system)
}

/// One replication (index 0) of `cfg`; `std_error` comes from batch means.
pub fn simulate(
    system: &SystemSpec,
    schedule: &ArrivalSchedule,
    policy: &RoutingPolicy,
    cfg: &RunConfig,
) -> Result<SimStats> {
    let policies = PolicySchedule::Fixed(policy.clone());
    check_inputs(system, schedule, &policies, cfg)?;
    run_one(system, schedule, &policies, cfg, 0)
}

/// `cfg.replications` independent runs in parallel, pooled. `std_error` is
/// the across-replication standard deviation over `sqrt(replications)`.
pub fn replicate(
    system: &SystemSpec,
    schedule: &ArrivalSchedule,
    policy: &RoutingPolicy,
    cfg: &RunConfig,
) -> Result<SimStats> {
    let policies = PolicySchedule::Fixed(policy.clone());
    replicate_with(system, schedule, &policies, cfg)
}

fn replicate_with(
    system: &SystemSpec,
    schedule: &ArrivalSchedule,
    policies: &PolicySchedule,
    cfg: &RunConfig,
) -> Result<SimStats> {
    check_inputs(system, schedule, policies, cfg)?;
    let runs = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| run_one(system, schedule, policies, cfg, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(stats::aggregate(runs))
}

/// Horizon run under a square-wave schedule with a trajectory. Defaults:
/// warm-up of one period, sampling every period / 200.
pub fn simulate_time_varying(
    system: &SystemSpec,
    schedule: &ArrivalSchedule,
    policies: &PolicySchedule,
    cfg: &RunConfig,
) -> Result<SimStats> {
    let Some(period) = schedule.period() else {
        return Err(Error::InvalidInput("time-varying runs need a square-wave schedule".into()));
    };
    let Some(horizon) = cfg.horizon else {
        return Err(Error::InvalidInput("time-varying runs need a horizon".into()));
    };
    let mut cfg = cfg.clone();
    cfg.warmup_time = Some(cfg.warmup_time.unwrap_or(period.min(horizon / 2.0)));
    cfg.sample_interval = Some(cfg.sample_interval.unwrap_or(period / 200.0));
    check_inputs(system, schedule, policies, &cfg)?;
    policies.covers(schedule, horizon)?;
    if cfg.replications == 1 {
        run_one(system, schedule, policies, &cfg, 0)
    } else {
        replicate_with(system, schedule, policies, &cfg)
    }
}

/// Feeds `count` jobs of `job_type` one at a time into an empty system, so
/// each response is the maximum of its tasks' service times.
pub fn simulate_isolated(
    system: &SystemSpec,
    policy: &RoutingPolicy,
    job_type: usize,
    count: u64,
    seed: u64,
) -> Result<SimStats> {
    if job_type >= system.k() {
        return Err(Error::InvalidInput(format!("job type {} out of range", job_type + 1)));
    }
    if count == 0 {
        return Err(Error::InvalidInput("count must be at least 1".into()));
    }
    let policies = PolicySchedule::Fixed(policy.clone());
    policies.check(system)?;
    let ec = EngineConfig {
        stop: Stop::Departures {
            target: count,
            warmup: 0,
        },
        seed: replication_seed(seed, 0),
        occupancy_cap: usize::MAX,
        sample_interval: None,
        batches: 20,
    };
    engine::run(system, Arrivals::Isolated(job_type), &policies, &ec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RecoveryPattern;
    use crate::routing::{uniform_uncoded_policy, PolicyEntry};

    fn mm1() -> (SystemSpec, RoutingPolicy) {
        let s = SystemSpec::build(2, 1, 1, &[1.0]).unwrap();
        let p = uniform_uncoded_policy(&s);
        (s, p)
    }

    fn quick(departures: u64) -> RunConfig {
        RunConfig {
            target_departures: departures,
            replications: 4,
            ..RunConfig::default()
        }
    }

    #[test]
    fn mm1_mean_response() {
        let (s, p) = mm1();
        assert_eq!(s.systematic(), &[1]);
        let st = simulate(&s, &ArrivalSchedule::Fixed(vec![0.5]), &p, &quick(200_000)).unwrap();
        assert!((st.mean_response - 2.0).abs() < 0.05, "{st:?}");
        assert!(st.std_error.unwrap() > 0.0);
    }

    #[test]
    fn isolated_fork_join_is_max_of_exponentials() {
        let s = SystemSpec::build(4, 2, 2, &[0.5, 0.5]).unwrap();
        let p = RoutingPolicy::new(vec![
            vec![PolicyEntry {
                pattern: RecoveryPattern {
                    job_type: 0,
                    num_coded: 2,
                    helper_types: vec![],
                },
                prob: 1.0,
            }],
            vec![PolicyEntry {
                pattern: RecoveryPattern::own(1),
                prob: 1.0,
            }],
        ])
        .unwrap();
        let st = simulate_isolated(&s, &p, 0, 50_000, 7).unwrap();
        assert!((st.mean_response - 1.5).abs() < 0.03, "{}", st.mean_response);
        assert_eq!(st.peak_jobs_in_system, 1);
    }

    #[test]
    fn runs_are_deterministic() {
        let s = SystemSpec::build(10, 2, 2, &[0.5, 0.5]).unwrap();
        let p = RoutingPolicy::from_probs(&s, &[vec![0.8, 0.1, 0.1], vec![0.9, 0.1, 0.0]]).unwrap();
        let sched = ArrivalSchedule::Fixed(vec![3.0, 2.5]);
        let a = replicate(&s, &sched, &p, &quick(20_000)).unwrap();
        let b = replicate(&s, &sched, &p, &quick(20_000)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let mut other = quick(20_000);
        other.seed = 43;
        assert_ne!(replicate(&s, &sched, &p, &other).unwrap().mean_response, a.mean_response);
    }

    #[test]
    fn single_replication_has_no_error_estimate() {
        let (s, p) = mm1();
        let mut cfg = quick(5_000);
        cfg.replications = 1;
        let st = replicate(&s, &ArrivalSchedule::Fixed(vec![0.5]), &p, &cfg).unwrap();
        assert_eq!(st.std_error, None);
    }

    #[test]
    fn job_conservation_and_littles_law() {
        let s = SystemSpec::build(10, 2, 2, &[0.5, 0.5]).unwrap();
        let p = RoutingPolicy::from_probs(&s, &[vec![0.7, 0.2, 0.1], vec![1.0, 0.0, 0.0]]).unwrap();
        let lam = [3.5, 2.5];
        let st = simulate(&s, &ArrivalSchedule::Fixed(lam.to_vec()), &p, &quick(200_000)).unwrap();
        assert_eq!(
            st.jobs_at_warmup as u64 + st.arrivals_counted,
            st.departures_counted + st.jobs_at_end as u64
        );
        let little = (lam[0] + lam[1]) * st.mean_response;
        assert!((st.mean_jobs_in_system - little).abs() < 0.03 * little, "{st:?}");
    }

    #[test]
    fn overload_is_reported_unstable() {
        let (s, p) = mm1();
        let mut cfg = quick(1_000_000);
        cfg.occupancy_cap = 500;
        let err = simulate(&s, &ArrivalSchedule::Fixed(vec![1.5]), &p, &cfg).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
        assert!(err.to_string().starts_with("UNSTABLE"));
    }

    #[test]
    fn constant_wave_matches_fixed_rate() {
        let s = SystemSpec::build(6, 2, 0, &[0.5, 0.5]).unwrap();
        let p = uniform_uncoded_policy(&s);
        let fixed = ArrivalSchedule::Fixed(vec![2.0, 1.5]);
        let wave = ArrivalSchedule::SquareWave(vec![SquareWave::constant(2.0, 100.0), SquareWave::constant(1.5, 100.0)]);
        let cfg = RunConfig {
            horizon: Some(40_000.0),
            replications: 4,
            ..RunConfig::default()
        };
        let a = replicate(&s, &fixed, &p, &cfg).unwrap();
        let b = simulate_time_varying(&s, &wave, &PolicySchedule::Fixed(p.clone()), &cfg).unwrap();
        let se = (a.std_error.unwrap().powi(2) + b.std_error.unwrap().powi(2)).sqrt();
        assert!((a.mean_response - b.mean_response).abs() < 4.0 * se + 0.01, "{} {}", a.mean_response, b.mean_response);
        let tr = b.trajectory.unwrap();
        assert!(tr.windows(2).all(|w| w[0].time < w[1].time));
        assert_eq!(tr[0].time, 0.0);
        assert!((tr[1].time - 0.5).abs() < 1e-12);
    }

    #[test]
    fn per_phase_policies_switch_with_the_rates() {
        let s = SystemSpec::build(10, 2, 2, &[0.5, 0.5]).unwrap();
        let wave = ArrivalSchedule::SquareWave(vec![
            SquareWave {
                low: 1.0,
                high: 5.0,
                period: 50.0,
                high_fraction: 0.5,
                phase_shift: 0.0,
                starts_high: true,
            },
            SquareWave::constant(2.0, 50.0),
        ]);
        let ps = PolicySchedule::per_phase(&wave, 1000.0, |r| {
            if r[0] > 4.0 {
                RoutingPolicy::from_probs(&s, &[vec![0.8, 0.2, 0.0], vec![1.0, 0.0, 0.0]])
            } else {
                Ok(uniform_uncoded_policy(&s))
            }
        })
        .unwrap();
        let PolicySchedule::PerPhase(list) = &ps else { unreachable!() };
        assert_eq!(list.len(), 2);
        let cfg = RunConfig {
            horizon: Some(1000.0),
            replications: 1,
            ..RunConfig::default()
        };
        let st = simulate_time_varying(&s, &wave, &ps, &cfg).unwrap();
        assert_eq!(st.warmup_time, 50.0);
        let missing = PolicySchedule::PerPhase(vec![list[0].clone()]);
        assert!(simulate_time_varying(&s, &wave, &missing, &cfg).is_err());
    }

    #[test]
    fn split_mix_reference_values() {
        // First outputs of the reference SplitMix64 generator seeded with 0.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(replication_seed(5, 2), splitmix64(7));
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig { warmup_fraction: 1.0, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { replications: 0, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { target_departures: 0, ..RunConfig::default() }.validate().is_err());
        let js = serde_json::to_string(&RunConfig::default()).unwrap();
        let back: RunConfig = serde_json::from_str(&js).unwrap();
        assert_eq!(back, RunConfig::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus":1}"#).is_err());
    }
}
