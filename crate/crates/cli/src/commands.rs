use coded_queue::capacity::{
    k2_boundary, k2_lambda1_max, region_sweep, sweep_csv, uncoded_contains, GridSpec,
};
use coded_queue::regimes::classify_regime;
use coded_queue::routing::{
    approx_mean_response, check_offload_budget, load_profile, policy_is_stabilizing,
    uniform_uncoded_policy,
};
use coded_queue::simulator::{
    replicate, simulate, simulate_time_varying, trajectory_csv, PolicySchedule,
};
use coded_queue::{ArrivalSchedule, Error, RunConfig, SimStats, SystemSpec, Verdict};
use serde_json::{json, Value};

use crate::config::{
    CapacityConfig, RegimeConfig, RouteConfig, ScalingRun, SimulateConfig, SingleRun, SystemBlock,
    TimeVaryingRun,
};
use crate::{CliError, Report};

fn system_json(s: &SystemSpec) -> Value {
    json!({
        "n": s.n(),
        "k": s.k(),
        "n_coded": s.n_coded(),
        "alpha": s.alpha(),
        "systematic": s.systematic(),
    })
}

/// Mean response of the uncoded system with the same `n` and `alpha`, exact
/// for Poisson splitting onto independent M/M/1 servers; `None` outside its
/// capacity region.
pub fn uncoded_closed_form(block: &SystemBlock, lambda: &[f64]) -> Result<Option<f64>, CliError> {
    let u = block.uncoded()?;
    if !uncoded_contains(&u, lambda)?.is_interior() {
        return Ok(None);
    }
    Ok(Some(approx_mean_response(&u, lambda, &uniform_uncoded_policy(&u))?.value))
}

pub fn capacity(cfg: &CapacityConfig) -> Result<Report, CliError> {
    let system = cfg.system.build()?;
    let k = system.k();
    if !(2..=3).contains(&k) {
        return Err(Error::Unsupported(format!("region sweeps support k in {{2, 3}}, got {k}")).into());
    }
    let step = cfg.grid.step;
    if !(step.is_finite() && step > 0.0) {
        return Err(CliError::Config("grid.step must be positive".into()));
    }
    let upper: Vec<f64> = match &cfg.grid.upper {
        Some(u) if u.len() == k => u.clone(),
        Some(u) => {
            return Err(CliError::Config(format!("grid.upper has {} entries for k = {k}", u.len())))
        }
        None => (0..k)
            .map(|i| (system.uncoded_share()[i]).max((system.systematic()[i] + system.n_coded()) as f64).ceil())
            .collect(),
    };
    let points: Vec<usize> = upper.iter().map(|u| (u / step + 1e-9).floor() as usize + 1).collect();
    let grid = GridSpec {
        lower: vec![0.0; k],
        upper: points.iter().map(|&p| step * (p - 1) as f64).collect(),
        points,
    };
    let rows = region_sweep(&system, &grid)?;
    let inside = |v: Verdict| v == Verdict::Interior;
    let count = |f: &dyn Fn(Verdict, Verdict) -> bool| rows.iter().filter(|r| f(r.uncoded, r.coded)).count();
    let summary = json!({
        "cells": rows.len(),
        "uncoded_interior": count(&|u, _| inside(u)),
        "coded_interior": count(&|_, c| inside(c)),
        "both_interior": count(&|u, c| inside(u) && inside(c)),
        "gained": count(&|u, c| !inside(u) && inside(c)),
        "lost": count(&|u, c| inside(u) && !inside(c)),
    });
    let mut files = vec![("region.csv".to_string(), sweep_csv(&rows))];
    let mut doc = json!({
        "command": "capacity",
        "config": cfg,
        "system": system_json(&system),
        "grid": grid,
        "summary": summary,
    });
    if k == 2 {
        let m = cfg.boundary_points.max(2);
        let max1 = k2_lambda1_max(&system)?;
        let share = system.uncoded_share();
        let mut csv = String::from("lambda_1,coded_lambda_2_max,uncoded_lambda_2_max\n");
        let mut curve = Vec::with_capacity(m);
        for i in 0..m {
            let l1 = max1 * i as f64 / (m - 1) as f64;
            let l2 = k2_boundary(&system, l1)?;
            let unc = (l1 <= share[0]).then_some(share[1]);
            csv.push_str(&format!("{l1},{l2},{}\n", unc.map_or(String::new(), |v| v.to_string())));
            curve.push([l1, l2]);
        }
        files.push(("boundary.csv".to_string(), csv));
        doc["two_type_boundary"] = json!({ "lambda1_max": max1, "coded": curve });
    }
    Ok(Report::new(doc, files))
}

pub fn regime(cfg: &RegimeConfig) -> Result<Report, CliError> {
    let system = cfg.system.build()?;
    let lambda = cfg.lambda.resolve(&cfg.system)?;
    let label = classify_regime(&system, &lambda, &cfg.thresholds)?;
    let doc = json!({
        "command": "regime",
        "config": cfg,
        "system": system_json(&system),
        "lambda": lambda,
        "regime": label,
    });
    Ok(Report::new(doc, vec![]))
}

pub fn route(cfg: &RouteConfig, seed: u64) -> Result<Report, CliError> {
    let system = cfg.system.build()?;
    let lambda = cfg.lambda.resolve(&cfg.system)?;
    let resolved = cfg.policy.resolve(&system, &lambda, &cfg.thresholds, seed)?;
    let loads = load_profile(&system, &lambda, &resolved.policy)?;
    let objective = match approx_mean_response(&system, &lambda, &resolved.policy) {
        Ok(o) => Some(o),
        Err(Error::NotStabilizing { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let doc = json!({
        "command": "route",
        "config": cfg,
        "system": system_json(&system),
        "lambda": lambda,
        "policy": resolved.policy,
        "objective": objective,
        "loads": loads,
        "stabilizing": policy_is_stabilizing(&loads),
        "offload_budget": check_offload_budget(&system, &lambda, &resolved.policy)?,
        "optimizer": resolved.optimized.as_ref().map(|o| json!({"start": o.start, "iterations": o.iterations})),
        "uncoded_closed_form": uncoded_closed_form(&cfg.system, &lambda)?,
    });
    Ok(Report::new(doc, vec![]))
}

fn run_fixed(system: &SystemSpec, lambda: &[f64], policy: &coded_queue::RoutingPolicy, run: &RunConfig) -> coded_queue::Result<SimStats> {
    let schedule = ArrivalSchedule::Fixed(lambda.to_vec());
    if run.replications == 1 {
        simulate(system, &schedule, policy, run)
    } else {
        replicate(system, &schedule, policy, run)
    }
}

fn take_trajectory(stats: &mut SimStats, name: &str, files: &mut Vec<(String, String)>) {
    if let Some(tr) = stats.trajectory.take() {
        files.push((name.to_string(), trajectory_csv(&tr)));
    }
}

fn single(cfg: &SingleRun) -> Result<Report, CliError> {
    let system = cfg.system.build()?;
    let lambda = cfg.lambda.resolve(&cfg.system)?;
    let label = classify_regime(&system, &lambda, &cfg.thresholds)?;
    let resolved = cfg.policy.resolve(&system, &lambda, &cfg.thresholds, cfg.run.seed)?;
    let approx = approx_mean_response(&system, &lambda, &resolved.policy).ok();
    let mut stats = run_fixed(&system, &lambda, &resolved.policy, &cfg.run)?;
    let mut files = Vec::new();
    take_trajectory(&mut stats, "trajectory.csv", &mut files);
    let doc = json!({
        "command": "simulate",
        "experiment": "single",
        "config": cfg,
        "system": system_json(&system),
        "lambda": lambda,
        "regime": label.label,
        "policy": resolved.policy,
        "approx_objective": approx,
        "uncoded_closed_form": uncoded_closed_form(&cfg.system, &lambda)?,
        "stats": stats,
    });
    Ok(Report::new(doc, files))
}

fn scaling(cfg: &ScalingRun) -> Result<Report, CliError> {
    let mut rows = Vec::new();
    let mut csv = String::from(
        "workload,n,n_coded_rule,n_coded,regime,uncoded_closed_form,coded_mean,coded_std_error,coded_approx,ratio,status\n",
    );
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for &workload in &cfg.workloads {
        for &rule in &cfg.n_coded {
            for &n in &cfg.n {
                let block = SystemBlock {
                    n,
                    k: cfg.k,
                    n_coded: rule.apply(n),
                    alpha: cfg.alpha.clone(),
                };
                let system = block.build()?;
                let lambda = workload.lambda(n, &block.alpha())?;
                let label = classify_regime(&system, &lambda, &cfg.thresholds)?;
                let uncoded = uncoded_closed_form(&block, &lambda)?;
                let mut status = "ok".to_string();
                let mut coded: Option<SimStats> = None;
                let mut approx = None;
                match cfg.policy.resolve(&system, &lambda, &cfg.thresholds, cfg.run.seed) {
                    Ok(resolved) => {
                        approx = approx_mean_response(&system, &lambda, &resolved.policy).ok().map(|o| o.value);
                        match run_fixed(&system, &lambda, &resolved.policy, &cfg.run) {
                            Ok(s) => coded = Some(s),
                            Err(e @ Error::Unstable { .. }) => status = e.to_string(),
                            Err(e) => return Err(e.into()),
                        }
                    }
                    Err(CliError::Infeasible(msg)) => status = msg,
                    Err(e) => return Err(e),
                }
                let mean = coded.as_ref().map(|s| s.mean_response);
                let se = coded.as_ref().and_then(|s| s.std_error);
                let ratio = mean.zip(uncoded).map(|(c, u)| c / u);
                csv.push_str(&format!(
                    "{},{n},{},{},{},{},{},{},{},{},{}\n",
                    workload.as_str(),
                    rule.label(),
                    system.n_coded(),
                    label.label.as_str(),
                    opt(uncoded),
                    opt(mean),
                    opt(se),
                    opt(approx),
                    opt(ratio),
                    status.replace(',', ";"),
                ));
                rows.push(json!({
                    "workload": workload,
                    "n": n,
                    "n_coded_rule": rule.label(),
                    "n_coded": system.n_coded(),
                    "lambda": lambda,
                    "regime": label.label,
                    "uncoded_closed_form": uncoded,
                    "coded_mean": mean,
                    "coded_std_error": se,
                    "coded_approx": approx,
                    "ratio": ratio,
                    "status": status,
                }));
            }
        }
    }
    let doc = json!({
        "command": "simulate",
        "experiment": "scaling",
        "config": cfg,
        "rows": rows,
    });
    Ok(Report::new(doc, vec![("scaling.csv".into(), csv)]))
}

fn time_varying(cfg: &TimeVaryingRun) -> Result<Report, CliError> {
    let schedule = ArrivalSchedule::SquareWave(cfg.waves.clone());
    let horizon = cfg
        .run
        .horizon
        .ok_or_else(|| CliError::Config("time-varying runs need run.horizon".into()))?;
    let mut files = Vec::new();
    let mut systems = Vec::new();
    for named in &cfg.systems {
        let system = named.system.build()?;
        let mut phases = Vec::new();
        let policies = if named.policy.is_rate_dependent() {
            let mut list = Vec::new();
            for (start, rates) in schedule.phases(horizon) {
                let p = named.policy.resolve(&system, &rates, &cfg.thresholds, cfg.run.seed)?.policy;
                phases.push(json!({"first_start": start, "rates": rates, "policy": p}));
                list.push((rates, p));
            }
            PolicySchedule::PerPhase(list)
        } else {
            let p = named.policy.resolve(&system, &schedule.rates_at(0.0), &cfg.thresholds, cfg.run.seed)?.policy;
            phases.push(json!({"first_start": 0.0, "rates": null, "policy": p}));
            PolicySchedule::Fixed(p)
        };
        let mut stats = simulate_time_varying(&system, &schedule, &policies, &cfg.run)?;
        take_trajectory(&mut stats, &format!("trajectory_{}.csv", named.name), &mut files);
        systems.push(json!({
            "name": named.name,
            "system": system_json(&system),
            "phases": phases,
            "stats": stats,
        }));
    }
    let doc = json!({
        "command": "simulate",
        "experiment": "time_varying",
        "config": cfg,
        "systems": systems,
    });
    Ok(Report::new(doc, files))
}

pub fn simulate_cmd(cfg: &SimulateConfig) -> Result<Report, CliError> {
    match cfg {
        SimulateConfig::Single(c) => single(c),
        SimulateConfig::Scaling(c) => scaling(c),
        SimulateConfig::TimeVarying(c) => time_varying(c),
    }
}
