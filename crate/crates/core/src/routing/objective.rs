use super::{load_profile, policy_is_stabilizing, RoutingPolicy};
use crate::error::{Error, Result};
use crate::model::{RecoveryPattern, SystemSpec};
use serde::{Deserialize, Serialize};

const MAX_TERMS: usize = 20;

/// `E[max_i X_i]` for independent `X_i ~ Exp(rate_i)` by inclusion-exclusion.
pub fn expected_max_exponentials(rates: &[f64]) -> Result<f64> {
    if rates.is_empty() || rates.len() > MAX_TERMS {
        return Err(Error::InvalidInput(format!(
            "expected between 1 and {MAX_TERMS} rates, got {}",
            rates.len()
        )));
    }
    if rates.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(Error::InvalidInput("rates must be finite and positive".into()));
    }
    Ok(max_exp_unchecked(rates))
}

pub(crate) fn max_exp_unchecked(rates: &[f64]) -> f64 {
    match rates {
        [a] => 1.0 / a,
        [a, b] => 1.0 / a + 1.0 / b - 1.0 / (a + b),
        _ => {
            let m = rates.len();
            let mut total = 0.0;
            for mask in 1u32..(1 << m) {
                let mut sum = 0.0;
                for (i, r) in rates.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        sum += r;
                    }
                }
                let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
                total += sign / sum;
            }
            total
        }
    }
}

/// Independence-approximated response of a pattern given per-class loads.
pub(crate) fn pattern_response(pattern: &RecoveryPattern, nu: &[f64], coded_class: usize) -> f64 {
    let mut rates: Vec<f64> = Vec::with_capacity(pattern.task_count());
    for (c, &v) in nu.iter().enumerate() {
        for _ in 0..pattern.tasks_on(c, coded_class) {
            rates.push(1.0 - v);
        }
    }
    max_exp_unchecked(&rates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxObjective {
    /// Arrival-weighted mean response under the independence approximation.
    pub value: f64,
    pub per_type: Vec<f64>,
}

/// Treats every server class as an M/M/1 queue at its induced load and a
/// job as the maximum of its tasks' independent sojourn times.
pub fn approx_mean_response(
    system: &SystemSpec,
    lambda: &[f64],
    policy: &RoutingPolicy,
) -> Result<ApproxObjective> {
    let prof = load_profile(system, lambda, policy)?;
    if !policy_is_stabilizing(&prof) {
        return Err(Error::NotStabilizing {
            max_load: prof.max_load(),
        });
    }
    let coded = system.coded_class();
    let per_type: Vec<f64> = (0..system.k())
        .map(|i| {
            policy
                .entries(i)
                .iter()
                .filter(|e| e.prob > 0.0)
                .map(|e| e.prob * pattern_response(&e.pattern, &prof.nu, coded))
                .sum()
        })
        .collect();
    Ok(ApproxObjective {
        value: weighted_mean(lambda, &per_type),
        per_type,
    })
}

/// Mean of `values` weighted by arrival rate; uniform when all rates vanish.
pub(crate) fn weighted_mean(lambda: &[f64], values: &[f64]) -> f64 {
    let total: f64 = lambda.iter().sum();
    if total > 0.0 {
        lambda.iter().zip(values).map(|(l, v)| l / total * v).sum()
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
