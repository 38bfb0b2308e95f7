//! Projected-gradient minimisation of the approximate mean response time.

use super::objective::{pattern_response, weighted_mean};
use super::{approx_mean_response, heavy_policy_candidates, uniform_uncoded_policy, ApproxObjective, RoutingPolicy};
use crate::capacity::{coded_contains_waterfill, max_margin_flows};
use crate::error::{check_len, Error, Result};
use crate::model::{RecoveryPattern, SystemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Stop once an accepted step improves the objective by less than this
    /// fraction.
    pub rel_tol: f64,
    pub fd_step: f64,
    /// Points with any class load at or above `1 - barrier` are rejected.
    pub barrier: f64,
    /// Extra uniformly random starting points.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 5000,
            rel_tol: 1e-8,
            fd_step: 1e-6,
            barrier: 1e-6,
            restarts: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedPolicy {
    pub policy: RoutingPolicy,
    pub objective: ApproxObjective,
    /// Name of the warm start the winning run began from.
    pub start: String,
    pub iterations: usize,
}

/// Flattened problem over the canonical patterns of every type.
struct Problem<'a> {
    system: &'a SystemSpec,
    lambda: &'a [f64],
    patterns: Vec<Vec<RecoveryPattern>>,
    offsets: Vec<usize>,
    /// `tasks[v][c]`: tasks that flattened variable `v` puts on class `c`.
    tasks: Vec<Vec<f64>>,
    barrier: f64,
}

impl<'a> Problem<'a> {
    fn new(system: &'a SystemSpec, lambda: &'a [f64], barrier: f64) -> Self {
        let patterns = system.all_patterns();
        let mut offsets = Vec::with_capacity(patterns.len());
        let mut tasks = Vec::new();
        let coded = system.coded_class();
        for pats in &patterns {
            offsets.push(tasks.len());
            for p in pats {
                tasks.push(
                    (0..system.num_classes())
                        .map(|c| p.tasks_on(c, coded) as f64)
                        .collect(),
                );
            }
        }
        Problem {
            system,
            lambda,
            patterns,
            offsets,
            tasks,
            barrier,
        }
    }

    fn dim(&self) -> usize {
        self.tasks.len()
    }

    fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i] + self.patterns[i].len()
    }

    /// Objective, or infinity outside the barrier.
    fn value(&self, x: &[f64]) -> f64 {
        let sys = self.system;
        let mut nu = vec![0.0; sys.num_classes()];
        for i in 0..sys.k() {
            for v in self.range(i) {
                let w = self.lambda[i] * x[v];
                for (c, t) in self.tasks[v].iter().enumerate() {
                    nu[c] += w * t;
                }
            }
        }
        for (c, v) in nu.iter_mut().enumerate() {
            let size = sys.class_size(c);
            if size == 0 {
                if *v > 0.0 {
                    return f64::INFINITY;
                }
            } else {
                *v /= size as f64;
            }
            if *v >= 1.0 - self.barrier {
                return f64::INFINITY;
            }
        }
        let coded = sys.coded_class();
        let per_type: Vec<f64> = (0..sys.k())
            .map(|i| {
                self.range(i)
                    .zip(&self.patterns[i])
                    .filter(|(v, _)| x[*v] != 0.0)
                    .map(|(v, p)| x[v] * pattern_response(p, &nu, coded))
                    .sum()
            })
            .collect();
        weighted_mean(self.lambda, &per_type)
    }

    fn gradient(&self, x: &[f64], h: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut y = x.to_vec();
        for v in 0..x.len() {
            y[v] = x[v] + h;
            let up = self.value(&y);
            y[v] = x[v] - h;
            let down = self.value(&y);
            y[v] = x[v];
            g[v] = match (up.is_finite(), down.is_finite()) {
                (true, true) => (up - down) / (2.0 * h),
                (true, false) => (up - self.value(x)) / h,
                (false, true) => (self.value(x) - down) / h,
                (false, false) => 0.0,
            };
        }
        g
    }

    fn project(&self, x: &mut [f64]) {
        for i in 0..self.system.k() {
            project_simplex(&mut x[self.range(i)]);
        }
    }

    fn flatten(&self, policy: &RoutingPolicy) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for i in 0..self.system.k() {
            for e in policy.entries(i) {
                if let Some(j) = self.patterns[i].iter().position(|p| *p == e.pattern) {
                    x[self.offsets[i] + j] += e.prob;
                }
            }
        }
        x
    }

    fn to_policy(&self, x: &[f64]) -> Result<RoutingPolicy> {
        let probs: Vec<Vec<f64>> = (0..self.system.k())
            .map(|i| x[self.range(i)].to_vec())
            .collect();
        RoutingPolicy::from_probs(self.system, &probs)
    }
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(x: &mut [f64]) {
    let mut u = x.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (j, v) in u.iter().enumerate() {
        acc += v;
        let t = (acc - 1.0) / (j + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    for v in x.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
}

fn descend(prob: &Problem, mut x: Vec<f64>, cfg: &OptimizerConfig) -> (Vec<f64>, f64, usize) {
    let mut f = prob.value(&x);
    let mut step = 1.0;
    let mut iters = 0;
    while iters < cfg.max_iters && f.is_finite() {
        iters += 1;
        let g = prob.gradient(&x, cfg.fd_step);
        let mut accepted = None;
        for _ in 0..60 {
            let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            prob.project(&mut y);
            let decrease: f64 = g.iter().zip(x.iter().zip(&y)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if decrease <= 0.0 {
                // Projected step is stationary at this step length.
                step *= 0.5;
                continue;
            }
            let fy = prob.value(&y);
            if fy.is_finite() && fy <= f - 1e-4 * decrease {
                accepted = Some((y, fy));
                break;
            }
            step *= 0.5;
        }
        let Some((y, fy)) = accepted else { break };
        let improvement = f - fy;
        x = y;
        f = fy;
        step = (step * 2.0).min(1e6);
        if improvement < cfg.rel_tol * f.abs() {
            break;
        }
    }
    (x, f, iters)
}

/// Policy that splits each type's flow as in the LP's max-margin solution.
fn max_margin_start(system: &SystemSpec, lambda: &[f64]) -> Option<RoutingPolicy> {
    let (margin, flows) = max_margin_flows(system, lambda).ok()?;
    if margin <= 0.0 {
        return None;
    }
    let probs: Vec<Vec<f64>> = flows
        .iter()
        .zip(lambda)
        .map(|(f, &l)| {
            let total: f64 = f.iter().map(|v| v.max(0.0)).sum();
            if l > 0.0 && total > 0.0 {
                f.iter().map(|v| v.max(0.0) / total).collect()
            } else {
                let mut own = vec![0.0; f.len()];
                own[0] = 1.0;
                own
            }
        })
        .collect();
    RoutingPolicy::from_probs(system, &probs).ok()
}

/// Minimises the approximate mean response from every warm start and keeps
/// the best result. Deterministic in `config`.
pub fn optimize_routing(
    system: &SystemSpec,
    lambda: &[f64],
    config: &OptimizerConfig,
) -> Result<OptimizedPolicy> {
    check_len(system.k(), lambda.len())?;
    let m = coded_contains_waterfill(system, lambda)?;
    if !m.is_interior() {
        return Err(Error::CodedInfeasible(format!(
            "arrival vector {lambda:?} is not inside the coded capacity region (margin {:.3e})",
            m.margin
        )));
    }
    let prob = Problem::new(system, lambda, config.barrier);

    let mut starts: Vec<(String, Vec<f64>)> = vec![("uniform_uncoded".into(), prob.flatten(&uniform_uncoded_policy(system)))];
    for (j, p) in heavy_policy_candidates(system, lambda).iter().enumerate() {
        starts.push((format!("heavy_regime_k{}", j + 1), prob.flatten(p)));
    }
    let bary: Vec<f64> = (0..system.k())
        .flat_map(|i| {
            let len = prob.patterns[i].len();
            std::iter::repeat_n(1.0 / len as f64, len)
        })
        .collect();
    starts.push(("barycenter".into(), bary));
    if let Some(p) = max_margin_start(system, lambda) {
        starts.push(("max_margin".into(), prob.flatten(&p)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for r in 0..config.restarts {
        let mut x: Vec<f64> = (0..prob.dim()).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        for i in 0..system.k() {
            let range = prob.range(i);
            let sum: f64 = x[range.clone()].iter().sum();
            for v in &mut x[range] {
                *v /= sum;
            }
        }
        starts.push((format!("random_{r}"), x));
    }

    let mut best: Option<(String, Vec<f64>, f64, usize)> = None;
    for (name, x0) in starts {
        if !prob.value(&x0).is_finite() {
            continue;
        }
        let (x, f, iters) = descend(&prob, x0, config);
        if best.as_ref().is_none_or(|b| f < b.2) {
            best = Some((name, x, f, iters));
        }
    }
    let Some((start, x, _, iterations)) = best else {
        return Err(Error::Internal(
            "no warm start keeps every class below the load barrier".into(),
        ));
    };
    let policy = prob.to_policy(&x)?;
    let objective = approx_mean_response(system, lambda, &policy)?;
    Ok(OptimizedPolicy {
        policy,
        objective,
        start,
        iterations,
    })
}

pub fn pseudo_optimal_policy(
    system: &SystemSpec,
    lambda: &[f64],
    config: &OptimizerConfig,
) -> Result<RoutingPolicy> {
    optimize_routing(system, lambda, config).map(|o| o.policy)
}
