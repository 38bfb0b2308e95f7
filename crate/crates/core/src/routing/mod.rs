//! Probabilistic routing over recovery patterns.
//!
//! A policy assigns each job type a probability vector over its recovery
//! patterns. Everything downstream (loads, stability, the approximate
//! response-time objective) is a function of those vectors and the arrival
//! rates.

mod objective;
mod optimizer;

pub use objective::{approx_mean_response, expected_max_exponentials, ApproxObjective};
pub use optimizer::{optimize_routing, pseudo_optimal_policy, OptimizedPolicy, OptimizerConfig};

use crate::error::{check_len, Error, Result};
use crate::model::{RecoveryPattern, SystemSpec};
use crate::regimes::{bottleneck_index, slack_profile};
use crate::EPS;
use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub pattern: RecoveryPattern,
    pub prob: f64,
}

/// Per-type probability vectors over recovery patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingPolicy {
    types: Vec<Vec<PolicyEntry>>,
}

impl RoutingPolicy {
    /// Builds a policy from per-type entries, normalising each vector.
    pub fn new(types: Vec<Vec<PolicyEntry>>) -> Result<Self> {
        let mut types = types;
        for (i, entries) in types.iter_mut().enumerate() {
            if entries.is_empty() {
                return Err(Error::InvalidInput(format!("type {} has no patterns", i + 1)));
            }
            if entries.iter().any(|e| !e.prob.is_finite() || e.prob < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "type {} has a negative or non-finite probability",
                    i + 1
                )));
            }
            if let Some(e) = entries.iter().find(|e| e.pattern.job_type != i) {
                return Err(Error::InvalidInput(format!(
                    "pattern for type {} listed under type {}",
                    e.pattern.job_type + 1,
                    i + 1
                )));
            }
            let sum: f64 = entries.iter().map(|e| e.prob).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "probabilities of type {} sum to {sum}",
                    i + 1
                )));
            }
            // Renormalising an already-normalised vector would move the last
            // bits and break JSON round trips.
            if (sum - 1.0).abs() > 1e-12 {
                for e in entries.iter_mut() {
                    e.prob /= sum;
                }
            }
        }
        Ok(RoutingPolicy { types })
    }

    /// Policy over the system's canonical patterns with `probs[i][p]` for
    /// the `p`-th pattern of type `i`.
    pub fn from_probs(system: &SystemSpec, probs: &[Vec<f64>]) -> Result<Self> {
        let patterns = system.all_patterns();
        check_len(patterns.len(), probs.len())?;
        let types = patterns
            .into_iter()
            .zip(probs)
            .map(|(pats, pr)| {
                check_len(pats.len(), pr.len())?;
                Ok(pats
                    .into_iter()
                    .zip(pr)
                    .map(|(pattern, &prob)| PolicyEntry { pattern, prob })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(types)
    }

    pub fn k(&self) -> usize {
        self.types.len()
    }

    pub fn entries(&self, job_type: usize) -> &[PolicyEntry] {
        &self.types[job_type]
    }

    /// Probability of the own-systematic pattern.
    pub fn own_prob(&self, job_type: usize) -> f64 {
        self.types[job_type]
            .iter()
            .filter(|e| e.pattern.is_own())
            .map(|e| e.prob)
            .sum()
    }

    /// Probability mass on patterns using exactly `j` coded tasks, for
    /// `j = 0..=k`.
    pub fn coded_mass(&self, job_type: usize) -> Vec<f64> {
        let mut q = vec![0.0; self.k() + 1];
        for e in &self.types[job_type] {
            q[e.pattern.num_coded] += e.prob;
        }
        q
    }

    /// Checks every pattern with positive probability against the topology.
    pub fn check(&self, system: &SystemSpec) -> Result<()> {
        check_len(system.k(), self.k())?;
        for (i, entries) in self.types.iter().enumerate() {
            let feasible = system.recovery_patterns(i)?;
            for e in entries.iter().filter(|e| e.prob > 0.0) {
                if !feasible.contains(&e.pattern) {
                    return Err(Error::InvalidInput(format!(
                        "pattern {:?} is not available in this system",
                        e.pattern
                    )));
                }
            }
        }
        Ok(())
    }
}

impl Serialize for RoutingPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.types.len()))?;
        for (i, entries) in self.types.iter().enumerate() {
            map.serialize_entry(&format!("type_{}", i + 1), entries)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for RoutingPolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct PolicyVisitor;

        impl<'de> Visitor<'de> for PolicyVisitor {
            type Value = RoutingPolicy;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from type_1..type_k to pattern probability lists")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> std::result::Result<Self::Value, A::Error> {
                let mut found: Vec<(usize, Vec<PolicyEntry>)> = Vec::new();
                while let Some(key) = m.next_key::<String>()? {
                    let idx = key
                        .strip_prefix("type_")
                        .and_then(|v| v.parse::<usize>().ok())
                        .filter(|&v| v >= 1)
                        .ok_or_else(|| de::Error::custom(format!("unexpected key {key:?}")))?;
                    if found.iter().any(|(i, _)| *i == idx) {
                        return Err(de::Error::custom(format!("duplicate key {key:?}")));
                    }
                    found.push((idx, m.next_value()?));
                }
                found.sort_by_key(|(i, _)| *i);
                if found.iter().enumerate().any(|(pos, (i, _))| *i != pos + 1) {
                    return Err(de::Error::custom("job types must be type_1..type_k without gaps"));
                }
                RoutingPolicy::new(found.into_iter().map(|(_, v)| v).collect())
                    .map_err(de::Error::custom)
            }
        }

        d.deserialize_map(PolicyVisitor)
    }
}

/// Every job goes to one of its own systematic servers.
pub fn uniform_uncoded_policy(system: &SystemSpec) -> RoutingPolicy {
    RoutingPolicy {
        types: (0..system.k())
            .map(|i| {
                vec![PolicyEntry {
                    pattern: RecoveryPattern::own(i),
                    prob: 1.0,
                }]
            })
            .collect(),
    }
}

/// Heavy-traffic construction: the `kstar` types with the smallest slack
/// shed a `v n_coded / n` fraction, `v = 1 / (kstar * sum_{j<=kstar} alpha_j)`,
/// onto the pattern with `istar` coded tasks and every type ranked above
/// `istar` as helper. All other types stay on their own servers.
pub fn heavy_regime_policy(
    system: &SystemSpec,
    lambda: &[f64],
    istar: usize,
    kstar: usize,
) -> Result<RoutingPolicy> {
    let k = system.k();
    let prof = slack_profile(system, lambda)?;
    if istar == 0 || istar >= k {
        return Err(Error::InvalidInput(format!(
            "i* = {istar} leaves no beneficiaries or no helpers for k = {k}"
        )));
    }
    if kstar == 0 || kstar > istar {
        return Err(Error::InvalidInput(format!(
            "k* = {kstar} must lie in 1..={istar}"
        )));
    }
    if system.n_coded() < istar {
        return Err(Error::InvalidInput(format!(
            "patterns with {istar} coded tasks need at least {istar} coded servers, have {}",
            system.n_coded()
        )));
    }
    let alpha_sum: f64 = prof.sort_order[..kstar].iter().map(|&i| system.alpha()[i]).sum();
    let v = 1.0 / (kstar as f64 * alpha_sum);
    let shed = v * system.n_coded() as f64 / system.n() as f64;
    if shed > 1.0 + EPS {
        return Err(Error::InvalidInput(format!(
            "offload fraction v n_coded / n = {shed} exceeds 1"
        )));
    }
    let shed = shed.min(1.0);
    let mut helpers: Vec<usize> = prof.sort_order[istar..].to_vec();
    helpers.sort_unstable();
    let mut types: Vec<Vec<PolicyEntry>> = (0..k)
        .map(|i| {
            vec![PolicyEntry {
                pattern: RecoveryPattern::own(i),
                prob: 1.0,
            }]
        })
        .collect();
    for &i in &prof.sort_order[..kstar] {
        types[i] = vec![
            PolicyEntry {
                pattern: RecoveryPattern::own(i),
                prob: 1.0 - shed,
            },
            PolicyEntry {
                pattern: RecoveryPattern {
                    job_type: i,
                    num_coded: istar,
                    helper_types: helpers.clone(),
                },
                prob: shed,
            },
        ];
    }
    let policy = RoutingPolicy { types };
    policy.check(system)?;
    Ok(policy)
}

/// Heavy policies for every admissible `k* = 1..=i*` at this arrival vector.
pub fn heavy_policy_candidates(system: &SystemSpec, lambda: &[f64]) -> Vec<RoutingPolicy> {
    let Ok(prof) = slack_profile(system, lambda) else {
        return Vec::new();
    };
    let Ok(istar) = bottleneck_index(&prof.sorted_alpha(system)) else {
        return Vec::new();
    };
    (1..=istar)
        .filter_map(|kstar| heavy_regime_policy(system, lambda, istar, kstar).ok())
        .collect()
}

/// Per-server task arrival rate of every class; index `k` is the coded class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub nu: Vec<f64>,
    /// Total task rate offered to each class.
    pub class_load: Vec<f64>,
}

impl LoadProfile {
    pub fn max_load(&self) -> f64 {
        self.nu.iter().copied().fold(0.0, f64::max)
    }

    pub fn coded(&self) -> f64 {
        *self.nu.last().expect("at least one class")
    }
}

pub fn load_profile(system: &SystemSpec, lambda: &[f64], policy: &RoutingPolicy) -> Result<LoadProfile> {
    check_len(system.k(), lambda.len())?;
    policy.check(system)?;
    let coded = system.coded_class();
    let mut class_load = vec![0.0; system.num_classes()];
    for (i, &l) in lambda.iter().enumerate() {
        for e in policy.entries(i) {
            for (c, load) in class_load.iter_mut().enumerate() {
                *load += l * e.prob * e.pattern.tasks_on(c, coded) as f64;
            }
        }
    }
    let nu = class_load
        .iter()
        .enumerate()
        .map(|(c, &load)| {
            let size = system.class_size(c);
            if size > 0 {
                load / size as f64
            } else if load > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect();
    Ok(LoadProfile { nu, class_load })
}

/// Every class strictly below unit load.
pub fn policy_is_stabilizing(profile: &LoadProfile) -> bool {
    profile.nu.iter().all(|&v| v < 1.0 - EPS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadBudget {
    /// `(1 - q_i0) n / n_coded` per type.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// Rate of jobs sent to coded patterns, `sum_i (1 - q_i0) lambda_i`.
    pub offloaded_rate: f64,
    /// Each offloaded job puts at least one task on a coded server, so
    /// stability needs `offloaded_rate < n_coded`.
    pub necessary_condition_holds: bool,
}

/// Offload ratios of a policy against the `O(n_coded / n)` budget.
pub fn check_offload_budget(system: &SystemSpec, lambda: &[f64], policy: &RoutingPolicy) -> Result<OffloadBudget> {
    check_len(system.k(), lambda.len())?;
    check_len(system.k(), policy.k())?;
    let n = system.n() as f64;
    let nc = system.n_coded() as f64;
    let off: Vec<f64> = (0..system.k()).map(|i| (1.0 - policy.own_prob(i)).max(0.0)).collect();
    let ratios: Vec<f64> = off
        .iter()
        .map(|&o| {
            if o <= 0.0 {
                0.0
            } else if nc > 0.0 {
                o * n / nc
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let offloaded_rate: f64 = off.iter().zip(lambda).map(|(o, l)| o * l).sum();
    Ok(OffloadBudget {
        ratios,
        max_ratio,
        offloaded_rate,
        necessary_condition_holds: offloaded_rate < nc - EPS || offloaded_rate == 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sys(n: usize, k: usize, c: usize, alpha: &[f64]) -> SystemSpec {
        SystemSpec::build(n, k, c, alpha).unwrap()
    }

    #[test]
    fn uniform_uncoded_loads() {
        let s = sys(64, 2, 4, &[0.5, 0.5]);
        let p = uniform_uncoded_policy(&s);
        assert_eq!(p.own_prob(0), 1.0);
        let lp = load_profile(&s, &[22.0, 20.0], &p).unwrap();
        assert!((lp.nu[0] - 22.0 / 30.0).abs() < 1e-15);
        assert!((lp.nu[1] - 20.0 / 30.0).abs() < 1e-15);
        assert_eq!(lp.coded(), 0.0);
        assert!(policy_is_stabilizing(&lp));
        let lp = load_profile(&s, &[30.0, 1.0], &p).unwrap();
        assert!(!policy_is_stabilizing(&lp));
        let lp = load_profile(&s, &[0.0, 0.0], &p).unwrap();
        assert!(lp.nu.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heavy_policy_example() {
        let s = sys(64, 2, 4, &[0.5, 0.5]);
        let l = [22.0, 20.0];
        let p = heavy_regime_policy(&s, &l, 1, 1).unwrap();
        let q = p.coded_mass(0);
        assert!((q[0] - 0.875).abs() < 1e-15 && (q[1] - 0.125).abs() < 1e-15);
        assert_eq!(p.own_prob(1), 1.0);
        let lp = load_profile(&s, &l, &p).unwrap();
        assert!((lp.coded() - 0.6875).abs() < 1e-15);
        // Systematic loads follow (1 - v n_coded / n) lambda_1 / s_1 and
        // (lambda_2 + v n_coded / n lambda_1) / s_2.
        assert!((lp.nu[0] - 0.875 * 22.0 / 30.0).abs() < 1e-15);
        assert!((lp.nu[1] - (20.0 + 0.125 * 22.0) / 30.0).abs() < 1e-15);

        let prop = check_offload_budget(&s, &l, &p).unwrap();
        assert!((prop.max_ratio - 2.0).abs() < 1e-12);
        assert_eq!(prop.ratios[1], 0.0);

        assert!(heavy_regime_policy(&s, &l, 1, 2).is_err());
        assert!(heavy_regime_policy(&s, &l, 2, 1).is_err());
        let s0 = sys(64, 2, 0, &[0.5, 0.5]);
        assert!(heavy_regime_policy(&s0, &l, 1, 1).is_err());
    }

    #[test]
    fn heavy_policy_targets_lowest_slack_type() {
        let s = sys(64, 2, 4, &[0.5, 0.5]);
        let p = heavy_regime_policy(&s, &[10.0, 30.0], 1, 1).unwrap();
        assert_eq!(p.own_prob(0), 1.0);
        assert!(p.own_prob(1) < 1.0);
        let e = &p.entries(1)[1].pattern;
        assert_eq!((e.num_coded, e.helper_types.clone()), (1, vec![0]));
    }

    #[test]
    fn heavy_policy_inner_config_is_stabilizing() {
        let n = 1024usize;
        for nc in [64, 32] {
            let s = sys(n, 2, nc, &[0.5, 0.5]);
            let h = n as f64 / 2.0;
            let l = [h - h.powf(0.55), h - 6.0 * n as f64 / 32.0];
            let p = heavy_regime_policy(&s, &l, 1, 1).unwrap();
            let lp = load_profile(&s, &l, &p).unwrap();
            assert!(lp.coded() < 1.0, "nc={nc} {lp:?}");
        }
    }

    #[test]
    fn offload_budget_examples() {
        let s = sys(64, 2, 4, &[0.5, 0.5]);
        let l = [22.0, 20.0];
        let u = check_offload_budget(&s, &l, &uniform_uncoded_policy(&s)).unwrap();
        assert_eq!(u.max_ratio, 0.0);
        assert!(u.necessary_condition_holds);
        let all_coded = RoutingPolicy::from_probs(&s, &[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let r = check_offload_budget(&s, &l, &all_coded).unwrap();
        assert!((r.max_ratio - 16.0).abs() < 1e-12);
        assert!(!r.necessary_condition_holds);
    }

    #[test]
    fn json_round_trip() {
        let s = sys(64, 2, 4, &[0.5, 0.5]);
        let p = heavy_regime_policy(&s, &[22.0, 20.0], 1, 1).unwrap();
        let js = serde_json::to_string(&p).unwrap();
        assert!(js.starts_with(r#"{"type_1":[{"pattern":{"job_type":1,"num_coded":0,"helper_types":[]},"prob":0.875}"#));
        let back: RoutingPolicy = serde_json::from_str(&js).unwrap();
        assert_eq!(back, p);
        let opt = crate::routing::optimize_routing(&s, &[28.0, 20.0], &Default::default()).unwrap().policy;
        let back: RoutingPolicy = serde_json::from_str(&serde_json::to_string(&opt).unwrap()).unwrap();
        assert_eq!(back, opt);
        assert!(serde_json::from_str::<RoutingPolicy>(r#"{"type_2":[]}"#).is_err());
        assert!(serde_json::from_str::<RoutingPolicy>(
            r#"{"type_1":[{"pattern":{"job_type":1,"num_coded":0,"helper_types":[]},"prob":0.5}]}"#
        )
        .is_err());
    }

    #[test]
    fn infeasible_pattern_rejected() {
        let s = sys(10, 2, 1, &[0.5, 0.5]);
        let bad = RoutingPolicy::new(vec![
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
        assert!(load_profile(&s, &[1.0, 1.0], &bad).is_err());
    }

    fn random_policy(s: &SystemSpec, w: &[f64]) -> RoutingPolicy {
        let mut it = w.iter().cycle();
        let probs: Vec<Vec<f64>> = s
            .all_patterns()
            .iter()
            .map(|pats| {
                let raw: Vec<f64> = pats.iter().map(|_| *it.next().unwrap() + 1e-3).collect();
                let sum: f64 = raw.iter().sum();
                raw.iter().map(|v| v / sum).collect()
            })
            .collect();
        RoutingPolicy::from_probs(s, &probs).unwrap()
    }

    proptest! {
        #[test]
        fn load_is_linear_in_lambda(
            w in prop::collection::vec(0.0f64..1.0, 12),
            a in prop::collection::vec(0.0f64..5.0, 3),
            b in prop::collection::vec(0.0f64..5.0, 3),
            t in 0.0f64..3.0,
        ) {
            let s = sys(20, 3, 3, &[0.2, 0.3, 0.5]);
            let p = random_policy(&s, &w);
            let la = load_profile(&s, &a, &p).unwrap();
            let lb = load_profile(&s, &b, &p).unwrap();
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + t * y).collect();
            let lm = load_profile(&s, &mix, &p).unwrap();
            for c in 0..4 {
                prop_assert!((lm.nu[c] - (la.nu[c] + t * lb.nu[c])).abs() < 1e-9);
            }
        }

        #[test]
        fn load_is_affine_in_policy(
            w1 in prop::collection::vec(0.0f64..1.0, 12),
            w2 in prop::collection::vec(0.0f64..1.0, 12),
            l in prop::collection::vec(0.0f64..5.0, 3),
            t in 0.0f64..1.0,
        ) {
            let s = sys(20, 3, 3, &[0.2, 0.3, 0.5]);
            let (p1, p2) = (random_policy(&s, &w1), random_policy(&s, &w2));
            let probs: Vec<Vec<f64>> = (0..3)
                .map(|i| {
                    p1.entries(i).iter().zip(p2.entries(i)).map(|(x, y)| (1.0 - t) * x.prob + t * y.prob).collect()
                })
                .collect();
            let pm = RoutingPolicy::from_probs(&s, &probs).unwrap();
            let (a, b, m) = (
                load_profile(&s, &l, &p1).unwrap(),
                load_profile(&s, &l, &p2).unwrap(),
                load_profile(&s, &l, &pm).unwrap(),
            );
            for c in 0..4 {
                prop_assert!((m.nu[c] - ((1.0 - t) * a.nu[c] + t * b.nu[c])).abs() < 1e-9);
            }
        }

        #[test]
        fn task_flow_is_conserved(
            w in prop::collection::vec(0.0f64..1.0, 12),
            l in prop::collection::vec(0.0f64..5.0, 3),
        ) {
            let s = sys(20, 3, 3, &[0.2, 0.3, 0.5]);
            let p = random_policy(&s, &w);
            let lp = load_profile(&s, &l, &p).unwrap();
            let total: f64 = (0..4).map(|c| lp.nu[c] * s.class_size(c) as f64).sum();
            let tasks: f64 = (0..3)
                .map(|i| l[i] * p.entries(i).iter().map(|e| e.prob * e.pattern.task_count() as f64).sum::<f64>())
                .sum();
            prop_assert!((total - tasks).abs() < 1e-9);
        }
    }
}
