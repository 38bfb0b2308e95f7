//! System topology and class-level recovery patterns.
//!
//! Servers are grouped into `k + 1` classes: one systematic class per job
//! type and a single coded class. Servers inside a class are exchangeable,
//! so a recovery set is described by the classes it draws from rather than
//! by concrete server ids; the simulator samples concrete servers uniformly
//! without replacement at dispatch time.

mod generator;

pub use generator::{span_contains, GeneratorSpec};

use crate::error::{check_len, Error, Result};
use serde::{Deserialize, Serialize};

const ALPHA_SUM_TOL: f64 = 1e-9;

/// Topology of a coded (or, with `n_coded = 0`, uncoded) system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemRepr", into = "SystemRepr")]
pub struct SystemSpec {
    n: usize,
    n_coded: usize,
    alpha: Vec<f64>,
    systematic: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemRepr {
    n: usize,
    k: usize,
    n_coded: usize,
    alpha: Vec<f64>,
}

impl TryFrom<SystemRepr> for SystemSpec {
    type Error = Error;

    fn try_from(r: SystemRepr) -> Result<Self> {
        SystemSpec::build(r.n, r.k, r.n_coded, &r.alpha)
    }
}

impl From<SystemSpec> for SystemRepr {
    fn from(s: SystemSpec) -> Self {
        SystemRepr {
            n: s.n,
            k: s.k(),
            n_coded: s.n_coded,
            alpha: s.alpha,
        }
    }
}

impl SystemSpec {
    /// Validates the topology and apportions the `n - n_coded` systematic
    /// servers across job types by largest remainder (ties go to the lower
    /// type index).
    pub fn build(n: usize, k: usize, n_coded: usize, alpha: &[f64]) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidSystem("k must be positive".into()));
        }
        check_len(k, alpha.len())?;
        if n_coded >= n {
            return Err(Error::InvalidSystem(format!(
                "n_coded = {n_coded} must be smaller than n = {n}"
            )));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(Error::InvalidSystem(
                "every alpha_i must be finite and positive".into(),
            ));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > ALPHA_SUM_TOL {
            return Err(Error::InvalidSystem(format!(
                "alpha sums to {sum}, expected 1"
            )));
        }
        let alpha: Vec<f64> = alpha.iter().map(|a| a / sum).collect();
        let systematic = apportion(n - n_coded, &alpha);
        if let Some(i) = systematic.iter().position(|&s| s == 0) {
            return Err(Error::InvalidSystem(format!(
                "job type {} receives no systematic server",
                i + 1
            )));
        }
        Ok(SystemSpec {
            n,
            n_coded,
            alpha,
            systematic,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_coded(&self) -> usize {
        self.n_coded
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Integer systematic server count per job type.
    pub fn systematic(&self) -> &[usize] {
        &self.systematic
    }

    /// Number of server classes (`k` systematic classes plus the coded one).
    pub fn num_classes(&self) -> usize {
        self.k() + 1
    }

    /// Index of the coded class; systematic class `i` has index `i`.
    pub fn coded_class(&self) -> usize {
        self.k()
    }

    pub fn class_size(&self, class: usize) -> usize {
        if class == self.coded_class() {
            self.n_coded
        } else {
            self.systematic[class]
        }
    }

    /// First global server id of each class; systematic classes come first,
    /// coded servers occupy the last `n_coded` ids.
    pub fn class_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.num_classes());
        let mut acc = 0;
        for c in 0..self.num_classes() {
            offsets.push(acc);
            acc += self.class_size(c);
        }
        offsets
    }

    /// Uncoded share `alpha_i * n` of every job type.
    pub fn uncoded_share(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a * self.n as f64).collect()
    }

    /// Feasible recovery patterns for `job_type` (0-based) in canonical order:
    /// own systematic first, then ascending number of coded tasks, then
    /// lexicographic helper sets.
    pub fn recovery_patterns(&self, job_type: usize) -> Result<Vec<RecoveryPattern>> {
        let k = self.k();
        if job_type >= k {
            return Err(Error::InvalidInput(format!(
                "job type {} out of range 1..={k}",
                job_type + 1
            )));
        }
        let others: Vec<usize> = (0..k).filter(|&t| t != job_type).collect();
        let mut out = vec![RecoveryPattern::own(job_type)];
        for num_coded in 1..=k.min(self.n_coded) {
            for helpers in combinations(&others, k - num_coded) {
                if helpers.iter().all(|&h| self.systematic[h] >= 1) {
                    out.push(RecoveryPattern {
                        job_type,
                        num_coded,
                        helper_types: helpers,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Patterns for every job type, indexed by type.
    pub fn all_patterns(&self) -> Vec<Vec<RecoveryPattern>> {
        (0..self.k())
            .map(|t| self.recovery_patterns(t).expect("type index in range"))
            .collect()
    }
}

/// Largest-remainder apportionment of `total` seats according to `weights`
/// (which must sum to one).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights
        .iter()
        .map(|w| {
            let q = w * total as f64;
            // Snap float noise such as 21.999999999999996 back to the integer.
            if (q - q.round()).abs() < 1e-9 {
                q.round()
            } else {
                q
            }
        })
        .collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = seats.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        seats[i] += 1;
    }
    seats
}

/// All `size`-element subsets of `items`, in lexicographic order.
pub(crate) fn combinations<T: Copy>(items: &[T], size: usize) -> Vec<Vec<T>> {
    fn rec<T: Copy>(items: &[T], size: usize, start: usize, cur: &mut Vec<T>, out: &mut Vec<Vec<T>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        let needed = size - cur.len();
        for i in start..=items.len().saturating_sub(needed) {
            if i >= items.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, size, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if size <= items.len() {
        rec(items, size, 0, &mut Vec::with_capacity(size), &mut out);
    }
    out
}

/// Class-level recovery set of one job type.
///
/// `num_coded = 0` means a single task on one of the job's own systematic
/// servers. Otherwise the job forks into `k` tasks: `num_coded` on distinct
/// coded servers and one on a systematic server of each helper type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecoveryPattern {
    pub job_type: usize,
    pub num_coded: usize,
    pub helper_types: Vec<usize>,
}

impl RecoveryPattern {
    pub fn own(job_type: usize) -> Self {
        RecoveryPattern {
            job_type,
            num_coded: 0,
            helper_types: Vec::new(),
        }
    }

    pub fn is_own(&self) -> bool {
        self.num_coded == 0
    }

    /// Number of tasks the job forks into under this pattern.
    pub fn task_count(&self) -> usize {
        if self.is_own() {
            1
        } else {
            self.num_coded + self.helper_types.len()
        }
    }

    /// Tasks this pattern places on `class` (see [`SystemSpec::coded_class`]).
    pub fn tasks_on(&self, class: usize, coded_class: usize) -> usize {
        if class == coded_class {
            self.num_coded
        } else if self.is_own() {
            usize::from(class == self.job_type)
        } else {
            usize::from(self.helper_types.contains(&class))
        }
    }
}

// Job types are 1-based on the wire.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternRepr {
    job_type: usize,
    num_coded: usize,
    helper_types: Vec<usize>,
}

impl Serialize for RecoveryPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PatternRepr {
            job_type: self.job_type + 1,
            num_coded: self.num_coded,
            helper_types: self.helper_types.iter().map(|h| h + 1).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RecoveryPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = PatternRepr::deserialize(d)?;
        if r.job_type == 0 || r.helper_types.contains(&0) {
            return Err(serde::de::Error::custom("job types are 1-based"));
        }
        Ok(RecoveryPattern {
            job_type: r.job_type - 1,
            num_coded: r.num_coded,
            helper_types: r.helper_types.iter().map(|h| h - 1).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_reference_systems() {
        let s = SystemSpec::build(64, 2, 4, &[0.5, 0.5]).unwrap();
        assert_eq!(s.systematic(), &[30, 30]);
        assert_eq!(s.n_coded(), 4);

        let s = SystemSpec::build(10, 2, 0, &[0.5, 0.5]).unwrap();
        assert_eq!(s.systematic(), &[5, 5]);

        let s = SystemSpec::build(60, 2, 7, &[22.0 / 53.0, 31.0 / 53.0]).unwrap();
        assert_eq!(s.systematic(), &[22, 31]);
    }

    #[test]
    fn largest_remainder_sums_exactly() {
        let s = SystemSpec::build(100, 3, 5, &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(s.systematic().iter().sum::<usize>() + 5, 100);
        // 95 * (1/3) each -> 31.67: two largest remainders get the extras.
        let s = SystemSpec::build(95, 3, 0, &[1.0 / 3.0; 3]).unwrap();
        assert_eq!(s.systematic(), &[32, 32, 31]);
    }

    #[test]
    fn rejects_bad_topologies() {
        assert!(SystemSpec::build(10, 2, 0, &[0.5, 0.6]).is_err());
        assert!(SystemSpec::build(10, 2, 10, &[0.5, 0.5]).is_err());
        assert!(SystemSpec::build(10, 2, 9, &[0.5, 0.5]).is_err());
        assert!(SystemSpec::build(10, 2, 0, &[1.0, 0.0]).is_err());
        assert!(matches!(
            SystemSpec::build(10, 3, 0, &[0.5, 0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pattern_enumeration_k2() {
        let s = SystemSpec::build(10, 2, 2, &[0.5, 0.5]).unwrap();
        let p = s.recovery_patterns(0).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p[0].is_own());
        assert_eq!((p[1].num_coded, p[1].helper_types.clone()), (1, vec![1]));
        assert_eq!((p[2].num_coded, p[2].helper_types.clone()), (2, vec![]));

        let s = SystemSpec::build(10, 2, 1, &[0.5, 0.5]).unwrap();
        assert_eq!(s.recovery_patterns(1).unwrap().len(), 2);
        assert!(s.recovery_patterns(2).is_err());
    }

    #[test]
    fn pattern_load_vectors() {
        let s = SystemSpec::build(12, 3, 3, &[1.0 / 3.0; 3]).unwrap();
        let pats = s.recovery_patterns(1).unwrap();
        let coded = s.coded_class();
        for p in &pats {
            let total: usize = (0..s.num_classes()).map(|c| p.tasks_on(c, coded)).sum();
            assert_eq!(total, p.task_count());
            if !p.is_own() {
                assert_eq!(p.tasks_on(1, coded), 0);
            }
        }
    }

    #[test]
    fn json_round_trip_keeps_field_order() {
        let s = SystemSpec::build(64, 2, 4, &[0.5, 0.5]).unwrap();
        let js = serde_json::to_string(&s).unwrap();
        assert_eq!(js, r#"{"n":64,"k":2,"n_coded":4,"alpha":[0.5,0.5]}"#);
        let back: SystemSpec = serde_json::from_str(&js).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<SystemSpec>(r#"{"n":4,"k":2,"n_coded":0,"alpha":[0.5,0.5],"x":1}"#).is_err());
    }

    #[test]
    fn combinations_are_lexicographic() {
        assert_eq!(
            combinations(&[1, 2, 3], 2),
            vec![vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        assert_eq!(combinations(&[1, 2], 0), vec![Vec::<i32>::new()]);
        assert!(combinations(&[1, 2], 3).is_empty());
    }
}
