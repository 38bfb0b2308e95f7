//! Slack capacities and traffic-regime classification of a single instance.
//!
//! The regimes are asymptotic notions; a finite instance is labelled by
//! comparing slacks against `sqrt(n * n_coded)` and `n_coded`, scaled by the
//! explicit constants in [`Thresholds`].

use crate::capacity::{coded_contains_waterfill, uncoded_contains, Membership};
use crate::error::{check_len, Error, Result};
use crate::model::SystemSpec;
use crate::EPS;
use serde::{Deserialize, Serialize};

/// Slack `beta_i = alpha_i n - lambda_i` against the nominal share.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackProfile {
    pub beta: Vec<f64>,
    /// Type indices by ascending `beta`, ties by index.
    pub sort_order: Vec<usize>,
}

impl SlackProfile {
    pub fn sorted_beta(&self) -> Vec<f64> {
        self.sort_order.iter().map(|&i| self.beta[i]).collect()
    }

    pub fn sorted_alpha(&self, system: &SystemSpec) -> Vec<f64> {
        self.sort_order.iter().map(|&i| system.alpha()[i]).collect()
    }
}

pub fn slack_profile(system: &SystemSpec, lambda: &[f64]) -> Result<SlackProfile> {
    check_len(system.k(), lambda.len())?;
    let beta: Vec<f64> = system
        .uncoded_share()
        .iter()
        .zip(lambda)
        .map(|(c, l)| c - l)
        .collect();
    let mut sort_order: Vec<usize> = (0..beta.len()).collect();
    sort_order.sort_by(|&a, &b| beta[a].total_cmp(&beta[b]).then(a.cmp(&b)));
    Ok(SlackProfile { beta, sort_order })
}

/// Largest `j` with `j * (alpha_1 + .. + alpha_j) < 1`, where `alpha` is
/// already in ascending-slack order. Zero when no `j` qualifies.
pub fn bottleneck_index(sorted_alpha: &[f64]) -> Result<usize> {
    if sorted_alpha.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "the beneficiary split needs k >= 2, got {}",
            sorted_alpha.len()
        )));
    }
    let mut prefix = 0.0;
    let mut istar = 0;
    for (idx, a) in sorted_alpha.iter().enumerate() {
        prefix += a;
        let j = idx + 1;
        if (j as f64) * prefix < 1.0 - 1e-12 {
            istar = j;
        }
    }
    Ok(istar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Light,
    InnerHeavy,
    OuterHeavy,
    UncodedUnstable,
    CodedUnstable,
    Unclassified,
}

impl RegimeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeKind::Light => "light",
            RegimeKind::InnerHeavy => "inner_heavy",
            RegimeKind::OuterHeavy => "outer_heavy",
            RegimeKind::UncodedUnstable => "uncoded_unstable",
            RegimeKind::CodedUnstable => "coded_unstable",
            RegimeKind::Unclassified => "unclassified",
        }
    }
}

/// Finite-n cutoffs. With `T = sqrt(n * n_coded)`:
/// light needs `beta_1 >= light * T`; inner-heavy needs
/// `outer * n_coded <= beta_1 < light * T` and `beta_{i*+1} >= helper * beta_1`;
/// outer-heavy needs `beta_1 < outer * n_coded` and
/// `beta_{i*+1} >= helper * n_coded`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub light: f64,
    pub outer: f64,
    pub helper: f64,
    /// Multiplier on the heavy-set cutoff used by [`kstar_index`].
    pub kstar_scale: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            light: 0.4,
            outer: 0.25,
            helper: 2.0,
            kstar_scale: 1.0,
        }
    }
}

/// Largest `j <= i*` whose sorted slack sits below the heavy cutoff
/// (`sqrt(n n_coded)` for inner-heavy, `n_coded` for outer-heavy).
pub fn kstar_index(
    system: &SystemSpec,
    lambda: &[f64],
    kind: RegimeKind,
    thresholds: &Thresholds,
) -> Result<usize> {
    let prof = slack_profile(system, lambda)?;
    let istar = bottleneck_index(&prof.sorted_alpha(system))?;
    let nc = system.n_coded() as f64;
    let cutoff = thresholds.kstar_scale
        * match kind {
            RegimeKind::InnerHeavy => (system.n() as f64 * nc).sqrt(),
            RegimeKind::OuterHeavy => nc,
            other => {
                return Err(Error::InvalidInput(format!(
                    "k* is defined for heavy regimes only, got {}",
                    other.as_str()
                )))
            }
        };
    let beta = prof.sorted_beta();
    (1..=istar)
        .rev()
        .find(|&j| beta[j - 1] <= cutoff)
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "no slack among the first {istar} types is below {cutoff}"
            ))
        })
}

/// Threshold comparisons behind a [`RegimeLabel`]. Type indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub sorted_types: Vec<usize>,
    pub sorted_beta: Vec<f64>,
    pub uncoded: Membership,
    pub coded: Membership,
    pub light_cutoff: f64,
    pub outer_cutoff: f64,
    pub helper_slack: Option<f64>,
    pub light_test: bool,
    pub inner_test: bool,
    pub outer_test: bool,
    /// Asymptotic uncoded-unstable shape: `beta_{i*} <= 0`,
    /// `beta_1 >= -outer * n_coded`, `beta_{i*+1} >= helper * n_coded`.
    pub uncoded_unstable_shape: bool,
    /// Explicit coded routing with slack: beneficiaries shed their excess
    /// onto patterns with `i*` coded tasks and every type above `i*` as
    /// helper. Implies coded-interior.
    pub uncoded_unstable_witness: bool,
    /// Some set `T` of the most overloaded types has
    /// `|T| * sum_{i in T} (lambda_i - s_i) >= n_coded`. Implies the coded
    /// system cannot be stabilised.
    pub coded_unstable_cut: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub label: RegimeKind,
    pub istar: usize,
    pub kstar: Option<usize>,
    pub diagnostics: Diagnostics,
}

/// Offload witness for the uncoded-unstable regime, see [`Diagnostics`].
pub fn uncoded_unstable_witness(system: &SystemSpec, lambda: &[f64]) -> Result<bool> {
    let prof = slack_profile(system, lambda)?;
    let k = system.k();
    let istar = bottleneck_index(&prof.sorted_alpha(system))?;
    let nc = system.n_coded();
    if istar == 0 || istar >= k || istar > nc {
        return Ok(false);
    }
    let s = system.systematic();
    let pad = 10.0 * EPS;
    let shed: f64 = prof.sort_order[..istar]
        .iter()
        .map(|&i| ((lambda[i] - s[i] as f64).max(0.0) + pad).min(lambda[i]))
        .sum();
    let coded_ok = istar as f64 * shed < nc as f64 - pad;
    let helpers_ok = prof.sort_order[istar..]
        .iter()
        .all(|&i| lambda[i] + shed < s[i] as f64 - pad);
    Ok(coded_ok && helpers_ok)
}

/// Cut certificate for the coded-unstable regime, see [`Diagnostics`].
pub fn coded_unstable_cut(system: &SystemSpec, lambda: &[f64]) -> Result<bool> {
    check_len(system.k(), lambda.len())?;
    let s = system.systematic();
    let mut excess: Vec<f64> = lambda.iter().zip(s).map(|(l, &c)| l - c as f64).collect();
    excess.sort_by(|a, b| b.total_cmp(a));
    let nc = system.n_coded() as f64;
    let mut prefix = 0.0;
    for (idx, e) in excess.iter().enumerate() {
        prefix += e;
        if (idx + 1) as f64 * prefix >= nc - EPS && prefix > 0.0 {
            return Ok(true);
        }
    }
    Ok(false)
}

pub fn classify_regime(
    system: &SystemSpec,
    lambda: &[f64],
    thresholds: &Thresholds,
) -> Result<RegimeLabel> {
    let k = system.k();
    let prof = slack_profile(system, lambda)?;
    let istar = bottleneck_index(&prof.sorted_alpha(system))?;
    let beta = prof.sorted_beta();
    let uncoded = uncoded_contains(system, lambda)?;
    let coded = coded_contains_waterfill(system, lambda)?;
    let n = system.n() as f64;
    let nc = system.n_coded() as f64;
    let light_cutoff = thresholds.light * (n * nc).sqrt();
    let outer_cutoff = thresholds.outer * nc;
    let helper_slack = (istar >= 1 && istar < k).then(|| beta[istar]);
    let b1 = beta[0];

    let light_test = b1 >= light_cutoff;
    let inner_test = helper_slack
        .is_some_and(|h| outer_cutoff <= b1 && b1 < light_cutoff && h >= thresholds.helper * b1);
    let outer_test = helper_slack.is_some_and(|h| b1 < outer_cutoff && h >= thresholds.helper * nc);
    let uncoded_unstable_shape = helper_slack.is_some_and(|h| {
        beta[istar - 1] <= 0.0 && b1 >= -outer_cutoff && h >= thresholds.helper * nc
    });

    let diagnostics = Diagnostics {
        sorted_types: prof.sort_order.iter().map(|i| i + 1).collect(),
        sorted_beta: beta.clone(),
        uncoded,
        coded,
        light_cutoff,
        outer_cutoff,
        helper_slack,
        light_test,
        inner_test,
        outer_test,
        uncoded_unstable_shape,
        uncoded_unstable_witness: uncoded_unstable_witness(system, lambda)?,
        coded_unstable_cut: coded_unstable_cut(system, lambda)?,
    };

    let label = match (uncoded.is_interior(), coded.is_interior()) {
        (false, true) => RegimeKind::UncodedUnstable,
        (true, false) => RegimeKind::CodedUnstable,
        (false, false) => RegimeKind::Unclassified,
        (true, true) => {
            if light_test {
                RegimeKind::Light
            } else if inner_test {
                RegimeKind::InnerHeavy
            } else if outer_test {
                RegimeKind::OuterHeavy
            } else {
                RegimeKind::Unclassified
            }
        }
    };
    let kstar = match label {
        RegimeKind::InnerHeavy | RegimeKind::OuterHeavy => {
            kstar_index(system, lambda, label, thresholds).ok()
        }
        _ => None,
    };
    Ok(RegimeLabel {
        label,
        istar,
        kstar,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::coded_contains_lp;
    use proptest::prelude::*;

    fn sys(n: usize, k: usize, c: usize, alpha: &[f64]) -> SystemSpec {
        SystemSpec::build(n, k, c, alpha).unwrap()
    }

    fn two_type_presets(n: usize) -> [[f64; 2]; 3] {
        let h = n as f64 / 2.0;
        let other = h - 6.0 * n as f64 / 32.0;
        [
            [h - 5.0 * n as f64 / 32.0, other],
            [h - h.powf(0.55), other],
            [h - h.powf(0.3), other],
        ]
    }

    #[test]
    fn istar_examples() {
        assert_eq!(bottleneck_index(&[0.5, 0.5]).unwrap(), 1);
        assert_eq!(bottleneck_index(&[0.9, 0.1]).unwrap(), 1);
        assert_eq!(bottleneck_index(&[1.0 / 9.0; 9]).unwrap(), 2);
        assert_eq!(bottleneck_index(&[0.25; 4]).unwrap(), 1);
        assert!(bottleneck_index(&[1.0]).is_err());
    }

    #[test]
    fn slack_examples() {
        let s = sys(64, 2, 4, &[0.5, 0.5]);
        assert_eq!(slack_profile(&s, &[22.0, 20.0]).unwrap().beta, vec![10.0, 12.0]);
        assert_eq!(slack_profile(&s, &[32.0, 32.0]).unwrap().beta, vec![0.0, 0.0]);
        let light = two_type_presets(64)[0];
        assert_eq!(light, [22.0, 20.0]);
        let p = slack_profile(&s, &[20.0, 22.0]).unwrap();
        assert_eq!(p.sort_order, vec![1, 0]);
    }

    #[test]
    fn kstar_examples() {
        let s = sys(64, 2, 4, &[0.5, 0.5]);
        let t = Thresholds::default();
        assert_eq!(kstar_index(&s, &[24.0, 12.0], RegimeKind::InnerHeavy, &t).unwrap(), 1);
        assert_eq!(kstar_index(&s, &[30.0, 12.0], RegimeKind::OuterHeavy, &t).unwrap(), 1);
        assert!(kstar_index(&s, &[10.0, 12.0], RegimeKind::OuterHeavy, &t).is_err());
        assert!(kstar_index(&s, &[10.0, 12.0], RegimeKind::Light, &t).is_err());
    }

    #[test]
    fn two_type_presets_classify_as_named() {
        let t = Thresholds::default();
        let names = [RegimeKind::Light, RegimeKind::InnerHeavy, RegimeKind::OuterHeavy];
        for m in 9..=11 {
            let n = 1usize << m;
            for nc in [n / 16, (n as f64).sqrt().ceil() as usize] {
                let s = sys(n, 2, nc, &[0.5, 0.5]);
                for (lam, want) in two_type_presets(n).iter().zip(names) {
                    let got = classify_regime(&s, lam, &t).unwrap();
                    assert_eq!(got.label, want, "n={n} nc={nc} {got:?}");
                    assert_eq!(got.istar, 1);
                    if want != RegimeKind::Light {
                        assert_eq!(got.kstar, Some(1));
                    }
                }
            }
        }
    }

    #[test]
    fn unstable_and_unclassified_labels() {
        let t = Thresholds::default();
        let s = sys(128, 2, 8, &[0.5, 0.5]);
        let got = classify_regime(&s, &[66.0, 40.0], &t).unwrap();
        assert_eq!(got.label, RegimeKind::UncodedUnstable);
        assert!(got.diagnostics.uncoded_unstable_shape);
        assert!(got.diagnostics.uncoded_unstable_witness);
        assert!(!got.diagnostics.coded_unstable_cut);

        let s = sys(64, 2, 16, &[0.5, 0.5]);
        let got = classify_regime(&s, &[29.0, 29.0], &t).unwrap();
        assert_eq!(got.label, RegimeKind::CodedUnstable);
        assert!(got.diagnostics.coded_unstable_cut);

        let got = classify_regime(&s, &[40.0, 40.0], &t).unwrap();
        assert_eq!(got.label, RegimeKind::Unclassified);
    }

    #[test]
    fn label_json_shape() {
        let s = sys(64, 2, 4, &[0.5, 0.5]);
        let got = classify_regime(&s, &[22.0, 20.0], &Thresholds::default()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&got).unwrap();
        assert_eq!(v["label"], "light");
        assert_eq!(v["istar"], 1);
        assert!(v["kstar"].is_null());
        assert!(v["diagnostics"].is_object());
        assert_eq!(v["diagnostics"]["uncoded"]["verdict"], "interior");
    }

    #[test]
    fn istar_shrinks_as_smallest_alpha_grows() {
        for k in 2..=5 {
            let mut last = usize::MAX;
            for step in 1..=20 {
                let a_min = step as f64 / (20.0 * k as f64);
                let rest = (1.0 - a_min) / (k - 1) as f64;
                if rest < a_min {
                    break;
                }
                let mut alpha = vec![a_min];
                alpha.extend(std::iter::repeat_n(rest, k - 1));
                let i = bottleneck_index(&alpha).unwrap();
                assert!(i <= last, "k={k} alpha={alpha:?}");
                last = i;
            }
        }
    }

    fn instance() -> impl Strategy<Value = (SystemSpec, Vec<f64>)> {
        (2usize..=3, 16usize..=128, 1usize..=16, 1u32..=3).prop_flat_map(|(k, n, c, w)| {
            let c = c.min(n / 4);
            let mut alpha = vec![1.0; k];
            alpha[k - 1] = w as f64;
            let sum: f64 = alpha.iter().sum();
            let alpha: Vec<f64> = alpha.iter().map(|a| a / sum).collect();
            let s = SystemSpec::build(n, k, c, &alpha).unwrap();
            let share = s.uncoded_share();
            let lam = share
                .iter()
                .map(|&a| 0.0..(a + c as f64))
                .collect::<Vec<_>>();
            (Just(s), lam)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn unstable_labels_agree_with_capacity((s, l) in instance()) {
            let got = classify_regime(&s, &l, &Thresholds::default()).unwrap();
            let u = uncoded_contains(&s, &l).unwrap().is_interior();
            let c = coded_contains_waterfill(&s, &l).unwrap().is_interior();
            prop_assert_eq!(got.label == RegimeKind::UncodedUnstable, !u && c);
            prop_assert_eq!(got.label == RegimeKind::CodedUnstable, u && !c);
        }

        #[test]
        fn witness_and_cut_are_sound((s, l) in instance()) {
            if uncoded_unstable_witness(&s, &l).unwrap() {
                prop_assert!(coded_contains_waterfill(&s, &l).unwrap().is_interior());
                prop_assert!(coded_contains_lp(&s, &l).unwrap().is_interior());
            }
            if coded_unstable_cut(&s, &l).unwrap() {
                prop_assert!(!coded_contains_waterfill(&s, &l).unwrap().is_interior());
                prop_assert!(!coded_contains_lp(&s, &l).unwrap().is_interior());
            }
        }

        #[test]
        fn witnessed_overload_is_uncoded_unstable(
            n in 64usize..=128, frac in 0.05f64..0.95, h in 0.0f64..1.0
        ) {
            // Type 1 over its nominal share, type 2 leaves room for the shed load.
            let c = 8;
            let s = SystemSpec::build(n, 2, c, &[0.5, 0.5]).unwrap();
            let over = 0.5 * n as f64 + frac * (c as f64 / 2.0);
            let shed = over - s.systematic()[0] as f64;
            let l2 = h * (s.systematic()[1] as f64 - shed - 0.01);
            let l = [over, l2.max(0.0)];
            prop_assume!(uncoded_unstable_witness(&s, &l).unwrap());
            let got = classify_regime(&s, &l, &Thresholds::default()).unwrap();
            prop_assert_eq!(got.label, RegimeKind::UncodedUnstable);
        }

        #[test]
        fn scaling_down_never_adds_heaviness((s, l) in instance(), t in 0.0f64..1.0) {
            let th = Thresholds::default();
            let a = classify_regime(&s, &l, &th).unwrap();
            let scaled: Vec<f64> = l.iter().map(|v| v * t).collect();
            let b = classify_regime(&s, &scaled, &th).unwrap();
            if a.label == RegimeKind::Light && b.diagnostics.sorted_types == a.diagnostics.sorted_types {
                prop_assert_eq!(b.label, RegimeKind::Light);
            }
        }
    }
}
