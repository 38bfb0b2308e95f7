//! Membership tests for the uncoded and coded service capacity regions.
//!
//! The coded region is decided twice: once by a closed-form water-filling
//! bound over sorted residual capacities, and once by a class-aggregated
//! linear program over recovery-pattern flows. The two are independent and
//! are required to agree outside a thin boundary band.

use crate::error::{check_len, Error, Result};
use crate::model::SystemSpec;
use crate::simplex::{LinearProgram, LpOutcome, Relation};
use crate::EPS;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Interior,
    Boundary,
    Exterior,
}

impl Verdict {
    pub fn from_margin(margin: f64) -> Self {
        if margin > EPS {
            Verdict::Interior
        } else if margin >= -EPS {
            Verdict::Boundary
        } else {
            Verdict::Exterior
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Interior => "interior",
            Verdict::Boundary => "boundary",
            Verdict::Exterior => "exterior",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Verdict plus a signed margin in rate units. Positive margin means inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub verdict: Verdict,
    pub margin: f64,
}

impl Membership {
    pub fn from_margin(margin: f64) -> Self {
        Membership {
            verdict: Verdict::from_margin(margin),
            margin,
        }
    }

    pub fn is_interior(&self) -> bool {
        self.verdict == Verdict::Interior
    }
}

fn check_lambda(system: &SystemSpec, lambda: &[f64]) -> Result<()> {
    check_len(system.k(), lambda.len())?;
    if lambda.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::InvalidInput(
            "arrival rates must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Box test `lambda_i < alpha_i n` of the uncoded system with the same `n`.
pub fn uncoded_contains(system: &SystemSpec, lambda: &[f64]) -> Result<Membership> {
    check_lambda(system, lambda)?;
    let margin = system
        .uncoded_share()
        .iter()
        .zip(lambda)
        .map(|(c, l)| c - l)
        .fold(f64::INFINITY, f64::min);
    Ok(Membership::from_margin(margin))
}

/// Residual capacities `r_i = s_i - lambda_i` against the integer
/// systematic counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualProfile {
    pub r: Vec<f64>,
    pub r_plus: Vec<f64>,
    pub r_minus: Vec<f64>,
    /// Type indices ordered by ascending `r`, ties by index.
    pub sort_order: Vec<usize>,
}

impl ResidualProfile {
    pub fn sorted(&self) -> Vec<f64> {
        self.sort_order.iter().map(|&i| self.r[i]).collect()
    }

    /// Total excess demand `sum_i r_i^-`.
    pub fn deficit(&self) -> f64 {
        self.r_minus.iter().sum()
    }
}

pub fn residual_profile(system: &SystemSpec, lambda: &[f64]) -> Result<ResidualProfile> {
    check_lambda(system, lambda)?;
    let r: Vec<f64> = system
        .systematic()
        .iter()
        .zip(lambda)
        .map(|(&s, l)| s as f64 - l)
        .collect();
    let r_plus = r.iter().map(|v| v.max(0.0)).collect();
    let r_minus = r.iter().map(|v| (-v).max(0.0)).collect();
    let mut sort_order: Vec<usize> = (0..r.len()).collect();
    sort_order.sort_by(|&a, &b| r[a].total_cmp(&r[b]).then(a.cmp(&b)));
    Ok(ResidualProfile {
        r,
        r_plus,
        r_minus,
        sort_order,
    })
}

/// Largest total excess the coded servers can absorb given the residual
/// systematic capacity `r_plus` of the other types.
///
/// With `S_j` the sum of the `j` smallest entries of `r_plus` and
/// `c = n_coded`, the bound is the minimum of `(c + S_j) / j` over
/// `j = 1..=k` and, because the coded tasks of one job need distinct coded
/// servers, of `S_j / (j - c)` over `j > c`. The second family is empty
/// whenever `c >= k`.
pub fn absorbable_excess(n_coded: usize, r_plus: &[f64]) -> f64 {
    let mut sorted = r_plus.to_vec();
    sorted.sort_by(f64::total_cmp);
    let c = n_coded as f64;
    let mut best = f64::INFINITY;
    let mut prefix = 0.0;
    for (idx, v) in sorted.iter().enumerate() {
        let j = idx + 1;
        prefix += v;
        best = best.min((c + prefix) / j as f64);
        if j > n_coded {
            best = best.min(prefix / (j - n_coded) as f64);
        }
    }
    best
}

/// Closed-form water-filling test of the coded region.
///
/// Margin is `absorbable_excess - sum_i r_i^-`. Without coded servers the
/// region is the box on the systematic counts and the margin is
/// `min_i r_i`.
pub fn coded_contains_waterfill(system: &SystemSpec, lambda: &[f64]) -> Result<Membership> {
    let prof = residual_profile(system, lambda)?;
    if system.n_coded() == 0 {
        let margin = prof.r.iter().copied().fold(f64::INFINITY, f64::min);
        return Ok(Membership::from_margin(margin));
    }
    let margin = absorbable_excess(system.n_coded(), &prof.r_plus) - prof.deficit();
    Ok(Membership::from_margin(margin))
}

/// Pattern-flow linear program for the coded region.
///
/// Variables are flows `f_{i,p} >= 0` of type `i` through pattern `p` and a
/// free slack `t`; maximise `t` subject to `sum_p f_{i,p} = lambda_i` and a
/// per-class load of at most `capacity - t`. The optimal `t` is the margin.
pub fn coded_contains_lp(system: &SystemSpec, lambda: &[f64]) -> Result<Membership> {
    let (margin, _) = max_margin_flows(system, lambda)?;
    Ok(Membership::from_margin(margin))
}

/// Optimal slack `t` together with the per-type pattern flows achieving it,
/// indexed like [`SystemSpec::all_patterns`].
pub fn max_margin_flows(system: &SystemSpec, lambda: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
    check_lambda(system, lambda)?;
    let patterns = system.all_patterns();
    let offsets: Vec<usize> = patterns
        .iter()
        .scan(0, |acc, p| {
            let o = *acc;
            *acc += p.len();
            Some(o)
        })
        .collect();
    let num_flows: usize = patterns.iter().map(Vec::len).sum();
    let (t_pos, t_neg) = (num_flows, num_flows + 1);
    let mut lp = LinearProgram::new(num_flows + 2);
    lp.objective[t_pos] = 1.0;
    lp.objective[t_neg] = -1.0;

    for (i, pats) in patterns.iter().enumerate() {
        let mut row = vec![0.0; num_flows + 2];
        for j in 0..pats.len() {
            row[offsets[i] + j] = 1.0;
        }
        lp.add(row, Relation::Eq, lambda[i]);
    }
    let coded = system.coded_class();
    for class in 0..system.num_classes() {
        if class == coded && system.n_coded() == 0 {
            continue;
        }
        let mut row = vec![0.0; num_flows + 2];
        for (i, pats) in patterns.iter().enumerate() {
            for (j, p) in pats.iter().enumerate() {
                row[offsets[i] + j] = p.tasks_on(class, coded) as f64;
            }
        }
        row[t_pos] = 1.0;
        row[t_neg] = -1.0;
        lp.add(row, Relation::Le, system.class_size(class) as f64);
    }

    match lp.solve() {
        LpOutcome::Optimal { x, value } => {
            let flows = patterns
                .iter()
                .enumerate()
                .map(|(i, pats)| (0..pats.len()).map(|j| x[offsets[i] + j]).collect())
                .collect();
            Ok((value, flows))
        }
        other => Err(Error::Internal(format!(
            "capacity linear program did not reach an optimum: {other:?}"
        ))),
    }
}

/// Water-filling bound for `k = 2` when the other type keeps residual `r`.
fn k2_absorb(n_coded: usize, r: f64) -> f64 {
    absorbable_excess(n_coded, &[0.0, r.max(0.0)])
}

/// Largest supportable rate of type 1 in a two-type system.
pub fn k2_lambda1_max(system: &SystemSpec) -> Result<f64> {
    if system.k() != 2 {
        return Err(Error::Unsupported(format!(
            "two-type boundary requested for k = {}",
            system.k()
        )));
    }
    let s = system.systematic();
    Ok(s[0] as f64 + k2_absorb(system.n_coded(), s[1] as f64))
}

/// Supremum of `lambda_2` with `(lambda_1, lambda_2)` in the closure of the
/// coded region of a two-type system.
///
/// With `c = n_coded >= 2` and `s` the systematic counts the curve is
/// piecewise linear:
/// * `lambda_1 <= s_1 - c`: `s_2 + c`;
/// * `s_1 - c <= lambda_1 <= s_1`: `s_2 + (c + s_1 - lambda_1) / 2`;
/// * `s_1 <= lambda_1 <= s_1 + c/2`: `s_2 + s_1 + c/2 - lambda_1`;
/// * `s_1 + c/2 <= lambda_1 <= s_1 + c`: `s_2 + c - 2 (lambda_1 - s_1)`,
///   the mirror image of the second piece.
///
/// `c = 1` forces every coded job onto one helper, which makes the curve
/// `s_2 + min(1, s_1 - lambda_1)` then `s_2 - (lambda_1 - s_1)`, and `c = 0`
/// is the box.
pub fn k2_boundary(system: &SystemSpec, lambda1: f64) -> Result<f64> {
    let max1 = k2_lambda1_max(system)?;
    if !lambda1.is_finite() || lambda1 < 0.0 || lambda1 > max1 + EPS {
        return Err(Error::InvalidInput(format!(
            "lambda_1 = {lambda1} outside [0, {max1}]"
        )));
    }
    let (s1, s2) = (system.systematic()[0] as f64, system.systematic()[1] as f64);
    let c = system.n_coded();
    let cf = c as f64;
    let out = if lambda1 <= s1 {
        s2 + k2_absorb(c, s1 - lambda1)
    } else {
        let excess = lambda1 - s1;
        let shared = k2_absorb(c, 0.0);
        if excess <= shared {
            s2 + shared - excess
        } else {
            // Type 2 must leave residual r with k2_absorb(r) = excess.
            let needed = match c {
                0 | 1 => excess,
                _ => 2.0 * excess - cf,
            };
            s2 - needed
        }
    };
    Ok(out.max(0.0))
}

/// Axis-aligned grid of arrival vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Grid points per axis, including both ends.
    pub points: Vec<usize>,
}

impl GridSpec {
    /// `[0, upper]^k` with `points` per axis.
    pub fn cube(k: usize, upper: f64, points: usize) -> Self {
        GridSpec {
            lower: vec![0.0; k],
            upper: vec![upper; k],
            points: vec![points; k],
        }
    }

    fn axis(&self, d: usize) -> Vec<f64> {
        let m = self.points[d];
        (0..m)
            .map(|i| self.lower[d] + (self.upper[d] - self.lower[d]) * i as f64 / (m - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: Vec<f64>,
    pub uncoded: Verdict,
    pub coded: Verdict,
}

/// Classifies every grid point in row-major order (last axis fastest).
pub fn region_sweep(system: &SystemSpec, grid: &GridSpec) -> Result<Vec<SweepRow>> {
    let k = system.k();
    if !(2..=3).contains(&k) {
        return Err(Error::Unsupported(format!(
            "region sweeps support k in {{2, 3}}, got {k}"
        )));
    }
    for len in [grid.lower.len(), grid.upper.len(), grid.points.len()] {
        check_len(k, len)?;
    }
    if grid.points.iter().any(|&p| p < 2) {
        return Err(Error::InvalidInput("grid needs at least 2 points per axis".into()));
    }
    if (0..k).any(|d| !(grid.lower[d] >= 0.0 && grid.upper[d] >= grid.lower[d])) {
        return Err(Error::InvalidInput("grid bounds must satisfy 0 <= lower <= upper".into()));
    }
    let axes: Vec<Vec<f64>> = (0..k).map(|d| grid.axis(d)).collect();
    let total: usize = grid.points.iter().product();
    let mut rows = Vec::with_capacity(total);
    let mut idx = vec![0usize; k];
    for _ in 0..total {
        let lambda: Vec<f64> = (0..k).map(|d| axes[d][idx[d]]).collect();
        rows.push(SweepRow {
            uncoded: uncoded_contains(system, &lambda)?.verdict,
            coded: coded_contains_waterfill(system, &lambda)?.verdict,
            lambda,
        });
        for d in (0..k).rev() {
            idx[d] += 1;
            if idx[d] < grid.points[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(rows)
}

/// CSV with header `lambda_1,...,lambda_k,uncoded,coded`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let k = rows.first().map_or(0, |r| r.lambda.len());
    let mut out: String = (1..=k).map(|i| format!("lambda_{i},")).collect();
    out.push_str("uncoded,coded\n");
    for r in rows {
        for l in &r.lambda {
            out.push_str(&format!("{l},"));
        }
        out.push_str(&format!("{},{}\n", r.uncoded, r.coded));
    }
    out
}
