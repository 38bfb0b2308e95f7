use super::{combinations, RecoveryPattern};
use crate::error::{Error, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

/// Generator matrix of a systematic MDS code over the rationals.
///
/// Row `i < k` is the standard basis vector `e_i`; the remaining `n_coded`
/// rows are the coded linear combinations.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    k: usize,
    rows: Vec<Vec<BigRational>>,
}

fn rat(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

impl GeneratorSpec {
    /// Systematic code whose coded rows are `(1, x, x^2, .., x^{k-1})` for
    /// `x = 1..=n_coded`. Positive distinct nodes make the Vandermonde block
    /// totally positive, so every square submatrix is nonsingular.
    pub fn vandermonde(k: usize, n_coded: usize) -> Result<Self> {
        let coded = (1..=n_coded as i64)
            .map(|x| {
                let mut row = Vec::with_capacity(k);
                let mut p = BigInt::one();
                for _ in 0..k {
                    row.push(BigRational::from_integer(p.clone()));
                    p *= x;
                }
                row
            })
            .collect();
        Self::from_rational_rows(k, coded)
    }

    /// Builds a generator from integer coded rows, checking the MDS property.
    pub fn from_coded_rows(k: usize, coded: &[Vec<i64>]) -> Result<Self> {
        let coded = coded
            .iter()
            .map(|r| r.iter().map(|&v| rat(v)).collect())
            .collect();
        Self::from_rational_rows(k, coded)
    }

    fn from_rational_rows(k: usize, coded: Vec<Vec<BigRational>>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be positive".into()));
        }
        if let Some(r) = coded.iter().find(|r| r.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: r.len(),
            });
        }
        let mut rows: Vec<Vec<BigRational>> = (0..k)
            .map(|i| (0..k).map(|j| if i == j { rat(1) } else { rat(0) }).collect())
            .collect();
        rows.extend(coded);
        let g = GeneratorSpec { k, rows };
        let idx: Vec<usize> = (0..g.rows.len()).collect();
        for subset in combinations(&idx, k) {
            let sel: Vec<Vec<BigRational>> = subset.iter().map(|&i| g.rows[i].clone()).collect();
            if rank(sel) < k {
                return Err(Error::InvalidInput(format!(
                    "generator is not MDS: rows {subset:?} are linearly dependent"
                )));
            }
        }
        Ok(g)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_coded(&self) -> usize {
        self.rows.len() - self.k
    }

    pub fn systematic_row(&self, job_type: usize) -> &[BigRational] {
        &self.rows[job_type]
    }

    pub fn coded_row(&self, j: usize) -> &[BigRational] {
        &self.rows[self.k + j]
    }

    /// Whether `pattern` recovers its job type for every choice of concrete
    /// coded servers: `e_job_type` must lie in the span of any `num_coded`
    /// coded rows together with the helper systematic rows.
    pub fn pattern_decodable(&self, pattern: &RecoveryPattern) -> Result<bool> {
        let k = self.k;
        if pattern.job_type >= k || pattern.helper_types.iter().any(|&h| h >= k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: pattern
                    .helper_types
                    .iter()
                    .copied()
                    .chain([pattern.job_type])
                    .max()
                    .unwrap_or(0)
                    + 1,
            });
        }
        if pattern.num_coded > self.n_coded() {
            return Err(Error::DimensionMismatch {
                expected: self.n_coded(),
                got: pattern.num_coded,
            });
        }
        let target = self.systematic_row(pattern.job_type).to_vec();
        if pattern.is_own() {
            return Ok(true);
        }
        let coded_idx: Vec<usize> = (0..self.n_coded()).collect();
        for chosen in combinations(&coded_idx, pattern.num_coded) {
            let mut sel: Vec<Vec<BigRational>> = pattern
                .helper_types
                .iter()
                .map(|&h| self.systematic_row(h).to_vec())
                .collect();
            sel.extend(chosen.iter().map(|&j| self.coded_row(j).to_vec()));
            if !span_contains(&sel, &target) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Exact test of whether `target` lies in the row span of `rows`.
pub fn span_contains(rows: &[Vec<BigRational>], target: &[BigRational]) -> bool {
    let base = rank(rows.to_vec());
    let mut with = rows.to_vec();
    with.push(target.to_vec());
    rank(with) == base
}

/// Rank by fraction-exact Gaussian elimination.
pub(crate) fn rank(mut m: Vec<Vec<BigRational>>) -> usize {
    let cols = m.first().map_or(0, |r| r.len());
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..m.len()).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let prow = m[r].clone();
        for (i, row) in m.iter_mut().enumerate() {
            if i != r && !row[c].is_zero() {
                let f = &row[c] / &prow[c];
                for (x, y) in row[c..cols].iter_mut().zip(&prow[c..cols]) {
                    *x -= &f * y;
                }
            }
        }
        r += 1;
        if r == m.len() {
            break;
        }
    }
    r
}
