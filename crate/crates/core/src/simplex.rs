//! Dense two-phase primal simplex for small linear programs.
//!
//! Problems here have at most a few dozen variables, so a full tableau with
//! Bland's anti-cycling rule is both fast enough and fully deterministic.

const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize objective . x` subject to the constraints and `x >= 0`.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
    /// Pivot budget exhausted; never expected for the problem sizes used here.
    IterationLimit,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.num_vars(), "constraint width");
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn solve(&self) -> LpOutcome {
        Tableau::build(self).solve(&self.objective)
    }
}

struct Tableau {
    /// `rows x (cols + 1)`; the last column is the right-hand side.
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    num_vars: usize,
    /// Columns `>= first_artificial` are artificial.
    first_artificial: usize,
    cols: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let m = lp.constraints.len();
        // Flip rows so every rhs is non-negative.
        let rows: Vec<(Vec<f64>, Relation, f64)> = lp
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let rel = match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (c.coeffs.iter().map(|v| -v).collect(), rel, -c.rhs)
                } else {
                    (c.coeffs.clone(), c.relation, c.rhs)
                }
            })
            .collect();
        let num_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let num_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let first_artificial = n + num_slack;
        let cols = first_artificial + num_art;
        let mut a = vec![vec![0.0; cols + 1]; m];
        let mut basis = vec![0; m];
        let (mut s, mut art) = (n, first_artificial);
        for (i, (coeffs, rel, rhs)) in rows.iter().enumerate() {
            a[i][..n].copy_from_slice(coeffs);
            a[i][cols] = *rhs;
            match rel {
                Relation::Le => {
                    a[i][s] = 1.0;
                    basis[i] = s;
                    s += 1;
                }
                Relation::Ge => {
                    a[i][s] = -1.0;
                    s += 1;
                    a[i][art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    a[i][art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
            }
        }
        Tableau {
            a,
            basis,
            num_vars: n,
            first_artificial,
            cols,
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.a[row][col];
        for v in self.a[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.a[row].clone();
        for (i, r) in self.a.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f != 0.0 {
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Maximises `cost . x` over columns `< usable`. Returns `Ok(false)` when
    /// unbounded, `Err(())` on the pivot limit.
    fn optimize(&mut self, cost: &[f64], usable: usize) -> Result<bool, ()> {
        for _ in 0..MAX_PIVOTS {
            // Reduced cost d_j = c_j - c_B . B^-1 a_j; enter on the lowest
            // index with d_j > 0 (Bland).
            let entering = (0..usable).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let mut d = cost[j];
                for (i, &b) in self.basis.iter().enumerate() {
                    d -= cost[b] * self.a[i][j];
                }
                d > PIVOT_TOL
            });
            let Some(col) = entering else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.a.len() {
                let coef = self.a[i][col];
                if coef > PIVOT_TOL {
                    let ratio = self.a[i][self.cols] / coef;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12
                                || ((ratio - br).abs() <= 1e-12 && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = best else {
                return Ok(false);
            };
            self.pivot(row, col);
        }
        Err(())
    }

    fn solve(mut self, objective: &[f64]) -> LpOutcome {
        if self.first_artificial < self.cols {
            // Phase 1: maximise -(sum of artificials).
            let mut cost = vec![0.0; self.cols];
            for c in cost.iter_mut().skip(self.first_artificial) {
                *c = -1.0;
            }
            match self.optimize(&cost, self.cols) {
                Err(()) => return LpOutcome::IterationLimit,
                Ok(false) => return LpOutcome::Infeasible,
                Ok(true) => {}
            }
            let infeas: f64 = self
                .basis
                .iter()
                .enumerate()
                .filter(|(_, &b)| b >= self.first_artificial)
                .map(|(i, _)| self.a[i][self.cols])
                .sum();
            if infeas > FEAS_TOL {
                return LpOutcome::Infeasible;
            }
            // Drive remaining zero-level artificials out, dropping redundant rows.
            let mut i = 0;
            while i < self.a.len() {
                if self.basis[i] >= self.first_artificial {
                    match (0..self.first_artificial).find(|&j| self.a[i][j].abs() > PIVOT_TOL) {
                        Some(j) => {
                            self.pivot(i, j);
                            i += 1;
                        }
                        None => {
                            self.a.remove(i);
                            self.basis.remove(i);
                        }
                    }
                } else {
                    i += 1;
                }
            }
        }
        let mut cost = vec![0.0; self.cols];
        cost[..self.num_vars].copy_from_slice(objective);
        match self.optimize(&cost, self.first_artificial) {
            Err(()) => LpOutcome::IterationLimit,
            Ok(false) => LpOutcome::Unbounded,
            Ok(true) => {
                let mut x = vec![0.0; self.num_vars];
                for (i, &b) in self.basis.iter().enumerate() {
                    if b < self.num_vars {
                        x[b] = self.a[i][self.cols];
                    }
                }
                let value = x.iter().zip(objective).map(|(a, b)| a * b).sum();
                LpOutcome::Optimal { x, value }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(lp: &LinearProgram) -> (Vec<f64>, f64) {
        match lp.solve() {
            LpOutcome::Optimal { x, value } => (x, value),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_max() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36.
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![3.0, 5.0];
        lp.add(vec![1.0, 0.0], Relation::Le, 4.0);
        lp.add(vec![0.0, 2.0], Relation::Le, 12.0);
        lp.add(vec![3.0, 2.0], Relation::Le, 18.0);
        let (x, v) = optimal(&lp);
        assert!((v - 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // min x + y (max -x - y), x + y >= 2, x - y = 1 -> x = 1.5, y = 0.5.
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![-1.0, -1.0];
        lp.add(vec![1.0, 1.0], Relation::Ge, 2.0);
        lp.add(vec![1.0, -1.0], Relation::Eq, 1.0);
        let (x, v) = optimal(&lp);
        assert!((v + 2.0).abs() < 1e-9);
        assert!((x[0] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_is_normalised() {
        // -x <= -3 means x >= 3; max -x -> x = 3.
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![-1.0];
        lp.add(vec![-1.0], Relation::Le, -3.0);
        let (x, _) = optimal(&lp);
        assert!((x[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.add(vec![1.0], Relation::Le, 1.0);
        lp.add(vec![1.0], Relation::Ge, 2.0);
        assert_eq!(lp.solve(), LpOutcome::Infeasible);

        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 0.0];
        lp.add(vec![1.0, -1.0], Relation::Le, 1.0);
        assert_eq!(lp.solve(), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 2.0];
        lp.add(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.add(vec![2.0, 2.0], Relation::Eq, 2.0);
        let (x, v) = optimal(&lp);
        assert!((v - 2.0).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Beale's cycling example; Bland's rule must terminate.
        let mut lp = LinearProgram::new(4);
        lp.objective = vec![0.75, -150.0, 0.02, -6.0];
        lp.add(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0);
        lp.add(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0);
        lp.add(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0);
        let (_, v) = optimal(&lp);
        assert!((v - 0.05).abs() < 1e-9);
    }
}
