//! Dense two-phase primal simplex with Bland's rule.
//!
//! Minimizes `c'x` subject to linear rows and `x >= 0`. Sized for a few
//! hundred variables; no presolve, no sparse factorization.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
    IterationLimit,
}

pub const PIVOT_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 200_000;

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn push(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.num_vars());
        self.rows.push(Row { coeffs, sense, rhs });
    }
}

struct Tableau {
    /// `rows x (cols + 1)`; last column is the right-hand side.
    a: Vec<Vec<f64>>,
    /// Reduced costs, last entry holds minus the objective value.
    cost: Vec<f64>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.a[r][c];
        for v in self.a[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.a[r].clone();
        for (i, row) in self.a.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        let f = self.cost[c];
        if f != 0.0 {
            for (v, pv) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.cost[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Runs Bland's rule over columns `< allowed`. Returns false when unbounded.
    fn optimize(&mut self, allowed: usize) -> Result<bool, ()> {
        let rhs = self.cols;
        for _ in 0..MAX_PIVOTS {
            let entering = (0..allowed).find(|&j| self.cost[j] < -PIVOT_TOL);
            let Some(c) = entering else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for (i, row) in self.a.iter().enumerate() {
                let v = row[c];
                if v > PIVOT_TOL {
                    let ratio = row[rhs] / v;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12
                                || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match best {
                None => return Ok(false),
                Some((r, _)) => self.pivot(r, c),
            }
        }
        Err(())
    }
}

pub fn solve(lp: &LinearProgram) -> LpOutcome {
    let n = lp.num_vars();
    let m = lp.rows.len();
    // Normalize to non-negative right-hand sides.
    let rows: Vec<Row> = lp
        .rows
        .iter()
        .map(|r| {
            if r.rhs < 0.0 {
                Row {
                    coeffs: r.coeffs.iter().map(|v| -v).collect(),
                    sense: match r.sense {
                        Sense::Le => Sense::Ge,
                        Sense::Ge => Sense::Le,
                        Sense::Eq => Sense::Eq,
                    },
                    rhs: -r.rhs,
                }
            } else {
                r.clone()
            }
        })
        .collect();
    let num_slack = rows.iter().filter(|r| r.sense != Sense::Eq).count();
    let num_art = rows.iter().filter(|r| r.sense != Sense::Le).count();
    let art_start = n + num_slack;
    let cols = art_start + num_art;

    let mut a = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0; m];
    let (mut s, mut t) = (n, art_start);
    for (i, row) in rows.iter().enumerate() {
        a[i][..n].copy_from_slice(&row.coeffs);
        a[i][cols] = row.rhs;
        match row.sense {
            Sense::Le => {
                a[i][s] = 1.0;
                basis[i] = s;
                s += 1;
            }
            Sense::Ge => {
                a[i][s] = -1.0;
                s += 1;
                a[i][t] = 1.0;
                basis[i] = t;
                t += 1;
            }
            Sense::Eq => {
                a[i][t] = 1.0;
                basis[i] = t;
                t += 1;
            }
        }
    }

    // Phase I: minimize the sum of artificials.
    let mut cost = vec![0.0; cols + 1];
    for c in cost.iter_mut().take(cols).skip(art_start) {
        *c = 1.0;
    }
    for (i, row) in a.iter().enumerate() {
        if basis[i] >= art_start {
            for (c, v) in cost.iter_mut().zip(row) {
                *c -= v;
            }
        }
    }
    for &b in &basis {
        cost[b] = 0.0;
    }
    let mut tab = Tableau {
        a,
        cost,
        basis,
        cols,
    };
    if num_art > 0 {
        match tab.optimize(cols) {
            Ok(_) => {}
            Err(()) => return LpOutcome::IterationLimit,
        }
        let infeasibility = -tab.cost[cols];
        let scale = 1.0 + rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        if infeasibility > FEAS_TOL * scale {
            return LpOutcome::Infeasible;
        }
        // Drive artificials out of the basis, dropping redundant rows.
        let mut i = 0;
        while i < tab.a.len() {
            if tab.basis[i] >= art_start {
                match (0..art_start).find(|&j| tab.a[i][j].abs() > PIVOT_TOL) {
                    Some(j) => tab.pivot(i, j),
                    None => {
                        tab.a.remove(i);
                        tab.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
    }

    // Phase II on the original objective, artificials barred from entering.
    let mut cost = vec![0.0; cols + 1];
    cost[..n].copy_from_slice(&lp.objective);
    for (i, row) in tab.a.iter().enumerate() {
        let cb = if tab.basis[i] < n {
            lp.objective[tab.basis[i]]
        } else {
            0.0
        };
        if cb != 0.0 {
            for (c, v) in cost.iter_mut().zip(row) {
                *c -= cb * v;
            }
        }
    }
    for &b in &tab.basis {
        cost[b] = 0.0;
    }
    tab.cost = cost;
    match tab.optimize(art_start) {
        Ok(true) => {}
        Ok(false) => return LpOutcome::Unbounded,
        Err(()) => return LpOutcome::IterationLimit,
    }
    let mut x = vec![0.0; n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.a[i][cols].max(0.0);
        }
    }
    let objective = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
    LpOutcome::Optimal { x, objective }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(out: LpOutcome) -> (Vec<f64>, f64) {
        match out {
            LpOutcome::Optimal { x, objective } => (x, objective),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![-3.0, -5.0];
        lp.push(vec![1.0, 0.0], Sense::Le, 4.0);
        lp.push(vec![0.0, 2.0], Sense::Le, 12.0);
        lp.push(vec![3.0, 2.0], Sense::Le, 18.0);
        let (x, obj) = optimal(solve(&lp));
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 6.0).abs() < 1e-12);
        assert!((obj + 36.0).abs() < 1e-12);
    }

    #[test]
    fn equality_and_ge_rows() {
        // min x + 2y s.t. x + y = 3, y >= 1 -> (2, 1), 4
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 2.0];
        lp.push(vec![1.0, 1.0], Sense::Eq, 3.0);
        lp.push(vec![0.0, 1.0], Sense::Ge, 1.0);
        let (x, obj) = optimal(solve(&lp));
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
        assert!((obj - 4.0).abs() < 1e-12);
    }

    #[test]
    fn negative_rhs_is_normalized() {
        // min x s.t. -x <= -2 -> x = 2
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![1.0];
        lp.push(vec![-1.0], Sense::Le, -2.0);
        let (x, _) = optimal(solve(&lp));
        assert!((x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![1.0];
        lp.push(vec![1.0], Sense::Le, 1.0);
        lp.push(vec![1.0], Sense::Ge, 2.0);
        assert_eq!(solve(&lp), LpOutcome::Infeasible);

        let mut lp = LinearProgram::new(1);
        lp.objective = vec![-1.0];
        lp.push(vec![1.0], Sense::Ge, 0.0);
        assert_eq!(solve(&lp), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities_are_dropped() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 1.0];
        lp.push(vec![1.0, 1.0], Sense::Eq, 2.0);
        lp.push(vec![2.0, 2.0], Sense::Eq, 4.0);
        let (_, obj) = optimal(solve(&lp));
        assert!((obj - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Klee-Minty-like degeneracy: many tight constraints through the origin.
        let mut lp = LinearProgram::new(3);
        lp.objective = vec![-0.75, 20.0, -0.5];
        lp.push(vec![0.25, -8.0, -1.0], Sense::Le, 0.0);
        lp.push(vec![0.5, -12.0, -0.5], Sense::Le, 0.0);
        lp.push(vec![0.0, 0.0, 1.0], Sense::Le, 1.0);
        let (x, obj) = optimal(solve(&lp));
        assert!((obj + 1.25).abs() < 1e-12, "{obj}");
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[2] - 1.0).abs() < 1e-12);
    }
}
