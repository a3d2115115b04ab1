//! Dense bounded-variable primal simplex.
//!
//! Every row `a_i x (≤ | = | ≥) b_i` gets a slack `s_i` so that
//! `a_i x + s_i = b_i`, with `s_i ≥ 0`, `s_i = 0` or `s_i ≤ 0` respectively.
//! Rows whose slack cannot absorb the initial residual receive an artificial
//! column; phase 1 drives the artificials to zero, phase 2 optimizes the
//! real cost. Nonbasic variables sit at a finite bound (or at zero when
//! free), so variable bounds never become explicit rows.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Reduced-cost optimality tolerance.
pub const OPT_TOL: f64 = 1e-9;
/// Smallest pivot magnitude accepted in the ratio test.
pub const PIVOT_TOL: f64 = 1e-9;
/// Residual infeasibility above which phase 1 reports an infeasible LP.
pub const FEAS_TOL: f64 = 1e-7;
/// Degenerate pivots tolerated before switching to Bland's rule.
pub const BLAND_AFTER: usize = 5_000;
/// Hard pivot cap.
pub const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("pivot cap of {pivots} reached; cycling suspected")]
    CycleSuspected { pivots: usize },
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("malformed problem: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

/// `min cᵀx  s.t.  A x (senses) b,  lower ≤ x ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub a: DMatrix<f64>,
    pub senses: Vec<RowSense>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cost: Vec<f64>,
}

impl LpProblem {
    /// Problem with `n` variables, no rows, zero cost and bounds `[0, ∞)`.
    pub fn new(n: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, n),
            senses: Vec::new(),
            rhs: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            cost: vec![0.0; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    /// Appends a row given as sparse `(column, coefficient)` terms.
    pub fn add_row(&mut self, terms: &[(usize, f64)], sense: RowSense, rhs: f64) {
        let m = self.a.nrows();
        let n = self.a.ncols();
        let a = std::mem::replace(&mut self.a, DMatrix::zeros(0, 0));
        let mut a = a.insert_row(m, 0.0);
        for &(j, v) in terms {
            assert!(j < n, "column {j} out of range");
            a[(m, j)] += v;
        }
        self.a = a;
        self.senses.push(sense);
        self.rhs.push(rhs);
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let ax = &self.a * xv;
        let mut worst: f64 = 0.0;
        for i in 0..self.n_rows() {
            let d = ax[i] - self.rhs[i];
            let v = match self.senses[i] {
                RowSense::Le => d.max(0.0),
                RowSense::Ge => (-d).max(0.0),
                RowSense::Eq => d.abs(),
            };
            worst = worst.max(v);
        }
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        worst
    }

    fn validate(&self) -> Result<(), LpError> {
        let (m, n) = self.a.shape();
        if self.senses.len() != m || self.rhs.len() != m {
            return Err(LpError::Malformed("row data length mismatch".into()));
        }
        if self.lower.len() != n || self.upper.len() != n || self.cost.len() != n {
            return Err(LpError::Malformed("column data length mismatch".into()));
        }
        if let Some(j) = (0..n).find(|&j| !(self.lower[j] <= self.upper[j])) {
            return Err(LpError::Malformed(format!("variable {j} has lower > upper")));
        }
        if self.a.iter().chain(&self.rhs).chain(&self.cost).any(|v| !v.is_finite()) {
            return Err(LpError::Malformed("non-finite coefficient".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(&self) -> Option<&LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

enum StepResult {
    Optimal,
    Unbounded,
    Moved,
}

struct Tableau {
    m: usize,
    n_struct: usize,
    /// Original columns `[A | I | artificials]`.
    full: DMatrix<f64>,
    rhs: Vec<f64>,
    /// Current `B⁻¹ · full`.
    t: DMatrix<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    value: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    cost: Vec<f64>,
    reduced: Vec<f64>,
    artificial_start: usize,
    pivots: usize,
    degenerate: usize,
}

impl Tableau {
    fn build(p: &LpProblem) -> Self {
        let (m, n) = p.a.shape();
        let mut lower = p.lower.clone();
        let mut upper = p.upper.clone();
        let mut value: Vec<f64> = (0..n)
            .map(|j| {
                if p.lower[j].is_finite() {
                    p.lower[j]
                } else if p.upper[j].is_finite() {
                    p.upper[j]
                } else {
                    0.0
                }
            })
            .collect();
        for sense in &p.senses {
            let (lo, hi) = match sense {
                RowSense::Le => (0.0, f64::INFINITY),
                RowSense::Eq => (0.0, 0.0),
                RowSense::Ge => (f64::NEG_INFINITY, 0.0),
            };
            lower.push(lo);
            upper.push(hi);
            value.push(0.0);
        }
        let x0 = DVector::from_column_slice(&value[..n]);
        let residual = DVector::from_column_slice(&p.rhs) - &p.a * x0;

        let mut basis = Vec::with_capacity(m);
        let mut artificial_rows = Vec::new();
        for i in 0..m {
            let r = residual[i];
            let slack = n + i;
            if r >= lower[slack] && r <= upper[slack] {
                value[slack] = r;
                basis.push(slack);
            } else {
                artificial_rows.push((i, if r >= 0.0 { 1.0 } else { -1.0 }));
                basis.push(usize::MAX);
            }
        }
        let artificial_start = n + m;
        let total = artificial_start + artificial_rows.len();
        let mut full = DMatrix::zeros(m, total);
        full.view_mut((0, 0), (m, n)).copy_from(&p.a);
        for i in 0..m {
            full[(i, n + i)] = 1.0;
        }
        for (k, &(i, sign)) in artificial_rows.iter().enumerate() {
            let col = artificial_start + k;
            full[(i, col)] = sign;
            basis[i] = col;
            lower.push(0.0);
            upper.push(f64::INFINITY);
            value.push(residual[i].abs());
        }
        let mut t = full.clone();
        for i in 0..m {
            let piv = full[(i, basis[i])];
            if piv != 1.0 {
                t.row_mut(i).scale_mut(1.0 / piv);
            }
        }
        let mut is_basic = vec![false; total];
        for &b in &basis {
            is_basic[b] = true;
        }
        Self {
            m,
            n_struct: n,
            full,
            rhs: p.rhs.clone(),
            t,
            lower,
            upper,
            value,
            basis,
            is_basic,
            cost: vec![0.0; total],
            reduced: vec![0.0; total],
            artificial_start,
            pivots: 0,
            degenerate: 0,
        }
    }

    fn set_cost(&mut self, cost: Vec<f64>) {
        self.cost = cost;
        let total = self.cost.len();
        for j in 0..total {
            let mut d = self.cost[j];
            for i in 0..self.m {
                let cb = self.cost[self.basis[i]];
                if cb != 0.0 {
                    d -= cb * self.t[(i, j)];
                }
            }
            self.reduced[j] = d;
        }
        for &b in &self.basis {
            self.reduced[b] = 0.0;
        }
    }

    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.cost.len() {
            if self.is_basic[j] || self.lower[j] == self.upper[j] {
                continue;
            }
            let d = self.reduced[j];
            let at_lower = self.value[j] <= self.lower[j];
            let at_upper = self.value[j] >= self.upper[j];
            let dir = if d < -OPT_TOL && !at_upper {
                1.0
            } else if d > OPT_TOL && !at_lower {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            if best.is_none_or(|(_, _, score)| d.abs() > score) {
                best = Some((j, dir, d.abs()));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn step(&mut self, bland: bool) -> Result<StepResult, LpError> {
        let Some((q, dir)) = self.choose_entering(bland) else {
            return Ok(StepResult::Optimal);
        };
        let mut step = if self.lower[q].is_finite() && self.upper[q].is_finite() {
            self.upper[q] - self.lower[q]
        } else {
            f64::INFINITY
        };
        let mut leave: Option<(usize, f64)> = None;
        let mut leave_piv = 0.0;
        for i in 0..self.m {
            let alpha = dir * self.t[(i, q)];
            let b = self.basis[i];
            let limit = if alpha > PIVOT_TOL && self.lower[b].is_finite() {
                ((self.value[b] - self.lower[b]) / alpha).max(0.0)
            } else if alpha < -PIVOT_TOL && self.upper[b].is_finite() {
                ((self.upper[b] - self.value[b]) / -alpha).max(0.0)
            } else {
                continue;
            };
            let target = if alpha > 0.0 { self.lower[b] } else { self.upper[b] };
            let better = match leave {
                None => limit < step,
                Some(_) if bland => {
                    limit < step - 1e-12 || (limit <= step + 1e-12 && b < self.basis[leave.unwrap().0])
                }
                Some(_) => limit < step - 1e-12 || (limit <= step + 1e-12 && alpha.abs() > leave_piv),
            };
            if better {
                step = limit;
                leave = Some((i, target));
                leave_piv = alpha.abs();
            }
        }
        if step.is_infinite() {
            return Ok(StepResult::Unbounded);
        }

        self.pivots += 1;
        if step <= 1e-12 {
            self.degenerate += 1;
        }
        if step > 0.0 {
            self.value[q] += dir * step;
            for i in 0..self.m {
                let a = self.t[(i, q)];
                if a != 0.0 {
                    self.value[self.basis[i]] -= dir * step * a;
                }
            }
        }
        let Some((r, target)) = leave else {
            // bound flip, basis unchanged
            self.value[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
            return Ok(StepResult::Moved);
        };
        let old = self.basis[r];
        self.value[old] = target;
        self.pivot(r, q)?;
        if old >= self.artificial_start {
            self.lower[old] = 0.0;
            self.upper[old] = 0.0;
        }
        Ok(StepResult::Moved)
    }

    fn pivot(&mut self, r: usize, q: usize) -> Result<(), LpError> {
        let piv = self.t[(r, q)];
        if piv.abs() < 1e-14 || !piv.is_finite() {
            return Err(LpError::NumericalBreakdown(format!("pivot {piv:e} on ({r}, {q})")));
        }
        let cols = self.t.ncols();
        self.t.row_mut(r).scale_mut(1.0 / piv);
        let pivot_row: Vec<f64> = self.t.row(r).iter().copied().collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[(i, q)];
            if f == 0.0 {
                continue;
            }
            for j in 0..cols {
                let pr = pivot_row[j];
                if pr != 0.0 {
                    self.t[(i, j)] -= f * pr;
                }
            }
            self.t[(i, q)] = 0.0;
        }
        let dq = self.reduced[q];
        if dq != 0.0 {
            for j in 0..cols {
                self.reduced[j] -= dq * pivot_row[j];
            }
        }
        self.reduced[q] = 0.0;
        let old = self.basis[r];
        self.is_basic[old] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
        Ok(())
    }

    fn run(&mut self) -> Result<StepResult, LpError> {
        loop {
            if self.pivots >= MAX_PIVOTS {
                return Err(LpError::CycleSuspected { pivots: self.pivots });
            }
            let bland = self.degenerate >= BLAND_AFTER;
            match self.step(bland)? {
                StepResult::Moved => continue,
                other => return Ok(other),
            }
        }
    }

    fn artificial_sum(&self) -> f64 {
        self.value[self.artificial_start..].iter().map(|v| v.abs()).sum()
    }

    /// Pivots zero-valued artificials out of the basis where possible.
    fn drive_out_artificials(&mut self) -> Result<(), LpError> {
        for r in 0..self.m {
            let b = self.basis[r];
            if b < self.artificial_start {
                continue;
            }
            let candidate = (0..self.artificial_start)
                .filter(|&j| !self.is_basic[j])
                .max_by(|&a, &b| self.t[(r, a)].abs().total_cmp(&self.t[(r, b)].abs()));
            if let Some(j) = candidate {
                if self.t[(r, j)].abs() > 1e-7 {
                    self.pivot(r, j)?;
                    self.pivots += 1;
                }
            }
        }
        for j in self.artificial_start..self.cost.len() {
            self.lower[j] = 0.0;
            self.upper[j] = 0.0;
            if !self.is_basic[j] {
                self.value[j] = 0.0;
            }
        }
        Ok(())
    }

    /// Recomputes basic values from the original columns with an LU solve.
    fn refresh_basic_values(&mut self) -> Result<(), LpError> {
        if self.m == 0 {
            return Ok(());
        }
        let mut rhs = DVector::from_column_slice(&self.rhs);
        for j in 0..self.cost.len() {
            if !self.is_basic[j] && self.value[j] != 0.0 {
                rhs.axpy(-self.value[j], &self.full.column(j), 1.0);
            }
        }
        let b = DMatrix::from_fn(self.m, self.m, |i, k| self.full[(i, self.basis[k])]);
        let xb = b
            .lu()
            .solve(&rhs)
            .ok_or_else(|| LpError::NumericalBreakdown("singular basis".into()))?;
        for k in 0..self.m {
            self.value[self.basis[k]] = xb[k];
        }
        Ok(())
    }
}

/// Solves an LP with the two-phase bounded-variable primal simplex.
pub fn solve_lp(problem: &LpProblem) -> Result<LpOutcome, LpError> {
    problem.validate()?;
    let mut tab = Tableau::build(problem);
    let total = tab.cost.len();

    if tab.artificial_start < total {
        let mut phase1 = vec![0.0; total];
        phase1[tab.artificial_start..].fill(1.0);
        tab.set_cost(phase1);
        tab.run()?;
        let scale = 1.0 + problem.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if tab.artificial_sum() > FEAS_TOL * scale {
            return Ok(LpOutcome::Infeasible);
        }
        tab.drive_out_artificials()?;
    }

    let mut cost = problem.cost.clone();
    cost.resize(total, 0.0);
    tab.set_cost(cost);
    if let StepResult::Unbounded = tab.run()? {
        return Ok(LpOutcome::Unbounded);
    }
    tab.refresh_basic_values()?;

    let mut x: Vec<f64> = tab.value[..tab.n_struct].to_vec();
    let violation = problem.max_violation(&x);
    let scale = 1.0 + problem.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if violation > 1e-6 * scale {
        return Err(LpError::NumericalBreakdown(format!(
            "final point violates constraints by {violation:e}"
        )));
    }
    for (j, v) in x.iter_mut().enumerate() {
        *v = v.clamp(problem.lower[j], problem.upper[j]);
    }
    Ok(LpOutcome::Optimal(LpSolution {
        objective: problem.objective(&x),
        x,
        pivots: tab.pivots,
    }))
}
