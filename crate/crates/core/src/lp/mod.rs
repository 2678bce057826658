//! Dense bounded-variable simplex and a binary branch-and-bound on top of it.
//!
//! Problems are small (a few hundred columns), so everything is kept in a
//! dense tableau and no factorization is maintained.

mod bnb;
mod simplex;

pub use bnb::{branch_and_bound, branch_and_bound_with_stats, BnbStats};
pub use simplex::simplex_solve;

/// Primal feasibility tolerance on rows and bounds.
pub const FEAS_TOL: f64 = 1e-7;
/// Distance from 0/1 below which a binary counts as integral.
pub const INT_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("variable {var} has lower bound {lower} above upper bound {upper}")]
    InvalidBounds { var: usize, lower: f64, upper: f64 },
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("binary index {0} out of range or not bounded within [0, 1]")]
    InvalidBinary(usize),
    #[error("simplex did not terminate within {0} iterations")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

/// `min c·x` subject to `rows[i]·x (senses[i]) rhs[i]` and `lower ≤ x ≤ upper`.
/// Bounds may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub senses: Vec<Sense>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// Objective `c` with every variable in `[0, ∞)` and no rows.
    pub fn new(c: Vec<f64>) -> Self {
        let n = c.len();
        Self {
            c,
            rows: Vec::new(),
            senses: Vec::new(),
            rhs: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) -> usize {
        self.rows.push(coeffs);
        self.senses.push(sense);
        self.rhs.push(rhs);
        self.rows.len() - 1
    }

    /// Adds a row from `(column, coefficient)` pairs; repeated columns accumulate.
    pub fn add_sparse_row(&mut self, terms: &[(usize, f64)], sense: Sense, rhs: f64) -> usize {
        let mut row = vec![0.0; self.n_vars()];
        for &(j, a) in terms {
            row[j] += a;
        }
        self.add_row(row, sense, rhs)
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        let m = self.n_rows();
        if self.senses.len() != m || self.rhs.len() != m {
            return Err(LpError::Dimension(format!(
                "{m} rows but {} senses and {} rhs entries",
                self.senses.len(),
                self.rhs.len()
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Dimension(format!(
                "{n} variables but bound vectors of other length"
            )));
        }
        if let Some(i) = self.rows.iter().position(|r| r.len() != n) {
            return Err(LpError::Dimension(format!(
                "row {i} has {} entries, expected {n}",
                self.rows[i].len()
            )));
        }
        if self.c.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("objective"));
        }
        if self.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("constraint matrix"));
        }
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("rhs"));
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(LpError::InvalidBounds {
                    var: j,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(())
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            let lhs: f64 = row.iter().zip(x).map(|(a, x)| a * x).sum();
            let v = match self.senses[i] {
                Sense::Le => lhs - self.rhs[i],
                Sense::Ge => self.rhs[i] - lhs,
                Sense::Eq => (lhs - self.rhs[i]).abs(),
            };
            worst = worst.max(v);
        }
        for (j, &xj) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - xj).max(xj - self.upper[j]);
        }
        worst
    }
}

/// A linear program some of whose variables must take values in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpProblem {
    pub lp: LinearProgram,
    pub binaries: Vec<usize>,
}

impl MilpProblem {
    pub fn validate(&self) -> Result<(), LpError> {
        self.lp.validate()?;
        for &j in &self.binaries {
            if j >= self.lp.n_vars() || self.lp.lower[j] < 0.0 || self.lp.upper[j] > 1.0 {
                return Err(LpError::InvalidBinary(j));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Empty unless `status` is `Optimal`.
    pub x: Vec<f64>,
    /// `c·x` when optimal, `+∞` when infeasible, `−∞` when unbounded.
    pub objective: f64,
}

impl LpSolution {
    pub fn infeasible() -> Self {
        Self {
            status: LpStatus::Infeasible,
            x: Vec::new(),
            objective: f64::INFINITY,
        }
    }

    pub fn unbounded() -> Self {
        Self {
            status: LpStatus::Unbounded,
            x: Vec::new(),
            objective: f64::NEG_INFINITY,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}
