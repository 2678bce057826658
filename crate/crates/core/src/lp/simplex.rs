//! Two-phase primal simplex on a dense tableau with upper-bounded columns.
//!
//! Every variable is first mapped onto a column `0 ≤ y ≤ u`. Nonbasic columns
//! sit at either bound; basic values are kept in `beta`. Pricing is Dantzig's
//! rule, falling back to Bland's rule after a run of degenerate pivots, which
//! guarantees termination.

use super::{LinearProgram, LpError, LpSolution, LpStatus, Sense};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
/// Degenerate pivots in a row before switching to Bland's rule.
const DEGENERATE_STREAK: usize = 30;

#[derive(Debug, Clone, Copy)]
enum ColMap {
    /// `x = offset + y`.
    Shift(usize, f64),
    /// `x = offset − y`.
    Negate(usize, f64),
    /// `x = y⁺ − y⁻`.
    Split(usize, usize),
}

struct Tableau {
    m: usize,
    n: usize,
    /// Row-major `m × n` image of `B⁻¹A`.
    t: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at_upper: Vec<bool>,
    upper: Vec<f64>,
    banned: Vec<bool>,
    d: Vec<f64>,
    iters: usize,
    max_iters: usize,
}

enum Phase {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn row(&self, i: usize) -> &[f64] {
        &self.t[i * self.n..(i + 1) * self.n]
    }

    fn price(&mut self, cost: &[f64]) {
        self.d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.n..(i + 1) * self.n];
                for (dj, a) in self.d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let n = self.n;
        let piv = self.t[r * n + j];
        let mut prow = self.row(r).to_vec();
        for v in prow.iter_mut() {
            *v /= piv;
        }
        prow[j] = 1.0;
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * n + j];
            if f != 0.0 {
                let row = &mut self.t[i * n..(i + 1) * n];
                for (a, p) in row.iter_mut().zip(&prow) {
                    *a -= f * p;
                }
                row[j] = 0.0;
            }
        }
        let f = self.d[j];
        if f != 0.0 {
            for (dj, p) in self.d.iter_mut().zip(&prow) {
                *dj -= f * p;
            }
            self.d[j] = 0.0;
        }
        self.t[r * n..(r + 1) * n].copy_from_slice(&prow);
        self.is_basic[self.basis[r]] = false;
        self.basis[r] = j;
        self.is_basic[j] = true;
    }

    fn value_of_nonbasic(&self, j: usize) -> f64 {
        if self.at_upper[j] {
            self.upper[j]
        } else {
            0.0
        }
    }

    fn entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.n {
            if self.is_basic[j] || self.banned[j] || self.upper[j] <= 0.0 {
                continue;
            }
            let dj = self.d[j];
            let dir = if !self.at_upper[j] && dj < -COST_TOL {
                1.0
            } else if self.at_upper[j] && dj > COST_TOL {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            let score = dj.abs();
            if best.map_or(true, |(_, _, s)| score > s) {
                best = Some((j, dir, score));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn run(&mut self, cost: &[f64]) -> Result<Phase, LpError> {
        self.price(cost);
        let mut streak = 0usize;
        loop {
            self.iters += 1;
            if self.iters > self.max_iters {
                return Err(LpError::IterationLimit(self.max_iters));
            }
            let bland = streak >= DEGENERATE_STREAK;
            let Some((j, dir)) = self.entering(bland) else {
                return Ok(Phase::Optimal);
            };

            let mut theta = self.upper[j];
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let alpha = dir * self.t[i * self.n + j];
                let lim = if alpha > PIVOT_TOL {
                    self.beta[i].max(0.0) / alpha
                } else if alpha < -PIVOT_TOL && self.upper[self.basis[i]].is_finite() {
                    (self.upper[self.basis[i]] - self.beta[i]).max(0.0) / -alpha
                } else {
                    continue;
                };
                let tie = 1e-12 * (1.0 + lim.abs());
                let better = match leave {
                    _ if lim < theta - tie => true,
                    Some((r, a)) if (lim - theta).abs() <= tie => {
                        if bland {
                            self.basis[i] < self.basis[r]
                        } else {
                            alpha.abs() > a.abs()
                        }
                    }
                    _ => false,
                };
                if better {
                    theta = lim;
                    leave = Some((i, alpha));
                }
            }
            if theta.is_infinite() {
                return Ok(Phase::Unbounded);
            }
            streak = if theta <= 1e-12 { streak + 1 } else { 0 };

            if theta > 0.0 {
                for i in 0..self.m {
                    let a = self.t[i * self.n + j];
                    if a != 0.0 {
                        self.beta[i] -= dir * a * theta;
                    }
                }
            }
            match leave {
                None => self.at_upper[j] = !self.at_upper[j],
                Some((r, alpha)) => {
                    let out = self.basis[r];
                    self.at_upper[out] = alpha < 0.0;
                    let entering_value = if dir > 0.0 { theta } else { self.upper[j] - theta };
                    self.pivot(r, j);
                    self.beta[r] = entering_value;
                    self.at_upper[j] = false;
                }
            }
        }
    }

    fn remove_row(&mut self, r: usize) {
        self.t.drain(r * self.n..(r + 1) * self.n);
        self.is_basic[self.basis[r]] = false;
        self.basis.remove(r);
        self.beta.remove(r);
        self.m -= 1;
    }
}

/// Solves `lp` to optimality or returns an infeasible/unbounded verdict.
pub fn simplex_solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let m = lp.n_rows();

    // Structural columns.
    let mut maps = Vec::with_capacity(lp.n_vars());
    let mut col_upper = Vec::new();
    for j in 0..lp.n_vars() {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        let k = col_upper.len();
        if l.is_finite() {
            maps.push(ColMap::Shift(k, l));
            col_upper.push(u - l);
        } else if u.is_finite() {
            maps.push(ColMap::Negate(k, u));
            col_upper.push(f64::INFINITY);
        } else {
            maps.push(ColMap::Split(k, k + 1));
            col_upper.push(f64::INFINITY);
            col_upper.push(f64::INFINITY);
        }
    }
    let n_struct = col_upper.len();

    let mut a = vec![vec![0.0; n_struct]; m];
    let mut b = lp.rhs.clone();
    let mut cost = vec![0.0; n_struct];
    for (j, map) in maps.iter().enumerate() {
        match *map {
            ColMap::Shift(k, off) | ColMap::Negate(k, off) => {
                let s = if matches!(map, ColMap::Shift(..)) { 1.0 } else { -1.0 };
                cost[k] = s * lp.c[j];
                for i in 0..m {
                    let aij = lp.rows[i][j];
                    a[i][k] = s * aij;
                    b[i] -= aij * off;
                }
            }
            ColMap::Split(p, q) => {
                cost[p] = lp.c[j];
                cost[q] = -lp.c[j];
                for i in 0..m {
                    a[i][p] = lp.rows[i][j];
                    a[i][q] = -lp.rows[i][j];
                }
            }
        }
    }

    // Non-negative rhs, then slack and artificial columns.
    let mut senses = lp.senses.clone();
    for i in 0..m {
        if b[i] < 0.0 {
            b[i] = -b[i];
            a[i].iter_mut().for_each(|v| *v = -*v);
            senses[i] = match senses[i] {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
    }
    let n_slack = senses.iter().filter(|s| **s != Sense::Eq).count();
    let n_art = senses.iter().filter(|s| **s != Sense::Le).count();
    let n = n_struct + n_slack + n_art;
    let mut t = vec![0.0; m * n];
    let mut basis = vec![0; m];
    let mut is_art = vec![false; n];
    let (mut next_slack, mut next_art) = (n_struct, n_struct + n_slack);
    for i in 0..m {
        t[i * n..i * n + n_struct].copy_from_slice(&a[i]);
        match senses[i] {
            Sense::Le => {
                t[i * n + next_slack] = 1.0;
                basis[i] = next_slack;
                next_slack += 1;
            }
            Sense::Ge => {
                t[i * n + next_slack] = -1.0;
                next_slack += 1;
                t[i * n + next_art] = 1.0;
                basis[i] = next_art;
                is_art[next_art] = true;
                next_art += 1;
            }
            Sense::Eq => {
                t[i * n + next_art] = 1.0;
                basis[i] = next_art;
                is_art[next_art] = true;
                next_art += 1;
            }
        }
    }
    let mut upper = col_upper;
    upper.resize(n, f64::INFINITY);
    let mut is_basic = vec![false; n];
    for &k in &basis {
        is_basic[k] = true;
    }
    let mut tab = Tableau {
        m,
        n,
        t,
        beta: b.clone(),
        basis,
        is_basic,
        at_upper: vec![false; n],
        upper,
        banned: vec![false; n],
        d: vec![0.0; n],
        iters: 0,
        max_iters: 10_000 + 50 * (m + n),
    };

    if n_art > 0 {
        let phase1: Vec<f64> = is_art.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
        tab.run(&phase1)?;
        let infeasibility: f64 = (0..tab.m)
            .filter(|&i| is_art[tab.basis[i]])
            .map(|i| tab.beta[i].max(0.0))
            .sum();
        let scale = 1.0 + b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        if infeasibility > super::FEAS_TOL * scale {
            return Ok(LpSolution::infeasible());
        }
        // Pivot zero-level artificials out of the basis, dropping redundant rows.
        let mut r = 0;
        while r < tab.m {
            if !is_art[tab.basis[r]] {
                r += 1;
                continue;
            }
            let row = tab.row(r);
            let best = (0..n)
                .filter(|&j| !is_art[j] && !tab.is_basic[j])
                .map(|j| (j, row[j].abs()))
                .filter(|&(_, v)| v > 1e-7)
                .max_by(|x, y| x.1.total_cmp(&y.1));
            match best {
                Some((j, _)) => {
                    let value = tab.value_of_nonbasic(j);
                    tab.d = vec![0.0; n];
                    tab.pivot(r, j);
                    tab.beta[r] = value;
                    tab.at_upper[j] = false;
                    r += 1;
                }
                None => tab.remove_row(r),
            }
        }
        for (j, &art) in is_art.iter().enumerate() {
            if art {
                tab.banned[j] = true;
            }
        }
    }

    let mut phase2 = cost;
    phase2.resize(n, 0.0);
    if let Phase::Unbounded = tab.run(&phase2)? {
        return Ok(LpSolution::unbounded());
    }

    let mut y: Vec<f64> = (0..n).map(|j| tab.value_of_nonbasic(j)).collect();
    for (i, &k) in tab.basis.iter().enumerate() {
        y[k] = tab.beta[i].max(0.0);
        if tab.upper[k].is_finite() {
            y[k] = y[k].min(tab.upper[k]);
        }
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|map| match *map {
            ColMap::Shift(k, off) => off + y[k],
            ColMap::Negate(k, off) => off - y[k],
            ColMap::Split(p, q) => y[p] - y[q],
        })
        .collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: lp.objective_at(&x),
        x,
    })
}
