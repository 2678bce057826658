//! Depth-first branch-and-bound over binary variables.

use super::{simplex_solve, LpError, LpSolution, LpStatus, MilpProblem, FEAS_TOL, INT_TOL};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BnbStats {
    pub nodes: usize,
    pub lp_solves: usize,
    /// Objective of every new incumbent, in discovery order.
    pub incumbents: Vec<f64>,
    pub root_bound: f64,
}

pub fn branch_and_bound(p: &MilpProblem) -> Result<LpSolution, LpError> {
    branch_and_bound_with_stats(p).map(|(s, _)| s)
}

struct Search<'a> {
    p: &'a MilpProblem,
    stats: BnbStats,
    best: Option<LpSolution>,
}

impl Search<'_> {
    fn solve_with(&mut self, fixed: &[(f64, f64)]) -> Result<LpSolution, LpError> {
        let mut lp = self.p.lp.clone();
        for (&j, &(lo, hi)) in self.p.binaries.iter().zip(fixed) {
            lp.lower[j] = lo;
            lp.upper[j] = hi;
        }
        self.stats.lp_solves += 1;
        simplex_solve(&lp)
    }

    /// Index into `binaries` of the most fractional value, if any.
    fn most_fractional(&self, x: &[f64]) -> Option<usize> {
        self.p
            .binaries
            .iter()
            .enumerate()
            .map(|(k, &j)| (k, (x[j] - x[j].round()).abs()))
            .filter(|&(_, f)| f > INT_TOL)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
    }

    fn offer(&mut self, mut sol: LpSolution) {
        for &j in &self.p.binaries {
            sol.x[j] = sol.x[j].round();
        }
        sol.objective = self.p.lp.objective_at(&sol.x);
        if self
            .best
            .as_ref()
            .map_or(true, |b| sol.objective < b.objective - FEAS_TOL)
        {
            self.stats.incumbents.push(sol.objective);
            self.best = Some(sol);
        }
    }

    fn cutoff(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.objective)
    }

    fn prunes(&self, bound: f64) -> bool {
        bound >= self.cutoff() - FEAS_TOL * (1.0 + bound.abs())
    }

    /// Fixes every binary to its rounded relaxation value and re-solves.
    fn rounding_heuristic(&mut self, x: &[f64], up: bool) -> Result<(), LpError> {
        let fixed: Vec<(f64, f64)> = self
            .p
            .binaries
            .iter()
            .map(|&j| {
                let v = if up && x[j] > INT_TOL { 1.0 } else { x[j].round() };
                (v, v)
            })
            .collect();
        let s = self.solve_with(&fixed)?;
        if s.is_optimal() {
            self.offer(s);
        }
        Ok(())
    }
}

/// Solves `p` exactly, returning the statistics of the search as well.
pub fn branch_and_bound_with_stats(p: &MilpProblem) -> Result<(LpSolution, BnbStats), LpError> {
    p.validate()?;
    let mut search = Search {
        p,
        stats: BnbStats::default(),
        best: None,
    };
    let root_fix: Vec<(f64, f64)> = p.binaries.iter().map(|&j| (p.lp.lower[j], p.lp.upper[j])).collect();

    let root = search.solve_with(&root_fix)?;
    search.stats.root_bound = root.objective;
    match root.status {
        LpStatus::Infeasible => return Ok((LpSolution::infeasible(), search.stats)),
        LpStatus::Unbounded => return Ok((LpSolution::unbounded(), search.stats)),
        LpStatus::Optimal => {}
    }
    if search.most_fractional(&root.x).is_some() {
        search.rounding_heuristic(&root.x, false)?;
        search.rounding_heuristic(&root.x, true)?;
    }

    let mut stack = vec![(root_fix, Some(root))];
    while let Some((fix, pre)) = stack.pop() {
        search.stats.nodes += 1;
        let sol = match pre {
            Some(s) => s,
            None => search.solve_with(&fix)?,
        };
        if !sol.is_optimal() || search.prunes(sol.objective) {
            continue;
        }
        let Some(k) = search.most_fractional(&sol.x) else {
            search.offer(sol);
            continue;
        };
        let v = sol.x[p.binaries[k]];
        let mut down = fix.clone();
        down[k] = (0.0, 0.0);
        let mut up = fix;
        up[k] = (1.0, 1.0);
        // The child nearer the relaxation value is explored first.
        if v >= 0.5 {
            stack.push((down, None));
            stack.push((up, None));
        } else {
            stack.push((up, None));
            stack.push((down, None));
        }
    }
    let best = search.best.take().unwrap_or_else(LpSolution::infeasible);
    Ok((best, search.stats))
}
