//! Receding-horizon MILP controller.
//!
//! For a window of `N` forecast steps, per step `k` the problem carries the
//! columns `[p_ch, p_dis, p_gen, curt, shed, soc_{k+1}, n, b]`, where `n`
//! commits the generator and `b` selects charging over discharging. Fuel and
//! penalty costs are linear in these columns and live directly in the
//! objective. Only the first step of the optimal plan is applied.

use crate::data::ExogenousSeries;
use crate::lp::{branch_and_bound, LinearProgram, LpError, LpStatus, MilpProblem, Sense};
use crate::sim::{ControlAction, MicrogridConfig, SimState};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MpcError {
    #[error("forecast window [{t}, {t}+{n}) exceeds series of length {len}")]
    HorizonExceedsSeries { t: usize, n: usize, len: usize },
    #[error("forecast window must cover at least one step")]
    EmptyHorizon,
    #[error("load and PV forecasts differ in length")]
    RaggedForecast,
    #[error("negative or non-finite forecast value")]
    InvalidForecast,
    #[error("MPC problem reported {0:?}")]
    NotOptimal(LpStatus),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastWindow {
    pub load_hat: Vec<f64>,
    pub pv_hat: Vec<f64>,
}

impl ForecastWindow {
    pub fn new(load_hat: Vec<f64>, pv_hat: Vec<f64>) -> Result<Self, MpcError> {
        if load_hat.len() != pv_hat.len() {
            return Err(MpcError::RaggedForecast);
        }
        if load_hat.is_empty() {
            return Err(MpcError::EmptyHorizon);
        }
        if load_hat.iter().chain(&pv_hat).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(MpcError::InvalidForecast);
        }
        Ok(Self { load_hat, pv_hat })
    }

    pub fn len(&self) -> usize {
        self.load_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load_hat.is_empty()
    }
}

/// The realized values at `t, …, t+n−1`.
pub fn perfect_forecast(series: &ExogenousSeries, t: usize, n: usize) -> Result<ForecastWindow, MpcError> {
    if n == 0 {
        return Err(MpcError::EmptyHorizon);
    }
    if t + n > series.len() {
        return Err(MpcError::HorizonExceedsSeries {
            t,
            n,
            len: series.len(),
        });
    }
    ForecastWindow::new(series.load_kw()[t..t + n].to_vec(), series.pv_kw()[t..t + n].to_vec())
}

/// Column and row positions of an `N`-step instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MpcLayout {
    pub horizon: usize,
}

impl MpcLayout {
    pub const VARS_PER_STEP: usize = 8;
    pub const ROWS_PER_STEP: usize = 6;

    fn var(&self, k: usize, offset: usize) -> usize {
        debug_assert!(k < self.horizon);
        k * Self::VARS_PER_STEP + offset
    }
    pub fn p_ch(&self, k: usize) -> usize {
        self.var(k, 0)
    }
    pub fn p_dis(&self, k: usize) -> usize {
        self.var(k, 1)
    }
    pub fn p_gen(&self, k: usize) -> usize {
        self.var(k, 2)
    }
    pub fn curt(&self, k: usize) -> usize {
        self.var(k, 3)
    }
    pub fn shed(&self, k: usize) -> usize {
        self.var(k, 4)
    }
    /// State of charge at the end of step `k`.
    pub fn soc(&self, k: usize) -> usize {
        self.var(k, 5)
    }
    pub fn gen_on(&self, k: usize) -> usize {
        self.var(k, 6)
    }
    pub fn charging(&self, k: usize) -> usize {
        self.var(k, 7)
    }
    pub fn balance_row(&self, k: usize) -> usize {
        k * Self::ROWS_PER_STEP
    }
    pub fn n_vars(&self) -> usize {
        self.horizon * Self::VARS_PER_STEP
    }

    pub fn action(&self, x: &[f64], k: usize) -> ControlAction {
        let clean = |v: f64| if v.abs() < 1e-9 { 0.0 } else { v.max(0.0) };
        ControlAction {
            p_ch: clean(x[self.p_ch(k)]),
            p_dis: clean(x[self.p_dis(k)]),
            p_gen: clean(x[self.p_gen(k)]),
        }
    }
}

/// Builds the `N`-step dispatch MILP starting from `soc0` with the battery
/// capacity currently believed to be available.
pub fn build_problem(cfg: &MicrogridConfig, soc0: f64, capacity: f64, fc: &ForecastWindow) -> MilpProblem {
    let layout = MpcLayout { horizon: fc.len() };
    let mut lp = LinearProgram::new(vec![0.0; layout.n_vars()]);
    let mut binaries = Vec::with_capacity(2 * fc.len());
    let soc0 = soc0.clamp(0.0, capacity.max(0.0));
    for k in 0..fc.len() {
        let (ch, dis, gen, curt, shed, soc, on, b) = (
            layout.p_ch(k),
            layout.p_dis(k),
            layout.p_gen(k),
            layout.curt(k),
            layout.shed(k),
            layout.soc(k),
            layout.gen_on(k),
            layout.charging(k),
        );
        lp.c[gen] = cfg.price_fuel * cfg.dt * cfg.f2;
        lp.c[on] = cfg.price_fuel * cfg.dt * cfg.f1;
        lp.c[curt] = cfg.price_curt * cfg.dt;
        lp.c[shed] = cfg.price_shed * cfg.dt;

        let surplus = fc.pv_hat[k] >= fc.load_hat[k];
        lp.set_bounds(ch, 0.0, cfg.p_ch_max);
        // Discharging into a forecast surplus only adds curtailment.
        lp.set_bounds(dis, 0.0, if surplus { 0.0 } else { cfg.p_dis_max });
        lp.set_bounds(gen, 0.0, cfg.p_gen_max);
        lp.set_bounds(soc, 0.0, capacity.max(0.0));
        lp.set_bounds(on, 0.0, 1.0);
        if surplus {
            lp.set_bounds(b, 1.0, 1.0);
        } else {
            lp.set_bounds(b, 0.0, 1.0);
        }
        binaries.push(on);
        binaries.push(b);

        lp.add_sparse_row(
            &[(gen, 1.0), (dis, 1.0), (shed, 1.0), (ch, -1.0), (curt, -1.0)],
            Sense::Eq,
            fc.load_hat[k] - fc.pv_hat[k],
        );
        let mut recursion = vec![(soc, 1.0), (ch, -cfg.dt * cfg.eta_ch), (dis, cfg.dt / cfg.eta_dis)];
        let rhs = if k == 0 {
            soc0
        } else {
            recursion.push((layout.soc(k - 1), -1.0));
            0.0
        };
        lp.add_sparse_row(&recursion, Sense::Eq, rhs);
        lp.add_sparse_row(&[(gen, 1.0), (on, -cfg.p_gen_max)], Sense::Le, 0.0);
        lp.add_sparse_row(&[(gen, 1.0), (on, -cfg.p_gen_min)], Sense::Ge, 0.0);
        lp.add_sparse_row(&[(ch, 1.0), (b, -cfg.p_ch_max)], Sense::Le, 0.0);
        lp.add_sparse_row(&[(dis, 1.0), (b, cfg.p_dis_max)], Sense::Le, cfg.p_dis_max);
    }
    MilpProblem { lp, binaries }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcPlan {
    pub actions: Vec<ControlAction>,
    /// Planned end-of-step state of charge.
    pub soc: Vec<f64>,
    pub objective: f64,
}

pub fn solve_plan(cfg: &MicrogridConfig, soc0: f64, capacity: f64, fc: &ForecastWindow) -> Result<MpcPlan, MpcError> {
    let problem = build_problem(cfg, soc0, capacity, fc);
    let sol = branch_and_bound(&problem)?;
    if sol.status != LpStatus::Optimal {
        return Err(MpcError::NotOptimal(sol.status));
    }
    let layout = MpcLayout { horizon: fc.len() };
    Ok(MpcPlan {
        actions: (0..fc.len()).map(|k| layout.action(&sol.x, k)).collect(),
        soc: (0..fc.len()).map(|k| sol.x[layout.soc(k)]).collect(),
        objective: sol.objective,
    })
}

/// First action of the `n`-step plan from `state` at step `t`. The window
/// shrinks near the end of the series. Failure is invisible to the
/// controller: it plans with the degraded capacity even while the battery
/// is out.
pub fn mpc_act(
    cfg: &MicrogridConfig,
    state: &SimState,
    series: &ExogenousSeries,
    t: usize,
    n: usize,
) -> Result<ControlAction, MpcError> {
    if t >= series.len() {
        return Err(MpcError::HorizonExceedsSeries {
            t,
            n,
            len: series.len(),
        });
    }
    let n = n.min(series.len() - t);
    let fc = perfect_forecast(series, t, n)?;
    let plan = solve_plan(cfg, state.soc, state.effective_capacity, &fc)?;
    Ok(plan.actions[0])
}
