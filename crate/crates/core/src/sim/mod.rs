//! Off-grid microgrid MDP.
//!
//! The state splits into a deterministic part (state of charge, cycle
//! count, battery availability) and a stochastic part (the last `h + 1`
//! realizations of load and PV, most recent first). A step realizes the
//! exogenous values at `t`, expands the controller's decision into device
//! set-points, settles the power balance and advances the battery.

mod config;
mod dispatch;
mod failure;
mod trace;

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::MicrogridConfig;
pub use dispatch::{dispatch, max_charge, max_discharge};
pub use failure::{FailureEvent, FailureParams, FailureProcess, FailureState};
pub use trace::{read_trace, write_trace, TraceRow};

use crate::data::ExogenousSeries;

/// Absolute tolerance of the power-balance identity.
pub const BALANCE_TOL: f64 = 1e-9;
/// Slack accepted on externally supplied set-points (solver round-off).
pub const ACTION_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid microgrid configuration: {0}")]
    InvalidConfig(String),
    #[error("SoC contract violated: soc {soc} outside [0, {capacity}]")]
    SocViolation { soc: f64, capacity: f64 },
    #[error("invalid control action at t={t}: {reason}")]
    InvalidAction { t: usize, reason: String },
    #[error("generator set-point {p_gen} outside band while on")]
    GeneratorBand { p_gen: f64 },
    #[error("series exhausted at step {0}")]
    SeriesExhausted(usize),
    #[error("series too short for the requested episode")]
    SeriesTooShort,
}

/// Discrete decision expanded by [`dispatch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetaAction {
    Charge,
    Discharge,
    Generator,
}

impl MetaAction {
    pub const ALL: [MetaAction; 3] = [MetaAction::Charge, MetaAction::Discharge, MetaAction::Generator];

    pub fn index(self) -> usize {
        match self {
            MetaAction::Charge => 0,
            MetaAction::Discharge => 1,
            MetaAction::Generator => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            MetaAction::Charge => "C",
            MetaAction::Discharge => "D",
            MetaAction::Generator => "G",
        }
    }
}

/// Continuous set-points (kW) for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlAction {
    pub p_ch: f64,
    pub p_dis: f64,
    pub p_gen: f64,
}

impl ControlAction {
    pub fn idle() -> Self {
        Self::default()
    }

    pub fn generator_on(&self) -> bool {
        self.p_gen > 0.0
    }
}

/// What a controller hands to the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Meta(MetaAction),
    Direct(ControlAction),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub fuel_cost: f64,
    pub curt_cost: f64,
    pub shed_cost: f64,
    pub curtailed_kw: f64,
    pub shed_kw: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.fuel_cost + self.curt_cost + self.shed_cost
    }

    pub fn add(&mut self, other: &CostBreakdown) {
        self.fuel_cost += other.fuel_cost;
        self.curt_cost += other.curt_cost;
        self.shed_cost += other.shed_cost;
        self.curtailed_kw += other.curtailed_kw;
        self.shed_kw += other.shed_kw;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub soc: f64,
    pub cycles: f64,
    pub battery_available: bool,
    /// Capacity after degradation; a failed battery keeps it but cannot use it.
    pub effective_capacity: f64,
    pub t: usize,
    /// `h + 1` load values, index 0 is the current step.
    pub load_hist: VecDeque<f64>,
    pub pv_hist: VecDeque<f64>,
}

impl SimState {
    /// State at index `t` of `series`; lags before the first sample repeat it.
    pub fn initial(cfg: &MicrogridConfig, series: &ExogenousSeries, t: usize, h: usize) -> Self {
        let lag = |v: &[f64], k: usize| v[t.saturating_sub(k).min(v.len() - 1)];
        Self {
            soc: cfg.s_max * cfg.initial_soc_frac,
            cycles: 0.0,
            battery_available: true,
            effective_capacity: cfg.s_max,
            t,
            load_hist: (0..=h).map(|k| lag(series.load_kw(), k)).collect(),
            pv_hist: (0..=h).map(|k| lag(series.pv_kw(), k)).collect(),
        }
    }

    pub fn with_flat_history(soc: f64, cfg: &MicrogridConfig, h: usize, load: f64, pv: f64) -> Self {
        Self {
            soc,
            cycles: 0.0,
            battery_available: true,
            effective_capacity: cfg.s_max,
            t: 0,
            load_hist: std::iter::repeat(load).take(h + 1).collect(),
            pv_hist: std::iter::repeat(pv).take(h + 1).collect(),
        }
    }

    pub fn history_len(&self) -> usize {
        self.load_hist.len() - 1
    }

    /// Capacity the controller may use right now.
    pub fn usable_capacity(&self) -> f64 {
        if self.battery_available {
            self.effective_capacity
        } else {
            0.0
        }
    }

    pub fn current_load(&self) -> f64 {
        self.load_hist[0]
    }

    pub fn current_pv(&self) -> f64 {
        self.pv_hist[0]
    }

    /// Residual generation `pv - load` at the current step.
    pub fn delta_p(&self) -> f64 {
        self.current_pv() - self.current_load()
    }

    fn push_history(&mut self, load: f64, pv: f64) {
        self.load_hist.pop_back();
        self.load_hist.push_front(load);
        self.pv_hist.pop_back();
        self.pv_hist.push_front(pv);
    }
}

/// Tank model: SoC update, throughput cycle counting and capacity fade.
pub fn battery_step(state: &SimState, p_ch: f64, p_dis: f64, cfg: &MicrogridConfig) -> Result<SimState, SimError> {
    let eta_ch = cfg.eta_ch_after(state.cycles);
    let eta_dis = cfg.eta_dis_after(state.cycles);
    let soc = state.soc + cfg.dt * (eta_ch * p_ch - p_dis / eta_dis);
    let bound = state.usable_capacity().max(state.soc);
    if soc < -BALANCE_TOL || soc > bound + BALANCE_TOL {
        return Err(SimError::SocViolation { soc, capacity: bound });
    }
    let mut next = state.clone();
    next.cycles = if cfg.s_max > 0.0 {
        state.cycles + cfg.dt * (eta_ch * p_ch + p_dis / eta_dis) / (2.0 * cfg.s_max)
    } else {
        state.cycles
    };
    next.effective_capacity = cfg.capacity_after(next.cycles);
    next.soc = soc.clamp(0.0, next.effective_capacity);
    Ok(next)
}

/// Fuel use (litres) and cost (EUR) of one step.
pub fn fuel_cost(p_gen: f64, on: bool, cfg: &MicrogridConfig) -> Result<(f64, f64), SimError> {
    if !on {
        if p_gen != 0.0 {
            return Err(SimError::GeneratorBand { p_gen });
        }
        return Ok((0.0, 0.0));
    }
    if p_gen < cfg.p_gen_min - ACTION_TOL || p_gen > cfg.p_gen_max + ACTION_TOL {
        return Err(SimError::GeneratorBand { p_gen });
    }
    let liters = (cfg.f1 + cfg.f2 * p_gen) * cfg.dt;
    Ok((liters, liters * cfg.price_fuel))
}

/// Settles the power balance and prices every cost component.
pub fn balance_and_costs(p_res: f64, load: f64, action: &ControlAction, cfg: &MicrogridConfig) -> CostBreakdown {
    let residual = p_res + action.p_gen + action.p_dis - action.p_ch - load;
    let curtailed_kw = residual.max(0.0);
    let shed_kw = (-residual).max(0.0);
    let fuel = if action.generator_on() {
        (cfg.f1 + cfg.f2 * action.p_gen) * cfg.dt * cfg.price_fuel
    } else {
        0.0
    };
    CostBreakdown {
        fuel_cost: fuel,
        curt_cost: curtailed_kw * cfg.dt * cfg.price_curt,
        shed_cost: shed_kw * cfg.dt * cfg.price_shed,
        curtailed_kw,
        shed_kw,
    }
}

pub fn reward(costs: &CostBreakdown) -> f64 {
    -(costs.fuel_cost + costs.curt_cost + costs.shed_cost)
}

/// `[soc, load_t, ..., load_{t-h}, pv_t, ..., pv_{t-h}]`.
pub fn observe(state: &SimState) -> Vec<f64> {
    let mut v = Vec::with_capacity(1 + state.load_hist.len() + state.pv_hist.len());
    v.push(state.soc);
    v.extend(state.load_hist.iter());
    v.extend(state.pv_hist.iter());
    v
}

pub fn observation_len(h: usize) -> usize {
    1 + 2 * (h + 1)
}

/// Checks an externally supplied set-point and clips battery flows to what
/// the battery can do this step. A failed battery delivers nothing, whatever
/// the controller planned.
fn admit_direct(action: ControlAction, state: &SimState, cfg: &MicrogridConfig) -> Result<ControlAction, SimError> {
    let fail = |reason: String| Err(SimError::InvalidAction { t: state.t, reason });
    let ControlAction { p_ch, p_dis, p_gen } = action;
    if ![p_ch, p_dis, p_gen].iter().all(|v| v.is_finite()) {
        return fail("non-finite set-point".into());
    }
    if p_ch < -ACTION_TOL || p_dis < -ACTION_TOL || p_gen < -ACTION_TOL {
        return fail(format!("negative set-point {action:?}"));
    }
    if p_ch > cfg.p_ch_max + ACTION_TOL || p_dis > cfg.p_dis_max + ACTION_TOL {
        return fail(format!("rate limit exceeded {action:?}"));
    }
    if p_gen > cfg.p_gen_max + ACTION_TOL {
        return fail(format!("generator above capacity {p_gen}"));
    }
    if p_ch > ACTION_TOL && p_dis > ACTION_TOL {
        return fail(format!("simultaneous charge and discharge {action:?}"));
    }
    let mut a = ControlAction {
        p_ch: p_ch.max(0.0),
        p_dis: p_dis.max(0.0),
        p_gen: p_gen.max(0.0),
    };
    if a.p_ch <= ACTION_TOL {
        a.p_ch = 0.0;
    }
    if a.p_dis <= ACTION_TOL {
        a.p_dis = 0.0;
    }
    if a.p_gen <= ACTION_TOL {
        a.p_gen = 0.0;
    } else {
        a.p_gen = a.p_gen.clamp(cfg.p_gen_min, cfg.p_gen_max);
    }
    a.p_ch = a.p_ch.min(max_charge(state, cfg));
    a.p_dis = a.p_dis.min(max_discharge(state, cfg));
    Ok(a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: SimState,
    pub reward: f64,
    pub costs: CostBreakdown,
    pub action: ControlAction,
    pub failure: FailureEvent,
    /// True when `t` was the last sample of the series.
    pub done: bool,
}

/// One MDP transition from `state` at `state.t`.
pub fn step<R: rand::Rng + ?Sized>(
    state: &SimState,
    decision: Decision,
    series: &ExogenousSeries,
    cfg: &MicrogridConfig,
    failure: &mut FailureProcess,
    rng: &mut R,
) -> Result<StepOutcome, SimError> {
    let t = state.t;
    if t >= series.len() {
        return Err(SimError::SeriesExhausted(t));
    }
    let event = failure.advance(t, rng);
    let mut current = state.clone();
    current.battery_available = failure.is_operational();

    let load = series.load_kw()[t];
    let pv = series.pv_kw()[t];
    let action = match decision {
        Decision::Meta(y) => dispatch(pv - load, y, &current, cfg),
        Decision::Direct(a) => admit_direct(a, &current, cfg)?,
    };
    let costs = balance_and_costs(pv, load, &action, cfg);
    let mut next = battery_step(&current, action.p_ch, action.p_dis, cfg)?;
    next.t = t + 1;
    let done = t + 1 >= series.len();
    if !done {
        next.push_history(series.load_kw()[t + 1], series.pv_kw()[t + 1]);
    }
    Ok(StepOutcome {
        next,
        reward: reward(&costs),
        costs,
        action,
        failure: event,
        done,
    })
}

/// A simulator instance: configuration, data, evolving state and the
/// failure process with its own seeded random stream.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: MicrogridConfig,
    series: Arc<ExogenousSeries>,
    h: usize,
    failure_params: FailureParams,
    state: SimState,
    failure: FailureProcess,
    rng: ChaCha8Rng,
}

impl Simulator {
    pub fn new(
        cfg: MicrogridConfig,
        series: Arc<ExogenousSeries>,
        h: usize,
        failure_params: FailureParams,
        seed: u64,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        if series.is_empty() {
            return Err(SimError::SeriesTooShort);
        }
        let state = SimState::initial(&cfg, &series, 0, h);
        let failure = FailureProcess::from_params(&failure_params, series.len());
        Ok(Self {
            cfg,
            series,
            h,
            failure_params,
            state,
            failure,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Back to the first sample with a fresh battery. The failure stream
    /// keeps running, so successive episodes see different failures; build a
    /// new simulator to replay one.
    pub fn reset(&mut self) -> &SimState {
        self.state = SimState::initial(&self.cfg, &self.series, 0, self.h);
        self.failure = FailureProcess::from_params(&self.failure_params, self.series.len());
        &self.state
    }

    /// Restarts the failure stream, so the next episode replays the
    /// failures of a fresh simulator built with `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn config(&self) -> &MicrogridConfig {
        &self.cfg
    }

    pub fn series(&self) -> &Arc<ExogenousSeries> {
        &self.series
    }

    pub fn history_len(&self) -> usize {
        self.h
    }

    pub fn failure(&self) -> &FailureProcess {
        &self.failure
    }

    pub fn observe(&self) -> Vec<f64> {
        observe(&self.state)
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.series.len()
    }

    pub fn step(&mut self, decision: Decision) -> Result<StepOutcome, SimError> {
        let out = step(
            &self.state,
            decision,
            &self.series,
            &self.cfg,
            &mut self.failure,
            &mut self.rng,
        )?;
        self.state = out.next.clone();
        Ok(out)
    }
}
