use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::RlError;
use crate::data::ExogenousSeries;
use crate::sim::{
    observation_len, CostBreakdown, Decision, FailureParams, MetaAction, MicrogridConfig, SimState, Simulator,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub obs: Vec<f64>,
    /// Unscaled reward.
    pub reward: f64,
    pub done: bool,
    /// Cost components when the environment has them.
    pub costs: Option<CostBreakdown>,
}

/// Episodic environment with a finite action set.
pub trait Env {
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset(&mut self) -> Vec<f64>;
    /// Fails once the episode is over; call `reset` first.
    fn step(&mut self, action: usize) -> Result<EnvStep, RlError>;
    /// Rewards are divided by this before training.
    fn reward_scale(&self) -> f64 {
        1.0
    }
    /// Observation indices of the quantities worth forecasting.
    fn forecast_coords(&self) -> Option<(usize, usize)> {
        None
    }
}

/// Fixed affine normalisation of microgrid observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsScaler {
    pub soc_scale: f64,
    pub load_scale: f64,
    pub pv_scale: f64,
}

impl ObsScaler {
    /// Scales from the configuration and the training series' peak load,
    /// so that every environment sharing a scaler sees the same units.
    pub fn new(cfg: &MicrogridConfig, series: &ExogenousSeries) -> Self {
        Self {
            soc_scale: cfg.s_max,
            load_scale: series.peak_load().max(1e-9),
            pv_scale: cfg.p_res_max,
        }
    }

    /// A failed battery is reported as empty.
    pub fn observe(&self, s: &SimState) -> Vec<f64> {
        let mut v = Vec::with_capacity(observation_len(s.history_len()));
        v.push(if s.battery_available {
            s.soc / self.soc_scale
        } else {
            0.0
        });
        v.extend(s.load_hist.iter().map(|x| x / self.load_scale));
        v.extend(s.pv_hist.iter().map(|x| x / self.pv_scale));
        v
    }
}

/// The microgrid simulator with meta-actions as the action set.
#[derive(Debug, Clone)]
pub struct MicrogridEnv {
    sim: Simulator,
    scaler: ObsScaler,
    reward_scale: f64,
    replay: Option<u64>,
}

impl MicrogridEnv {
    pub fn new(
        cfg: MicrogridConfig,
        series: Arc<ExogenousSeries>,
        h: usize,
        failure: FailureParams,
        scaler: ObsScaler,
        reward_scale: f64,
        seed: u64,
    ) -> Result<Self, RlError> {
        let sim = Simulator::new(cfg, series, h, failure, seed)?;
        Ok(Self {
            sim,
            scaler,
            reward_scale,
            replay: None,
        })
    }

    /// Every episode replays the failure realisation of `seed`; meant for
    /// evaluation environments.
    pub fn replaying(mut self, seed: u64) -> Self {
        self.replay = Some(seed);
        self
    }

    /// The default reward scale: the cost of shedding the peak load for one step.
    pub fn default_reward_scale(cfg: &MicrogridConfig, series: &ExogenousSeries) -> f64 {
        (cfg.price_shed * series.peak_load() * cfg.dt).max(1e-9)
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn scaler(&self) -> ObsScaler {
        self.scaler
    }
}

impl Env for MicrogridEnv {
    fn obs_dim(&self) -> usize {
        observation_len(self.sim.history_len())
    }

    fn n_actions(&self) -> usize {
        MetaAction::ALL.len()
    }

    fn reset(&mut self) -> Vec<f64> {
        if let Some(seed) = self.replay {
            self.sim.reseed(seed);
        }
        let s = self.sim.reset().clone();
        self.scaler.observe(&s)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep, RlError> {
        let y = MetaAction::from_index(action).ok_or(RlError::InvalidAction(action))?;
        let out = self.sim.step(Decision::Meta(y))?;
        Ok(EnvStep {
            obs: self.scaler.observe(&out.next),
            reward: out.reward,
            done: out.done,
            costs: Some(out.costs),
        })
    }

    fn reward_scale(&self) -> f64 {
        self.reward_scale
    }

    fn forecast_coords(&self) -> Option<(usize, usize)> {
        Some((1, 2 + self.sim.history_len()))
    }
}

/// Deterministic finite MDP with one-hot observations and a fixed episode
/// length.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyMdp {
    /// `next[s][a]`.
    pub next: Vec<Vec<usize>>,
    /// `reward[s][a]`.
    pub reward: Vec<Vec<f64>>,
    pub episode_len: usize,
    state: usize,
    t: usize,
}

impl ToyMdp {
    pub fn new(next: Vec<Vec<usize>>, reward: Vec<Vec<f64>>, episode_len: usize) -> Self {
        assert!(!next.is_empty() && next.len() == reward.len(), "tables must match");
        Self {
            next,
            reward,
            episode_len,
            state: 0,
            t: 0,
        }
    }

    /// Two states, two actions. In state 0, action 0 pays 1 and stays while
    /// action 1 pays nothing and moves to state 1; there action 0 pays 3 and
    /// returns. For γ above 1/2 the optimal policy is (1, 0), so the
    /// myopically better action in state 0 is wrong.
    pub fn two_state() -> Self {
        Self::new(vec![vec![0, 1], vec![0, 1]], vec![vec![1.0, 0.0], vec![3.0, 0.0]], 50)
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.next.len()];
        v[s] = 1.0;
        v
    }
}

impl Env for ToyMdp {
    fn obs_dim(&self) -> usize {
        self.next.len()
    }

    fn n_actions(&self) -> usize {
        self.next[0].len()
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = 0;
        self.t = 0;
        self.one_hot(0)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep, RlError> {
        if action >= self.n_actions() {
            return Err(RlError::InvalidAction(action));
        }
        if self.t >= self.episode_len {
            return Err(RlError::Sim(crate::sim::SimError::SeriesExhausted(self.t)));
        }
        let r = self.reward[self.state][action];
        self.state = self.next[self.state][action];
        self.t += 1;
        Ok(EnvStep {
            obs: self.one_hot(self.state),
            reward: r,
            done: self.t >= self.episode_len,
            costs: None,
        })
    }
}
