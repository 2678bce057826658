use serde::{Deserialize, Serialize};

use super::RlError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub gamma: f64,
    /// The surrogate subtracts `KL / beta`.
    pub beta: f64,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub lr_model: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Real steps before planning and forecasting start.
    pub warmup_b: usize,
    /// Planning updates per real update.
    pub plan_n: usize,
    pub q: usize,
    pub huber_k: f64,
    pub h: usize,
    /// Forecast-augmentation horizon.
    pub l: usize,
    pub buffer_cap: usize,
    pub rollout_len: usize,
    pub hidden: Vec<usize>,
    pub model_hidden: Vec<usize>,
    /// Model minibatch size and descent steps per real rollout.
    pub model_batch: usize,
    pub model_steps: usize,
    /// Epochs whose mean KL exceeds this are reverted and end the update.
    pub kl_ceiling: f64,
    /// Real environment steps.
    pub total_steps: usize,
    /// Evaluate every this many updates; the last update is always evaluated.
    pub eval_every: usize,
    /// Divides rewards before training; `None` lets the environment decide.
    pub reward_scale: Option<f64>,
    pub normalize_advantages: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            beta: 10.0,
            lr_policy: 3e-4,
            lr_value: 1e-3,
            lr_model: 1e-3,
            epochs: 4,
            minibatch: 64,
            warmup_b: 2048,
            plan_n: 8,
            q: 32,
            huber_k: 1.0,
            h: 24,
            l: 24,
            buffer_cap: 50_000,
            rollout_len: 256,
            hidden: vec![64, 64],
            model_hidden: vec![64, 64],
            model_batch: 128,
            model_steps: 16,
            kl_ceiling: 0.05,
            total_steps: 50_000,
            eval_every: 1,
            reward_scale: None,
            normalize_advantages: true,
        }
    }
}

impl AgentConfig {
    /// Smaller history, forecast, quantile count and networks, sized so that
    /// ten seeds of a 90-day experiment finish in minutes.
    pub fn desk() -> Self {
        Self {
            h: 6,
            l: 4,
            q: 8,
            hidden: vec![32, 32],
            model_hidden: vec![64, 64],
            lr_policy: 1e-3,
            lr_value: 1e-3,
            lr_model: 3e-3,
            model_steps: 64,
            warmup_b: 1024,
            plan_n: 4,
            total_steps: 12_288,
            eval_every: 4,
            ..Self::default()
        }
    }

    /// The plain-PPO counterpart of this configuration.
    pub fn without_planning(&self) -> Self {
        Self {
            plan_n: 0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if ![self.lr_policy, self.lr_value, self.lr_model]
            .iter()
            .all(|&v| v > 0.0 && v.is_finite())
        {
            return bad("step sizes must be positive");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.rollout_len == 0 {
            return bad("epochs, minibatch and rollout_len must be positive");
        }
        if self.q == 0 || !(self.huber_k > 0.0) {
            return bad("q and huber_k must be positive");
        }
        if self.buffer_cap == 0 || self.model_batch == 0 {
            return bad("buffer_cap and model_batch must be positive");
        }
        if self.hidden.iter().chain(&self.model_hidden).any(|&w| w == 0) {
            return bad("hidden widths must be positive");
        }
        if self.model_hidden.is_empty() {
            return bad("the model needs at least one trunk layer");
        }
        if !(self.kl_ceiling > 0.0) {
            return bad("kl_ceiling must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if let Some(s) = self.reward_scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad("reward_scale must be positive");
            }
        }
        Ok(())
    }

    /// Number of PPO updates on real data in a full run.
    pub fn n_updates(&self) -> usize {
        self.total_steps.div_ceil(self.rollout_len)
    }
}
