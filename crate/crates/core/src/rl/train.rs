use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::SampleMode;
use super::policy::{policy_act, ppo_update, PpoBatchItem, PpoStats};
use super::TransitionBuffer;
use super::{forecast_augment, model_sample, model_update, AgentConfig, DynamicsModel, Env, RlError, Transition};
use crate::nn::{Activation, Adam, DenseNet, Optimizer, QuantileSpec};

const CHECKPOINT_FORMAT: &str = "agent-v1";

/// Independent random streams, one per consumer, so that enabling the model
/// never perturbs the draws made for the policy.
mod stream {
    pub const POLICY_INIT: u64 = 0;
    pub const VALUE_INIT: u64 = 1;
    pub const ACT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const MODEL_INIT: u64 = 4;
    pub const MODEL_BATCH: u64 = 5;
    pub const PLAN: u64 = 6;
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Policy, value function, optional dynamics model and optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    format: String,
    pub cfg: AgentConfig,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub forecast_coords: Option<(usize, usize)>,
    pub policy: DenseNet,
    pub value: DenseNet,
    pub model: Option<DynamicsModel>,
    policy_opt: Adam,
    value_opt: Adam,
    /// Real environment steps taken over the agent's lifetime.
    pub steps: usize,
    pub updates: usize,
}

fn mlp(n_in: usize, hidden: &[usize], n_out: usize, rng: &mut ChaCha8Rng) -> DenseNet {
    let mut sizes = vec![n_in];
    sizes.extend_from_slice(hidden);
    sizes.push(n_out);
    DenseNet::new(&sizes, Activation::Tanh, Activation::Identity, rng)
}

impl Agent {
    pub fn new(cfg: AgentConfig, env: &dyn Env, with_model: bool, seed: u64) -> Result<Self, RlError> {
        cfg.validate()?;
        let (d, na) = (env.obs_dim(), env.n_actions());
        let n_in = d + 2 * cfg.l;
        let policy = mlp(n_in, &cfg.hidden, na, &mut rng_for(seed, stream::POLICY_INIT));
        let value = mlp(n_in, &cfg.hidden, 1, &mut rng_for(seed, stream::VALUE_INIT));
        let model = with_model.then(|| {
            let spec = QuantileSpec::new(cfg.q, cfg.huber_k);
            DynamicsModel::new(
                d,
                na,
                &cfg.model_hidden,
                spec,
                cfg.lr_model,
                &mut rng_for(seed, stream::MODEL_INIT),
            )
        });
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            obs_dim: d,
            n_actions: na,
            forecast_coords: env.forecast_coords(),
            policy_opt: Adam::new(&policy, cfg.lr_policy),
            value_opt: Adam::new(&value, cfg.lr_value),
            policy,
            value,
            model,
            cfg,
            steps: 0,
            updates: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + 2 * self.cfg.l
    }

    /// Planning and forecasting are on: the index of the latest real step,
    /// counted from zero, has reached `warmup_b`.
    pub fn planning_active(&self) -> bool {
        self.model.is_some() && self.cfg.plan_n > 0 && self.steps > self.cfg.warmup_b
    }

    pub fn augment(&self, obs: &[f64]) -> Result<Vec<f64>, RlError> {
        if obs.len() != self.obs_dim {
            return Err(RlError::Shape {
                expected: self.obs_dim,
                found: obs.len(),
            });
        }
        forecast_augment(
            self.model.as_ref(),
            &self.policy,
            obs,
            self.cfg.l,
            self.forecast_coords,
            self.planning_active(),
        )
    }

    /// Greedy action for an environment observation.
    pub fn act_greedy(&self, obs: &[f64]) -> Result<usize, RlError> {
        let aug = self.augment(obs)?;
        let mut unused = rand::rngs::mock::StepRng::new(0, 0);
        Ok(policy_act(&self.policy, &aug, &mut unused, true)?.0)
    }

    pub fn check_env(&self, env: &dyn Env) -> Result<(), RlError> {
        if env.obs_dim() != self.obs_dim || env.n_actions() != self.n_actions {
            return Err(RlError::Checkpoint(format!(
                "agent expects {} observations and {} actions, environment has {} and {}",
                self.obs_dim,
                self.n_actions,
                env.obs_dim(),
                env.n_actions()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, RlError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, RlError> {
        let a: Agent = serde_json::from_str(text)?;
        if a.format != CHECKPOINT_FORMAT {
            return Err(RlError::Checkpoint(format!("unknown format {:?}", a.format)));
        }
        let n_in = a.input_dim();
        if a.policy.n_inputs() != n_in || a.value.n_inputs() != n_in || a.policy.n_outputs() != a.n_actions {
            return Err(RlError::Checkpoint(
                "network shapes disagree with the configuration".into(),
            ));
        }
        if let Some(m) = &a.model {
            if m.obs_dim != a.obs_dim || m.n_actions != a.n_actions {
                return Err(RlError::Checkpoint("model shape disagrees with the agent".into()));
            }
        }
        Ok(a)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RlError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RlError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn halve_step_sizes(&mut self) {
        self.policy_opt.set_lr(self.policy_opt.lr() * 0.5);
        self.value_opt.set_lr(self.value_opt.lr() * 0.5);
        if let Some(m) = self.model.as_mut() {
            m.set_lr(m.lr() * 0.5);
        }
    }

    fn ppo(&mut self, batch: &[PpoBatchItem], rng: &mut ChaCha8Rng) -> Result<Option<PpoStats>, RlError> {
        match ppo_update(
            &mut self.policy,
            &mut self.value,
            &mut self.policy_opt,
            &mut self.value_opt,
            batch,
            &self.cfg,
            rng,
        ) {
            Ok(s) => Ok(Some(s)),
            Err(RlError::NonFinite(what)) => {
                log::warn!(
                    "update {}: non-finite {what}, rolled back and halved step sizes",
                    self.updates
                );
                self.halve_step_sizes();
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

/// One row of the training log. `update` 0 is the untrained agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub update: usize,
    /// Real steps taken in this run.
    pub step: usize,
    /// Unscaled return collected during the update's rollout.
    pub return_train: f64,
    /// Greedy return on the evaluation environment, when evaluated.
    pub return_eval: Option<f64>,
    pub kl: f64,
    pub loss_policy: f64,
    pub loss_value: f64,
    pub loss_model: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub curve: Vec<CurvePoint>,
    /// Updates rolled back for non-finite values.
    pub divergences: usize,
}

/// Undiscounted greedy return over one episode.
pub fn evaluate(agent: &Agent, env: &mut dyn Env) -> Result<f64, RlError> {
    agent.check_env(env)?;
    let mut obs = env.reset();
    let mut ret = 0.0;
    loop {
        let st = env.step(agent.act_greedy(&obs)?)?;
        ret += st.reward;
        if st.done {
            return Ok(ret);
        }
        obs = st.obs;
    }
}

/// Model-free baseline: the same loop with no dynamics model.
pub fn train_ppo(
    env: &mut dyn Env,
    eval_env: Option<&mut dyn Env>,
    cfg: &AgentConfig,
    seed: u64,
) -> Result<TrainOutcome, RlError> {
    let mut agent = Agent::new(cfg.clone(), env, false, seed)?;
    let (curve, divergences) = train_agent(&mut agent, env, eval_env, seed)?;
    Ok(TrainOutcome {
        agent,
        curve,
        divergences,
    })
}

/// The full agent: real updates, model learning, and once warm-up is over
/// `plan_n` further updates per real update, each on a rollout-sized batch of
/// one-step simulated transitions from buffered states.
pub fn dyna_train(
    env: &mut dyn Env,
    eval_env: Option<&mut dyn Env>,
    cfg: &AgentConfig,
    seed: u64,
) -> Result<TrainOutcome, RlError> {
    let mut agent = Agent::new(cfg.clone(), env, true, seed)?;
    let (curve, divergences) = train_agent(&mut agent, env, eval_env, seed)?;
    Ok(TrainOutcome {
        agent,
        curve,
        divergences,
    })
}

/// Runs `agent.cfg.total_steps` further real steps; used both from scratch
/// and to fine-tune a loaded checkpoint. Returns the curve and the number of
/// rolled-back updates.
pub fn train_agent(
    agent: &mut Agent,
    env: &mut dyn Env,
    mut eval_env: Option<&mut dyn Env>,
    seed: u64,
) -> Result<(Vec<CurvePoint>, usize), RlError> {
    agent.check_env(env)?;
    let cfg = agent.cfg.clone();
    let scale = cfg.reward_scale.unwrap_or_else(|| env.reward_scale());
    let mut act_rng = rng_for(seed, stream::ACT);
    let mut shuffle_rng = rng_for(seed, stream::SHUFFLE);
    let mut model_rng = rng_for(seed, stream::MODEL_BATCH);
    let mut plan_rng = rng_for(seed, stream::PLAN);
    let mut buffer = TransitionBuffer::new(cfg.buffer_cap);
    let mut divergences = 0;

    let mut eval = |agent: &Agent| -> Result<Option<f64>, RlError> {
        match eval_env.as_mut() {
            Some(e) => Ok(Some(evaluate(agent, &mut **e)?)),
            None => Ok(None),
        }
    };
    let mut curve = vec![CurvePoint {
        update: 0,
        step: 0,
        return_train: 0.0,
        return_eval: eval(agent)?,
        kl: 0.0,
        loss_policy: 0.0,
        loss_value: 0.0,
        loss_model: None,
    }];

    let mut obs = env.reset();
    let mut aug = agent.augment(&obs)?;
    let mut taken = 0;
    let n_updates = cfg.n_updates();
    for u in 1..=n_updates {
        let n = cfg.rollout_len.min(cfg.total_steps - taken);
        let mut real = Vec::with_capacity(n);
        let mut return_train = 0.0;
        for _ in 0..n {
            let (a, _) = policy_act(&agent.policy, &aug, &mut act_rng, false)?;
            let st = env.step(a)?;
            return_train += st.reward;
            let r = st.reward / scale;
            agent.steps += 1;
            let next_aug = agent.augment(&st.obs)?;
            real.push(PpoBatchItem {
                obs: aug.clone(),
                action: a,
                reward: r,
                next_obs: next_aug.clone(),
                done: st.done,
            });
            buffer.push(Transition {
                obs,
                aug,
                action: a,
                reward: r,
                next_obs: st.obs.clone(),
                done: st.done,
            });
            if st.done {
                obs = env.reset();
                aug = agent.augment(&obs)?;
            } else {
                obs = st.obs;
                aug = next_aug;
            }
        }
        taken += n;

        let stats = agent.ppo(&real, &mut shuffle_rng)?;
        if stats.is_none() {
            divergences += 1;
        }

        let mut loss_model = None;
        if agent.model.is_some() {
            let mut total = 0.0;
            let mut ok = true;
            for _ in 0..cfg.model_steps {
                let batch = buffer.sample_batch(cfg.model_batch, &mut model_rng);
                match model_update(agent.model.as_mut().unwrap(), &batch) {
                    Ok(l) => total += l,
                    Err(RlError::NonFinite(what)) => {
                        log::warn!("update {u}: non-finite {what}; halved model step size");
                        let m = agent.model.as_mut().unwrap();
                        m.set_lr(m.lr() * 0.5);
                        divergences += 1;
                        ok = false;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            if ok && cfg.model_steps > 0 {
                loss_model = Some(total / cfg.model_steps as f64);
            }
        }

        if agent.planning_active() {
            for _ in 0..cfg.plan_n {
                let model = agent.model.as_ref().unwrap();
                let mut sim = Vec::with_capacity(n);
                for _ in 0..n {
                    let tr = buffer.sample(&mut plan_rng).expect("buffer holds this rollout");
                    let (a, _) = policy_act(&agent.policy, &tr.aug, &mut plan_rng, false)?;
                    let (next, r) = model_sample(model, &tr.obs, a, &mut plan_rng, SampleMode::Random)?;
                    let next_aug = agent.augment(&next)?;
                    sim.push(PpoBatchItem {
                        obs: tr.aug.clone(),
                        action: a,
                        reward: r,
                        next_obs: next_aug,
                        done: false,
                    });
                }
                if agent.ppo(&sim, &mut plan_rng)?.is_none() {
                    divergences += 1;
                }
            }
        }
        agent.updates += 1;

        let s = stats.unwrap_or_default();
        let return_eval = if u % cfg.eval_every == 0 || u == n_updates {
            eval(agent)?
        } else {
            None
        };
        curve.push(CurvePoint {
            update: u,
            step: taken,
            return_train,
            return_eval,
            kl: s.kl,
            loss_policy: s.loss_policy,
            loss_value: s.loss_value,
            loss_model,
        });
    }
    Ok((curve, divergences))
}

/// CSV with header `update,step,return_train,return_eval,kl,loss_policy,loss_value,loss_model`.
pub fn write_training_log(curve: &[CurvePoint], out: impl Write) -> Result<(), RlError> {
    let mut w = csv::Writer::from_writer(out);
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_training_log(input: impl Read) -> Result<Vec<CurvePoint>, RlError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<CurvePoint>, _>>()?)
}
