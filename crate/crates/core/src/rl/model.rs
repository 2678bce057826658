use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::policy_act;
use super::{RlError, Transition};
use crate::nn::{quantile_huber, quantile_huber_grad, Activation, Adam, DenseNet, Grads, Optimizer, QuantileSpec};

/// Distributional one-step model: a shared trunk feeding a transition head
/// with `q` quantiles for each of the `d` observation coordinates and a
/// reward head with `q` quantiles. The input is the observation followed by
/// a one-hot action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsModel {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub spec: QuantileSpec,
    pub trunk: DenseNet,
    /// Output `d·q + i` is quantile `i` of coordinate `d`.
    pub transition_head: DenseNet,
    pub reward_head: DenseNet,
    trunk_opt: Adam,
    transition_opt: Adam,
    reward_opt: Adam,
    updates: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// An independent uniformly drawn quantile for every output.
    Random,
    /// The median quantile everywhere.
    Median,
}

impl DynamicsModel {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        n_actions: usize,
        hidden: &[usize],
        spec: QuantileSpec,
        lr: f64,
        rng: &mut R,
    ) -> Self {
        assert!(!hidden.is_empty(), "the trunk needs a hidden layer");
        let mut sizes = vec![obs_dim + n_actions];
        sizes.extend_from_slice(hidden);
        let trunk = DenseNet::new(&sizes, Activation::Relu, Activation::Relu, rng);
        let width = *hidden.last().unwrap();
        let transition_head = DenseNet::new(
            &[width, obs_dim * spec.q],
            Activation::Identity,
            Activation::Identity,
            rng,
        );
        let reward_head = DenseNet::new(&[width, spec.q], Activation::Identity, Activation::Identity, rng);
        Self {
            obs_dim,
            n_actions,
            trunk_opt: Adam::new(&trunk, lr),
            transition_opt: Adam::new(&transition_head, lr),
            reward_opt: Adam::new(&reward_head, lr),
            spec,
            trunk,
            transition_head,
            reward_head,
            updates: 0,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.trunk_opt.set_lr(lr);
        self.transition_opt.set_lr(lr);
        self.reward_opt.set_lr(lr);
    }

    pub fn lr(&self) -> f64 {
        self.trunk_opt.lr()
    }

    fn input(&self, obs: &[f64], action: usize) -> Result<Vec<f64>, RlError> {
        if obs.len() != self.obs_dim {
            return Err(RlError::Shape {
                expected: self.obs_dim,
                found: obs.len(),
            });
        }
        if action >= self.n_actions {
            return Err(RlError::InvalidAction(action));
        }
        let mut x = Vec::with_capacity(self.obs_dim + self.n_actions);
        x.extend_from_slice(obs);
        x.extend((0..self.n_actions).map(|a| if a == action { 1.0 } else { 0.0 }));
        Ok(x)
    }

    /// All quantiles: `(transition[d·q], reward[q])`.
    pub fn quantiles(&self, obs: &[f64], action: usize) -> Result<(Vec<f64>, Vec<f64>), RlError> {
        let z = self.trunk.forward(&self.input(obs, action)?)?;
        Ok((self.transition_head.forward(&z)?, self.reward_head.forward(&z)?))
    }
}

/// One descent step on the mean over `batch` of the summed quantile Huber
/// losses of both heads. Returns the loss before the step.
pub fn model_update(model: &mut DynamicsModel, batch: &[&Transition]) -> Result<f64, RlError> {
    if batch.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let (q, k) = (model.spec.q, model.spec.huber_k);
    let taus = model.spec.taus.clone();
    let mut g_trunk = Grads::zeros_like(&model.trunk);
    let mut g_trans = Grads::zeros_like(&model.transition_head);
    let mut g_rew = Grads::zeros_like(&model.reward_head);
    let m = batch.len() as f64;
    let mut loss = 0.0;
    for tr in batch {
        if tr.next_obs.len() != model.obs_dim {
            return Err(RlError::Shape {
                expected: model.obs_dim,
                found: tr.next_obs.len(),
            });
        }
        let tc = model.trunk.forward_cached(&model.input(&tr.obs, tr.action)?)?;
        let pc = model.transition_head.forward_cached(&tc.output)?;
        let rc = model.reward_head.forward_cached(&tc.output)?;
        let mut up_p = vec![0.0; pc.output.len()];
        for (d, &target) in tr.next_obs.iter().enumerate() {
            for (i, &tau) in taus.iter().enumerate() {
                let u = target - pc.output[d * q + i];
                loss += quantile_huber(u, tau, k);
                up_p[d * q + i] = -quantile_huber_grad(u, tau, k) / m;
            }
        }
        let mut up_r = vec![0.0; q];
        for (i, &tau) in taus.iter().enumerate() {
            let u = tr.reward - rc.output[i];
            loss += quantile_huber(u, tau, k);
            up_r[i] = -quantile_huber_grad(u, tau, k) / m;
        }
        let mut up_z = model.transition_head.backward(&pc, &up_p, &mut g_trans)?;
        let up_z_r = model.reward_head.backward(&rc, &up_r, &mut g_rew)?;
        up_z.iter_mut().zip(up_z_r).for_each(|(a, b)| *a += b);
        model.trunk.backward(&tc, &up_z, &mut g_trunk)?;
    }
    loss /= m;
    if !loss.is_finite() {
        return Err(RlError::NonFinite("model loss"));
    }
    if !(g_trunk.is_finite() && g_trans.is_finite() && g_rew.is_finite()) {
        return Err(RlError::NonFinite("model gradient"));
    }
    model.trunk_opt.step(&mut model.trunk, &g_trunk)?;
    model.transition_opt.step(&mut model.transition_head, &g_trans)?;
    model.reward_opt.step(&mut model.reward_head, &g_rew)?;
    model.updates += 1;
    Ok(loss)
}

/// Draws `(ŝ′, r̂)`. In random mode every coordinate and the reward use
/// their own uniformly drawn quantile index.
pub fn model_sample<R: Rng + ?Sized>(
    model: &DynamicsModel,
    obs: &[f64],
    action: usize,
    rng: &mut R,
    mode: SampleMode,
) -> Result<(Vec<f64>, f64), RlError> {
    let (trans, rew) = model.quantiles(obs, action)?;
    let q = model.spec.q;
    let pick = |rng: &mut R| match mode {
        SampleMode::Random => rng.gen_range(0..q),
        SampleMode::Median => model.spec.median_index(),
    };
    let next = (0..model.obs_dim).map(|d| trans[d * q + pick(rng)]).collect();
    let r = rew[pick(rng)];
    Ok((next, r))
}

/// Appends `l` forecast `(load, pv)` pairs to `obs`. The model is rolled
/// forward in median mode, choosing actions greedily with the policy applied
/// to the zero-padded predicted observation. Until `ready`, or without a
/// model, the slots are zero.
pub fn forecast_augment(
    model: Option<&DynamicsModel>,
    policy: &DenseNet,
    obs: &[f64],
    l: usize,
    coords: Option<(usize, usize)>,
    ready: bool,
) -> Result<Vec<f64>, RlError> {
    let mut out = Vec::with_capacity(obs.len() + 2 * l);
    out.extend_from_slice(obs);
    let (Some(model), Some((lc, pc)), true) = (model, coords, ready) else {
        out.resize(obs.len() + 2 * l, 0.0);
        return Ok(out);
    };
    // Median mode never touches the generator.
    let mut unused = rand::rngs::mock::StepRng::new(0, 0);
    let mut s = obs.to_vec();
    let mut padded = vec![0.0; obs.len() + 2 * l];
    for _ in 0..l {
        padded[..s.len()].copy_from_slice(&s);
        let (a, _) = policy_act(policy, &padded, &mut unused, true)?;
        let (next, _) = model_sample(model, &s, a, &mut unused, SampleMode::Median)?;
        out.push(next[lc]);
        out.push(next[pc]);
        s = next;
    }
    Ok(out)
}
