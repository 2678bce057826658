use rand::seq::SliceRandom;
use rand::Rng;

use super::{AgentConfig, RlError};
use crate::nn::{Adam, DenseNet, Grads, Optimizer};

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn checked_logits(policy: &DenseNet, obs: &[f64]) -> Result<Vec<f64>, RlError> {
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(RlError::NonFinite("observation"));
    }
    let z = policy.forward(obs)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(RlError::NonFinite("logits"));
    }
    Ok(z)
}

pub fn policy_probs(policy: &DenseNet, obs: &[f64]) -> Result<Vec<f64>, RlError> {
    Ok(softmax(&checked_logits(policy, obs)?))
}

/// Samples an action, or takes the first most likely one when `greedy`, and
/// returns it with its log-probability.
pub fn policy_act<R: Rng + ?Sized>(
    policy: &DenseNet,
    obs: &[f64],
    rng: &mut R,
    greedy: bool,
) -> Result<(usize, f64), RlError> {
    let z = checked_logits(policy, obs)?;
    let logp = log_softmax(&z);
    let a = if greedy {
        argmax(&logp)
    } else {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = logp.len() - 1;
        for (i, lp) in logp.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                pick = i;
                break;
            }
        }
        pick
    };
    Ok((a, logp[a]))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// `r + γ V(s′) − V(s)`.
pub fn advantage(r: f64, v_s: f64, v_s2: f64, gamma: f64) -> f64 {
    r + gamma * v_s2 - v_s
}

/// Per-transition objective `ratio · Â − KL(π ‖ π_o) / β`.
pub fn surrogate(p: &[f64], p_old: &[f64], action: usize, adv: f64, beta: f64) -> f64 {
    let ratio = p[action] / p_old[action];
    let kl: f64 = p
        .iter()
        .zip(p_old)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, po)| pi * (pi / po).ln())
        .sum();
    ratio * adv - kl / beta
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoBatchItem {
    pub obs: Vec<f64>,
    pub action: usize,
    /// Scaled reward.
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PpoStats {
    /// Mean `KL(π ‖ π_o)` over the batch after the update.
    pub kl: f64,
    /// Mean negated surrogate over the last completed epoch.
    pub loss_policy: f64,
    /// Mean `½Â²` over the last completed epoch.
    pub loss_value: f64,
    pub epochs_completed: usize,
    /// An epoch was reverted for exceeding the KL ceiling.
    pub truncated: bool,
}

fn mean_kl(policy: &DenseNet, batch: &[PpoBatchItem], logp_old: &[Vec<f64>]) -> Result<f64, RlError> {
    let mut total = 0.0;
    for (it, lo) in batch.iter().zip(logp_old) {
        let lp = log_softmax(&checked_logits(policy, &it.obs)?);
        total += lp.iter().zip(lo).map(|(a, b)| a.exp() * (a - b)).sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// KL-regularised policy iteration on one batch: `epochs` passes of
/// minibatch ascent on the surrogate and descent on `½(y − V(s))²`, where the
/// targets `y` and the advantages come from the value network as it was at
/// batch start and `π_o` is the policy at batch start. On a non-finite loss
/// every network and optimizer is restored to its batch-start state.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut DenseNet,
    value: &mut DenseNet,
    policy_opt: &mut Adam,
    value_opt: &mut Adam,
    batch: &[PpoBatchItem],
    cfg: &AgentConfig,
    rng: &mut R,
) -> Result<PpoStats, RlError> {
    if batch.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let start = (policy.clone(), value.clone(), policy_opt.clone(), value_opt.clone());
    let rollback = |policy: &mut DenseNet, value: &mut DenseNet, po: &mut Adam, vo: &mut Adam| {
        *policy = start.0.clone();
        *value = start.1.clone();
        *po = start.2.clone();
        *vo = start.3.clone();
    };

    let n = batch.len();
    let mut targets = Vec::with_capacity(n);
    let mut adv = Vec::with_capacity(n);
    let mut logp_old = Vec::with_capacity(n);
    for it in batch {
        let v_s = value.forward(&it.obs)?[0];
        let v_s2 = if it.done { 0.0 } else { value.forward(&it.next_obs)?[0] };
        targets.push(it.reward + cfg.gamma * v_s2);
        adv.push(advantage(it.reward, v_s, v_s2, cfg.gamma));
        logp_old.push(log_softmax(&checked_logits(policy, &it.obs)?));
    }
    if adv.iter().chain(&targets).any(|v| !v.is_finite()) {
        return Err(RlError::NonFinite("advantage"));
    }
    if cfg.normalize_advantages && n > 1 {
        let mean = adv.iter().sum::<f64>() / n as f64;
        let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for a in adv.iter_mut() {
            *a = if sd > 1e-8 { (*a - mean) / sd } else { *a - mean };
        }
    }

    let mut stats = PpoStats::default();
    let mut order: Vec<usize> = (0..n).collect();
    let mut gp = Grads::zeros_like(policy);
    let mut gv = Grads::zeros_like(value);
    for _ in 0..cfg.epochs {
        let epoch_start = (policy.clone(), policy_opt.clone());
        order.shuffle(rng);
        let (mut lp_sum, mut lv_sum) = (0.0, 0.0);
        for chunk in order.chunks(cfg.minibatch) {
            gp.zero();
            gv.zero();
            let m = chunk.len() as f64;
            let (mut lp_mb, mut lv_mb) = (0.0, 0.0);
            for &i in chunk {
                let it = &batch[i];
                let cache = policy.forward_cached(&it.obs)?;
                let logp = log_softmax(&cache.output);
                let p: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
                let ell: Vec<f64> = logp.iter().zip(&logp_old[i]).map(|(a, b)| a - b).collect();
                let kl: f64 = p.iter().zip(&ell).map(|(pj, lj)| pj * lj).sum();
                let ratio = ell[it.action].exp();
                lp_mb -= ratio * adv[i] - kl / cfg.beta;
                let up: Vec<f64> = (0..p.len())
                    .map(|j| {
                        let d = if j == it.action { 1.0 } else { 0.0 };
                        -(adv[i] * ratio * (d - p[j]) - p[j] * (ell[j] - kl) / cfg.beta) / m
                    })
                    .collect();
                policy.backward(&cache, &up, &mut gp)?;

                let vc = value.forward_cached(&it.obs)?;
                let e = vc.output[0] - targets[i];
                lv_mb += 0.5 * e * e;
                value.backward(&vc, &[e / m], &mut gv)?;
            }
            if !(lp_mb.is_finite() && lv_mb.is_finite()) {
                rollback(policy, value, policy_opt, value_opt);
                return Err(RlError::NonFinite("loss"));
            }
            if policy_opt.step(policy, &gp).and(value_opt.step(value, &gv)).is_err() {
                rollback(policy, value, policy_opt, value_opt);
                return Err(RlError::NonFinite("gradient"));
            }
            lp_sum += lp_mb;
            lv_sum += lv_mb;
        }
        if !(policy.is_finite() && value.is_finite()) {
            rollback(policy, value, policy_opt, value_opt);
            return Err(RlError::NonFinite("parameters"));
        }
        let kl = mean_kl(policy, batch, &logp_old)?;
        if kl > cfg.kl_ceiling {
            *policy = epoch_start.0;
            *policy_opt = epoch_start.1;
            stats.truncated = true;
            break;
        }
        stats.kl = kl;
        stats.loss_policy = lp_sum / n as f64;
        stats.loss_value = lv_sum / n as f64;
        stats.epochs_completed += 1;
    }
    Ok(stats)
}
