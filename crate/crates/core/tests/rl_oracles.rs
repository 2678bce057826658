use std::sync::Arc;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use microgrid_core::data::ExogenousSeries;
use microgrid_core::nn::QuantileSpec;
use microgrid_core::rl::{
    dyna_train, evaluate, forecast_augment, model_update, policy_probs, train_ppo, AgentConfig, DynamicsModel, Env,
    MicrogridEnv, ObsScaler, ToyMdp, TrainOutcome, Transition,
};
use microgrid_core::sim::{FailureParams, MicrogridConfig};

/// Optimal greedy action per state of a deterministic finite MDP by value
/// iteration on the infinite-horizon discounted problem.
fn value_iteration(m: &ToyMdp, gamma: f64) -> Vec<usize> {
    let ns = m.next.len();
    let mut v = vec![0.0; ns];
    let q = |v: &[f64], s: usize, a: usize| m.reward[s][a] + gamma * v[m.next[s][a]];
    for _ in 0..10_000 {
        v = (0..ns)
            .map(|s| (0..m.next[s].len()).map(|a| q(&v, s, a)).fold(f64::MIN, f64::max))
            .collect();
    }
    (0..ns)
        .map(|s| {
            let qs: Vec<f64> = (0..m.next[s].len()).map(|a| q(&v, s, a)).collect();
            (0..qs.len()).max_by(|&a, &b| qs[a].total_cmp(&qs[b])).unwrap()
        })
        .collect()
}

fn toy_cfg() -> AgentConfig {
    AgentConfig {
        gamma: 0.9,
        h: 0,
        l: 0,
        q: 4,
        hidden: vec![16],
        model_hidden: vec![16],
        lr_policy: 3e-3,
        lr_value: 1e-2,
        lr_model: 1e-2,
        rollout_len: 50,
        minibatch: 25,
        total_steps: 50 * 80,
        warmup_b: 100,
        plan_n: 8,
        model_batch: 32,
        model_steps: 8,
        eval_every: 1,
        ..AgentConfig::default()
    }
}

fn greedy_policy(out: &TrainOutcome, m: &ToyMdp) -> Vec<usize> {
    (0..m.next.len())
        .map(|s| {
            let p = policy_probs(&out.agent.policy, &m.one_hot(s)).unwrap();
            (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap()
        })
        .collect()
}

/// Real steps until the greedy evaluation return first reaches `target`.
fn steps_to(out: &TrainOutcome, target: f64) -> Option<usize> {
    out.curve
        .iter()
        .find(|p| p.return_eval.is_some_and(|r| r >= target - 1e-9))
        .map(|p| p.step)
}

#[test]
fn value_iteration_oracle_on_the_toy() {
    let m = ToyMdp::two_state();
    assert_eq!(value_iteration(&m, 0.9), vec![1, 0]);
    // Below γ = 1/2 the immediate reward wins.
    assert_eq!(value_iteration(&m, 0.3), vec![0, 0]);
}

#[test]
fn ppo_learns_the_toy_policy() {
    let m = ToyMdp::two_state();
    let oracle = value_iteration(&m, 0.9);
    let mut optimal = 0;
    for seed in 0..10 {
        let mut env = m.clone();
        let out = train_ppo(&mut env, None, &toy_cfg(), seed).unwrap();
        assert!(out.curve.len() <= 501);
        if greedy_policy(&out, &m) == oracle {
            optimal += 1;
        }
    }
    assert!(optimal >= 9, "{optimal}/10 seeds optimal");
}

#[test]
fn planning_off_is_the_baseline_bit_for_bit() {
    let m = ToyMdp::two_state();
    let cfg = AgentConfig {
        plan_n: 0,
        total_steps: 1000,
        ..toy_cfg()
    };
    for seed in [0, 7] {
        let (mut e1, mut v1, mut e2, mut v2) = (m.clone(), m.clone(), m.clone(), m.clone());
        let d = dyna_train(&mut e1, Some(&mut v1), &cfg, seed).unwrap();
        let p = train_ppo(&mut e2, Some(&mut v2), &cfg, seed).unwrap();
        assert!(d.agent.model.is_some() && p.agent.model.is_none());
        assert_eq!(d.agent.policy, p.agent.policy);
        assert_eq!(d.agent.value, p.agent.value);
        for (a, b) in d.curve.iter().zip(&p.curve) {
            assert_eq!(
                (a.step, a.return_train, a.return_eval, a.kl),
                (b.step, b.return_train, b.return_eval, b.kl)
            );
            assert_eq!(
                (a.loss_policy.to_bits(), a.loss_value.to_bits()),
                (b.loss_policy.to_bits(), b.loss_value.to_bits())
            );
        }
    }
}

#[test]
fn planning_reaches_the_optimum_with_fewer_real_steps() {
    let m = ToyMdp::two_state();
    let target = 75.0;
    let mut ppo_steps = Vec::new();
    let mut dyna_steps = Vec::new();
    for seed in 0..10 {
        let (mut e1, mut v1, mut e2, mut v2) = (m.clone(), m.clone(), m.clone(), m.clone());
        let p = train_ppo(&mut e1, Some(&mut v1), &toy_cfg(), seed).unwrap();
        let d = dyna_train(&mut e2, Some(&mut v2), &toy_cfg(), seed).unwrap();
        let never = toy_cfg().total_steps * 2;
        ppo_steps.push(steps_to(&p, target).unwrap_or(never));
        dyna_steps.push(steps_to(&d, target).unwrap_or(never));
    }
    let median = |v: &mut Vec<usize>| {
        v.sort();
        (v[4] + v[5]) as f64 / 2.0
    };
    let (mp, md) = (median(&mut ppo_steps), median(&mut dyna_steps));
    assert!(md <= 0.5 * mp, "planning median {md} steps, baseline {mp}");
}

/// Period four, so a four-sample history identifies the phase.
fn cyclic_series(days: usize) -> Arc<ExogenousSeries> {
    let start = NaiveDate::from_ymd_opt(2016, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let load: Vec<f64> = (0..24 * days).map(|t| [10.0, 20.0, 30.0, 15.0][t % 4]).collect();
    let pv: Vec<f64> = (0..24 * days).map(|t| [0.0, 40.0, 80.0, 40.0][t % 4]).collect();
    Arc::new(ExogenousSeries::hourly(start, load, pv).unwrap())
}

#[test]
fn forecasts_from_a_fitted_model_follow_the_true_series() {
    let cfg = MicrogridConfig::default();
    let series = cyclic_series(20);
    let scaler = ObsScaler::new(&cfg, &series);
    let h = 3;
    let mut env = MicrogridEnv::new(cfg, series.clone(), h, FailureParams::default(), scaler, 1.0, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = DynamicsModel::new(env.obs_dim(), 3, &[64, 64], QuantileSpec::new(3, 1.0), 3e-3, &mut rng);
    let mut data = Vec::new();
    let mut obs = env.reset();
    loop {
        let a = data.len() % 3;
        let st = env.step(a).unwrap();
        data.push(Transition {
            obs: obs.clone(),
            aug: obs,
            action: a,
            reward: st.reward,
            next_obs: st.obs.clone(),
            done: st.done,
        });
        if st.done {
            break;
        }
        obs = st.obs;
    }
    for i in 0..3000 {
        if i == 2000 {
            model.set_lr(3e-4);
        }
        let batch: Vec<&Transition> = (0..64).map(|k| &data[(i * 64 + k * 7) % data.len()]).collect();
        model_update(&mut model, &batch).unwrap();
    }
    let l = 4;
    let mut prng = ChaCha8Rng::seed_from_u64(1);
    let policy = microgrid_core::nn::DenseNet::new(
        &[env.obs_dim() + 2 * l, 3],
        microgrid_core::nn::Activation::Identity,
        microgrid_core::nn::Activation::Identity,
        &mut prng,
    );
    let (lc, pc) = env.forecast_coords().unwrap();
    let mut worst: f64 = 0.0;
    for t in [100, 205, 310, 415] {
        let o = &data[t].obs;
        let aug = forecast_augment(Some(&model), &policy, o, l, Some((lc, pc)), true).unwrap();
        for k in 0..l {
            let want_load = series.load_kw()[t + 1 + k] / scaler.load_scale;
            let want_pv = series.pv_kw()[t + 1 + k] / scaler.pv_scale;
            worst = worst.max((aug[o.len() + 2 * k] - want_load).abs());
            worst = worst.max((aug[o.len() + 2 * k + 1] - want_pv).abs());
        }
    }
    assert!(worst < 0.05, "largest forecast error {worst}");
}

#[test]
fn evaluation_is_greedy_and_repeatable() {
    let m = ToyMdp::two_state();
    let mut env = m.clone();
    let out = train_ppo(
        &mut env,
        None,
        &AgentConfig {
            total_steps: 500,
            ..toy_cfg()
        },
        3,
    )
    .unwrap();
    let mut e = m.clone();
    let a = evaluate(&out.agent, &mut e).unwrap();
    let b = evaluate(&out.agent, &mut e).unwrap();
    assert_eq!(a, b);
}
