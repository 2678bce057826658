//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so every line is printed; exits nonzero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use common::{
    exhaustive_milp, fit_quantiles, gradient_check, random_boxed_lp, random_milp, random_net, vertex_enumeration,
};
use microgrid_core::data::{synth_series, ExogenousSeries, SynthParams};
use microgrid_core::harness::{
    run_episode, run_experiment, AgentController, ConfigDoc, Controller, ExperimentSpec, HeuristicController,
    MpcController, Protocol, Report, TimeRange,
};
use microgrid_core::lp::{branch_and_bound, simplex_solve, LpStatus};
use microgrid_core::mpc::{perfect_forecast, solve_plan};
use microgrid_core::nn::{quantile_huber, Activation};
use microgrid_core::rl::{dyna_train, policy_probs, train_ppo, AgentConfig, Env, MicrogridEnv, ObsScaler, ToyMdp};
use microgrid_core::sim::{
    ControlAction, Decision, FailureParams, MetaAction, MicrogridConfig, Simulator, BALANCE_TOL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(started: Instant, budget: Duration, detail: String) -> Outcome {
    let took = started.elapsed();
    let detail = format!("{detail}; {:.1}s (budget {}s)", took.as_secs_f64(), budget.as_secs());
    check(took < budget, detail)
}

/// `a ≥ b` up to a relative tie tolerance.
fn at_least(a: f64, b: f64) -> bool {
    a >= b - 1e-6 * (1.0 + b.abs())
}

fn random_series(rng: &mut ChaCha8Rng, len: usize) -> ExogenousSeries {
    let start = NaiveDate::from_ymd_opt(2016, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let load = (0..len).map(|_| rng.gen_range(0.0..40.0)).collect();
    let pv = (0..len)
        .map(|_| {
            if rng.gen_bool(0.4) {
                0.0
            } else {
                rng.gen_range(0.0..120.0)
            }
        })
        .collect();
    ExogenousSeries::hourly(start, load, pv).unwrap()
}

fn c1_conservation() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut steps, mut worst_balance, mut bad) = (0usize, 0.0f64, 0usize);
    while steps < 100_000 {
        let cfg = MicrogridConfig {
            degradation_slope: rng.gen_range(0.0..2.0),
            eta_ch: rng.gen_range(0.5..1.0),
            eta_dis: rng.gen_range(0.5..1.0),
            ..Default::default()
        };
        let s = Arc::new(random_series(&mut rng, 1000));
        let failure = FailureParams {
            enabled: rng.gen_bool(0.5),
            repair_hours: 30,
            ..Default::default()
        };
        let mut sim = Simulator::new(cfg.clone(), s.clone(), 3, failure, rng.gen()).unwrap();
        while !sim.is_done() {
            let t = sim.state().t;
            let decision = if rng.gen_bool(0.7) {
                Decision::Meta(MetaAction::ALL[rng.gen_range(0..3)])
            } else {
                Decision::Direct(ControlAction {
                    p_ch: rng.gen_range(0.0..cfg.p_ch_max),
                    p_dis: rng.gen_range(0.0..cfg.p_dis_max),
                    p_gen: rng.gen_range(0.0..cfg.p_gen_max),
                })
            };
            let out = match sim.step(decision) {
                Ok(o) => o,
                // Simultaneous charge and discharge is rejected by design.
                Err(_) => continue,
            };
            let (a, c) = (&out.action, &out.costs);
            let residual =
                (s.pv_kw()[t] + a.p_gen + a.p_dis + c.shed_kw - a.p_ch - c.curtailed_kw - s.load_kw()[t]).abs();
            worst_balance = worst_balance.max(residual);
            let soc_ok = out.next.soc >= 0.0 && out.next.soc <= out.next.effective_capacity;
            let reward_ok = out.reward == -(c.fuel_cost + c.curt_cost + c.shed_cost);
            if residual > BALANCE_TOL || !soc_ok || !reward_ok {
                bad += 1;
            }
            steps += 1;
        }
    }
    let detail = format!("{steps} steps, worst balance residual {worst_balance:.1e}, {bad} violations");
    if bad > 0 || worst_balance > 1e-9 {
        return Err(detail);
    }
    within(t0, Duration::from_secs(10), detail)
}

fn c2_lp_oracles() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut lp_worst, mut lp_bad) = (0.0f64, 0);
    for _ in 0..200 {
        let lp = random_boxed_lp(&mut rng);
        let s = simplex_solve(&lp).map_err(|e| e.to_string())?;
        match vertex_enumeration(&lp) {
            Some((obj, _)) if s.status == LpStatus::Optimal => lp_worst = lp_worst.max((s.objective - obj).abs()),
            None if s.status == LpStatus::Infeasible => {}
            _ => lp_bad += 1,
        }
    }
    let (mut milp_worst, mut milp_bad) = (0.0f64, 0);
    for _ in 0..50 {
        let p = random_milp(&mut rng);
        let s = branch_and_bound(&p).map_err(|e| e.to_string())?;
        match exhaustive_milp(&p) {
            Some(obj) if s.status == LpStatus::Optimal => {
                milp_worst = milp_worst.max((s.objective - obj).abs() / (1.0 + obj.abs()))
            }
            None if s.status == LpStatus::Infeasible => {}
            _ => milp_bad += 1,
        }
    }
    let detail = format!(
        "200 LPs: max |Δobj| {lp_worst:.1e}, {lp_bad} status mismatches; 50 MILPs: max rel |Δobj| {milp_worst:.1e}, {milp_bad} mismatches"
    );
    if lp_bad + milp_bad > 0 || lp_worst > 1e-7 || milp_worst > 1e-7 {
        return Err(detail);
    }
    within(t0, Duration::from_secs(60), detail)
}

fn winter_48h(seed: u64) -> Arc<ExogenousSeries> {
    let start = NaiveDate::from_ymd_opt(2016, 6, 1).unwrap();
    Arc::new(
        synth_series(&SynthParams {
            seed,
            days: 2,
            start,
            ..Default::default()
        })
        .unwrap(),
    )
}

fn c3_mpc_bound() -> Outcome {
    let cfg = MicrogridConfig::default();
    let (mut worst_gap, mut violations) = (0.0f64, Vec::new());
    for seed in 0..20 {
        let s = winter_48h(seed);
        let sim = || Simulator::new(cfg.clone(), s.clone(), 4, FailureParams::default(), seed).unwrap();
        let plan = solve_plan(
            &cfg,
            sim().state().soc,
            cfg.s_max,
            &perfect_forecast(&s, 0, s.len()).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        let full = run_episode(&mut MpcController { horizon: None }, &mut sim(), seed).map_err(|e| e.to_string())?;
        worst_gap = worst_gap.max((full.final_return + plan.objective).abs());

        let scaler = ObsScaler::new(&cfg, &s);
        let agent_cfg = AgentConfig {
            total_steps: 960,
            rollout_len: 96,
            warmup_b: 192,
            h: 4,
            l: 2,
            ..AgentConfig::desk()
        };
        let env =
            || MicrogridEnv::new(cfg.clone(), s.clone(), 4, FailureParams::default(), scaler, 240.0, seed).unwrap();
        let ppo = train_ppo(&mut env(), None, &agent_cfg, seed)
            .map_err(|e| e.to_string())?
            .agent;
        let dyna = dyna_train(&mut env(), None, &agent_cfg, seed)
            .map_err(|e| e.to_string())?
            .agent;
        let mut others: Vec<Box<dyn Controller>> = vec![
            Box::new(HeuristicController),
            Box::new(MpcController { horizon: Some(1) }),
            Box::new(MpcController { horizon: Some(24) }),
            Box::new(AgentController {
                label: "ppo".into(),
                agent: ppo,
                scaler,
            }),
            Box::new(AgentController {
                label: "ddyna".into(),
                agent: dyna,
                scaler,
            }),
        ];
        for c in others.iter_mut() {
            let r = run_episode(c.as_mut(), &mut sim(), seed).map_err(|e| e.to_string())?;
            if !at_least(full.final_return, r.final_return) {
                violations.push(format!(
                    "seed {seed}: {} {:.3} > mpc-full {:.3}",
                    r.controller, r.final_return, full.final_return
                ));
            }
        }
    }
    let detail = format!(
        "20 episodes, max |return + objective| {worst_gap:.1e}, {} ordering violations",
        violations.len()
    );
    check(
        worst_gap <= 1e-5 && violations.is_empty(),
        format!("{detail} {violations:?}"),
    )
}

fn c4_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let acts = [Activation::Relu, Activation::Tanh, Activation::Identity];
    let worst = (0..100).map(|i| {
        let (net, x, proj) = random_net(&mut rng, acts[i % 3]);
        gradient_check(&net, &x, &proj, 1e-5)
    });
    let worst = worst.fold(0.0f64, f64::max);
    check(worst < 1e-4, format!("100 nets, max relative error {worst:.2e}"))
}

fn c5_quantiles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
    let fitted = fit_quantiles(&samples, 5, 0.01, 1500);
    let err = fitted
        .iter()
        .zip([0.1, 0.3, 0.5, 0.7, 0.9])
        .map(|(f, w)| (f - w).abs())
        .fold(0.0, f64::max);
    let (h1, h2) = (quantile_huber(2.0, 0.5, 1.0), quantile_huber(-0.5, 0.5, 1.0));
    check(
        err <= 0.05 && h1 == 0.75 && h2 == 0.0625,
        format!("fitted {fitted:.3?} (max error {err:.3}); hand values {h1}, {h2}"),
    )
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

/// Optimal action per state by value iteration.
fn value_iteration(m: &ToyMdp, gamma: f64) -> Vec<usize> {
    let ns = m.next.len();
    let q = |v: &[f64], s: usize, a: usize| m.reward[s][a] + gamma * v[m.next[s][a]];
    let mut v = vec![0.0; ns];
    for _ in 0..5000 {
        v = (0..ns)
            .map(|s| (0..m.next[s].len()).map(|a| q(&v, s, a)).fold(f64::MIN, f64::max))
            .collect();
    }
    (0..ns)
        .map(|s| {
            (0..m.next[s].len())
                .max_by(|&a, &b| q(&v, s, a).total_cmp(&q(&v, s, b)))
                .unwrap()
        })
        .collect()
}

fn c6_ppo_toy() -> Outcome {
    let t0 = Instant::now();
    let m = ToyMdp::two_state();
    let oracle = value_iteration(&m, 0.9);
    let mut optimal = 0;
    for seed in 0..10 {
        let out = train_ppo(&mut m.clone(), None, &toy_cfg(), seed).map_err(|e| e.to_string())?;
        let greedy: Vec<usize> = (0..2)
            .map(|s| {
                let p = policy_probs(&out.agent.policy, &m.one_hot(s)).unwrap();
                (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap()
            })
            .collect();
        optimal += (greedy == oracle) as usize;
    }
    let detail = format!("optimal policy {oracle:?} in {optimal}/10 seeds");
    if optimal < 9 {
        return Err(detail);
    }
    within(t0, Duration::from_secs(120), detail)
}

fn c7_ablation_identity() -> Outcome {
    let cfg = MicrogridConfig::default();
    let s = Arc::new(
        synth_series(&SynthParams {
            days: 20,
            ..Default::default()
        })
        .unwrap(),
    );
    let scaler = ObsScaler::new(&cfg, &s);
    let agent = AgentConfig {
        total_steps: 2048,
        plan_n: 0,
        warmup_b: 512,
        ..AgentConfig::desk()
    };
    let env = |seed| {
        MicrogridEnv::new(
            cfg.clone(),
            s.clone(),
            agent.h,
            FailureParams::default(),
            scaler,
            240.0,
            seed,
        )
        .unwrap()
    };
    let mut mismatches = 0;
    for seed in [0, 1, 2] {
        let (mut e1, mut v1, mut e2, mut v2) = (
            env(seed),
            env(seed).replaying(seed),
            env(seed),
            env(seed).replaying(seed),
        );
        let d = dyna_train(&mut e1, Some(&mut v1 as &mut dyn Env), &agent, seed).map_err(|e| e.to_string())?;
        let p = train_ppo(&mut e2, Some(&mut v2 as &mut dyn Env), &agent, seed).map_err(|e| e.to_string())?;
        let same_curve = d.curve.len() == p.curve.len()
            && d.curve.iter().zip(&p.curve).all(|(a, b)| {
                a.return_eval.map(f64::to_bits) == b.return_eval.map(f64::to_bits)
                    && a.return_train.to_bits() == b.return_train.to_bits()
                    && a.loss_policy.to_bits() == b.loss_policy.to_bits()
                    && a.loss_value.to_bits() == b.loss_value.to_bits()
            });
        if !(same_curve && d.agent.policy == p.agent.policy && d.agent.value == p.agent.value) {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0,
        format!("3 seeds on a 20-day microgrid, {mismatches} differing runs"),
    )
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn medians(report: &Report) -> Vec<(String, f64)> {
    report
        .summaries
        .iter()
        .map(|s| (s.controller.clone(), s.final_median))
        .collect()
}

fn fmt_medians(m: &[(String, f64)]) -> String {
    m.iter()
        .map(|(c, v)| format!("{c} {v:.0}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn c8_generalization() -> Outcome {
    let t0 = Instant::now();
    let doc = ConfigDoc {
        agent: AgentConfig::desk(),
        experiment: ExperimentSpec::default(),
        ..ConfigDoc::default()
    };
    let report = run_experiment(&doc).map_err(|e| e.to_string())?;
    let m = |c: &str| report.summary(c).unwrap().final_median;
    let (heur, mpc1, mpc24, ppo, dyna) = (m("heuristic"), m("mpc-1"), m("mpc-24"), m("ppo"), m("ddyna"));
    let ok = at_least(ppo, heur)
        && at_least(mpc1, heur)
        && at_least(mpc24, mpc1)
        && at_least(dyna, ppo)
        && at_least(dyna, mpc1);
    let detail = format!("medians over 10 seeds: {}", fmt_medians(&medians(&report)));
    if !ok {
        return Err(detail);
    }
    within(t0, Duration::from_secs(30 * 60), detail)
}

fn c9_robustness() -> Outcome {
    let doc = ConfigDoc {
        agent: AgentConfig::desk(),
        experiment: ExperimentSpec {
            protocol: Protocol::Robustness,
            controllers: ["heuristic", "mpc-1", "mpc-24", "ddyna"].map(String::from).to_vec(),
            ..ExperimentSpec::default()
        },
        ..ConfigDoc::default()
    };
    let report = run_experiment(&doc).map_err(|e| e.to_string())?;
    let m = |c: &str| report.summary(c).unwrap().final_median;
    let dyna = m("ddyna");
    let ok = ["heuristic", "mpc-1", "mpc-24"].iter().all(|c| dyna > m(c));
    check(ok, format!("medians over 10 seeds: {}", fmt_medians(&medians(&report))))
}

fn c10_transfer() -> Outcome {
    let doc = ConfigDoc {
        agent: AgentConfig {
            eval_every: 2,
            ..AgentConfig::desk()
        },
        experiment: ExperimentSpec {
            protocol: Protocol::Transfer,
            controllers: vec!["ddyna".into()],
            pretrain: Some(TimeRange::days(date(2016, 1, 1), 90)),
            train: Some(TimeRange::days(date(2016, 7, 1), 31)),
            test: TimeRange::days(date(2016, 8, 1), 31),
            ..ExperimentSpec::default()
        },
        ..ConfigDoc::default()
    };
    let n_updates = doc.agent.n_updates();
    let report = run_experiment(&doc).map_err(|e| e.to_string())?;
    let scratch = report.summary("ddyna").unwrap().final_median;
    let tuned: Vec<_> = report
        .results
        .iter()
        .filter(|r| r.controller == "ddyna-transfer")
        .collect();
    // Median across seeds of the fine-tuning curve at every evaluated update.
    let curve: Vec<(usize, f64)> = tuned[0]
        .curve
        .iter()
        .map(|&(u, _)| {
            let mut v: Vec<f64> = tuned
                .iter()
                .map(|r| r.curve.iter().find(|p| p.0 == u).unwrap().1)
                .collect();
            v.sort_by(f64::total_cmp);
            (u, 0.5 * (v[(v.len() - 1) / 2] + v[v.len() / 2]))
        })
        .collect();
    let reached = curve.iter().find(|&&(_, v)| at_least(v, scratch)).map(|p| p.0);
    let detail = format!(
        "scratch final median {scratch:.0} after {n_updates} updates; fine-tuned median reaches it at update {reached:?} (limit {})",
        n_updates / 2
    );
    check(reached.is_some_and(|u| 2 * u <= n_updates), detail)
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("simulator conservation", c1_conservation),
        ("LP/MILP oracle equivalence", c2_lp_oracles),
        ("MPC optimality bound", c3_mpc_bound),
        ("gradient correctness", c4_gradients),
        ("quantile recovery", c5_quantiles),
        ("PPO sanity", c6_ppo_toy),
        ("Dyna ablation identity", c7_ablation_identity),
        ("generalization ordering", c8_generalization),
        ("robustness ordering", c9_robustness),
        ("transfer speed-up", c10_transfer),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(d) => println!("PASS {:>2} {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
