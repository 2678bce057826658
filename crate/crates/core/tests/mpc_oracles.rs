use std::sync::Arc;
use std::time::Instant;

use chrono::NaiveDate;
use microgrid_core::data::{synth_series, ExogenousSeries, SynthParams};
use microgrid_core::lp::branch_and_bound;
use microgrid_core::mpc::{build_problem, mpc_act, perfect_forecast, solve_plan, ForecastWindow, MpcLayout};
use microgrid_core::sim::{
    balance_and_costs, battery_step, ControlAction, Decision, FailureParams, MicrogridConfig, SimState, Simulator,
};

/// Minimum two-hour cost over a 0.25 kW grid of (generator, battery flow)
/// per hour, evaluated with the simulator's own cost and battery functions.
fn brute_force_two_hours(cfg: &MicrogridConfig, soc0: f64, load: [f64; 2], pv: [f64; 2]) -> f64 {
    let grid = |lo: f64, hi: f64| {
        let n = ((hi - lo) / 0.25).round() as usize;
        (0..=n).map(move |i| lo + 0.25 * i as f64)
    };
    let actions: Vec<ControlAction> = grid(0.0, cfg.p_gen_max)
        .flat_map(|g| {
            grid(-20.0, 20.0).map(move |f| ControlAction {
                p_ch: f.max(0.0),
                p_dis: (-f).max(0.0),
                p_gen: g,
            })
        })
        .collect();
    let s0 = SimState::with_flat_history(soc0, cfg, 0, 0.0, 0.0);
    let mut best = f64::INFINITY;
    for a in &actions {
        let Ok(s1) = battery_step(&s0, a.p_ch, a.p_dis, cfg) else {
            continue;
        };
        let c1 = balance_and_costs(pv[0], load[0], a, cfg).total();
        if c1 >= best {
            continue;
        }
        for b in &actions {
            if battery_step(&s1, b.p_ch, b.p_dis, cfg).is_ok() {
                best = best.min(c1 + balance_and_costs(pv[1], load[1], b, cfg).total());
            }
        }
    }
    best
}

#[test]
fn two_hour_deficit_matches_brute_force() {
    let cfg = MicrogridConfig::default();
    let fc = ForecastWindow::new(vec![5.0, 5.0], vec![0.0, 0.0]).unwrap();
    let plan = solve_plan(&cfg, 0.0, cfg.s_max, &fc).unwrap();
    assert!((plan.objective - 10.0).abs() < 1e-9);
    assert!(plan.actions.iter().all(|a| (a.p_gen - 5.0).abs() < 1e-9));
    let oracle = brute_force_two_hours(&cfg, 0.0, [5.0, 5.0], [0.0, 0.0]);
    assert!((plan.objective - oracle).abs() < 1e-9, "{} vs {oracle}", plan.objective);
}

#[test]
fn mixed_two_hour_cases_match_brute_force() {
    let cfg = MicrogridConfig::default();
    let cases = [
        (0.0, [0.0, 12.0], [15.0, 0.0]),
        (3.0, [14.0, 2.0], [0.0, 9.0]),
        (6.0, [7.0, 16.0], [11.0, 0.0]),
    ];
    for (soc0, load, pv) in cases {
        let fc = ForecastWindow::new(load.to_vec(), pv.to_vec()).unwrap();
        let plan = solve_plan(&cfg, soc0, cfg.s_max, &fc).unwrap();
        let oracle = brute_force_two_hours(&cfg, soc0, load, pv);
        // The grid can only be worse than the continuous optimum.
        assert!(plan.objective <= oracle + 1e-9, "{} vs {oracle}", plan.objective);
        assert!(oracle - plan.objective < 0.5, "{} vs {oracle}", plan.objective);
    }
}

fn toy_48h(seed: u64) -> ExogenousSeries {
    let p = SynthParams {
        seed,
        days: 2,
        start: NaiveDate::from_ymd_opt(2016, 6, 1).unwrap(),
        ..Default::default()
    };
    synth_series(&p).unwrap()
}

#[test]
fn open_loop_plan_return_equals_objective() {
    let cfg = MicrogridConfig::default();
    let s = Arc::new(toy_48h(3));
    let mut sim = Simulator::new(cfg.clone(), s.clone(), 0, FailureParams::default(), 0).unwrap();
    let fc = perfect_forecast(&s, 0, s.len()).unwrap();
    let plan = solve_plan(&cfg, sim.state().soc, cfg.s_max, &fc).unwrap();
    let mut ret = 0.0;
    for a in &plan.actions {
        ret += sim.step(Decision::Direct(*a)).unwrap().reward;
    }
    assert!((ret + plan.objective).abs() < 1e-5, "{ret} vs {}", -plan.objective);
}

#[test]
fn generator_commitment_is_non_binding_without_minimum() {
    let cfg = MicrogridConfig::default();
    for seed in 0..5 {
        let s = toy_48h(seed);
        let fc = perfect_forecast(&s, 0, 12).unwrap();
        let full = branch_and_bound(&build_problem(&cfg, 30.0, cfg.s_max, &fc)).unwrap();
        let mut fixed = build_problem(&cfg, 30.0, cfg.s_max, &fc);
        let layout = MpcLayout { horizon: 12 };
        for k in 0..12 {
            fixed.lp.set_bounds(layout.gen_on(k), 1.0, 1.0);
        }
        let fixed = branch_and_bound(&fixed).unwrap();
        assert!((full.objective - fixed.objective).abs() < 1e-7);
    }
}

#[test]
fn shrinking_full_horizon_attains_the_plan_optimum() {
    let cfg = MicrogridConfig::default();
    let s = Arc::new(toy_48h(1));
    let mut sim = Simulator::new(cfg.clone(), s.clone(), 0, FailureParams::default(), 0).unwrap();
    let optimum = solve_plan(
        &cfg,
        sim.state().soc,
        cfg.s_max,
        &perfect_forecast(&s, 0, s.len()).unwrap(),
    )
    .unwrap()
    .objective;
    let t0 = Instant::now();
    let mut ret = 0.0;
    while !sim.is_done() {
        let t = sim.state().t;
        let a = mpc_act(&cfg, sim.state(), &s, t, s.len()).unwrap();
        ret += sim.step(Decision::Direct(a)).unwrap().reward;
    }
    assert!((ret + optimum).abs() < 1e-5, "{ret} vs {}", -optimum);
    assert!(t0.elapsed().as_secs() < 30);
}
