//! Expansion of a meta-action into a continuous dispatch.
//!
//! Allocation follows the priority order of the meta-action and always works
//! on the *remaining* imbalance: a discharge shrinks the deficit the
//! generator then sees, and vice versa. Every device is clipped to what it can
//! physically deliver this step, so residues end up as curtailment or
//! shedding in the power balance rather than as SoC violations.

use super::{ControlAction, MetaAction, MicrogridConfig, SimState};

/// Largest charging power the battery can absorb this step.
pub fn max_charge(state: &SimState, cfg: &MicrogridConfig) -> f64 {
    if !state.battery_available {
        return 0.0;
    }
    let eta = cfg.eta_ch_after(state.cycles);
    let headroom = (state.effective_capacity - state.soc).max(0.0);
    cfg.p_ch_max.min(headroom / (eta * cfg.dt))
}

/// Largest discharging power the battery can deliver this step.
pub fn max_discharge(state: &SimState, cfg: &MicrogridConfig) -> f64 {
    if !state.battery_available {
        return 0.0;
    }
    let eta = cfg.eta_dis_after(state.cycles);
    cfg.p_dis_max.min(state.soc.max(0.0) * eta / cfg.dt)
}

/// Generator set-point that serves `need` kW inside the stable band.
fn generator_for(need: f64, cfg: &MicrogridConfig) -> f64 {
    if need <= 0.0 || cfg.p_gen_max <= 0.0 {
        0.0
    } else {
        need.max(cfg.p_gen_min).min(cfg.p_gen_max)
    }
}

pub fn dispatch(delta_p: f64, y: MetaAction, state: &SimState, cfg: &MicrogridConfig) -> ControlAction {
    let mut a = ControlAction::idle();
    if delta_p >= 0.0 {
        if y == MetaAction::Charge {
            a.p_ch = delta_p.min(max_charge(state, cfg));
        }
        return a;
    }
    let deficit = -delta_p;
    match y {
        // Deficit with a charge decision: nothing is dispatched and the
        // whole deficit is shed.
        MetaAction::Charge => {}
        MetaAction::Discharge => {
            a.p_dis = deficit.min(max_discharge(state, cfg));
            a.p_gen = generator_for(deficit - a.p_dis, cfg);
        }
        MetaAction::Generator => {
            a.p_gen = generator_for(deficit, cfg);
            let remaining = deficit - a.p_gen;
            if remaining > 0.0 {
                a.p_dis = remaining.min(max_discharge(state, cfg));
            }
        }
    }
    a
}
