use serde::{Deserialize, Serialize};

use super::SimError;

/// Physical and economic parameters of the off-grid microgrid.
///
/// Defaults are the reduced installation used throughout the experiments:
/// 120 kWh storage, 100 kW charge/discharge limits, 75 % efficiencies,
/// a 9 kW generator with no minimum stable output, and prices of
/// 1 / 1.5 / 10 EUR per kWh for fuel, curtailment and shedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MicrogridConfig {
    /// Nominal storage capacity (kWh).
    pub s_max: f64,
    /// Maximum charging power (kW).
    pub p_ch_max: f64,
    /// Maximum discharging power (kW).
    pub p_dis_max: f64,
    pub eta_ch: f64,
    pub eta_dis: f64,
    pub p_gen_max: f64,
    pub p_gen_min: f64,
    /// Fixed fuel consumption while the generator runs (l/h).
    pub f1: f64,
    /// Marginal fuel consumption (l/kWh).
    pub f2: f64,
    pub price_fuel: f64,
    pub price_curt: f64,
    pub price_shed: f64,
    /// Step length (h).
    pub dt: f64,
    /// PV nameplate (kW).
    pub p_res_max: f64,
    /// Capacity lost per full equivalent cycle (kWh/cycle).
    pub degradation_slope: f64,
    /// Charge-efficiency lost per cycle.
    pub eta_ch_slope: f64,
    /// Discharge-efficiency lost per cycle.
    pub eta_dis_slope: f64,
    /// State of charge at episode start, as a fraction of capacity.
    pub initial_soc_frac: f64,
}

impl Default for MicrogridConfig {
    fn default() -> Self {
        Self {
            s_max: 120.0,
            p_ch_max: 100.0,
            p_dis_max: 100.0,
            eta_ch: 0.75,
            eta_dis: 0.75,
            p_gen_max: 9.0,
            p_gen_min: 0.0,
            f1: 0.0,
            f2: 1.0,
            price_fuel: 1.0,
            price_curt: 1.5,
            price_shed: 10.0,
            dt: 1.0,
            p_res_max: 120.0,
            degradation_slope: 0.0,
            eta_ch_slope: 0.0,
            eta_dis_slope: 0.0,
            initial_soc_frac: 0.5,
        }
    }
}

/// Efficiencies never decay below this floor.
const MIN_EFFICIENCY: f64 = 0.05;

impl MicrogridConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        let all = [
            self.s_max,
            self.p_ch_max,
            self.p_dis_max,
            self.eta_ch,
            self.eta_dis,
            self.p_gen_max,
            self.p_gen_min,
            self.f1,
            self.f2,
            self.price_fuel,
            self.price_curt,
            self.price_shed,
            self.dt,
            self.p_res_max,
            self.degradation_slope,
            self.eta_ch_slope,
            self.eta_dis_slope,
            self.initial_soc_frac,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if self.s_max < 0.0 || self.p_ch_max < 0.0 || self.p_dis_max < 0.0 {
            return bad("storage sizes must be non-negative");
        }
        if !(self.eta_ch > 0.0 && self.eta_ch <= 1.0 && self.eta_dis > 0.0 && self.eta_dis <= 1.0) {
            return bad("efficiencies must lie in (0, 1]");
        }
        if !(0.0 <= self.p_gen_min && self.p_gen_min <= self.p_gen_max) {
            return bad("need 0 <= p_gen_min <= p_gen_max");
        }
        if self.price_fuel < 0.0 || self.price_curt < 0.0 || self.price_shed < 0.0 {
            return bad("prices must be non-negative");
        }
        if self.f1 < 0.0 || self.f2 < 0.0 {
            return bad("fuel curve must be non-negative");
        }
        if self.dt <= 0.0 {
            return bad("dt must be positive");
        }
        if self.degradation_slope < 0.0 || self.eta_ch_slope < 0.0 || self.eta_dis_slope < 0.0 {
            return bad("degradation slopes must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.initial_soc_frac) {
            return bad("initial_soc_frac must lie in [0, 1]");
        }
        Ok(())
    }

    /// Capacity after `cycles` full equivalent cycles.
    pub fn capacity_after(&self, cycles: f64) -> f64 {
        (self.s_max - self.degradation_slope * cycles).max(0.0)
    }

    pub fn eta_ch_after(&self, cycles: f64) -> f64 {
        (self.eta_ch - self.eta_ch_slope * cycles).max(MIN_EFFICIENCY)
    }

    pub fn eta_dis_after(&self, cycles: f64) -> f64 {
        (self.eta_dis - self.eta_dis_slope * cycles).max(MIN_EFFICIENCY)
    }
}
