use serde::{Deserialize, Serialize};

/// Asymmetric Huber penalty `|τ − 1{u ≤ 0}| · L_k(u)`, where `L_k` is
/// quadratic on `|u| ≤ k` and linear outside.
pub fn quantile_huber(u: f64, tau: f64, k: f64) -> f64 {
    let weight = (tau - if u <= 0.0 { 1.0 } else { 0.0 }).abs();
    let l = if u.abs() <= k {
        0.5 * u * u
    } else {
        k * (u.abs() - 0.5 * k)
    };
    weight * l
}

/// `∂ρ/∂u`.
pub fn quantile_huber_grad(u: f64, tau: f64, k: f64) -> f64 {
    let weight = (tau - if u <= 0.0 { 1.0 } else { 0.0 }).abs();
    let dl = if u.abs() <= k { u } else { k * u.signum() };
    weight * dl
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSpec {
    pub q: usize,
    /// Midpoints `(2i − 1) / 2q`, strictly increasing.
    pub taus: Vec<f64>,
    pub huber_k: f64,
}

impl QuantileSpec {
    pub fn new(q: usize, huber_k: f64) -> Self {
        assert!(q >= 1 && huber_k > 0.0, "need q >= 1 and k > 0");
        let taus = (1..=q).map(|i| (2 * i - 1) as f64 / (2 * q) as f64).collect();
        Self { q, taus, huber_k }
    }

    /// Index of the median quantile, `⌈q/2⌉` counted from one.
    pub fn median_index(&self) -> usize {
        self.q.div_ceil(2) - 1
    }
}

impl Default for QuantileSpec {
    fn default() -> Self {
        Self::new(32, 1.0)
    }
}
