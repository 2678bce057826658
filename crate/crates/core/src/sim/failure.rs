use rand::Rng;
use serde::{Deserialize, Serialize};

/// Parameters of the abrupt battery-failure process.
///
/// While operational the battery survives each step with probability
/// `p_t = max(p0 - decay_per_step * t, 0)`. A failure makes storage
/// unavailable for exactly `repair_hours` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailureParams {
    pub enabled: bool,
    pub p0: f64,
    /// `None` means "decay to zero at the end of the episode".
    pub decay_per_step: Option<f64>,
    pub repair_hours: u32,
}

impl Default for FailureParams {
    fn default() -> Self {
        Self {
            enabled: false,
            p0: 0.99,
            decay_per_step: None,
            repair_hours: 370,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureState {
    Operational,
    /// Steps of unavailability left, including the current one.
    Failed {
        hours_remaining: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureProcess {
    pub p0: f64,
    pub decay_per_step: f64,
    pub repair_hours: u32,
    pub enabled: bool,
    state: FailureState,
}

/// What happened to the battery at the start of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureEvent {
    None,
    Failed,
    Restored,
}

impl FailureProcess {
    pub fn disabled() -> Self {
        Self {
            p0: 1.0,
            decay_per_step: 0.0,
            repair_hours: 0,
            enabled: false,
            state: FailureState::Operational,
        }
    }

    pub fn new(p0: f64, decay_per_step: f64, repair_hours: u32) -> Self {
        Self {
            p0,
            decay_per_step,
            repair_hours,
            enabled: true,
            state: FailureState::Operational,
        }
    }

    pub fn from_params(params: &FailureParams, episode_len: usize) -> Self {
        if !params.enabled {
            return Self::disabled();
        }
        let decay = params.decay_per_step.unwrap_or(params.p0 / episode_len.max(1) as f64);
        Self::new(params.p0, decay, params.repair_hours)
    }

    pub fn survival_probability(&self, t: usize) -> f64 {
        (self.p0 - self.decay_per_step * t as f64).clamp(0.0, 1.0)
    }

    pub fn state(&self) -> FailureState {
        self.state
    }

    pub fn is_operational(&self) -> bool {
        matches!(self.state, FailureState::Operational)
    }

    pub fn reset(&mut self) {
        self.state = FailureState::Operational;
    }

    /// Advances one step. A uniform is drawn on every call, whatever the
    /// state, so two controllers sharing a seed face the same failures.
    pub fn advance<R: Rng + ?Sized>(&mut self, t: usize, rng: &mut R) -> FailureEvent {
        if !self.enabled {
            return FailureEvent::None;
        }
        let u: f64 = rng.gen();
        match self.state {
            FailureState::Operational => {
                if u >= self.survival_probability(t) && self.repair_hours > 0 {
                    self.state = FailureState::Failed {
                        hours_remaining: self.repair_hours,
                    };
                    FailureEvent::Failed
                } else {
                    FailureEvent::None
                }
            }
            FailureState::Failed { hours_remaining } => {
                if hours_remaining > 1 {
                    self.state = FailureState::Failed {
                        hours_remaining: hours_remaining - 1,
                    };
                    FailureEvent::None
                } else {
                    self.state = FailureState::Operational;
                    FailureEvent::Restored
                }
            }
        }
    }
}
