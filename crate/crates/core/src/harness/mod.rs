//! Controllers behind one interface, episode runner, experiment protocols
//! and plot-data emission.

mod experiment;
mod plots;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use experiment::{
    aggregate, load_config, parse_config, run_experiment, train_controller, ConfigDoc, DataSource, ExperimentSpec,
    Protocol, Report, Summary, TimeRange,
};
pub use plots::{emit_plots, read_curves, tidy_rows, CurveRow};

use crate::baseline::rule_based_act;
use crate::data::DataError;
use crate::mpc::{mpc_act, MpcError};
use crate::rl::{Agent, ObsScaler, RlError};
use crate::sim::{CostBreakdown, Decision, SimError, Simulator, TraceRow};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("{controller} failed at step {t}: {reason}")]
    Controller {
        controller: String,
        t: usize,
        reason: String,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Controller names as written in configurations and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    Heuristic,
    /// Receding horizon of the given length; `None` plans to the series end.
    Mpc(Option<usize>),
    Ppo,
    Ddyna,
}

impl ControllerKind {
    pub fn is_learning(self) -> bool {
        matches!(self, Self::Ppo | Self::Ddyna)
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Heuristic => write!(f, "heuristic"),
            Self::Mpc(Some(n)) => write!(f, "mpc-{n}"),
            Self::Mpc(None) => write!(f, "mpc-full"),
            Self::Ppo => write!(f, "ppo"),
            Self::Ddyna => write!(f, "ddyna"),
        }
    }
}

impl FromStr for ControllerKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "heuristic" => Ok(Self::Heuristic),
            "ppo" => Ok(Self::Ppo),
            "ddyna" | "d-dyna" => Ok(Self::Ddyna),
            "mpc-full" => Ok(Self::Mpc(None)),
            _ => match s.strip_prefix("mpc-").map(str::parse::<usize>) {
                Some(Ok(n)) if n > 0 => Ok(Self::Mpc(Some(n))),
                _ => Err(HarnessError::Invalid(format!("unknown controller {s:?}"))),
            },
        }
    }
}

/// Anything that picks a decision from the simulator's current state.
pub trait Controller {
    fn name(&self) -> String;
    fn decide(&mut self, sim: &Simulator) -> Result<Decision, HarnessError>;
}

/// Charge on surplus, discharge on deficit.
#[derive(Debug, Clone, Default)]
pub struct HeuristicController;

impl Controller for HeuristicController {
    fn name(&self) -> String {
        ControllerKind::Heuristic.to_string()
    }

    fn decide(&mut self, sim: &Simulator) -> Result<Decision, HarnessError> {
        Ok(Decision::Meta(rule_based_act(sim.state().delta_p())))
    }
}

/// Receding-horizon MILP with perfect forecasts.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub horizon: Option<usize>,
}

impl Controller for MpcController {
    fn name(&self) -> String {
        ControllerKind::Mpc(self.horizon).to_string()
    }

    fn decide(&mut self, sim: &Simulator) -> Result<Decision, HarnessError> {
        let t = sim.state().t;
        let n = self.horizon.unwrap_or(sim.series().len() - t);
        Ok(Decision::Direct(mpc_act(
            sim.config(),
            sim.state(),
            sim.series(),
            t,
            n,
        )?))
    }
}

/// Greedy policy of a trained agent.
#[derive(Debug, Clone)]
pub struct AgentController {
    pub label: String,
    pub agent: Agent,
    pub scaler: ObsScaler,
}

impl Controller for AgentController {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn decide(&mut self, sim: &Simulator) -> Result<Decision, HarnessError> {
        let obs = self.scaler.observe(sim.state());
        let a = self.agent.act_greedy(&obs)?;
        let y = crate::sim::MetaAction::from_index(a).ok_or(RlError::InvalidAction(a))?;
        Ok(Decision::Meta(y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub controller: String,
    pub seed: u64,
    /// `(update, evaluation return)`; a single point at update 0 for
    /// controllers that do not learn.
    pub curve: Vec<(usize, f64)>,
    pub final_return: f64,
    pub costs: CostBreakdown,
    pub steps: usize,
    pub wall_clock_s: f64,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

/// Runs `controller` from a reset of `sim` to the end of its series.
pub fn run_episode(controller: &mut dyn Controller, sim: &mut Simulator, seed: u64) -> Result<RunResult, HarnessError> {
    let started = Instant::now();
    sim.reset();
    let mut ret = 0.0;
    let mut costs = CostBreakdown::default();
    let mut trace = Vec::with_capacity(sim.series().len());
    while !sim.is_done() {
        let t = sim.state().t;
        let decision = controller.decide(sim).map_err(|e| HarnessError::Controller {
            controller: controller.name(),
            t,
            reason: e.to_string(),
        })?;
        let soc = sim.state().soc;
        let out = sim.step(decision).map_err(|e| HarnessError::Controller {
            controller: controller.name(),
            t,
            reason: e.to_string(),
        })?;
        trace.push(TraceRow {
            t,
            soc,
            load: sim.series().load_kw()[t],
            pv: sim.series().pv_kw()[t],
            p_ch: out.action.p_ch,
            p_dis: out.action.p_dis,
            p_gen: out.action.p_gen,
            curt: out.costs.curtailed_kw,
            shed: out.costs.shed_kw,
            reward: out.reward,
        });
        ret += out.reward;
        costs.add(&out.costs);
    }
    Ok(RunResult {
        controller: controller.name(),
        seed,
        curve: vec![(0, ret)],
        final_return: ret,
        costs,
        steps: trace.len(),
        wall_clock_s: started.elapsed().as_secs_f64(),
        trace,
    })
}
