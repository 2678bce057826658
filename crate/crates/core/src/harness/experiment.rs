use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    run_episode, AgentController, Controller, ControllerKind, HarnessError, HeuristicController, MpcController,
    RunResult,
};
use crate::data::{load_series, split, synth_series, CsvSchema, ExogenousSeries, SynthParams};
use crate::rl::{dyna_train, train_agent, train_ppo, Agent, AgentConfig, MicrogridEnv, ObsScaler, TrainOutcome};
use crate::sim::{FailureParams, MicrogridConfig, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Train on one period, evaluate on a later one.
    Generalization,
    /// As generalization, with battery failures and a generator sized to the
    /// whole demand.
    Robustness,
    /// Pretrain on one period, then fine-tune and train from scratch on another.
    Transfer,
    /// Evaluate controllers on the test period only.
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    File {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
    Synth(SynthParams),
}

impl DataSource {
    pub fn load(&self) -> Result<ExogenousSeries, HarnessError> {
        Ok(match self {
            Self::File { path, schema } => load_series(path, schema)?,
            Self::Synth(p) => synth_series(p)?,
        })
    }
}

/// Half-open instant range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl TimeRange {
    pub fn days(start: NaiveDate, days: i64) -> Self {
        let s = start.and_hms_opt(0, 0, 0).expect("midnight");
        Self {
            start: s,
            end: s + chrono::Duration::days(days),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    pub controllers: Vec<String>,
    pub data: DataSource,
    pub train: Option<TimeRange>,
    pub test: TimeRange,
    /// Transfer only: period used to pretrain when no checkpoint is given.
    pub pretrain: Option<TimeRange>,
    /// Transfer only: agent to fine-tune instead of pretraining.
    pub pretrain_checkpoint: Option<PathBuf>,
    /// Simulate only: agent evaluated for learning controllers.
    pub checkpoint: Option<PathBuf>,
    pub seeds: Vec<u64>,
    /// Used by the robustness protocol; ignored, and failures disabled, otherwise.
    pub failure: FailureParams,
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

impl Default for ExperimentSpec {
    /// Ninety autumn days for training and thirty winter days for testing of
    /// a southern-hemisphere synthetic year.
    fn default() -> Self {
        Self {
            protocol: Protocol::Generalization,
            controllers: ["heuristic", "mpc-1", "mpc-24", "ppo", "ddyna"]
                .map(String::from)
                .to_vec(),
            data: DataSource::Synth(SynthParams::default()),
            train: Some(TimeRange::days(date(2016, 3, 1), 90)),
            test: TimeRange::days(date(2016, 6, 1), 30),
            pretrain: None,
            pretrain_checkpoint: None,
            checkpoint: None,
            seeds: (0..10).collect(),
            failure: FailureParams {
                enabled: true,
                ..FailureParams::default()
            },
        }
    }
}

/// A whole configuration document: `[microgrid]`, `[agent]` and
/// `[experiment]` tables whose keys are the struct field names.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigDoc {
    pub microgrid: MicrogridConfig,
    pub agent: AgentConfig,
    pub experiment: ExperimentSpec,
}

/// TOML, or JSON when the text starts with `{`.
pub fn parse_config(text: &str) -> Result<ConfigDoc, HarnessError> {
    if text.trim_start().starts_with('{') {
        Ok(serde_json::from_str(text)?)
    } else {
        Ok(toml::from_str(text)?)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ConfigDoc, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_config(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub controller: String,
    pub runs: usize,
    pub final_mean: f64,
    pub final_std: f64,
    pub final_median: f64,
    /// `(update, mean, std)` over the runs that evaluated at that update.
    pub curve: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub protocol: Protocol,
    pub results: Vec<RunResult>,
    pub summaries: Vec<Summary>,
}

impl Report {
    pub fn summary(&self, controller: &str) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.controller == controller)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Per-controller statistics across seeds, in order of first appearance.
pub fn aggregate(results: &[RunResult]) -> Vec<Summary> {
    let mut names: Vec<&str> = Vec::new();
    for r in results {
        if !names.contains(&r.controller.as_str()) {
            names.push(&r.controller);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let runs: Vec<&RunResult> = results.iter().filter(|r| r.controller == name).collect();
            let finals: Vec<f64> = runs.iter().map(|r| r.final_return).collect();
            let (final_mean, final_std) = mean_std(&finals);
            let mut updates: Vec<usize> = runs.iter().flat_map(|r| r.curve.iter().map(|p| p.0)).collect();
            updates.sort_unstable();
            updates.dedup();
            let curve = updates
                .into_iter()
                .map(|u| {
                    let v: Vec<f64> = runs
                        .iter()
                        .filter_map(|r| r.curve.iter().find(|p| p.0 == u).map(|p| p.1))
                        .collect();
                    let (m, s) = mean_std(&v);
                    (u, m, s)
                })
                .collect();
            Summary {
                controller: name.to_string(),
                runs: runs.len(),
                final_mean,
                final_std,
                final_median: median(&finals),
                curve,
            }
        })
        .collect()
}

/// Everything a job needs, shared read-only across workers.
struct Context {
    protocol: Protocol,
    cfg: MicrogridConfig,
    agent_cfg: AgentConfig,
    failure: FailureParams,
    scaler: ObsScaler,
    reward_scale: f64,
    train: Option<Arc<ExogenousSeries>>,
    test: Arc<ExogenousSeries>,
    pretrain: Option<Arc<ExogenousSeries>>,
    pretrain_checkpoint: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
}

/// Training environments draw failures from a stream unrelated to the test one.
fn train_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)
}

impl Context {
    fn env(&self, series: &Arc<ExogenousSeries>, seed: u64) -> Result<MicrogridEnv, HarnessError> {
        Ok(MicrogridEnv::new(
            self.cfg.clone(),
            series.clone(),
            self.agent_cfg.h,
            self.failure,
            self.scaler,
            self.reward_scale,
            seed,
        )?)
    }

    fn test_sim(&self, seed: u64) -> Result<Simulator, HarnessError> {
        Ok(Simulator::new(
            self.cfg.clone(),
            self.test.clone(),
            self.agent_cfg.h,
            self.failure,
            seed,
        )?)
    }

    fn train(
        &self,
        kind: ControllerKind,
        series: &Arc<ExogenousSeries>,
        seed: u64,
    ) -> Result<TrainOutcome, HarnessError> {
        let mut env = self.env(series, train_seed(seed))?;
        let mut eval = self.env(&self.test, seed)?.replaying(seed);
        Ok(match kind {
            ControllerKind::Ppo => train_ppo(&mut env, Some(&mut eval), &self.agent_cfg, seed)?,
            _ => dyna_train(&mut env, Some(&mut eval), &self.agent_cfg, seed)?,
        })
    }

    fn evaluate_agent(&self, label: String, agent: Agent, seed: u64) -> Result<RunResult, HarnessError> {
        let mut c = AgentController {
            label,
            agent,
            scaler: self.scaler,
        };
        run_episode(&mut c, &mut self.test_sim(seed)?, seed)
    }

    fn learned(&self, label: String, out: TrainOutcome, seed: u64) -> Result<RunResult, HarnessError> {
        let curve: Vec<(usize, f64)> = out
            .curve
            .iter()
            .filter_map(|p| p.return_eval.map(|r| (p.update, r)))
            .collect();
        let mut r = self.evaluate_agent(label, out.agent, seed)?;
        r.curve = curve;
        Ok(r)
    }

    fn job(&self, kind: ControllerKind, seed: u64) -> Result<Vec<RunResult>, HarnessError> {
        if !kind.is_learning() {
            let mut c: Box<dyn Controller> = match kind {
                ControllerKind::Mpc(h) => Box::new(MpcController { horizon: h }),
                _ => Box::new(HeuristicController),
            };
            return Ok(vec![run_episode(c.as_mut(), &mut self.test_sim(seed)?, seed)?]);
        }
        match self.protocol {
            Protocol::Simulate => {
                let path = self.checkpoint.as_ref().ok_or_else(|| {
                    HarnessError::Invalid(format!("{kind} needs a checkpoint in the simulate protocol"))
                })?;
                let agent = Agent::load(path)?;
                agent.check_env(&self.env(&self.test, seed)?)?;
                Ok(vec![self.evaluate_agent(kind.to_string(), agent, seed)?])
            }
            Protocol::Generalization | Protocol::Robustness => {
                let train = self.train.as_ref().expect("validated");
                let out = self.train(kind, train, seed)?;
                Ok(vec![self.learned(kind.to_string(), out, seed)?])
            }
            Protocol::Transfer => {
                let train = self.train.as_ref().expect("validated");
                let mut agent = match (&self.pretrain_checkpoint, &self.pretrain) {
                    (Some(path), _) => Agent::load(path)?,
                    (None, Some(pre)) => self.train(kind, pre, seed)?.agent,
                    (None, None) => unreachable!("validated"),
                };
                let mut env = self.env(train, train_seed(seed))?;
                agent.check_env(&env)?;
                agent.cfg.total_steps = self.agent_cfg.total_steps;
                let mut eval = self.env(&self.test, seed)?.replaying(seed);
                let (curve, divergences) = train_agent(&mut agent, &mut env, Some(&mut eval), seed)?;
                let tuned = TrainOutcome {
                    agent,
                    curve,
                    divergences,
                };
                let scratch = self.train(kind, train, seed)?;
                Ok(vec![
                    self.learned(kind.to_string(), scratch, seed)?,
                    self.learned(format!("{kind}-transfer"), tuned, seed)?,
                ])
            }
        }
    }
}

fn cut(series: &ExogenousSeries, r: &TimeRange, what: &str) -> Result<Arc<ExogenousSeries>, HarnessError> {
    let parts = split(series, &[(r.start, r.end)]).map_err(|e| HarnessError::Invalid(format!("{what} range: {e}")))?;
    Ok(Arc::new(parts.into_iter().next().expect("one range")))
}

/// Validates the document and loads and cuts its data.
fn context(doc: &ConfigDoc, kinds: &[ControllerKind]) -> Result<Context, HarnessError> {
    let spec = &doc.experiment;
    doc.microgrid.validate()?;
    doc.agent.validate()?;
    let learning = kinds.iter().any(|k| k.is_learning());
    if learning
        && matches!(
            spec.protocol,
            Protocol::Generalization | Protocol::Robustness | Protocol::Transfer
        )
        && spec.train.is_none()
    {
        return Err(HarnessError::Invalid("learning controllers need a train range".into()));
    }
    if learning && spec.protocol == Protocol::Transfer && spec.pretrain.is_none() && spec.pretrain_checkpoint.is_none()
    {
        return Err(HarnessError::Invalid(
            "transfer needs a pretrain range or checkpoint".into(),
        ));
    }

    let full = doc.experiment.data.load()?;
    let mut cfg = doc.microgrid.clone();
    let mut failure = FailureParams {
        enabled: false,
        ..spec.failure
    };
    if spec.protocol == Protocol::Robustness {
        cfg.p_gen_max = cfg.p_gen_max.max(full.peak_load());
        cfg.p_gen_min = cfg.p_gen_min.min(cfg.p_gen_max);
        failure.enabled = true;
    }
    let test = cut(&full, &spec.test, "test")?;
    let train = spec.train.as_ref().map(|r| cut(&full, r, "train")).transpose()?;
    let pretrain = match spec.protocol {
        Protocol::Transfer => spec.pretrain.as_ref().map(|r| cut(&full, r, "pretrain")).transpose()?,
        _ => None,
    };
    let ctx = Context {
        protocol: spec.protocol,
        scaler: ObsScaler::new(&cfg, &full),
        reward_scale: doc
            .agent
            .reward_scale
            .unwrap_or_else(|| MicrogridEnv::default_reward_scale(&cfg, &full)),
        cfg,
        agent_cfg: doc.agent.clone(),
        failure,
        train,
        test,
        pretrain,
        pretrain_checkpoint: spec.pretrain_checkpoint.clone(),
        checkpoint: spec.checkpoint.clone(),
    };
    Ok(ctx)
}

fn parse_kinds(spec: &ExperimentSpec) -> Result<Vec<ControllerKind>, HarnessError> {
    spec.controllers.iter().map(|c| c.parse()).collect()
}

/// Trains one learning controller on the train range of `doc`, evaluating
/// on its test range, with the same environments `run_experiment` uses.
pub fn train_controller(doc: &ConfigDoc, kind: ControllerKind, seed: u64) -> Result<TrainOutcome, HarnessError> {
    if !kind.is_learning() {
        return Err(HarnessError::Invalid(format!("{kind} does not learn")));
    }
    let ctx = context(doc, &[kind])?;
    let train = ctx
        .train
        .clone()
        .ok_or_else(|| HarnessError::Invalid("a train range is required".into()))?;
    ctx.train(kind, &train, seed)
}

/// Runs every (controller, seed) pair of the protocol on a worker pool.
/// Results are ordered by controller, then seed.
pub fn run_experiment(doc: &ConfigDoc) -> Result<Report, HarnessError> {
    let spec = &doc.experiment;
    if spec.seeds.is_empty() {
        return Err(HarnessError::Invalid("seed list is empty".into()));
    }
    if spec.controllers.is_empty() {
        return Err(HarnessError::Invalid("controller list is empty".into()));
    }
    let kinds = parse_kinds(spec)?;
    let ctx = context(doc, &kinds)?;

    let jobs: Vec<(ControllerKind, u64)> = kinds
        .iter()
        .flat_map(|&k| spec.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let done: Vec<Vec<RunResult>> = jobs
        .par_iter()
        .map(|&(k, s)| {
            let r = ctx.job(k, s);
            if let Ok(rs) = &r {
                for x in rs {
                    log::info!(
                        "{} seed {}: return {:.2} in {:.1}s",
                        x.controller,
                        s,
                        x.final_return,
                        x.wall_clock_s
                    );
                }
            }
            r
        })
        .collect::<Result<_, _>>()?;
    let mut results: Vec<RunResult> = done.into_iter().flatten().collect();
    // Transfer jobs yield two labels each; group them by label.
    let order: Vec<String> = {
        let mut o: Vec<String> = Vec::new();
        for r in &results {
            if !o.contains(&r.controller) {
                o.push(r.controller.clone());
            }
        }
        o
    };
    results.sort_by_key(|r| (order.iter().position(|c| *c == r.controller), r.seed));
    let summaries = aggregate(&results);
    Ok(Report {
        protocol: spec.protocol,
        results,
        summaries,
    })
}
