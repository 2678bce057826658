//! `mgrid`: data generation, single-controller runs, training and full
//! experiments from one configuration document.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use microgrid_core::data::{save_series, synth_series};
use microgrid_core::harness::{
    emit_plots, load_config, run_experiment, train_controller, ConfigDoc, ControllerKind, DataSource, Protocol,
};
use microgrid_core::rl::write_training_log;
use microgrid_core::sim::write_trace;

#[derive(Parser, Debug)]
#[command(name = "mgrid", version, about = "Off-grid microgrid control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the configured synthetic series as CSV.
    MakeData(Common),
    /// Run non-learning controllers, or a saved agent, over the test range.
    Simulate(Common),
    /// Train a learning controller and save its checkpoint and training log.
    Train(Common),
    /// Evaluate a saved agent over the test range.
    Evaluate(Common),
    /// Run the configured protocol and write reports and plot data.
    Experiment(Common),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Forecast {
    Perfect,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML or JSON configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Controller name: heuristic, mpc, mpc-N, mpc-full, ppo or ddyna.
    #[arg(long)]
    controller: Option<String>,
    /// MPC horizon; combined with `--controller mpc`.
    #[arg(long)]
    horizon: Option<usize>,
    /// Seeds as a comma list with optional ranges, e.g. `0-4,7`.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory (a file path for make-data).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// The forecast MPC plans with; only perfect foresight is implemented.
    #[arg(long, value_enum, default_value = "perfect")]
    forecast: Forecast,
    /// Agent checkpoint to evaluate.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("empty seed range {part:?}");
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().with_context(|| format!("bad seed {part:?}"))?),
        }
    }
    if seeds.is_empty() {
        bail!("seed list is empty");
    }
    Ok(seeds)
}

fn controller_name(c: &Common) -> Result<Option<String>> {
    Ok(match (&c.controller, c.horizon) {
        (Some(name), Some(n)) if name == "mpc" => Some(format!("mpc-{n}")),
        (Some(name), None) if name == "mpc" => Some("mpc-24".into()),
        (Some(name), Some(_)) if !name.starts_with("mpc") => bail!("--horizon only applies to mpc"),
        (Some(name), _) => Some(name.clone()),
        (None, Some(n)) => Some(format!("mpc-{n}")),
        (None, None) => None,
    })
}

fn load(c: &Common) -> Result<ConfigDoc> {
    let Forecast::Perfect = c.forecast;
    let mut doc = match &c.config {
        Some(p) => load_config(p)?,
        None => ConfigDoc::default(),
    };
    if let Some(s) = &c.seeds {
        doc.experiment.seeds = parse_seeds(s)?;
    }
    if let Some(name) = controller_name(c)? {
        name.parse::<ControllerKind>()?;
        doc.experiment.controllers = vec![name];
    }
    if c.checkpoint.is_some() {
        doc.experiment.checkpoint = c.checkpoint.clone();
    }
    Ok(doc)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn make_data(c: &Common) -> Result<serde_json::Value> {
    let doc = load(c)?;
    let series = match &doc.experiment.data {
        DataSource::Synth(p) => {
            p.validate(doc.microgrid.p_res_max)?;
            synth_series(p)?
        }
        DataSource::File { .. } => bail!("make-data needs a synthetic data source"),
    };
    let path = if c.out.extension().is_some() {
        c.out.clone()
    } else {
        c.out.join("series.csv")
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_series(&series, &path)?;
    Ok(serde_json::json!({ "written": path, "rows": series.len() }))
}

/// Runs the `simulate` protocol and writes one trace per run.
fn simulate(c: &Common, default_controller: &str) -> Result<serde_json::Value> {
    let mut doc = load(c)?;
    doc.experiment.protocol = Protocol::Simulate;
    if c.controller.is_none() && c.horizon.is_none() {
        doc.experiment.controllers = vec![default_controller.to_string()];
    }
    let report = run_experiment(&doc)?;
    fs::create_dir_all(&c.out)?;
    for r in &report.results {
        let path = c.out.join(format!("trace-{}-seed{}.csv", r.controller, r.seed));
        let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        write_trace(&r.trace, file)?;
    }
    write_json(&c.out.join("report.json"), &report)?;
    Ok(serde_json::to_value(&report.summaries)?)
}

fn train(c: &Common) -> Result<serde_json::Value> {
    let doc = load(c)?;
    let kind: ControllerKind = match controller_name(c)? {
        Some(n) => n.parse()?,
        None => ControllerKind::Ddyna,
    };
    fs::create_dir_all(&c.out)?;
    let mut written = Vec::new();
    for &seed in &doc.experiment.seeds {
        let out = train_controller(&doc, kind, seed)?;
        let ckpt = c.out.join(format!("{kind}-seed{seed}.json"));
        out.agent.save(&ckpt)?;
        let log_path = c.out.join(format!("{kind}-seed{seed}-log.csv"));
        write_training_log(&out.curve, fs::File::create(&log_path)?)?;
        let last = out.curve.last().and_then(|p| p.return_eval);
        log::info!("{kind} seed {seed}: final test return {last:?}");
        written.push(serde_json::json!({
            "seed": seed,
            "checkpoint": ckpt,
            "log": log_path,
            "final_return": last,
            "divergences": out.divergences,
        }));
    }
    Ok(serde_json::Value::Array(written))
}

fn experiment(c: &Common) -> Result<serde_json::Value> {
    let doc = load(c)?;
    let report = run_experiment(&doc)?;
    let paths = emit_plots(&report, &c.out)?;
    Ok(serde_json::json!({ "written": paths, "summaries": report.summaries }))
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match &cli.command {
        Command::MakeData(c) => make_data(c),
        Command::Simulate(c) => simulate(c, "heuristic"),
        Command::Evaluate(c) => {
            if c.checkpoint.is_none() {
                bail!("evaluate needs --checkpoint");
            }
            simulate(c, "ddyna")
        }
        Command::Train(c) => train(c),
        Command::Experiment(c) => experiment(c),
    }
}

fn error_json(kind: &str, message: String) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            e.exit()
        }
        Err(e) => {
            eprintln!("{}", error_json("usage", e.to_string().trim().to_string()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json("runtime", format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
