//! Command-line front end: simulate, train, evaluate and sweep.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dtoffload::harness::{run_plan, ExperimentPlan, Mode, PolicySpec, RunReport, Sweep, SweepAxis};
use dtoffload::marl::TrainerConfig;
use dtoffload::scenario::ScenarioConfig;

#[derive(Parser)]
#[command(name = "dtoffload", version, about = "Twin-assisted vehicular task offloading simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out a heuristic policy.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// random, all_local, all_edge_nearest, uniform_split or greedy_grid.
        #[arg(long, default_value = "greedy_grid")]
        policy: String,
    },
    /// Train MAPPO actors and a centralized critic.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        trainer: TrainerArgs,
    },
    /// Roll out a trained checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Repeat a heuristic, checkpoint or training run over one config axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Heuristic name, `ppo`, or `trained:<checkpoint>`.
        #[arg(long, default_value = "greedy_grid")]
        policy: String,
        /// num_cvs, lyapunov_v or dt.
        #[arg(long)]
        sweep_axis: String,
        /// Comma-separated values; dt takes 0/1 or off/on.
        #[arg(long, value_delimiter = ',', required = true)]
        sweep_values: Vec<String>,
        #[command(flatten)]
        trainer: TrainerArgs,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario TOML; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; repetitions use seed, seed+1, ...
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds per cell.
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Episodes per cell (training episodes for ppo).
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    dt: Toggle,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Parallel cells; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Write a per-slot trace of each cell's first episode.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct TrainerArgs {
    /// Trainer TOML; omitted keys keep their defaults.
    #[arg(long)]
    trainer_config: Option<PathBuf>,
    /// Overrides the actor learning rate.
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_trainer(args: &TrainerArgs) -> Result<TrainerConfig> {
    let mut cfg = match &args.trainer_config {
        Some(p) => TrainerConfig::from_toml_str(&read(p)?)?,
        None => TrainerConfig::default(),
    };
    if let Some(lr) = args.lr {
        cfg.learning_rate = lr;
    }
    Ok(cfg)
}

fn base_plan(mode: Mode, common: &Common) -> Result<ExperimentPlan> {
    let mut scenario = match &common.config {
        Some(p) => ScenarioConfig::from_toml_str(&read(p)?)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        scenario.seed = seed;
    }
    let mut plan = ExperimentPlan::new(mode, scenario, &common.out);
    plan.repetitions = common.seeds;
    plan.dt_enabled = matches!(common.dt, Toggle::On);
    plan.workers = common.workers;
    plan.trace = common.trace;
    Ok(plan)
}

fn parse_axis_value(axis: SweepAxis, raw: &str) -> Result<f64> {
    match (axis, raw) {
        (SweepAxis::Dt, "on") => Ok(1.0),
        (SweepAxis::Dt, "off") => Ok(0.0),
        _ => raw.trim().parse().with_context(|| format!("sweep value `{raw}`")),
    }
}

fn build_plan(command: Command) -> Result<ExperimentPlan> {
    let plan = match command {
        Command::Simulate { common, policy } => {
            let mut plan = base_plan(Mode::Simulate, &common)?;
            plan.policy = PolicySpec::Heuristic(policy.parse()?);
            plan.episodes = common.episodes.unwrap_or(plan.episodes);
            plan
        }
        Command::Train { common, trainer } => {
            let mut plan = base_plan(Mode::Train, &common)?;
            plan.trainer = load_trainer(&trainer)?;
            plan.episodes = common.episodes.unwrap_or(plan.trainer.max_episodes);
            plan
        }
        Command::Evaluate { common, checkpoint } => {
            let mut plan = base_plan(Mode::Evaluate, &common)?;
            plan.policy = PolicySpec::Trained(checkpoint);
            plan.episodes = common.episodes.unwrap_or(plan.episodes);
            plan
        }
        Command::Sweep {
            common,
            policy,
            sweep_axis,
            sweep_values,
            trainer,
        } => {
            let mut plan = base_plan(Mode::Sweep, &common)?;
            plan.policy = policy.parse()?;
            plan.trainer = load_trainer(&trainer)?;
            let default_episodes = if plan.policy == PolicySpec::Ppo {
                plan.trainer.max_episodes
            } else {
                plan.episodes
            };
            plan.episodes = common.episodes.unwrap_or(default_episodes);
            let axis: SweepAxis = sweep_axis.parse()?;
            let values = sweep_values
                .iter()
                .map(|v| parse_axis_value(axis, v))
                .collect::<Result<Vec<_>>>()?;
            plan.sweep = Some(Sweep { axis, values });
            plan
        }
    };
    if plan.episodes == 0 {
        bail!("--episodes must be positive");
    }
    Ok(plan)
}

fn print_report(report: &RunReport) {
    println!(
        "wrote {} ({} cells computed, {} reused)",
        report.out_dir.display(),
        report.computed.len(),
        report.reused.len()
    );
    println!(
        "{:<18} {:<12} {:>10} {:>5} {:>14} {:>12} {:>12} {:>12}",
        "policy", "axis", "value", "seeds", "reward", "cost", "delay_s", "energy_j"
    );
    for s in &report.summary {
        println!(
            "{:<18} {:<12} {:>10} {:>5} {:>14.4} {:>12.4} {:>12.5} {:>12.4}",
            s.policy, s.axis, s.axis_value, s.seeds, s.reward_mean, s.cost_mean, s.delay_mean, s.energy_mean
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build_plan(cli.command).and_then(|plan| Ok(run_plan(&plan)?));
    match result {
        Ok(report) => {
            print_report(&report);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
