use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::csvio::{read_rows, write_rows};
use super::rollout::{ensure_drift, run_episode, TraceRow};
use super::steady::{steady_metrics, SteadyMetrics, STEADY_WINDOW};
use crate::baselines::{HeuristicKind, HeuristicPolicy, JointPolicy};
use crate::env::Env;
use crate::error::{Error, Result};
use crate::marl::{Checkpoint, Trainer, TrainerConfig};
use crate::metrics::EpisodeStats;
use crate::scenario::{episode_seed, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Train,
    Evaluate,
    Sweep,
}

/// Fleet sizes a num_cvs sweep may visit.
pub const NUM_CVS_SWEEP: std::ops::RangeInclusive<usize> = 2..=6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NumCvs,
    LyapunovV,
    Dt,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::NumCvs => "num_cvs",
            Self::LyapunovV => "lyapunov_v",
            Self::Dt => "dt",
        }
    }

    /// Applies one sweep value to a copy of the base settings.
    pub fn apply(self, value: f64, scenario: &mut ScenarioConfig, dt: &mut bool) -> Result<()> {
        match self {
            Self::NumCvs => {
                if value.fract() != 0.0 || !NUM_CVS_SWEEP.contains(&(value as usize)) {
                    return Err(Error::Config(format!(
                        "num_cvs sweep value {value} must be an integer in {}..={}",
                        NUM_CVS_SWEEP.start(),
                        NUM_CVS_SWEEP.end()
                    )));
                }
                scenario.num_cvs = value as usize;
            }
            Self::LyapunovV => scenario.lyapunov_v = value,
            Self::Dt => {
                *dt = match value {
                    0.0 => false,
                    1.0 => true,
                    _ => return Err(Error::Config(format!("dt sweep value {value} must be 0 or 1"))),
                }
            }
        }
        scenario.validate()
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "num_cvs" => Ok(Self::NumCvs),
            "lyapunov_v" | "v" => Ok(Self::LyapunovV),
            "dt" | "dt_enabled" => Ok(Self::Dt),
            _ => Err(Error::Config(format!("unknown sweep axis `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Heuristic(HeuristicKind),
    Trained(PathBuf),
    /// Train a fresh MAPPO team in every cell.
    Ppo,
}

impl PolicySpec {
    pub fn label(&self) -> String {
        match self {
            Self::Heuristic(k) => k.name().to_string(),
            Self::Trained(_) => "trained".to_string(),
            Self::Ppo => "ppo".to_string(),
        }
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("trained:") {
            return Ok(Self::Trained(PathBuf::from(path)));
        }
        if s == "ppo" {
            return Ok(Self::Ppo);
        }
        s.parse().map(Self::Heuristic)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub mode: Mode,
    pub scenario: ScenarioConfig,
    pub trainer: TrainerConfig,
    pub policy: PolicySpec,
    pub dt_enabled: bool,
    pub seed: u64,
    pub repetitions: usize,
    /// Episodes per cell; training runs this many episodes.
    pub episodes: usize,
    pub sweep: Option<Sweep>,
    pub out_dir: PathBuf,
    /// Parallel cells; 0 lets rayon decide.
    pub workers: usize,
    /// Write a per-slot trace of each cell's first episode.
    pub trace: bool,
}

impl ExperimentPlan {
    pub fn new(mode: Mode, scenario: ScenarioConfig, out_dir: impl Into<PathBuf>) -> Self {
        let policy = match mode {
            Mode::Train => PolicySpec::Ppo,
            _ => PolicySpec::Heuristic(HeuristicKind::GreedyGrid),
        };
        Self {
            mode,
            seed: scenario.seed,
            scenario,
            trainer: TrainerConfig::default(),
            policy,
            dt_enabled: true,
            repetitions: 1,
            episodes: 10,
            sweep: None,
            out_dir: out_dir.into(),
            workers: 0,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.trainer.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.repetitions == 0 || self.episodes == 0 {
            return bad("repetitions and episodes must be positive".into());
        }
        match (self.mode, &self.policy, &self.sweep) {
            (Mode::Sweep, _, None) => return bad("sweep mode needs a sweep axis and values".into()),
            (Mode::Sweep, _, Some(s)) if s.values.is_empty() => return bad("sweep values are empty".into()),
            (Mode::Train, p, _) if *p != PolicySpec::Ppo => {
                return bad(format!("train mode trains ppo, not `{}`", p.label()))
            }
            (Mode::Evaluate, PolicySpec::Trained(_), _) => {}
            (Mode::Evaluate, p, _) => return bad(format!("evaluate needs trained:<checkpoint>, got `{}`", p.label())),
            (Mode::Simulate, PolicySpec::Ppo, _) => return bad("simulate cannot run ppo; use train".into()),
            _ => {}
        }
        if self.mode != Mode::Sweep && self.sweep.is_some() {
            return bad("a sweep axis is only valid in sweep mode".into());
        }
        for cell in self.cells()? {
            cell.scenario.validate()?;
        }
        Ok(())
    }

    /// Every (sweep value, seed) cell in deterministic order.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let values: Vec<Option<f64>> = match &self.sweep {
            Some(s) => s.values.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let mut cells = Vec::new();
        for v in values {
            let mut scenario = self.scenario.clone();
            let mut dt = self.dt_enabled;
            if let (Some(v), Some(s)) = (v, &self.sweep) {
                s.axis.apply(v, &mut scenario, &mut dt)?;
            }
            for r in 0..self.repetitions {
                let seed = self.seed + r as u64;
                let axis = self.sweep.as_ref().map(|s| s.axis.name()).unwrap_or("none");
                let id = match v {
                    Some(v) => format!("{axis}-{v}_seed{seed}"),
                    None => format!("seed{seed}"),
                };
                cells.push(Cell {
                    id: sanitize(&id),
                    axis: axis.to_string(),
                    axis_value: v.unwrap_or(0.0),
                    seed,
                    scenario: scenario.clone(),
                    dt_enabled: dt,
                });
            }
        }
        Ok(cells)
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: String,
    pub axis: String,
    pub axis_value: f64,
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub dt_enabled: bool,
}

/// One episode of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub cell: String,
    pub policy: String,
    pub axis: String,
    pub axis_value: f64,
    pub dt: bool,
    pub num_cvs: usize,
    pub lyapunov_v: f64,
    pub seed: u64,
    pub episode: usize,
    pub mean_reward: f64,
    pub mean_cost: f64,
    pub mean_delay: f64,
    pub mean_energy: f64,
    pub mean_backlog: f64,
    pub mean_virtual_queue: f64,
    pub deadline_miss_rate: f64,
    pub drift_violations: usize,
}

/// Mean backlog of one queue over one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueRow {
    pub cell: String,
    pub policy: String,
    pub axis_value: f64,
    pub seed: u64,
    pub episode: usize,
    pub queue_id: String,
    pub mean_backlog: f64,
}

/// Mean and sample standard deviation over seeds for one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub axis: String,
    pub axis_value: f64,
    pub seeds: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub delay_mean: f64,
    pub delay_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
    pub backlog_mean: f64,
    pub backlog_std: f64,
}

/// Plot-ready series point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub series: String,
    pub x: f64,
    pub y: f64,
    pub yerr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub cell: String,
    pub fingerprint: String,
    pub metrics_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyRow {
    pub cell: String,
    pub seed: u64,
    pub axis_value: f64,
    pub steady: f64,
    pub cv: f64,
    pub convergence_episode: usize,
}

/// What [`run_plan`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub computed: Vec<String>,
    pub reused: Vec<String>,
    pub summary: Vec<SummaryRow>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-cell averages over episodes (the last `tail` episodes when given),
/// then mean and std over seeds per sweep value. Rows are ordered by value
/// and seed before reducing, so the result does not depend on input order.
pub fn aggregate(rows: &[MetricsRow], tail: Option<usize>) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(u64, u64), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.axis_value.to_bits(), r.seed)).or_default().push(r);
    }
    let mut per_value: BTreeMap<u64, Vec<[f64; 5]>> = BTreeMap::new();
    let mut labels: HashMap<u64, (String, String)> = HashMap::new();
    for ((value_bits, _), mut eps) in cells {
        eps.sort_by_key(|r| r.episode);
        let start = tail.map_or(0, |t| eps.len().saturating_sub(t));
        let window = &eps[start..];
        let m = |f: fn(&MetricsRow) -> f64| window.iter().map(|r| f(r)).sum::<f64>() / window.len() as f64;
        per_value.entry(value_bits).or_default().push([
            m(|r| r.mean_reward),
            m(|r| r.mean_cost),
            m(|r| r.mean_delay),
            m(|r| r.mean_energy),
            m(|r| r.mean_backlog),
        ]);
        labels.insert(value_bits, (window[0].policy.clone(), window[0].axis.clone()));
    }
    let mut out: Vec<SummaryRow> = per_value
        .into_iter()
        .map(|(bits, seeds)| {
            let col = |j: usize| mean_std(&seeds.iter().map(|s| s[j]).collect::<Vec<_>>());
            let (policy, axis) = labels[&bits].clone();
            let (reward_mean, reward_std) = col(0);
            let (cost_mean, cost_std) = col(1);
            let (delay_mean, delay_std) = col(2);
            let (energy_mean, energy_std) = col(3);
            let (backlog_mean, backlog_std) = col(4);
            SummaryRow {
                policy,
                axis,
                axis_value: f64::from_bits(bits),
                seeds: seeds.len(),
                reward_mean,
                reward_std,
                cost_mean,
                cost_std,
                delay_mean,
                delay_std,
                energy_mean,
                energy_std,
                backlog_mean,
                backlog_std,
            }
        })
        .collect();
    out.sort_by(|a, b| a.axis_value.total_cmp(&b.axis_value));
    out
}

fn fingerprint(plan: &ExperimentPlan, cell: &Cell) -> Result<String> {
    let mut text = cell.scenario.to_toml_string()?;
    text.push_str(&format!(
        "\n#{}|{:?}|{}|{}|{}|{}",
        cell.dt_enabled,
        plan.policy,
        plan.episodes,
        cell.seed,
        plan.trace,
        cell.id
    ));
    if plan.policy == PolicySpec::Ppo {
        text.push_str(&serde_json::to_string(&plan.trainer)?);
    }
    if let PolicySpec::Trained(path) = &plan.policy {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        text.push_str(&format!("{:016x}", fnv1a(&bytes)));
    }
    Ok(format!("{:016x}", fnv1a(text.as_bytes())))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

struct CellOutput {
    metrics: Vec<MetricsRow>,
    queues: Vec<QueueRow>,
}

fn metrics_row(plan: &ExperimentPlan, cell: &Cell, episode: usize, s: &EpisodeStats, violations: usize) -> MetricsRow {
    MetricsRow {
        cell: cell.id.clone(),
        policy: plan.policy.label(),
        axis: cell.axis.clone(),
        axis_value: cell.axis_value,
        dt: cell.dt_enabled,
        num_cvs: cell.scenario.num_cvs,
        lyapunov_v: cell.scenario.lyapunov_v,
        seed: cell.seed,
        episode,
        mean_reward: s.mean_reward,
        mean_cost: s.mean_cost,
        mean_delay: s.mean_delay,
        mean_energy: s.mean_energy,
        mean_backlog: s.mean_backlog,
        mean_virtual_queue: s.mean_virtual_queue,
        deadline_miss_rate: s.deadline_miss_rate,
        drift_violations: violations,
    }
}

fn run_cell(plan: &ExperimentPlan, cell: &Cell, dir: &Path) -> Result<CellOutput> {
    let label = plan.policy.label();
    let mut metrics = Vec::with_capacity(plan.episodes);
    let mut queues = Vec::new();
    let mut env = Env::new(cell.scenario.clone(), cell.dt_enabled)?;

    if plan.policy == PolicySpec::Ppo {
        let cfg = TrainerConfig {
            seed: cell.seed,
            max_episodes: plan.episodes,
            ..plan.trainer.clone()
        };
        let mut trainer = Trainer::new(cfg, env)?;
        trainer.train()?;
        for (ep, s) in trainer.episode_stats().iter().enumerate() {
            metrics.push(metrics_row(plan, cell, ep, s, 0));
        }
        write_rows(&dir.join(format!("training_log_{}.csv", cell.id)), trainer.log())?;
        Checkpoint::from_trainer(&trainer).save(&dir.join(format!("checkpoint_{}.json", cell.id)))?;
        return Ok(CellOutput { metrics, queues });
    }

    let mut policy: Box<dyn JointPolicy> = match &plan.policy {
        PolicySpec::Heuristic(k) => Box::new(HeuristicPolicy::new(*k)),
        PolicySpec::Trained(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.num_agents != env.num_agents() || ckpt.obs_dim != env.obs_dim() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint was trained for {} agents and observation size {}, scenario has {} and {}",
                    ckpt.num_agents,
                    ckpt.obs_dim,
                    env.num_agents(),
                    env.obs_dim()
                )));
            }
            Box::new(ckpt.policy)
        }
        PolicySpec::Ppo => unreachable!("handled above"),
    };
    let mut trace: Vec<TraceRow> = Vec::new();
    for ep in 0..plan.episodes {
        let want_trace = plan.trace && ep == 0;
        let rec = run_episode(
            &mut env,
            policy.as_mut(),
            episode_seed(cell.seed, ep as u64),
            ep,
            want_trace.then_some(&mut trace),
        )?;
        ensure_drift(&rec, &format!("cell {} episode {ep}", cell.id))?;
        metrics.push(metrics_row(plan, cell, ep, &rec.stats, rec.drift_violations));
        let queue = |queue_id: String, mean_backlog: f64| QueueRow {
            cell: cell.id.clone(),
            policy: label.clone(),
            axis_value: cell.axis_value,
            seed: cell.seed,
            episode: ep,
            queue_id,
            mean_backlog,
        };
        for (i, q) in rec.mean_local_backlog.iter().enumerate() {
            queues.push(queue(format!("cv{i}"), *q));
        }
        for (k, q) in rec.mean_rsu_backlog.iter().enumerate() {
            queues.push(queue(format!("rsu{k}"), *q));
        }
    }
    if plan.trace {
        write_rows(&dir.join(format!("trace_{}.csv", cell.id)), &trace)?;
    }
    Ok(CellOutput { metrics, queues })
}

fn load_manifest(path: &Path) -> Result<HashMap<String, ManifestRow>> {
    if !path.exists() {
        return Ok(HashMap::new());
    }
    Ok(read_rows::<ManifestRow>(path)?
        .into_iter()
        .map(|r| (r.cell.clone(), r))
        .collect())
}

/// Executes every cell (in parallel), writing per-cell metrics, the
/// aggregated metrics and summary, plot data and a manifest. Cells already
/// listed in the manifest with a matching fingerprint are read back instead
/// of recomputed.
pub fn run_plan(plan: &ExperimentPlan) -> Result<RunReport> {
    plan.validate()?;
    let dir = plan.out_dir.clone();
    let runs = dir.join("runs");
    let plots = dir.join("plots");
    for d in [&dir, &runs, &plots] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let snapshot = dir.join("scenario.toml");
    std::fs::write(&snapshot, plan.scenario.to_toml_string()?).map_err(|e| Error::io(&snapshot, e))?;
    if plan.policy == PolicySpec::Ppo {
        let path = dir.join("trainer.toml");
        let text = toml::to_string(&plan.trainer)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }

    let manifest_path = dir.join("manifest.csv");
    let previous = load_manifest(&manifest_path)?;
    let cells = plan.cells()?;
    let manifest_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&manifest_path)
        .map_err(|e| Error::io(&manifest_path, e))?;
    let needs_header = previous.is_empty();
    let manifest = Mutex::new(csv::WriterBuilder::new().has_headers(needs_header).from_writer(manifest_file));

    let work = |cell: &Cell| -> Result<(ManifestRow, CellOutput, bool)> {
        let fp = fingerprint(plan, cell)?;
        let metrics_file = format!("runs/metrics_{}.csv", cell.id);
        let queue_file = dir.join(format!("runs/queues_{}.csv", cell.id));
        let row = ManifestRow {
            cell: cell.id.clone(),
            fingerprint: fp.clone(),
            metrics_file: metrics_file.clone(),
        };
        if let Some(done) = previous.get(&cell.id) {
            if done.fingerprint == fp && dir.join(&done.metrics_file).exists() {
                let metrics = read_rows(&dir.join(&done.metrics_file))?;
                let queues = if queue_file.exists() { read_rows(&queue_file)? } else { Vec::new() };
                return Ok((row, CellOutput { metrics, queues }, false));
            }
        }
        let out = run_cell(plan, cell, &runs)?;
        write_rows(&dir.join(&metrics_file), &out.metrics)?;
        write_rows(&queue_file, &out.queues)?;
        let mut m = manifest.lock().expect("manifest lock");
        m.serialize(&row)?;
        m.flush().map_err(|e| Error::io(&manifest_path, e))?;
        Ok((row, out, true))
    };

    let results: Vec<Result<(ManifestRow, CellOutput, bool)>> = if plan.workers == 1 {
        cells.iter().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(plan.workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| cells.par_iter().map(work).collect())
    };
    drop(manifest);

    let mut report = RunReport {
        out_dir: dir.clone(),
        computed: Vec::new(),
        reused: Vec::new(),
        summary: Vec::new(),
    };
    let mut manifest_rows = Vec::new();
    let mut metrics = Vec::new();
    let mut queues = Vec::new();
    let mut failure = None;
    for (cell, res) in cells.iter().zip(results) {
        match res {
            Ok((row, out, computed)) => {
                if computed {
                    report.computed.push(cell.id.clone());
                } else {
                    report.reused.push(cell.id.clone());
                }
                manifest_rows.push(row);
                metrics.extend(out.metrics);
                queues.extend(out.queues);
            }
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    // Keep completed cells recorded even when another cell failed.
    manifest_rows.sort_by(|a, b| a.cell.cmp(&b.cell));
    for (id, row) in &previous {
        if !manifest_rows.iter().any(|r| &r.cell == id) {
            manifest_rows.push(row.clone());
        }
    }
    write_rows(&manifest_path, &manifest_rows)?;
    if let Some(e) = failure {
        return Err(e);
    }

    write_rows(&dir.join("metrics.csv"), &metrics)?;
    let tail = (plan.policy == PolicySpec::Ppo).then_some(STEADY_WINDOW);
    report.summary = aggregate(&metrics, tail);
    write_rows(&dir.join("summary.csv"), &report.summary)?;
    write_plots(plan, &plots, &metrics, &queues, &report.summary)?;
    if plan.policy == PolicySpec::Ppo {
        write_steady(&dir, &cells, &metrics)?;
    }
    Ok(report)
}

fn series_name(policy: &str, axis: &str, value: f64) -> String {
    if axis == "none" {
        policy.to_string()
    } else {
        format!("{policy}@{axis}={value}")
    }
}

fn write_plots(
    plan: &ExperimentPlan,
    plots: &Path,
    metrics: &[MetricsRow],
    queues: &[QueueRow],
    summary: &[SummaryRow],
) -> Result<()> {
    // Mean over seeds per (series, episode).
    let mut by_episode: BTreeMap<(String, usize), Vec<(u64, f64)>> = BTreeMap::new();
    for r in metrics {
        by_episode
            .entry((series_name(&r.policy, &r.axis, r.axis_value), r.episode))
            .or_default()
            .push((r.seed, r.mean_reward));
    }
    write_rows(&plots.join("reward_vs_episode.csv"), &reduce_series(by_episode))?;

    let axis = metrics.first().map(|r| r.axis.clone()).unwrap_or_else(|| "none".into());
    let mut by_queue: BTreeMap<(String, usize), Vec<(u64, f64)>> = BTreeMap::new();
    for q in queues {
        let base = series_name(&q.policy, &axis, q.axis_value);
        by_queue
            .entry((format!("{base}/{}", q.queue_id), q.episode))
            .or_default()
            .push((q.seed, q.mean_backlog));
    }
    write_rows(&plots.join("queue_vs_episode.csv"), &reduce_series(by_queue))?;

    if let Some(sweep) = &plan.sweep {
        let name = sweep.axis.name();
        let policy = plan.policy.label();
        let emit = |metric: &str, f: fn(&SummaryRow) -> (f64, f64)| {
            let rows: Vec<PlotRow> = summary
                .iter()
                .map(|s| {
                    let (y, yerr) = f(s);
                    PlotRow {
                        series: policy.clone(),
                        x: s.axis_value,
                        y,
                        yerr,
                    }
                })
                .collect();
            write_rows(&plots.join(format!("{metric}_vs_{name}.csv")), &rows)
        };
        emit("cost", |s| (s.cost_mean, s.cost_std))?;
        emit("delay", |s| (s.delay_mean, s.delay_std))?;
        emit("energy", |s| (s.energy_mean, s.energy_std))?;
        emit("backlog", |s| (s.backlog_mean, s.backlog_std))?;
        emit("reward", |s| (s.reward_mean, s.reward_std))?;
    }
    Ok(())
}

fn reduce_series(groups: BTreeMap<(String, usize), Vec<(u64, f64)>>) -> Vec<PlotRow> {
    groups
        .into_iter()
        .map(|((series, x), mut vals)| {
            vals.sort_by_key(|v| v.0);
            let (y, yerr) = mean_std(&vals.iter().map(|v| v.1).collect::<Vec<_>>());
            PlotRow {
                series,
                x: x as f64,
                y,
                yerr,
            }
        })
        .collect()
}

fn write_steady(dir: &Path, cells: &[Cell], metrics: &[MetricsRow]) -> Result<()> {
    let mut rows = Vec::new();
    for cell in cells {
        let mut eps: Vec<&MetricsRow> = metrics.iter().filter(|r| r.cell == cell.id).collect();
        eps.sort_by_key(|r| r.episode);
        let log: Vec<f64> = eps.iter().map(|r| r.mean_reward).collect();
        if log.len() < STEADY_WINDOW {
            continue;
        }
        let SteadyMetrics {
            steady,
            cv,
            convergence_episode,
        } = steady_metrics(&log)?;
        rows.push(SteadyRow {
            cell: cell.id.clone(),
            seed: cell.seed,
            axis_value: cell.axis_value,
            steady,
            cv,
            convergence_episode,
        });
    }
    write_rows(&dir.join("steady.csv"), &rows)
}
