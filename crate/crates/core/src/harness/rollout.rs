use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::JointPolicy;
use crate::env::{Env, SlotOutcome};
use crate::error::{Error, Result};
use crate::metrics::{EpisodeAccumulator, EpisodeStats};

/// One slot of one agent, flattened for trace files. Per-RSU vectors are
/// `;`-joined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    pub slot: usize,
    pub agent: usize,
    pub obs_hash: String,
    pub local_ratio: f64,
    pub rsu_ratios: String,
    pub bandwidth_ratios: String,
    pub rsu_cpu_hz: String,
    pub mode_selector: String,
    pub task_latency_s: f64,
    pub task_energy_j: f64,
    pub deadline_met: bool,
    pub reward: f64,
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

/// Everything the harness keeps from one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub stats: EpisodeStats,
    pub drift_violations: usize,
    /// Per-CV local backlog averaged over slots.
    pub mean_local_backlog: Vec<f64>,
    pub mean_rsu_backlog: Vec<f64>,
    pub e_totals: Vec<f64>,
    pub total_backlog: Vec<f64>,
    pub virtual_final: f64,
}

/// Policy randomness for an episode; disjoint from every vehicle stream.
pub fn policy_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

/// Resets `env` with `seed` and plays one episode. With `trace` set, every
/// agent-slot is appended to it.
pub fn run_episode(
    env: &mut Env,
    policy: &mut dyn JointPolicy,
    seed: u64,
    episode: usize,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<EpisodeRecord> {
    env.reset(seed);
    let mut rng = policy_rng(seed);
    let n = env.num_agents();
    let k = env.config().num_rsus;
    let mut acc = EpisodeAccumulator::default();
    let mut rec = EpisodeRecord {
        stats: EpisodeStats::default(),
        drift_violations: 0,
        mean_local_backlog: vec![0.0; n],
        mean_rsu_backlog: vec![0.0; k],
        e_totals: Vec::new(),
        total_backlog: Vec::new(),
        virtual_final: 0.0,
    };
    while !env.is_done() {
        let hashes: Vec<u64> = if trace.is_some() {
            env.observe_all().iter().map(|o| o.fingerprint()).collect()
        } else {
            Vec::new()
        };
        let raws = policy.act(env, &mut rng)?;
        let step = env.step(&raws)?;
        let out = &step.outcome;
        if let Some(rows) = trace.as_deref_mut() {
            push_trace(rows, episode, out, &hashes);
        }
        record_slot(&mut rec, &mut acc, out);
    }
    let slots = rec.e_totals.len().max(1) as f64;
    rec.mean_local_backlog.iter_mut().for_each(|q| *q /= slots);
    rec.mean_rsu_backlog.iter_mut().for_each(|q| *q /= slots);
    rec.stats = acc.finish();
    rec.virtual_final = env.world().queues.virtual_energy;
    Ok(rec)
}

fn record_slot(rec: &mut EpisodeRecord, acc: &mut EpisodeAccumulator, out: &SlotOutcome) {
    acc.push(out);
    if !out.drift_check.holds() {
        rec.drift_violations += 1;
    }
    for (m, q) in rec.mean_local_backlog.iter_mut().zip(&out.local_backlog_after) {
        *m += q;
    }
    for (m, q) in rec.mean_rsu_backlog.iter_mut().zip(&out.rsu_backlog_after) {
        *m += q;
    }
    rec.e_totals.push(out.e_total);
    rec.total_backlog.push(out.total_backlog_after());
}

fn push_trace(rows: &mut Vec<TraceRow>, episode: usize, out: &SlotOutcome, hashes: &[u64]) {
    for (i, (s, o)) in out.splits.iter().zip(&out.outcomes).enumerate() {
        rows.push(TraceRow {
            episode,
            slot: out.slot,
            agent: i,
            obs_hash: format!("{:016x}", hashes[i]),
            local_ratio: s.local_ratio,
            rsu_ratios: join(&s.rsu_ratios),
            bandwidth_ratios: join(&s.bandwidth_ratios),
            rsu_cpu_hz: join(&s.rsu_cpu_hz),
            mode_selector: join(&o.mode_selector),
            task_latency_s: o.task_latency_s,
            task_energy_j: o.task_energy_j,
            deadline_met: o.deadline_met,
            reward: out.objective.reward,
        });
    }
}

/// Fails with an invariant error if any slot broke the drift bound.
pub fn ensure_drift(rec: &EpisodeRecord, context: &str) -> Result<()> {
    if rec.drift_violations > 0 {
        return Err(Error::Invariant(format!(
            "{context}: drift bound violated on {} slots",
            rec.drift_violations
        )));
    }
    Ok(())
}
