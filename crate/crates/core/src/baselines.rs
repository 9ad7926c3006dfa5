//! Non-learning reference policies.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::compute::{evaluate_task, SplitDecision, TaskOutcome};
use crate::env::{action_dim, Env, RawAction, INFEASIBLE_LATENCY_FACTOR};
use crate::error::{Error, Result};
use crate::scenario::{link_distance, pathloss_linear, v2i_rate, ChannelDraw, ScenarioConfig};

/// Joint decision rule for all agents in one slot.
///
/// Heuristics may read the whole world through `env`; learned actors only
/// read their own observation.
pub trait JointPolicy {
    fn act(&mut self, env: &Env, rng: &mut ChaCha8Rng) -> Result<Vec<RawAction>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicKind {
    Random,
    AllLocal,
    AllEdgeNearest,
    UniformSplit,
    GreedyGrid,
}

impl HeuristicKind {
    pub const ALL: [HeuristicKind; 5] = [
        Self::Random,
        Self::AllLocal,
        Self::AllEdgeNearest,
        Self::UniformSplit,
        Self::GreedyGrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::AllLocal => "all_local",
            Self::AllEdgeNearest => "all_edge_nearest",
            Self::UniformSplit => "uniform_split",
            Self::GreedyGrid => "greedy_grid",
        }
    }
}

impl std::str::FromStr for HeuristicKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeuristicPolicy {
    pub kind: HeuristicKind,
}

impl HeuristicPolicy {
    pub fn new(kind: HeuristicKind) -> Self {
        Self { kind }
    }
}

const SATURATE: f64 = 10.0;
/// Logit used for an exactly-zero share; far below any split floor.
const ZERO_LOGIT: f64 = -50.0;
/// Logit used for a compute level of one.
const FULL_LOGIT: f64 = 30.0;

impl JointPolicy for HeuristicPolicy {
    fn act(&mut self, env: &Env, rng: &mut ChaCha8Rng) -> Result<Vec<RawAction>> {
        let cfg = env.config();
        let k = cfg.num_rsus;
        let dim = action_dim(k);
        (0..env.num_agents())
            .map(|i| {
                Ok(match self.kind {
                    HeuristicKind::Random => {
                        RawAction((0..dim).map(|_| rng.sample(StandardNormal)).collect())
                    }
                    HeuristicKind::AllLocal => {
                        let mut a = vec![0.0; dim];
                        a[0] = SATURATE;
                        a[1..=k].fill(-SATURATE);
                        RawAction(a)
                    }
                    HeuristicKind::AllEdgeNearest => {
                        let world = env.world();
                        let nearest = (0..k)
                            .min_by(|&a, &b| {
                                let da = link_distance(&world.vehicles[i], &world.rsus[a], cfg);
                                let db = link_distance(&world.vehicles[i], &world.rsus[b], cfg);
                                da.total_cmp(&db)
                            })
                            .expect("at least one RSU");
                        let mut a = vec![-SATURATE; dim];
                        a[1 + nearest] = SATURATE;
                        a[1 + k + nearest] = SATURATE;
                        a[1 + 2 * k..].fill(0.0);
                        RawAction(a)
                    }
                    HeuristicKind::UniformSplit => RawAction(vec![0.0; dim]),
                    HeuristicKind::GreedyGrid => greedy_plan(env, i)?.to_raw_action(),
                })
            })
            .collect()
    }
}

/// One agent's candidate from the greedy grid and its planned P2 share.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyChoice {
    pub split: SplitDecision,
    /// F as a fraction of the RSU's schedulable capacity.
    pub f_levels: Vec<f64>,
    pub p2: f64,
}

impl GreedyChoice {
    pub fn to_raw_action(&self) -> RawAction {
        let k = self.split.num_rsus();
        let ln = |x: f64| if x > 0.0 { x.ln() } else { ZERO_LOGIT };
        let mut a = Vec::with_capacity(action_dim(k));
        a.push(ln(self.split.local_ratio));
        a.extend(self.split.rsu_ratios.iter().map(|&r| ln(r)));
        a.extend(self.split.bandwidth_ratios.iter().map(|&b| ln(b)));
        a.extend(self.f_levels.iter().map(|&l| {
            if l >= 1.0 {
                FULL_LOGIT
            } else {
                (l / (1.0 - l)).ln()
            }
        }));
        RawAction(a)
    }
}

/// Rates the planner assumes: unit-mean fading, actual path loss, zero out of coverage.
pub fn expected_rates(env: &Env, agent: usize, bandwidth: &[f64]) -> Vec<f64> {
    let cfg = env.config();
    let world = env.world();
    let v = &world.vehicles[agent];
    world
        .rsus
        .iter()
        .zip(bandwidth)
        .map(|(r, &b)| {
            let d = link_distance(v, r, cfg);
            if d > cfg.rsu_coverage_m {
                return 0.0;
            }
            let draw = ChannelDraw {
                small_scale_gain: 1.0,
                pathloss_linear: pathloss_linear(d),
            };
            v2i_rate(b, &draw, cfg)
        })
        .collect()
}

/// This agent's contribution to P2: `V·cost_i` plus the drift terms its own
/// arrivals and requested service touch. Other agents enter only as constants.
pub fn agent_p2(env: &Env, agent: usize, outcome: &TaskOutcome, split: &SplitDecision) -> f64 {
    let cfg = env.config();
    let world = env.world();
    let u = cfg.queue_unit_cycles;
    let tau = cfg.slot_duration_s;
    let cost = cfg.alpha * outcome.task_latency_s + (1.0 - cfg.alpha) * outcome.task_energy_j;
    let q_loc = world.queues.local_backlog[agent] / u;
    let mut drift = q_loc * (outcome.local_arrival_cycles - world.vehicles[agent].cpu_hz * tau) / u;
    for k in 0..cfg.num_rsus {
        let q = world.queues.rsu_backlog[k] / u;
        drift += q * (outcome.rsu_arrival_cycles[k] - split.rsu_cpu_hz[k] * tau) / u;
    }
    drift += cfg.num_cvs as f64 * world.queues.virtual_energy * outcome.task_energy_j;
    cfg.lyapunov_v * cost + drift
}

/// Plans `split` with expected rates and current delay estimates, returning its P2 share.
pub fn planned_p2(env: &Env, agent: usize, split: &SplitDecision) -> f64 {
    let cfg = env.config();
    let world = env.world();
    let rates = expected_rates(env, agent, &split.bandwidth_ratios);
    let mut outcome = evaluate_task(split, &world.tasks[agent], &rates, &world.delays[agent], cfg);
    outcome.cap_infeasible(
        INFEASIBLE_LATENCY_FACTOR * world.tasks[agent].t_max_s,
        cfg.tx_power_w,
    );
    agent_p2(env, agent, &outcome, split)
}

/// Compositions of `total` units into `parts` non-negative integers, in
/// lexicographic order.
pub fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    fn rec(total: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in 0..=total {
            prefix.push(first);
            rec(total - first, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if parts > 0 {
        rec(total, parts, &mut Vec::new(), &mut out);
    }
    out
}

fn grid_units(cfg: &ScenarioConfig) -> usize {
    (1.0 / cfg.greedy_grid_step).round() as usize
}

/// Minimises the agent's planned P2 share over the grid: split ratios and
/// bandwidth shares in steps of `greedy_grid_step` (bandwidth only on used
/// links, every used link strictly positive) and a compute level from
/// `greedy_f_levels` per used RSU. The first strict minimum wins.
pub fn greedy_plan(env: &Env, agent: usize) -> Result<GreedyChoice> {
    let cfg = env.config();
    let k = cfg.num_rsus;
    let units = grid_units(cfg);
    let step = 1.0 / units as f64;
    let cap = cfg.rsu_available_hz();
    let levels = &cfg.greedy_f_levels;
    let mut best: Option<GreedyChoice> = None;

    for comp in compositions(units, 1 + k) {
        let used: Vec<usize> = (0..k).filter(|&j| comp[1 + j] > 0).collect();
        let bw_options: Vec<Vec<usize>> = if used.is_empty() {
            vec![vec![]]
        } else {
            compositions(units, used.len())
                .into_iter()
                .filter(|c| c.iter().all(|&x| x > 0))
                .collect()
        };
        let f_combos = level_combos(levels.len(), used.len());
        for bw in &bw_options {
            let mut bandwidth = vec![0.0; k];
            for (slot, &j) in used.iter().enumerate() {
                bandwidth[j] = bw[slot] as f64 * step;
            }
            if used.is_empty() {
                bandwidth.fill(1.0 / k as f64);
            }
            for fc in &f_combos {
                let mut f_levels = vec![1.0; k];
                for (slot, &j) in used.iter().enumerate() {
                    f_levels[j] = levels[fc[slot]];
                }
                let split = SplitDecision {
                    local_ratio: comp[0] as f64 * step,
                    rsu_ratios: comp[1..].iter().map(|&c| c as f64 * step).collect(),
                    bandwidth_ratios: bandwidth.clone(),
                    rsu_cpu_hz: f_levels.iter().map(|l| l * cap).collect(),
                };
                let p2 = planned_p2(env, agent, &split);
                if best.as_ref().is_none_or(|b| p2 < b.p2) {
                    best = Some(GreedyChoice { split, f_levels, p2 });
                }
            }
        }
    }
    best.ok_or_else(|| Error::Invariant("greedy grid found no finite candidate".into()))
}

fn level_combos(levels: usize, slots: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..slots {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..levels).map(move |l| {
                    let mut q = p.clone();
                    q.push(l);
                    q
                })
            })
            .collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::project_joint;
    use rand::SeedableRng;

    fn env(n: usize, k: usize) -> Env {
        let cfg = ScenarioConfig {
            num_cvs: n,
            num_rsus: k,
            ..ScenarioConfig::default()
        };
        Env::new(cfg, true).unwrap()
    }

    #[test]
    fn all_local_saturates() {
        let e = env(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let raws = HeuristicPolicy::new(HeuristicKind::AllLocal).act(&e, &mut rng).unwrap();
        for s in project_joint(&raws, e.config()).unwrap() {
            assert!(s.local_ratio >= 0.9999);
        }
    }

    #[test]
    fn uniform_split_is_uniform() {
        let e = env(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let raws = HeuristicPolicy::new(HeuristicKind::UniformSplit).act(&e, &mut rng).unwrap();
        for s in project_joint(&raws, e.config()).unwrap() {
            assert!((s.local_ratio - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn nearest_edge_offloads_to_closest() {
        let mut e = env(1, 3);
        e.world_mut().vehicles[0].x_m = 510.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let raws = HeuristicPolicy::new(HeuristicKind::AllEdgeNearest).act(&e, &mut rng).unwrap();
        let s = &project_joint(&raws, e.config()).unwrap()[0];
        assert!(s.rsu_ratios[2] > 0.999);
        assert!(s.bandwidth_ratios[2] > 0.999);
    }

    #[test]
    fn compositions_count() {
        assert_eq!(compositions(4, 2).len(), 5);
        assert_eq!(compositions(4, 4).len(), 35);
        assert!(compositions(4, 3).iter().all(|c| c.iter().sum::<usize>() == 4));
    }

    #[test]
    fn greedy_action_round_trips_through_projection() {
        let e = env(1, 2);
        let choice = greedy_plan(&e, 0).unwrap();
        let s = &project_joint(&[choice.to_raw_action()], e.config()).unwrap()[0];
        assert!((s.local_ratio - choice.split.local_ratio).abs() < 1e-12);
        for j in 0..2 {
            assert!((s.rsu_ratios[j] - choice.split.rsu_ratios[j]).abs() < 1e-12);
            if choice.split.rsu_ratios[j] > 0.0 {
                assert!((s.bandwidth_ratios[j] - choice.split.bandwidth_ratios[j]).abs() < 1e-12);
                let rel = (s.rsu_cpu_hz[j] - choice.split.rsu_cpu_hz[j]).abs() / choice.split.rsu_cpu_hz[j];
                assert!(rel < 1e-9);
            }
        }
    }

    #[test]
    fn parse_kind() {
        for k in HeuristicKind::ALL {
            assert_eq!(k.name().parse::<HeuristicKind>().unwrap(), k);
        }
        assert!("best".parse::<HeuristicKind>().is_err());
    }
}
