//! The multi-agent MDP: one agent per client vehicle, a shared team reward
//! and the digital-twin queue aggregate in every observation.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compute::{evaluate_task, QueueDelays, SplitDecision, TaskOutcome, TaskSpec};
use crate::error::{Error, Result};
use crate::lyapunov::{check_drift, slot_objective, DriftCheck, DriftInputs, SlotObjective};
use crate::queues::{QueueState, QueueUpdate};
use crate::scenario::{
    advance_mobility, draw_channel, link_distance, place_rsus, spawn_task, spawn_vehicle,
    v2i_rate, vehicle_rng, ObservationScale, RsuState, ScenarioConfig, VehicleState,
};

/// Infeasible branches are charged this many multiples of `T^max`.
pub const INFEASIBLE_LATENCY_FACTOR: f64 = 10.0;

/// Positions of each block inside an agent's observation vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationLayout {
    pub num_rsus: usize,
}

impl ObservationLayout {
    pub const CV_BLOCK: usize = 6;
    pub const RSU_FIELDS: usize = 3;
    pub const DT_BLOCK: usize = 3;

    pub fn new(cfg: &ScenarioConfig) -> Self {
        Self {
            num_rsus: cfg.num_rsus,
        }
    }

    pub fn dim(&self) -> usize {
        Self::CV_BLOCK + Self::RSU_FIELDS * self.num_rsus + 1 + self.num_rsus + 1 + Self::DT_BLOCK
    }

    pub fn rsu_info_start(&self) -> usize {
        Self::CV_BLOCK
    }

    pub fn local_backlog_index(&self) -> usize {
        Self::CV_BLOCK + Self::RSU_FIELDS * self.num_rsus
    }

    pub fn rsu_backlog_start(&self) -> usize {
        self.local_backlog_index() + 1
    }

    pub fn virtual_index(&self) -> usize {
        self.rsu_backlog_start() + self.num_rsus
    }

    pub fn dt_start(&self) -> usize {
        self.virtual_index() + 1
    }

    /// Per-entry scale constants; normalised = raw / scale.
    pub fn scales(&self, s: &ObservationScale) -> Vec<f64> {
        let mut v = vec![s.bits, s.bits, s.cpu_hz, s.position_m, s.speed_mps, s.time_s];
        for _ in 0..self.num_rsus {
            v.extend([s.position_m, s.position_m, s.cpu_hz]);
        }
        v.push(s.backlog_cycles);
        v.extend(std::iter::repeat_n(s.backlog_cycles, self.num_rsus));
        v.push(s.energy_j);
        v.extend([s.backlog_cycles; 3]);
        v
    }
}

/// One agent's observation in SI units.
///
/// Layout: vehicle twin `[G^TasD, G^InsD, C, x, v, T^max]`, per-RSU twin
/// `[x_k, l_k, F^max]`, own local backlog, every RSU backlog, the virtual
/// energy queue, and `G_rsu = [Σ Q_k, mean Q_k, max Q_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub raw: Vec<f64>,
}

impl Observation {
    pub fn normalized(&self, scales: &[f64]) -> Vec<f64> {
        self.raw.iter().zip(scales).map(|(v, s)| v / s).collect()
    }

    pub fn from_normalized(values: &[f64], scales: &[f64]) -> Self {
        Self {
            raw: values.iter().zip(scales).map(|(v, s)| v * s).collect(),
        }
    }

    /// FNV-1a over the bit patterns, for trace files.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.raw {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Unconstrained per-agent action: `[local logit, K split logits, K bandwidth logits, K compute logits]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAction(pub Vec<f64>);

pub fn action_dim(num_rsus: usize) -> usize {
    1 + 3 * num_rsus
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps one agent's raw action onto the simplex constraints. Compute shares
/// are the agent's requests; contention across agents is resolved by
/// [`project_joint`].
pub fn project_action(raw: &RawAction, cfg: &ScenarioConfig) -> Result<SplitDecision> {
    let k = cfg.num_rsus;
    if raw.0.len() != action_dim(k) {
        return Err(Error::Dimension {
            expected: action_dim(k),
            actual: raw.0.len(),
            context: "raw action",
        });
    }
    if raw.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("raw action"));
    }
    let mut split = softmax(&raw.0[..=k]);
    if cfg.split_floor > 0.0 {
        for s in split.iter_mut() {
            if *s < cfg.split_floor {
                *s = 0.0;
            }
        }
        let total: f64 = split.iter().sum();
        for s in split.iter_mut() {
            *s /= total;
        }
    }
    let bandwidth_ratios = softmax(&raw.0[1 + k..1 + 2 * k]);
    let cap = cfg.rsu_available_hz();
    let rsu_cpu_hz = raw.0[1 + 2 * k..].iter().map(|&l| sigmoid(l) * cap).collect();
    Ok(SplitDecision {
        local_ratio: split[0],
        rsu_ratios: split[1..].to_vec(),
        bandwidth_ratios,
        rsu_cpu_hz,
    })
}

/// Projects every agent's action, then rescales compute requests
/// proportionally at any RSU whose summed requests exceed its capacity.
pub fn project_joint(raws: &[RawAction], cfg: &ScenarioConfig) -> Result<Vec<SplitDecision>> {
    let mut splits = raws
        .iter()
        .map(|r| project_action(r, cfg))
        .collect::<Result<Vec<_>>>()?;
    arbitrate_compute(&mut splits, cfg);
    Ok(splits)
}

pub fn arbitrate_compute(splits: &mut [SplitDecision], cfg: &ScenarioConfig) {
    let cap = cfg.rsu_available_hz();
    for k in 0..cfg.num_rsus {
        let requested: f64 = splits.iter().map(|s| s.rsu_cpu_hz[k]).sum();
        if requested > cap {
            let scale = cap / requested;
            for s in splits.iter_mut() {
                s.rsu_cpu_hz[k] *= scale;
            }
        }
    }
}

/// Per-slot snapshot of the simulated world.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub slot: usize,
    pub vehicles: Vec<VehicleState>,
    pub rsus: Vec<RsuState>,
    pub tasks: Vec<TaskSpec>,
    pub queues: QueueState,
    /// Little's-law delays estimated at the end of the previous slot.
    pub delays: Vec<QueueDelays>,
}

impl WorldState {
    pub fn dt_aggregate(&self) -> [f64; 3] {
        let q = &self.queues.rsu_backlog;
        let sum: f64 = q.iter().sum();
        let max = q.iter().copied().fold(0.0f64, f64::max);
        [sum, sum / q.len() as f64, max]
    }

    pub fn in_coverage(&self, cv: usize, rsu: usize, cfg: &ScenarioConfig) -> bool {
        link_distance(&self.vehicles[cv], &self.rsus[rsu], cfg) <= cfg.rsu_coverage_m
    }
}

pub fn make_observation(world: &WorldState, agent: usize, dt_enabled: bool) -> Observation {
    let v = &world.vehicles[agent];
    let t = &world.tasks[agent];
    let mut raw = vec![t.task_bits, t.instr_bits, v.cpu_hz, v.x_m, v.speed_mps, t.t_max_s];
    for r in &world.rsus {
        raw.extend([r.x_m, r.lateral_m, r.cpu_hz]);
    }
    raw.push(world.queues.local_backlog[agent]);
    raw.extend_from_slice(&world.queues.rsu_backlog);
    raw.push(world.queues.virtual_view(agent));
    if dt_enabled {
        raw.extend(world.dt_aggregate());
    } else {
        raw.extend([0.0; 3]);
    }
    Observation { raw }
}

/// Critic input: every agent's observation, concatenated in agent order.
pub fn global_state(observations: &[Observation]) -> Vec<f64> {
    observations.iter().flat_map(|o| o.raw.iter().copied()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub slot: usize,
    pub splits: Vec<SplitDecision>,
    pub rates: Vec<Vec<f64>>,
    pub outcomes: Vec<TaskOutcome>,
    pub objective: SlotObjective,
    pub drift_check: DriftCheck,
    pub e_total: f64,
    pub rsu_service_hz: Vec<f64>,
    pub local_backlog_after: Vec<f64>,
    pub rsu_backlog_after: Vec<f64>,
    pub virtual_after: f64,
}

impl SlotOutcome {
    pub fn total_backlog_after(&self) -> f64 {
        self.local_backlog_after.iter().sum::<f64>() + self.rsu_backlog_after.iter().sum::<f64>()
    }

    pub fn mean_latency(&self) -> f64 {
        self.outcomes.iter().map(|o| o.task_latency_s).sum::<f64>() / self.outcomes.len() as f64
    }

    pub fn deadline_misses(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.deadline_met).count()
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub outcome: SlotOutcome,
    /// Identical team reward for each agent.
    pub rewards: Vec<f64>,
    pub done: bool,
}

/// One episode-scoped environment instance. Not shared across threads;
/// run independent instances for parallel rollouts.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: ScenarioConfig,
    world: WorldState,
    rngs: Vec<ChaCha8Rng>,
    dt_enabled: bool,
    scales: Vec<f64>,
}

impl Env {
    pub fn new(cfg: ScenarioConfig, dt_enabled: bool) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let scales = ObservationLayout::new(&cfg).scales(&cfg.obs_scale);
        let (world, rngs) = Self::fresh_world(&cfg, seed);
        Ok(Self {
            cfg,
            world,
            rngs,
            dt_enabled,
            scales,
        })
    }

    fn fresh_world(cfg: &ScenarioConfig, seed: u64) -> (WorldState, Vec<ChaCha8Rng>) {
        let mut rngs: Vec<ChaCha8Rng> = (0..cfg.num_cvs).map(|i| vehicle_rng(seed, i)).collect();
        let vehicles: Vec<VehicleState> = rngs
            .iter_mut()
            .enumerate()
            .map(|(i, rng)| spawn_vehicle(i, cfg, rng))
            .collect();
        let tasks = vehicles
            .iter()
            .zip(rngs.iter_mut())
            .map(|(v, rng)| spawn_task(v, cfg, rng))
            .collect();
        let world = WorldState {
            slot: 0,
            vehicles,
            rsus: place_rsus(cfg),
            tasks,
            queues: QueueState::new(cfg.num_cvs, cfg.num_rsus, cfg.window_m),
            delays: vec![QueueDelays::zero(cfg.num_rsus); cfg.num_cvs],
        };
        (world, rngs)
    }

    /// Starts a new episode whose randomness derives entirely from `seed`.
    pub fn reset(&mut self, seed: u64) {
        let (world, rngs) = Self::fresh_world(&self.cfg, seed);
        self.world = world;
        self.rngs = rngs;
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    /// Direct access for tests and experiments that seed initial backlogs.
    pub fn world_mut(&mut self) -> &mut WorldState {
        &mut self.world
    }

    pub fn dt_enabled(&self) -> bool {
        self.dt_enabled
    }

    pub fn num_agents(&self) -> usize {
        self.cfg.num_cvs
    }

    pub fn obs_dim(&self) -> usize {
        ObservationLayout::new(&self.cfg).dim()
    }

    pub fn action_dim(&self) -> usize {
        action_dim(self.cfg.num_rsus)
    }

    pub fn observation_scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn observe(&self, agent: usize) -> Observation {
        make_observation(&self.world, agent, self.dt_enabled)
    }

    pub fn observe_all(&self) -> Vec<Observation> {
        (0..self.cfg.num_cvs).map(|i| self.observe(i)).collect()
    }

    pub fn is_done(&self) -> bool {
        self.world.slot >= self.cfg.episode_slots
    }

    pub fn step(&mut self, raws: &[RawAction]) -> Result<StepResult> {
        if raws.len() != self.cfg.num_cvs {
            return Err(Error::Dimension {
                expected: self.cfg.num_cvs,
                actual: raws.len(),
                context: "joint action",
            });
        }
        let splits = project_joint(raws, &self.cfg)?;
        self.step_projected(splits)
    }

    /// Steps with already-feasible decisions (shares after arbitration).
    pub fn step_projected(&mut self, splits: Vec<SplitDecision>) -> Result<StepResult> {
        let cfg = &self.cfg;
        let n = cfg.num_cvs;
        let k_count = cfg.num_rsus;
        if splits.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: splits.len(),
                context: "joint split",
            });
        }
        for s in &splits {
            s.check_feasible(cfg, 1e-9).map_err(Error::Invariant)?;
        }
        let world = &mut self.world;

        let mut rates = vec![vec![0.0; k_count]; n];
        for (i, rng) in self.rngs.iter_mut().enumerate() {
            for k in 0..k_count {
                let draw = draw_channel(&world.vehicles[i], &world.rsus[k], cfg, rng);
                let covered =
                    link_distance(&world.vehicles[i], &world.rsus[k], cfg) <= cfg.rsu_coverage_m;
                rates[i][k] = if covered {
                    v2i_rate(splits[i].bandwidth_ratios[k], &draw, cfg)
                } else {
                    0.0
                };
            }
        }

        let outcomes: Vec<TaskOutcome> = (0..n)
            .map(|i| {
                let mut o =
                    evaluate_task(&splits[i], &world.tasks[i], &rates[i], &world.delays[i], cfg);
                o.cap_infeasible(INFEASIBLE_LATENCY_FACTOR * world.tasks[i].t_max_s, cfg.tx_power_w);
                o
            })
            .collect();

        let local_arrivals: Vec<f64> = outcomes.iter().map(|o| o.local_arrival_cycles).collect();
        let local_cpu: Vec<f64> = world.vehicles.iter().map(|v| v.cpu_hz).collect();
        let rsu_arrivals: Vec<Vec<f64>> = outcomes.iter().map(|o| o.rsu_arrival_cycles.clone()).collect();
        let rsu_service_hz: Vec<f64> = (0..k_count)
            .map(|k| splits.iter().map(|s| s.rsu_cpu_hz[k]).sum())
            .collect();
        let e_total: f64 = outcomes.iter().map(|o| o.task_energy_j).sum();
        let tau = cfg.slot_duration_s;

        let inputs = DriftInputs {
            local_arrivals: local_arrivals.clone(),
            local_service: local_cpu.iter().map(|c| c * tau).collect(),
            rsu_arrivals: (0..k_count)
                .map(|k| rsu_arrivals.iter().map(|a| a[k]).sum())
                .collect(),
            rsu_service: rsu_service_hz.iter().map(|f| f * tau).collect(),
            e_total,
        };
        let objective = slot_objective(&world.queues, &outcomes, &inputs, cfg);

        let before = world.queues.clone();
        world.queues.step(&QueueUpdate {
            local_arrivals: &local_arrivals,
            local_cpu_hz: &local_cpu,
            rsu_arrivals: &rsu_arrivals,
            rsu_service_hz: &rsu_service_hz,
            e_total,
            e_max: cfg.energy_budget_w,
            slot_s: tau,
        });
        let drift_check = check_drift(&before, &world.queues, &objective, cfg);

        for i in 0..n {
            world.delays[i] = QueueDelays {
                local_s: world.queues.local_delay(i),
                rsu_s: (0..k_count).map(|k| world.queues.rsu_delay(i, k)).collect(),
            };
        }

        let outcome = SlotOutcome {
            slot: world.slot,
            splits,
            rates,
            outcomes,
            drift_check,
            e_total,
            rsu_service_hz,
            local_backlog_after: world.queues.local_backlog.clone(),
            rsu_backlog_after: world.queues.rsu_backlog.clone(),
            virtual_after: world.queues.virtual_energy,
            objective,
        };
        let rewards = vec![outcome.objective.reward; n];

        for (i, rng) in self.rngs.iter_mut().enumerate() {
            world.vehicles[i] = advance_mobility(&world.vehicles[i], cfg);
            world.tasks[i] = spawn_task(&world.vehicles[i], cfg, rng);
        }
        world.slot += 1;

        Ok(StepResult {
            outcome,
            rewards,
            done: world.slot >= cfg.episode_slots,
        })
    }
}
