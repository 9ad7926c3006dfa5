//! Slot cost, the quadratic Lyapunov function, the one-slot drift bound and
//! the drift-plus-penalty objective that the agents are rewarded on.
//!
//! Queue backlogs enter every quadratic term in units of
//! `cfg.queue_unit_cycles`; the energy virtual queue enters in joules. The
//! virtual queue is counted once per vehicle, matching its per-vehicle
//! replicas.

use serde::{Deserialize, Serialize};

use crate::compute::TaskOutcome;
use crate::queues::QueueState;
use crate::scenario::ScenarioConfig;

/// `Σ_i α·T_i + (1-α)·E_i`.
pub fn slot_cost(outcomes: &[TaskOutcome], cfg: &ScenarioConfig) -> f64 {
    outcomes
        .iter()
        .map(|o| cfg.alpha * o.task_latency_s + (1.0 - cfg.alpha) * o.task_energy_j)
        .sum()
}

pub fn lyapunov_value(z: &QueueState, cfg: &ScenarioConfig) -> f64 {
    let u = cfg.queue_unit_cycles;
    let sq = |q: &f64| (q / u) * (q / u);
    let local: f64 = z.local_backlog.iter().map(sq).sum();
    let rsu: f64 = z.rsu_backlog.iter().map(sq).sum();
    let virt = z.num_cvs() as f64 * z.virtual_energy * z.virtual_energy;
    0.5 * (local + rsu + virt)
}

/// Arrivals and services realised in one slot, in cycles and joules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftInputs {
    pub local_arrivals: Vec<f64>,
    /// `C_i·τ` per vehicle.
    pub local_service: Vec<f64>,
    /// `Σ_i λ_{i,k}` per RSU.
    pub rsu_arrivals: Vec<f64>,
    /// `F_k·τ` per RSU.
    pub rsu_service: Vec<f64>,
    pub e_total: f64,
}

/// Queue-weighted drift terms and the second-moment constant `B = B1 + B2 + B3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftBound {
    pub local_terms: Vec<f64>,
    pub rsu_terms: Vec<f64>,
    pub virtual_terms: Vec<f64>,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
}

impl DriftBound {
    pub fn drift_sum(&self) -> f64 {
        self.local_terms.iter().sum::<f64>()
            + self.rsu_terms.iter().sum::<f64>()
            + self.virtual_terms.iter().sum::<f64>()
    }

    pub fn bound_b(&self) -> f64 {
        self.b1 + self.b2 + self.b3
    }
}

pub fn drift_bound_terms(z: &QueueState, inputs: &DriftInputs, cfg: &ScenarioConfig) -> DriftBound {
    let u = cfg.queue_unit_cycles;
    let mut b1 = 0.0;
    let local_terms = z
        .local_backlog
        .iter()
        .zip(&inputs.local_arrivals)
        .zip(&inputs.local_service)
        .map(|((q, a), s)| {
            let d = (a - s) / u;
            b1 += 0.5 * d * d;
            (q / u) * d
        })
        .collect();
    let mut b2 = 0.0;
    let rsu_terms = z
        .rsu_backlog
        .iter()
        .zip(&inputs.rsu_arrivals)
        .zip(&inputs.rsu_service)
        .map(|((q, a), s)| {
            let d = (a - s) / u;
            b2 += 0.5 * d * d;
            (q / u) * d
        })
        .collect();
    let excess = inputs.e_total - cfg.energy_budget_w;
    let n = z.num_cvs();
    let virtual_terms = vec![z.virtual_energy * excess; n];
    let b3 = 0.5 * n as f64 * excess * excess;
    DriftBound {
        local_terms,
        rsu_terms,
        virtual_terms,
        b1,
        b2,
        b3,
    }
}

/// `V·C(t) + drift terms`; the constant B is left out.
pub fn p2_objective(cost: f64, drift: &DriftBound, cfg: &ScenarioConfig) -> f64 {
    cfg.lyapunov_v * cost + drift.drift_sum()
}

pub fn deadline_penalty(outcomes: &[TaskOutcome], cfg: &ScenarioConfig) -> f64 {
    cfg.deadline_penalty
        * outcomes
            .iter()
            .map(|o| (o.task_latency_s - o.t_max_s).max(0.0))
            .sum::<f64>()
}

/// Team reward: negated P2 value minus the soft deadline penalty.
pub fn slot_reward(p2_value: f64, penalty: f64) -> f64 {
    -p2_value - penalty
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotObjective {
    pub cost: f64,
    pub local_drift_terms: Vec<f64>,
    pub rsu_drift_terms: Vec<f64>,
    pub virtual_terms: Vec<f64>,
    pub penalty_weighted_cost: f64,
    pub p2_value: f64,
    pub deadline_penalty: f64,
    pub reward: f64,
    pub lyapunov_value: f64,
    pub bound_constant_b: f64,
}

impl SlotObjective {
    pub fn drift_sum(&self) -> f64 {
        self.local_drift_terms.iter().sum::<f64>()
            + self.rsu_drift_terms.iter().sum::<f64>()
            + self.virtual_terms.iter().sum::<f64>()
    }
}

pub fn slot_objective(
    z: &QueueState,
    outcomes: &[TaskOutcome],
    inputs: &DriftInputs,
    cfg: &ScenarioConfig,
) -> SlotObjective {
    let cost = slot_cost(outcomes, cfg);
    let drift = drift_bound_terms(z, inputs, cfg);
    let p2_value = p2_objective(cost, &drift, cfg);
    let penalty = deadline_penalty(outcomes, cfg);
    SlotObjective {
        cost,
        penalty_weighted_cost: cfg.lyapunov_v * cost,
        p2_value,
        deadline_penalty: penalty,
        reward: slot_reward(p2_value, penalty),
        lyapunov_value: lyapunov_value(z, cfg),
        bound_constant_b: drift.bound_b(),
        local_drift_terms: drift.local_terms,
        rsu_drift_terms: drift.rsu_terms,
        virtual_terms: drift.virtual_terms,
    }
}

/// Realised one-slot drift against its upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftCheck {
    pub realized: f64,
    pub bound: f64,
    pub slack: f64,
}

impl DriftCheck {
    pub fn holds(&self) -> bool {
        self.realized <= self.bound + self.slack
    }
}

/// Relative floating-point slack applied to the drift comparison.
pub const DRIFT_SLACK: f64 = 1e-9;

/// Compares `L(z') - L(z)` with `drift terms + B` for one slot.
pub fn check_drift(
    before: &QueueState,
    after: &QueueState,
    objective: &SlotObjective,
    cfg: &ScenarioConfig,
) -> DriftCheck {
    let l0 = objective.lyapunov_value;
    let l1 = lyapunov_value(after, cfg);
    debug_assert_eq!(l0, lyapunov_value(before, cfg));
    let bound = objective.drift_sum() + objective.bound_constant_b;
    let magnitude = 1.0 + l0 + l1 + objective.bound_constant_b;
    DriftCheck {
        realized: l1 - l0,
        bound,
        slack: DRIFT_SLACK * magnitude,
    }
}

/// Checks `(1/T)·Σ E(t) - E^max <= V(T)/T` for a trajectory started at `V(0) = 0`.
pub fn energy_chain_holds(e_totals: &[f64], e_max: f64, v_final: f64) -> bool {
    if e_totals.is_empty() {
        return v_final == 0.0;
    }
    let t = e_totals.len() as f64;
    let lhs = e_totals.iter().sum::<f64>() / t - e_max;
    let rhs = v_final / t;
    let scale = 1.0 + e_max + e_totals.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    lhs <= rhs + DRIFT_SLACK * scale
}
