//! Closed-form latency and energy for one vehicle's task in one slot.
//!
//! All quantities are SI: bits, Hz (cycles/s), seconds, joules. A link or
//! compute share that cannot carry its assigned work yields `f64::INFINITY`
//! time rather than an error; the environment decides how to penalise it.

use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioConfig;

/// One generated task: `(G^TasD, G^InsD, C_CV, I^task, I^co-tra, T^max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_bits: f64,
    pub instr_bits: f64,
    pub cpu_hz: f64,
    pub intensity: f64,
    pub cotra_intensity: f64,
    pub t_max_s: f64,
}

/// A feasible per-vehicle decision after projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDecision {
    pub local_ratio: f64,
    pub rsu_ratios: Vec<f64>,
    pub bandwidth_ratios: Vec<f64>,
    pub rsu_cpu_hz: Vec<f64>,
}

impl SplitDecision {
    pub fn all_local(num_rsus: usize) -> Self {
        Self {
            local_ratio: 1.0,
            rsu_ratios: vec![0.0; num_rsus],
            bandwidth_ratios: vec![0.0; num_rsus],
            rsu_cpu_hz: vec![0.0; num_rsus],
        }
    }

    pub fn num_rsus(&self) -> usize {
        self.rsu_ratios.len()
    }

    /// Checks the per-vehicle constraints: split sums to one, bandwidth
    /// shares sum to at most one, each compute share within the RSU limit.
    pub fn check_feasible(&self, cfg: &ScenarioConfig, tol: f64) -> Result<(), String> {
        let in_unit = |v: f64| (-tol..=1.0 + tol).contains(&v);
        if !in_unit(self.local_ratio) || !self.rsu_ratios.iter().all(|&r| in_unit(r)) {
            return Err("split ratio outside [0,1]".into());
        }
        let split_sum = self.local_ratio + self.rsu_ratios.iter().sum::<f64>();
        if (split_sum - 1.0).abs() > tol {
            return Err(format!("split ratios sum to {split_sum}"));
        }
        if !self.bandwidth_ratios.iter().all(|&b| in_unit(b)) {
            return Err("bandwidth ratio outside [0,1]".into());
        }
        let bw_sum: f64 = self.bandwidth_ratios.iter().sum();
        if bw_sum > 1.0 + tol {
            return Err(format!("bandwidth ratios sum to {bw_sum}"));
        }
        let cap = cfg.rsu_available_hz();
        if self
            .rsu_cpu_hz
            .iter()
            .any(|&f| f < 0.0 || f > cap * (1.0 + tol))
        {
            return Err("rsu compute share outside [0, F^max - C^twin]".into());
        }
        Ok(())
    }
}

/// Per-branch queueing delays estimated from the previous slots.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QueueDelays {
    pub local_s: f64,
    pub rsu_s: Vec<f64>,
}

impl QueueDelays {
    pub fn zero(num_rsus: usize) -> Self {
        Self {
            local_s: 0.0,
            rsu_s: vec![0.0; num_rsus],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub latency_local_s: f64,
    pub latency_rsu_s: Vec<f64>,
    pub upload_s: Vec<f64>,
    pub compute_rsu_s: Vec<f64>,
    /// 1 when the InstrT mode carries the branch, 0 for DataT.
    pub mode_selector: Vec<u8>,
    pub task_latency_s: f64,
    pub energy_local_j: f64,
    pub energy_upload_j: Vec<f64>,
    pub energy_cotra_j: Vec<f64>,
    pub energy_compute_j: Vec<f64>,
    pub task_energy_j: f64,
    pub deadline_met: bool,
    pub t_max_s: f64,
    /// Some branch with positive share had no usable link or compute share.
    pub infeasible: bool,
    /// Cycles added to the local queue.
    pub local_arrival_cycles: f64,
    /// Cycles added to each RSU queue, including coordinate-transform work under InstrT.
    pub rsu_arrival_cycles: Vec<f64>,
}

fn div_or_inf(work: f64, rate: f64) -> f64 {
    if work <= 0.0 {
        0.0
    } else if rate <= 0.0 {
        f64::INFINITY
    } else {
        work / rate
    }
}

pub fn local_latency(local_ratio: f64, task: &TaskSpec) -> f64 {
    div_or_inf(local_ratio * task.task_bits * task.intensity, task.cpu_hz)
}

pub fn local_energy(latency_s: f64, cpu_hz: f64, cfg: &ScenarioConfig) -> f64 {
    cfg.kappa_cv * latency_s * cpu_hz.powi(3)
}

/// Raw-data upload over the link: `(time, energy)`.
pub fn datat_upload(ratio: f64, task: &TaskSpec, rate: f64, cfg: &ScenarioConfig) -> (f64, f64) {
    let time = div_or_inf(ratio * task.task_bits, rate);
    (time, time * cfg.tx_power_w)
}

/// Transmit time of this branch's instruction share.
pub fn instr_upload(instr_bits: f64, rate: f64) -> f64 {
    div_or_inf(instr_bits, rate)
}

/// Instruction bits attributed to one RSU, proportional to its share of the offloaded work.
pub fn instr_share(task: &TaskSpec, ratio: f64, offload_total: f64) -> f64 {
    if offload_total <= 0.0 || ratio <= 0.0 {
        0.0
    } else {
        task.instr_bits * ratio / offload_total
    }
}

fn rsu_work(cycles: f64, rsu_cpu_hz: f64, cfg: &ScenarioConfig) -> (f64, f64) {
    let time = div_or_inf(cycles, rsu_cpu_hz);
    let energy = if time.is_finite() {
        cfg.kappa_rsu * time * rsu_cpu_hz.powi(3)
    } else {
        0.0
    };
    (time, energy)
}

/// Coordinate transformation at the RSU for the InstrT mode: `(time, energy)`.
pub fn cotra(ratio: f64, task: &TaskSpec, rsu_cpu_hz: f64, cfg: &ScenarioConfig) -> (f64, f64) {
    rsu_work(ratio * task.task_bits * task.cotra_intensity, rsu_cpu_hz, cfg)
}

/// Picks the faster upload mode. Ties go to DataT.
pub fn select_mode(datat_s: f64, instr_s: f64) -> (f64, u8) {
    if instr_s < datat_s {
        (instr_s, 1)
    } else {
        (datat_s, 0)
    }
}

/// Task execution on the RSU: `(time, energy)`.
pub fn rsu_compute(ratio: f64, task: &TaskSpec, rsu_cpu_hz: f64, cfg: &ScenarioConfig) -> (f64, f64) {
    rsu_work(ratio * task.task_bits * task.intensity, rsu_cpu_hz, cfg)
}

/// Composes every latency and energy term for one vehicle.
///
/// `rates[k]` is the achieved V2I rate to RSU k for this slot. Branches with
/// zero share contribute neither latency nor energy.
pub fn evaluate_task(
    split: &SplitDecision,
    task: &TaskSpec,
    rates: &[f64],
    delays: &QueueDelays,
    cfg: &ScenarioConfig,
) -> TaskOutcome {
    let k_count = split.num_rsus();
    debug_assert_eq!(rates.len(), k_count);
    debug_assert_eq!(delays.rsu_s.len(), k_count);

    let mut out = TaskOutcome {
        latency_local_s: 0.0,
        latency_rsu_s: vec![0.0; k_count],
        upload_s: vec![0.0; k_count],
        compute_rsu_s: vec![0.0; k_count],
        mode_selector: vec![0; k_count],
        task_latency_s: 0.0,
        energy_local_j: 0.0,
        energy_upload_j: vec![0.0; k_count],
        energy_cotra_j: vec![0.0; k_count],
        energy_compute_j: vec![0.0; k_count],
        task_energy_j: 0.0,
        deadline_met: true,
        t_max_s: task.t_max_s,
        infeasible: false,
        local_arrival_cycles: split.local_ratio * task.task_bits * task.intensity,
        rsu_arrival_cycles: vec![0.0; k_count],
    };

    let mut latency = 0.0f64;
    let mut energy = 0.0f64;

    if split.local_ratio > 0.0 {
        let d_loc = local_latency(split.local_ratio, task);
        out.energy_local_j = local_energy(d_loc, task.cpu_hz, cfg);
        out.latency_local_s = d_loc + delays.local_s;
        latency = latency.max(out.latency_local_s);
        energy += out.energy_local_j;
    }

    let offload_total: f64 = split.rsu_ratios.iter().sum();
    for k in 0..k_count {
        let ratio = split.rsu_ratios[k];
        if ratio <= 0.0 {
            continue;
        }
        let f = split.rsu_cpu_hz[k];
        let (datat_s, datat_j) = datat_upload(ratio, task, rates[k], cfg);
        let (cotra_s, cotra_j) = cotra(ratio, task, f, cfg);
        let instr_s = if cfg.instr_includes_transmit {
            cotra_s + instr_upload(instr_share(task, ratio, offload_total), rates[k])
        } else {
            cotra_s
        };
        let (upload_s, eta) = select_mode(datat_s, instr_s);
        let (compt_s, compt_j) = rsu_compute(ratio, task, f, cfg);

        out.mode_selector[k] = eta;
        out.upload_s[k] = upload_s;
        out.compute_rsu_s[k] = compt_s;
        out.energy_compute_j[k] = compt_j;
        if eta == 1 {
            out.energy_cotra_j[k] = cotra_j;
        } else {
            out.energy_upload_j[k] = datat_j;
        }
        out.latency_rsu_s[k] = upload_s + compt_s + delays.rsu_s[k];
        out.rsu_arrival_cycles[k] =
            ratio * task.task_bits * (f64::from(eta) * task.cotra_intensity + task.intensity);
        if !out.latency_rsu_s[k].is_finite() {
            out.infeasible = true;
        }
        latency = latency.max(out.latency_rsu_s[k]);
        energy += out.energy_upload_j[k] + out.energy_cotra_j[k] + out.energy_compute_j[k];
    }
    if !out.latency_local_s.is_finite() {
        out.infeasible = true;
    }

    out.task_latency_s = latency;
    out.task_energy_j = energy;
    out.deadline_met = latency <= task.t_max_s;
    out
}

impl TaskOutcome {
    /// Replaces unbounded terms of an infeasible outcome: latency is capped at
    /// `cap_s` and a dead link is charged transmit power for that long.
    pub fn cap_infeasible(&mut self, cap_s: f64, tx_power_w: f64) {
        if !self.infeasible {
            return;
        }
        let cap = |v: &mut f64| {
            if !v.is_finite() || *v > cap_s {
                *v = cap_s;
            }
        };
        cap(&mut self.latency_local_s);
        for k in 0..self.latency_rsu_s.len() {
            cap(&mut self.latency_rsu_s[k]);
            cap(&mut self.upload_s[k]);
            cap(&mut self.compute_rsu_s[k]);
            if !self.energy_upload_j[k].is_finite() {
                self.energy_upload_j[k] = cap_s * tx_power_w;
            }
        }
        cap(&mut self.task_latency_s);
        self.task_energy_j = self.energy_local_j
            + self
                .energy_upload_j
                .iter()
                .chain(&self.energy_cotra_j)
                .chain(&self.energy_compute_j)
                .sum::<f64>();
        self.deadline_met = false;
    }
}
