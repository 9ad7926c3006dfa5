use serde::{Deserialize, Serialize};

use crate::env::SlotOutcome;

/// Per-episode averages over slots, in SI units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub slots: usize,
    pub mean_reward: f64,
    pub mean_cost: f64,
    pub mean_delay: f64,
    pub mean_energy: f64,
    pub mean_backlog: f64,
    pub mean_virtual_queue: f64,
    pub deadline_miss_rate: f64,
    pub mean_p2: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeAccumulator {
    slots: usize,
    agents: usize,
    reward: f64,
    cost: f64,
    delay: f64,
    energy: f64,
    backlog: f64,
    virtual_queue: f64,
    misses: usize,
    p2: f64,
}

impl EpisodeAccumulator {
    pub fn push(&mut self, slot: &SlotOutcome) {
        let n = slot.outcomes.len();
        self.slots += 1;
        self.agents += n;
        self.reward += slot.objective.reward;
        self.cost += slot.objective.cost;
        self.delay += slot.mean_latency();
        self.energy += slot.e_total;
        self.backlog += slot.total_backlog_after();
        self.virtual_queue += slot.virtual_after;
        self.misses += slot.deadline_misses();
        self.p2 += slot.objective.p2_value;
    }

    pub fn finish(&self) -> EpisodeStats {
        let t = self.slots.max(1) as f64;
        EpisodeStats {
            slots: self.slots,
            mean_reward: self.reward / t,
            mean_cost: self.cost / t,
            mean_delay: self.delay / t,
            mean_energy: self.energy / t,
            mean_backlog: self.backlog / t,
            mean_virtual_queue: self.virtual_queue / t,
            deadline_miss_rate: self.misses as f64 / self.agents.max(1) as f64,
            mean_p2: self.p2 / t,
        }
    }
}
