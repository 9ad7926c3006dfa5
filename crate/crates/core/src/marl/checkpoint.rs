use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{param_count, Mlp};
use super::trainer::{TrainedPolicy, Trainer};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Textual (JSON) checkpoint: parameter blocks with their shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub num_agents: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub dt_enabled: bool,
    pub policy: TrainedPolicy,
    pub critic: Mlp,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer) -> Self {
        let env = trainer.env();
        Self {
            version: CHECKPOINT_VERSION,
            num_agents: env.num_agents(),
            obs_dim: env.obs_dim(),
            act_dim: env.action_dim(),
            dt_enabled: env.dt_enabled(),
            policy: trainer.policy(),
            critic: trainer.critic().clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let expected_actors = if self.policy.shared { 1 } else { self.num_agents };
        if self.policy.actors.len() != expected_actors {
            return Err(Error::Checkpoint(format!(
                "{} actors stored, {expected_actors} expected",
                self.policy.actors.len()
            )));
        }
        if self.policy.obs_scales.len() != self.obs_dim {
            return Err(Error::Checkpoint("observation scale length mismatch".into()));
        }
        let check = |m: &Mlp, input: usize, output: usize, what: &str| {
            let w = m.widths();
            if w.first() != Some(&input) || w.last() != Some(&output) || m.params().len() != param_count(w) {
                return Err(Error::Checkpoint(format!("{what} shape mismatch: widths {w:?}")));
            }
            if m.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Checkpoint(format!("{what} holds non-finite parameters")));
            }
            Ok(())
        };
        for a in &self.policy.actors {
            check(&a.mean, self.obs_dim, self.act_dim, "actor")?;
            if a.log_std.len() != self.act_dim {
                return Err(Error::Checkpoint("log-std length mismatch".into()));
            }
        }
        check(&self.critic, self.obs_dim * self.num_agents, 1, "critic")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Self = serde_json::from_str(&text)?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}
