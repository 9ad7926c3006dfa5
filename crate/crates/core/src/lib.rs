//! Seeded simulator for twin-assisted ISAC vehicular task offloading, with a
//! Lyapunov drift-plus-penalty objective and a multi-agent PPO trainer.

pub mod baselines;
pub mod compute;
pub mod env;
pub mod error;
pub mod harness;
pub mod lyapunov;
pub mod marl;
pub mod metrics;
pub mod queues;
pub mod scenario;

pub use error::{Error, Result};
