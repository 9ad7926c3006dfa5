use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Episodes averaged for the steady value.
pub const STEADY_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyMetrics {
    /// Mean over the last 50 episodes.
    pub steady: f64,
    /// Population standard deviation over |mean| on the same window.
    pub cv: f64,
    /// First episode (1-based) within 5% of the steady value.
    pub convergence_episode: usize,
}

/// Summaries of a per-episode reward log.
///
/// "Within 5%" means `value >= steady - 0.05·|steady|`, which coincides with
/// reaching 95% of the steady value when it is positive and stays meaningful
/// for the negative rewards this simulator produces.
pub fn steady_metrics(log: &[f64]) -> Result<SteadyMetrics> {
    if log.len() < STEADY_WINDOW {
        return Err(Error::ShortLog {
            needed: STEADY_WINDOW,
            actual: log.len(),
        });
    }
    if log.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training log"));
    }
    let tail = &log[log.len() - STEADY_WINDOW..];
    let n = STEADY_WINDOW as f64;
    let steady = tail.iter().sum::<f64>() / n;
    let var = tail.iter().map(|v| (v - steady) * (v - steady)).sum::<f64>() / n;
    let cv = if steady == 0.0 { 0.0 } else { var.sqrt() / steady.abs() };
    let threshold = steady - 0.05 * steady.abs();
    let convergence_episode = log
        .iter()
        .position(|&v| v >= threshold)
        .map(|i| i + 1)
        .expect("the tail mean is attained by some tail element");
    Ok(SteadyMetrics {
        steady,
        cv,
        convergence_episode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_log() {
        let m = steady_metrics(&[3.0; 80]).unwrap();
        assert_eq!(m, SteadyMetrics { steady: 3.0, cv: 0.0, convergence_episode: 1 });
    }

    #[test]
    fn short_log() {
        assert!(matches!(steady_metrics(&[1.0; 49]), Err(Error::ShortLog { needed: 50, actual: 49 })));
    }
}
