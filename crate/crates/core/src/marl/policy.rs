use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{ForwardCache, Mlp};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian actor: an MLP mean head and a state-independent log-std.
///
/// Acting needs only the agent's own observation; the critic is a separate
/// network the actor never touches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
}

pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

/// Gradient of the log density with respect to the mean and the log-std.
pub fn gaussian_log_prob_grad(mean: &[f64], log_std: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut d_mean = Vec::with_capacity(mean.len());
    let mut d_log_std = Vec::with_capacity(mean.len());
    for ((m, ls), a) in mean.iter().zip(log_std).zip(action) {
        let var = (2.0 * ls).exp();
        let diff = a - m;
        d_mean.push(diff / var);
        d_log_std.push(diff * diff / var - 1.0);
    }
    (d_mean, d_log_std)
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: [usize; 2],
        act_dim: usize,
        log_std_init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            mean: Mlp::new(&[obs_dim, hidden[0], hidden[1], act_dim], 0.01, rng)?,
            log_std: vec![log_std_init; act_dim],
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        self.mean.forward(obs)
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let mean = self.mean_action(obs)?;
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lp = gaussian_log_prob(&mean, &self.log_std, &action);
        Ok((action, lp))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let mean = self.mean_action(obs)?;
        Ok(gaussian_log_prob(&mean, &self.log_std, action))
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 * (1.0 + LN_2PI)).sum()
    }

    pub fn num_params(&self) -> usize {
        self.mean.num_params() + self.log_std.len()
    }

    /// Mean-head parameters followed by the log-std vector.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.mean.params().to_vec();
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                actual: p.len(),
                context: "policy parameters",
            });
        }
        let n = self.mean.num_params();
        self.mean.params_mut().copy_from_slice(&p[..n]);
        self.log_std.copy_from_slice(&p[n..]);
        Ok(())
    }

    /// Forward pass that keeps activations for [`Self::accumulate_log_prob_grad`].
    pub fn forward_cached(&self, obs: &[f64]) -> Result<ForwardCache> {
        self.mean.forward_cached(obs)
    }

    /// Adds `scale * d log pi(a|s) / d theta` into `grad` (flat layout) and
    /// returns the log-probability.
    pub fn accumulate_log_prob_grad(
        &self,
        cache: &ForwardCache,
        action: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let mean = cache.output();
        let lp = gaussian_log_prob(mean, &self.log_std, action);
        let (d_mean, d_ls) = gaussian_log_prob_grad(mean, &self.log_std, action);
        let n = self.mean.num_params();
        let upstream: Vec<f64> = d_mean.iter().map(|d| d * scale).collect();
        self.mean.backward(cache, &upstream, &mut grad[..n]);
        for (g, d) in grad[n..].iter_mut().zip(d_ls) {
            *g += scale * d;
        }
        lp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy(log_std: f64) -> GaussianPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        GaussianPolicy::new(4, [8, 8], 3, log_std, &mut rng).unwrap()
    }

    #[test]
    fn log_prob_at_mean() {
        let p = policy(-0.5);
        let obs = [0.1, 0.2, -0.3, 0.4];
        let mean = p.mean_action(&obs).unwrap();
        let expected = -(-0.5 * 3.0) - 1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((p.log_prob(&obs, &mean).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn tiny_std_returns_mean() {
        let p = policy(-60.0);
        let obs = [0.5, -0.5, 0.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, lp) = p.sample(&obs, &mut rng).unwrap();
        let mean = p.mean_action(&obs).unwrap();
        for (x, m) in a.iter().zip(&mean) {
            assert!((x - m).abs() < 1e-20);
        }
        assert!(lp.is_finite());
    }

    #[test]
    fn empirical_mean_matches_head() {
        let p = policy(0.0);
        let obs = [0.3, 0.1, 0.2, -0.7];
        let mean = p.mean_action(&obs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let (a, _) = p.sample(&obs, &mut rng).unwrap();
            for (s, x) in acc.iter_mut().zip(a) {
                *s += x;
            }
        }
        let bound = 3.0 / (n as f64).sqrt();
        for (s, m) in acc.iter().zip(&mean) {
            assert!((s / n as f64 - m).abs() < bound);
        }
    }

    #[test]
    fn recomputed_log_prob_gives_unit_ratio() {
        let p = policy(-0.5);
        let obs = [1.0, 2.0, 3.0, 4.0];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (a, lp) = p.sample(&obs, &mut rng).unwrap();
        assert_eq!((p.log_prob(&obs, &a).unwrap() - lp).exp(), 1.0);
    }

    #[test]
    fn non_finite_observation_rejected() {
        let p = policy(-0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(p.sample(&[f64::NAN, 0.0, 0.0, 0.0], &mut rng).is_err());
    }
}
