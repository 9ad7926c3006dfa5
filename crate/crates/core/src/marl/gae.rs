use crate::error::{Error, Result};

/// Generalised advantage estimation.
///
/// `values` carries one extra trailing entry, the bootstrap value after the
/// last step. `dones[t]` cuts the recursion and the bootstrap at step t.
/// Returns `(advantages, returns)` with `returns[t] = advantages[t] + values[t]`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(Error::Length(format!(
            "gae: {n} rewards, {} values (need {}), {} dones",
            values.len(),
            n + 1,
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * mask - values[t];
        running = delta + gamma * lambda * mask * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_terminal_step() {
        let (a, r) = compute_gae(&[2.0], &[0.5, 9.0], &[true], 0.99, 0.95).unwrap();
        assert_eq!(a, vec![1.5]);
        assert_eq!(r, vec![2.0]);
    }

    #[test]
    fn lambda_zero_is_td_error() {
        let rewards = [1.0, -2.0, 0.5];
        let values = [0.3, 0.1, -0.4, 0.7];
        let (a, _) = compute_gae(&rewards, &values, &[false; 3], 0.9, 0.0).unwrap();
        for t in 0..3 {
            let delta = rewards[t] + 0.9 * values[t + 1] - values[t];
            assert!((a[t] - delta).abs() < 1e-15);
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(compute_gae(&[1.0], &[0.0], &[true], 0.99, 0.95).is_err());
    }
}
