/// Per-sample clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to the new log-prob.
/// Zero whenever the clipped branch is the active minimum.
pub fn clipped_surrogate_grad(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    if ratio * advantage <= clipped * advantage {
        ratio * advantage
    } else {
        0.0
    }
}

/// Mean clipped surrogate over a batch (the quantity PPO maximises).
pub fn ppo_surrogate(log_probs_new: &[f64], log_probs_old: &[f64], advantages: &[f64], clip_eps: f64) -> f64 {
    let n = advantages.len() as f64;
    log_probs_new
        .iter()
        .zip(log_probs_old)
        .zip(advantages)
        .map(|((new, old), a)| clipped_surrogate((new - old).exp(), *a, clip_eps))
        .sum::<f64>()
        / n
}

/// Actor loss: negated surrogate minus the entropy bonus.
pub fn ppo_actor_loss(
    log_probs_new: &[f64],
    log_probs_old: &[f64],
    advantages: &[f64],
    clip_eps: f64,
    entropy: f64,
    entropy_coef: f64,
) -> f64 {
    -ppo_surrogate(log_probs_new, log_probs_old, advantages, clip_eps) - entropy_coef * entropy
}

pub fn critic_loss(values_pred: &[f64], returns: &[f64]) -> f64 {
    let n = values_pred.len() as f64;
    values_pred
        .iter()
        .zip(returns)
        .map(|(v, r)| (v - r) * (v - r))
        .sum::<f64>()
        / n
}

pub fn critic_loss_grad(values_pred: &[f64], returns: &[f64]) -> Vec<f64> {
    let n = values_pred.len() as f64;
    values_pred.iter().zip(returns).map(|(v, r)| 2.0 * (v - r) / n).collect()
}

/// Zero mean, unit variance; left centred only when the spread vanishes.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    adv.iter()
        .map(|a| if std > 1e-12 { (a - mean) / (std + 1e-8) } else { a - mean })
        .collect()
}
