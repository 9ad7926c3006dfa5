//! MAPPO building blocks and trainer behaviour.

mod common;

use common::*;
use dtoffload::env::Env;
use dtoffload::marl::losses::{clipped_surrogate, normalize_advantages};
use dtoffload::marl::*;
use dtoffload::scenario::ScenarioConfig;
use dtoffload::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn tiny_trainer(seed: u64, episodes: usize) -> TrainerConfig {
    TrainerConfig {
        max_episodes: episodes,
        batch_size: 16,
        epochs: 2,
        hidden: [8, 8],
        seed,
        ..TrainerConfig::default()
    }
}

fn tiny_scenario() -> ScenarioConfig {
    ScenarioConfig {
        episode_slots: 12,
        ..desk_scenario()
    }
}

proptest! {
    #[test]
    fn gae_matches_brute_force(
        rewards in prop::collection::vec(-10.0..10.0f64, 1..30),
        seed in any::<u64>(),
        gamma in 0.0..1.0f64,
        lambda in 0.0..1.0f64,
    ) {
        let n = rewards.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..=n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
        let (adv, ret) = compute_gae(&rewards, &values, &dones, gamma, lambda).unwrap();
        let oracle = gae_brute(&rewards, &values, &dones, gamma, lambda);
        for t in 0..n {
            prop_assert!((adv[t] - oracle[t]).abs() <= 1e-9 * (1.0 + oracle[t].abs()));
            prop_assert!((ret[t] - (oracle[t] + values[t])).abs() <= 1e-9 * (1.0 + ret[t].abs()));
        }
    }

    #[test]
    fn clipped_never_exceeds_unclipped(ratio in 0.0..5.0f64, adv in -10.0..10.0f64, eps in 0.01..0.5f64) {
        prop_assert!(clipped_surrogate(ratio, adv, eps) <= ratio * adv);
    }

    #[test]
    fn normalized_advantages_are_standardized(adv in prop::collection::vec(-100.0..100.0f64, 2..50)) {
        let z = normalize_advantages(&adv);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        let var = z.iter().map(|x| x * x).sum::<f64>() / n;
        prop_assert!(var < 1.0 + 1e-6);
    }
}

#[test]
fn gae_rejects_mismatched_lengths() {
    assert!(compute_gae(&[1.0, 2.0], &[0.0, 0.0], &[false, false], 0.9, 0.9).is_err());
}

#[test]
fn ratio_is_one_at_collection() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let actor = GaussianPolicy::new(5, [8, 8], 4, -0.5, &mut rng).unwrap();
    for _ in 0..50 {
        let obs: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        let (a, lp) = actor.sample(&obs, &mut rng).unwrap();
        assert_eq!((actor.log_prob(&obs, &a).unwrap() - lp).exp(), 1.0);
    }
}

#[test]
fn gaussian_policy_log_prob_matches_density() {
    let mean = [0.3, -1.2];
    let log_std = [-0.5f64, 0.2];
    let a = [0.1, 0.4];
    let mut expected = 0.0;
    for j in 0..2 {
        let s: f64 = log_std[j].exp();
        let z = (a[j] - mean[j]) / s;
        expected += -(2.0 * std::f64::consts::PI).sqrt().ln() - s.ln() - 0.5 * z * z;
    }
    assert!(rel_err(dtoffload::marl::policy::gaussian_log_prob(&mean, &log_std, &a), expected) < 1e-12);
}

#[test]
fn mlp_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mlp = Mlp::new(&[3, 5, 4, 2], 1.0, &mut rng).unwrap();
    let x = [0.4, -0.7, 1.3];
    let w = [0.8, -1.1];
    let cache = mlp.forward_cached(&x).unwrap();
    let mut grad = vec![0.0; mlp.num_params()];
    mlp.backward(&cache, &w, &mut grad);
    let widths = mlp.widths().to_vec();
    let numeric = central_diff(mlp.params(), 1e-6, |p| {
        let m = Mlp::from_params(widths.clone(), p.to_vec()).unwrap();
        let y = m.forward(&x).unwrap();
        w[0] * y[0] + w[1] * y[1]
    });
    assert!(max_rel_dev(&grad, &numeric, 1e-6) < 1e-5);
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let actor = GaussianPolicy::new(4, [6, 6], 3, -0.3, &mut rng).unwrap();
    let obs: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let acts: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let samples: Vec<ActorSample> = (0..6)
        .map(|j| ActorSample {
            obs: &obs[j],
            action: &acts[j],
            old_log_prob: actor.log_prob(&obs[j], &acts[j]).unwrap() + 0.05 * (j as f64 - 2.5),
            advantage: if j % 2 == 0 { 1.0 } else { -0.7 },
        })
        .collect();
    let (_, _, grad) = actor_loss_and_grad(&actor, &samples, 0.2, 0.01).unwrap();
    let numeric = central_diff(&actor.flat_params(), 1e-5, |p| {
        let mut a = actor.clone();
        a.set_flat_params(p).unwrap();
        actor_loss_and_grad(&a, &samples, 0.2, 0.01).unwrap().0
    });
    assert!(max_rel_dev(&grad, &numeric, 1e-6) < 1e-4);
}

#[test]
fn trainer_is_deterministic() {
    let a = train(&tiny_trainer(5, 4), &tiny_scenario(), true).unwrap();
    let b = train(&tiny_trainer(5, 4), &tiny_scenario(), true).unwrap();
    assert_eq!(a, b);
    let c = train(&tiny_trainer(6, 4), &tiny_scenario(), true).unwrap();
    assert_ne!(a.1, c.1);
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let cfg = TrainerConfig {
        learning_rate: 0.0,
        critic_learning_rate: Some(0.0),
        ..tiny_trainer(2, 3)
    };
    let env = Env::new(tiny_scenario(), true).unwrap();
    let mut trainer = Trainer::new(cfg, env).unwrap();
    let actors = trainer.actors().to_vec();
    let critic = trainer.critic().clone();
    trainer.train().unwrap();
    assert_eq!(trainer.actors(), &actors[..]);
    assert_eq!(trainer.critic(), &critic);
    assert_eq!(trainer.episodes_done(), 3);
}

#[test]
fn exploding_learning_rate_aborts_with_divergence() {
    let cfg = TrainerConfig {
        learning_rate: 1e300,
        critic_learning_rate: Some(1e300),
        grad_clip_norm: 1e300,
        ..tiny_trainer(1, 20)
    };
    let err = train(&cfg, &tiny_scenario(), true).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
}

#[test]
fn trainer_logs_one_row_per_episode() {
    let (_, log) = train(&tiny_trainer(0, 5), &tiny_scenario(), true).unwrap();
    assert_eq!(log.iter().map(|r| r.episode).collect::<Vec<_>>(), [0, 1, 2, 3, 4]);
    assert!(log.iter().all(|r| r.mean_reward.is_finite() && r.entropy.is_finite()));
}

#[test]
fn actors_act_without_critic_or_other_agents() {
    let (mut policy, _) = train(&tiny_trainer(4, 2), &tiny_scenario(), true).unwrap();
    policy.deterministic = true;
    let mut env = Env::new(tiny_scenario(), true).unwrap();
    env.reset(17);
    let mut rng = dtoffload::harness::rollout::policy_rng(0);
    let joint = dtoffload::baselines::JointPolicy::act(&mut policy, &env, &mut rng).unwrap();
    // Perturbing another agent's state leaves agent 0's action unchanged.
    env.world_mut().queues.local_backlog[1] += 1e9;
    let again = dtoffload::baselines::JointPolicy::act(&mut policy, &env, &mut rng).unwrap();
    assert_eq!(joint[0], again[0]);
    let obs = env.observe(0).normalized(&policy.obs_scales);
    assert_eq!(policy.actor(0).mean_action(&obs).unwrap(), again[0].0);
}

#[test]
fn shared_actor_uses_one_network() {
    let cfg = TrainerConfig {
        share_actor: true,
        ..tiny_trainer(3, 2)
    };
    let (policy, _) = train(&cfg, &tiny_scenario(), true).unwrap();
    assert_eq!(policy.actors.len(), 1);
    assert!(policy.shared);
}

#[test]
fn checkpoint_round_trips() {
    let env = Env::new(tiny_scenario(), false).unwrap();
    let mut trainer = Trainer::new(tiny_trainer(9, 2), env).unwrap();
    trainer.train().unwrap();
    let ckpt = Checkpoint::from_trainer(&trainer);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    ckpt.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    assert!(!ckpt.dt_enabled);
}

#[test]
fn checkpoint_rejects_corrupted_shapes() {
    let env = Env::new(tiny_scenario(), true).unwrap();
    let trainer = Trainer::new(tiny_trainer(9, 1), env).unwrap();
    let mut ckpt = Checkpoint::from_trainer(&trainer);
    ckpt.obs_dim += 1;
    assert!(matches!(ckpt.validate(), Err(Error::Checkpoint(_))));
}

#[test]
fn trainer_config_rejects_unknown_keys() {
    assert!(TrainerConfig::from_toml_str("learning_rate = 1e-3\nbogus = 1\n").is_err());
    let cfg = TrainerConfig::from_toml_str("learning_rate = 1e-3\n").unwrap();
    assert_eq!(cfg.learning_rate, 1e-3);
    assert_eq!(cfg.epochs, TrainerConfig::default().epochs);
}
