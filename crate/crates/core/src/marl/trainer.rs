use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{clip_grad_norm, Adam};
use super::gae::compute_gae;
use super::losses::{clipped_surrogate, clipped_surrogate_grad, critic_loss, critic_loss_grad, normalize_advantages};
use super::mlp::Mlp;
use super::policy::{gaussian_log_prob, GaussianPolicy};
use crate::baselines::JointPolicy;
use crate::env::{Env, RawAction};
use crate::error::{Error, Result};
use crate::metrics::{EpisodeAccumulator, EpisodeStats};
use crate::scenario::{episode_seed, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    /// Critic step size; `None` reuses `learning_rate`.
    pub critic_learning_rate: Option<f64>,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub grad_clip_norm: f64,
    pub max_episodes: usize,
    pub hidden: [usize; 2],
    pub log_std_init: f64,
    pub episodes_per_update: usize,
    /// One actor for all agents instead of one per agent.
    pub share_actor: bool,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 8e-5,
            critic_learning_rate: None,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            epochs: 10,
            batch_size: 512,
            entropy_coef: 0.01,
            value_coef: 0.5,
            grad_clip_norm: 0.5,
            max_episodes: 1800,
            hidden: [64, 64],
            log_std_init: -0.5,
            episodes_per_update: 1,
            share_actor: false,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if let Some(lr) = self.critic_learning_rate {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad("critic_learning_rate must be finite and >= 0");
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.episodes_per_update == 0 {
            return bad("epochs, batch_size and episodes_per_update must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 || self.grad_clip_norm < 0.0 {
            return bad("loss coefficients and grad_clip_norm must be >= 0");
        }
        if !self.log_std_init.is_finite() {
            return bad("log_std_init must be finite");
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogRow {
    pub episode: usize,
    pub mean_reward: f64,
    pub mean_cost: f64,
    pub mean_delay: f64,
    pub mean_energy: f64,
    pub mean_backlog: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
}

/// One slot of experience for every agent.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub obs: Vec<Vec<f64>>,
    pub global_state: Vec<f64>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

/// On-policy storage, discarded after each update.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub steps: Vec<StepRecord>,
    advantages: Option<Vec<f64>>,
    returns: Option<Vec<f64>>,
}

impl RolloutBuffer {
    pub fn push(&mut self, step: StepRecord) {
        debug_assert!(self.advantages.is_none());
        self.steps.push(step);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Runs GAE once over the stored steps; episodes end at `done`.
    pub fn finish(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        if self.advantages.is_some() {
            return Err(Error::Invariant("advantages already computed for this rollout".into()));
        }
        let rewards: Vec<f64> = self.steps.iter().map(|s| s.reward).collect();
        let mut values: Vec<f64> = self.steps.iter().map(|s| s.value).collect();
        values.push(0.0);
        let dones: Vec<bool> = self.steps.iter().map(|s| s.done).collect();
        let (adv, ret) = compute_gae(&rewards, &values, &dones, gamma, lambda)?;
        self.advantages = Some(adv);
        self.returns = Some(ret);
        Ok(())
    }

    pub fn advantages(&self) -> Option<&[f64]> {
        self.advantages.as_deref()
    }

    pub fn returns(&self) -> Option<&[f64]> {
        self.returns.as_deref()
    }
}

/// Running maximum reward magnitude; rewards are divided by it for
/// training only, never for logging.
#[derive(Debug, Clone, Default)]
struct RewardScale {
    max_abs: f64,
}

impl RewardScale {
    fn update(&mut self, x: f64) {
        self.max_abs = self.max_abs.max(x.abs());
    }

    fn scale(&self) -> f64 {
        if self.max_abs > 0.0 {
            self.max_abs
        } else {
            1.0
        }
    }
}

/// Decentralised actors from training. Each acts on its own normalised observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub actors: Vec<GaussianPolicy>,
    pub shared: bool,
    pub obs_scales: Vec<f64>,
    /// Act with the mean instead of sampling.
    pub deterministic: bool,
}

impl TrainedPolicy {
    pub fn actor(&self, agent: usize) -> &GaussianPolicy {
        if self.shared {
            &self.actors[0]
        } else {
            &self.actors[agent]
        }
    }
}

impl JointPolicy for TrainedPolicy {
    fn act(&mut self, env: &Env, rng: &mut ChaCha8Rng) -> Result<Vec<RawAction>> {
        if !self.shared && self.actors.len() != env.num_agents() {
            return Err(Error::Dimension {
                expected: env.num_agents(),
                actual: self.actors.len(),
                context: "trained actors",
            });
        }
        (0..env.num_agents())
            .map(|i| {
                let obs = env.observe(i).normalized(&self.obs_scales);
                let actor = self.actor(i);
                let a = if self.deterministic {
                    actor.mean_action(&obs)?
                } else {
                    actor.sample(&obs, rng)?.0
                };
                Ok(RawAction(a))
            })
            .collect()
    }
}

/// CTDE trainer: per-agent Gaussian actors and one critic over the
/// concatenated observations, all agents sharing the team reward.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainerConfig,
    env: Env,
    actors: Vec<GaussianPolicy>,
    critic: Mlp,
    actor_opts: Vec<Adam>,
    critic_opt: Adam,
    rng: ChaCha8Rng,
    reward_scale: RewardScale,
    episode: usize,
    log: Vec<TrainingLogRow>,
    stats: Vec<EpisodeStats>,
}

impl Trainer {
    pub fn new(cfg: TrainerConfig, env: Env) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = env.num_agents();
        let obs_dim = env.obs_dim();
        let act_dim = env.action_dim();
        let num_actors = if cfg.share_actor { 1 } else { n };
        let actors = (0..num_actors)
            .map(|_| GaussianPolicy::new(obs_dim, cfg.hidden, act_dim, cfg.log_std_init, &mut init_rng))
            .collect::<Result<Vec<_>>>()?;
        let critic = Mlp::new(&[obs_dim * n, cfg.hidden[0], cfg.hidden[1], 1], 1.0, &mut init_rng)?;
        let actor_opts = actors
            .iter()
            .map(|a| Adam::new(a.num_params(), cfg.learning_rate))
            .collect();
        let critic_opt = Adam::new(
            critic.num_params(),
            cfg.critic_learning_rate.unwrap_or(cfg.learning_rate),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self {
            cfg,
            env,
            actors,
            critic,
            actor_opts,
            critic_opt,
            rng,
            reward_scale: RewardScale::default(),
            episode: 0,
            log: Vec::new(),
            stats: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn actors(&self) -> &[GaussianPolicy] {
        &self.actors
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn log(&self) -> &[TrainingLogRow] {
        &self.log
    }

    pub fn episode_stats(&self) -> &[EpisodeStats] {
        &self.stats
    }

    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    pub fn policy(&self) -> TrainedPolicy {
        TrainedPolicy {
            actors: self.actors.clone(),
            shared: self.cfg.share_actor,
            obs_scales: self.env.observation_scales().to_vec(),
            deterministic: false,
        }
    }

    fn actor_index(&self, agent: usize) -> usize {
        if self.cfg.share_actor {
            0
        } else {
            agent
        }
    }

    /// Runs collection and update cycles until `max_episodes` are done.
    pub fn train(&mut self) -> Result<()> {
        while self.episode < self.cfg.max_episodes {
            let batch = self.cfg.episodes_per_update.min(self.cfg.max_episodes - self.episode);
            self.train_cycle(batch)?;
        }
        Ok(())
    }

    /// Collects `episodes` episodes and performs one PPO update on them.
    pub fn train_cycle(&mut self, episodes: usize) -> Result<()> {
        let mut buffer = RolloutBuffer::default();
        let first = self.episode;
        for _ in 0..episodes {
            let stats = self.collect_episode(&mut buffer)?;
            self.stats.push(stats);
            self.episode += 1;
        }
        for step in &buffer.steps {
            self.reward_scale.update(step.reward);
        }
        let scale = self.reward_scale.scale();
        for step in &mut buffer.steps {
            step.reward /= scale;
        }
        buffer.finish(self.cfg.gamma, self.cfg.gae_lambda)?;
        let (actor_loss, critic_loss, entropy) = self.update(&buffer)?;
        for (offset, stats) in self.stats[first..].iter().enumerate() {
            self.log.push(TrainingLogRow {
                episode: first + offset,
                mean_reward: stats.mean_reward,
                mean_cost: stats.mean_cost,
                mean_delay: stats.mean_delay,
                mean_energy: stats.mean_energy,
                mean_backlog: stats.mean_backlog,
                actor_loss,
                critic_loss,
                entropy,
            });
        }
        Ok(())
    }

    fn collect_episode(&mut self, buffer: &mut RolloutBuffer) -> Result<EpisodeStats> {
        self.env.reset(episode_seed(self.cfg.seed, self.episode as u64));
        let scales = self.env.observation_scales().to_vec();
        let n = self.env.num_agents();
        let mut acc = EpisodeAccumulator::default();
        while !self.env.is_done() {
            let obs: Vec<Vec<f64>> = (0..n).map(|i| self.env.observe(i).normalized(&scales)).collect();
            let global_state: Vec<f64> = obs.concat();
            let value = self.critic.forward(&global_state)?[0];
            let mut actions = Vec::with_capacity(n);
            let mut log_probs = Vec::with_capacity(n);
            for (i, o) in obs.iter().enumerate() {
                let (a, lp) = self.actors[self.actor_index(i)].sample(o, &mut self.rng)?;
                if a.iter().any(|x| !x.is_finite()) || !lp.is_finite() || !value.is_finite() {
                    return Err(self.diverged("non-finite action, log-prob or value during collection"));
                }
                actions.push(a);
                log_probs.push(lp);
            }
            let raws: Vec<RawAction> = actions.iter().cloned().map(RawAction).collect();
            let result = self.env.step(&raws)?;
            if !result.outcome.drift_check.holds() {
                return Err(Error::Invariant(format!(
                    "drift bound violated at episode {} slot {}: {:?}",
                    self.episode, result.outcome.slot, result.outcome.drift_check
                )));
            }
            acc.push(&result.outcome);
            buffer.push(StepRecord {
                obs,
                global_state,
                actions,
                log_probs,
                reward: result.outcome.objective.reward,
                value,
                done: result.done,
            });
        }
        Ok(acc.finish())
    }

    fn diverged(&self, what: &str) -> Error {
        let norm = |p: &[f64]| p.iter().map(|x| x * x).sum::<f64>().sqrt();
        let actor_norms: Vec<f64> = self.actors.iter().map(|a| norm(&a.flat_params())).collect();
        let last = self.log.last();
        Error::Diverged {
            episode: self.episode,
            detail: format!(
                "{what}; actor parameter norms {actor_norms:?}; critic parameter norm {}; last log row {last:?}",
                norm(self.critic.params())
            ),
        }
    }

    /// PPO epochs over shuffled minibatches of timesteps. Returns the mean
    /// actor loss, critic loss and entropy over all minibatches.
    fn update(&mut self, buffer: &RolloutBuffer) -> Result<(f64, f64, f64)> {
        let adv_all = buffer.advantages().expect("finished buffer");
        let ret_all = buffer.returns().expect("finished buffer");
        let n_agents = self.env.num_agents();
        let t_len = buffer.len();
        let mut order: Vec<usize> = (0..t_len).collect();
        let (mut actor_sum, mut critic_sum, mut entropy_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);

        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.cfg.batch_size) {
                let adv = normalize_advantages(&chunk.iter().map(|&t| adv_all[t]).collect::<Vec<_>>());

                let mut actor_loss = 0.0;
                let mut entropy = 0.0;
                for ai in 0..self.actors.len() {
                    let mut samples = Vec::new();
                    for (j, &t) in chunk.iter().enumerate() {
                        let step = &buffer.steps[t];
                        for i in (0..n_agents).filter(|&i| self.actor_index(i) == ai) {
                            samples.push(ActorSample {
                                obs: &step.obs[i],
                                action: &step.actions[i],
                                old_log_prob: step.log_probs[i],
                                advantage: adv[j],
                            });
                        }
                    }
                    let (loss, h, mut grad) =
                        actor_loss_and_grad(&self.actors[ai], &samples, self.cfg.clip_eps, self.cfg.entropy_coef)?;
                    if !loss.is_finite() {
                        return Err(Error::Diverged {
                            episode: self.episode,
                            detail: format!("actor {ai} loss {loss}, entropy {h}"),
                        });
                    }
                    actor_loss += loss;
                    entropy += h;
                    clip_grad_norm(&mut grad, self.cfg.grad_clip_norm);
                    let mut p = self.actors[ai].flat_params();
                    self.actor_opts[ai].step(&mut p, &grad);
                    self.actors[ai].set_flat_params(&p)?;
                }

                let states: Vec<&[f64]> = chunk.iter().map(|&t| buffer.steps[t].global_state.as_slice()).collect();
                let targets: Vec<f64> = chunk.iter().map(|&t| ret_all[t]).collect();
                let (c_loss, mut critic_grad) =
                    critic_loss_and_grad(&self.critic, &states, &targets, self.cfg.value_coef)?;
                if !c_loss.is_finite() {
                    return Err(Error::Diverged {
                        episode: self.episode,
                        detail: format!("critic loss {c_loss}"),
                    });
                }
                clip_grad_norm(&mut critic_grad, self.cfg.grad_clip_norm);
                self.critic_opt.step(self.critic.params_mut(), &critic_grad);

                actor_sum += actor_loss / self.actors.len() as f64;
                entropy_sum += entropy / self.actors.len() as f64;
                critic_sum += c_loss;
                batches += 1;
            }
        }
        let b = batches.max(1) as f64;
        let all_finite = self.actors.iter().all(|a| a.flat_params().iter().all(|x| x.is_finite()))
            && self.critic.params().iter().all(|x| x.is_finite());
        if !all_finite {
            return Err(self.diverged("non-finite parameters after update"));
        }
        Ok((actor_sum / b, critic_sum / b, entropy_sum / b))
    }
}

/// One agent-step as seen by the actor update.
#[derive(Debug, Clone, Copy)]
pub struct ActorSample<'a> {
    pub obs: &'a [f64],
    pub action: &'a [f64],
    pub old_log_prob: f64,
    pub advantage: f64,
}

/// Actor loss `-(mean clipped surrogate) - entropy_coef * entropy` and its
/// gradient in the policy's flat parameter layout. Also returns the entropy.
pub fn actor_loss_and_grad(
    actor: &GaussianPolicy,
    samples: &[ActorSample<'_>],
    clip_eps: f64,
    entropy_coef: f64,
) -> Result<(f64, f64, Vec<f64>)> {
    let mut grad = vec![0.0; actor.num_params()];
    let n = samples.len() as f64;
    let mut surrogate = 0.0;
    for s in samples {
        let cache = actor.forward_cached(s.obs)?;
        let lp = gaussian_log_prob(cache.output(), &actor.log_std, s.action);
        let ratio = (lp - s.old_log_prob).exp();
        surrogate += clipped_surrogate(ratio, s.advantage, clip_eps);
        let g = clipped_surrogate_grad(ratio, s.advantage, clip_eps);
        if g != 0.0 {
            actor.accumulate_log_prob_grad(&cache, s.action, -g / n, &mut grad);
        }
    }
    let entropy = actor.entropy();
    let m = actor.mean.num_params();
    for g in grad[m..].iter_mut() {
        *g -= entropy_coef;
    }
    Ok((-surrogate / n - entropy_coef * entropy, entropy, grad))
}

/// Mean squared error of the critic on `targets`, and the gradient of
/// `value_coef * mse` with respect to the critic parameters.
pub fn critic_loss_and_grad(
    critic: &Mlp,
    states: &[&[f64]],
    targets: &[f64],
    value_coef: f64,
) -> Result<(f64, Vec<f64>)> {
    if states.len() != targets.len() {
        return Err(Error::Length(format!("{} states, {} targets", states.len(), targets.len())));
    }
    let mut grad = vec![0.0; critic.num_params()];
    let mut preds = Vec::with_capacity(states.len());
    let caches = states
        .iter()
        .map(|s| critic.forward_cached(s))
        .collect::<Result<Vec<_>>>()?;
    for c in &caches {
        preds.push(c.output()[0]);
    }
    let d = critic_loss_grad(&preds, targets);
    for (c, g) in caches.iter().zip(d) {
        critic.backward(c, &[value_coef * g], &mut grad);
    }
    Ok((critic_loss(&preds, targets), grad))
}

/// Trains on a fresh environment and returns the actors and the log.
pub fn train(
    cfg: &TrainerConfig,
    scenario: &ScenarioConfig,
    dt_enabled: bool,
) -> Result<(TrainedPolicy, Vec<TrainingLogRow>)> {
    let env = Env::new(scenario.clone(), dt_enabled)?;
    let mut trainer = Trainer::new(cfg.clone(), env)?;
    trainer.train()?;
    Ok((trainer.policy(), trainer.log().to_vec()))
}
