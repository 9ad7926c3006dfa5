//! Shared helpers and independent oracles for the integration tests.
#![allow(dead_code)]

use dtoffload::baselines::{HeuristicKind, HeuristicPolicy, JointPolicy};
use dtoffload::compute::*;
use dtoffload::env::{make_observation, project_joint, Env, ObservationLayout, RawAction};
use dtoffload::harness::rollout::run_episode;
use dtoffload::harness::steady_metrics;
use dtoffload::lyapunov::*;
use dtoffload::marl::losses::{clipped_surrogate, critic_loss, critic_loss_grad};
use dtoffload::marl::{compute_gae, TrainerConfig, TrainingLogRow};
use dtoffload::queues::*;
use dtoffload::scenario::*;

/// Learning rate used for the desk-scale learning runs.
pub const DESK_LR: f64 = 3e-3;
pub const DESK_EPISODES: usize = 300;

pub fn desk_scenario() -> ScenarioConfig {
    ScenarioConfig {
        num_cvs: 2,
        num_rsus: 2,
        ..ScenarioConfig::default()
    }
}

pub fn desk_trainer(seed: u64) -> TrainerConfig {
    TrainerConfig {
        learning_rate: DESK_LR,
        max_episodes: DESK_EPISODES,
        seed,
        ..TrainerConfig::default()
    }
}

/// Scenario with the reference-example constants and unit queue scaling.
pub fn unit_scenario() -> ScenarioConfig {
    ScenarioConfig {
        num_cvs: 1,
        num_rsus: 1,
        queue_unit_cycles: 1.0,
        ..ScenarioConfig::default()
    }
}

pub fn rel_err(actual: f64, expected: f64) -> f64 {
    if expected == 0.0 {
        actual.abs()
    } else {
        ((actual - expected) / expected).abs()
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative deviation, with magnitudes floored at `floor`.
pub fn max_rel_dev(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// `A_t = Σ_k (γλ)^k δ_{t+k}`, summed term by term and cut at the first done.
pub fn gae_brute(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta = |t: usize| {
        let next = if dones[t] { 0.0 } else { values[t + 1] };
        rewards[t] + gamma * next - values[t]
    };
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for k in t..n {
                sum += w * delta(k);
                if dones[k] {
                    break;
                }
                w *= gamma * lambda;
            }
            sum
        })
        .collect()
}

/// Mean reward of a heuristic over the same episode seeds the trainer uses.
pub fn heuristic_rewards(kind: HeuristicKind, scenario: &ScenarioConfig, seed: u64, episodes: usize) -> Vec<(f64, f64)> {
    let mut env = Env::new(scenario.clone(), true).unwrap();
    let mut policy = HeuristicPolicy::new(kind);
    (0..episodes)
        .map(|ep| {
            let rec = run_episode(&mut env, &mut policy, episode_seed(seed, ep as u64), ep, None).unwrap();
            (rec.stats.mean_reward, rec.stats.mean_cost)
        })
        .collect()
}

pub fn tail_mean(values: &[f64], tail: usize) -> f64 {
    let w = &values[values.len().saturating_sub(tail)..];
    w.iter().sum::<f64>() / w.len() as f64
}

pub fn log_rewards(log: &[TrainingLogRow]) -> Vec<f64> {
    log.iter().map(|r| r.mean_reward).collect()
}

/// Runs `policy` for `slots` consecutive slots from a fresh reset.
pub fn play(env: &mut Env, policy: &mut dyn JointPolicy, seed: u64, slots: usize) -> Vec<dtoffload::env::SlotOutcome> {
    env.reset(seed);
    let mut rng = dtoffload::harness::rollout::policy_rng(seed);
    (0..slots)
        .map(|_| {
            let raws = policy.act(env, &mut rng).unwrap();
            env.step(&raws).unwrap().outcome
        })
        .collect()
}

pub struct Example {
    pub name: &'static str,
    pub actual: f64,
    pub expected: f64,
}

fn ex(name: &'static str, actual: f64, expected: f64) -> Example {
    Example { name, actual, expected }
}

fn reference_task() -> TaskSpec {
    TaskSpec {
        task_bits: 2e6,
        instr_bits: 2e4,
        cpu_hz: 2.5e9,
        intensity: 2000.0,
        cotra_intensity: 300.0,
        t_max_s: 1.0,
    }
}

/// Every closed-form reference example, implementation value against a value
/// recomputed here from first principles.
pub fn derived_examples() -> Vec<Example> {
    let cfg = unit_scenario();
    let task = reference_task();
    let mut out = Vec::new();

    // Geometry and channel.
    let cv = VehicleState { id: 0, lane: 1, x_m: 350.0, y_m: 1.875, speed_mps: 14.0, cpu_hz: 2.5e9 };
    let rsu = RsuState { id: 0, x_m: 350.0, lateral_m: 9.75, height_m: 10.0, cpu_hz: 20e9 };
    out.push(ex("distance", distance(&cv, &rsu), (7.875f64 * 7.875 + 100.0).sqrt()));
    let g = 10f64.powf((-38.4 - 21.0 * 100f64.log10()) / 10.0);
    let rate_oracle = 1.5 * 20e6 * (1.0 + 1.0 * g / 1e-13).log2();
    let draw = ChannelDraw { small_scale_gain: 1.0, pathloss_linear: pathloss_linear(100.0) };
    let rate = v2i_rate(1.0, &draw, &cfg);
    out.push(ex("v2i rate at 100 m", rate, rate_oracle));

    // Compute model.
    out.push(ex("local latency", local_latency(1.0, &task), 2e6 * 2000.0 / 2.5e9));
    out.push(ex("local energy", local_energy(1.6, 2.5e9, &cfg), 1e-26 * 1.6 * 2.5e9f64.powi(3)));
    let (up_t, up_e) = datat_upload(0.5, &task, rate_oracle, &cfg);
    out.push(ex("datat time", up_t, 0.5 * 2e6 / rate_oracle));
    out.push(ex("datat energy", up_e, 1.0 * 0.5 * 2e6 / rate_oracle));
    out.push(ex("instr upload", instr_upload(2e4, rate_oracle), 2e4 / rate_oracle));
    let (co_t, co_e) = cotra(0.5, &task, 1e10, &cfg);
    out.push(ex("cotra time", co_t, 0.5 * 2e6 * 300.0 / 1e10));
    out.push(ex("cotra energy", co_e, 1e-28 * 0.03 * 1e30));
    let (sel_t, eta) = select_mode(up_t, co_t);
    out.push(ex("mode select time", sel_t, 0.5 * 2e6 / rate_oracle));
    out.push(ex("mode select eta", f64::from(eta), 0.0));
    let (c_t, c_e) = rsu_compute(0.5, &task, 1e10, &cfg);
    out.push(ex("rsu compute time", c_t, 0.5 * 2e6 * 2000.0 / 1e10));
    out.push(ex("rsu compute energy", c_e, 1e-28 * 0.2 * 1e30));
    let split = SplitDecision {
        local_ratio: 0.5,
        rsu_ratios: vec![0.5],
        bandwidth_ratios: vec![1.0],
        rsu_cpu_hz: vec![1e10],
    };
    let o = evaluate_task(&split, &task, &[rate_oracle], &QueueDelays::zero(1), &cfg);
    let t_oracle = (0.5f64 * 2e6 * 2000.0 / 2.5e9).max(0.5 * 2e6 / rate_oracle + 0.2);
    let e_oracle = 1e-26 * 0.8 * 2.5e9f64.powi(3) + 0.5 * 2e6 / rate_oracle + 20.0;
    out.push(ex("task latency", o.task_latency_s, t_oracle));
    out.push(ex("task energy", o.task_energy_j, e_oracle));

    // Queues.
    out.push(ex("local queue", step_local_queue(5e9, 1e9, 2.5e9, 1.0), 5e9 - 2.5e9 + 1e9));
    out.push(ex("rsu queue datat", step_rsu_queue(0.0, &[2e9, 2e9], 2e10, 1.0), 0.0));
    let instr_arr = 0.5 * 2e6 * (300.0 + 2000.0);
    out.push(ex("rsu queue instr", step_rsu_queue(1.9e10, &[instr_arr, instr_arr], 2e10, 1.0), 1.9e10 - 2e10 + 2.0 * instr_arr));
    out.push(ex("virtual queue", step_virtual_queue(0.0, 450.0, 300.0), 450.0 - 300.0));
    let mut w = SlidingWindow::new(5);
    w.push(2.0, 1.0);
    w.push(4.0, 3.0);
    out.push(ex("little delay", little_delay(&w), ((2.0 + 4.0) / 2.0) / ((1.0 + 3.0) / 2.0)));

    // Lyapunov.
    let outcome = TaskOutcome { task_latency_s: 0.8, task_energy_j: 145.0, ..o.clone() };
    let cost = slot_cost(std::slice::from_ref(&outcome), &cfg);
    out.push(ex("slot cost", cost, 0.6 * 0.8 + 0.4 * 145.0));
    let mut z = QueueState::new(1, 1, 5);
    z.local_backlog = vec![3.0];
    z.rsu_backlog = vec![4.0];
    out.push(ex("lyapunov value", lyapunov_value(&z, &cfg), 0.5 * (9.0 + 16.0)));

    let drift_case = |q: f64, lambda: f64, service: f64| {
        let mut z = QueueState::new(1, 1, 5);
        z.local_backlog = vec![q];
        let inputs = DriftInputs {
            local_arrivals: vec![lambda],
            local_service: vec![service],
            rsu_arrivals: vec![0.0],
            rsu_service: vec![0.0],
            e_total: cfg.energy_budget_w,
        };
        let d = drift_bound_terms(&z, &inputs, &cfg);
        let before = z.clone();
        z.step(&QueueUpdate {
            local_arrivals: &[lambda],
            local_cpu_hz: &[service],
            rsu_arrivals: &[vec![0.0]],
            rsu_service_hz: &[0.0],
            e_total: cfg.energy_budget_w,
            e_max: cfg.energy_budget_w,
            slot_s: 1.0,
        });
        (d, lyapunov_value(&z, &cfg) - lyapunov_value(&before, &cfg))
    };
    let (d, realized) = drift_case(2.0, 3.0, 1.0);
    out.push(ex("drift term", d.local_terms[0], 2.0 * (3.0 - 1.0)));
    out.push(ex("drift B1", d.b1, 0.5 * 4.0));
    out.push(ex("realized drift", realized, 0.5 * (16.0 - 4.0)));
    let (d, realized) = drift_case(1.0, 0.0, 5.0);
    out.push(ex("clamp drift term", d.local_terms[0], -5.0));
    out.push(ex("clamp B1", d.b1, 12.5));
    out.push(ex("clamp realized drift", realized, -0.5));
    let fake = DriftBound {
        local_terms: vec![4.0],
        rsu_terms: vec![0.0],
        virtual_terms: vec![0.0],
        b1: 0.0,
        b2: 0.0,
        b3: 0.0,
    };
    let p2 = p2_objective(58.48, &fake, &cfg);
    out.push(ex("p2 objective", p2, 5.0 * 58.48 + 4.0));
    out.push(ex("reward", slot_reward(p2, 0.0), -(5.0 * 58.48 + 4.0)));

    // Environment.
    let two = ScenarioConfig { num_cvs: 2, num_rsus: 1, ..ScenarioConfig::default() };
    let raw = RawAction(vec![0.0, 0.0, 0.0, (0.8f64 / 0.2).ln()]);
    let granted = project_joint(&[raw.clone(), raw], &two).unwrap();
    out.push(ex("compute arbitration", granted[0].rsu_cpu_hz[0], 0.5 * two.rsu_available_hz()));
    let three = ScenarioConfig { num_cvs: 1, num_rsus: 3, ..ScenarioConfig::default() };
    let mut env = Env::new(three.clone(), true).unwrap();
    env.world_mut().queues.rsu_backlog = vec![2.0, 4.0, 6.0];
    let obs = make_observation(env.world(), 0, true);
    let dt = ObservationLayout::new(&three).dt_start();
    out.push(ex("G_rsu sum", obs.raw[dt], 12.0));
    out.push(ex("G_rsu mean", obs.raw[dt + 1], 4.0));
    out.push(ex("G_rsu max", obs.raw[dt + 2], 6.0));
    let fixed = ScenarioConfig {
        task_bits_range: Interval::point(2e6),
        instr_bits_range: Interval::point(2e4),
        task_intensity_range: Interval::point(2000.0),
        cotra_intensity_range: Interval::point(300.0),
        cv_cpu_range_hz: Interval::point(2.5e9),
        ..unit_scenario()
    };
    let mut env = Env::new(fixed, true).unwrap();
    let step = env.step(&[RawAction(vec![50.0, -50.0, 0.0, 0.0])]).unwrap();
    out.push(ex("end-to-end all-local latency", step.outcome.outcomes[0].task_latency_s, 2e6 * 2000.0 / 2.5e9));
    out.push(ex("end-to-end all-local energy", step.outcome.outcomes[0].task_energy_j, 1e-26 * 1.6 * 2.5e9f64.powi(3)));

    // Learning arithmetic.
    let rewards = [1.0, -0.5, 2.0];
    let values = [0.2, 0.4, -0.1, 0.3];
    let dones = [false, false, true];
    let (adv, ret) = compute_gae(&rewards, &values, &dones, 0.99, 0.95).unwrap();
    let brute = gae_brute(&rewards, &values, &dones, 0.99, 0.95);
    for t in 0..3 {
        out.push(ex("gae advantage", adv[t], brute[t]));
        out.push(ex("gae return", ret[t], brute[t] + values[t]));
    }
    out.push(ex("clip upper", clipped_surrogate(1.5, 1.0, 0.2), 1.2));
    out.push(ex("clip pessimistic", clipped_surrogate(0.5, -1.0, 0.2), -0.8));
    out.push(ex("critic loss", critic_loss(&[0.0, 0.0], &[1.0, 3.0]), (1.0 + 9.0) / 2.0));
    let pred = [0.3, -0.7];
    let ret2 = [1.0, 3.0];
    let grad = critic_loss_grad(&pred, &ret2);
    let fd = central_diff(&pred, 1e-5, |p| critic_loss(p, &ret2));
    out.push(ex("critic loss grad 0", grad[0], fd[0]));
    out.push(ex("critic loss grad 1", grad[1], fd[1]));

    // Harness arithmetic.
    let ramp: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
    let m = steady_metrics(&ramp).unwrap();
    let steady_oracle = (50..100).map(|i| i as f64 / 99.0).sum::<f64>() / 50.0;
    out.push(ex("steady ramp", m.steady, steady_oracle));
    let conv_oracle = (0..100).find(|&i| i as f64 / 99.0 >= 0.95 * steady_oracle).unwrap() + 1;
    out.push(ex("steady ramp convergence", m.convergence_episode as f64, conv_oracle as f64));
    let tail = &ramp[50..];
    let mean = tail.iter().sum::<f64>() / 50.0;
    let var = tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
    out.push(ex("steady cv", m.cv, var.sqrt() / mean.abs()));
    out
}
