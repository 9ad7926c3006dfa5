//! Road geometry, vehicle mobility, task generation and the sensing-enhanced
//! V2I channel.
//!
//! Every stochastic quantity attached to a vehicle (initial placement, task
//! draws, fading on its links) comes from that vehicle's own ChaCha stream.
//! Adding vehicles therefore never perturbs the trajectory of existing ones.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::compute::TaskSpec;
use crate::error::{Error, Result};

/// Closed interval `[lo, hi]`, written as a two-element array in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// Uniform draw. Degenerate intervals return `lo` without consuming randomness.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi == self.lo {
            return self.lo;
        }
        let u: f64 = rng.random();
        (self.lo + (self.hi - self.lo) * u).min(self.hi)
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Self { lo: v[0], hi: v[1] }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(v: Interval) -> Self {
        [v.lo, v.hi]
    }
}

/// Fixed affine (pure scaling) constants mapping observation fields to O(1).
///
/// Defaults are powers of two so that the inverse map is exact in binary
/// floating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationScale {
    pub bits: f64,
    pub cpu_hz: f64,
    pub position_m: f64,
    pub speed_mps: f64,
    pub time_s: f64,
    pub backlog_cycles: f64,
    pub energy_j: f64,
}

impl Default for ObservationScale {
    fn default() -> Self {
        Self {
            bits: 1048576.0,                   // 2^20
            cpu_hz: 17179869184.0,             // 2^34
            position_m: 1024.0,                // 2^10
            speed_mps: 16.0,                   // 2^4
            time_s: 1.0,
            backlog_cycles: 8589934592.0,      // 2^33
            energy_j: 512.0,                   // 2^9
        }
    }
}

/// Static description of one simulated deployment plus its per-slot model constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_cvs: usize,
    pub num_rsus: usize,
    pub num_lanes: usize,
    pub lane_width_m: f64,
    pub road_length_m: f64,
    pub rsu_spacing_m: f64,
    pub rsu_height_m: f64,
    pub rsu_lateral_offset_m: f64,
    pub rsu_coverage_m: f64,
    pub bandwidth_hz: f64,
    pub noise_power_w: f64,
    pub tx_power_w: f64,
    pub enhancement_factor: f64,
    pub slot_duration_s: f64,
    pub speed_range_mps: Interval,
    pub cv_cpu_range_hz: Interval,
    pub rsu_cpu_hz: f64,
    pub twin_reserve_hz: f64,
    pub task_bits_range: Interval,
    pub instr_bits_range: Interval,
    pub task_intensity_range: Interval,
    pub cotra_intensity_range: Interval,
    pub kappa_cv: f64,
    pub kappa_rsu: f64,
    pub alpha: f64,
    pub lyapunov_v: f64,
    /// Per-slot system-wide energy budget E^max in joules.
    pub energy_budget_w: f64,
    pub t_max_s: f64,
    pub window_m: usize,
    pub episode_slots: usize,
    /// Use the position-independent distance (RSU x measured from the origin).
    pub static_distance: bool,
    /// Add the instruction transmit time to the InstrT branch before mode selection.
    pub instr_includes_transmit: bool,
    /// Reward penalty per second of deadline overrun. Zero gives the bare P2 reward.
    pub deadline_penalty: f64,
    /// Cycles per backlog unit inside the Lyapunov function and drift terms.
    pub queue_unit_cycles: f64,
    /// Offload shares below this are zeroed before renormalising the split.
    pub split_floor: f64,
    pub greedy_grid_step: f64,
    /// Compute-share request levels (fractions of F^max - C^twin) tried by greedy_grid.
    pub greedy_f_levels: Vec<f64>,
    pub obs_scale: ObservationScale,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_cvs: 5,
            num_rsus: 3,
            num_lanes: 4,
            lane_width_m: 3.75,
            road_length_m: 700.0,
            rsu_spacing_m: 150.0,
            rsu_height_m: 10.0,
            rsu_lateral_offset_m: 9.75,
            rsu_coverage_m: 200.0,
            bandwidth_hz: 20e6,
            noise_power_w: 1e-13,
            tx_power_w: 1.0,
            enhancement_factor: 1.5,
            slot_duration_s: 1.0,
            speed_range_mps: Interval::new(12.0, 16.0),
            cv_cpu_range_hz: Interval::new(2e9, 3e9),
            rsu_cpu_hz: 20e9,
            twin_reserve_hz: 2e9,
            task_bits_range: Interval::new(1e6, 3e6),
            instr_bits_range: Interval::new(1e4, 5e4),
            task_intensity_range: Interval::new(1500.0, 2000.0),
            cotra_intensity_range: Interval::new(100.0, 500.0),
            kappa_cv: 1e-26,
            kappa_rsu: 1e-28,
            alpha: 0.6,
            lyapunov_v: 5.0,
            energy_budget_w: 400.0,
            t_max_s: 1.0,
            window_m: 5,
            episode_slots: 30,
            static_distance: false,
            instr_includes_transmit: false,
            deadline_penalty: 10.0,
            queue_unit_cycles: 1e9,
            split_floor: 1e-3,
            greedy_grid_step: 0.25,
            greedy_f_levels: vec![0.25, 0.5, 0.75, 1.0],
            obs_scale: ObservationScale::default(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Capacity an RSU can lend to offloaded work after the twin reservation.
    pub fn rsu_available_hz(&self) -> f64 {
        self.rsu_cpu_hz - self.twin_reserve_hz
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(msg: impl Into<String>) -> Result<()> {
            Err(Error::Config(msg.into()))
        }
        if self.num_cvs == 0 || self.num_rsus == 0 || self.num_lanes == 0 {
            return bad("num_cvs, num_rsus and num_lanes must be at least 1");
        }
        if self.window_m == 0 || self.episode_slots == 0 {
            return bad("window_m and episode_slots must be at least 1");
        }
        let positive = [
            ("lane_width_m", self.lane_width_m),
            ("road_length_m", self.road_length_m),
            ("rsu_spacing_m", self.rsu_spacing_m),
            ("rsu_height_m", self.rsu_height_m),
            ("rsu_lateral_offset_m", self.rsu_lateral_offset_m),
            ("rsu_coverage_m", self.rsu_coverage_m),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_power_w", self.noise_power_w),
            ("tx_power_w", self.tx_power_w),
            ("slot_duration_s", self.slot_duration_s),
            ("rsu_cpu_hz", self.rsu_cpu_hz),
            ("kappa_cv", self.kappa_cv),
            ("kappa_rsu", self.kappa_rsu),
            ("lyapunov_v", self.lyapunov_v),
            ("energy_budget_w", self.energy_budget_w),
            ("t_max_s", self.t_max_s),
            ("queue_unit_cycles", self.queue_unit_cycles),
            ("greedy_grid_step", self.greedy_grid_step),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0,1], got {}", self.alpha));
        }
        if !(self.enhancement_factor >= 1.0 && self.enhancement_factor.is_finite()) {
            return bad("enhancement_factor must be >= 1");
        }
        if !(self.twin_reserve_hz >= 0.0 && self.twin_reserve_hz < self.rsu_cpu_hz) {
            return bad("twin_reserve_hz must be in [0, rsu_cpu_hz)");
        }
        if !(self.deadline_penalty >= 0.0 && self.deadline_penalty.is_finite()) {
            return bad("deadline_penalty must be >= 0");
        }
        if !(0.0..0.5).contains(&self.split_floor) {
            return bad("split_floor must lie in [0, 0.5)");
        }
        let steps = 1.0 / self.greedy_grid_step;
        if self.greedy_grid_step > 1.0 || (steps - steps.round()).abs() > 1e-9 {
            return bad("greedy_grid_step must divide 1 evenly");
        }
        if self.greedy_f_levels.is_empty()
            || self.greedy_f_levels.iter().any(|f| !(*f > 0.0 && *f <= 1.0))
        {
            return bad("greedy_f_levels must be non-empty fractions in (0,1]");
        }
        let positive_ranges = [
            ("speed_range_mps", self.speed_range_mps),
            ("cv_cpu_range_hz", self.cv_cpu_range_hz),
        ];
        for (name, r) in positive_ranges {
            if !(r.lo > 0.0 && r.lo <= r.hi && r.hi.is_finite()) {
                return bad(format!("{name} must satisfy 0 < lo <= hi"));
            }
        }
        let nonneg_ranges = [
            ("task_bits_range", self.task_bits_range),
            ("instr_bits_range", self.instr_bits_range),
            ("task_intensity_range", self.task_intensity_range),
            ("cotra_intensity_range", self.cotra_intensity_range),
        ];
        for (name, r) in nonneg_ranges {
            if !(r.lo >= 0.0 && r.lo <= r.hi && r.hi.is_finite()) {
                return bad(format!("{name} must satisfy 0 <= lo <= hi"));
            }
        }
        // Instructions are strictly smaller than the raw data they describe.
        // An all-zero workload is the one permitted degenerate case.
        let null_workload = self.task_bits_range.hi == 0.0 && self.instr_bits_range.hi == 0.0;
        if !null_workload && self.instr_bits_range.hi >= self.task_bits_range.lo {
            return bad("instr_bits_range upper bound must be below task_bits_range lower bound");
        }
        if !null_workload && self.task_intensity_range.lo <= 0.0 {
            return bad("task_intensity_range must be positive");
        }
        let obs = &self.obs_scale;
        for v in [
            obs.bits,
            obs.cpu_hz,
            obs.position_m,
            obs.speed_mps,
            obs.time_s,
            obs.backlog_cycles,
            obs.energy_j,
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad("obs_scale entries must be finite and > 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: usize,
    pub lane: usize,
    pub x_m: f64,
    pub y_m: f64,
    pub speed_mps: f64,
    pub cpu_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsuState {
    pub id: usize,
    pub x_m: f64,
    pub lateral_m: f64,
    pub height_m: f64,
    pub cpu_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDraw {
    /// |h|^2 for h ~ CN(0,1).
    pub small_scale_gain: f64,
    pub pathloss_linear: f64,
}

/// Lateral coordinate of a lane center, road centerline at y = 0.
pub fn lane_center_y(lane: usize, cfg: &ScenarioConfig) -> f64 {
    (lane as f64 + 0.5 - cfg.num_lanes as f64 / 2.0) * cfg.lane_width_m
}

/// RSUs are spaced evenly and centered along the road.
pub fn place_rsus(cfg: &ScenarioConfig) -> Vec<RsuState> {
    let center = cfg.road_length_m / 2.0;
    let half_span = (cfg.num_rsus as f64 - 1.0) / 2.0;
    (0..cfg.num_rsus)
        .map(|k| RsuState {
            id: k,
            x_m: center + (k as f64 - half_span) * cfg.rsu_spacing_m,
            lateral_m: cfg.rsu_lateral_offset_m,
            height_m: cfg.rsu_height_m,
            cpu_hz: cfg.rsu_cpu_hz,
        })
        .collect()
}

/// Per-vehicle random stream for one episode.
pub fn vehicle_rng(episode_seed: u64, vehicle: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    rng.set_stream(vehicle as u64);
    rng
}

/// Seed for episode `episode` of a run seeded with `base` (SplitMix64 finaliser).
pub fn episode_seed(base: u64, episode: u64) -> u64 {
    let mut z = base ^ episode.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Initial placement: uniform position, uniform lane, speed and CPU from their ranges.
pub fn spawn_vehicle<R: Rng + ?Sized>(id: usize, cfg: &ScenarioConfig, rng: &mut R) -> VehicleState {
    let x_m = rng.random::<f64>() * cfg.road_length_m;
    let lane = rng.random_range(0..cfg.num_lanes);
    let speed_mps = cfg.speed_range_mps.sample(rng);
    let cpu_hz = cfg.cv_cpu_range_hz.sample(rng);
    VehicleState {
        id,
        lane,
        x_m,
        y_m: lane_center_y(lane, cfg),
        speed_mps,
        cpu_hz,
    }
}

/// Moves the vehicle one slot forward, re-entering at the road start.
pub fn advance_mobility(state: &VehicleState, cfg: &ScenarioConfig) -> VehicleState {
    let x = (state.x_m + state.speed_mps * cfg.slot_duration_s).rem_euclid(cfg.road_length_m);
    VehicleState {
        x_m: x,
        ..state.clone()
    }
}

/// Full 3D distance using the vehicle's current longitudinal position.
pub fn distance(cv: &VehicleState, rsu: &RsuState) -> f64 {
    let dx = rsu.x_m - cv.x_m;
    let dy = cv.y_m - rsu.lateral_m;
    (dx * dx + dy * dy + rsu.height_m * rsu.height_m).sqrt()
}

/// Distance with the relative longitudinal term dropped (RSU x taken from the origin).
pub fn static_distance(cv: &VehicleState, rsu: &RsuState) -> f64 {
    let dy = cv.y_m - rsu.lateral_m;
    (rsu.x_m * rsu.x_m + dy * dy + rsu.height_m * rsu.height_m).sqrt()
}

pub fn link_distance(cv: &VehicleState, rsu: &RsuState, cfg: &ScenarioConfig) -> f64 {
    if cfg.static_distance {
        static_distance(cv, rsu)
    } else {
        distance(cv, rsu)
    }
}

/// Large-scale gain `10^((-38.4 - 21 log10 d) / 10)` with d in meters, floored at 1 m.
pub fn pathloss_linear(distance_m: f64) -> f64 {
    let d = distance_m.max(1.0);
    10f64.powf((-38.4 - 21.0 * d.log10()) / 10.0)
}

pub fn draw_channel<R: Rng + ?Sized>(
    cv: &VehicleState,
    rsu: &RsuState,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> ChannelDraw {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    ChannelDraw {
        small_scale_gain: 0.5 * (re * re + im * im),
        pathloss_linear: pathloss_linear(link_distance(cv, rsu, cfg)),
    }
}

/// Sensing-enhanced Shannon rate in bit/s for bandwidth share `b_ratio`.
pub fn v2i_rate(b_ratio: f64, draw: &ChannelDraw, cfg: &ScenarioConfig) -> f64 {
    if b_ratio <= 0.0 {
        return 0.0;
    }
    let snr = cfg.tx_power_w * draw.small_scale_gain * draw.pathloss_linear / cfg.noise_power_w;
    cfg.enhancement_factor * b_ratio * cfg.bandwidth_hz * (1.0 + snr).log2()
}

pub fn spawn_task<R: Rng + ?Sized>(cv: &VehicleState, cfg: &ScenarioConfig, rng: &mut R) -> TaskSpec {
    TaskSpec {
        task_bits: cfg.task_bits_range.sample(rng),
        instr_bits: cfg.instr_bits_range.sample(rng),
        cpu_hz: cv.cpu_hz,
        intensity: cfg.task_intensity_range.sample(rng),
        cotra_intensity: cfg.cotra_intensity_range.sample(rng),
        t_max_s: cfg.t_max_s,
    }
}
