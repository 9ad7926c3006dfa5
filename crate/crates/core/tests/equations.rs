//! Closed-form model arithmetic against independent oracles, and the queue and
//! drift invariants as properties.

mod common;

use common::*;
use dtoffload::lyapunov::*;
use dtoffload::queues::*;
use dtoffload::scenario::ScenarioConfig;
use proptest::prelude::*;

#[test]
fn reference_examples_match_oracles() {
    for e in derived_examples() {
        assert!(
            rel_err(e.actual, e.expected) <= 1e-9,
            "{}: {} vs {}",
            e.name,
            e.actual,
            e.expected
        );
    }
}

#[test]
fn reference_examples_cover_every_module() {
    let names: Vec<&str> = derived_examples().iter().map(|e| e.name).collect();
    for needle in ["distance", "rate", "latency", "energy", "queue", "drift", "gae", "clip", "critic"] {
        assert!(names.iter().any(|n| n.contains(needle)), "no example mentions {needle}");
    }
}

#[test]
fn little_delay_uses_window_means() {
    let mut w = SlidingWindow::new(3);
    for (q, a) in [(1.0, 2.0), (2.0, 2.0), (3.0, 4.0), (6.0, 4.0)] {
        w.push(q, a);
    }
    // Oldest sample evicted: backlog mean 11/3, arrival mean 10/3.
    assert!(rel_err(little_delay(&w), 1.1) < 1e-12);
}

#[test]
fn little_delay_is_zero_without_arrivals() {
    let mut w = SlidingWindow::new(4);
    w.push(5.0, 0.0);
    assert_eq!(little_delay(&w), 0.0);
}

fn scenario_with(num_cvs: usize, num_rsus: usize, unit: f64, e_max: f64) -> ScenarioConfig {
    ScenarioConfig {
        num_cvs,
        num_rsus,
        queue_unit_cycles: unit,
        energy_budget_w: e_max,
        ..ScenarioConfig::default()
    }
}

proptest! {
    #[test]
    fn queues_never_go_negative(q in 0.0..1e11f64, a in 0.0..1e10f64, c in 0.0..1e10f64, tau in 0.01..2.0f64) {
        prop_assert!(step_local_queue(q, a, c, tau) >= 0.0);
        prop_assert!(step_rsu_queue(q, &[a, a / 2.0], c, tau) >= 0.0);
        prop_assert!(step_virtual_queue(q, a, c) >= 0.0);
    }

    #[test]
    fn queue_update_matches_fluid_equation(q in 0.0..1e11f64, a in 0.0..1e10f64, c in 0.0..1e10f64) {
        let expected = if q + a > c { q + a - c } else { 0.0 };
        prop_assert!((step_local_queue(q, a, c, 1.0) - expected).abs() <= 1e-6 * (1.0 + expected));
    }

    #[test]
    fn drift_bound_holds_on_random_states(
        n in 1usize..5,
        k in 1usize..4,
        seed in any::<u64>(),
        unit in prop_oneof![Just(1.0), Just(1e6), Just(1e9)],
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cfg = scenario_with(n, k, unit, rng.random_range(1.0..500.0));
        let mut z = QueueState::new(n, k, 4);
        for q in &mut z.local_backlog { *q = rng.random_range(0.0..5e10); }
        for q in &mut z.rsu_backlog { *q = rng.random_range(0.0..5e10); }
        z.virtual_energy = rng.random_range(0.0..1000.0);
        let local_arrivals: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1e10)).collect();
        let cpu: Vec<f64> = (0..n).map(|_| rng.random_range(1e9..3e9)).collect();
        let rsu_arrivals: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.random_range(0.0..1e10)).collect()).collect();
        let service: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2e10)).collect();
        let e_total = rng.random_range(0.0..2000.0);

        let inputs = DriftInputs {
            local_arrivals: local_arrivals.clone(),
            local_service: cpu.iter().map(|c| c * cfg.slot_duration_s).collect(),
            rsu_arrivals: (0..k).map(|j| rsu_arrivals.iter().map(|r| r[j]).sum()).collect(),
            rsu_service: service.iter().map(|f| f * cfg.slot_duration_s).collect(),
            e_total,
        };
        let terms = drift_bound_terms(&z, &inputs, &cfg);
        let before = lyapunov_value(&z, &cfg);
        let mut next = z.clone();
        next.step(&QueueUpdate {
            local_arrivals: &local_arrivals,
            local_cpu_hz: &cpu,
            rsu_arrivals: &rsu_arrivals,
            rsu_service_hz: &service,
            e_total,
            e_max: cfg.energy_budget_w,
            slot_s: cfg.slot_duration_s,
        });
        let realized = lyapunov_value(&next, &cfg) - before;
        let bound = terms.drift_sum() + terms.bound_b();
        prop_assert!(realized <= bound + 1e-9 * (1.0 + before.abs() + bound.abs()), "{realized} > {bound}");
    }

    #[test]
    fn energy_chain_holds_for_any_sequence(e in prop::collection::vec(0.0..1000.0f64, 1..200), e_max in 1.0..800.0f64) {
        let v = e.iter().fold(0.0, |v, x| step_virtual_queue(v, *x, e_max));
        prop_assert!(energy_chain_holds(&e, e_max, v));
    }
}
