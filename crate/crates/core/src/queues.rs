//! Fluid (cycle-denominated) task queues, the virtual energy queue and the
//! sliding-window Little's-law delay estimate.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// `max(q - C·τ + arrivals, 0)`.
pub fn step_local_queue(q: f64, arrivals: f64, cpu_hz: f64, slot_s: f64) -> f64 {
    (q - cpu_hz * slot_s + arrivals).max(0.0)
}

/// `max(q - F·τ + Σ arrivals, 0)`, F being the compute the RSU serves this slot.
pub fn step_rsu_queue(q: f64, arrivals_per_cv: &[f64], rsu_cpu_hz: f64, slot_s: f64) -> f64 {
    (q - rsu_cpu_hz * slot_s + arrivals_per_cv.iter().sum::<f64>()).max(0.0)
}

/// `max(v - E^max + E^total, 0)`.
pub fn step_virtual_queue(v: f64, e_total: f64, e_max: f64) -> f64 {
    (v - e_max + e_total).max(0.0)
}

/// Fixed-capacity window of `(backlog, arrival)` samples, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlidingWindow {
    capacity: usize,
    samples: VecDeque<(f64, f64)>,
}

impl SlidingWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, backlog: f64, arrival: f64) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((backlog, arrival));
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.samples.iter()
    }

    pub fn mean_backlog(&self) -> f64 {
        mean(self.samples.iter().map(|s| s.0), self.samples.len())
    }

    pub fn mean_arrival(&self) -> f64 {
        mean(self.samples.iter().map(|s| s.1), self.samples.len())
    }
}

fn mean(it: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        it.sum::<f64>() / n as f64
    }
}

/// Windowed mean backlog over windowed mean arrival. Zero when nothing arrived.
pub fn little_delay(window: &SlidingWindow) -> f64 {
    let arrival = window.mean_arrival();
    if arrival <= 0.0 {
        0.0
    } else {
        window.mean_backlog() / arrival
    }
}

/// Backlog state `Z(t)` plus the delay-estimation history.
///
/// The energy virtual queue is driven by system-wide energy, so every
/// vehicle's replica is identical; one value is stored and exposed per vehicle
/// through [`QueueState::virtual_view`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub local_backlog: Vec<f64>,
    pub rsu_backlog: Vec<f64>,
    pub virtual_energy: f64,
    num_cvs: usize,
    /// Per vehicle: (own local backlog, own local arrivals).
    local_history: Vec<SlidingWindow>,
    /// Per (vehicle, RSU): (shared RSU backlog, this vehicle's arrivals to it).
    rsu_history: Vec<Vec<SlidingWindow>>,
}

impl QueueState {
    pub fn new(num_cvs: usize, num_rsus: usize, window_m: usize) -> Self {
        Self {
            local_backlog: vec![0.0; num_cvs],
            rsu_backlog: vec![0.0; num_rsus],
            virtual_energy: 0.0,
            num_cvs,
            local_history: (0..num_cvs).map(|_| SlidingWindow::new(window_m)).collect(),
            rsu_history: (0..num_cvs)
                .map(|_| (0..num_rsus).map(|_| SlidingWindow::new(window_m)).collect())
                .collect(),
        }
    }

    pub fn num_cvs(&self) -> usize {
        self.num_cvs
    }

    pub fn num_rsus(&self) -> usize {
        self.rsu_backlog.len()
    }

    pub fn virtual_view(&self, _cv: usize) -> f64 {
        self.virtual_energy
    }

    pub fn local_history(&self, cv: usize) -> &SlidingWindow {
        &self.local_history[cv]
    }

    pub fn rsu_history(&self, cv: usize, rsu: usize) -> &SlidingWindow {
        &self.rsu_history[cv][rsu]
    }

    pub fn total_backlog(&self) -> f64 {
        self.local_backlog.iter().sum::<f64>() + self.rsu_backlog.iter().sum::<f64>()
    }

    /// Advances every queue by one slot and records the post-update backlogs
    /// with this slot's arrivals in the delay windows.
    ///
    /// `rsu_arrivals[i][k]` are cycles vehicle i pushed to RSU k;
    /// `rsu_service_hz[k]` is the compute RSU k spends on its queue this slot.
    pub fn step(&mut self, update: &QueueUpdate<'_>) {
        let n = self.num_cvs;
        let k_count = self.rsu_backlog.len();
        for i in 0..n {
            self.local_backlog[i] = step_local_queue(
                self.local_backlog[i],
                update.local_arrivals[i],
                update.local_cpu_hz[i],
                update.slot_s,
            );
        }
        let mut column = vec![0.0; n];
        for k in 0..k_count {
            for (i, c) in column.iter_mut().enumerate() {
                *c = update.rsu_arrivals[i][k];
            }
            self.rsu_backlog[k] = step_rsu_queue(
                self.rsu_backlog[k],
                &column,
                update.rsu_service_hz[k],
                update.slot_s,
            );
        }
        self.virtual_energy = step_virtual_queue(self.virtual_energy, update.e_total, update.e_max);

        for i in 0..n {
            self.local_history[i].push(self.local_backlog[i], update.local_arrivals[i]);
            for k in 0..k_count {
                self.rsu_history[i][k].push(self.rsu_backlog[k], update.rsu_arrivals[i][k]);
            }
        }
    }

    /// Little's-law delay for the local branch of vehicle `cv`.
    pub fn local_delay(&self, cv: usize) -> f64 {
        little_delay(&self.local_history[cv])
    }

    /// Little's-law delay for vehicle `cv` at RSU `rsu`: shared backlog, own arrivals.
    pub fn rsu_delay(&self, cv: usize, rsu: usize) -> f64 {
        little_delay(&self.rsu_history[cv][rsu])
    }

    pub fn trace_rows(&self, slot: usize) -> Vec<QueueTraceRow> {
        let mut rows = Vec::with_capacity(self.num_cvs * (1 + self.rsu_backlog.len()) + 1);
        for i in 0..self.num_cvs {
            let w = &self.local_history[i];
            rows.push(QueueTraceRow {
                slot,
                queue_id: format!("local_{i}"),
                backlog: self.local_backlog[i],
                arrival: w.iter().last().map_or(0.0, |s| s.1),
                delay_estimate: little_delay(w),
            });
        }
        for k in 0..self.rsu_backlog.len() {
            for i in 0..self.num_cvs {
                let w = &self.rsu_history[i][k];
                rows.push(QueueTraceRow {
                    slot,
                    queue_id: format!("rsu_{k}_cv_{i}"),
                    backlog: self.rsu_backlog[k],
                    arrival: w.iter().last().map_or(0.0, |s| s.1),
                    delay_estimate: little_delay(w),
                });
            }
        }
        rows.push(QueueTraceRow {
            slot,
            queue_id: "virtual_energy".into(),
            backlog: self.virtual_energy,
            arrival: 0.0,
            delay_estimate: 0.0,
        });
        rows
    }
}

/// Inputs for one [`QueueState::step`].
#[derive(Debug, Clone)]
pub struct QueueUpdate<'a> {
    pub local_arrivals: &'a [f64],
    pub local_cpu_hz: &'a [f64],
    pub rsu_arrivals: &'a [Vec<f64>],
    pub rsu_service_hz: &'a [f64],
    pub e_total: f64,
    pub e_max: f64,
    pub slot_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueTraceRow {
    pub slot: usize,
    pub queue_id: String,
    pub backlog: f64,
    pub arrival: f64,
    pub delay_estimate: f64,
}
