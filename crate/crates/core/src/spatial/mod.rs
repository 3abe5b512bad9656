//! Simulators on the periodic torus.

pub mod grid;
pub mod heat;
pub mod lookdown;
pub mod mytnik;
pub mod probe;
pub mod qv;
pub mod slfvfs;

use serde::{Deserialize, Serialize};

use crate::trajectory::RunStatus;

pub use grid::TorusGrid;
pub use probe::Probe;

/// Total mass and probe readouts `<X_t, φ_i>` on an observation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSeries {
    pub times: Vec<f64>,
    pub total: Vec<f64>,
    /// `probes[i][k]` is probe `i` at `times[k]`.
    pub probes: Vec<Vec<f64>>,
    pub status: RunStatus,
}

impl ProbeSeries {
    pub fn new(times: Vec<f64>, n_probes: usize) -> Self {
        let cap = times.len();
        Self {
            times,
            total: Vec::with_capacity(cap),
            probes: vec![Vec::with_capacity(cap); n_probes],
            status: RunStatus::Completed,
        }
    }

    pub fn push(&mut self, total: f64, readouts: Vec<f64>) {
        if self.total.len() >= self.times.len() {
            return;
        }
        self.total.push(total);
        for (p, v) in self.probes.iter_mut().zip(readouts) {
            p.push(v);
        }
    }

    /// Repeat the last record up to the end of the grid (stopped runs).
    pub fn pad(&mut self) {
        while !self.total.is_empty() && self.total.len() < self.times.len() {
            let last = *self.total.last().unwrap();
            self.total.push(last);
            for p in self.probes.iter_mut() {
                let v = *p.last().unwrap();
                p.push(v);
            }
        }
    }

    pub fn probe_at(&self, i: usize, k: usize) -> f64 {
        self.probes[i][k]
    }
}
