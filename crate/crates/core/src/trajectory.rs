use serde::{Deserialize, Serialize};

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    /// The tracked mass crossed the configured guard; the path is frozen at
    /// the stopping time from then on.
    Stopped,
    /// Particle count exceeded the explosion guard.
    Exploded,
}

/// A scalar readout on a fixed observation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub status: RunStatus,
}

impl Trajectory {
    pub fn last(&self) -> f64 {
        *self.values.last().expect("trajectory has at least one point")
    }

    /// Value at the grid point closest to `t`.
    pub fn at(&self, t: f64) -> f64 {
        let i = nearest_index(&self.times, t);
        self.values[i]
    }
}

/// `n_obs + 1` equally spaced points on `[0, horizon]`.
pub fn observation_grid(horizon: f64, n_obs: usize) -> Vec<f64> {
    let n = n_obs.max(1);
    (0..=n).map(|i| horizon * i as f64 / n as f64).collect()
}

pub(crate) fn nearest_index(times: &[f64], t: f64) -> usize {
    times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}
