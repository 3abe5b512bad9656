//! The projected frequency model and its diffusion limits.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::lookdown::{fair_sign, Clock, Clocks, EventKind, ScaledRates, SelectionSpec};
use crate::rng::rng_from_seed;
use crate::trajectory::{observation_grid, RunStatus, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityState {
    pub w: f64,
    pub t: f64,
}

/// Probability that the parent of an event is rare.
pub fn parent_rare_probability(w: f64, kind: EventKind, zeta: i8, spec: &SelectionSpec) -> f64 {
    match kind {
        EventKind::Neutral => w,
        EventKind::Selective => {
            let sr = spec.sigma(crate::lookdown::Type::Rare, zeta);
            let sc = spec.sigma(crate::lookdown::Type::Common, zeta);
            let num = sr * w;
            let den = num + sc * (1.0 - w);
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        }
    }
}

/// `w' = (1-u) w + u 1{parent rare}` with the parent type given.
pub fn projected_update(w: f64, impact: f64, parent_rare: bool) -> f64 {
    let target = if parent_rare { 1.0 } else { 0.0 };
    ((1.0 - impact) * w + impact * target).clamp(0.0, 1.0)
}

pub fn projected_event<R: Rng + ?Sized>(
    state: DensityState,
    kind: EventKind,
    impact: f64,
    zeta: i8,
    spec: &SelectionSpec,
    rng: &mut R,
) -> DensityState {
    let p = parent_rare_probability(state.w, kind, zeta, spec);
    let rare = rng.random::<f64>() < p;
    DensityState {
        w: projected_update(state.w, impact, rare),
        t: state.t,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedRun {
    pub rates: ScaledRates,
    pub selection: SelectionSpec,
    pub x0: f64,
    pub horizon: f64,
    pub n_obs: usize,
    pub guard: f64,
}

/// Event-driven simulation of `X = K w`.
pub fn run_projected(run: &ProjectedRun, seed: u64) -> Result<Trajectory> {
    run.rates.validate()?;
    run.selection.validate()?;
    let k = run.rates.total_intensity;
    if !(run.x0 >= 0.0) || run.x0 > k {
        return Err(Error::param(format!("need 0 <= x0 <= K, got x0={}, K={k}", run.x0)));
    }
    let mut rng = rng_from_seed(seed);
    let mut state = DensityState {
        w: run.x0 / k,
        t: 0.0,
    };
    let mut zeta = fair_sign(&mut rng);
    let clocks = Clocks::new(run.rates.env_rate, run.rates.neutral_rate, run.rates.selective_rate);
    let times = observation_grid(run.horizon, run.n_obs);
    let mut values = Vec::with_capacity(times.len());
    let mut status = RunStatus::Completed;
    let mut pending = clocks.next(&mut rng);
    for &obs in &times {
        while status == RunStatus::Completed {
            let Some((dt, which)) = pending else { break };
            if state.t + dt > obs {
                break;
            }
            state.t += dt;
            match which {
                Clock::Env => zeta = fair_sign(&mut rng),
                Clock::Neutral => {
                    state = projected_event(state, EventKind::Neutral, run.rates.impact, zeta, &run.selection, &mut rng)
                }
                Clock::Selective => {
                    state = projected_event(state, EventKind::Selective, run.rates.impact, zeta, &run.selection, &mut rng)
                }
            }
            if k * state.w > run.guard {
                status = RunStatus::Stopped;
            }
            pending = clocks.next(&mut rng);
        }
        values.push(k * state.w);
    }
    Ok(Trajectory {
        times,
        values,
        status,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionParams {
    pub a: f64,
    pub b: f64,
    pub x0: f64,
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0) || !(self.x0 >= 0.0) || !self.b.is_finite() {
            return Err(Error::param("need a >= 0, x0 >= 0 and finite b"));
        }
        Ok(())
    }
}

/// Euler step of `dY = bY dt + sqrt(2aY) dW` with the normal draw `z`.
pub fn feller_step_with(y: f64, p: &DiffusionParams, dt: f64, z: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    (y + p.b * y * dt + (2.0 * p.a * y * dt).sqrt() * z).max(0.0)
}

pub fn feller_step<R: Rng + ?Sized>(y: f64, p: &DiffusionParams, dt: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    feller_step_with(y, p, dt, z)
}

/// Euler step of `dY = b²Y dt + sqrt(2(aY + b²Y²)) dW`.
pub fn feller_re_step_with(y: f64, p: &DiffusionParams, dt: f64, z: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let b2 = p.b * p.b;
    (y + b2 * y * dt + (2.0 * (p.a * y + b2 * y * y) * dt).sqrt() * z).max(0.0)
}

pub fn feller_re_step<R: Rng + ?Sized>(y: f64, p: &DiffusionParams, dt: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    feller_re_step_with(y, p, dt, z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionKind {
    Feller,
    FellerRe,
}

/// Euler path of either diffusion, observed on `n_obs + 1` grid points.
pub fn run_diffusion(
    kind: DiffusionKind,
    p: &DiffusionParams,
    horizon: f64,
    dt: f64,
    n_obs: usize,
    guard: f64,
    seed: u64,
) -> Result<Trajectory> {
    p.validate()?;
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(Error::param("dt and horizon must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let times = observation_grid(horizon, n_obs);
    let mut values = Vec::with_capacity(times.len());
    let mut y = p.x0;
    let mut t = 0.0;
    let mut status = RunStatus::Completed;
    for &obs in &times {
        while t < obs - 1e-12 && status == RunStatus::Completed {
            let h = dt.min(obs - t);
            y = match kind {
                DiffusionKind::Feller => feller_step(y, p, h, &mut rng),
                DiffusionKind::FellerRe => feller_re_step(y, p, h, &mut rng),
            };
            t += h;
            if y > guard {
                status = RunStatus::Stopped;
            }
        }
        values.push(y);
    }
    Ok(Trajectory {
        times,
        values,
        status,
    })
}

/// First two moments `(mean, variance)` at time `t`, from RK4 on the moment
/// equations with 10^4 steps.
pub fn moment_oracle(p: &DiffusionParams, t: f64, kind: DiffusionKind) -> (f64, f64) {
    if t <= 0.0 {
        return (p.x0, 0.0);
    }
    let (a, b) = (p.a, p.b);
    // state (m1, m2)
    let f = |m: [f64; 2]| -> [f64; 2] {
        match kind {
            DiffusionKind::Feller => [b * m[0], 2.0 * b * m[1] + 2.0 * a * m[0]],
            DiffusionKind::FellerRe => {
                let b2 = b * b;
                [b2 * m[0], 2.0 * a * m[0] + 4.0 * b2 * m[1]]
            }
        }
    };
    let steps = 10_000;
    let h = t / steps as f64;
    let mut m = [p.x0, p.x0 * p.x0];
    for _ in 0..steps {
        let k1 = f(m);
        let k2 = f([m[0] + 0.5 * h * k1[0], m[1] + 0.5 * h * k1[1]]);
        let k3 = f([m[0] + 0.5 * h * k2[0], m[1] + 0.5 * h * k2[1]]);
        let k4 = f([m[0] + h * k3[0], m[1] + h * k3[1]]);
        for i in 0..2 {
            m[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    (m[0], m[1] - m[0] * m[0])
}
