//! Particle systems for the limiting lookdown generators.
//!
//! Levels are handled through `y = 1/l`. For the level ODE
//! `dl/dt = a l² - c l` this gives the linear equation `dy/dt = c y - a`,
//! solved exactly; a particle dies when `y` falls to `1/Λ`. With a common
//! multiplicative noise `√2 b l dB` and drift `a l² + b² l` the equation for
//! `y` is `dy = (b² y - a) dt - √2 b y dB`, whose solution is
//! `y_t = Φ_t (y_0 - a ∫_0^t Φ_s^{-1} ds)` with `Φ_t = exp(-√2 b B_t)`.
//!
//! Births happen at rate `2a(Λ - l)`; offspring levels are uniform on
//! `(l, Λ)`. The `γ` readout of a configuration is `#particles / Λ`.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::environment::{EnvState, Environment};
use crate::point_process::poisson_count;
use crate::rng::{rng_from_seed, substream};
use crate::spatial::grid::TorusGrid;
use crate::spatial::probe::Probe;
use crate::spatial::ProbeSeries;
use crate::trajectory::{observation_grid, RunStatus, Trajectory};
use crate::{Error, Result};

/// Particle-count guard for every runner in this module.
pub const EXPLOSION_GUARD: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitParams {
    pub a: f64,
    pub b: f64,
    /// Level ceiling Λ.
    pub lambda: f64,
}

impl LimitParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || !(self.lambda > 0.0) || !self.b.is_finite() {
            return Err(Error::param("need a > 0, lambda > 0 and finite b"));
        }
        Ok(())
    }

    /// `λa - √λ |b| > 0`, needed for non-negative death rates.
    pub fn validate_bbmre(&self) -> Result<()> {
        self.validate()?;
        if self.lambda * self.a - self.lambda.sqrt() * self.b.abs() <= 0.0 {
            return Err(Error::param("need lambda*a - sqrt(lambda)*|b| > 0"));
        }
        Ok(())
    }
}

/// `y(t)` under `dy/dt = c y - a`.
pub fn inverse_level_flow(y0: f64, dt: f64, a: f64, c: f64) -> f64 {
    if c.abs() < 1e-14 {
        y0 - a * dt
    } else {
        let fix = a / c;
        fix + (y0 - fix) * (c * dt).exp()
    }
}

/// First `t >= 0` at which the flow from `y0` reaches `target`, if ever.
pub fn hit_time(y0: f64, target: f64, a: f64, c: f64) -> Option<f64> {
    if y0 <= target {
        return Some(0.0);
    }
    if c.abs() < 1e-14 {
        return if a > 0.0 { Some((y0 - target) / a) } else { None };
    }
    let fix = a / c;
    let ratio = (target - fix) / (y0 - fix);
    if ratio > 0.0 {
        let t = ratio.ln() / c;
        if t >= 0.0 {
            return Some(t);
        }
    }
    None
}

/// Poisson start: `Poisson(Λ x0)` levels uniform on `[0, Λ)`.
fn initial_levels<R: Rng + ?Sized>(x0: f64, lambda: f64, rng: &mut R) -> Vec<f64> {
    let n = poisson_count(x0 * lambda, rng);
    (0..n).map(|_| lambda * rng.random::<f64>()).collect()
}

fn counts_to_mass(counts: &[usize], lambda: f64) -> Vec<f64> {
    counts.iter().map(|&c| c as f64 / lambda).collect()
}

/// Add one to `counts[k]` for every observation time in `[from, to)`.
fn mark_alive(times: &[f64], counts: &mut [usize], from: f64, to: f64) {
    let start = times.partition_point(|&t| t < from);
    for k in start..times.len() {
        if times[k] >= to {
            break;
        }
        counts[k] += 1;
    }
}

/// Lookdown for the Feller diffusion `a y f'' + b y f'`.
pub fn run_kr_feller(params: &LimitParams, x0: f64, horizon: f64, n_obs: usize, seed: u64) -> Result<Trajectory> {
    params.validate()?;
    let (a, c, lam) = (params.a, params.b, params.lambda);
    let mut rng = rng_from_seed(seed);
    let times = observation_grid(horizon, n_obs);
    let mut counts = vec![0usize; times.len()];
    let cand = Exp::new(2.0 * a * lam).expect("positive rate");
    let target = 1.0 / lam;
    // (birth time, y at birth)
    let mut stack: Vec<(f64, f64)> = initial_levels(x0, lam, &mut rng)
        .into_iter()
        .map(|l| (0.0, 1.0 / l))
        .collect();
    let mut processed = 0usize;
    let mut status = RunStatus::Completed;
    while let Some((t0, y0)) = stack.pop() {
        processed += 1;
        if processed > EXPLOSION_GUARD {
            status = RunStatus::Exploded;
            break;
        }
        let death = hit_time(y0, target, a, c).map_or(f64::INFINITY, |s| t0 + s);
        let end = death.min(horizon);
        let mut t = t0;
        loop {
            t += cand.sample(&mut rng);
            if t >= end {
                break;
            }
            let l = 1.0 / inverse_level_flow(y0, t - t0, a, c);
            // thinning: accept with (Λ - l)/Λ
            if rng.random::<f64>() * lam < lam - l {
                let child = l + (lam - l) * rng.random::<f64>();
                if child < lam {
                    stack.push((t, 1.0 / child));
                }
            }
        }
        mark_alive(&times, &mut counts, t0, death);
    }
    Ok(Trajectory {
        values: counts_to_mass(&counts, lam),
        times,
        status,
    })
}

/// Lookdown for the Feller diffusion in random environment
/// `(a y + b² y²) f'' + b² y f'`, with the common noise path on a grid of
/// step `dt`.
pub fn run_kr_feller_re(
    params: &LimitParams,
    x0: f64,
    horizon: f64,
    dt: f64,
    n_obs: usize,
    seed: u64,
) -> Result<Trajectory> {
    params.validate()?;
    if !(dt > 0.0) {
        return Err(Error::param("dt must be positive"));
    }
    let (a, b, lam) = (params.a, params.b, params.lambda);
    let mut rng = rng_from_seed(seed);
    let mut noise_rng = rng_from_seed(substream(seed, 1));
    let steps = (horizon / dt).ceil() as usize;
    let h = horizon / steps as f64;
    // phi[k] = Φ at k h, inv_int[k] = ∫_0^{kh} Φ^{-1}
    let mut phi = Vec::with_capacity(steps + 1);
    let mut inv_int = Vec::with_capacity(steps + 1);
    phi.push(1.0);
    inv_int.push(0.0);
    let mut log_phi = 0.0;
    for k in 0..steps {
        let z: f64 = StandardNormal.sample(&mut noise_rng);
        log_phi += -std::f64::consts::SQRT_2 * b * h.sqrt() * z;
        let p = log_phi.exp();
        inv_int.push(inv_int[k] + 0.5 * h * (1.0 / phi[k] + 1.0 / p));
        phi.push(p);
    }
    let y_at = |cst: f64, k: usize| phi[k] * (cst - a * inv_int[k]);

    let times = observation_grid(horizon, n_obs);
    let mut counts = vec![0usize; times.len()];
    let cand = Exp::new(2.0 * a * lam).expect("positive rate");
    let target = 1.0 / lam;
    // (birth step, constant C = y/Φ + a I)
    let mut stack: Vec<(usize, f64)> = initial_levels(x0, lam, &mut rng)
        .into_iter()
        .map(|l| (0usize, 1.0 / l))
        .collect();
    let mut processed = 0usize;
    let mut status = RunStatus::Completed;
    while let Some((k0, cst)) = stack.pop() {
        processed += 1;
        if processed > EXPLOSION_GUARD {
            status = RunStatus::Exploded;
            break;
        }
        // death step: first grid index where y <= 1/Λ
        let mut kd = k0;
        while kd <= steps && y_at(cst, kd) > target {
            kd += 1;
        }
        let death = if kd > steps { f64::INFINITY } else { kd as f64 * h };
        let birth = k0 as f64 * h;
        let end = death.min(horizon);
        let mut t = birth;
        loop {
            t += cand.sample(&mut rng);
            if t >= end {
                break;
            }
            let k = ((t / h) as usize).min(steps);
            let l = 1.0 / y_at(cst, k);
            if rng.random::<f64>() * lam < lam - l {
                let child = l + (lam - l) * rng.random::<f64>();
                if child < lam {
                    let y = 1.0 / child;
                    stack.push((k, y / phi[k] + a * inv_int[k]));
                }
            }
        }
        mark_alive(&times, &mut counts, birth, death);
    }
    Ok(Trajectory {
        values: counts_to_mass(&counts, lam),
        times,
        status,
    })
}

/// Shared setup for the branching Brownian runners.
#[derive(Debug, Clone)]
pub struct BbmreRun<'a> {
    pub params: LimitParams,
    pub env: &'a Environment,
    pub grid: TorusGrid,
    /// Hold the field at this value for the whole run.
    pub frozen: Option<i8>,
    pub horizon: f64,
    pub dt: f64,
    pub n_obs: usize,
}

impl BbmreRun<'_> {
    fn check(&self) -> Result<()> {
        self.params.validate_bbmre()?;
        if !(self.dt > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::param("dt and horizon must be positive"));
        }
        if let Some(g) = self.env.grid {
            if g != self.grid {
                return Err(Error::param("environment grid differs from run grid"));
            }
        }
        Ok(())
    }

    fn zeta(&self, state: &EnvState, x: &[f64]) -> Result<i8> {
        match self.frozen {
            Some(z) => Ok(z),
            None => self.env.query(state, x),
        }
    }
}

fn uniform_position<R: Rng + ?Sized>(grid: &TorusGrid, rng: &mut R) -> Vec<f64> {
    (0..grid.dim)
        .map(|_| grid.wrap(grid.side_length * rng.random::<f64>()))
        .collect()
}

pub(crate) fn brownian_move<R: Rng + ?Sized>(grid: &TorusGrid, x: &mut [f64], dt: f64, rng: &mut R) {
    let s = dt.sqrt();
    for xi in x.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *xi = grid.wrap(*xi + s * z);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleRunOutput {
    /// Particle counts (direct model) or `γ` mass (lookdown) per observation.
    pub trajectory: Trajectory,
    /// Final positions.
    pub positions: Vec<Vec<f64>>,
}

/// Branching Brownian motion in random environment, direct form: birth rate
/// `λa`, death rate `λa - √λ ζ(x) b`. Time-stepped with at most one event per
/// particle per step, which keeps the mean growth per step exact.
pub fn run_bbmre_direct(run: &BbmreRun, n0: usize, seed: u64) -> Result<ParticleRunOutput> {
    run.check()?;
    let p = run.params;
    let mut rng = rng_from_seed(seed);
    let mut env_rng = rng_from_seed(substream(seed, 2));
    let mut env_state = run.env.initial(&mut env_rng);
    let mut xs: Vec<Vec<f64>> = (0..n0).map(|_| uniform_position(&run.grid, &mut rng)).collect();
    let birth = p.lambda * p.a;
    let root = p.lambda.sqrt() * p.b;
    if (2.0 * birth + root.abs()) * run.dt >= 1.0 {
        return Err(Error::param("dt too large for the branching rates"));
    }
    let times = observation_grid(run.horizon, run.n_obs);
    let steps = (run.horizon / run.dt).round().max(1.0) as usize;
    let h = run.horizon / steps as f64;
    let mut values = vec![xs.len() as f64];
    let mut next_obs = 1;
    let mut status = RunStatus::Completed;
    for k in 1..=steps {
        let t = k as f64 * h;
        let mut next = Vec::with_capacity(xs.len() + 8);
        for x in xs.drain(..) {
            let death = birth - root * run.zeta(&env_state, &x)? as f64;
            let u = rng.random::<f64>();
            if u < birth * h {
                next.push(x.clone());
                next.push(x);
            } else if u < (birth + death) * h {
                // dies
            } else {
                next.push(x);
            }
        }
        xs = next;
        for x in xs.iter_mut() {
            brownian_move(&run.grid, x, h, &mut rng);
        }
        env_state = run.env.advance(&env_state, t, &mut env_rng)?;
        if xs.len() > EXPLOSION_GUARD {
            status = RunStatus::Exploded;
        }
        while next_obs < times.len() && times[next_obs] <= t + 1e-9 {
            values.push(xs.len() as f64);
            next_obs += 1;
        }
        if status != RunStatus::Completed {
            break;
        }
    }
    while values.len() < times.len() {
        values.push(xs.len() as f64);
    }
    Ok(ParticleRunOutput {
        trajectory: Trajectory {
            times,
            values,
            status,
        },
        positions: xs,
    })
}

/// Lookdown form: levels follow `dl/dt = a l² - ζ(x) √λ b l` exactly over
/// each step; births at rate `2a(λ - l)`.
pub fn run_bbmre_lookdown(run: &BbmreRun, x0: f64, seed: u64) -> Result<ParticleRunOutput> {
    run.check()?;
    let p = run.params;
    let lam = p.lambda;
    let mut rng = rng_from_seed(seed);
    let mut env_rng = rng_from_seed(substream(seed, 2));
    let mut env_state = run.env.initial(&mut env_rng);
    if 2.0 * p.a * lam * run.dt >= 1.0 {
        return Err(Error::param("dt too large for the birth rate"));
    }
    // (position, y = 1/level)
    let mut ps: Vec<(Vec<f64>, f64)> = initial_levels(x0, lam, &mut rng)
        .into_iter()
        .map(|l| (uniform_position(&run.grid, &mut rng), 1.0 / l))
        .collect();
    let times = observation_grid(run.horizon, run.n_obs);
    let steps = (run.horizon / run.dt).round().max(1.0) as usize;
    let h = run.horizon / steps as f64;
    let root = lam.sqrt() * p.b;
    let target = 1.0 / lam;
    let mut values = vec![ps.len() as f64 / lam];
    let mut next_obs = 1;
    let mut status = RunStatus::Completed;
    for k in 1..=steps {
        let t = k as f64 * h;
        let mut next = Vec::with_capacity(ps.len() + 8);
        for (x, y) in ps.drain(..) {
            let l = 1.0 / y;
            let c = root * run.zeta(&env_state, &x)? as f64;
            if rng.random::<f64>() < 2.0 * p.a * (lam - l) * h {
                let child = l + (lam - l) * rng.random::<f64>();
                let yc = inverse_level_flow(1.0 / child, h, p.a, c);
                if yc > target {
                    next.push((x.clone(), yc));
                }
            }
            let y1 = inverse_level_flow(y, h, p.a, c);
            if y1 > target {
                next.push((x, y1));
            }
        }
        ps = next;
        for (x, _) in ps.iter_mut() {
            brownian_move(&run.grid, x, h, &mut rng);
        }
        env_state = run.env.advance(&env_state, t, &mut env_rng)?;
        if ps.len() > EXPLOSION_GUARD {
            status = RunStatus::Exploded;
        }
        while next_obs < times.len() && times[next_obs] <= t + 1e-9 {
            values.push(ps.len() as f64 / lam);
            next_obs += 1;
        }
        if status != RunStatus::Completed {
            break;
        }
    }
    while values.len() < times.len() {
        values.push(ps.len() as f64 / lam);
    }
    Ok(ParticleRunOutput {
        trajectory: Trajectory {
            times,
            values,
            status,
        },
        positions: ps.into_iter().map(|(x, _)| x).collect(),
    })
}

/// `γ(Σ δ_{x_i}) (φ) = Σ φ(x_i) / λ`
pub fn gamma_probe(grid: &TorusGrid, positions: &[Vec<f64>], lambda: f64, phi: &Probe) -> f64 {
    positions.iter().map(|x| phi.eval(grid, x)).sum::<f64>() / lambda
}

/// Initial measure for spatial runs: total `mass`, uniform on a box of
/// half-width `half_width` around `center` (wrapped on the torus).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialInit {
    pub mass: f64,
    pub center: Vec<f64>,
    pub half_width: f64,
}

impl SpatialInit {
    pub fn sample_position<R: Rng + ?Sized>(&self, grid: &TorusGrid, rng: &mut R) -> Vec<f64> {
        self.center
            .iter()
            .map(|&c| grid.wrap(c + self.half_width * (2.0 * rng.random::<f64>() - 1.0)))
            .collect()
    }
}

/// Cached Cholesky factor of the cell-level q matrix.
#[derive(Debug, Clone)]
pub struct FieldNoise {
    n: usize,
    factor: nalgebra::DMatrix<f64>,
}

impl FieldNoise {
    pub const MAX_CELLS: usize = 2048;

    pub fn new(env: &Environment) -> Result<Self> {
        let q = env
            .q_matrix()
            .ok_or_else(|| Error::param("field noise needs a gridded environment"))?;
        let n = (q.len() as f64).sqrt().round() as usize;
        if n > Self::MAX_CELLS {
            return Err(Error::param(format!(
                "{n} cells exceeds the field-noise limit of {}",
                Self::MAX_CELLS
            )));
        }
        let mut m = nalgebra::DMatrix::from_row_slice(n, n, &q);
        let mut add = 1e-10;
        for _ in 0..12 {
            if let Some(ch) = m.clone().cholesky() {
                return Ok(Self { n, factor: ch.l() });
            }
            for i in 0..n {
                m[(i, i)] += add;
            }
            add *= 10.0;
        }
        Err(Error::Numerical("q matrix could not be factorised".into()))
    }

    /// One draw with covariance `scale² q`.
    pub fn sample<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> Vec<f64> {
        let z = nalgebra::DVector::from_fn(self.n, |_, _| StandardNormal.sample(rng));
        (&self.factor * z).iter().map(|v| v * scale).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SbmreRun<'a> {
    pub params: LimitParams,
    pub env: &'a Environment,
    pub noise: &'a FieldNoise,
    pub init: SpatialInit,
    pub horizon: f64,
    pub dt: f64,
    pub n_obs: usize,
    pub probes: Vec<Probe>,
}

/// Lookdown for superBrownian motion in random environment: levels follow
/// `dl = (a l² + b² l) dt + √2 b l dW(t, x)` with `W` white in time and
/// spatially correlated by q (sampled on the environment grid).
pub fn run_sbmre_lookdown(run: &SbmreRun, seed: u64) -> Result<ProbeSeries> {
    run.params.validate()?;
    let grid = run
        .env
        .grid
        .ok_or_else(|| Error::param("SBMRE lookdown needs a gridded environment"))?;
    let p = run.params;
    let lam = p.lambda;
    if 2.0 * p.a * lam * run.dt >= 1.0 {
        return Err(Error::param("dt too large for the birth rate"));
    }
    let mut rng = rng_from_seed(seed);
    let mut noise_rng = rng_from_seed(substream(seed, 3));
    let n0 = poisson_count(run.init.mass * lam, &mut rng);
    let mut ps: Vec<(Vec<f64>, f64)> = (0..n0)
        .map(|_| {
            let x = run.init.sample_position(&grid, &mut rng);
            (x, 1.0 / (lam * rng.random::<f64>()))
        })
        .collect();
    let times = observation_grid(run.horizon, run.n_obs);
    let steps = (run.horizon / run.dt).round().max(1.0) as usize;
    let h = run.horizon / steps as f64;
    let target = 1.0 / lam;
    let coef = std::f64::consts::SQRT_2 * p.b;
    let mut series = ProbeSeries::new(times.clone(), run.probes.len());
    let record = |series: &mut ProbeSeries, ps: &[(Vec<f64>, f64)]| {
        let xs: Vec<Vec<f64>> = ps.iter().map(|(x, _)| x.clone()).collect();
        let readouts = run
            .probes
            .iter()
            .map(|phi| gamma_probe(&grid, &xs, lam, phi))
            .collect();
        series.push(ps.len() as f64 / lam, readouts);
    };
    record(&mut series, &ps);
    let mut next_obs = 1;
    for k in 1..=steps {
        let t = k as f64 * h;
        let dw = run.noise.sample(h.sqrt(), &mut noise_rng);
        let mut next = Vec::with_capacity(ps.len() + 8);
        for (x, y) in ps.drain(..) {
            let l = 1.0 / y;
            let mult = (-coef * dw[grid.cell_of(&x)?]).exp();
            if rng.random::<f64>() < 2.0 * p.a * (lam - l) * h {
                let child = l + (lam - l) * rng.random::<f64>();
                let yc = mult / child - p.a * h;
                if yc > target {
                    next.push((x.clone(), yc));
                }
            }
            let y1 = y * mult - p.a * h;
            if y1 > target {
                next.push((x, y1));
            }
        }
        ps = next;
        for (x, _) in ps.iter_mut() {
            brownian_move(&grid, x, h, &mut rng);
        }
        if ps.len() > EXPLOSION_GUARD {
            series.status = RunStatus::Exploded;
        }
        while next_obs < times.len() && times[next_obs] <= t + 1e-9 {
            record(&mut series, &ps);
            next_obs += 1;
        }
        if series.status != RunStatus::Completed {
            break;
        }
    }
    series.pad();
    Ok(series)
}
