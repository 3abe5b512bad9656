//! Branching random walk in a ±1 random field: at each generation a particle
//! splits in two with probability `1/2 + κ ζ(x)/√n`, otherwise dies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::TorusGrid;
use super::probe::Probe;
use super::qv::QvTrajectory;
use super::ProbeSeries;
use crate::environment::{EnvKind, Environment};
use crate::limits::{brownian_move, gamma_probe, SpatialInit, EXPLOSION_GUARD};
use crate::point_process::poisson_count;
use crate::rng::{rng_from_seed, substream};
use crate::trajectory::{observation_grid, RunStatus};
use crate::{Error, Result};

/// Split probability, clamped to `[0, 1]`.
pub fn split_probability(n: f64, kappa: f64, zeta: i8) -> f64 {
    (0.5 + kappa * zeta as f64 / n.sqrt()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct MytnikRun<'a> {
    /// Approximation level: generations at times `k/n`, mass `count/n`.
    pub n: usize,
    pub kappa: f64,
    pub env: &'a Environment,
    pub init: SpatialInit,
    pub horizon: f64,
    pub n_obs: usize,
    pub probes: Vec<Probe>,
    /// Probe whose per-generation QV ingredients are recorded.
    pub qv_probe: Option<Probe>,
    /// Forced field value, for boundary tests.
    pub frozen: Option<i8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MytnikOutput {
    pub series: ProbeSeries,
    pub qv: Option<QvTrajectory>,
}

/// `∬ q(x, y) φ(x) φ(y) X(dx) X(dy)` with `X` binned on the environment grid.
pub fn q_term(q: &[f64], grid: &TorusGrid, weights: &[(usize, f64)]) -> f64 {
    let n = grid.n_cells();
    let mut m = vec![0.0; n];
    for &(c, w) in weights {
        m[c] += w;
    }
    let nz: Vec<usize> = (0..n).filter(|&c| m[c] != 0.0).collect();
    let mut acc = 0.0;
    for &a in &nz {
        for &b in &nz {
            acc += q[a * n + b] * m[a] * m[b];
        }
    }
    acc
}

pub fn run_mytnik_brw(run: &MytnikRun, seed: u64) -> Result<MytnikOutput> {
    let n = run.n as f64;
    if run.n < 4 || !(run.kappa >= 0.0) || 4.0 * run.kappa * run.kappa > n {
        return Err(Error::param(format!(
            "need n >= max(4, 4κ²), got n={} κ={}",
            run.n, run.kappa
        )));
    }
    if run.env.spec.kind != EnvKind::GaussianThreshold {
        return Err(Error::param("the branching random walk needs a gaussian-threshold field"));
    }
    let grid = run
        .env
        .grid
        .ok_or_else(|| Error::param("the branching random walk needs a gridded environment"))?;
    if !(run.horizon > 0.0) {
        return Err(Error::param("horizon must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let mut env_rng = rng_from_seed(substream(seed, 2));
    let dt = 1.0 / n;
    let n0 = poisson_count(n * run.init.mass, &mut rng);
    let mut ps: Vec<Vec<f64>> = (0..n0).map(|_| run.init.sample_position(&grid, &mut rng)).collect();
    let times = observation_grid(run.horizon, run.n_obs);
    let generations = (run.horizon * n).round() as usize;
    let mut series = ProbeSeries::new(times.clone(), run.probes.len());
    let q = run.qv_probe.as_ref().map(|_| run.env.q_matrix().expect("gridded"));
    let mut qv = run.qv_probe.as_ref().map(|_| QvTrajectory::default());

    let record = |series: &mut ProbeSeries, ps: &[Vec<f64>]| {
        let r = run.probes.iter().map(|phi| gamma_probe(&grid, ps, n, phi)).collect();
        series.push(ps.len() as f64 / n, r);
    };
    let record_qv = |qv: &mut Option<QvTrajectory>, ps: &[Vec<f64>], t: f64| -> Result<()> {
        if let (Some(traj), Some(phi), Some(q)) = (qv.as_mut(), run.qv_probe.as_ref(), q.as_ref()) {
            let mut x_phi = 0.0;
            let mut x_phi2 = 0.0;
            let mut x_lap = 0.0;
            let mut weights = Vec::with_capacity(ps.len());
            for x in ps {
                let v = phi.eval(&grid, x);
                x_phi += v;
                x_phi2 += v * v;
                x_lap += phi.laplacian(&grid, x);
                weights.push((grid.cell_of(x)?, v / n));
            }
            traj.times.push(t);
            traj.readout.push(x_phi / n);
            traj.drift.push(0.5 * x_lap / n);
            traj.square_term.push(x_phi2 / n);
            traj.q_term.push(q_term(q, &grid, &weights));
        }
        Ok(())
    };

    let mut env_state = run.env.initial(&mut env_rng);
    record(&mut series, &ps);
    record_qv(&mut qv, &ps, 0.0)?;
    let mut next_obs = 1;
    for k in 1..=generations {
        let t = k as f64 * dt;
        let mut next = Vec::with_capacity(ps.len() + 16);
        for x in ps.drain(..) {
            let zeta = match run.frozen {
                Some(z) => z,
                None => run.env.query(&env_state, &x)?,
            };
            if rng.random::<f64>() < split_probability(n, run.kappa, zeta) {
                next.push(x.clone());
                next.push(x);
            }
        }
        ps = next;
        for x in ps.iter_mut() {
            brownian_move(&grid, x, dt, &mut rng);
        }
        env_state = run.env.resample(&env_state, t, &mut env_rng);
        if ps.len() > EXPLOSION_GUARD {
            series.status = RunStatus::Exploded;
        }
        if series.status == RunStatus::Completed {
            record_qv(&mut qv, &ps, t)?;
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
    Ok(MytnikOutput { series, qv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::EnvSpec;
    use crate::rng::replicate_seed;
    use crate::spatial::qv::qv_decomposition_check;
    use crate::stats::summarize;

    fn env() -> Environment {
        Environment::new(EnvSpec::gaussian(2.0, 0.0), Some(TorusGrid::new(8.0, 64, 1).unwrap())).unwrap()
    }

    fn run(env: &Environment, n: usize) -> MytnikRun<'_> {
        MytnikRun {
            n,
            kappa: 1.0,
            env,
            init: SpatialInit {
                mass: 1.0,
                center: vec![4.0],
                half_width: 0.25,
            },
            horizon: 1.0,
            n_obs: 4,
            probes: vec![Probe::constant()],
            qv_probe: None,
            frozen: None,
        }
    }

    #[test]
    fn split_probability_boundary() {
        assert_eq!(split_probability(4.0, 1.0, 1), 1.0);
        assert_eq!(split_probability(4.0, 1.0, -1), 0.0);
        assert!((split_probability(100.0, 1.0, 1) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn forced_field_at_n4_doubles_every_generation() {
        let e = env();
        let mut r = run(&e, 4);
        r.frozen = Some(1);
        r.horizon = 1.0;
        r.n_obs = 1;
        let out = run_mytnik_brw(&r, 1).unwrap();
        // 4 generations of certain splitting
        assert!((out.series.total[1] - 16.0 * out.series.total[0]).abs() < 1e-9);
        r.n = 3;
        assert!(run_mytnik_brw(&r, 1).is_err());
    }

    #[test]
    fn global_field_is_rejected() {
        let e = Environment::global(1.0);
        assert!(run_mytnik_brw(&run(&e, 100), 0).is_err());
    }

    #[test]
    fn total_mass_is_constant_in_mean() {
        let e = env();
        let r = run(&e, 100);
        let finals: Vec<f64> = (0..400)
            .map(|i| *run_mytnik_brw(&r, replicate_seed(3, i)).unwrap().series.total.last().unwrap())
            .collect();
        let s = summarize(&finals).unwrap();
        assert!((s.mean - 1.0).abs() < 3.0 * s.se, "{s:?}");
    }

    #[test]
    fn q_term_of_point_mass_is_its_square() {
        let g = TorusGrid::new(8.0, 64, 1).unwrap();
        let e = env();
        let q = e.q_matrix().unwrap();
        assert!((q_term(&q, &g, &[(3, 0.5), (3, 0.25)]) - 0.5625).abs() < 1e-12);
    }

    #[test]
    fn realized_qv_matches_both_terms() {
        // κ = 1/2: QV = ∫X(φ²) + ∫∬ q φφ XX up to 1/n
        let e = env();
        let mut r = run(&e, 200);
        r.kappa = 0.5;
        r.horizon = 0.25;
        r.init.mass = 2.0;
        r.qv_probe = Some(Probe::constant());
        let ens: Vec<QvTrajectory> = (0..500)
            .map(|i| run_mytnik_brw(&r, replicate_seed(4, i)).unwrap().qv.unwrap())
            .collect();
        let rep = qv_decomposition_check(&ens, 0.5, 1.0).unwrap();
        assert!(rep.rel_err.abs() < 0.15, "{rep:?}");
        assert!(rep.rel_err_no_q > 0.25, "{rep:?}");
    }
}
