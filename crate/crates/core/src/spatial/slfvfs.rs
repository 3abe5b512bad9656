//! Density-valued SLFVFS on the torus.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::TorusGrid;
use super::probe::{integrate_cells, Probe};
use super::ProbeSeries;
use crate::environment::{EnvState, Environment};
use crate::limits::SpatialInit;
use crate::lookdown::{EventKind, SelectionSpec};
use crate::projected::parent_rare_probability;
use crate::rng::{rng_from_seed, substream};
use crate::trajectory::{observation_grid, RunStatus};
use crate::{Error, Result};

/// Rare-type frequency per cell, with local population density `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialDensity {
    pub w: Vec<f64>,
    pub k: f64,
}

impl SpatialDensity {
    pub fn new(w: Vec<f64>, k: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::param(format!("K must be positive, got {k}")));
        }
        if w.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::param("cell frequencies must lie in [0, 1]"));
        }
        Ok(Self { w, k })
    }

    /// `<X, φ>` with `X = K w`.
    pub fn readout(&self, grid: &TorusGrid, phi_cells: &[f64]) -> f64 {
        self.k * integrate_cells(grid, &self.w, phi_cells)
    }

    pub fn mass(&self, grid: &TorusGrid) -> f64 {
        self.k * grid.cell_volume() * self.w.iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialEvent {
    pub t: f64,
    pub center: Vec<f64>,
    /// `r/M`
    pub radius: f64,
    /// `u/J`
    pub impact: f64,
    pub kind: EventKind,
}

impl SpatialEvent {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !(self.impact > 0.0) || !(self.impact < 1.0) {
            return Err(Error::param(format!(
                "need radius > 0 and impact in (0, 1), got {} and {}",
                self.radius, self.impact
            )));
        }
        Ok(())
    }
}

/// Spatial event rates at one schedule point. Centres arrive at
/// `neutral_density` (resp. `selective_density`) per unit volume and time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialRates {
    pub neutral_density: f64,
    pub selective_density: f64,
    pub env_rate: f64,
    pub radius: f64,
    pub impact: f64,
    pub k: f64,
}

impl SpatialRates {
    /// `N M^d`, `(N Ŝ s / S) M^d`, `Ŝ²`, radius `r/M`, impact `u/J`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_params(
        n: f64,
        j: f64,
        k: f64,
        m: f64,
        s_big: f64,
        s_hat: f64,
        u: f64,
        r: f64,
        s: f64,
        dim: usize,
    ) -> Result<Self> {
        for (name, v) in [("N", n), ("J", j), ("K", k), ("M", m), ("S", s_big), ("u", u), ("r", r)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(s_hat >= 0.0) || !(0.0..=1.0).contains(&s) {
            return Err(Error::param("Ŝ must be >= 0 and s in [0, 1]"));
        }
        let md = m.powi(dim as i32);
        let rates = Self {
            neutral_density: n * md,
            selective_density: n * s_hat * s / s_big * md,
            env_rate: s_hat * s_hat,
            radius: r / m,
            impact: u / j,
            k,
        };
        rates.validate()?;
        Ok(rates)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.neutral_density,
            self.selective_density,
            self.env_rate,
            self.radius,
            self.impact,
            self.k,
        ];
        if all.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::param("rates must be finite and non-negative"));
        }
        if !(self.impact < 1.0) || !(self.radius > 0.0) || !(self.k > 0.0) {
            return Err(Error::param("need impact < 1, radius > 0, K > 0"));
        }
        Ok(())
    }

    /// Checks that a ball covers at least `4^d` cells.
    pub fn check_grid(&self, grid: &TorusGrid) -> Result<()> {
        if grid.cell_size() > self.radius / 4.0 {
            return Err(Error::param(format!(
                "cell size {} exceeds radius/4 = {}",
                grid.cell_size(),
                self.radius / 4.0
            )));
        }
        if 2.0 * self.radius >= grid.side_length {
            return Err(Error::param("event ball wraps around the torus"));
        }
        Ok(())
    }
}

/// Uniform point in the torus ball `B(center, radius)`.
pub fn uniform_in_ball<R: Rng + ?Sized>(
    grid: &TorusGrid,
    center: &[f64],
    radius: f64,
    rng: &mut R,
) -> Vec<f64> {
    loop {
        let d: Vec<f64> = center
            .iter()
            .map(|_| radius * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        if d.iter().map(|x| x * x).sum::<f64>() <= radius * radius {
            return center.iter().zip(&d).map(|(c, x)| grid.wrap(c + x)).collect();
        }
    }
}

/// Uniform point on the whole torus.
pub fn uniform_on_torus<R: Rng + ?Sized>(grid: &TorusGrid, rng: &mut R) -> Vec<f64> {
    (0..grid.dim)
        .map(|_| grid.side_length * rng.random::<f64>())
        .collect()
}

/// `w <- w + impact (1{parent rare} - w)` on the given cells.
pub fn apply_update(field: &mut SpatialDensity, cells: &[usize], impact: f64, parent_rare: bool) {
    let target = if parent_rare { 1.0 } else { 0.0 };
    for &c in cells {
        let w = field.w[c];
        field.w[c] = (w + impact * (target - w)).clamp(0.0, 1.0);
    }
}

/// One event in place; returns the change in `Σ w` over the covered cells.
#[allow(clippy::too_many_arguments)]
pub fn slfvfs_event_in_place<R: Rng + ?Sized>(
    field: &mut SpatialDensity,
    grid: &TorusGrid,
    ev: &SpatialEvent,
    env: &Environment,
    state: &EnvState,
    spec: &SelectionSpec,
    rng: &mut R,
) -> Result<f64> {
    let loc = uniform_in_ball(grid, &ev.center, ev.radius, rng);
    let w_parent = field.w[grid.cell_of(&loc)?];
    let zeta = env.query(state, &loc)?;
    let p = parent_rare_probability(w_parent, ev.kind, zeta, spec);
    let rare = rng.random::<f64>() < p;
    let cells = grid.cells_in_ball(&ev.center, ev.radius);
    let before: f64 = cells.iter().map(|&c| field.w[c]).sum();
    apply_update(field, &cells, ev.impact, rare);
    let after: f64 = cells.iter().map(|&c| field.w[c]).sum();
    Ok(after - before)
}

/// Seeded single event returning the new density.
#[allow(clippy::too_many_arguments)]
pub fn slfvfs_event(
    field: &SpatialDensity,
    grid: &TorusGrid,
    ev: &SpatialEvent,
    env: &Environment,
    state: &EnvState,
    spec: &SelectionSpec,
    seed: u64,
) -> Result<SpatialDensity> {
    ev.validate()?;
    let mut next = field.clone();
    let mut rng = rng_from_seed(seed);
    slfvfs_event_in_place(&mut next, grid, ev, env, state, spec, &mut rng)?;
    Ok(next)
}

/// Cell frequencies for an initial measure: the box mass is spread evenly
/// over the cells whose centres lie in the box.
pub fn initial_density(grid: &TorusGrid, init: &SpatialInit, k: f64) -> Result<Vec<f64>> {
    if init.center.len() != grid.dim {
        return Err(Error::param("initial centre has the wrong dimension"));
    }
    let inside: Vec<usize> = (0..grid.n_cells())
        .filter(|&c| {
            let x = grid.cell_center(c);
            x.iter()
                .zip(&init.center)
                .all(|(&xi, &ci)| grid.delta(xi, ci).abs() <= init.half_width)
        })
        .collect();
    if inside.is_empty() {
        return Err(Error::param("initial box contains no cell centre"));
    }
    let w = init.mass / (k * inside.len() as f64 * grid.cell_volume());
    if w > 1.0 {
        return Err(Error::param(format!(
            "initial frequency {w} exceeds 1; widen the box or raise K"
        )));
    }
    let mut out = vec![0.0; grid.n_cells()];
    for c in inside {
        out[c] = w;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SlfvfsRun<'a> {
    pub rates: SpatialRates,
    pub selection: SelectionSpec,
    pub env: &'a Environment,
    pub grid: TorusGrid,
    /// Initial rare frequency per cell.
    pub init: Vec<f64>,
    pub horizon: f64,
    pub n_obs: usize,
    pub probes: Vec<Probe>,
    /// Stop once the total mass exceeds this.
    pub guard: f64,
}

/// Event-driven run; readouts are `<K w, φ>` for each probe.
pub fn run_slfvfs(run: &SlfvfsRun, seed: u64) -> Result<ProbeSeries> {
    run.rates.validate()?;
    run.selection.validate()?;
    run.rates.check_grid(&run.grid)?;
    if !(run.horizon > 0.0) {
        return Err(Error::param("horizon must be positive"));
    }
    let grid = run.grid;
    let mut field = SpatialDensity::new(run.init.clone(), run.rates.k)?;
    if field.w.len() != grid.n_cells() {
        return Err(Error::param("initial density does not match the grid"));
    }
    let mut rng = rng_from_seed(seed);
    let mut env_rng = rng_from_seed(substream(seed, 1));
    let mut env_state = run.env.initial(&mut env_rng);
    let vol = grid.volume();
    let rate_n = run.rates.neutral_density * vol;
    let rate_s = run.rates.selective_density * vol;
    let total = rate_n + rate_s;
    let phis: Vec<Vec<f64>> = run.probes.iter().map(|p| p.on_cells(&grid)).collect();
    let times = observation_grid(run.horizon, run.n_obs);
    let mut series = ProbeSeries::new(times.clone(), run.probes.len());
    let scale = run.rates.k * grid.cell_volume();
    let mut sum_w: f64 = field.w.iter().sum();
    let record = |series: &mut ProbeSeries, field: &SpatialDensity| {
        let r = phis.iter().map(|phi| field.readout(&grid, phi)).collect();
        series.push(field.mass(&grid), r);
    };

    let mut t = 0.0;
    for &obs in &times {
        while total > 0.0 && series.status == RunStatus::Completed {
            let dt = -(1.0 - rng.random::<f64>()).ln() / total;
            if t + dt > obs {
                // memoryless: restart the clock at `obs`
                t = obs;
                break;
            }
            t += dt;
            env_state = run.env.advance(&env_state, t, &mut env_rng)?;
            let kind = if rng.random::<f64>() * total < rate_n {
                EventKind::Neutral
            } else {
                EventKind::Selective
            };
            let ev = SpatialEvent {
                t,
                center: uniform_on_torus(&grid, &mut rng),
                radius: run.rates.radius,
                impact: run.rates.impact,
                kind,
            };
            sum_w += slfvfs_event_in_place(
                &mut field,
                &grid,
                &ev,
                run.env,
                &env_state,
                &run.selection,
                &mut rng,
            )?;
            if scale * sum_w > run.guard {
                series.status = RunStatus::Stopped;
            }
        }
        record(&mut series, &field);
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::EnvSpec;
    use crate::rng::replicate_seed;
    use crate::stats::{pooled_se, summarize};
    use proptest::prelude::*;

    fn grid() -> TorusGrid {
        TorusGrid::new(2.0, 64, 1).unwrap()
    }

    fn spec() -> SelectionSpec {
        SelectionSpec::new([0.6, 1.4], [1.0, 1.0], 0.5).unwrap()
    }

    fn event(center: f64, kind: EventKind) -> SpatialEvent {
        SpatialEvent {
            t: 0.0,
            center: vec![center],
            radius: 0.2,
            impact: 0.3,
            kind,
        }
    }

    #[test]
    fn absorbing_fields_are_unchanged() {
        let g = grid();
        let env = Environment::global(0.0);
        let st = env.initial(&mut rng_from_seed(0));
        for v in [0.0, 1.0] {
            let f = SpatialDensity::new(vec![v; g.n_cells()], 10.0).unwrap();
            for seed in 0..20 {
                for kind in [EventKind::Neutral, EventKind::Selective] {
                    let next = slfvfs_event(&f, &g, &event(1.0, kind), &env, &st, &spec(), seed).unwrap();
                    assert_eq!(next, f);
                }
            }
        }
    }

    #[test]
    fn forced_rare_update_on_one_cell() {
        let g = grid();
        let mut f = SpatialDensity::new(vec![0.4; g.n_cells()], 10.0).unwrap();
        apply_update(&mut f, &[5], 0.5, true);
        assert!((f.w[5] - 0.7).abs() < 1e-12);
        assert!(f.w.iter().enumerate().all(|(i, &w)| i == 5 || w == 0.4));
    }

    #[test]
    fn initial_density_has_requested_mass() {
        let g = grid();
        let init = SpatialInit {
            mass: 2.0,
            center: vec![1.0],
            half_width: 0.2,
        };
        let w = initial_density(&g, &init, 50.0).unwrap();
        let f = SpatialDensity::new(w, 50.0).unwrap();
        assert!((f.mass(&g) - 2.0).abs() < 1e-12);
        assert!(initial_density(&g, &init, 1.0).is_err());
    }

    fn run_for<'a>(env: &'a Environment, init: Vec<f64>, density: f64) -> SlfvfsRun<'a> {
        SlfvfsRun {
            rates: SpatialRates {
                neutral_density: density,
                selective_density: 0.0,
                env_rate: 0.0,
                radius: 0.15,
                impact: 0.2,
                k: 50.0,
            },
            selection: SelectionSpec::neutral(),
            env,
            grid: grid(),
            init,
            horizon: 1.0,
            n_obs: 4,
            probes: vec![Probe::constant()],
            guard: 1e9,
        }
    }

    fn box_init() -> Vec<f64> {
        let init = SpatialInit {
            mass: 2.0,
            center: vec![1.0],
            half_width: 0.2,
        };
        initial_density(&grid(), &init, 50.0).unwrap()
    }

    #[test]
    fn zero_rate_keeps_field_constant() {
        let env = Environment::global(0.0);
        let s = run_slfvfs(&run_for(&env, box_init(), 0.0), 3).unwrap();
        assert!(s.total.iter().all(|&m| (m - 2.0).abs() < 1e-12));
        assert_eq!(s.total.len(), 5);
    }

    #[test]
    fn run_is_deterministic() {
        let env = Environment::global(1.0);
        let run = run_for(&env, box_init(), 100.0);
        assert_eq!(run_slfvfs(&run, 9).unwrap(), run_slfvfs(&run, 9).unwrap());
    }

    #[test]
    fn grid_too_coarse_is_rejected() {
        let env = Environment::global(0.0);
        let mut run = run_for(&env, vec![0.0; 8], 1.0);
        run.grid = TorusGrid::new(2.0, 8, 1).unwrap();
        assert!(run_slfvfs(&run, 0).is_err());
    }

    #[test]
    fn neutral_total_mass_is_conserved_in_mean() {
        let env = Environment::global(0.0);
        let run = run_for(&env, box_init(), 200.0);
        let finals: Vec<f64> = (0..400)
            .map(|i| *run_slfvfs(&run, replicate_seed(5, i)).unwrap().total.last().unwrap())
            .collect();
        let s = summarize(&finals).unwrap();
        assert!((s.mean - 2.0).abs() < 3.0 * s.se, "{s:?}");
        assert!(s.var > 0.0);
    }

    #[test]
    fn statistics_are_translation_invariant() {
        let env = Environment::new(EnvSpec::gaussian(0.5, 1.0), Some(grid())).unwrap();
        let mut run = run_for(&env, vec![0.3; 64], 100.0);
        run.selection = spec();
        run.rates.selective_density = 100.0;
        run.probes = vec![
            Probe::GaussianBump { center: vec![0.5], width: 0.2 },
            Probe::GaussianBump { center: vec![1.3], width: 0.2 },
        ];
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for i in 0..200 {
            let s = run_slfvfs(&run, replicate_seed(8, i)).unwrap();
            a.push(*s.probes[0].last().unwrap());
            b.push(*s.probes[1].last().unwrap());
        }
        let (sa, sb) = (summarize(&a).unwrap(), summarize(&b).unwrap());
        assert!((sa.mean - sb.mean).abs() < 3.0 * pooled_se(&sa, &sb));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn events_are_local_and_keep_bounds(
            w in prop::collection::vec(0.0f64..=1.0, 64),
            centers in prop::collection::vec(0.0f64..2.0, 1..20),
            seed in 0u64..1000,
        ) {
            let g = grid();
            let env = Environment::new(EnvSpec::gaussian(0.5, 0.0), Some(g)).unwrap();
            let mut rng = rng_from_seed(seed);
            let st = env.initial(&mut rng);
            let mut f = SpatialDensity::new(w, 10.0).unwrap();
            for (i, &c) in centers.iter().enumerate() {
                let kind = if i % 2 == 0 { EventKind::Neutral } else { EventKind::Selective };
                let ev = event(c, kind);
                let before = f.clone();
                slfvfs_event_in_place(&mut f, &g, &ev, &env, &st, &spec(), &mut rng).unwrap();
                let inside = g.cells_in_ball(&ev.center, ev.radius);
                for cell in 0..g.n_cells() {
                    if !inside.contains(&cell) {
                        prop_assert_eq!(f.w[cell].to_bits(), before.w[cell].to_bits());
                    }
                }
                prop_assert!(f.w.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }
    }
}
