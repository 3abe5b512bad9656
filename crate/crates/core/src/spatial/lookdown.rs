//! Spatial lookdown: the level maps act only inside the event ball.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::TorusGrid;
use super::probe::Probe;
use super::slfvfs::{uniform_in_ball, uniform_on_torus, SpatialEvent, SpatialRates};
use super::ProbeSeries;
use crate::environment::{EnvState, Environment};
use crate::lookdown::{event_core, EventCounters, EventKind, EventSetup, LevelStore, SelectionSpec, Type};
use crate::point_process::{poisson_count, uniform_points};
use crate::rng::{rng_from_seed, substream};
use crate::trajectory::{observation_grid, RunStatus};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialIndividual {
    pub level: f64,
    pub ty: Type,
    pub position: Vec<f64>,
}

/// Individuals with levels in `[0, ceiling]`; `k` is the population density
/// per unit volume and unit level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialLevelConfig {
    pub individuals: Vec<SpatialIndividual>,
    pub ceiling: f64,
    pub k: f64,
}

impl SpatialLevelConfig {
    /// Conditionally Poisson start from cell frequencies `w`: rare individuals
    /// at intensity `K w` and common ones at `K (1 - w)`, uniform in each cell.
    pub fn poisson<R: Rng + ?Sized>(
        grid: &TorusGrid,
        w: &[f64],
        k: f64,
        ceiling: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if w.len() != grid.n_cells() || w.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::param("need one frequency in [0, 1] per cell"));
        }
        let h = grid.cell_size();
        let vol = grid.cell_volume();
        let mut individuals = Vec::new();
        for (c, &wc) in w.iter().enumerate() {
            let corner: Vec<f64> = grid.axes(c).iter().map(|&i| i as f64 * h).collect();
            for (ty, dens) in [(Type::Rare, wc), (Type::Common, 1.0 - wc)] {
                let n = poisson_count(k * dens * vol * ceiling, rng);
                for _ in 0..n {
                    individuals.push(SpatialIndividual {
                        level: ceiling * rng.random::<f64>(),
                        ty,
                        position: corner.iter().map(|&x| x + h * rng.random::<f64>()).collect(),
                    });
                }
            }
        }
        Ok(Self {
            individuals,
            ceiling,
            k,
        })
    }

    /// `γ` readout: `Σ_rare φ(x_i) / Λ`.
    pub fn rare_readout(&self, grid: &TorusGrid, phi: &Probe) -> f64 {
        self.individuals
            .iter()
            .filter(|i| i.ty == Type::Rare)
            .map(|i| phi.eval(grid, &i.position))
            .sum::<f64>()
            / self.ceiling
    }

    pub fn rare_count(&self) -> usize {
        self.individuals.iter().filter(|i| i.ty == Type::Rare).count()
    }
}

/// Volume of the unit ball in `d` dimensions.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => std::f64::consts::TAU / d as f64 * unit_ball_volume(d - 2),
    }
}

/// Individuals inside one event ball. Fresh entries get positions after
/// the level update so that the level draws match the non-spatial event.
struct BallStore {
    levels: [Vec<f64>; 2],
    positions: [Vec<Option<Vec<f64>>>; 2],
}

fn slot(ty: Type) -> usize {
    match ty {
        Type::Rare => 0,
        Type::Common => 1,
    }
}

impl LevelStore for BallStore {
    fn levels(&self, ty: Type) -> &[f64] {
        &self.levels[slot(ty)]
    }

    fn levels_mut(&mut self, ty: Type) -> &mut [f64] {
        &mut self.levels[slot(ty)]
    }

    fn remove(&mut self, ty: Type, idx: usize) {
        self.levels[slot(ty)].remove(idx);
        self.positions[slot(ty)].remove(idx);
    }

    fn truncate(&mut self, ty: Type, keep: usize) {
        self.levels[slot(ty)].truncate(keep);
        self.positions[slot(ty)].truncate(keep);
    }

    fn append_fresh(&mut self, ty: Type, levels: Vec<f64>) {
        let n = levels.len();
        self.levels[slot(ty)].extend(levels);
        self.positions[slot(ty)].extend(std::iter::repeat_n(None, n));
    }

    fn merge_offspring(&mut self, ty: Type, offspring: &[f64]) {
        let i = slot(ty);
        let (merged, from_offspring) = crate::lookdown::merge_sorted(&self.levels[i], offspring);
        let mut old = std::mem::take(&mut self.positions[i]).into_iter();
        self.positions[i] = from_offspring
            .into_iter()
            .map(|fresh| if fresh { None } else { old.next().unwrap() })
            .collect();
        self.levels[i] = merged;
    }
}

/// One spatial event in place; `zeta` is the environment at the centre.
#[allow(clippy::too_many_arguments)]
pub fn spatial_lookdown_event_in_place<R: Rng + ?Sized>(
    cfg: &mut SpatialLevelConfig,
    grid: &TorusGrid,
    ev: &SpatialEvent,
    zeta: i8,
    spec: &SelectionSpec,
    rng: &mut R,
    counters: &mut EventCounters,
) {
    let r2 = ev.radius * ev.radius;
    let (inside, outside): (Vec<SpatialIndividual>, Vec<SpatialIndividual>) =
        std::mem::take(&mut cfg.individuals)
            .into_iter()
            .partition(|i| grid.dist2(&i.position, &ev.center) <= r2);
    let mut store = BallStore {
        levels: [Vec::new(), Vec::new()],
        positions: [Vec::new(), Vec::new()],
    };
    let mut inside = inside;
    inside.sort_by(|a, b| a.level.total_cmp(&b.level));
    for ind in inside {
        store.levels[slot(ind.ty)].push(ind.level);
        store.positions[slot(ind.ty)].push(Some(ind.position));
    }
    let ball = unit_ball_volume(grid.dim) * ev.radius.powi(grid.dim as i32);
    let total = cfg.k * ball;
    let lam = cfg.ceiling;
    let offspring = uniform_points(poisson_count(ev.impact * total * lam, rng), 0.0, lam, rng);
    let setup = EventSetup {
        kind: ev.kind,
        ceiling: lam,
        total_intensity: total,
        impact: ev.impact,
        zeta,
        spec,
    };
    event_core(&mut store, &setup, &offspring, rng, counters);
    cfg.individuals = outside;
    for ty in [Type::Rare, Type::Common] {
        let i = slot(ty);
        for (level, pos) in store.levels[i].iter().zip(store.positions[i].iter_mut()) {
            let position = pos
                .take()
                .unwrap_or_else(|| uniform_in_ball(grid, &ev.center, ev.radius, rng));
            cfg.individuals.push(SpatialIndividual {
                level: *level,
                ty,
                position,
            });
        }
    }
}

/// Seeded event with `ζ` read at the event centre.
pub fn spatial_lookdown_event(
    cfg: &SpatialLevelConfig,
    grid: &TorusGrid,
    ev: &SpatialEvent,
    env: &Environment,
    state: &EnvState,
    spec: &SelectionSpec,
    seed: u64,
) -> Result<SpatialLevelConfig> {
    ev.validate()?;
    let zeta = env.query(state, &ev.center)?;
    let mut next = cfg.clone();
    let mut rng = rng_from_seed(seed);
    let mut counters = EventCounters::default();
    spatial_lookdown_event_in_place(&mut next, grid, ev, zeta, spec, &mut rng, &mut counters);
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct SpatialLookdownRun<'a> {
    pub rates: SpatialRates,
    pub selection: SelectionSpec,
    pub env: &'a Environment,
    pub grid: TorusGrid,
    pub init: Vec<f64>,
    pub ceiling: f64,
    pub horizon: f64,
    pub n_obs: usize,
    pub probes: Vec<Probe>,
    /// Stop once the rare mass exceeds this.
    pub guard: f64,
}

/// Event-driven spatial lookdown; readouts are `γ` of the rare individuals.
pub fn run_spatial_lookdown(run: &SpatialLookdownRun, seed: u64) -> Result<ProbeSeries> {
    run.rates.validate()?;
    run.selection.validate()?;
    run.rates.check_grid(&run.grid)?;
    if !(run.horizon > 0.0) || !(run.ceiling > 0.0) {
        return Err(Error::param("horizon and ceiling must be positive"));
    }
    let grid = run.grid;
    let mut rng = rng_from_seed(seed);
    let mut env_rng = rng_from_seed(substream(seed, 1));
    let mut env_state = run.env.initial(&mut env_rng);
    let mut cfg = SpatialLevelConfig::poisson(&grid, &run.init, run.rates.k, run.ceiling, &mut rng)?;
    let vol = grid.volume();
    let rate_n = run.rates.neutral_density * vol;
    let total = rate_n + run.rates.selective_density * vol;
    let times = observation_grid(run.horizon, run.n_obs);
    let mut series = ProbeSeries::new(times.clone(), run.probes.len());
    let mut counters = EventCounters::default();
    let record = |series: &mut ProbeSeries, cfg: &SpatialLevelConfig| {
        let r = run.probes.iter().map(|phi| cfg.rare_readout(&grid, phi)).collect();
        series.push(cfg.rare_count() as f64 / cfg.ceiling, r);
    };

    let mut t = 0.0;
    for &obs in &times {
        while total > 0.0 && series.status == RunStatus::Completed {
            let dt = -(1.0 - rng.random::<f64>()).ln() / total;
            if t + dt > obs {
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
            let zeta = run.env.query(&env_state, &ev.center)?;
            spatial_lookdown_event_in_place(
                &mut cfg,
                &grid,
                &ev,
                zeta,
                &run.selection,
                &mut rng,
                &mut counters,
            );
            if cfg.rare_count() as f64 / cfg.ceiling > run.guard {
                series.status = RunStatus::Stopped;
            }
        }
        record(&mut series, &cfg);
    }
    Ok(series)
}
