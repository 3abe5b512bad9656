//! Config-driven ensembles: dispatch, parallel replicates, reduction.

mod config;
mod report;

pub use config::{ModelKind, Params, RunConfig};
pub use report::{write_outputs, OutputFiles, Provenance, ReportRow, RunReport, Verdict};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::limits::{
    run_bbmre_direct, run_bbmre_lookdown, run_kr_feller, run_kr_feller_re, run_sbmre_lookdown, BbmreRun, FieldNoise,
    LimitParams, SbmreRun,
};
use crate::lookdown::{default_guard, run_lfvsfe_detailed, LookdownRun, ScaledRates};
use crate::point_process::{laplace_functional_check, CoxDiagnostic};
use crate::projected::{run_diffusion, run_projected, DiffusionKind, DiffusionParams, ProjectedRun};
use crate::rng::replicate_seed;
use crate::scaling::{effective_params, validate_schedule, default_probe_ns, ScheduleReport};
use crate::spatial::lookdown::{run_spatial_lookdown, SpatialLookdownRun};
use crate::spatial::mytnik::{run_mytnik_brw, MytnikRun};
use crate::spatial::slfvfs::{initial_density, run_slfvfs, SlfvfsRun, SpatialRates};
use crate::spatial::{ProbeSeries, TorusGrid};
use crate::stats::{ks_two_sample, pooled_se, summarize, KsResult};
use crate::trajectory::{nearest_index, Trajectory};
use crate::{Error, Result};
use config::need;

/// One replicate: the primary readout in `total`, probe readouts alongside,
/// and the final level configuration for lookdown runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutput {
    pub series: ProbeSeries,
    pub final_levels: Option<Vec<f64>>,
}

impl From<Trajectory> for ReplicateOutput {
    fn from(t: Trajectory) -> Self {
        Self {
            series: ProbeSeries {
                times: t.times,
                total: t.values,
                probes: Vec::new(),
                status: t.status,
            },
            final_levels: None,
        }
    }
}

const DEFAULT_DT: f64 = 1e-3;

fn spatial_setup(cfg: &RunConfig) -> Result<(TorusGrid, Environment)> {
    let grid = need(cfg.grid, "grid")?;
    let spec = need(cfg.env, "env")?;
    Ok((grid, Environment::new(spec, Some(grid))?))
}

fn lookdown_guard(cfg: &RunConfig, x0: f64) -> Result<f64> {
    if let Some(g) = cfg.params.guard {
        return Ok(g);
    }
    if let Some(s) = &cfg.schedule {
        let b = effective_params(s, need(cfg.params.n, "params.n")?)?.b;
        return Ok(default_guard(x0, b, cfg.horizon));
    }
    Ok(match cfg.params.b {
        Some(b) => default_guard(x0, b, cfg.horizon),
        None => f64::INFINITY,
    })
}

/// Builds the model inputs once; `run` is then called per replicate.
enum Prepared {
    Lookdown(LookdownRun),
    Projected(ProjectedRun),
    Diffusion(DiffusionKind, DiffusionParams, f64, f64),
    KrFeller(LimitParams, f64),
    KrFellerRe(LimitParams, f64, f64),
    Bbmre {
        direct: bool,
        params: LimitParams,
        env: Environment,
        grid: TorusGrid,
        frozen: Option<i8>,
        dt: f64,
        n0: usize,
        x0: f64,
    },
    Sbmre {
        params: LimitParams,
        env: Environment,
        noise: FieldNoise,
        dt: f64,
    },
    Slfvfs {
        lookdown: bool,
        rates: SpatialRates,
        env: Environment,
        grid: TorusGrid,
        init: Vec<f64>,
        ceiling: f64,
        guard: f64,
    },
    Mytnik {
        env: Environment,
    },
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let p = &cfg.params;
    let limit = || -> Result<LimitParams> {
        Ok(LimitParams {
            a: need(p.a, "params.a")?,
            b: p.b.unwrap_or(0.0),
            lambda: need(p.lambda, "params.lambda")?,
        })
    };
    Ok(match cfg.model {
        ModelKind::LfvsfeLookdown | ModelKind::LfvsfeProjected => {
            let sp = cfg.schedule_point()?;
            let rates = ScaledRates::from_params(sp.n, sp.j, sp.k, sp.s_big, sp.s_hat, sp.u, sp.s)?;
            let x0 = need(p.x0, "params.x0")?;
            let guard = lookdown_guard(cfg, x0)?;
            if cfg.model == ModelKind::LfvsfeLookdown {
                Prepared::Lookdown(LookdownRun {
                    rates,
                    selection: cfg.selection(),
                    x0,
                    ceiling: need(p.ceiling.or(p.lambda), "params.ceiling")?,
                    horizon: cfg.horizon,
                    n_obs: cfg.n_obs,
                    guard,
                })
            } else {
                Prepared::Projected(ProjectedRun {
                    rates,
                    selection: cfg.selection(),
                    x0,
                    horizon: cfg.horizon,
                    n_obs: cfg.n_obs,
                    guard,
                })
            }
        }
        ModelKind::Feller | ModelKind::FellerRe => {
            let kind = if cfg.model == ModelKind::Feller {
                DiffusionKind::Feller
            } else {
                DiffusionKind::FellerRe
            };
            let dp = DiffusionParams {
                a: need(p.a, "params.a")?,
                b: p.b.unwrap_or(0.0),
                x0: need(p.x0, "params.x0")?,
            };
            dp.validate()?;
            Prepared::Diffusion(kind, dp, p.dt.unwrap_or(DEFAULT_DT), p.guard.unwrap_or(f64::INFINITY))
        }
        ModelKind::KrFeller => Prepared::KrFeller(limit()?, need(p.x0, "params.x0")?),
        ModelKind::KrFellerRe => {
            Prepared::KrFellerRe(limit()?, need(p.x0, "params.x0")?, p.dt.unwrap_or(DEFAULT_DT))
        }
        ModelKind::BbmreDirect | ModelKind::BbmreLookdown => {
            let (grid, env) = spatial_setup(cfg)?;
            let params = limit()?;
            let x0 = p.x0.unwrap_or(1.0);
            Prepared::Bbmre {
                direct: cfg.model == ModelKind::BbmreDirect,
                params,
                env,
                grid,
                frozen: p.frozen,
                dt: p.dt.unwrap_or(DEFAULT_DT),
                n0: p.n0.unwrap_or((params.lambda * x0).round() as usize),
                x0,
            }
        }
        ModelKind::SbmreLookdown => {
            let (_, env) = spatial_setup(cfg)?;
            need(p.init.as_ref(), "params.init")?;
            let noise = FieldNoise::new(&env)?;
            Prepared::Sbmre {
                params: limit()?,
                env,
                noise,
                dt: p.dt.unwrap_or(DEFAULT_DT),
            }
        }
        ModelKind::Slfvfs | ModelKind::SlfvfsLookdown => {
            let (grid, env) = spatial_setup(cfg)?;
            let sp = cfg.schedule_point()?;
            let rates =
                SpatialRates::from_params(sp.n, sp.j, sp.k, sp.m, sp.s_big, sp.s_hat, sp.u, sp.r, sp.s, grid.dim)?;
            let init = initial_density(&grid, need(p.init.as_ref(), "params.init")?, sp.k)?;
            let lookdown = cfg.model == ModelKind::SlfvfsLookdown;
            Prepared::Slfvfs {
                lookdown,
                rates,
                env,
                grid,
                init,
                ceiling: if lookdown {
                    need(p.ceiling.or(p.lambda), "params.ceiling")?
                } else {
                    0.0
                },
                guard: p.guard.unwrap_or(f64::INFINITY),
            }
        }
        ModelKind::MytnikBrw => {
            let (_, env) = spatial_setup(cfg)?;
            need(p.n, "params.n")?;
            need(p.init.as_ref(), "params.init")?;
            Prepared::Mytnik { env }
        }
    })
}

fn run_prepared(cfg: &RunConfig, prep: &Prepared, seed: u64) -> Result<ReplicateOutput> {
    let p = &cfg.params;
    Ok(match prep {
        Prepared::Lookdown(run) => {
            let out = run_lfvsfe_detailed(run, seed)?;
            let mut r = ReplicateOutput::from(out.trajectory);
            r.final_levels = Some(out.final_config.levels());
            r
        }
        Prepared::Projected(run) => run_projected(run, seed)?.into(),
        Prepared::Diffusion(kind, dp, dt, guard) => {
            run_diffusion(*kind, dp, cfg.horizon, *dt, cfg.n_obs, *guard, seed)?.into()
        }
        Prepared::KrFeller(lp, x0) => run_kr_feller(lp, *x0, cfg.horizon, cfg.n_obs, seed)?.into(),
        Prepared::KrFellerRe(lp, x0, dt) => run_kr_feller_re(lp, *x0, cfg.horizon, *dt, cfg.n_obs, seed)?.into(),
        Prepared::Bbmre {
            direct,
            params,
            env,
            grid,
            frozen,
            dt,
            n0,
            x0,
        } => {
            let run = BbmreRun {
                params: *params,
                env,
                grid: *grid,
                frozen: *frozen,
                horizon: cfg.horizon,
                dt: *dt,
                n_obs: cfg.n_obs,
            };
            let out = if *direct {
                run_bbmre_direct(&run, *n0, seed)?
            } else {
                run_bbmre_lookdown(&run, *x0, seed)?
            };
            out.trajectory.into()
        }
        Prepared::Sbmre { params, env, noise, dt } => {
            let run = SbmreRun {
                params: *params,
                env,
                noise,
                init: p.init.clone().expect("checked in prepare"),
                horizon: cfg.horizon,
                dt: *dt,
                n_obs: cfg.n_obs,
                probes: cfg.probes.clone(),
            };
            ReplicateOutput {
                series: run_sbmre_lookdown(&run, seed)?,
                final_levels: None,
            }
        }
        Prepared::Slfvfs {
            lookdown,
            rates,
            env,
            grid,
            init,
            ceiling,
            guard,
        } => {
            let series = if *lookdown {
                run_spatial_lookdown(
                    &SpatialLookdownRun {
                        rates: *rates,
                        selection: cfg.selection(),
                        env,
                        grid: *grid,
                        init: init.clone(),
                        ceiling: *ceiling,
                        horizon: cfg.horizon,
                        n_obs: cfg.n_obs,
                        probes: cfg.probes.clone(),
                        guard: *guard,
                    },
                    seed,
                )?
            } else {
                run_slfvfs(
                    &SlfvfsRun {
                        rates: *rates,
                        selection: cfg.selection(),
                        env,
                        grid: *grid,
                        init: init.clone(),
                        horizon: cfg.horizon,
                        n_obs: cfg.n_obs,
                        probes: cfg.probes.clone(),
                        guard: *guard,
                    },
                    seed,
                )?
            };
            ReplicateOutput {
                series,
                final_levels: None,
            }
        }
        Prepared::Mytnik { env } => {
            let run = MytnikRun {
                n: p.n.expect("checked in prepare").round() as usize,
                kappa: p.kappa.unwrap_or(1.0),
                env,
                init: p.init.clone().expect("checked in prepare"),
                horizon: cfg.horizon,
                n_obs: cfg.n_obs,
                probes: cfg.probes.clone(),
                qv_probe: None,
                frozen: p.frozen,
            };
            ReplicateOutput {
                series: run_mytnik_brw(&run, seed)?.series,
                final_levels: None,
            }
        }
    })
}

/// Single replicate `index` of `cfg`.
pub fn run_replicate(cfg: &RunConfig, index: u64) -> Result<ReplicateOutput> {
    let prep = prepare(cfg)?;
    run_prepared(cfg, &prep, replicate_seed(cfg.base_seed, index))
}

/// All replicates, in replicate-index order whatever the completion order.
pub fn run_ensemble(cfg: &RunConfig) -> Result<Vec<ReplicateOutput>> {
    cfg.check()?;
    let prep = prepare(cfg)?;
    let job = || -> Result<Vec<ReplicateOutput>> {
        (0..cfg.replicates as u64)
            .into_par_iter()
            .map(|i| run_prepared(cfg, &prep, replicate_seed(cfg.base_seed, i)))
            .collect()
    };
    match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(job),
        None => job(),
    }
}

/// Runs the ensemble and reduces it to per-time summaries.
pub fn simulate(cfg: &RunConfig) -> Result<RunReport> {
    let outs = run_ensemble(cfg)?;
    Ok(RunReport::from_ensemble(cfg, &outs))
}

/// Schedule report for `cfg.schedule` at `cfg.probe_ns` (default `10^3..10^17`).
pub fn validate(cfg: &RunConfig) -> Result<ScheduleReport> {
    let sched = cfg
        .schedule
        .as_ref()
        .ok_or_else(|| Error::Config("validate needs a [schedule] table".into()))?;
    let ns = cfg.probe_ns.clone().unwrap_or_else(default_probe_ns);
    validate_schedule(sched, &ns)
}

/// Which marginal [`compare`] tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    /// Primary readout at the observation point closest to `t`.
    Total { t: f64 },
    /// Probe `index` at the observation point closest to `t`.
    Probe { index: usize, t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub statistic: Statistic,
    pub ks: KsResult,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `|mean_a - mean_b| / pooled SE`
    pub z: f64,
    pub alpha: f64,
    /// KS p above `alpha` and means within 3 pooled SE.
    pub pass: bool,
}

fn marginal(outs: &[ReplicateOutput], stat: Statistic) -> Result<Vec<f64>> {
    outs.iter()
        .map(|o| {
            let s = &o.series;
            match stat {
                Statistic::Total { t } => Ok(s.total[nearest_index(&s.times, t)]),
                Statistic::Probe { index, t } => s
                    .probes
                    .get(index)
                    .map(|p| p[nearest_index(&s.times, t)])
                    .ok_or_else(|| Error::Config(format!("no probe {index}"))),
            }
        })
        .collect()
}

pub fn compare_samples(a: &[f64], b: &[f64], statistic: Statistic, alpha: f64) -> Result<CompareReport> {
    let ks = ks_two_sample(a, b)?;
    let sa = summarize(a)?;
    let sb = summarize(b)?;
    let se = pooled_se(&sa, &sb);
    let diff = (sa.mean - sb.mean).abs();
    let z = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(CompareReport {
        statistic,
        pass: ks.p_value > alpha && z <= 3.0,
        ks,
        mean_a: sa.mean,
        mean_b: sb.mean,
        z,
        alpha,
    })
}

/// Two-sample KS plus a mean check on one marginal of two ensembles.
pub fn compare(a: &RunConfig, b: &RunConfig, statistic: Statistic) -> Result<CompareReport> {
    let xa = marginal(&run_ensemble(a)?, statistic)?;
    let xb = marginal(&run_ensemble(b)?, statistic)?;
    compare_samples(&xa, &xb, statistic, 0.01)
}

/// Pools the final level configurations of an `lfvsfe-lookdown` ensemble and
/// tests them against a Poisson process of intensity `K` on `[0, Λ)`.
pub fn diagnose_poisson(cfg: &RunConfig) -> Result<CoxDiagnostic> {
    if cfg.model != ModelKind::LfvsfeLookdown {
        return Err(Error::Config("diagnose-poisson needs model = \"lfvsfe-lookdown\"".into()));
    }
    let Prepared::Lookdown(run) = prepare(cfg)? else {
        unreachable!()
    };
    let configs: Vec<Vec<f64>> = run_ensemble(cfg)?
        .into_iter()
        .map(|o| o.final_levels.expect("lookdown output carries levels"))
        .collect();
    poisson_levels_check(&configs, run.rates.total_intensity, run.ceiling)
}

/// Poisson check of level configurations against intensity `k` on `[0, ceiling)`,
/// Laplace probe `f(x) = 4x / (k ceiling²)`.
pub fn poisson_levels_check(configs: &[Vec<f64>], k: f64, ceiling: f64) -> Result<CoxDiagnostic> {
    let scale = 4.0 / (k * ceiling * ceiling);
    laplace_functional_check(configs, &|_| k, &|x| scale * x, (0.0, ceiling))
}
