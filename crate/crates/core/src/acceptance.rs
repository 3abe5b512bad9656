//! Desk-scale acceptance suite. Each criterion returns a verdict line; the
//! `accept` subcommand and the `acceptance` test target print them.

use std::fmt;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{env_covariance, EnvSpec, Environment};
use crate::harness::{
    compare_samples, diagnose_poisson, run_ensemble, simulate, write_outputs, ModelKind, Params, RunConfig,
    Statistic,
};
use crate::limits::SpatialInit;
use crate::lookdown::{j_neu, j_sel, select_parent_neutral, select_parent_selective, Individual, LevelConfig, SelectionSpec, Type};
use crate::point_process::poisson_count;
use crate::projected::{moment_oracle, DiffusionKind, DiffusionParams};
use crate::rng::{replicate_seed, rng_from_seed};
use crate::scaling::{default_probe_ns, effective_params, validate_schedule, ScalingSchedule};
use crate::spatial::heat::{heat_flow, laplacian_coeff};
use crate::spatial::mytnik::{run_mytnik_brw, MytnikRun};
use crate::spatial::probe::integrate_cells;
use crate::spatial::qv::qv_decomposition_check;
use crate::spatial::slfvfs::{initial_density, run_slfvfs, SlfvfsRun, SpatialRates};
use crate::spatial::{Probe, TorusGrid};
use crate::stats::{ks_two_sample, summarize};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{v} [{:>2}] {}: {}", self.id, self.name, self.detail)
    }
}

/// Criteria that fail for reasons outside the implementation; see the README.
pub const KNOWN_FAILURES: &[u8] = &[8];

pub const CRITERIA: [(u8, &str); 10] = [
    (1, "critical neutral limit"),
    (2, "fluctuating-selection mean growth"),
    (3, "lookdown/projected agreement"),
    (4, "conditionally Poisson levels"),
    (5, "BBMRE lookdown vs direct"),
    (6, "SBMRE quadratic variation"),
    (7, "spatial heat flow"),
    (8, "schedule validator"),
    (9, "deterministic maps"),
    (10, "end-to-end determinism"),
];

pub fn run_criterion(id: u8) -> CriterionResult {
    let name = CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .map(|c| c.1.to_string())
        .unwrap_or_else(|| format!("unknown criterion {id}"));
    let out = match id {
        1 => criterion_1(),
        2 => criterion_2(),
        3 => criterion_3(),
        4 => criterion_4(),
        5 => criterion_5(),
        6 => criterion_6(),
        7 => criterion_7(),
        8 => criterion_8(),
        9 => criterion_9(),
        10 => criterion_10(),
        _ => Err(Error::Config(format!("no criterion {id}"))),
    };
    let (pass, detail) = out.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult { id, name, pass, detail }
}

pub fn run_all() -> Vec<CriterionResult> {
    CRITERIA.iter().map(|c| run_criterion(c.0)).collect()
}

type Verdict = Result<(bool, String)>;

const N_DESK: f64 = 2000.0;
const LAMBDA: f64 = 10.0;

fn fluctuating_spec() -> SelectionSpec {
    SelectionSpec::new([0.6, 1.4], [1.0, 1.0], 0.5).expect("valid table")
}

fn fluctuating_schedule() -> ScalingSchedule {
    ScalingSchedule::fluctuating_preset(0.1, 0.1, 0.05, 1.0, 0.5, fluctuating_spec())
}

fn lfv_config(model: ModelKind, sched: ScalingSchedule, replicates: usize, seed: u64) -> RunConfig {
    RunConfig {
        model,
        replicates,
        horizon: 1.0,
        n_obs: 1,
        base_seed: seed,
        output_dir: None,
        workers: None,
        params: Params {
            n: Some(N_DESK),
            x0: Some(1.0),
            ceiling: Some(LAMBDA),
            guard: Some(1e3),
            ..Params::default()
        },
        schedule: Some(sched),
        env: None,
        grid: None,
        probes: Vec::new(),
        probe_ns: None,
    }
}

fn finals(cfg: &RunConfig) -> Result<Vec<f64>> {
    Ok(run_ensemble(cfg)?.into_iter().map(|o| *o.series.total.last().unwrap()).collect())
}

fn criterion_1() -> Verdict {
    let sched = ScalingSchedule::neutral_preset(0.1, 1.0);
    let a = effective_params(&sched, N_DESK)?.a;
    let mut ok = true;
    let mut parts = Vec::new();
    for (model, seed) in [(ModelKind::LfvsfeLookdown, 101), (ModelKind::LfvsfeProjected, 102)] {
        let xs = finals(&lfv_config(model, sched.clone(), 2000, seed))?;
        let s = summarize(&xs)?;
        // the lookdown readout counts levels below Λ: Cox term x0/Λ on top
        let cox = if model == ModelKind::LfvsfeLookdown { 1.0 / LAMBDA } else { 0.0 };
        let target_var = 2.0 * a + cox;
        let mean_ok = (s.mean - 1.0).abs() <= 3.0 * s.se;
        let var_ok = (s.var / target_var - 1.0).abs() <= 0.15;
        ok &= mean_ok && var_ok;
        parts.push(format!(
            "{model:?}: mean {:.4} (se {:.4}), var {:.4} vs {:.4}",
            s.mean, s.se, s.var, target_var
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn criterion_2() -> Verdict {
    let sched = fluctuating_schedule();
    let b = effective_params(&sched, N_DESK)?.b;
    let target = (b * b).exp();
    let mut ok = true;
    let mut parts = vec![format!("b_eff² {:.4}, target {:.4}", b * b, target)];
    for (model, seed) in [(ModelKind::LfvsfeLookdown, 201), (ModelKind::LfvsfeProjected, 202)] {
        let s = summarize(&finals(&lfv_config(model, sched.clone(), 2000, seed))?)?;
        let tol = (3.0 * s.se).max(0.1 * target);
        ok &= (s.mean - target).abs() <= tol;
        parts.push(format!("{model:?}: mean {:.4} ± {:.4}", s.mean, tol));
    }
    Ok((ok, parts.join("; ")))
}

fn criterion_3() -> Verdict {
    let sched = fluctuating_schedule();
    let ld = finals(&lfv_config(ModelKind::LfvsfeLookdown, sched.clone(), 1000, 301))?;
    let pr = finals(&lfv_config(ModelKind::LfvsfeProjected, sched, 1000, 302))?;
    // read the projected mass through the same level window as the lookdown
    let mut rng = rng_from_seed(303);
    let pr: Vec<f64> = pr
        .iter()
        .map(|&x| poisson_count(LAMBDA * x, &mut rng) as f64 / LAMBDA)
        .collect();
    let ks = ks_two_sample(&ld, &pr)?;
    Ok((
        ks.p_value > 0.01,
        format!("KS D {:.4}, p {:.3}", ks.statistic, ks.p_value),
    ))
}

fn criterion_4() -> Verdict {
    // unscaled: J = 1, K = 50, u = 0.1, N = 1000 neutral events per unit time
    let cfg = RunConfig::from_toml(
        "model = \"lfvsfe-lookdown\"\nreplicates = 200\nhorizon = 1.0\nn_obs = 1\nbase_seed = 401\n\
         [params]\nn = 1000.0\nj = 1.0\nk = 50.0\nu = 0.1\nx0 = 5.0\nceiling = 10.0\nguard = 1e9\n",
    )?;
    let d = diagnose_poisson(&cfg)?;
    let z = d.laplace_z();
    Ok((
        d.ks_gap_p > 0.01 && z <= 3.0,
        format!(
            "{} gaps, KS p {:.3}; Laplace {:.5} vs {:.5} ({:.2} SE)",
            d.n_gaps, d.ks_gap_p, d.laplace_lhs, d.laplace_rhs, z
        ),
    ))
}

fn bbmre_config(model: ModelKind, seed: u64) -> RunConfig {
    RunConfig {
        model,
        replicates: 1000,
        horizon: 1.0,
        n_obs: 2,
        base_seed: seed,
        output_dir: None,
        workers: None,
        params: Params {
            a: Some(1.0),
            b: Some(0.1),
            lambda: Some(50.0),
            x0: Some(1.0),
            n0: Some(50),
            frozen: Some(1),
            dt: Some(1e-3),
            ..Params::default()
        },
        schedule: None,
        env: Some(EnvSpec::gaussian(1.0, 0.0)),
        grid: Some(TorusGrid::new(8.0, 64, 1).expect("valid grid")),
        probes: Vec::new(),
        probe_ns: None,
    }
}

fn criterion_5() -> Verdict {
    let direct = run_ensemble(&bbmre_config(ModelKind::BbmreDirect, 501))?;
    let lookdown = run_ensemble(&bbmre_config(ModelKind::BbmreLookdown, 502))?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, t) in [(1usize, 0.5), (2, 1.0)] {
        // direct counts particles; rescale to mass
        let a: Vec<f64> = direct.iter().map(|o| o.series.total[k] / 50.0).collect();
        let b: Vec<f64> = lookdown.iter().map(|o| o.series.total[k]).collect();
        let r = compare_samples(&a, &b, Statistic::Total { t }, 0.01)?;
        ok &= r.z <= 3.0;
        parts.push(format!("t={t}: {:.4} vs {:.4} ({:.2} SE)", r.mean_a, r.mean_b, r.z));
    }
    Ok((ok, parts.join("; ")))
}

fn criterion_6() -> Verdict {
    let grid = TorusGrid::new(8.0, 64, 1)?;
    // ℓ = L/4
    let env = Environment::new(EnvSpec::gaussian(2.0, 0.0), Some(grid))?;
    let run = MytnikRun {
        n: 1000,
        kappa: 0.5,
        env: &env,
        init: SpatialInit {
            mass: 2.0,
            center: vec![4.0],
            half_width: 0.25,
        },
        horizon: 0.25,
        n_obs: 1,
        probes: Vec::new(),
        qv_probe: Some(Probe::constant()),
        frozen: None,
    };
    let ens: Vec<_> = (0..500u64)
        .into_par_iter()
        .map(|i| run_mytnik_brw(&run, replicate_seed(601, i)).map(|o| o.qv.expect("qv recorded")))
        .collect::<Result<_>>()?;
    // κ = 1/2 gives QV = ∫X(φ²) + ∫∬qφφXX, i.e. a = 1/2, b = 1
    let rep = qv_decomposition_check(&ens, 0.5, 1.0)?;
    Ok((
        rep.rel_err.abs() < 0.15 && rep.rel_err_no_q > 0.25,
        format!(
            "realized {:.4}, predicted {:.4} (err {:+.3}), without q {:.4} (err {:+.3})",
            rep.realized.mean, rep.predicted.mean, rep.rel_err, rep.predicted_no_q.mean, rep.rel_err_no_q
        ),
    ))
}

fn criterion_7() -> Verdict {
    let sched = ScalingSchedule::spatial_neutral_preset(1.0 / 7.0, 1.0, 0.5);
    let p = sched.at(N_DESK);
    let grid = TorusGrid::new(4.0, 128, 1)?;
    let env = Environment::new(EnvSpec::global_flip(0.0), Some(grid))?;
    let rates = SpatialRates::from_params(p.n, p.j, p.k, p.m, p.s_big, p.s_hat, p.u, p.r, p.s, 1)?;
    let init = SpatialInit {
        mass: 20.0,
        center: vec![0.0],
        half_width: 0.15,
    };
    let w0 = initial_density(&grid, &init, p.k)?;
    let phi = Probe::Cosine { mode: 1, axis: 0 };
    let run = SlfvfsRun {
        rates,
        selection: SelectionSpec::neutral(),
        env: &env,
        grid,
        init: w0.clone(),
        horizon: 1.0,
        n_obs: 4,
        probes: vec![phi.clone()],
        guard: f64::INFINITY,
    };
    let series: Vec<_> = (0..1000u64)
        .into_par_iter()
        .map(|i| run_slfvfs(&run, replicate_seed(701, i)))
        .collect::<Result<_>>()?;
    let c1 = laplacian_coeff(1, p.r, p.u, p.n, p.j, p.m)?;
    let m0: Vec<f64> = w0.iter().map(|w| p.k * w).collect();
    let phi_cells = phi.on_cells(&grid);
    let mut ok = true;
    let mut parts = vec![format!("C1 {c1:.4}")];
    for (k, &t) in series[0].times.iter().enumerate().skip(1) {
        let xs: Vec<f64> = series.iter().map(|s| s.probe_at(0, k)).collect();
        let s = summarize(&xs)?;
        let pred = integrate_cells(&grid, &heat_flow(&grid, &m0, c1, t)?, &phi_cells);
        let rel = s.mean / pred - 1.0;
        ok &= rel.abs() < 0.1;
        parts.push(format!("t={t}: {:.3} vs {:.3} ({rel:+.3})", s.mean, pred));
    }
    Ok((ok, parts.join("; ")))
}

fn criterion_8() -> Verdict {
    let ns = default_probe_ns();
    let sel = validate_schedule(&fluctuating_schedule(), &ns)?;
    let mut flat = fluctuating_schedule();
    flat.selection = SelectionSpec::neutral();
    let flat = validate_schedule(&flat, &ns)?;
    let mut mutated = fluctuating_schedule();
    mutated.k = mutated.j;
    let mutated = validate_schedule(&mutated, &ns)?;
    let names_k_over_j = mutated.failed.iter().any(|f| f == "K/J → 0");
    let detail = format!(
        "exponents with σ table [0.6,1.4]/[1,1]: {} (failed {:?}); with σ_r = σ_c: {}; K = J: {} naming {:?}",
        verdict(sel.pass),
        sel.failed,
        verdict(flat.pass),
        verdict(!mutated.pass),
        mutated.failed
    );
    Ok((sel.pass && !mutated.pass && names_k_over_j, detail))
}

fn verdict(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "fail"
    }
}

fn criterion_9() -> Verdict {
    const TOL: f64 = 1e-12;
    let mut failed: Vec<String> = Vec::new();
    let close = |failed: &mut Vec<String>, name: &str, got: f64, want: f64| {
        if (got - want).abs() > TOL {
            failed.push(format!("{name}: {got} vs {want}"));
        }
    };
    // level maps
    close(&mut failed, "j_neu above", j_neu(2.0, 1.0, 0.5, 0.5)?, 3.0);
    close(&mut failed, "j_neu parent", j_neu(1.0, 1.0, 0.5, 0.5)?, 0.5);
    close(&mut failed, "j_neu zero impact", j_neu(0.3, 1.0, 0.5, 0.0)?, 0.3);
    let spec = SelectionSpec::new([0.8, 1.2], [1.0, 1.0], 0.5)?;
    close(&mut failed, "j_sel", j_sel(2.0, Type::Rare, 1.0, Type::Common, 1, 0.5, 0.5, &spec)?, 2.8);
    close(&mut failed, "j_sel thinning", j_sel(0.2, Type::Rare, 1.0, Type::Common, 1, 0.5, 0.5, &spec)?, 0.4);
    let flat = SelectionSpec::neutral();
    // no level lies strictly between v* and l* in a valid configuration
    for &l in &[0.1, 0.5, 0.6, 1.0, 2.5] {
        close(&mut failed,
            "j_sel flat",
            j_sel(l, Type::Rare, 1.0, Type::Common, -1, 0.6, 0.3, &flat)?,
            j_neu(l, 1.0, 0.6, 0.3)?,
        );
    }
    if j_neu(1.0, 1.0, 0.5, 1.0).is_ok() {
        failed.push("j_neu accepted impact 1".into());
    }
    // parent selection
    let ind = |level, ty| Individual { level, ty };
    let two = LevelConfig::new(vec![ind(0.9, Type::Common), ind(1.0, Type::Rare)], 2.0, 1.0)?;
    if select_parent_neutral(&two, 0.95) != Some(ind(1.0, Type::Rare)) {
        failed.push("neutral parent above 0.95".into());
    }
    if select_parent_neutral(&two, 1.5).is_some() {
        failed.push("neutral parent above all levels".into());
    }
    if select_parent_neutral(&two, 0.0) != Some(ind(0.9, Type::Common)) {
        failed.push("neutral parent at v* = 0".into());
    }
    let three = LevelConfig::new(
        vec![ind(0.9, Type::Common), ind(1.0, Type::Rare), ind(1.5, Type::Common)],
        2.0,
        1.0,
    )?;
    if select_parent_selective(&three, 0.85, 1, &spec) != Some(ind(0.9, Type::Common)) {
        failed.push("selective parent, σ_r = 1.2".into());
    }
    // outside the symmetric class, so built without validation
    let strong = SelectionSpec {
        sigma_rare: [10.0, 10.0],
        sigma_common: [1.0, 1.0],
        s: 0.5,
    };
    if select_parent_selective(&three, 0.85, 1, &strong) != Some(ind(1.0, Type::Rare)) {
        failed.push("selective parent, σ_r = 10".into());
    }
    for v in [0.0, 0.85, 0.95, 1.2, 1.6] {
        if select_parent_selective(&three, v, -1, &flat) != select_parent_neutral(&three, v) {
            failed.push(format!("flat selective parent at v* = {v}"));
        }
    }
    // moment oracles against closed forms
    let p = DiffusionParams { a: 0.5, b: 0.5, x0: 1.0 };
    let (m, v) = moment_oracle(&p, 1.0, DiffusionKind::Feller);
    close(&mut failed, "feller mean", m, 0.5f64.exp());
    close(&mut failed, "feller var", v, (2.0 * 0.5 / 0.5) * (1f64.exp() - 0.5f64.exp()));
    let (m, v) = moment_oracle(&p, 1.0, DiffusionKind::FellerRe);
    let b2: f64 = 0.25;
    let m2 = (4.0 * b2).exp() + (2.0 * 0.5 / (3.0 * b2)) * ((4.0 * b2).exp() - b2.exp());
    close(&mut failed, "feller-re mean", m, b2.exp());
    close(&mut failed, "feller-re var", v, m2 - (2.0 * b2).exp());
    let (m, v) = moment_oracle(&p, 0.0, DiffusionKind::Feller);
    close(&mut failed, "oracle t=0 mean", m, 1.0);
    close(&mut failed, "oracle t=0 var", v, 0.0);
    // environment covariance
    let g = EnvSpec::gaussian(1.0, 0.0);
    close(&mut failed, "q(x, x)", env_covariance(&g, &[0.3], &[0.3]), 1.0);
    close(&mut failed, "q global", env_covariance(&EnvSpec::global_flip(1.0), &[0.0], &[5.0]), 1.0);
    close(&mut failed,
        "q at distance 1",
        env_covariance(&g, &[0.0], &[1.0]),
        2.0 / std::f64::consts::PI * (-0.5f64).exp().asin(),
    );
    // Laplacian coefficient: C(1) = 2/3, C(2) = π/4, C(3) = 4π/15
    let pi = std::f64::consts::PI;
    close(&mut failed, "C(1)", laplacian_coeff(1, 1.0, 1.0, 1.0, 1.0, 1.0)?, 2.0 / 3.0);
    close(&mut failed, "C(2)", laplacian_coeff(2, 1.0, 1.0, 1.0, 1.0, 1.0)?, pi / 4.0);
    close(&mut failed, "C(3)", laplacian_coeff(3, 1.0, 1.0, 1.0, 1.0, 1.0)?, 4.0 * pi / 15.0);
    close(&mut failed,
        "C1 scaling",
        laplacian_coeff(1, 0.5, 2.0, 100.0, 10.0, 2.0)?,
        2.0 / 3.0 * 100.0 * 2.0 * 0.5f64.powi(3) / (10.0 * 4.0),
    );
    let ok = failed.is_empty();
    Ok((ok, if ok { "all exact".into() } else { failed.join("; ") }))
}

fn scratch_dir(tag: &str) -> PathBuf {
    std::env::temp_dir().join(format!("lfv-accept-{}-{tag}", std::process::id()))
}

fn criterion_10() -> Verdict {
    let lookdown = {
        let mut c = lfv_config(ModelKind::LfvsfeLookdown, fluctuating_schedule(), 50, 1001);
        c.n_obs = 10;
        c
    };
    let spatial = RunConfig::from_toml(
        "model = \"slfvfs\"\nreplicates = 20\nhorizon = 0.5\nn_obs = 5\nbase_seed = 1002\n\
         probes = [{ kind = \"cosine\", mode = 1 }]\n\
         [params]\nn = 200.0\nj = 50.0\nk = 40.0\nm = 2.0\nu = 1.0\nr = 0.5\n\
         init = { mass = 5.0, center = [2.0], half_width = 0.5 }\n\
         [env]\nkind = \"gaussian-threshold\"\ncorr_length = 1.0\nchange_rate = 1.0\n\
         [grid]\nside_length = 4.0\ncells_per_side = 128\ndim = 1\n",
    )?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (tag, cfg) in [("lookdown", lookdown), ("slfvfs", spatial)] {
        let d1 = scratch_dir(&format!("{tag}-1"));
        let d2 = scratch_dir(&format!("{tag}-2"));
        let f1 = write_outputs(&simulate(&cfg)?, &d1)?;
        let f2 = write_outputs(&simulate(&cfg)?, &d2)?;
        let mut same = std::fs::read(&f1.csv)? == std::fs::read(&f2.csv)?;
        for (a, b) in f1.probe_csvs.iter().zip(&f2.probe_csvs) {
            same &= std::fs::read(a)? == std::fs::read(b)?;
        }
        let _ = std::fs::remove_dir_all(&d1);
        let _ = std::fs::remove_dir_all(&d2);
        ok &= same;
        parts.push(format!("{tag}: {}", if same { "identical" } else { "differs" }));
    }
    Ok((ok, parts.join("; ")))
}
