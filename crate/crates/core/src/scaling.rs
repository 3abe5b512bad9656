//! Parameter schedules `N ↦ (J, K, M, S, Ŝ)` and numeric checks of the
//! limit conditions of each scaling regime.
//!
//! Limits are judged on a finite ascending list of probe values of `N`:
//!
//! * `→ ∞` / `→ 0`: strictly monotone with a total change of at least
//!   [`FACTOR`] across the probes.
//! * `→ c` (finite): the log-log slope over the last two probes is below
//!   [`FLAT_SLOPE`], or the sequence is constant to rounding.
//! * `∃m: N (K/J)^m → 0`: tried for `m = 1..=8`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::lookdown::{SelectionSpec, Type};
use crate::spatial::heat::second_moment_unit_ball;
use crate::spatial::lookdown::unit_ball_volume;
use crate::{Error, Result};

pub const FACTOR: f64 = 4.0;
pub const FLAT_SLOPE: f64 = 0.02;
pub const MAX_M: u32 = 8;

/// Which limit theorem's list of conditions applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Spatial, fluctuating selection: superBrownian motion in random environment.
    SpatialFluctuating,
    /// Non-spatial, fluctuating selection: Feller diffusion in random environment.
    Fluctuating,
    /// Non-spatial neutral: critical Feller diffusion.
    Neutral,
    /// Non-spatial fixed selection, `Ŝ = 1`: Feller diffusion with drift.
    Selection,
    /// Spatial neutral: superBrownian motion.
    SpatialNeutral,
    /// Spatial fixed selection, `Ŝ = 1`.
    SpatialSelection,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::SpatialFluctuating,
        Regime::Fluctuating,
        Regime::Neutral,
        Regime::Selection,
        Regime::SpatialNeutral,
        Regime::SpatialSelection,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Regime::SpatialFluctuating => "spatial-fluctuating",
            Regime::Fluctuating => "fluctuating",
            Regime::Neutral => "neutral",
            Regime::Selection => "selection",
            Regime::SpatialNeutral => "spatial-neutral",
            Regime::SpatialSelection => "spatial-selection",
        }
    }

    pub fn is_spatial(&self) -> bool {
        matches!(
            self,
            Regime::SpatialFluctuating | Regime::SpatialNeutral | Regime::SpatialSelection
        )
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::UnknownTheorem(s.to_string()))
    }
}

/// `coef · N^exponent`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLaw {
    #[serde(default = "one")]
    pub coef: f64,
    #[serde(default)]
    pub exponent: f64,
}

fn one() -> f64 {
    1.0
}

fn unit() -> PowerLaw {
    PowerLaw::constant(1.0)
}

impl PowerLaw {
    pub fn new(coef: f64, exponent: f64) -> Self {
        Self { coef, exponent }
    }

    pub fn power(exponent: f64) -> Self {
        Self { coef: 1.0, exponent }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            coef: value,
            exponent: 0.0,
        }
    }

    pub fn eval(&self, n: f64) -> f64 {
        self.coef * n.powf(self.exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSchedule {
    pub regime: Regime,
    pub j: PowerLaw,
    pub k: PowerLaw,
    #[serde(default = "unit")]
    pub m: PowerLaw,
    #[serde(default = "unit")]
    pub s_big: PowerLaw,
    #[serde(default = "unit")]
    pub s_hat: PowerLaw,
    pub u: f64,
    #[serde(default)]
    pub s: f64,
    #[serde(default = "one")]
    pub r: f64,
    #[serde(default = "dim1")]
    pub dim: usize,
    #[serde(default = "SelectionSpec::neutral")]
    pub selection: SelectionSpec,
}

fn dim1() -> usize {
    1
}

/// Model parameters at one value of `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulePoint {
    pub n: f64,
    pub j: f64,
    pub k: f64,
    pub m: f64,
    pub s_big: f64,
    pub s_hat: f64,
    pub u: f64,
    pub s: f64,
    pub r: f64,
    pub dim: usize,
}

impl ScalingSchedule {
    /// `J = N^{3/4+ε}`, `K = N^{1/2+2ε}`, `S = N^β`, `Ŝ = N^γ`.
    pub fn fluctuating_preset(eps: f64, beta: f64, gamma: f64, u: f64, s: f64, selection: SelectionSpec) -> Self {
        Self {
            regime: Regime::Fluctuating,
            j: PowerLaw::power(0.75 + eps),
            k: PowerLaw::power(0.5 + 2.0 * eps),
            m: unit(),
            s_big: PowerLaw::power(beta),
            s_hat: PowerLaw::power(gamma),
            u,
            s,
            r: 1.0,
            dim: 1,
            selection,
        }
    }

    /// The fluctuating preset with selection switched off.
    pub fn neutral_preset(eps: f64, u: f64) -> Self {
        Self {
            regime: Regime::Neutral,
            s: 0.0,
            s_big: unit(),
            s_hat: unit(),
            ..Self::fluctuating_preset(eps, 0.0, 0.0, u, 0.0, SelectionSpec::neutral())
        }
    }

    /// Spatial neutral preset in `d = 1`: `J = N^{1-2μ}`, `K = N^{1-3μ}`,
    /// `M = N^μ`. Then `N/(J M²) = 1`, `u² V_r N K/(J² M)` is constant,
    /// `K/(J M) = N^{-2μ}`, `N²/(K J² M) = N^{6μ-1}` and `N (K/J)^8 = N^{1-8μ}`,
    /// so every condition holds for `1/8 < μ < 1/6`.
    pub fn spatial_neutral_preset(mu: f64, u: f64, r: f64) -> Self {
        Self {
            regime: Regime::SpatialNeutral,
            j: PowerLaw::power(1.0 - 2.0 * mu),
            k: PowerLaw::power(1.0 - 3.0 * mu),
            m: PowerLaw::power(mu),
            s_big: unit(),
            s_hat: unit(),
            u,
            s: 0.0,
            r,
            dim: 1,
            selection: SelectionSpec::neutral(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("J", self.j),
            ("K", self.k),
            ("M", self.m),
            ("S", self.s_big),
            ("Ŝ", self.s_hat),
        ] {
            if !(f.coef > 0.0) || !f.coef.is_finite() || !f.exponent.is_finite() || f.exponent < 0.0 {
                return Err(Error::param(format!(
                    "{name}(N) must be positive and nondecreasing, got {} N^{}",
                    f.coef, f.exponent
                )));
            }
        }
        if !(self.u > 0.0) || !(0.0..=1.0).contains(&self.s) || !(self.r > 0.0) {
            return Err(Error::param("need u > 0, s in [0, 1], r > 0"));
        }
        if !(1..=3).contains(&self.dim) {
            return Err(Error::param(format!("dimension must be 1, 2 or 3, got {}", self.dim)));
        }
        self.selection.validate()
    }

    pub fn at(&self, n: f64) -> SchedulePoint {
        SchedulePoint {
            n,
            j: self.j.eval(n),
            k: self.k.eval(n),
            m: self.m.eval(n),
            s_big: self.s_big.eval(n),
            s_hat: self.s_hat.eval(n),
            u: self.u,
            s: self.s,
            r: self.r,
            dim: self.dim,
        }
    }
}

/// Volume of the ball of radius `r` in `d` dimensions.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    unit_ball_volume(d) * r.powi(d as i32)
}

/// `E_π[(c (σ_r/σ_c - 1))²]` with `ζ = ±1` equally likely.
pub fn selection_second_moment(c: f64, spec: &SelectionSpec) -> f64 {
    [-1i8, 1]
        .iter()
        .map(|&z| {
            let d = c * (spec.sigma(Type::Rare, z) / spec.sigma(Type::Common, z) - 1.0);
            0.5 * d * d
        })
        .sum()
}

impl SchedulePoint {
    fn md(&self) -> f64 {
        self.m.powi(self.dim as i32)
    }

    /// `u²NK/J²`, or `u² V_r NK/(J² M^d)` in space.
    pub fn qv_expr(&self, spatial: bool) -> f64 {
        let base = self.u * self.u * self.n * self.k / (self.j * self.j);
        if spatial {
            base * ball_volume(self.dim, self.r) / self.md()
        } else {
            base
        }
    }

    /// `suN/(SJ)`, times `V_r` in space.
    pub fn selection_scale(&self, spatial: bool) -> f64 {
        let c = self.s * self.u * self.n / (self.s_big * self.j);
        if spatial {
            c * ball_volume(self.dim, self.r)
        } else {
            c
        }
    }

    /// `C(d) u r^{d+2} N/(J M²)`
    pub fn diffusion_expr(&self) -> f64 {
        second_moment_unit_ball(self.dim) * self.u * self.r.powi(self.dim as i32 + 2) * self.n
            / (self.j * self.m * self.m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveParams {
    pub a: f64,
    pub b: f64,
    /// Coefficient of `Δ`; zero for non-spatial regimes.
    pub c1: f64,
}

/// Prelimit values of `a`, `b` and `C₁` at a finite `N`.
pub fn effective_params(sched: &ScalingSchedule, n: f64) -> Result<EffectiveParams> {
    sched.validate()?;
    let p = sched.at(n);
    let spatial = sched.regime.is_spatial();
    // non-spatial: u²NK/J² → 2a; spatial: u²V_r NK/(J²M^d) → a
    let a = if spatial { p.qv_expr(true) } else { p.qv_expr(false) / 2.0 };
    let c = p.selection_scale(spatial);
    let b = match sched.regime {
        Regime::Selection | Regime::SpatialSelection => {
            // σ does not depend on ζ here; the environment-free ratio is used
            let r = sched.selection.sigma(Type::Rare, 1) / sched.selection.sigma(Type::Common, 1);
            c * (r - 1.0)
        }
        _ => selection_second_moment(c, &sched.selection).sqrt(),
    };
    let c1 = if spatial { p.diffusion_expr() } else { 0.0 };
    Ok(EffectiveParams { a, b, c1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Infinity,
    Zero,
    Finite,
    /// `∃m ≤ MAX_M` with the expression tending to zero.
    ExistsZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    Increasing,
    Decreasing,
    Constant,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub name: String,
    pub target: Target,
    pub values: Vec<f64>,
    pub trend: Trend,
    /// Extrapolated limit (`inf` for divergent sequences).
    pub limit: f64,
    /// Smallest working `m` for existential conditions.
    pub witness: Option<u32>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub regime: Regime,
    pub probe_ns: Vec<f64>,
    pub conditions: Vec<ConditionReport>,
    pub pass: bool,
    /// Names of the failed conditions.
    pub failed: Vec<String>,
}

fn trend(values: &[f64]) -> Trend {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let tol = 1e-12 * scale;
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    if diffs.iter().all(|d| d.abs() <= tol) {
        Trend::Constant
    } else if diffs.iter().all(|&d| d > tol) {
        Trend::Increasing
    } else if diffs.iter().all(|&d| d < -tol) {
        Trend::Decreasing
    } else {
        Trend::Mixed
    }
}

fn judge_infinity(v: &[f64]) -> bool {
    trend(v) == Trend::Increasing && v[0] > 0.0 && v[v.len() - 1] >= FACTOR * v[0]
}

fn judge_zero(v: &[f64]) -> bool {
    if v.iter().all(|&x| x == 0.0) {
        return true;
    }
    let a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    trend(&a) == Trend::Decreasing && a[0] >= FACTOR * a[a.len() - 1]
}

fn judge_finite(ns: &[f64], v: &[f64]) -> (bool, f64) {
    if v.iter().any(|x| !x.is_finite()) {
        return (false, f64::INFINITY);
    }
    if trend(v) == Trend::Constant {
        return (true, v[v.len() - 1]);
    }
    let k = v.len();
    let (y0, y1) = (v[k - 2], v[k - 1]);
    let slope = if y0 > 0.0 && y1 > 0.0 {
        (y1 / y0).ln() / (ns[k - 1] / ns[k - 2]).ln()
    } else {
        f64::INFINITY
    };
    let flat = slope.abs() < FLAT_SLOPE;
    // Aitken extrapolation on the last three values when they contract
    let limit = if k >= 3 {
        let (a, b, c) = (v[k - 3], v[k - 2], v[k - 1]);
        let den = (c - b) - (b - a);
        if den.abs() > 1e-300 && ((c - b) / (b - a)).abs() < 1.0 {
            c - (c - b) * (c - b) / den
        } else {
            c
        }
    } else {
        y1
    };
    if flat {
        (true, limit)
    } else {
        (false, if slope > 0.0 { f64::INFINITY } else { limit })
    }
}

type Expr = Box<dyn Fn(&SchedulePoint) -> f64>;

fn conditions(sched: &ScalingSchedule) -> Vec<(String, Target, Expr)> {
    let sel = sched.selection;
    let mut out: Vec<(String, Target, Expr)> = Vec::new();
    let inf = |name: &str, f: fn(&SchedulePoint) -> f64| -> (String, Target, Expr) {
        (format!("{name} → ∞"), Target::Infinity, Box::new(f))
    };
    let diffusion: (String, Target, Expr) = (
        "C(d) u r^{d+2} N/(J M²) → C₁".into(),
        Target::Finite,
        Box::new(|p: &SchedulePoint| p.diffusion_expr()),
    );
    let sparsity_sp: (String, Target, Expr) = (
        "K/(J M^d) → 0".into(),
        Target::Zero,
        Box::new(|p: &SchedulePoint| p.k / (p.j * p.md())),
    );
    let qv_sp: (String, Target, Expr) = (
        "u² V_r N K/(J² M^d) → a".into(),
        Target::Finite,
        Box::new(|p: &SchedulePoint| p.qv_expr(true)),
    );
    let second_sp: (String, Target, Expr) = (
        "N²/(K J² M^d) → 0".into(),
        Target::Zero,
        Box::new(|p: &SchedulePoint| p.n * p.n / (p.k * p.j * p.j * p.md())),
    );
    let exists: (String, Target, Expr) = (
        "∃m: N (K/J)^m → 0".into(),
        Target::ExistsZero,
        Box::new(|p: &SchedulePoint| p.k / p.j),
    );
    let sparsity: (String, Target, Expr) = (
        "K/J → 0".into(),
        Target::Zero,
        Box::new(|p: &SchedulePoint| p.k / p.j),
    );
    let qv: (String, Target, Expr) = (
        "u² N K/J² → 2a".into(),
        Target::Finite,
        Box::new(|p: &SchedulePoint| p.qv_expr(false)),
    );
    let second: (String, Target, Expr) = (
        "N²/(K J²) → 0".into(),
        Target::Zero,
        Box::new(|p: &SchedulePoint| p.n * p.n / (p.k * p.j * p.j)),
    );
    let fluct_b = move |spatial: bool| -> (String, Target, Expr) {
        let name = if spatial {
            "E_π[(s u N V_r/(S J) (σ_r/σ_c - 1))²] → b²"
        } else {
            "E_π[(s u N/(S J) (σ_r/σ_c - 1))²] → b²"
        };
        (
            name.into(),
            Target::Finite,
            Box::new(move |p: &SchedulePoint| selection_second_moment(p.selection_scale(spatial), &sel)),
        )
    };
    let fixed_b = move |spatial: bool| -> (String, Target, Expr) {
        let name = if spatial {
            "s u N V_r/(J S) (σ_r/σ_c - 1) → b"
        } else {
            "s u N/(S J) (σ_r/σ_c - 1) → b"
        };
        let ratio = sel.sigma(Type::Rare, 1) / sel.sigma(Type::Common, 1);
        (
            name.into(),
            Target::Finite,
            Box::new(move |p: &SchedulePoint| p.selection_scale(spatial) * (ratio - 1.0)),
        )
    };
    let hat_over_s: (String, Target, Expr) = (
        "Ŝ/S → 0".into(),
        Target::Zero,
        Box::new(|p: &SchedulePoint| p.s_hat / p.s_big),
    );
    match sched.regime {
        Regime::SpatialFluctuating => {
            out.push(diffusion);
            for (n, f) in [
                ("J", (|p: &SchedulePoint| p.j) as fn(&SchedulePoint) -> f64),
                ("K", |p| p.k),
                ("M", |p| p.m),
                ("S", |p| p.s_big),
                ("Ŝ", |p| p.s_hat),
            ] {
                out.push(inf(n, f));
            }
            out.push(sparsity_sp);
            out.push(qv_sp);
            out.push(second_sp);
            out.push(fluct_b(true));
            out.push(hat_over_s);
            out.push(exists);
        }
        Regime::Fluctuating => {
            for (n, f) in [
                ("J", (|p: &SchedulePoint| p.j) as fn(&SchedulePoint) -> f64),
                ("K", |p| p.k),
                ("S", |p| p.s_big),
                ("Ŝ", |p| p.s_hat),
            ] {
                out.push(inf(n, f));
            }
            out.push(sparsity);
            out.push(qv);
            out.push(second);
            out.push(fluct_b(false));
            out.push(("Ŝ/K → 0".into(), Target::Zero, Box::new(|p: &SchedulePoint| p.s_hat / p.k)));
            out.push(hat_over_s);
            out.push(exists);
        }
        Regime::Neutral => {
            out.push(inf("J", |p| p.j));
            out.push(inf("K", |p| p.k));
            out.push(sparsity);
            out.push(second);
            out.push(qv);
            out.push(exists);
        }
        Regime::Selection => {
            out.push(inf("J", |p| p.j));
            out.push(inf("K", |p| p.k));
            out.push(inf("S", |p| p.s_big));
            out.push(sparsity);
            out.push(second);
            out.push(qv);
            out.push(fixed_b(false));
            out.push(exists);
        }
        Regime::SpatialNeutral => {
            out.push(diffusion);
            out.push(inf("J", |p| p.j));
            out.push(inf("K", |p| p.k));
            out.push(inf("M", |p| p.m));
            out.push(sparsity_sp);
            out.push(second_sp);
            out.push(qv_sp);
            out.push(exists);
        }
        Regime::SpatialSelection => {
            out.push((
                "N/(J M²) → C₁".into(),
                Target::Finite,
                Box::new(|p: &SchedulePoint| p.n / (p.j * p.m * p.m)),
            ));
            out.push(inf("J", |p| p.j));
            out.push(inf("K", |p| p.k));
            out.push(inf("M", |p| p.m));
            out.push(sparsity_sp);
            out.push(second_sp);
            out.push(qv_sp);
            out.push(fixed_b(true));
            out.push(exists);
        }
    }
    out
}

/// Evaluates every condition of the schedule's regime at `probe_ns`.
pub fn validate_schedule(sched: &ScalingSchedule, probe_ns: &[f64]) -> Result<ScheduleReport> {
    sched.validate()?;
    if probe_ns.len() < 3 {
        return Err(Error::param("need at least 3 probe values of N"));
    }
    if probe_ns.windows(2).any(|w| !(w[1] > w[0])) || !(probe_ns[0] > 0.0) {
        return Err(Error::param("probe values of N must be positive and ascending"));
    }
    let points: Vec<SchedulePoint> = probe_ns.iter().map(|&n| sched.at(n)).collect();
    let mut reports = Vec::new();
    for (name, target, f) in conditions(sched) {
        let values: Vec<f64> = points.iter().map(|p| f(p)).collect();
        let report = match target {
            Target::Infinity => {
                let pass = judge_infinity(&values);
                ConditionReport {
                    name,
                    target,
                    trend: trend(&values),
                    limit: if pass { f64::INFINITY } else { values[values.len() - 1] },
                    values,
                    witness: None,
                    pass,
                }
            }
            Target::Zero => {
                let pass = judge_zero(&values);
                ConditionReport {
                    name,
                    target,
                    trend: trend(&values),
                    limit: if pass { 0.0 } else { values[values.len() - 1] },
                    values,
                    witness: None,
                    pass,
                }
            }
            Target::Finite => {
                let (pass, limit) = judge_finite(probe_ns, &values);
                ConditionReport {
                    name,
                    target,
                    trend: trend(&values),
                    limit,
                    values,
                    witness: None,
                    pass,
                }
            }
            Target::ExistsZero => {
                // values hold K/J; the tested sequence is N (K/J)^m
                let seq = |m: u32| -> Vec<f64> {
                    probe_ns
                        .iter()
                        .zip(&values)
                        .map(|(&n, &ratio)| n * ratio.powi(m as i32))
                        .collect()
                };
                let witness = (1..=MAX_M).find(|&m| judge_zero(&seq(m)));
                let shown = seq(witness.unwrap_or(MAX_M));
                ConditionReport {
                    name,
                    target,
                    trend: trend(&shown),
                    limit: if witness.is_some() { 0.0 } else { shown[shown.len() - 1] },
                    values: shown,
                    witness,
                    pass: witness.is_some(),
                }
            }
        };
        reports.push(report);
    }
    let failed: Vec<String> = reports.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    Ok(ScheduleReport {
        regime: sched.regime,
        probe_ns: probe_ns.to_vec(),
        pass: failed.is_empty(),
        conditions: reports,
        failed,
    })
}

/// `10^3, 10^4, ..., 10^17`; fourteen decades let `N^{0.05}` grow by 5.
pub fn default_probe_ns() -> Vec<f64> {
    (3..=17).map(|e| 10f64.powi(e)).collect()
}
