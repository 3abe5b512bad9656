//! The fluctuating environment: a ±1 field, resampled from scratch at the
//! epochs of a Poisson clock.
//!
//! Two families are provided. `GlobalFlip` is one fair coin shared by every
//! site (q ≡ 1). `GaussianThreshold` is `sign(G)` for a centred Gaussian field
//! with squared-exponential correlation, so that
//! `q(x, y) = (2/π) asin(exp(-|x - y|² / (2ℓ²)))`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::spatial::grid::TorusGrid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    GlobalFlip,
    GaussianThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: EnvKind,
    #[serde(default = "default_corr_length")]
    pub corr_length: f64,
    pub change_rate: f64,
}

fn default_corr_length() -> f64 {
    1.0
}

impl EnvSpec {
    pub fn global_flip(change_rate: f64) -> Self {
        Self {
            kind: EnvKind::GlobalFlip,
            corr_length: 1.0,
            change_rate,
        }
    }

    pub fn gaussian(corr_length: f64, change_rate: f64) -> Self {
        Self {
            kind: EnvKind::GaussianThreshold,
            corr_length,
            change_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.change_rate >= 0.0) || !self.change_rate.is_finite() {
            return Err(Error::param(format!(
                "change_rate must be >= 0, got {}",
                self.change_rate
            )));
        }
        if self.kind == EnvKind::GaussianThreshold && !(self.corr_length > 0.0) {
            return Err(Error::param(format!(
                "corr_length must be > 0, got {}",
                self.corr_length
            )));
        }
        Ok(())
    }
}

/// Orthant identity: `E[sign(G1) sign(G2)] = (2/π) asin(ρ)`.
pub fn sign_correlation(rho: f64) -> f64 {
    std::f64::consts::FRAC_2_PI * rho.clamp(-1.0, 1.0).asin()
}

/// Closed-form q on ℝ^d.
pub fn env_covariance(spec: &EnvSpec, x: &[f64], y: &[f64]) -> f64 {
    match spec.kind {
        EnvKind::GlobalFlip => 1.0,
        EnvKind::GaussianThreshold => {
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            let l = spec.corr_length;
            sign_correlation((-d2 / (2.0 * l * l)).exp())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Global(i8),
    Grid(Arc<Vec<i8>>),
}

/// Immutable snapshot of the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub field: Field,
    /// Current clock.
    pub time: f64,
    pub last_change: f64,
    pub epoch: u64,
}

impl EnvState {
    /// Field values as a slice (length 1 for a global coin).
    pub fn values(&self) -> &[i8] {
        match &self.field {
            Field::Global(v) => std::slice::from_ref(v),
            Field::Grid(v) => v.as_slice(),
        }
    }
}

/// An [`EnvSpec`] bound to its domain, with the grid factorisation cached.
#[derive(Debug, Clone)]
pub struct Environment {
    pub spec: EnvSpec,
    pub grid: Option<TorusGrid>,
    /// Lower Cholesky factor of the one-axis correlation matrix; the field
    /// on a `d`-dimensional grid is sampled as a separable product.
    factor: Option<Arc<DMatrix<f64>>>,
}

/// Periodised squared-exponential correlation along one axis, normalised to
/// 1 at zero lag. Positive definite on the circle since every Fourier
/// coefficient of a periodised Gaussian is positive.
pub fn periodic_rho(delta: f64, corr_length: f64, side_length: f64) -> f64 {
    let s = |d: f64| {
        let mut acc = 0.0;
        let kmax = (6.0 * corr_length / side_length).ceil() as i64 + 1;
        for k in -kmax..=kmax {
            let z = d + k as f64 * side_length;
            acc += (-z * z / (2.0 * corr_length * corr_length)).exp();
        }
        acc
    };
    s(delta) / s(0.0)
}

impl Environment {
    pub fn new(spec: EnvSpec, grid: Option<TorusGrid>) -> Result<Self> {
        spec.validate()?;
        let factor = match spec.kind {
            EnvKind::GlobalFlip => None,
            EnvKind::GaussianThreshold => {
                let g = grid.ok_or_else(|| {
                    Error::param("gaussian-threshold environment needs a grid")
                })?;
                Some(Arc::new(axis_factor(&g, spec.corr_length)?))
            }
        };
        Ok(Self { spec, grid, factor })
    }

    pub fn global(change_rate: f64) -> Self {
        Self {
            spec: EnvSpec::global_flip(change_rate),
            grid: None,
            factor: None,
        }
    }

    /// Fresh state at time 0 with an independent draw of the field.
    pub fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        EnvState {
            field: self.sample_field(rng),
            time: 0.0,
            last_change: 0.0,
            epoch: 0,
        }
    }

    pub fn sample_field<R: Rng + ?Sized>(&self, rng: &mut R) -> Field {
        match self.spec.kind {
            EnvKind::GlobalFlip => Field::Global(if rng.random::<bool>() { 1 } else { -1 }),
            EnvKind::GaussianThreshold => {
                let g = self.grid.expect("checked at construction");
                let l = self.factor.as_ref().expect("checked at construction");
                Field::Grid(Arc::new(sample_sign_field(&g, l, rng)))
            }
        }
    }

    /// Resample at each epoch of the Poisson clock in `(state.time, until]`.
    pub fn advance<R: Rng + ?Sized>(&self, state: &EnvState, until: f64, rng: &mut R) -> Result<EnvState> {
        if until < state.time {
            return Err(Error::param(format!(
                "cannot advance environment backwards from {} to {until}",
                state.time
            )));
        }
        let mut next = state.clone();
        if self.spec.change_rate > 0.0 {
            let clock = Exp::new(self.spec.change_rate).expect("positive rate");
            let mut t = state.time;
            loop {
                t += clock.sample(rng);
                if t > until {
                    break;
                }
                next.field = self.sample_field(rng);
                next.last_change = t;
                next.epoch += 1;
            }
        }
        next.time = until;
        Ok(next)
    }

    /// Resample once now (used by runners that own their own clock).
    pub fn resample<R: Rng + ?Sized>(&self, state: &EnvState, t: f64, rng: &mut R) -> EnvState {
        EnvState {
            field: self.sample_field(rng),
            time: t,
            last_change: t,
            epoch: state.epoch + 1,
        }
    }

    pub fn query(&self, state: &EnvState, x: &[f64]) -> Result<i8> {
        match &state.field {
            Field::Global(v) => Ok(*v),
            Field::Grid(vals) => {
                let g = self.grid.ok_or_else(|| Error::Domain(x.to_vec()))?;
                Ok(vals[g.cell_of(x)?])
            }
        }
    }

    /// Covariance between two grid cells as realised by the sampler.
    pub fn cell_q(&self, a: usize, b: usize) -> f64 {
        match (self.spec.kind, self.grid) {
            (EnvKind::GaussianThreshold, Some(g)) => {
                let (pa, pb) = (g.axes(a), g.axes(b));
                let h = g.cell_size();
                let rho: f64 = pa
                    .iter()
                    .zip(&pb)
                    .map(|(&i, &j)| {
                        periodic_rho((i as f64 - j as f64) * h, self.spec.corr_length, g.side_length)
                    })
                    .product();
                if a == b {
                    1.0
                } else {
                    sign_correlation(rho)
                }
            }
            _ => 1.0,
        }
    }

    /// Dense cell-by-cell q matrix (row-major).
    pub fn q_matrix(&self) -> Option<Vec<f64>> {
        let g = self.grid?;
        let n = g.n_cells();
        let mut m = vec![0.0; n * n];
        for a in 0..n {
            for b in a..n {
                let v = self.cell_q(a, b);
                m[a * n + b] = v;
                m[b * n + a] = v;
            }
        }
        Some(m)
    }
}

fn axis_factor(g: &TorusGrid, corr_length: f64) -> Result<DMatrix<f64>> {
    let n = g.cells_per_side;
    let h = g.cell_size();
    let mut cov = DMatrix::from_fn(n, n, |i, j| {
        periodic_rho((i as f64 - j as f64) * h, corr_length, g.side_length)
    });
    let mut jitter = 0.0;
    for _ in 0..12 {
        if let Some(ch) = cov.clone().cholesky() {
            return Ok(ch.l());
        }
        let add = if jitter == 0.0 { 1e-10 } else { jitter * 9.0 };
        for i in 0..n {
            cov[(i, i)] += add;
        }
        jitter += add;
        log::debug!("grid covariance not positive definite, jitter now {jitter:e}");
    }
    Err(Error::Numerical(
        "grid covariance could not be factorised".into(),
    ))
}

fn sample_sign_field<R: Rng + ?Sized>(g: &TorusGrid, l: &DMatrix<f64>, rng: &mut R) -> Vec<i8> {
    let n = g.cells_per_side;
    let sign = |v: f64| if v >= 0.0 { 1i8 } else { -1i8 };
    match g.dim {
        1 => {
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
            (l * z).iter().map(|&v| sign(v)).collect()
        }
        2 => {
            // G = L Z Lᵀ, Z iid normal: Cov(G_ij, G_kl) = C_ik C_jl
            let z = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
            let gm = l * z * l.transpose();
            // flat index = i0 + n*i1, i0 on the first axis
            let mut out = vec![0i8; n * n];
            for i1 in 0..n {
                for i0 in 0..n {
                    out[i0 + n * i1] = sign(gm[(i0, i1)]);
                }
            }
            out
        }
        _ => {
            // apply the factor along every axis in turn
            let total = g.n_cells();
            let mut v: Vec<f64> = (0..total).map(|_| StandardNormal.sample(rng)).collect();
            let mut stride = 1;
            for _ in 0..g.dim {
                let mut w = vec![0.0; total];
                for base in 0..total {
                    let i = (base / stride) % n;
                    let root = base - i * stride;
                    let mut acc = 0.0;
                    for k in 0..=i {
                        acc += l[(i, k)] * v[root + k * stride];
                    }
                    w[base] = acc;
                }
                v = w;
                stride *= n;
            }
            v.into_iter().map(sign).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::stats::summarize;

    #[test]
    fn covariance_examples() {
        let gauss = EnvSpec::gaussian(1.0, 1.0);
        assert_eq!(env_covariance(&gauss, &[0.3], &[0.3]), 1.0);
        assert_eq!(env_covariance(&EnvSpec::global_flip(1.0), &[0.0], &[5.0]), 1.0);
        let oracle = 2.0 / std::f64::consts::PI * (-0.5f64).exp().asin();
        assert!((env_covariance(&gauss, &[0.0], &[1.0]) - oracle).abs() < 1e-12);
        assert!((oracle - 0.4149).abs() < 5e-5);
    }

    #[test]
    fn zero_rate_only_moves_clock() {
        let env = Environment::global(0.0);
        let mut rng = rng_from_seed(1);
        let s0 = env.initial(&mut rng);
        let s1 = env.advance(&s0, 7.0, &mut rng).unwrap();
        assert_eq!(s1.field, s0.field);
        assert_eq!(s1.epoch, 0);
        assert_eq!(s1.time, 7.0);
    }

    #[test]
    fn backwards_advance_is_rejected() {
        let env = Environment::global(1.0);
        let mut rng = rng_from_seed(1);
        let s = env.advance(&env.initial(&mut rng), 2.0, &mut rng).unwrap();
        assert!(env.advance(&s, 1.0, &mut rng).is_err());
    }

    #[test]
    fn global_flip_is_fair_after_an_epoch() {
        let env = Environment::global(5.0);
        let mut plus = Vec::new();
        let mut epochs = Vec::new();
        for seed in 0..10_000u64 {
            let mut rng = rng_from_seed(seed);
            let s0 = EnvState {
                field: Field::Global(1),
                time: 0.0,
                last_change: 0.0,
                epoch: 0,
            };
            let s = env.advance(&s0, 2.0, &mut rng).unwrap();
            epochs.push(s.epoch as f64);
            if s.epoch > 0 {
                plus.push(if s.values()[0] == 1 { 1.0 } else { 0.0 });
            }
        }
        let p = summarize(&plus).unwrap();
        assert!((p.mean - 0.5).abs() < 3.0 * p.se, "{p:?}");
        let e = summarize(&epochs).unwrap();
        assert!((e.mean - 10.0).abs() < 3.0 * e.se, "{e:?}");
    }

    #[test]
    fn global_field_is_constant_in_space() {
        let env = Environment::global(1.0);
        let s = env.initial(&mut rng_from_seed(3));
        assert_eq!(env.query(&s, &[0.0]).unwrap(), env.query(&s, &[123.0]).unwrap());
    }

    #[test]
    fn gaussian_needs_grid_and_positive_length() {
        assert!(Environment::new(EnvSpec::gaussian(1.0, 1.0), None).is_err());
        let g = TorusGrid::new(4.0, 8, 1).unwrap();
        assert!(Environment::new(EnvSpec::gaussian(0.0, 1.0), Some(g)).is_err());
        assert!(Environment::new(EnvSpec::global_flip(-1.0), None).is_err());
    }

    #[test]
    fn query_outside_domain_errors() {
        let g = TorusGrid::new(4.0, 8, 1).unwrap();
        let env = Environment::new(EnvSpec::gaussian(1.0, 1.0), Some(g)).unwrap();
        let s = env.initial(&mut rng_from_seed(1));
        assert!(matches!(env.query(&s, &[4.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn gaussian_empirical_covariance_matches_closed_form() {
        // large torus so periodisation is negligible at these lags
        let g = TorusGrid::new(16.0, 64, 1).unwrap();
        let spec = EnvSpec::gaussian(1.0, 1.0);
        let env = Environment::new(spec, Some(g)).unwrap();
        let mut rng = rng_from_seed(17);
        let lags = [0usize, 1, 2, 3, 4, 5, 6, 8, 10, 12];
        let mut prods: Vec<Vec<f64>> = vec![Vec::new(); lags.len()];
        let mut plus = Vec::new();
        for _ in 0..10_000 {
            let f = env.sample_field(&mut rng);
            let Field::Grid(v) = f else { unreachable!() };
            assert!(v.iter().all(|&s| s == 1 || s == -1));
            plus.push(if v[7] == 1 { 1.0 } else { 0.0 });
            for (k, &lag) in lags.iter().enumerate() {
                prods[k].push((v[20] * v[20 + lag]) as f64);
            }
        }
        let p = summarize(&plus).unwrap();
        assert!((p.mean - 0.5).abs() < 3.0 * p.se);
        let h = g.cell_size();
        for (k, &lag) in lags.iter().enumerate() {
            let s = summarize(&prods[k]).unwrap();
            let q = env_covariance(&spec, &[0.0], &[lag as f64 * h]);
            if lag == 0 {
                assert_eq!(s.mean, 1.0);
            } else {
                assert!((s.mean - q).abs() < 3.0 * s.se.max(1e-3), "lag {lag}: {} vs {q}", s.mean);
            }
        }
        // lag of exactly one length unit
        assert!((env.cell_q(0, 4) - 0.4149).abs() < 1e-3);
    }

    #[test]
    fn two_dimensional_field_is_separable() {
        let g = TorusGrid::new(8.0, 16, 2).unwrap();
        let spec = EnvSpec::gaussian(1.5, 1.0);
        let env = Environment::new(spec, Some(g)).unwrap();
        let mut rng = rng_from_seed(23);
        let a = g.cell_of(&[2.25, 3.25]).unwrap();
        let b = g.cell_of(&[3.25, 4.25]).unwrap();
        let mut prods = Vec::new();
        for _ in 0..10_000 {
            let Field::Grid(v) = env.sample_field(&mut rng) else { unreachable!() };
            prods.push((v[a] * v[b]) as f64);
        }
        let s = summarize(&prods).unwrap();
        let q = env.cell_q(a, b);
        let closed = env_covariance(&spec, &[2.25, 3.25], &[3.25, 4.25]);
        assert!((q - closed).abs() < 1e-3);
        assert!((s.mean - q).abs() < 3.0 * s.se, "{} vs {q}", s.mean);
    }
}
