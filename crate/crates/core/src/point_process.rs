//! Homogeneous Poisson point processes on an interval, and the Laplace
//! functional / gap diagnostics used to check that a family of level
//! configurations is conditionally Poisson.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::stats::{ks_one_sample, summarize};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PppSample {
    /// Strictly ascending, all inside `window`.
    pub points: Vec<f64>,
    pub intensity: f64,
    /// Half-open `[lo, hi)`.
    pub window: (f64, f64),
}

impl PppSample {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub(crate) fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let p = Poisson::new(mean).expect("finite positive Poisson mean");
    p.sample(rng) as usize
}

/// Sorted uniform points on `[lo, hi)`; coincident points (and values that
/// round up to `hi`) are redrawn.
pub(crate) fn uniform_points<R: Rng + ?Sized>(n: usize, lo: f64, hi: f64, rng: &mut R) -> Vec<f64> {
    let width = hi - lo;
    let mut pts: Vec<f64> = Vec::with_capacity(n);
    for _ in 0..n {
        pts.push(draw_in(lo, width, hi, rng));
    }
    pts.sort_by(f64::total_cmp);
    loop {
        let dup = pts.windows(2).position(|w| w[0] >= w[1]);
        match dup {
            None => return pts,
            Some(i) => {
                pts[i + 1] = draw_in(lo, width, hi, rng);
                pts.sort_by(f64::total_cmp);
            }
        }
    }
}

fn draw_in<R: Rng + ?Sized>(lo: f64, width: f64, hi: f64, rng: &mut R) -> f64 {
    loop {
        let x = lo + width * rng.random::<f64>();
        if x < hi {
            return x;
        }
    }
}

/// Sample a homogeneous PPP with the given intensity on `[lo, hi)`.
pub fn sample_ppp<R: Rng + ?Sized>(
    intensity: f64,
    window: (f64, f64),
    rng: &mut R,
) -> Result<PppSample> {
    let (lo, hi) = window;
    if !(intensity >= 0.0) || !intensity.is_finite() {
        return Err(Error::param(format!("intensity must be >= 0, got {intensity}")));
    }
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::param(format!("empty or non-finite window [{lo}, {hi})")));
    }
    let n = poisson_count(intensity * (hi - lo), rng);
    Ok(PppSample {
        points: uniform_points(n, lo, hi, rng),
        intensity,
        window,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxDiagnostic {
    /// Empirical mean of `exp(-sum f(x_i))`.
    pub laplace_lhs: f64,
    /// `exp(-int (1 - e^{-f}) dXi)` for the supplied intensity.
    pub laplace_rhs: f64,
    /// Standard error of `laplace_lhs`; the rhs is exact.
    pub laplace_se: f64,
    pub ks_gap_stat: f64,
    pub ks_gap_p: f64,
    pub n_gaps: usize,
    pub n_samples: usize,
}

impl CoxDiagnostic {
    pub fn laplace_z(&self) -> f64 {
        let diff = (self.laplace_lhs - self.laplace_rhs).abs();
        if self.laplace_se > 0.0 {
            diff / self.laplace_se
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

const QUAD_NODES: usize = 1 << 12;

fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let h = (hi - lo) / QUAD_NODES as f64;
    let mut acc = 0.5 * (f(lo) + f(hi));
    for i in 1..QUAD_NODES {
        acc += f(lo + h * i as f64);
    }
    acc * h
}

/// Compare a family of point configurations against a Poisson process with
/// intensity `cox_intensity` on `window`.
///
/// Gaps are taken after the time change `x -> int_lo^x intensity`, from `lo`
/// to the first point and between successive points. Only complete gaps are
/// observed, so the pooled law is `1 - e^{-x} + x e^{-x}/T` rather than
/// `Exp(1)`, with `T` the integrated intensity of the window.
pub fn laplace_functional_check(
    configs: &[Vec<f64>],
    cox_intensity: &dyn Fn(f64) -> f64,
    probe: &dyn Fn(f64) -> f64,
    window: (f64, f64),
) -> Result<CoxDiagnostic> {
    if configs.is_empty() {
        return Err(Error::InsufficientData("no configurations supplied".into()));
    }
    let (lo, hi) = window;
    if !(hi > lo) {
        return Err(Error::param(format!("empty window [{lo}, {hi})")));
    }

    let lhs_samples: Vec<f64> = configs
        .iter()
        .map(|c| (-c.iter().map(|&x| probe(x)).sum::<f64>()).exp())
        .collect();
    let n = lhs_samples.len();
    let (laplace_lhs, laplace_se) = if n >= 2 {
        let s = summarize(&lhs_samples)?;
        (s.mean, s.se)
    } else {
        (lhs_samples[0], 0.0)
    };
    let laplace_rhs = (-trapezoid(|x| (1.0 - (-probe(x)).exp()) * cox_intensity(x), lo, hi)).exp();

    // cumulative intensity on the quadrature grid, linearly interpolated
    let h = (hi - lo) / QUAD_NODES as f64;
    let mut cum = Vec::with_capacity(QUAD_NODES + 1);
    cum.push(0.0);
    let mut prev = cox_intensity(lo);
    for i in 1..=QUAD_NODES {
        let cur = cox_intensity(lo + h * i as f64);
        cum.push(cum[i - 1] + 0.5 * h * (prev + cur));
        prev = cur;
    }
    let total = cum[QUAD_NODES];
    let time_change = |x: f64| {
        let pos = ((x - lo) / h).clamp(0.0, QUAD_NODES as f64);
        let i = (pos.floor() as usize).min(QUAD_NODES - 1);
        let frac = pos - i as f64;
        cum[i] + frac * (cum[i + 1] - cum[i])
    };

    let mut gaps = Vec::new();
    for c in configs {
        let mut last = 0.0;
        for &x in c.iter().filter(|&&x| x >= lo && x < hi) {
            let y = time_change(x);
            gaps.push(y - last);
            last = y;
        }
    }
    let (ks_gap_stat, ks_gap_p) = if gaps.is_empty() || total <= 0.0 {
        (0.0, 1.0)
    } else {
        let r = ks_one_sample(&gaps, |x| {
            if x <= 0.0 {
                0.0
            } else if x >= total {
                1.0
            } else {
                let e = (-x).exp();
                1.0 - e + x * e / total
            }
        })?;
        (r.statistic, r.p_value)
    };

    Ok(CoxDiagnostic {
        laplace_lhs,
        laplace_rhs,
        laplace_se,
        ks_gap_stat,
        ks_gap_p,
        n_gaps: gaps.len(),
        n_samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn bump(x: f64) -> f64 {
        if (0.0..1.0).contains(&x) {
            2.0 * (1.0 - x).powi(2)
        } else {
            0.0
        }
    }

    #[test]
    fn zero_intensity_is_empty() {
        let mut rng = rng_from_seed(1);
        assert!(sample_ppp(0.0, (0.0, 5.0), &mut rng).unwrap().is_empty());
    }

    #[test]
    fn negative_intensity_is_rejected() {
        let mut rng = rng_from_seed(1);
        assert!(matches!(
            sample_ppp(-1.0, (0.0, 1.0), &mut rng),
            Err(Error::Parameter(_))
        ));
        assert!(sample_ppp(1.0, (1.0, 1.0), &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_sample() {
        let a = sample_ppp(3.0, (0.0, 2.0), &mut rng_from_seed(9)).unwrap();
        let b = sample_ppp(3.0, (0.0, 2.0), &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_count_matches_intensity_times_length() {
        let mut rng = rng_from_seed(2);
        let counts: Vec<f64> = (0..10_000)
            .map(|_| sample_ppp(2.0, (0.0, 3.0), &mut rng).unwrap().len() as f64)
            .collect();
        let s = summarize(&counts).unwrap();
        assert!((s.mean - 6.0).abs() < 3.0 * s.se, "mean {} se {}", s.mean, s.se);
    }

    #[test]
    fn points_strictly_ascending_in_window() {
        let mut rng = rng_from_seed(4);
        for _ in 0..200 {
            let s = sample_ppp(50.0, (-1.0, 1.0), &mut rng).unwrap();
            assert!(s.points.windows(2).all(|w| w[0] < w[1]));
            assert!(s.points.iter().all(|&x| (-1.0..1.0).contains(&x)));
        }
    }

    #[test]
    fn empty_configs_give_unit_laplace() {
        let configs = vec![Vec::new(); 10];
        let d = laplace_functional_check(&configs, &|_| 0.0, &bump, (0.0, 4.0)).unwrap();
        assert_eq!(d.laplace_lhs, 1.0);
        assert_eq!(d.laplace_rhs, 1.0);
    }

    #[test]
    fn empty_list_is_insufficient() {
        assert!(matches!(
            laplace_functional_check(&[], &|_| 1.0, &bump, (0.0, 1.0)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn genuine_poisson_passes() {
        let mut rng = rng_from_seed(5);
        let c = 3.0;
        let configs: Vec<Vec<f64>> = (0..4000)
            .map(|_| sample_ppp(c, (0.0, 4.0), &mut rng).unwrap().points)
            .collect();
        let d = laplace_functional_check(&configs, &|_| c, &bump, (0.0, 4.0)).unwrap();
        assert!(d.laplace_z() < 3.0, "{d:?}");
        assert!(d.ks_gap_p > 0.01, "{d:?}");
        // closed form of the rhs: exp(-c int_0^1 (1 - e^{-2(1-x)^2}) dx)
        let exact = (-c * trapezoid(|x| 1.0 - (-2.0 * (1.0 - x) * (1.0 - x)).exp(), 0.0, 1.0)).exp();
        assert!((d.laplace_rhs - exact).abs() < 1e-3);
    }

    #[test]
    fn injected_point_at_zero_fails() {
        let mut rng = rng_from_seed(6);
        let c = 3.0;
        let configs: Vec<Vec<f64>> = (0..4000)
            .map(|_| {
                let mut p = sample_ppp(c, (0.0, 4.0), &mut rng).unwrap().points;
                p.insert(0, 0.0);
                p
            })
            .collect();
        let d = laplace_functional_check(&configs, &|_| c, &bump, (0.0, 4.0)).unwrap();
        assert!(d.laplace_z() > 3.0, "{d:?}");
    }

    #[test]
    fn inhomogeneous_intensity_time_change() {
        // intensity 1 + x on [0, 3): thinning a rate-4 process
        let mut rng = rng_from_seed(7);
        let configs: Vec<Vec<f64>> = (0..3000)
            .map(|_| {
                let p = sample_ppp(4.0, (0.0, 3.0), &mut rng).unwrap().points;
                p.into_iter()
                    .filter(|&x| rng.random::<f64>() < (1.0 + x) / 4.0)
                    .collect()
            })
            .collect();
        let d = laplace_functional_check(&configs, &|x| 1.0 + x, &bump, (0.0, 3.0)).unwrap();
        assert!(d.ks_gap_p > 0.01, "{d:?}");
        assert!(d.laplace_z() < 3.0, "{d:?}");
    }
}
