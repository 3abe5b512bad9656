//! Ensemble estimators and the two KS tests used by the acceptance suite.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Mean/variance summary of one ensemble column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    pub var: f64,
    /// Asymptotic 95% interval for the variance, from the sample fourth
    /// central moment (no normality assumption).
    pub var_ci: (f64, f64),
}

pub fn summarize(samples: &[f64]) -> Result<EnsembleSummary> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "summary needs at least 2 samples, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    let var = m2 / (nf - 1.0);
    let m4 = m4 / nf;
    let pop_var = m2 / nf;
    // Var(s^2) ~ (mu4 - sigma^4 (n-3)/(n-1)) / n
    let var_of_var = ((m4 - pop_var * pop_var * (nf - 3.0) / (nf - 1.0)) / nf).max(0.0);
    let half = 1.959_963_984_540_054 * var_of_var.sqrt();
    Ok(EnsembleSummary {
        n,
        mean,
        se: (var / nf).sqrt(),
        var,
        var_ci: (var - half, var + half),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    /// `None` for the one-sample test.
    pub n2: Option<usize>,
}

/// Kolmogorov survival function Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    if lambda < 0.3 {
        // alternating series converges badly here; Q is 1 to double precision
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let sq = n_eff.sqrt();
    kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)
}

fn sorted_finite(xs: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let a = sorted_finite(a);
    let b = sorted_finite(b);
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("KS test on an empty sample".into()));
    }
    let (n1, n2) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let x = a[i].min(b[j]);
        while i < n1 && a[i] <= x {
            i += 1;
        }
        while j < n2 && b[j] <= x {
            j += 1;
        }
        let gap = (i as f64 / n1 as f64 - j as f64 / n2 as f64).abs();
        d = d.max(gap);
    }
    let n_eff = (n1 * n2) as f64 / (n1 + n2) as f64;
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, n_eff),
        n1,
        n2: Some(n2),
    })
}

/// One-sample KS test of `xs` against a continuous CDF.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    let v = sorted_finite(xs);
    if v.is_empty() {
        return Err(Error::InsufficientData("KS test on an empty sample".into()));
    }
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
        n1: v.len(),
        n2: None,
    })
}

/// Sum of squared increments of `trajectory - compensator` on a uniform grid.
pub fn realized_qv(trajectory: &[f64], compensator: &[f64]) -> Result<f64> {
    if trajectory.len() < 2 {
        return Err(Error::InsufficientData(
            "realized QV needs at least 2 points".into(),
        ));
    }
    if trajectory.len() != compensator.len() {
        return Err(Error::param(format!(
            "trajectory has {} points but compensator has {}",
            trajectory.len(),
            compensator.len()
        )));
    }
    let qv = trajectory
        .windows(2)
        .zip(compensator.windows(2))
        .map(|(x, c)| {
            let d = (x[1] - c[1]) - (x[0] - c[0]);
            d * d
        })
        .sum();
    Ok(qv)
}

/// Standard error of a difference of two independent ensemble means.
pub fn pooled_se(a: &EnsembleSummary, b: &EnsembleSummary) -> f64 {
    (a.se * a.se + b.se * b.se).sqrt()
}
