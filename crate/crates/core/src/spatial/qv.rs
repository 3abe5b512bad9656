//! Realized versus predicted quadratic variation of `<X_t, φ>`.

use serde::{Deserialize, Serialize};

use crate::stats::{summarize, EnsembleSummary};
use crate::{Error, Result};

/// Smallest ensemble accepted by [`qv_decomposition_check`].
pub const MIN_TRAJECTORIES: usize = 500;

/// Per-step ingredients along one trajectory, all sampled at `times`:
/// `readout = X(φ)`, `drift` is the compensator rate, `square_term = X(φ²)`,
/// `q_term = ∬ q φ φ X X`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QvTrajectory {
    pub times: Vec<f64>,
    pub readout: Vec<f64>,
    pub drift: Vec<f64>,
    pub square_term: Vec<f64>,
    pub q_term: Vec<f64>,
}

impl QvTrajectory {
    fn check(&self) -> Result<()> {
        let n = self.times.len();
        if n < 2
            || self.readout.len() != n
            || self.drift.len() != n
            || self.square_term.len() != n
            || self.q_term.len() != n
        {
            return Err(Error::InsufficientData(
                "trajectory needs >= 2 points and matched columns".into(),
            ));
        }
        Ok(())
    }

    /// `Σ (ΔM)²` for `M = X(φ) - ∫ drift`, left-point compensator.
    pub fn realized(&self) -> Result<f64> {
        self.check()?;
        Ok((1..self.times.len())
            .map(|k| {
                let dt = self.times[k] - self.times[k - 1];
                let dm = self.readout[k] - self.readout[k - 1] - self.drift[k - 1] * dt;
                dm * dm
            })
            .sum())
    }

    /// `(∫ X(φ²) ds, ∫ q-term ds)`, left-point.
    pub fn integrals(&self) -> Result<(f64, f64)> {
        self.check()?;
        let mut sq = 0.0;
        let mut qt = 0.0;
        for k in 1..self.times.len() {
            let dt = self.times[k] - self.times[k - 1];
            sq += self.square_term[k - 1] * dt;
            qt += self.q_term[k - 1] * dt;
        }
        Ok((sq, qt))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvReport {
    pub n: usize,
    pub realized: EnsembleSummary,
    /// `2a ∫X(φ²) + b² ∫∬qφφXX`
    pub predicted: EnsembleSummary,
    /// `2a ∫X(φ²)` alone.
    pub predicted_no_q: EnsembleSummary,
    /// `mean(realized)/mean(predicted) - 1`
    pub rel_err: f64,
    pub rel_err_no_q: f64,
    /// 95% interval for `mean(realized)/mean(predicted)`.
    pub ratio_ci: (f64, f64),
}

/// Compares the ensemble mean of the realized QV with the model prediction.
pub fn qv_decomposition_check(ensemble: &[QvTrajectory], a_eff: f64, b_eff: f64) -> Result<QvReport> {
    if ensemble.len() < MIN_TRAJECTORIES {
        return Err(Error::InsufficientData(format!(
            "need >= {MIN_TRAJECTORIES} trajectories, got {}",
            ensemble.len()
        )));
    }
    let mut real = Vec::with_capacity(ensemble.len());
    let mut full = Vec::with_capacity(ensemble.len());
    let mut no_q = Vec::with_capacity(ensemble.len());
    for tr in ensemble {
        real.push(tr.realized()?);
        let (sq, qt) = tr.integrals()?;
        no_q.push(2.0 * a_eff * sq);
        full.push(2.0 * a_eff * sq + b_eff * b_eff * qt);
    }
    let realized = summarize(&real)?;
    let predicted = summarize(&full)?;
    let predicted_no_q = summarize(&no_q)?;
    // delta method on the ratio of means, using paired differences
    let ratio_ci = if predicted.mean > 0.0 {
        let r = realized.mean / predicted.mean;
        let resid: Vec<f64> = real.iter().zip(&full).map(|(x, y)| x - r * y).collect();
        let se = summarize(&resid)?.se / predicted.mean;
        (r - 1.96 * se, r + 1.96 * se)
    } else {
        (f64::NAN, f64::NAN)
    };
    let rel = |p: f64| {
        if p > 0.0 {
            realized.mean / p - 1.0
        } else if realized.mean == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    Ok(QvReport {
        n: ensemble.len(),
        rel_err: rel(predicted.mean),
        rel_err_no_q: rel(predicted_no_q.mean),
        realized,
        predicted,
        predicted_no_q,
        ratio_ci,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projected::{feller_step, DiffusionParams};
    use crate::rng::{replicate_seed, rng_from_seed};

    #[test]
    fn too_few_trajectories_is_an_error() {
        let tr = QvTrajectory {
            times: vec![0.0, 1.0],
            readout: vec![1.0, 1.0],
            drift: vec![0.0; 2],
            square_term: vec![1.0; 2],
            q_term: vec![0.0; 2],
        };
        let e = qv_decomposition_check(&vec![tr; 10], 1.0, 0.0);
        assert!(matches!(e, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn deterministic_input_has_zero_qv() {
        // linear readout with matching compensator
        let times: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let tr = QvTrajectory {
            readout: times.iter().map(|t| 1.0 + 0.5 * t).collect(),
            drift: vec![0.5; times.len()],
            square_term: vec![1.0; times.len()],
            q_term: vec![0.0; times.len()],
            times,
        };
        assert!(tr.realized().unwrap().abs() < 1e-20);
        let rep = qv_decomposition_check(&vec![tr; MIN_TRAJECTORIES], 0.5, 0.0).unwrap();
        assert!(rep.realized.mean.abs() < 1e-20);
        assert!((rep.rel_err + 1.0).abs() < 1e-12);
    }

    #[test]
    fn feller_paths_have_qv_2a_integral() {
        let p = DiffusionParams { a: 0.7, b: 0.0, x0: 1.0 };
        let steps = 400;
        let dt = 1.0 / steps as f64;
        let ensemble: Vec<QvTrajectory> = (0..MIN_TRAJECTORIES as u64)
            .map(|i| {
                let mut rng = rng_from_seed(replicate_seed(11, i));
                let mut x = p.x0;
                let mut tr = QvTrajectory::default();
                for k in 0..=steps {
                    tr.times.push(k as f64 * dt);
                    tr.readout.push(x);
                    tr.drift.push(0.0);
                    tr.square_term.push(x);
                    tr.q_term.push(0.0);
                    x = feller_step(x, &p, dt, &mut rng);
                }
                tr
            })
            .collect();
        let rep = qv_decomposition_check(&ensemble, p.a, 0.0).unwrap();
        assert!(rep.rel_err.abs() < 0.15, "{rep:?}");
        assert_eq!(rep.rel_err, rep.rel_err_no_q);
    }
}
