//! Diffusion coefficient of the rescaled neutral dynamics and a
//! finite-difference heat-flow oracle.

use super::grid::TorusGrid;
use super::lookdown::unit_ball_volume;
use crate::{Error, Result};

/// Midpoint rule with `n` cells on `[a, b]`.
fn midpoint(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

/// `∫_{B_1} x_1² dx` by Richardson-extrapolated midpoint quadrature in
/// `x_1 = sin θ`, slicing the ball into `(d-1)`-balls.
pub fn second_moment_unit_ball(d: usize) -> f64 {
    assert!(d >= 1, "dimension must be at least 1");
    let slice = unit_ball_volume(d - 1);
    let f = move |th: f64| {
        let (s, c) = th.sin_cos();
        // x² · V_{d-1} (1 - x²)^{(d-1)/2} · dx/dθ
        s * s * slice * c.powi(d as i32)
    };
    let half = std::f64::consts::FRAC_PI_2;
    let levels = 8;
    let mut table = vec![vec![0.0; levels]; levels];
    let mut n = 16;
    for i in 0..levels {
        table[i][0] = midpoint(&f, -half, half, n);
        // the midpoint error expands in even powers of h
        for j in 1..=i {
            let p = 4f64.powi(j as i32);
            table[i][j] = (p * table[i][j - 1] - table[i - 1][j - 1]) / (p - 1.0);
        }
        n *= 2;
    }
    table[levels - 1][levels - 1]
}

/// `C(d) N u r^{d+2} / (J M²)`, the coefficient of `Δ` in the limit.
pub fn laplacian_coeff(d: usize, r: f64, u: f64, n: f64, j: f64, m: f64) -> Result<f64> {
    if !(1..=3).contains(&d) {
        return Err(Error::param(format!("dimension must be 1, 2 or 3, got {d}")));
    }
    for (name, v) in [("r", r), ("u", u), ("N", n), ("J", j), ("M", m)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::param(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(second_moment_unit_ball(d) * n * u * r.powi(d as i32 + 2) / (j * m * m))
}

/// Exact decay rate of a cosine mode `cos(k x)` under the one-dimensional
/// neutral event mean: `ν ε 2R (sinc²(kR) - 1)`, with `ν` the centre density.
pub fn cosine_mode_rate_1d(centre_density: f64, impact: f64, radius: f64, k: f64) -> f64 {
    let x = k * radius;
    let sinc = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
    centre_density * impact * 2.0 * radius * (sinc * sinc - 1.0)
}

/// Explicit finite-difference solution of `∂_t m = c Δ m` on the torus grid.
pub fn heat_flow(grid: &TorusGrid, m0: &[f64], c: f64, t: f64) -> Result<Vec<f64>> {
    if m0.len() != grid.n_cells() {
        return Err(Error::param("initial data does not match the grid"));
    }
    if !(c >= 0.0) || !(t >= 0.0) {
        return Err(Error::param("need c >= 0 and t >= 0"));
    }
    if c == 0.0 || t == 0.0 {
        return Ok(m0.to_vec());
    }
    let h = grid.cell_size();
    let n = grid.cells_per_side;
    let stable = 0.4 * h * h / (c * grid.dim as f64);
    let steps = (t / stable).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let nu = c * dt / (h * h);
    let stride: Vec<usize> = (0..grid.dim).map(|a| n.pow(a as u32)).collect();
    let mut m = m0.to_vec();
    let mut next = vec![0.0; m.len()];
    for _ in 0..steps {
        for (idx, out) in next.iter_mut().enumerate() {
            let mut lap = 0.0;
            for &s in &stride {
                let i = (idx / s) % n;
                let up = if i + 1 == n { idx + s - n * s } else { idx + s };
                let down = if i == 0 { idx + n * s - s } else { idx - s };
                lap += m[up] + m[down] - 2.0 * m[idx];
            }
            *out = m[idx] + nu * lap;
        }
        std::mem::swap(&mut m, &mut next);
    }
    Ok(m)
}
