use serde::{Deserialize, Serialize};

use super::grid::TorusGrid;

/// Test functions φ for readouts `<X, φ>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Probe {
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    /// Indicator of the box `[lo, hi)` (per axis, no wrapping).
    Indicator { lo: Vec<f64>, hi: Vec<f64> },
    /// `cos(2π m x_axis / L)`
    Cosine {
        mode: u32,
        #[serde(default)]
        axis: usize,
    },
    /// `exp(-|x - c|² / (2 w²))` with torus distance.
    GaussianBump { center: Vec<f64>, width: f64 },
}

fn one() -> f64 {
    1.0
}

impl Probe {
    pub fn constant() -> Self {
        Probe::Constant { value: 1.0 }
    }

    pub fn eval(&self, grid: &TorusGrid, x: &[f64]) -> f64 {
        match self {
            Probe::Constant { value } => *value,
            Probe::Indicator { lo, hi } => {
                let inside = x
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(&xi, (&l, &h))| xi >= l && xi < h);
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            Probe::Cosine { mode, axis } => {
                let k = std::f64::consts::TAU * *mode as f64 / grid.side_length;
                (k * x[*axis]).cos()
            }
            Probe::GaussianBump { center, width } => {
                let d2 = grid.dist2(x, center);
                (-d2 / (2.0 * width * width)).exp()
            }
        }
    }

    /// `Δφ(x)`; zero for indicators (not smooth).
    pub fn laplacian(&self, grid: &TorusGrid, x: &[f64]) -> f64 {
        match self {
            Probe::Constant { .. } | Probe::Indicator { .. } => 0.0,
            Probe::Cosine { .. } => self.laplacian_eigenvalue(grid).unwrap() * self.eval(grid, x),
            Probe::GaussianBump { width, .. } => {
                let w2 = width * width;
                let d2 = match self {
                    Probe::GaussianBump { center, .. } => grid.dist2(x, center),
                    _ => unreachable!(),
                };
                self.eval(grid, x) * (d2 / (w2 * w2) - grid.dim as f64 / w2)
            }
        }
    }

    /// Values at every cell centre.
    pub fn on_cells(&self, grid: &TorusGrid) -> Vec<f64> {
        (0..grid.n_cells())
            .map(|i| self.eval(grid, &grid.cell_center(i)))
            .collect()
    }

    /// Eigenvalue of the periodic Laplacian, when φ is an eigenfunction.
    pub fn laplacian_eigenvalue(&self, grid: &TorusGrid) -> Option<f64> {
        match self {
            Probe::Constant { .. } => Some(0.0),
            Probe::Cosine { mode, .. } => {
                let k = std::f64::consts::TAU * *mode as f64 / grid.side_length;
                Some(-k * k)
            }
            _ => None,
        }
    }
}

/// `<X, φ>` for a cell-wise density `x` (mass per unit volume).
pub fn integrate_cells(grid: &TorusGrid, density: &[f64], phi_cells: &[f64]) -> f64 {
    grid.cell_volume() * density.iter().zip(phi_cells).map(|(a, b)| a * b).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_integrates_to_zero_and_constant_to_volume() {
        let g = TorusGrid::new(4.0, 64, 1).unwrap();
        let ones = vec![1.0; g.n_cells()];
        let c = Probe::Cosine { mode: 2, axis: 0 }.on_cells(&g);
        assert!(integrate_cells(&g, &ones, &c).abs() < 1e-12);
        let k = Probe::constant().on_cells(&g);
        assert!((integrate_cells(&g, &ones, &k) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn probe_parses_from_toml() {
        let p: Probe = toml::from_str("kind = \"cosine\"\nmode = 1\n").unwrap();
        assert_eq!(p, Probe::Cosine { mode: 1, axis: 0 });
        assert!(toml::from_str::<Probe>("kind = \"cosine\"\nmode = 1\nbogus = 2\n").is_err());
    }
}
