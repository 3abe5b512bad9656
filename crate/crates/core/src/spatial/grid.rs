use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Flat periodic box `[0, L)^d` split into `cells_per_side^d` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusGrid {
    pub side_length: f64,
    pub cells_per_side: usize,
    pub dim: usize,
}

impl TorusGrid {
    pub fn new(side_length: f64, cells_per_side: usize, dim: usize) -> Result<Self> {
        if !(side_length > 0.0) || !side_length.is_finite() {
            return Err(Error::param(format!("side length must be > 0, got {side_length}")));
        }
        if cells_per_side == 0 {
            return Err(Error::param("grid needs at least one cell per side"));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::param(format!("dimension {dim} not supported")));
        }
        Ok(Self {
            side_length,
            cells_per_side,
            dim,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.side_length / self.cells_per_side as f64
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_side.pow(self.dim as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_size().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.side_length.powi(self.dim as i32)
    }

    /// Cell containing `x`, which must already lie in `[0, L)^d`.
    pub fn cell_of(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::Domain(x.to_vec()));
        }
        let h = self.cell_size();
        let mut idx = 0;
        for &xi in x.iter().rev() {
            if !(0.0..self.side_length).contains(&xi) {
                return Err(Error::Domain(x.to_vec()));
            }
            let c = ((xi / h) as usize).min(self.cells_per_side - 1);
            idx = idx * self.cells_per_side + c;
        }
        Ok(idx)
    }

    /// Per-axis indices of a flat cell index (axis 0 varies fastest).
    pub fn axes(&self, mut idx: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            out.push(idx % self.cells_per_side);
            idx /= self.cells_per_side;
        }
        out
    }

    pub fn cell_center(&self, idx: usize) -> Vec<f64> {
        let h = self.cell_size();
        self.axes(idx)
            .into_iter()
            .map(|c| (c as f64 + 0.5) * h)
            .collect()
    }

    pub fn wrap(&self, x: f64) -> f64 {
        let y = x.rem_euclid(self.side_length);
        // rem_euclid can return L itself for tiny negative inputs
        if y >= self.side_length {
            0.0
        } else {
            y
        }
    }

    /// Signed shortest displacement from `a` to `b` along one axis.
    pub fn delta(&self, a: f64, b: f64) -> f64 {
        let l = self.side_length;
        let mut d = (b - a).rem_euclid(l);
        if d > 0.5 * l {
            d -= l;
        }
        d
    }

    pub fn dist2(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = self.delta(x, y);
                d * d
            })
            .sum()
    }

    /// Cells whose centres lie in the closed ball of `radius` around `center`.
    pub fn cells_in_ball(&self, center: &[f64], radius: f64) -> Vec<usize> {
        let h = self.cell_size();
        let n = self.cells_per_side as i64;
        let reach = (radius / h).ceil() as i64 + 1;
        let r2 = radius * radius;
        let mut out = Vec::new();
        let base: Vec<i64> = center.iter().map(|&c| (c / h).floor() as i64).collect();
        let span = (2 * reach + 1).min(n);
        let offsets: Vec<i64> = if span == n {
            (0..n).collect()
        } else {
            (-reach..=reach).collect()
        };
        let mut counter = vec![0usize; self.dim];
        loop {
            let mut idx = 0usize;
            let mut d2 = 0.0;
            for ax in (0..self.dim).rev() {
                let raw = if span == n {
                    offsets[counter[ax]]
                } else {
                    base[ax] + offsets[counter[ax]]
                };
                let c = raw.rem_euclid(n) as usize;
                let cc = (c as f64 + 0.5) * h;
                let d = self.delta(center[ax], cc);
                d2 += d * d;
                idx = idx * self.cells_per_side + c;
            }
            if d2 <= r2 {
                out.push(idx);
            }
            let mut ax = 0;
            loop {
                if ax == self.dim {
                    out.sort_unstable();
                    out.dedup();
                    return out;
                }
                counter[ax] += 1;
                if counter[ax] < offsets.len() {
                    break;
                }
                counter[ax] = 0;
                ax += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_lookup_round_trip() {
        let g = TorusGrid::new(4.0, 8, 2).unwrap();
        for idx in 0..g.n_cells() {
            assert_eq!(g.cell_of(&g.cell_center(idx)).unwrap(), idx);
        }
        assert!(matches!(g.cell_of(&[4.0, 0.0]), Err(Error::Domain(_))));
        assert!(g.cell_of(&[-0.1, 0.0]).is_err());
    }

    #[test]
    fn wrap_and_delta() {
        let g = TorusGrid::new(10.0, 10, 1).unwrap();
        assert_eq!(g.wrap(-1.0), 9.0);
        assert_eq!(g.wrap(12.5), 2.5);
        assert_eq!(g.delta(9.5, 0.5), 1.0);
        assert_eq!(g.delta(0.5, 9.5), -1.0);
    }

    #[test]
    fn ball_cell_counts() {
        let g = TorusGrid::new(16.0, 64, 1).unwrap();
        // radius 1 = 4 cells each side
        assert_eq!(g.cells_in_ball(&[8.0], 1.0).len(), 8);
        // wraps across 0
        let cells = g.cells_in_ball(&[0.1], 1.0);
        assert!(cells.contains(&63) && cells.contains(&0));
        let g2 = TorusGrid::new(8.0, 32, 2).unwrap();
        let n = g2.cells_in_ball(&[4.0, 4.0], 1.0).len() as f64;
        let expect = std::f64::consts::PI / g2.cell_volume();
        assert!((n - expect).abs() / expect < 0.1, "{n} vs {expect}");
    }

    #[test]
    fn huge_ball_covers_everything_once() {
        let g = TorusGrid::new(2.0, 4, 2).unwrap();
        assert_eq!(g.cells_in_ball(&[1.0, 1.0], 10.0).len(), 16);
    }
}
