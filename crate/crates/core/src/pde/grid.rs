use serde::{Deserialize, Serialize};

use super::problem::ProblemSpec;

/// Regular tensor-product grid over a rectangle.
///
/// Periodic grids exclude the upper endpoint (`x_i = lo + i * L / n`); non-periodic
/// grids include both endpoints (`x_i = lo + i * L / (n - 1)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub periodic: bool,
}

impl SpatialGrid {
    pub fn square(x_range: (f64, f64), y_range: (f64, f64), n: usize, periodic: bool) -> Self {
        Self {
            x_range,
            y_range,
            nx: n,
            ny: n,
            periodic,
        }
    }

    fn spacing(range: (f64, f64), n: usize, periodic: bool) -> f64 {
        let len = range.1 - range.0;
        if periodic {
            len / n as f64
        } else if n > 1 {
            len / (n - 1) as f64
        } else {
            0.0
        }
    }

    pub fn hx(&self) -> f64 {
        Self::spacing(self.x_range, self.nx, self.periodic)
    }

    pub fn hy(&self) -> f64 {
        Self::spacing(self.y_range, self.ny, self.periodic)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_range.0 + i as f64 * self.hx()
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_range.0 + j as f64 * self.hy()
    }

    fn nearest_1d(&self, v: f64, range: (f64, f64), n: usize, h: f64) -> usize {
        if n == 1 || h == 0.0 {
            return 0;
        }
        let k = ((v - range.0) / h).round();
        if self.periodic {
            (k as i64).rem_euclid(n as i64) as usize
        } else {
            k.clamp(0.0, (n - 1) as f64) as usize
        }
    }

    /// Index of the grid node nearest to `(x, y)`, wrapping on periodic grids.
    pub fn nearest(&self, x: f64, y: f64) -> (usize, usize) {
        (
            self.nearest_1d(x, self.x_range, self.nx, self.hx()),
            self.nearest_1d(y, self.y_range, self.ny, self.hy()),
        )
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(self.nx * self.ny);
        for i in 0..self.nx {
            for j in 0..self.ny {
                pts.push((self.x(i), self.y(j)));
            }
        }
        pts
    }
}

/// Regular `n x n` spatial grid crossed with every recorded snapshot time, as `(x, y, t)`.
pub fn eval_grid(spec: &ProblemSpec, n: usize) -> Vec<[f64; 3]> {
    let grid = spec.grid(n);
    let times = spec.snapshot_times();
    let mut pts = Vec::with_capacity(n * n * times.len());
    for &t in &times {
        for (x, y) in grid.points() {
            pts.push([x, y, t]);
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_is_the_corners() {
        let spec = ProblemSpec::allen_cahn().with_snapshots(1);
        let pts = eval_grid(&spec, 2);
        assert_eq!(
            pts,
            vec![[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]]
        );
    }

    #[test]
    fn dense_grid_counts() {
        let spec = ProblemSpec::burgers().with_snapshots(3);
        let pts = eval_grid(&spec, 120);
        assert_eq!(pts.len(), 14400 * 3);
    }

    #[test]
    fn points_stay_in_closed_domain() {
        for kind in super::super::BenchmarkKind::ALL {
            let spec = ProblemSpec::for_kind(kind).with_snapshots(2);
            for [x, y, t] in eval_grid(&spec, 17) {
                assert!(x >= spec.x_range.0 && x <= spec.x_range.1);
                assert!(y >= spec.y_range.0 && y <= spec.y_range.1);
                assert!(t >= spec.t_range.0 && t <= spec.t_range.1);
            }
        }
    }

    #[test]
    fn nearest_wraps_on_periodic_grid() {
        let g = SpatialGrid::square((0.0, 4.0), (0.0, 4.0), 8, true);
        assert_eq!(g.nearest(4.0, 0.49), (0, 1));
        assert_eq!(g.nearest(3.9, -0.1), (0, 0));
        let g = SpatialGrid::square((0.0, 1.0), (0.0, 1.0), 5, false);
        assert_eq!(g.nearest(1.0, 0.6), (4, 2));
        assert_eq!(g.nearest(2.0, -1.0), (4, 0));
    }
}
