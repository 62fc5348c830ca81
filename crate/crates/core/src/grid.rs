//! Uniform periodic grids in one or two dimensions.
//!
//! Node `i` on an axis sits at `lower + i * spacing`; the upper bound is the
//! periodic image of the lower one and is never sampled. Flat storage is
//! row-major with axis 0 slowest.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A position in the laboratory (or center-of-mass) frame. In one dimension
/// only the first component is meaningful and the second is kept at zero.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || upper <= lower {
            return Err(Error::Config(format!(
                "degenerate bounds [{lower}, {upper}]"
            )));
        }
        if points < 16 || !points.is_power_of_two() {
            return Err(Error::Config(format!(
                "points per axis must be a power of two >= 16, got {points}"
            )));
        }
        Ok(Self { lower, upper, points })
    }

    pub fn extent(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn spacing(&self) -> f64 {
        self.extent() / self.points as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.spacing()
    }

    /// Angular wave number of FFT bin `i` in standard FFT ordering.
    pub fn wavenumber(&self, i: usize) -> f64 {
        let n = self.points as isize;
        let i = i as isize;
        let k = if i < n / 2 { i } else { i - n };
        2.0 * PI * k as f64 / self.extent()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.coord(i)).collect()
    }

    /// Fractional node index of `x`, not wrapped.
    pub fn fractional_index(&self, x: f64) -> f64 {
        (x - self.lower) / self.spacing()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Config(format!(
                "grid dimension must be 1 or 2, got {}",
                axes.len()
            )));
        }
        Ok(Self { axes })
    }

    /// Builds a grid from per-axis bounds and point counts.
    pub fn make(dim: usize, bounds: &[(f64, f64)], points: &[usize]) -> Result<Self> {
        if dim == 0 || dim > 2 {
            return Err(Error::Config(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if bounds.len() != dim || points.len() != dim {
            return Err(Error::Config(format!(
                "expected {dim} bounds and point counts, got {} and {}",
                bounds.len(),
                points.len()
            )));
        }
        let axes = bounds
            .iter()
            .zip(points)
            .map(|(&(lo, hi), &n)| Axis::new(lo, hi, n))
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes)
    }

    pub fn line(lower: f64, upper: f64, points: usize) -> Result<Self> {
        Self::make(1, &[(lower, upper)], &[points])
    }

    pub fn square(lower: f64, upper: f64, points: usize) -> Result<Self> {
        Self::make(2, &[(lower, upper), (lower, upper)], &[points, points])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, k: usize) -> f64 {
        self.axes[k].spacing()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    /// Points along the fast axis (1 for a one-dimensional grid's "rows").
    pub fn row_len(&self) -> usize {
        self.axes.last().map(|a| a.points).unwrap_or(0)
    }

    pub fn shape(&self) -> (usize, usize) {
        match self.dim() {
            1 => (self.axes[0].points, 1),
            _ => (self.axes[0].points, self.axes[1].points),
        }
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        match self.dim() {
            1 => i,
            _ => i * self.axes[1].points + j,
        }
    }

    pub fn unravel(&self, idx: usize) -> (usize, usize) {
        match self.dim() {
            1 => (idx, 0),
            _ => (idx / self.axes[1].points, idx % self.axes[1].points),
        }
    }

    pub fn point(&self, idx: usize) -> Point {
        let (i, j) = self.unravel(idx);
        match self.dim() {
            1 => [self.axes[0].coord(i), 0.0],
            _ => [self.axes[0].coord(i), self.axes[1].coord(j)],
        }
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |idx| self.point(idx))
    }

    /// `|k|^2` for every FFT bin, in flat storage order.
    pub fn wavenumber_squared(&self) -> Vec<f64> {
        (0..self.len())
            .map(|idx| {
                let (i, j) = self.unravel(idx);
                let kx = self.axes[0].wavenumber(i);
                match self.dim() {
                    1 => kx * kx,
                    _ => {
                        let ky = self.axes[1].wavenumber(j);
                        kx * kx + ky * ky
                    }
                }
            })
            .collect()
    }

    /// True if `p` lies inside `[lower, upper - spacing]` on every axis.
    pub fn contains(&self, p: Point) -> bool {
        self.axes.iter().enumerate().all(|(k, a)| {
            let x = p[k];
            x >= a.lower && x <= a.upper - a.spacing()
        })
    }

    /// Neighbor flat indices (non-periodic) along the grid graph.
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.unravel(idx);
        let (nx, ny) = self.shape();
        let mut out = [usize::MAX; 4];
        if i > 0 {
            out[0] = self.index(i - 1, j);
        }
        if i + 1 < nx {
            out[1] = self.index(i + 1, j);
        }
        if self.dim() == 2 {
            if j > 0 {
                out[2] = self.index(i, j - 1);
            }
            if j + 1 < ny {
                out[3] = self.index(i, j + 1);
            }
        }
        out.into_iter().filter(|&n| n != usize::MAX)
    }

    /// Distance in cells from `idx` to the nearest grid edge.
    pub fn cells_from_edge(&self, idx: usize) -> usize {
        let (i, j) = self.unravel(idx);
        let (nx, ny) = self.shape();
        let dx = i.min(nx - 1 - i);
        match self.dim() {
            1 => dx,
            _ => dx.min(j.min(ny - 1 - j)),
        }
    }

    pub fn same_as(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_from_bounds() {
        let g = Grid::make(1, &[(-10.0, 10.0)], &[256]).unwrap();
        assert_eq!(g.spacing(0), 0.078125);
        let g = Grid::make(2, &[(-5.0, 5.0), (-5.0, 5.0)], &[128, 128]).unwrap();
        assert_eq!(g.spacing(0), 10.0 / 128.0);
        assert_eq!(g.spacing(1), 10.0 / 128.0);
        assert_eq!(g.len(), 128 * 128);
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(matches!(
            Grid::make(1, &[(-10.0, 10.0)], &[100]),
            Err(Error::Config(_))
        ));
        assert!(Grid::make(1, &[(1.0, 1.0)], &[64]).is_err());
        assert!(Grid::make(1, &[(2.0, 1.0)], &[64]).is_err());
        assert!(Grid::make(1, &[(0.0, 1.0)], &[8]).is_err());
        assert!(Grid::make(3, &[(0.0, 1.0); 3], &[16; 3]).is_err());
    }

    #[test]
    fn origin_is_a_node() {
        let g = Grid::line(-10.0, 10.0, 256).unwrap();
        assert_eq!(g.point(128)[0], 0.0);
    }

    #[test]
    fn unravel_round_trip() {
        let g = Grid::make(2, &[(0.0, 1.0), (0.0, 2.0)], &[16, 32]).unwrap();
        for idx in [0, 1, 31, 32, 511] {
            let (i, j) = g.unravel(idx);
            assert_eq!(g.index(i, j), idx);
        }
        assert_eq!(g.point(33), [g.axis(0).coord(1), g.axis(1).coord(1)]);
    }

    #[test]
    fn wavenumbers_follow_fft_order() {
        let a = Axis::new(0.0, 2.0 * PI, 16).unwrap();
        assert_eq!(a.wavenumber(0), 0.0);
        assert!((a.wavenumber(1) - 1.0).abs() < 1e-15);
        assert!((a.wavenumber(8) + 8.0).abs() < 1e-15);
        assert!((a.wavenumber(15) + 1.0).abs() < 1e-15);
    }
}
