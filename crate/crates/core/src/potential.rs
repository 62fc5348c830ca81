//! External potentials `V(x)` and pair couplings `U(|x_i - x_j|)`.
//!
//! External potentials are potential *energies* of a body of the given mass:
//! the linear kind is `m g . x` and the harmonic kind `1/2 m sum_k w_k^2 x_k^2`,
//! so the center-of-mass equation sees `M V_g(x_G)` simply by evaluating with
//! the total mass.

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};

/// Geometry of a wall with apertures, perpendicular to `axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct Barrier {
    /// Axis the wall is perpendicular to (0 or 1).
    pub axis: usize,
    pub position: f64,
    pub thickness: f64,
    /// Aperture centers along the other axis.
    pub slit_centers: Vec<f64>,
    pub slit_widths: Vec<f64>,
    pub height: f64,
    /// Length over which the wall edges are smoothed (tanh profile).
    pub smoothing: f64,
}

impl Barrier {
    fn profile(edge_lo: f64, edge_hi: f64, s: f64, x: f64) -> f64 {
        0.5 * (((x - edge_lo) / s).tanh() - ((x - edge_hi) / s).tanh())
    }

    fn wall(&self, along: f64) -> f64 {
        let h = 0.5 * self.thickness;
        Self::profile(self.position - h, self.position + h, self.smoothing, along)
    }

    fn opening(&self, across: f64) -> f64 {
        self.slit_centers
            .iter()
            .zip(&self.slit_widths)
            .map(|(&c, &w)| Self::profile(c - 0.5 * w, c + 0.5 * w, self.smoothing, across))
            .sum::<f64>()
            .min(1.0)
    }

    pub fn energy(&self, p: Point) -> f64 {
        let along = p[self.axis];
        let across = p[1 - self.axis];
        self.height * self.wall(along) * (1.0 - self.opening(across))
    }

    /// Index of the aperture containing `across`, if any (nominal edges).
    pub fn aperture_of(&self, across: f64) -> Option<usize> {
        self.slit_centers
            .iter()
            .zip(&self.slit_widths)
            .position(|(&c, &w)| (across - c).abs() < 0.5 * w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axis > 1 {
            return Err(Error::Config("barrier axis must be 0 or 1".into()));
        }
        if self.slit_centers.len() != self.slit_widths.len() || self.slit_centers.is_empty() {
            return Err(Error::Config("barrier needs matching, non-empty slit lists".into()));
        }
        if !(self.thickness > 0.0 && self.height > 0.0 && self.smoothing > 0.0) {
            return Err(Error::Config(
                "barrier thickness, height and smoothing must be positive".into(),
            ));
        }
        let mut spans: Vec<(f64, f64)> = self
            .slit_centers
            .iter()
            .zip(&self.slit_widths)
            .map(|(&c, &w)| (c - 0.5 * w, c + 0.5 * w))
            .collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        if spans.windows(2).any(|w| w[0].1 >= w[1].0) || spans.iter().any(|s| s.1 <= s.0) {
            return Err(Error::Config("barrier apertures must be disjoint with positive width".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Free,
    /// `m g . x`; a positive slope pulls toward negative coordinates.
    Linear { slope: Point },
    /// `1/2 m (w_x^2 x^2 + w_y^2 y^2)`.
    Harmonic { omega: Point },
    Barrier(Barrier),
    /// Potential energy sampled on its own grid, bilinearly interpolated.
    Tabulated { grid: Grid, values: Vec<f64> },
    Constant(f64),
    Sum(Vec<PotentialSpec>),
}

impl PotentialSpec {
    pub fn energy(&self, p: Point, mass: f64) -> f64 {
        match self {
            PotentialSpec::Free => 0.0,
            PotentialSpec::Linear { slope } => mass * (slope[0] * p[0] + slope[1] * p[1]),
            PotentialSpec::Harmonic { omega } => {
                0.5 * mass * (omega[0].powi(2) * p[0].powi(2) + omega[1].powi(2) * p[1].powi(2))
            }
            PotentialSpec::Barrier(b) => b.energy(p),
            PotentialSpec::Tabulated { grid, values } => bilinear(grid, values, p),
            PotentialSpec::Constant(c) => *c,
            PotentialSpec::Sum(parts) => parts.iter().map(|v| v.energy(p, mass)).sum(),
        }
    }

    /// Gradient of the potential energy. Closed form where available,
    /// centered differences otherwise.
    pub fn gradient(&self, p: Point, mass: f64) -> Point {
        match self {
            PotentialSpec::Free | PotentialSpec::Constant(_) => [0.0, 0.0],
            PotentialSpec::Linear { slope } => [mass * slope[0], mass * slope[1]],
            PotentialSpec::Harmonic { omega } => [
                mass * omega[0].powi(2) * p[0],
                mass * omega[1].powi(2) * p[1],
            ],
            PotentialSpec::Sum(parts) => parts.iter().fold([0.0, 0.0], |acc, v| {
                let g = v.gradient(p, mass);
                [acc[0] + g[0], acc[1] + g[1]]
            }),
            _ => {
                let h = 1e-5;
                let mut g = [0.0; 2];
                for (k, gk) in g.iter_mut().enumerate() {
                    let mut a = p;
                    let mut b = p;
                    a[k] += h;
                    b[k] -= h;
                    *gk = (self.energy(a, mass) - self.energy(b, mass)) / (2.0 * h);
                }
                g
            }
        }
    }

    /// True for the kinds whose classical action has a closed form.
    pub fn has_closed_form(&self) -> bool {
        matches!(
            self,
            PotentialSpec::Free | PotentialSpec::Linear { .. } | PotentialSpec::Harmonic { .. }
        )
    }

    pub fn sample(&self, grid: &Grid, mass: f64) -> Result<Vec<f64>> {
        let v: Vec<f64> = grid.points().map(|p| self.energy(p, mass)).collect();
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!(
                "potential not finite at {:?}",
                grid.point(i)
            )));
        }
        Ok(v)
    }

    pub fn shifted(self, offset: f64) -> Self {
        PotentialSpec::Sum(vec![self, PotentialSpec::Constant(offset)])
    }
}

fn bilinear(grid: &Grid, values: &[f64], p: Point) -> f64 {
    let mut idx = [0usize; 2];
    let mut frac = [0.0; 2];
    for (k, a) in grid.axes().iter().enumerate() {
        let f = a.fractional_index(p[k]).clamp(0.0, (a.points - 1) as f64);
        let i = (f.floor() as usize).min(a.points - 2);
        idx[k] = i;
        frac[k] = f - i as f64;
    }
    match grid.dim() {
        1 => values[idx[0]] * (1.0 - frac[0]) + values[idx[0] + 1] * frac[0],
        _ => {
            let v = |i: usize, j: usize| values[grid.index(i, j)];
            let (i, j) = (idx[0], idx[1]);
            let (fx, fy) = (frac[0], frac[1]);
            v(i, j) * (1.0 - fx) * (1.0 - fy)
                + v(i + 1, j) * fx * (1.0 - fy)
                + v(i, j + 1) * (1.0 - fx) * fy
                + v(i + 1, j + 1) * fx * fy
        }
    }
}

/// Pair coupling depending only on the separation `r = |x_i - x_j|`.
#[derive(Debug, Clone, PartialEq)]
pub enum PairPotential {
    None,
    /// `1/2 k r^2`
    Harmonic { k: f64 },
    /// `q / sqrt(r^2 + a^2)` with `q = q_i q_j`.
    SoftCoulomb { coupling: f64, softening: f64 },
    /// Radial table on `[0, r_max]`, linearly interpolated, constant beyond.
    Tabulated { r_max: f64, values: Vec<f64> },
}

impl PairPotential {
    pub fn energy(&self, r: f64) -> f64 {
        let r = r.abs();
        match self {
            PairPotential::None => 0.0,
            PairPotential::Harmonic { k } => 0.5 * k * r * r,
            PairPotential::SoftCoulomb { coupling, softening } => {
                coupling / (r * r + softening * softening).sqrt()
            }
            PairPotential::Tabulated { r_max, values } => {
                let n = values.len();
                if n < 2 {
                    return values.first().copied().unwrap_or(0.0);
                }
                let f = (r / r_max * (n - 1) as f64).min((n - 1) as f64);
                let i = (f.floor() as usize).min(n - 2);
                let t = f - i as f64;
                values[i] * (1.0 - t) + values[i + 1] * t
            }
        }
    }

    /// `dU/dr`.
    pub fn derivative(&self, r: f64) -> f64 {
        match self {
            PairPotential::None => 0.0,
            PairPotential::Harmonic { k } => k * r,
            PairPotential::SoftCoulomb { coupling, softening } => {
                -coupling * r / (r * r + softening * softening).powf(1.5)
            }
            PairPotential::Tabulated { .. } => {
                let h = 1e-6;
                (self.energy(r + h) - self.energy((r - h).max(0.0))) / (r + h - (r - h).max(0.0))
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, PairPotential::None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn slits() -> Barrier {
        Barrier {
            axis: 0,
            position: 0.0,
            thickness: 0.5,
            slit_centers: vec![-2.0, 2.0],
            slit_widths: vec![1.0, 1.0],
            height: 100.0,
            smoothing: 0.05,
        }
    }

    #[test]
    fn harmonic_energy_and_gradient() {
        let v = PotentialSpec::Harmonic { omega: [1.0, 2.0] };
        assert_abs_diff_eq!(v.energy([1.0, 1.0], 2.0), 0.5 * 2.0 * (1.0 + 4.0));
        assert_eq!(v.gradient([1.0, 1.0], 2.0), [2.0, 8.0]);
    }

    #[test]
    fn linear_scales_with_mass() {
        let v = PotentialSpec::Linear { slope: [9.8, 0.0] };
        assert_abs_diff_eq!(v.energy([2.0, 0.0], 3.0), 3.0 * 9.8 * 2.0);
    }

    #[test]
    fn barrier_blocks_outside_apertures() {
        let b = slits();
        b.validate().unwrap();
        assert!(b.energy([0.0, 0.0]) > 99.0);
        assert!(b.energy([0.0, 2.0]) < 1e-6);
        assert!(b.energy([3.0, 0.0]) < 1e-6);
        assert_eq!(b.aperture_of(-2.3), Some(0));
        assert_eq!(b.aperture_of(2.4), Some(1));
        assert_eq!(b.aperture_of(0.0), None);
    }

    #[test]
    fn overlapping_apertures_rejected() {
        let mut b = slits();
        b.slit_centers = vec![0.0, 0.5];
        assert!(b.validate().is_err());
    }

    #[test]
    fn numeric_gradient_for_barrier() {
        let v = PotentialSpec::Barrier(slits());
        let g = v.gradient([-0.25, 0.0], 1.0);
        let h = 1e-4;
        let fd = (v.energy([-0.25 + h, 0.0], 1.0) - v.energy([-0.25 - h, 0.0], 1.0)) / (2.0 * h);
        assert_abs_diff_eq!(g[0], fd, epsilon = 1e-3 * fd.abs());
    }

    #[test]
    fn tabulated_interpolates() {
        let g = Grid::line(0.0, 16.0, 16).unwrap();
        let values: Vec<f64> = g.points().map(|p| 2.0 * p[0]).collect();
        let v = PotentialSpec::Tabulated { grid: g, values };
        assert_abs_diff_eq!(v.energy([3.25, 0.0], 1.0), 6.5, epsilon = 1e-12);
    }

    #[test]
    fn pair_kinds() {
        assert_abs_diff_eq!(PairPotential::Harmonic { k: 2.0 }.energy(-3.0), 9.0);
        let c = PairPotential::SoftCoulomb { coupling: 1.0, softening: 1.0 };
        assert_abs_diff_eq!(c.energy(0.0), 1.0);
        let h = 1e-6;
        assert_abs_diff_eq!(
            c.derivative(0.7),
            (c.energy(0.7 + h) - c.energy(0.7 - h)) / (2.0 * h),
            epsilon = 1e-8
        );
        let t = PairPotential::Tabulated { r_max: 2.0, values: vec![0.0, 1.0, 4.0] };
        assert_abs_diff_eq!(t.energy(1.5), 2.5);
        assert_abs_diff_eq!(t.energy(5.0), 4.0);
    }
}
