//! Complex wave fields and their Madelung (density/action) counterpart.
//!
//! All integrals are Riemann sums with the grid's cell volume; on a periodic
//! grid this is the trapezoidal rule and is spectrally accurate for smooth,
//! boundary-decayed fields.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};

/// Tolerated deviation of the squared norm from one before moment-type
/// operations refuse to run.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Width (in cells) of the boundary band that must stay empty.
pub const BOUNDARY_CELLS: usize = 3;

/// Largest amplitude tolerated inside the boundary band.
pub const BOUNDARY_AMPLITUDE: f64 = 1e-8;

/// Which coordinate frame a field's positions refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Frame {
    Laboratory,
    CenterOfMass,
}

impl Frame {
    pub fn tag(self) -> u8 {
        match self {
            Frame::Laboratory => 0,
            Frame::CenterOfMass => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Frame::Laboratory),
            1 => Ok(Frame::CenterOfMass),
            t => Err(Error::Format(format!("unknown frame tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    grid: Grid,
    amps: Vec<Complex64>,
    hbar: f64,
    mass: f64,
    frame: Frame,
}

impl WaveField {
    pub fn new(
        grid: Grid,
        amps: Vec<Complex64>,
        hbar: f64,
        mass: f64,
        frame: Frame,
    ) -> Result<Self> {
        if amps.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} amplitudes for a grid of {} points",
                amps.len(),
                grid.len()
            )));
        }
        if !(hbar > 0.0 && hbar.is_finite()) || !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Config(format!(
                "hbar and mass must be positive (hbar={hbar}, mass={mass})"
            )));
        }
        if let Some(i) = amps.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Domain(format!("non-finite amplitude at index {i}")));
        }
        Ok(Self { grid, amps, hbar, mass, frame })
    }

    /// Samples `f` at every grid node.
    pub fn from_fn(
        grid: Grid,
        hbar: f64,
        mass: f64,
        frame: Frame,
        f: impl Fn(Point) -> Complex64,
    ) -> Result<Self> {
        let amps = grid.points().map(f).collect();
        Self::new(grid, amps, hbar, mass, frame)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn with_frame(mut self, frame: Frame) -> Self {
        self.frame = frame;
        self
    }

    pub fn with_mass(mut self, mass: f64) -> Self {
        self.mass = mass;
        self
    }

    /// Replaces the amplitudes, keeping grid and constants.
    pub fn with_amplitudes(&self, amps: Vec<Complex64>) -> Result<Self> {
        Self::new(self.grid.clone(), amps, self.hbar, self.mass, self.frame)
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(Complex64::norm_sqr).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm_sqr();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Normalization { norm: n });
        }
        let s = 1.0 / n.sqrt();
        self.with_amplitudes(self.amps.iter().map(|z| z * s).collect())
    }

    pub fn density(&self) -> Vec<f64> {
        self.amps.iter().map(Complex64::norm_sqr).collect()
    }

    fn require_normalized(&self) -> Result<()> {
        let n = self.norm_sqr();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            Err(Error::Normalization { norm: n })
        } else {
            Ok(())
        }
    }

    /// First moment of `|psi|^2`.
    pub fn expectation_position(&self) -> Result<Point> {
        self.require_normalized()?;
        Ok(first_moment(&self.grid, &self.density()))
    }

    /// Per-axis variance of `|psi|^2`.
    pub fn position_variance(&self) -> Result<Point> {
        self.require_normalized()?;
        Ok(second_central_moment(&self.grid, &self.density()))
    }

    /// Marginal density along `axis` (the other axis integrated out).
    pub fn marginal_density(&self, axis: usize) -> Vec<f64> {
        marginal(&self.grid, &self.density(), axis)
    }

    /// Largest `|psi|` within [`BOUNDARY_CELLS`] cells of the grid edge.
    pub fn boundary_amplitude(&self) -> f64 {
        self.amps
            .iter()
            .enumerate()
            .filter(|(i, _)| self.grid.cells_from_edge(*i) < BOUNDARY_CELLS)
            .map(|(_, z)| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn l2_distance(&self, other: &WaveField) -> Result<f64> {
        self.grid.same_as(&other.grid)?;
        let s: f64 = self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        Ok((s * self.grid.cell_volume()).sqrt())
    }

    /// `<self|other>` with the grid measure.
    pub fn inner(&self, other: &WaveField) -> Result<Complex64> {
        self.grid.same_as(&other.grid)?;
        let s: Complex64 = self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(s * self.grid.cell_volume())
    }
}

/// Riemann-sum first moment of a density given on `grid`.
pub fn first_moment(grid: &Grid, rho: &[f64]) -> Point {
    let mut m = [0.0; 2];
    for (idx, &r) in rho.iter().enumerate() {
        let p = grid.point(idx);
        m[0] += p[0] * r;
        m[1] += p[1] * r;
    }
    let dv = grid.cell_volume();
    [m[0] * dv, m[1] * dv]
}

/// Per-axis central second moment of a (normalized) density.
pub fn second_central_moment(grid: &Grid, rho: &[f64]) -> Point {
    let mean = first_moment(grid, rho);
    let mut v = [0.0; 2];
    for (idx, &r) in rho.iter().enumerate() {
        let p = grid.point(idx);
        v[0] += (p[0] - mean[0]).powi(2) * r;
        v[1] += (p[1] - mean[1]).powi(2) * r;
    }
    let dv = grid.cell_volume();
    [v[0] * dv, v[1] * dv]
}

pub fn integrate(grid: &Grid, values: &[f64]) -> f64 {
    values.iter().sum::<f64>() * grid.cell_volume()
}

pub fn marginal(grid: &Grid, rho: &[f64], axis: usize) -> Vec<f64> {
    if grid.dim() == 1 {
        return rho.to_vec();
    }
    let (nx, ny) = grid.shape();
    match axis {
        0 => (0..nx)
            .map(|i| rho[i * ny..(i + 1) * ny].iter().sum::<f64>() * grid.spacing(1))
            .collect(),
        _ => (0..ny)
            .map(|j| (0..nx).map(|i| rho[i * ny + j]).sum::<f64>() * grid.spacing(0))
            .collect(),
    }
}

/// Normalized Gaussian wave packet with a plane-wave phase `m v0 . x / hbar`.
///
/// Each axis carries `(2 pi sigma^2)^(-1/4) exp(-(x - x0)^2 / 4 sigma^2)`, so
/// the two-dimensional prefactor is `(2 pi sigma^2)^(-1/2)`.
pub fn gaussian_packet(
    grid: &Grid,
    center: Point,
    velocity: Point,
    sigma: f64,
    hbar: f64,
    mass: f64,
) -> Result<WaveField> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    check_margin(grid, center, sigma)?;
    let dim = grid.dim();
    let norm = (2.0 * PI * sigma * sigma).powf(-0.25 * dim as f64);
    WaveField::from_fn(grid.clone(), hbar, mass, Frame::Laboratory, |p| {
        let mut r2 = 0.0;
        let mut phase = 0.0;
        for k in 0..dim {
            r2 += (p[k] - center[k]).powi(2);
            phase += mass * velocity[k] * p[k] / hbar;
        }
        Complex64::from_polar(norm * (-r2 / (4.0 * sigma * sigma)).exp(), phase)
    })
}

/// Requires `center` to sit at least five widths inside every boundary.
pub fn check_margin(grid: &Grid, center: Point, sigma: f64) -> Result<()> {
    for (k, a) in grid.axes().iter().enumerate() {
        let c = center[k];
        if c - 5.0 * sigma < a.lower || c + 5.0 * sigma > a.upper {
            return Err(Error::Domain(format!(
                "packet at {c} with width {sigma} is clipped by axis {k} bounds [{}, {}]",
                a.lower, a.upper
            )));
        }
    }
    Ok(())
}

/// Density and (phase-unwrapped) action on a grid.
///
/// `component` labels the connected piece of the support each valid point
/// belongs to; when the support is disconnected the action is only defined up
/// to an independent constant per component.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarField {
    pub grid: Grid,
    pub rho: Vec<f64>,
    pub action: Vec<f64>,
    pub valid: Vec<bool>,
    pub component: Vec<u32>,
    pub disconnected: bool,
    pub hbar: f64,
    pub mass: f64,
}

impl PolarField {
    /// Rebuilds `sqrt(rho) exp(i S / hbar)` (zero off the valid mask).
    pub fn to_wave(&self, frame: Frame) -> Result<WaveField> {
        let amps = self
            .rho
            .iter()
            .zip(&self.action)
            .zip(&self.valid)
            .map(|((r, s), &v)| {
                if v {
                    Complex64::from_polar(r.sqrt(), s / self.hbar)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        WaveField::new(self.grid.clone(), amps, self.hbar, self.mass, frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn line() -> Grid {
        Grid::line(-10.0, 10.0, 256).unwrap()
    }

    #[test]
    fn gaussian_peak_value() {
        let f = gaussian_packet(&line(), [0.0, 0.0], [0.0, 0.0], 1.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(
            f.amplitudes()[128].norm_sqr(),
            (2.0 * PI).powf(-0.5),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(f.norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn packet_moments_and_phase_gradient() {
        let g = Grid::line(-10.0, 10.0, 1024).unwrap();
        let f = gaussian_packet(&g, [2.0, 0.0], [3.0, 0.0], 0.5, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(f.expectation_position().unwrap()[0], 2.0, epsilon = 1e-8);
        // phase gradient from neighbouring ratios on the bulk
        let dx = g.spacing(0);
        let a = f.amplitudes();
        for i in 490..560 {
            let ratio = a[i + 1] / a[i - 1];
            let v = ratio.arg() / (2.0 * dx);
            assert_abs_diff_eq!(v, 3.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn coherent_width_from_oscillator() {
        let (hbar, m, w) = (1.0_f64, 1.0_f64, 1.0_f64);
        let sigma = (hbar / (2.0 * m * w)).sqrt();
        assert_abs_diff_eq!(sigma, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        let g = Grid::square(-8.0, 8.0, 128).unwrap();
        let f = gaussian_packet(&g, [1.0, -0.5], [0.0, 0.0], sigma, hbar, m).unwrap();
        let var = f.position_variance().unwrap();
        assert_abs_diff_eq!(var[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(var[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn variance_within_a_tenth_percent_at_eight_points_per_sigma() {
        let sigma = 0.8;
        let g = Grid::line(-12.8, 12.8, 256).unwrap(); // dx = 0.1 = sigma/8
        let f = gaussian_packet(&g, [0.3, 0.0], [1.0, 0.0], sigma, 1.0, 1.0).unwrap();
        let var = f.position_variance().unwrap()[0];
        assert!((var / (sigma * sigma) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn clipped_packet_is_rejected() {
        let r = gaussian_packet(&line(), [8.0, 0.0], [0.0, 0.0], 1.0, 1.0, 1.0);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn two_bump_mean() {
        let g = line();
        let a = gaussian_packet(&g, [-1.0, 0.0], [0.0, 0.0], 0.3, 1.0, 1.0).unwrap();
        let b = gaussian_packet(&g, [3.0, 0.0], [0.0, 0.0], 0.3, 1.0, 1.0).unwrap();
        let sum: Vec<_> = a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| x + y).collect();
        let f = a.with_amplitudes(sum).unwrap().normalize().unwrap();
        assert_abs_diff_eq!(f.expectation_position().unwrap()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unnormalized_moment_is_an_error() {
        let f = gaussian_packet(&line(), [0.0, 0.0], [0.0, 0.0], 1.0, 1.0, 1.0).unwrap();
        let doubled = f.with_amplitudes(f.amplitudes().iter().map(|z| z * 2.0).collect()).unwrap();
        assert!(matches!(
            doubled.expectation_position(),
            Err(Error::Normalization { .. })
        ));
        let back = doubled.normalize().unwrap();
        assert_abs_diff_eq!(back.l2_distance(&f).unwrap(), 0.0, epsilon = 1e-14);
        assert_eq!(f.l2_distance(&f).unwrap(), 0.0);
        assert_abs_diff_eq!(integrate(f.grid(), &f.density()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_mismatch() {
        let f = gaussian_packet(&line(), [0.0, 0.0], [0.0, 0.0], 1.0, 1.0, 1.0).unwrap();
        let g2 = Grid::line(-10.0, 10.0, 512).unwrap();
        let h = gaussian_packet(&g2, [0.0, 0.0], [0.0, 0.0], 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(f.l2_distance(&h), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn boundary_band() {
        let f = gaussian_packet(&line(), [0.0, 0.0], [0.0, 0.0], 1.0, 1.0, 1.0).unwrap();
        assert!(f.boundary_amplitude() < BOUNDARY_AMPLITUDE);
        let g = gaussian_packet(&line(), [4.5, 0.0], [0.0, 0.0], 1.0, 1.0, 1.0).unwrap();
        assert!(g.boundary_amplitude() > BOUNDARY_AMPLITUDE);
    }

    proptest! {
        #[test]
        fn mean_is_translation_equivariant(c in -2.0f64..2.0, s in 0.4f64..0.8, shift in 1usize..20) {
            let g = line();
            let f = gaussian_packet(&g, [c, 0.0], [0.0, 0.0], s, 1.0, 1.0).unwrap();
            let n = g.len();
            let rolled: Vec<_> = (0..n).map(|i| f.amplitudes()[(i + n - shift) % n]).collect();
            let r = f.with_amplitudes(rolled).unwrap();
            let d = r.expectation_position().unwrap()[0] - f.expectation_position().unwrap()[0];
            prop_assert!((d - shift as f64 * g.spacing(0)).abs() < 1e-10, "d={} expected={}", d, shift as f64 * g.spacing(0));
        }

        #[test]
        fn l2_triangle_inequality(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0,
                                  va in -2.0f64..2.0, vb in -2.0f64..2.0, vc in -2.0f64..2.0) {
            let g = line();
            let fa = gaussian_packet(&g, [a, 0.0], [va, 0.0], 0.7, 1.0, 1.0).unwrap();
            let fb = gaussian_packet(&g, [b, 0.0], [vb, 0.0], 0.9, 1.0, 1.0).unwrap();
            let fc = gaussian_packet(&g, [c, 0.0], [vc, 0.0], 1.1, 1.0, 1.0).unwrap();
            let ab = fa.l2_distance(&fb).unwrap();
            let bc = fb.l2_distance(&fc).unwrap();
            let ac = fa.l2_distance(&fc).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
