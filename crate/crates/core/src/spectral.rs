//! FFT plumbing on periodic grids: forward/inverse transforms, spectral
//! shifts, kinetic-energy expectation and trigonometric interpolation.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::grid::{Grid, Point};

const ROWS_PER_TASK: usize = 16;

/// Planned transforms for one grid. Cheap to clone.
#[derive(Clone)]
pub struct Spectral {
    grid: Grid,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: &Grid) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = grid
            .axes()
            .iter()
            .map(|a| planner.plan_fft_forward(a.points))
            .collect();
        let inv = grid
            .axes()
            .iter()
            .map(|a| planner.plan_fft_inverse(a.points))
            .collect();
        Self { grid: grid.clone(), fwd, inv }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.fwd);
    }

    /// Inverse transform in place, normalized so that `inverse(forward(x)) == x`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inv);
        let scale = 1.0 / data.len() as f64;
        data.par_iter_mut().for_each(|z| *z *= scale);
    }

    fn transform(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(data.len(), self.grid.len(), "buffer does not match grid");
        match self.grid.dim() {
            1 => plans[0].process(data),
            _ => {
                let (nx, ny) = self.grid.shape();
                let mut t = vec![Complex64::new(0.0, 0.0); data.len()];
                process_rows(data, ny, &plans[1]);
                transpose_into(data, &mut t, nx, ny);
                process_rows(&mut t, nx, &plans[0]);
                transpose_into(&t, data, ny, nx);
            }
        }
    }

    /// Translates a periodic field by `shift` using the Fourier shift theorem:
    /// `out(x) = f(x - shift)`.
    pub fn shift(&self, data: &[Complex64], shift: Point) -> Vec<Complex64> {
        let mut buf = data.to_vec();
        self.forward(&mut buf);
        let g = &self.grid;
        // Nyquist bins have no sign-symmetric partner; they get the real part
        // of the phase factor so that real signals stay real.
        let factor = |axis: usize, i: usize| {
            let a = g.axis(axis);
            let phase = a.wavenumber(i) * shift[axis];
            if 2 * i == a.points {
                Complex64::new(phase.cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, -phase)
            }
        };
        buf.par_iter_mut().enumerate().for_each(|(idx, z)| {
            let (i, j) = g.unravel(idx);
            let mut f = factor(0, i);
            if g.dim() == 2 {
                f *= factor(1, j);
            }
            *z *= f;
        });
        self.inverse(&mut buf);
        buf
    }

    /// `<psi| -hbar^2/(2m) Laplacian |psi>` with the Riemann measure of the grid.
    pub fn kinetic_energy(&self, psi: &[Complex64], hbar: f64, mass: f64) -> f64 {
        let mut buf = psi.to_vec();
        self.forward(&mut buf);
        let k2 = self.grid.wavenumber_squared();
        let sum: f64 = buf
            .iter()
            .zip(&k2)
            .map(|(z, k)| z.norm_sqr() * k)
            .sum();
        // Parseval: sum |f_k|^2 = N sum |f_j|^2.
        hbar * hbar / (2.0 * mass) * sum * self.grid.cell_volume() / self.grid.len() as f64
    }
}

fn process_rows(data: &mut [Complex64], row: usize, plan: &Arc<dyn Fft<f64>>) {
    let scratch_len = plan.get_inplace_scratch_len();
    data.par_chunks_mut(row * ROWS_PER_TASK).for_each_init(
        || vec![Complex64::new(0.0, 0.0); scratch_len],
        |scratch, chunk| plan.process_with_scratch(chunk, scratch),
    );
}

fn transpose_into(data: &[Complex64], out: &mut [Complex64], rows: usize, cols: usize) {
    const B: usize = 32;
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    out[c * rows + r] = data[r * cols + c];
                }
            }
        }
    }
}

/// Band-limited (trigonometric) interpolant of a periodic 1D sample set.
///
/// Exact for any signal whose spectrum fits inside the grid's Nyquist band;
/// the Nyquist bin is split symmetrically so real data interpolate to real
/// values.
#[derive(Debug, Clone)]
pub struct TrigInterpolator {
    lower: f64,
    extent: f64,
    coeffs: Vec<Complex64>,
}

impl TrigInterpolator {
    pub fn new(lower: f64, extent: f64, samples: &[Complex64]) -> Self {
        let n = samples.len();
        let mut coeffs = samples.to_vec();
        let mut planner = FftPlanner::new();
        planner.plan_fft_forward(n).process(&mut coeffs);
        for c in coeffs.iter_mut() {
            *c /= n as f64;
        }
        Self { lower, extent, coeffs }
    }

    pub fn eval(&self, x: f64) -> Complex64 {
        let n = self.coeffs.len();
        let theta = 2.0 * PI * (x - self.lower) / self.extent;
        let step = Complex64::from_polar(1.0, theta);
        let mut rot = Complex64::new(1.0, 0.0);
        let mut acc = self.coeffs[0];
        for k in 1..n / 2 {
            rot *= step;
            acc += self.coeffs[k] * rot + self.coeffs[n - k] * rot.conj();
        }
        // Nyquist term
        let half = n / 2;
        let nyq = (half as f64 * theta).cos();
        acc + self.coeffs[half] * nyq
    }
}

/// Band-limited interpolant of a periodic 2D sample set: each row along
/// axis 1 is interpolated first, then the resulting column along axis 0.
#[derive(Debug, Clone)]
pub struct TrigInterpolator2d {
    lower: f64,
    extent: f64,
    rows: Vec<TrigInterpolator>,
}

impl TrigInterpolator2d {
    pub fn new(grid: &Grid, samples: &[Complex64]) -> Self {
        let (nx, ny) = grid.shape();
        let a1 = grid.axis(1);
        let rows = (0..nx)
            .map(|i| TrigInterpolator::new(a1.lower, a1.extent(), &samples[i * ny..(i + 1) * ny]))
            .collect();
        let a0 = grid.axis(0);
        Self { lower: a0.lower, extent: a0.extent(), rows }
    }

    pub fn eval(&self, p: Point) -> Complex64 {
        let column: Vec<Complex64> = self.rows.iter().map(|r| r.eval(p[1])).collect();
        TrigInterpolator::new(self.lower, self.extent, &column).eval(p[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gaussian(grid: &Grid, c: Point) -> Vec<Complex64> {
        grid.points()
            .map(|p| {
                let r2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                Complex64::new((-r2).exp(), 0.0)
            })
            .collect()
    }

    #[test]
    fn round_trip_2d() {
        let g = Grid::make(2, &[(-4.0, 4.0), (-3.0, 3.0)], &[32, 64]).unwrap();
        let s = Spectral::new(&g);
        let f = gaussian(&g, [0.3, -0.2]);
        let mut buf = f.clone();
        s.forward(&mut buf);
        s.inverse(&mut buf);
        for (a, b) in f.iter().zip(&buf) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn forward_matches_naive_dft() {
        let g = Grid::make(2, &[(0.0, 1.0), (0.0, 1.0)], &[16, 16]).unwrap();
        let s = Spectral::new(&g);
        let f: Vec<Complex64> = (0..g.len())
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut fast = f.clone();
        s.forward(&mut fast);
        let (nx, ny) = g.shape();
        for (kx, ky) in [(0, 0), (1, 3), (7, 15), (15, 8)] {
            let mut acc = Complex64::new(0.0, 0.0);
            for x in 0..nx {
                for y in 0..ny {
                    let ph = -2.0 * PI * ((kx * x) as f64 / nx as f64 + (ky * y) as f64 / ny as f64);
                    acc += f[x * ny + y] * Complex64::from_polar(1.0, ph);
                }
            }
            assert_abs_diff_eq!((acc - fast[kx * ny + ky]).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn shift_by_one_cell_permutes() {
        let g = Grid::line(-8.0, 8.0, 64).unwrap();
        let s = Spectral::new(&g);
        let f = gaussian(&g, [0.0, 0.0]);
        let shifted = s.shift(&f, [g.spacing(0), 0.0]);
        for i in 0..64 {
            let prev = (i + 63) % 64;
            assert_abs_diff_eq!((shifted[i] - f[prev]).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn kinetic_energy_of_gaussian() {
        // psi = (2 pi s^2)^(-1/4) exp(-x^2/4s^2): <p^2>/2m = hbar^2/(8 m s^2)
        let g = Grid::line(-20.0, 20.0, 512).unwrap();
        let s = Spectral::new(&g);
        let sigma: f64 = 1.3;
        let norm = (2.0 * PI * sigma * sigma).powf(-0.25);
        let psi: Vec<Complex64> = g
            .points()
            .map(|p| Complex64::new(norm * (-p[0] * p[0] / (4.0 * sigma * sigma)).exp(), 0.0))
            .collect();
        let e = s.kinetic_energy(&psi, 1.0, 1.0);
        assert_abs_diff_eq!(e, 1.0 / (8.0 * sigma * sigma), epsilon = 1e-12);
    }

    #[test]
    fn trig_interpolation_is_exact_off_grid() {
        let g = Grid::line(-10.0, 10.0, 128).unwrap();
        let f: Vec<Complex64> = g
            .points()
            .map(|p| Complex64::new((-p[0] * p[0] / 2.0).exp(), 0.0) * Complex64::from_polar(1.0, 0.7 * p[0]))
            .collect();
        let interp = TrigInterpolator::new(-10.0, 20.0, &f);
        for x in [-1.234, 0.0, 0.0371, 2.5] {
            let exact = Complex64::new((-x * x / 2.0_f64).exp(), 0.0) * Complex64::from_polar(1.0, 0.7 * x);
            assert_abs_diff_eq!((interp.eval(x) - exact).norm(), 0.0, epsilon = 1e-12);
        }
    }
}
