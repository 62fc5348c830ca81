//! Closed-form harmonic-oscillator coherent states: classical orbit, phase
//! integral, wave and polar fields, and the small-`hbar` width study.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{check_margin, Frame, PolarField, WaveField};
use crate::grid::{Grid, Point};
use crate::madelung::DEFAULT_RHO_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherentParams {
    pub dim: usize,
    pub mass: f64,
    pub omega: f64,
    pub x0: Point,
    pub v0: Point,
    pub hbar: f64,
}

impl CoherentParams {
    pub fn new(dim: usize, mass: f64, omega: f64, x0: Point, v0: Point, hbar: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")));
        }
        for (name, v) in [("mass", mass), ("omega", omega), ("hbar", hbar)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let mut p = CoherentParams { dim, mass, omega, x0, v0, hbar };
        if dim == 1 {
            p.x0[1] = 0.0;
            p.v0[1] = 0.0;
        }
        Ok(p)
    }

    pub fn with_hbar(&self, hbar: f64) -> Result<Self> {
        Self::new(self.dim, self.mass, self.omega, self.x0, self.v0, hbar)
    }

    /// `sqrt(hbar / 2 m omega)`.
    pub fn sigma(&self) -> f64 {
        (self.hbar / (2.0 * self.mass * self.omega)).sqrt()
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    /// Largest excursion of the orbit from the origin, per axis.
    pub fn amplitude(&self) -> Point {
        let mut a = [0.0; 2];
        for k in 0..self.dim {
            a[k] = self.x0[k].hypot(self.v0[k] / self.omega);
        }
        a
    }
}

pub fn classical_oscillator(p: &CoherentParams, t: f64) -> (Point, Point) {
    let (c, s) = ((p.omega * t).cos(), (p.omega * t).sin());
    let mut x = [0.0; 2];
    let mut v = [0.0; 2];
    for k in 0..p.dim {
        x[k] = p.x0[k] * c + p.v0[k] / p.omega * s;
        v[k] = -p.x0[k] * p.omega * s + p.v0[k] * c;
    }
    (x, v)
}

/// `int_0^t (1/2 m v^2 - 1/2 m omega^2 x^2) ds` along the classical orbit.
pub fn lagrangian_integral(p: &CoherentParams, t: f64) -> f64 {
    let w = p.omega;
    let (s2, c2) = ((2.0 * w * t).sin(), (2.0 * w * t).cos());
    (0..p.dim)
        .map(|k| {
            let a = p.x0[k];
            let b = p.v0[k] / w;
            0.25 * p.mass * w * ((b * b - a * a) * s2 - 2.0 * a * b * (1.0 - c2))
        })
        .sum()
}

/// Phase integral `g(t)`: the Lagrangian integral plus the zero-point drift
/// `dim * hbar omega / 2 * t` (`hbar omega t` in the plane).
pub fn g_phase(p: &CoherentParams, t: f64) -> f64 {
    0.5 * p.dim as f64 * p.hbar * p.omega * t + lagrangian_integral(p, t)
}

/// The same integral by adaptive Simpson quadrature.
pub fn g_phase_quadrature(p: &CoherentParams, t: f64, tol: f64) -> f64 {
    let integrand = |s: f64| {
        let (x, v) = classical_oscillator(p, s);
        let mut l = 0.5 * p.dim as f64 * p.hbar * p.omega;
        for k in 0..p.dim {
            l += 0.5 * p.mass * (v[k] * v[k] - p.omega * p.omega * x[k] * x[k]);
        }
        l
    };
    adaptive_simpson(&integrand, 0.0, t, tol, 50)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn go(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        go(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + go(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    go(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, depth)
}

/// Verifies the 5-sigma margin over the whole orbit, naming the time of the
/// largest excursion if it is violated.
fn check_orbit(p: &CoherentParams, grid: &Grid) -> Result<()> {
    if grid.dim() != p.dim {
        return Err(Error::GridMismatch(format!(
            "coherent state is {}D but grid is {}D",
            p.dim,
            grid.dim()
        )));
    }
    let sigma = p.sigma();
    for k in 0..p.dim {
        let phase = (p.v0[k] / p.omega).atan2(p.x0[k]);
        for shift in [0.0, PI] {
            let t = (phase + shift).rem_euclid(2.0 * PI) / p.omega;
            let (x, _) = classical_oscillator(p, t);
            if let Err(Error::Domain(msg)) = check_margin(grid, x, sigma) {
                return Err(Error::Domain(format!("orbit leaves the grid margin at t = {t}: {msg}")));
            }
        }
    }
    Ok(())
}

fn norm_factor(p: &CoherentParams) -> f64 {
    (2.0 * PI * p.sigma().powi(2)).powf(-0.25 * p.dim as f64)
}

pub fn coherent_field(p: &CoherentParams, t: f64, grid: &Grid) -> Result<WaveField> {
    check_orbit(p, grid)?;
    let (xc, vc) = classical_oscillator(p, t);
    let g = g_phase(p, t);
    let sigma2 = p.sigma().powi(2);
    let norm = norm_factor(p);
    WaveField::from_fn(grid.clone(), p.hbar, p.mass, Frame::Laboratory, |x| {
        let mut r2 = 0.0;
        let mut action = -g;
        for k in 0..p.dim {
            r2 += (x[k] - xc[k]).powi(2);
            action += p.mass * vc[k] * x[k];
        }
        Complex64::from_polar(norm * (-r2 / (4.0 * sigma2)).exp(), action / p.hbar)
    })
}

/// Density and action `m v(t).x - g(t)` in closed form.
pub fn coherent_polar(p: &CoherentParams, t: f64, grid: &Grid) -> Result<PolarField> {
    let wave = coherent_field(p, t, grid)?;
    let (_, vc) = classical_oscillator(p, t);
    let g = g_phase(p, t);
    let rho = wave.density();
    let floor = DEFAULT_RHO_FLOOR * rho.iter().copied().fold(0.0, f64::max);
    let valid: Vec<bool> = rho.iter().map(|&r| r > floor).collect();
    let action = grid
        .points()
        .map(|x| (0..p.dim).map(|k| p.mass * vc[k] * x[k]).sum::<f64>() - g)
        .collect();
    Ok(PolarField {
        grid: grid.clone(),
        rho,
        action,
        valid,
        component: vec![0; grid.len()],
        disconnected: false,
        hbar: p.hbar,
        mass: p.mass,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRow {
    pub hbar: f64,
    pub variance: Point,
    /// `sup |S_hbar - S_0|` over the grid (no constant removed).
    pub action_sup_diff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaReport {
    pub t: f64,
    pub rows: Vec<DeltaRow>,
    /// Least-squares slope of variance against `hbar`, per axis.
    pub slope: Option<Point>,
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Density variance and action offset against the `hbar -> 0` limit for a
/// strictly decreasing list of `hbar` values sharing orbit data.
pub fn delta_convergence_check(base: &CoherentParams, hbars: &[f64], t: f64, grid: &Grid) -> Result<DeltaReport> {
    if hbars.is_empty() || hbars.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Precondition("hbar list must be non-empty and strictly decreasing".into()));
    }
    let mut rows = Vec::with_capacity(hbars.len());
    for &h in hbars {
        let p = base.with_hbar(h)?;
        let field = coherent_field(&p, t, grid)?;
        let variance = field.position_variance()?;
        let polar = coherent_polar(&p, t, grid)?;
        let (_, vc) = classical_oscillator(&p, t);
        let limit = lagrangian_integral(&p, t);
        let action_sup_diff = grid
            .points()
            .zip(&polar.action)
            .map(|(x, s)| {
                let s0 = (0..p.dim).map(|k| p.mass * vc[k] * x[k]).sum::<f64>() - limit;
                (s - s0).abs()
            })
            .fold(0.0, f64::max);
        rows.push(DeltaRow { hbar: h, variance, action_sup_diff });
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.hbar).collect();
    let slope = (|| {
        let mut s = [0.0; 2];
        for k in 0..base.dim {
            let v: Vec<f64> = rows.iter().map(|r| r.variance[k]).collect();
            s[k] = fit_slope(&hs, &v)?;
        }
        Some(s)
    })();
    Ok(DeltaReport { t, rows, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::gaussian_packet;
    use crate::madelung::{to_polar, velocity_field};
    use approx::assert_abs_diff_eq;

    fn params(dim: usize) -> CoherentParams {
        CoherentParams::new(dim, 1.0, 1.0, [1.5, -0.5], [0.0, 1.0], 1.0).unwrap()
    }

    #[test]
    fn half_period_flip() {
        let p = CoherentParams::new(2, 1.0, 1.0, [1.0, 0.0], [0.0, 0.0], 1.0).unwrap();
        let (x, v) = classical_oscillator(&p, PI);
        assert_abs_diff_eq!(x[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-15);
        let q = CoherentParams::new(2, 1.0, 2.0, [0.0, 0.0], [1.0, 0.0], 1.0).unwrap();
        assert_abs_diff_eq!(classical_oscillator(&q, PI / 4.0).0[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn orbit_energy_is_constant() {
        let p = params(2);
        let e = |t: f64| {
            let (x, v) = classical_oscillator(&p, t);
            (0..2).map(|k| 0.5 * (v[k] * v[k] + x[k] * x[k])).sum::<f64>()
        };
        let e0 = e(0.0);
        for i in 0..100 {
            assert_abs_diff_eq!(e(i as f64 * 0.1 * PI), e0, epsilon = 1e-13);
        }
    }

    #[test]
    fn phase_closed_form_matches_quadrature() {
        for dim in [1, 2] {
            let p = params(dim);
            for t in [0.0, 0.3, 1.7, 5.0, 12.0] {
                assert_abs_diff_eq!(g_phase(&p, t), g_phase_quadrature(&p, t, 1e-13), epsilon = 1e-10);
            }
        }
        let rest = CoherentParams::new(2, 1.0, 1.3, [0.0, 0.0], [0.0, 0.0], 0.7).unwrap();
        assert_abs_diff_eq!(g_phase(&rest, 2.0), 0.7 * 1.3 * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn initial_field_is_the_gaussian_packet() {
        let g = Grid::square(-8.0, 8.0, 64).unwrap();
        let p = params(2);
        let a = coherent_field(&p, 0.0, &g).unwrap();
        let b = gaussian_packet(&g, p.x0, p.v0, p.sigma(), p.hbar, p.mass).unwrap();
        assert!(a.l2_distance(&b).unwrap() < 1e-14);
    }

    #[test]
    fn width_and_peak() {
        let g = Grid::square(-8.0, 8.0, 128).unwrap();
        let p = CoherentParams::new(2, 1.0, 2.0, [0.5, 0.0], [0.0, 0.0], 1.0).unwrap();
        let f = coherent_field(&p, 0.4, &g).unwrap();
        let var = f.position_variance().unwrap();
        assert_abs_diff_eq!(var[0].sqrt(), 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(var[1].sqrt(), 0.5, epsilon = 1e-10);
        let polar = coherent_polar(&p, 0.4, &g).unwrap();
        let peak = polar.rho.iter().copied().fold(0.0, f64::max);
        assert!(peak <= 1.0 / (2.0 * PI * 0.25) + 1e-12);
    }

    #[test]
    fn orbit_closes() {
        let g = Grid::square(-8.0, 8.0, 64).unwrap();
        let p = params(2);
        let a = coherent_field(&p, 0.3, &g).unwrap().density();
        let b = coherent_field(&p, 0.3 + p.period(), &g).unwrap().density();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn extracted_polar_matches_closed_form() {
        let g = Grid::square(-8.0, 8.0, 128).unwrap();
        let p = params(2);
        let t = 0.9;
        let exact = coherent_polar(&p, t, &g).unwrap();
        let got = to_polar(&coherent_field(&p, t, &g).unwrap(), None);
        let idx0 = (0..g.len()).find(|&i| got.valid[i]).unwrap();
        let offset = got.action[idx0] - exact.action[idx0];
        for i in 0..g.len() {
            if got.valid[i] {
                assert_abs_diff_eq!(got.action[i] - offset, exact.action[i], epsilon = 1e-10);
            }
        }
        let (_, vc) = classical_oscillator(&p, t);
        let vel = velocity_field(&got);
        for i in 0..g.len() {
            if let Some(v) = vel.get(i) {
                assert_abs_diff_eq!(v[0], vc[0], epsilon = 1e-10);
                assert_abs_diff_eq!(v[1], vc[1], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn orbit_outside_margin_names_a_time() {
        let g = Grid::square(-4.0, 4.0, 64).unwrap();
        let p = CoherentParams::new(2, 1.0, 1.0, [0.0, 0.0], [3.0, 0.0], 1.0).unwrap();
        match coherent_field(&p, 0.0, &g) {
            Err(Error::Domain(msg)) => assert!(msg.contains("t = ")),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn width_law_across_hbar() {
        let g = Grid::square(-8.0, 8.0, 256).unwrap();
        let p = params(2);
        let rep = delta_convergence_check(&p, &[1.0, 0.5, 0.25, 0.125], 1.0, &g).unwrap();
        for r in &rep.rows {
            assert_abs_diff_eq!(r.variance[0] / r.hbar, 0.5, epsilon = 1e-8);
            assert_abs_diff_eq!(r.action_sup_diff, r.hbar * 1.0, epsilon = 1e-9);
        }
        let s = rep.slope.unwrap();
        assert_abs_diff_eq!(s[0], 0.5, epsilon = 1e-8);
        let single = delta_convergence_check(&p, &[1.0], 1.0, &g).unwrap();
        assert!(single.slope.is_none());
        assert!(delta_convergence_check(&p, &[0.5, 1.0], 1.0, &g).is_err());
    }
}
