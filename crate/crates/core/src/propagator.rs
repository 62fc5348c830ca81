//! Split-operator time stepping for the linear Schrödinger equation
//! `i hbar d/dt psi = (-hbar^2/2m Laplacian + V) psi` on periodic grids.
//!
//! The default scheme is Strang splitting `V/2 . T . V/2`, with the kinetic
//! factor applied exactly in Fourier space. A fourth-order triple-jump
//! composition of Strang steps is available for oracle-grade runs.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{WaveField, BOUNDARY_AMPLITUDE};
use crate::grid::{Grid, Point};
use crate::potential::{PairPotential, PotentialSpec};
use crate::spectral::Spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Splitting {
    /// Second-order `V/2 T V/2`.
    #[default]
    Strang,
    /// Fourth-order Yoshida composition `S(w1 dt) S(w0 dt) S(w1 dt)`.
    Fourth,
}

impl Splitting {
    fn weights(self) -> &'static [f64] {
        const STRANG: [f64; 1] = [1.0];
        // w1 = 1/(2 - 2^(1/3)), w0 = 1 - 2 w1
        const W1: f64 = 1.351_207_191_959_657_8;
        const W0: f64 = -1.702_414_383_919_315_3;
        const YOSHIDA: [f64; 3] = [W1, W0, W1];
        match self {
            Splitting::Strang => &STRANG,
            Splitting::Fourth => &YOSHIDA,
        }
    }
}

/// Time-stepping parameters shared by every evolution routine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stepping {
    pub dt: f64,
    pub steps: usize,
    /// Store a snapshot every `store_every` steps (the initial state is
    /// always stored).
    pub store_every: usize,
    /// Compute norm/energy/mean diagnostics every this many steps.
    pub diagnostics_every: usize,
    pub splitting: Splitting,
}

impl Stepping {
    pub fn new(dt: f64, steps: usize, store_every: usize) -> Self {
        Self {
            dt,
            steps,
            store_every: store_every.max(1),
            diagnostics_every: 1,
            splitting: Splitting::Strang,
        }
    }

    pub fn with_splitting(mut self, splitting: Splitting) -> Self {
        self.splitting = splitting;
        self
    }

    pub fn with_diagnostics_every(mut self, every: usize) -> Self {
        self.diagnostics_every = every.max(1);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub norm: f64,
    pub energy: f64,
    pub mean: Point,
    pub boundary_amplitude: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EvolutionRecord {
    pub times: Vec<f64>,
    pub snapshots: Vec<WaveField>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub warnings: Vec<String>,
}

impl EvolutionRecord {
    pub fn grid(&self) -> Option<&Grid> {
        self.snapshots.first().map(WaveField::grid)
    }

    pub fn last(&self) -> Option<&WaveField> {
        self.snapshots.last()
    }

    /// Largest `|norm(t) - norm(0)|` over the diagnostics.
    pub fn norm_drift(&self) -> f64 {
        let Some(first) = self.diagnostics.first() else { return 0.0 };
        self.diagnostics
            .iter()
            .map(|d| (d.norm - first.norm).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|E(t) - E(0)| / |E(0)|` over the diagnostics.
    pub fn energy_drift(&self) -> f64 {
        let Some(first) = self.diagnostics.first() else { return 0.0 };
        let scale = first.energy.abs().max(f64::MIN_POSITIVE);
        self.diagnostics
            .iter()
            .map(|d| (d.energy - first.energy).abs() / scale)
            .fold(0.0, f64::max)
    }

    /// Diagnostics rows as CSV: `t, norm, energy, x_mean[, y_mean], boundary_mass`.
    pub fn diagnostics_csv(&self) -> String {
        let dim = self.grid().map(Grid::dim).unwrap_or(1);
        let mut out = String::from(if dim == 2 {
            "t,norm,energy,x_mean,y_mean,boundary_mass\n"
        } else {
            "t,norm,energy,x_mean,boundary_mass\n"
        });
        for d in &self.diagnostics {
            let mut cols = vec![d.t, d.norm, d.energy, d.mean[0]];
            if dim == 2 {
                cols.push(d.mean[1]);
            }
            cols.push(d.boundary_amplitude);
            out.push_str(&crate::io::csv_row(&cols));
        }
        out
    }
}

struct Stage {
    potential_phase: Vec<Complex64>,
    kinetic_phase: Vec<Complex64>,
}

/// A configured split-step integrator for one grid, potential and time step.
pub struct Propagator {
    spectral: Spectral,
    potential: Vec<f64>,
    kinetic: Vec<f64>,
    hbar: f64,
    dt: f64,
    stages: Vec<Stage>,
    closing_phase: Vec<Complex64>,
}

impl Propagator {
    /// `axis_masses` are the inertial masses along each grid axis; they differ
    /// only for configuration-space grids of several particles.
    pub fn new(
        grid: &Grid,
        potential: Vec<f64>,
        hbar: f64,
        axis_masses: [f64; 2],
        dt: f64,
        splitting: Splitting,
    ) -> Result<Self> {
        if potential.len() != grid.len() {
            return Err(Error::GridMismatch("potential does not match grid".into()));
        }
        let spectral = Spectral::new(grid);
        let kinetic: Vec<f64> = (0..grid.len())
            .map(|idx| {
                let (i, j) = grid.unravel(idx);
                let kx = grid.axis(0).wavenumber(i);
                let mut e = hbar * hbar * kx * kx / (2.0 * axis_masses[0]);
                if grid.dim() == 2 {
                    let ky = grid.axis(1).wavenumber(j);
                    e += hbar * hbar * ky * ky / (2.0 * axis_masses[1]);
                }
                e
            })
            .collect();
        let phase = |values: &[f64], tau: f64| -> Vec<Complex64> {
            values
                .iter()
                .map(|v| Complex64::from_polar(1.0, -v * tau / hbar))
                .collect()
        };
        // Consecutive half kicks between stages are merged: for weights
        // w_1..w_n the kicks are w_1/2, (w_1+w_2)/2, ..., w_n/2.
        let weights = splitting.weights();
        let mut stages = Vec::with_capacity(weights.len());
        for (s, &w) in weights.iter().enumerate() {
            let prev = if s == 0 { 0.0 } else { weights[s - 1] };
            stages.push(Stage {
                potential_phase: phase(&potential, 0.5 * (prev + w) * dt),
                kinetic_phase: phase(&kinetic, w * dt),
            });
        }
        let closing_phase = phase(&potential, 0.5 * weights[weights.len() - 1] * dt);
        Ok(Self { spectral, potential, kinetic, hbar, dt, stages, closing_phase })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, psi: &mut [Complex64]) {
        for stage in &self.stages {
            multiply(psi, &stage.potential_phase);
            self.spectral.forward(psi);
            multiply(psi, &stage.kinetic_phase);
            self.spectral.inverse(psi);
        }
        multiply(psi, &self.closing_phase);
    }

    /// `<H>/<psi|psi>`.
    pub fn energy(&self, psi: &[Complex64]) -> f64 {
        let mut buf = psi.to_vec();
        self.spectral.forward(&mut buf);
        let n = psi.len() as f64;
        let kin: f64 = buf
            .iter()
            .zip(&self.kinetic)
            .map(|(z, e)| z.norm_sqr() * e)
            .sum::<f64>()
            / n;
        let pot: f64 = psi
            .iter()
            .zip(&self.potential)
            .map(|(z, v)| z.norm_sqr() * v)
            .sum();
        let norm: f64 = psi.iter().map(Complex64::norm_sqr).sum();
        (kin + pot) / norm
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }
}

fn multiply(psi: &mut [Complex64], phase: &[Complex64]) {
    psi.par_iter_mut().zip(phase.par_iter()).for_each(|(z, p)| *z *= p);
}

/// Largest stable-looking step for an explicit reading of the grid,
/// `m dx^2 / (pi hbar)`; split-step is unconditionally stable, so exceeding it
/// only produces an advisory.
pub fn stability_limit(grid: &Grid, hbar: f64, mass: f64) -> f64 {
    grid.axes()
        .iter()
        .map(|a| mass * a.spacing().powi(2) / (std::f64::consts::PI * hbar))
        .fold(f64::INFINITY, f64::min)
}

fn diagnostics(
    prop: &Propagator,
    field: &WaveField,
    step: usize,
    t: f64,
) -> StepDiagnostics {
    let rho = field.density();
    let norm = rho.iter().sum::<f64>() * field.grid().cell_volume();
    let mut mean = crate::field::first_moment(field.grid(), &rho);
    if norm > 0.0 {
        mean = [mean[0] / norm, mean[1] / norm];
    }
    StepDiagnostics {
        step,
        t,
        norm,
        energy: prop.energy(field.amplitudes()),
        mean,
        boundary_amplitude: field.boundary_amplitude(),
    }
}

/// Runs `prop` from `initial`, calling `on_store` at every stored time
/// (including `t = 0`). Snapshots are not retained here.
pub fn evolve_with_observer(
    initial: &WaveField,
    prop: &Propagator,
    stepping: &Stepping,
    mut on_store: impl FnMut(f64, &WaveField) -> Result<()>,
) -> Result<EvolutionRecord> {
    stepping.validate()?;
    let mut record = EvolutionRecord::default();
    let mut field = initial.clone();
    let mut boundary_warned = false;
    let mut check = |field: &WaveField, step: usize, record: &mut EvolutionRecord| -> Result<()> {
        let t = step as f64 * stepping.dt;
        if step.is_multiple_of(stepping.diagnostics_every) || step == stepping.steps {
            let d = diagnostics(prop, field, step, t);
            if !d.norm.is_finite() {
                return Err(Error::Divergence { step, wave: None });
            }
            if d.boundary_amplitude > BOUNDARY_AMPLITUDE && !boundary_warned {
                boundary_warned = true;
                record.warnings.push(format!(
                    "boundary amplitude {:.3e} exceeds {BOUNDARY_AMPLITUDE:e} at step {step} (t = {t})",
                    d.boundary_amplitude
                ));
            }
            record.diagnostics.push(d);
        }
        Ok(())
    };
    let limit = stability_limit(initial.grid(), initial.hbar(), initial.mass());
    if stepping.dt > limit {
        record.warnings.push(format!(
            "advisory: dt = {} exceeds m dx^2/(pi hbar) = {limit:.3e}",
            stepping.dt
        ));
    }
    check(&field, 0, &mut record)?;
    record.times.push(0.0);
    on_store(0.0, &field)?;
    for step in 1..=stepping.steps {
        prop.step(field.amplitudes_mut());
        if field.amplitudes().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Divergence { step, wave: None });
        }
        check(&field, step, &mut record)?;
        if step % stepping.store_every == 0 {
            let t = step as f64 * stepping.dt;
            record.times.push(t);
            on_store(t, &field)?;
        }
    }
    Ok(record)
}

fn collect(
    initial: &WaveField,
    prop: &Propagator,
    stepping: &Stepping,
) -> Result<EvolutionRecord> {
    let mut snaps = Vec::new();
    let mut record = evolve_with_observer(initial, prop, stepping, |_, f| {
        snaps.push(f.clone());
        Ok(())
    })?;
    record.snapshots = snaps;
    Ok(record)
}

pub fn propagator_for(
    field: &WaveField,
    potential: &PotentialSpec,
    dt: f64,
    splitting: Splitting,
) -> Result<Propagator> {
    let v = potential.sample(field.grid(), field.mass())?;
    Propagator::new(
        field.grid(),
        v,
        field.hbar(),
        [field.mass(), field.mass()],
        dt,
        splitting,
    )
}

/// Evolves `field` under `potential` with Strang splitting.
pub fn split_step_evolve(
    field: &WaveField,
    potential: &PotentialSpec,
    dt: f64,
    steps: usize,
    store_every: usize,
) -> Result<EvolutionRecord> {
    evolve(field, potential, &Stepping::new(dt, steps, store_every))
}

pub fn evolve(
    field: &WaveField,
    potential: &PotentialSpec,
    stepping: &Stepping,
) -> Result<EvolutionRecord> {
    stepping.validate()?;
    let prop = propagator_for(field, potential, stepping.dt, stepping.splitting)?;
    collect(field, &prop, stepping)
}

/// Pair-plus-external potential on a two-particle configuration grid
/// `(x1, x2)`: `U(|x1 - x2|) + m1 V_g(x1) + m2 V_g(x2)`.
pub fn two_body_potential(
    grid: &Grid,
    masses: [f64; 2],
    pair: &PairPotential,
    external: &PotentialSpec,
) -> Result<Vec<f64>> {
    if grid.dim() != 2 {
        return Err(Error::Config("two-body configuration grid must be 2D".into()));
    }
    let v: Vec<f64> = grid
        .points()
        .map(|p| {
            pair.energy(p[0] - p[1])
                + external.energy([p[0], 0.0], masses[0])
                + external.energy([p[1], 0.0], masses[1])
        })
        .collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("two-body potential not finite".into()));
    }
    Ok(v)
}

/// Direct configuration-space solve of two 1D particles.
pub fn evolve_full_two_body(
    psi0: &WaveField,
    masses: [f64; 2],
    pair: &PairPotential,
    external: &PotentialSpec,
    stepping: &Stepping,
) -> Result<EvolutionRecord> {
    stepping.validate()?;
    if masses.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::Config("masses must be positive".into()));
    }
    let v = two_body_potential(psi0.grid(), masses, pair, external)?;
    let prop = Propagator::new(
        psi0.grid(),
        v,
        psi0.hbar(),
        masses,
        stepping.dt,
        stepping.splitting,
    )?;
    collect(psi0, &prop, stepping)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::gaussian_packet;
    use approx::assert_abs_diff_eq;

    #[test]
    fn yoshida_weights_sum_to_one() {
        let w = Splitting::Fourth.weights();
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        let w1 = 1.0 / (2.0 - 2f64.powf(1.0 / 3.0));
        assert_abs_diff_eq!(w[0], w1, epsilon = 1e-15);
    }

    #[test]
    fn zero_steps_is_identity() {
        let g = Grid::line(-10.0, 10.0, 128).unwrap();
        let f = gaussian_packet(&g, [0.0, 0.0], [1.0, 0.0], 1.0, 1.0, 1.0).unwrap();
        let rec = split_step_evolve(&f, &PotentialSpec::Free, 0.01, 0, 1).unwrap();
        assert_eq!(rec.snapshots.len(), 1);
        assert_eq!(rec.snapshots[0], f);
    }

    #[test]
    fn rejects_nonpositive_dt() {
        let g = Grid::line(-10.0, 10.0, 128).unwrap();
        let f = gaussian_packet(&g, [0.0, 0.0], [0.0, 0.0], 1.0, 1.0, 1.0).unwrap();
        assert!(split_step_evolve(&f, &PotentialSpec::Free, 0.0, 1, 1).is_err());
    }

    #[test]
    fn boundary_contact_is_a_warning() {
        let g = Grid::line(-10.0, 10.0, 256).unwrap();
        let f = gaussian_packet(&g, [0.0, 0.0], [6.0, 0.0], 1.0, 1.0, 1.0).unwrap();
        let rec = split_step_evolve(&f, &PotentialSpec::Free, 0.01, 200, 50).unwrap();
        assert!(rec.warnings.iter().any(|w| w.contains("boundary")));
    }

    #[test]
    fn energy_of_harmonic_ground_state() {
        let g = Grid::line(-10.0, 10.0, 256).unwrap();
        let f = gaussian_packet(&g, [0.0, 0.0], [0.0, 0.0], (0.5f64).sqrt(), 1.0, 1.0).unwrap();
        let prop = propagator_for(&f, &PotentialSpec::Harmonic { omega: [1.0, 0.0] }, 0.01, Splitting::Strang).unwrap();
        assert_abs_diff_eq!(prop.energy(f.amplitudes()), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn stability_advisory_reported() {
        let g = Grid::line(-10.0, 10.0, 256).unwrap();
        let f = gaussian_packet(&g, [0.0, 0.0], [0.0, 0.0], 1.0, 1.0, 1.0).unwrap();
        let rec = split_step_evolve(&f, &PotentialSpec::Free, 0.1, 2, 1).unwrap();
        assert!(rec.warnings.iter().any(|w| w.contains("advisory")));
    }

    #[test]
    fn product_state_stays_product_without_coupling() {
        let g1 = Grid::line(-10.0, 10.0, 64).unwrap();
        let a = gaussian_packet(&g1, [-2.0, 0.0], [1.0, 0.0], 0.8, 1.0, 1.0).unwrap();
        let b = gaussian_packet(&g1, [2.0, 0.0], [-0.5, 0.0], 1.1, 1.0, 2.0).unwrap();
        let g2 = Grid::square(-10.0, 10.0, 64).unwrap();
        let amps: Vec<Complex64> = (0..g2.len())
            .map(|idx| {
                let (i, j) = g2.unravel(idx);
                a.amplitudes()[i] * b.amplitudes()[j]
            })
            .collect();
        let psi0 = WaveField::new(g2.clone(), amps, 1.0, 1.0, crate::field::Frame::Laboratory).unwrap();
        let st = Stepping::new(0.01, 100, 100);
        let rec = evolve_full_two_body(&psi0, [1.0, 2.0], &PairPotential::None, &PotentialSpec::Free, &st).unwrap();
        let ra = split_step_evolve(&a, &PotentialSpec::Free, 0.01, 100, 100).unwrap();
        let rb = split_step_evolve(&b, &PotentialSpec::Free, 0.01, 100, 100).unwrap();
        let full = rec.last().unwrap();
        let (fa, fb) = (ra.last().unwrap(), rb.last().unwrap());
        let max_err = (0..g2.len())
            .map(|idx| {
                let (i, j) = g2.unravel(idx);
                (full.amplitudes()[idx] - fa.amplitudes()[i] * fb.amplitudes()[j]).norm()
            })
            .fold(0.0, f64::max);
        assert!(max_err < 1e-12, "{max_err}");
        // marginal cross-correlation factorizes
        let rho = full.density();
        let dv = g2.cell_volume();
        let (mut exy, mut ex, mut ey) = (0.0, 0.0, 0.0);
        for (idx, r) in rho.iter().enumerate() {
            let p = g2.point(idx);
            exy += p[0] * p[1] * r * dv;
            ex += p[0] * r * dv;
            ey += p[1] * r * dv;
        }
        assert!((exy - ex * ey).abs() < 1e-8);
    }
}
