//! Center-of-mass / relative decomposition of a composite body, factorized
//! evolution, internal-wave reconstruction and the two-particle check of
//! the factorized solution against a configuration-space solve.

use num_complex::Complex64;

use crate::bohm::{BohmTracker, Trajectory};
use crate::error::{Error, Result};
use crate::field::{Frame, WaveField, BOUNDARY_AMPLITUDE};
use crate::grid::{Grid, Point};
use crate::potential::{PairPotential, PotentialSpec};
use crate::propagator::{evolve, evolve_full_two_body, evolve_with_observer, EvolutionRecord, Propagator, Splitting, Stepping};
use crate::spectral::{Spectral, TrigInterpolator, TrigInterpolator2d};

/// Initial factorization residual above which the product hypothesis is
/// considered violated.
pub const FACTORIZATION_TOLERANCE: f64 = 1e-3;

fn check_masses(masses: &[f64]) -> Result<f64> {
    if masses.is_empty() {
        return Err(Error::Config("at least one particle is required".into()));
    }
    if let Some(m) = masses.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(Error::Config(format!("masses must be positive, got {m}")));
    }
    Ok(masses.iter().sum())
}

/// Center of mass `x_G` and relative positions `x_j - x_G`.
pub fn cm_coordinates(positions: &[Point], masses: &[f64]) -> Result<(Point, Vec<Point>)> {
    let total = check_masses(masses)?;
    if positions.len() != masses.len() {
        return Err(Error::Config(format!(
            "{} positions for {} masses",
            positions.len(),
            masses.len()
        )));
    }
    let mut g = [0.0; 2];
    for (x, m) in positions.iter().zip(masses) {
        g[0] += m * x[0];
        g[1] += m * x[1];
    }
    g = [g[0] / total, g[1] / total];
    let rel = positions.iter().map(|x| [x[0] - g[0], x[1] - g[1]]).collect();
    Ok((g, rel))
}

pub fn from_cm_coordinates(center: Point, relative: &[Point]) -> Vec<Point> {
    relative.iter().map(|x| [x[0] + center[0], x[1] + center[1]]).collect()
}

pub fn reduced_mass(m1: f64, m2: f64) -> f64 {
    m1 * m2 / (m1 + m2)
}

/// Laboratory-frame internal wave `Phi(x) = phi(x - X)` by spectral shift.
pub fn reconstruct_internal(relative: &WaveField, cm: Point) -> Result<WaveField> {
    let spectral = Spectral::new(relative.grid());
    let shifted = spectral.shift(relative.amplitudes(), cm);
    let out = relative.with_amplitudes(shifted)?.with_frame(Frame::Laboratory);
    if out.boundary_amplitude() > BOUNDARY_AMPLITUDE && relative.boundary_amplitude() <= BOUNDARY_AMPLITUDE {
        return Err(Error::Domain(format!(
            "shift by {cm:?} pushes the internal wave across the grid boundary"
        )));
    }
    Ok(out)
}

/// External wave over `x_G` (total mass) and relative wave over the
/// separation `r = x1 - x2` (reduced mass) of a two-particle body.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoScaleState {
    pub external: WaveField,
    pub relative: WaveField,
    pub masses: [f64; 2],
}

impl TwoScaleState {
    pub fn new(external: WaveField, relative: WaveField, masses: [f64; 2]) -> Result<Self> {
        let total = check_masses(&masses)?;
        let mu = reduced_mass(masses[0], masses[1]);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        if !close(external.mass(), total) {
            return Err(Error::Config(format!(
                "external wave carries mass {} but the body weighs {total}",
                external.mass()
            )));
        }
        if !close(relative.mass(), mu) {
            return Err(Error::Config(format!(
                "relative wave carries mass {} but the reduced mass is {mu}",
                relative.mass()
            )));
        }
        for (name, f) in [("external", &external), ("relative", &relative)] {
            if (f.norm_sqr() - 1.0).abs() > 1e-6 {
                return Err(Error::Normalization { norm: f.norm_sqr() });
            }
            if f.grid().dim() != 1 {
                return Err(Error::Config(format!("{name} wave of a two-particle body must be 1D")));
            }
        }
        Ok(TwoScaleState {
            external: external.with_frame(Frame::Laboratory),
            relative: relative.with_frame(Frame::CenterOfMass),
            masses,
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.masses[0] + self.masses[1]
    }

    /// Mass-weighted mean of the relative positions `x'_1 = m2 r / M`,
    /// `x'_2 = -m1 r / M`; zero by construction.
    pub fn relative_moment(&self) -> Result<f64> {
        let r = self.relative.expectation_position()?[0];
        let (m1, m2) = (self.masses[0], self.masses[1]);
        let total = self.total_mass();
        Ok(m1 * (m2 * r / total) + m2 * (-m1 * r / total))
    }
}

#[derive(Debug, Clone)]
pub struct TwoScaleRun {
    pub external: EvolutionRecord,
    pub relative: EvolutionRecord,
    /// dBB path of the center of mass through the external wave.
    pub cm_track: Trajectory,
}

fn relative_propagator(relative: &WaveField, pair: &PairPotential, dt: f64, splitting: Splitting) -> Result<Propagator> {
    let v: Vec<f64> = relative.grid().points().map(|p| pair.energy(p[0])).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("pair potential not finite on the relative grid".into()));
    }
    let mu = relative.mass();
    Propagator::new(relative.grid(), v, relative.hbar(), [mu, mu], dt, splitting)
}

fn collect(initial: &WaveField, prop: &Propagator, stepping: &Stepping) -> Result<EvolutionRecord> {
    let mut snaps = Vec::new();
    let mut rec = evolve_with_observer(initial, prop, stepping, |_, f| {
        snaps.push(f.clone());
        Ok(())
    })?;
    rec.snapshots = snaps;
    Ok(rec)
}

/// Evolves the external wave under `M V_g` and the relative wave under the
/// pair coupling, independently; the center of mass is tracked by dBB
/// integration from the initial mean position.
pub fn evolve_two_scale(
    state: &TwoScaleState,
    external_potential: &PotentialSpec,
    pair: &PairPotential,
    stepping: &Stepping,
    substeps: usize,
) -> Result<TwoScaleRun> {
    let external = evolve(&state.external, external_potential, stepping)?;
    let prop = relative_propagator(&state.relative, pair, stepping.dt, stepping.splitting)?;
    let mut relative = collect(&state.relative, &prop, stepping)?;
    for f in relative.snapshots.iter_mut() {
        *f = f.clone().with_frame(Frame::CenterOfMass);
    }
    let start = state.external.expectation_position()?;
    let mut tracker = BohmTracker::new(&[start], substeps, None)?;
    for (t, f) in external.times.iter().zip(&external.snapshots) {
        tracker.observe(*t, f)?;
    }
    let mut cm_track = tracker.finish().remove(0);
    cm_track.id = 0;
    Ok(TwoScaleRun { external, relative, cm_track })
}

/// Evaluates `psi(x_G) phi(x1 - x2)` at configuration points by
/// trigonometric interpolation of both factors.
pub fn product_on_config(
    external: &WaveField,
    relative: &WaveField,
    masses: [f64; 2],
    config: &Grid,
) -> Result<Vec<Complex64>> {
    if config.dim() != 2 {
        return Err(Error::Config("configuration grid must be 2D".into()));
    }
    let total = masses[0] + masses[1];
    let interp = |f: &WaveField| {
        let a = f.grid().axis(0);
        TrigInterpolator::new(a.lower, a.extent(), f.amplitudes())
    };
    let (ext, rel) = (interp(external), interp(relative));
    let (ext_axis, rel_axis) = (*external.grid().axis(0), *relative.grid().axis(0));
    let inside = |a: &crate::grid::Axis, x: f64| x >= a.lower && x < a.upper;
    use rayon::prelude::*;
    Ok(config
        .points()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|p| {
            let xg = (masses[0] * p[0] + masses[1] * p[1]) / total;
            let r = p[0] - p[1];
            if inside(&ext_axis, xg) && inside(&rel_axis, r) {
                ext.eval(xg) * rel.eval(r)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect())
}

/// Rank-one split of a configuration-space wave into external and relative
/// factors, cut through its amplitude maximum.
pub fn factor_config(
    psi: &WaveField,
    masses: [f64; 2],
    ext_grid: &Grid,
    rel_grid: &Grid,
) -> Result<(WaveField, WaveField)> {
    let config = psi.grid();
    if config.dim() != 2 || ext_grid.dim() != 1 || rel_grid.dim() != 1 {
        return Err(Error::Config("expected a 2D configuration grid and 1D factor grids".into()));
    }
    let total = masses[0] + masses[1];
    let interp = TrigInterpolator2d::new(config, psi.amplitudes());
    let peak = psi
        .amplitudes()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .map(|(i, _)| config.point(i))
        .ok_or_else(|| Error::Domain("empty configuration wave".into()))?;
    let xg0 = (masses[0] * peak[0] + masses[1] * peak[1]) / total;
    let r0 = peak[0] - peak[1];
    let at = |xg: f64, r: f64| -> Complex64 {
        let p = [xg + masses[1] * r / total, xg - masses[0] * r / total];
        if config.contains(p) {
            interp.eval(p)
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    let anchor = at(xg0, r0);
    if anchor.norm() == 0.0 {
        return Err(Error::Domain("configuration wave vanishes at its peak".into()));
    }
    let ext_amps: Vec<Complex64> = ext_grid.points().map(|p| at(p[0], r0)).collect();
    let rel_amps: Vec<Complex64> = rel_grid.points().map(|p| at(xg0, p[0]) / anchor).collect();
    let mu = reduced_mass(masses[0], masses[1]);
    let ext = WaveField::new(ext_grid.clone(), ext_amps, psi.hbar(), total, Frame::Laboratory)?.normalize()?;
    let rel = WaveField::new(rel_grid.clone(), rel_amps, psi.hbar(), mu, Frame::CenterOfMass)?.normalize()?;
    Ok((ext, rel))
}

fn config_distance(grid: &Grid, a: &[Complex64], b: &[Complex64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    (s * grid.cell_volume()).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizationReport {
    pub times: Vec<f64>,
    pub discrepancy: Vec<f64>,
    /// L2 distance between the initial wave and its rank-one split.
    pub initial_residual: f64,
    pub hypothesis_violated: bool,
}

impl FactorizationReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("t,discrepancy\n");
        for (t, d) in self.times.iter().zip(&self.discrepancy) {
            out.push_str(&crate::io::csv_row(&[*t, *d]));
        }
        out
    }
}

/// Solves the two-particle problem in configuration space with `full`
/// stepping and the factorized problem with the same step count and
/// `factorized` splitting, and measures their L2 distance at stored times.
#[allow(clippy::too_many_arguments)]
pub fn verify_factorization(
    psi0: &WaveField,
    masses: [f64; 2],
    pair: &PairPotential,
    external_potential: &PotentialSpec,
    ext_grid: &Grid,
    rel_grid: &Grid,
    full: &Stepping,
    factorized: Splitting,
) -> Result<FactorizationReport> {
    let (ext0, rel0) = factor_config(psi0, masses, ext_grid, rel_grid)?;
    let config = psi0.grid();
    let initial_product = product_on_config(&ext0, &rel0, masses, config)?;
    let initial_residual = config_distance(config, psi0.amplitudes(), &initial_product);

    let full_record = evolve_full_two_body(psi0, masses, pair, external_potential, full)?;
    let state = TwoScaleState::new(ext0, rel0, masses)?;
    let stepping = (*full).with_splitting(factorized);
    let ext_record = evolve(&state.external, external_potential, &stepping)?;
    let prop = relative_propagator(&state.relative, pair, stepping.dt, factorized)?;
    let rel_record = collect(&state.relative, &prop, &stepping)?;

    let mut discrepancy = Vec::with_capacity(full_record.times.len());
    for k in 0..full_record.times.len() {
        let product = product_on_config(&ext_record.snapshots[k], &rel_record.snapshots[k], masses, config)?;
        discrepancy.push(config_distance(config, full_record.snapshots[k].amplitudes(), &product));
    }
    Ok(FactorizationReport {
        times: full_record.times,
        discrepancy,
        initial_residual,
        hypothesis_violated: initial_residual > FACTORIZATION_TOLERANCE,
    })
}

pub fn cm_track_csv(track: &Trajectory) -> String {
    let mut out = String::from("t,x_g,v_g\n");
    for ((t, x), v) in track.times.iter().zip(&track.positions).zip(&track.velocities) {
        out.push_str(&crate::io::csv_row(&[*t, x[0], v[0]]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::gaussian_packet;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cm_coordinates_examples() {
        let (g, rel) = cm_coordinates(&[[-1.0, 0.0], [1.0, 0.0]], &[1.0, 1.0]).unwrap();
        assert_eq!(g[0], 0.0);
        assert_eq!(rel, vec![[-1.0, 0.0], [1.0, 0.0]]);
        let (g, rel) = cm_coordinates(&[[0.0, 0.0], [4.0, 0.0]], &[1.0, 3.0]).unwrap();
        assert_eq!(g[0], 3.0);
        assert_eq!(rel, vec![[-3.0, 0.0], [1.0, 0.0]]);
        let (g, rel) = cm_coordinates(&[[2.5, -1.0]], &[4.0]).unwrap();
        assert_eq!(g, [2.5, -1.0]);
        assert_eq!(rel, vec![[0.0, 0.0]]);
        assert!(cm_coordinates(&[[0.0, 0.0]], &[0.0]).is_err());
    }

    #[test]
    fn internal_wave_follows_center() {
        let g = Grid::line(-10.0, 10.0, 256).unwrap();
        let phi = gaussian_packet(&g, [0.0, 0.0], [0.0, 0.0], 0.5, 1.0, 1.0)
            .unwrap()
            .with_frame(Frame::CenterOfMass);
        let same = reconstruct_internal(&phi, [0.0, 0.0]).unwrap();
        assert!(same.l2_distance(&phi).unwrap() < 1e-15);
        assert_eq!(same.frame(), Frame::Laboratory);
        let moved = reconstruct_internal(&phi, [2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(moved.expectation_position().unwrap()[0], 2.0, epsilon = 1e-8);
        let dx = g.spacing(0);
        let cell = reconstruct_internal(&phi, [dx, 0.0]).unwrap();
        for i in 1..256 {
            assert_abs_diff_eq!(cell.amplitudes()[i].re, phi.amplitudes()[i - 1].re, epsilon = 1e-12);
        }
        assert!(matches!(reconstruct_internal(&phi, [9.5, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn state_checks_masses() {
        let g = Grid::line(-10.0, 10.0, 128).unwrap();
        let ext = gaussian_packet(&g, [0.0, 0.0], [0.0, 0.0], 1.0, 1.0, 2.0).unwrap();
        let rel = gaussian_packet(&g, [0.0, 0.0], [0.0, 0.0], 1.0, 1.0, 0.5).unwrap();
        let s = TwoScaleState::new(ext.clone(), rel.clone(), [1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(s.relative_moment().unwrap(), 0.0, epsilon = 1e-15);
        assert!(TwoScaleState::new(rel, ext, [1.0, 1.0]).is_err());
    }

    #[test]
    fn product_factor_round_trip() {
        let config = Grid::square(-8.0, 8.0, 64).unwrap();
        let line = Grid::line(-8.0, 8.0, 64).unwrap();
        let masses = [1.0, 2.0];
        let ext = gaussian_packet(&line, [0.4, 0.0], [0.5, 0.0], 0.8, 1.0, 3.0).unwrap();
        let rel = gaussian_packet(&line, [0.3, 0.0], [0.0, 0.0], 0.7, 1.0, 2.0 / 3.0)
            .unwrap()
            .with_frame(Frame::CenterOfMass);
        let amps = product_on_config(&ext, &rel, masses, &config).unwrap();
        let psi = WaveField::new(config.clone(), amps, 1.0, 1.0, Frame::Laboratory).unwrap();
        assert_abs_diff_eq!(psi.norm_sqr(), 1.0, epsilon = 1e-8);
        let (e2, r2) = factor_config(&psi, masses, &line, &line).unwrap();
        let back = product_on_config(&e2, &r2, masses, &config).unwrap();
        assert!(config_distance(&config, psi.amplitudes(), &back) < 1e-8);
    }
}
