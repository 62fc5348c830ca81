//! Coupled individual internal waves: the mean-field (Hartree) system, its
//! point-center approximation, overlap monitoring and the product wave.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::WaveField;
use crate::grid::{Axis, Grid, Point};
use crate::potential::PairPotential;
use crate::spectral::{Spectral, TrigInterpolator, TrigInterpolator2d};

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 1e-3;

/// How each wave sees the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// Pair potential convolved with the other densities.
    Hartree,
    /// Pair potential evaluated at the other waves' centers.
    Delta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManyBodyState {
    pub t: f64,
    pub waves: Vec<WaveField>,
    pub pair: PairPotential,
    pub overlap_threshold: f64,
}

impl ManyBodyState {
    pub fn new(waves: Vec<WaveField>, pair: PairPotential) -> Result<Self> {
        let first = waves
            .first()
            .ok_or_else(|| Error::Config("at least one wave is required".into()))?;
        for (j, w) in waves.iter().enumerate() {
            w.grid().same_as(first.grid())?;
            if w.hbar() != first.hbar() {
                return Err(Error::Config(format!("wave {j} uses a different hbar")));
            }
            if (w.norm_sqr() - 1.0).abs() > 1e-6 {
                return Err(Error::Normalization { norm: w.norm_sqr() });
            }
        }
        Ok(ManyBodyState { t: 0.0, waves, pair, overlap_threshold: DEFAULT_OVERLAP_THRESHOLD })
    }

    pub fn grid(&self) -> &Grid {
        self.waves[0].grid()
    }

    pub fn centers(&self) -> Result<Vec<Point>> {
        self.waves.iter().map(WaveField::expectation_position).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.waves.iter().map(WaveField::mass).collect()
    }
}

/// `O_ij = int |phi_i| |phi_j|`.
pub fn overlap_matrix(state: &ManyBodyState) -> Vec<Vec<f64>> {
    let n = state.waves.len();
    let dv = state.grid().cell_volume();
    let mut o = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let s: f64 = state.waves[i]
                .amplitudes()
                .iter()
                .zip(state.waves[j].amplitudes())
                .map(|(a, b)| a.norm() * b.norm())
                .sum::<f64>()
                * dv;
            o[i][j] = s;
            o[j][i] = s;
        }
    }
    o
}

/// Linear convolution with a radial kernel on a zero-padded grid of twice
/// the extent, so no density wraps around.
struct RadialConvolver {
    grid: Grid,
    padded: Spectral,
    kernel_hat: Vec<Complex64>,
}

impl RadialConvolver {
    fn new(grid: &Grid, pair: &PairPotential) -> Result<Self> {
        let axes: Vec<Axis> = grid
            .axes()
            .iter()
            .map(|a| Axis::new(a.lower, a.lower + 2.0 * a.extent(), 2 * a.points))
            .collect::<Result<_>>()?;
        let pgrid = Grid::new(axes)?;
        let padded = Spectral::new(&pgrid);
        let (px, py) = pgrid.shape();
        let offset = |i: usize, n: usize, h: f64| {
            let d = if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
            d * h
        };
        let mut kernel_hat: Vec<Complex64> = (0..pgrid.len())
            .map(|idx| {
                let (i, j) = pgrid.unravel(idx);
                let dx = offset(i, px, grid.spacing(0));
                let dy = if grid.dim() == 2 { offset(j, py, grid.spacing(1)) } else { 0.0 };
                Complex64::new(pair.energy(dx.hypot(dy)), 0.0)
            })
            .collect();
        if kernel_hat.iter().any(|z| !z.re.is_finite()) {
            return Err(Error::Domain("pair kernel not finite on the padded grid".into()));
        }
        padded.forward(&mut kernel_hat);
        Ok(RadialConvolver { grid: grid.clone(), padded, kernel_hat })
    }

    fn convolve(&self, rho: &[f64]) -> Vec<f64> {
        let (nx, ny) = self.grid.shape();
        let (_, py) = self.padded.grid().shape();
        let mut buf = vec![Complex64::new(0.0, 0.0); self.padded.grid().len()];
        for i in 0..nx {
            for j in 0..ny {
                buf[i * py + j] = Complex64::new(rho[i * ny + j], 0.0);
            }
        }
        self.padded.forward(&mut buf);
        for (z, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *z *= k;
        }
        self.padded.inverse(&mut buf);
        let dv = self.grid.cell_volume();
        let mut out = vec![0.0; self.grid.len()];
        for i in 0..nx {
            for j in 0..ny {
                out[i * ny + j] = buf[i * py + j].re * dv;
            }
        }
        out
    }
}

/// Preplanned stepping of a many-body state with a fixed `dt`.
pub struct ManyBodySolver {
    coupling: Coupling,
    dt: f64,
    spectral: Spectral,
    convolver: Option<RadialConvolver>,
    /// Per wave: kinetic phases for `dt / 2` and `dt`.
    kinetic: Vec<[Vec<Complex64>; 2]>,
}

impl ManyBodySolver {
    pub fn new(state: &ManyBodyState, coupling: Coupling, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        let grid = state.grid();
        let spectral = Spectral::new(grid);
        let k2 = grid.wavenumber_squared();
        let hbar = state.waves[0].hbar();
        let kinetic = state
            .waves
            .iter()
            .map(|w| {
                let phases = |tau: f64| -> Vec<Complex64> {
                    k2.iter()
                        .map(|k| Complex64::from_polar(1.0, -hbar * k * tau / (2.0 * w.mass())))
                        .collect()
                };
                [phases(0.5 * dt), phases(dt)]
            })
            .collect();
        let convolver = match (coupling, state.pair.is_zero() || state.waves.len() < 2) {
            (Coupling::Hartree, false) => Some(RadialConvolver::new(grid, &state.pair)?),
            _ => None,
        };
        Ok(ManyBodySolver { coupling, dt, spectral, convolver, kinetic })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Interaction potential felt by every wave, or `None` when the
    /// interaction sum is empty.
    fn potentials(&self, state: &ManyBodyState) -> Result<Option<Vec<Vec<f64>>>> {
        let n = state.waves.len();
        if n < 2 || state.pair.is_zero() {
            return Ok(None);
        }
        let grid = state.grid();
        let fields: Vec<Vec<f64>> = match self.coupling {
            Coupling::Hartree => {
                let conv = self.convolver.as_ref().expect("convolver planned for Hartree coupling");
                state.waves.par_iter().map(|w| conv.convolve(&w.density())).collect()
            }
            Coupling::Delta => {
                let centers = state.centers()?;
                centers
                    .par_iter()
                    .map(|c| {
                        grid.points()
                            .map(|x| state.pair.energy((x[0] - c[0]).hypot(x[1] - c[1])))
                            .collect()
                    })
                    .collect()
            }
        };
        let total: Vec<f64> = (0..grid.len()).map(|p| fields.iter().map(|f| f[p]).sum()).collect();
        Ok(Some(
            (0..n)
                .map(|j| total.iter().zip(&fields[j]).map(|(t, own)| t - own).collect())
                .collect(),
        ))
    }

    fn strang(&self, psi: &mut [Complex64], potential: Option<&[f64]>, kinetic: &[Complex64], tau: f64, hbar: f64) {
        let kick = |psi: &mut [Complex64]| {
            if let Some(v) = potential {
                psi.par_iter_mut()
                    .zip(v.par_iter())
                    .for_each(|(z, v)| *z *= Complex64::from_polar(1.0, -v * 0.5 * tau / hbar));
            }
        };
        kick(psi);
        self.spectral.forward(psi);
        psi.par_iter_mut().zip(kinetic.par_iter()).for_each(|(z, k)| *z *= k);
        self.spectral.inverse(psi);
        kick(psi);
    }

    /// One second-order step: a half-step predictor supplies the midpoint
    /// interaction potentials, which then drive a full Strang step.
    pub fn step(&self, state: &mut ManyBodyState, step_index: usize) -> Result<()> {
        let hbar = state.waves[0].hbar();
        let start = self.potentials(state)?;
        let midpoint = match start {
            None => None,
            Some(v0) => {
                let mut half = state.clone();
                for (j, w) in half.waves.iter_mut().enumerate() {
                    self.strang(w.amplitudes_mut(), Some(&v0[j]), &self.kinetic[j][0], 0.5 * self.dt, hbar);
                }
                self.potentials(&half)?
            }
        };
        for (j, w) in state.waves.iter_mut().enumerate() {
            let v = midpoint.as_ref().map(|m| m[j].as_slice());
            self.strang(w.amplitudes_mut(), v, &self.kinetic[j][1], self.dt, hbar);
            if w.amplitudes().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::Divergence { step: step_index, wave: Some(j) });
            }
        }
        state.t += self.dt;
        Ok(())
    }
}

pub fn hartree_step(state: &ManyBodyState, dt: f64) -> Result<ManyBodyState> {
    let mut next = state.clone();
    ManyBodySolver::new(state, Coupling::Hartree, dt)?.step(&mut next, 1)?;
    Ok(next)
}

pub fn delta_approx_step(state: &ManyBodyState, dt: f64) -> Result<ManyBodyState> {
    let mut next = state.clone();
    ManyBodySolver::new(state, Coupling::Delta, dt)?.step(&mut next, 1)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapEvent {
    pub t: f64,
    pub i: usize,
    pub j: usize,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManyBodyRecord {
    pub times: Vec<f64>,
    pub centers: Vec<Vec<Point>>,
    pub overlaps: Vec<Vec<Vec<f64>>>,
    /// Pairs whose overlap rose above the threshold, at the step it happened.
    pub events: Vec<OverlapEvent>,
    pub last: ManyBodyState,
}

impl ManyBodyRecord {
    pub fn centers_csv(&self, dim: usize) -> String {
        let mut out = String::from(if dim == 2 { "t,j,x_j,y_j\n" } else { "t,j,x_j\n" });
        for (t, cs) in self.times.iter().zip(&self.centers) {
            for (j, c) in cs.iter().enumerate() {
                let coords = if dim == 2 { vec![c[0], c[1]] } else { vec![c[0]] };
                let body = coords.iter().map(|&x| crate::io::fmt_f64(x)).collect::<Vec<_>>().join(",");
                out.push_str(&format!("{},{j},{body}\n", crate::io::fmt_f64(*t)));
            }
        }
        out
    }

    pub fn overlap_csv(&self) -> String {
        let mut out = String::from("t,i,j,O_ij\n");
        for (t, o) in self.times.iter().zip(&self.overlaps) {
            for i in 0..o.len() {
                for j in i + 1..o.len() {
                    out.push_str(&format!("{},{i},{j},{}\n", crate::io::fmt_f64(*t), crate::io::fmt_f64(o[i][j])));
                }
            }
        }
        out
    }
}

/// Runs `steps` steps, storing centers and overlaps every `store_every`
/// steps and checking overlaps at every step.
pub fn run_manybody(
    initial: &ManyBodyState,
    coupling: Coupling,
    dt: f64,
    steps: usize,
    store_every: usize,
) -> Result<ManyBodyRecord> {
    if store_every == 0 {
        return Err(Error::Config("store_every must be positive".into()));
    }
    let solver = ManyBodySolver::new(initial, coupling, dt)?;
    let mut state = initial.clone();
    let n = state.waves.len();
    let mut rec = ManyBodyRecord {
        times: Vec::new(),
        centers: Vec::new(),
        overlaps: Vec::new(),
        events: Vec::new(),
        last: state.clone(),
    };
    let mut violating = vec![vec![false; n]; n];
    let mut observe = |state: &ManyBodyState, step: usize, rec: &mut ManyBodyRecord| -> Result<()> {
        let o = overlap_matrix(state);
        for i in 0..n {
            for j in i + 1..n {
                let over = o[i][j] > state.overlap_threshold;
                if over && !violating[i][j] {
                    rec.events.push(OverlapEvent { t: state.t, i, j, overlap: o[i][j] });
                }
                violating[i][j] = over;
            }
        }
        if step.is_multiple_of(store_every) {
            rec.times.push(state.t);
            rec.centers.push(state.centers()?);
            rec.overlaps.push(o);
        }
        Ok(())
    };
    observe(&state, 0, &mut rec)?;
    for step in 1..=steps {
        solver.step(&mut state, step)?;
        state.t = step as f64 * dt;
        observe(&state, step, &mut rec)?;
    }
    rec.last = state;
    Ok(rec)
}

/// `<p>` of a wave from its spectrum.
pub fn mean_momentum(field: &WaveField) -> Point {
    let spectral = Spectral::new(field.grid());
    let mut buf = field.amplitudes().to_vec();
    spectral.forward(&mut buf);
    let g = field.grid();
    let mut p = [0.0; 2];
    let mut norm = 0.0;
    for (idx, z) in buf.iter().enumerate() {
        let (i, j) = g.unravel(idx);
        let w = z.norm_sqr();
        norm += w;
        p[0] += w * g.axis(0).wavenumber(i);
        if g.dim() == 2 {
            p[1] += w * g.axis(1).wavenumber(j);
        }
    }
    [field.hbar() * p[0] / norm, field.hbar() * p[1] / norm]
}

enum Interp {
    Line(TrigInterpolator),
    Plane(TrigInterpolator2d),
}

/// Evaluates `prod_j phi_j(x_j - X)` for arbitrary coordinate tuples.
pub struct ProductInternal {
    grid: Grid,
    center: Point,
    factors: Vec<Interp>,
}

impl ProductInternal {
    pub fn eval(&self, coords: &[Point]) -> Result<Complex64> {
        if coords.len() != self.factors.len() {
            return Err(Error::Config(format!(
                "{} coordinates for {} factors",
                coords.len(),
                self.factors.len()
            )));
        }
        let mut acc = Complex64::new(1.0, 0.0);
        for (x, f) in coords.iter().zip(&self.factors) {
            let local = [x[0] - self.center[0], x[1] - self.center[1]];
            if !self.grid.contains(local) {
                return Ok(Complex64::new(0.0, 0.0));
            }
            acc *= match f {
                Interp::Line(i) => i.eval(local[0]),
                Interp::Plane(i) => i.eval(local),
            };
        }
        Ok(acc)
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }
}

pub fn product_internal(state: &ManyBodyState, cm: Point) -> ProductInternal {
    let grid = state.grid().clone();
    let factors = state
        .waves
        .iter()
        .map(|w| match grid.dim() {
            1 => {
                let a = grid.axis(0);
                Interp::Line(TrigInterpolator::new(a.lower, a.extent(), w.amplitudes()))
            }
            _ => Interp::Plane(TrigInterpolator2d::new(&grid, w.amplitudes())),
        })
        .collect();
    ProductInternal { grid, center: cm, factors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::gaussian_packet;
    use approx::assert_abs_diff_eq;

    fn line() -> Grid {
        Grid::line(-20.0, 20.0, 512).unwrap()
    }

    fn pair_state(sep: f64, sigma: f64, pair: PairPotential) -> ManyBodyState {
        let g = line();
        let a = gaussian_packet(&g, [-sep / 2.0, 0.0], [0.0, 0.0], sigma, 1.0, 1.0).unwrap();
        let b = gaussian_packet(&g, [sep / 2.0, 0.0], [0.0, 0.0], sigma, 1.0, 1.0).unwrap();
        ManyBodyState::new(vec![a, b], pair).unwrap()
    }

    #[test]
    fn overlap_examples() {
        // |phi| has width sqrt(2) sigma: ten amplitude widths apart.
        let far = pair_state(10.0, 1.0 / 2.0_f64.sqrt(), PairPotential::None);
        assert!(overlap_matrix(&far)[0][1] <= 1e-10);
        let ten_sigma = pair_state(10.0, 1.0, PairPotential::None);
        assert_abs_diff_eq!(overlap_matrix(&ten_sigma)[0][1], (-12.5f64).exp(), epsilon = 1e-12);
        let two = pair_state(2.0, 1.0, PairPotential::None);
        let o = overlap_matrix(&two);
        assert_abs_diff_eq!(o[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o[0][1], (-0.5f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn zero_coupling_paths_agree_bitwise() {
        let s = pair_state(6.0, 0.8, PairPotential::None);
        let a = hartree_step(&s, 0.01).unwrap();
        let b = delta_approx_step(&s, 0.01).unwrap();
        assert_eq!(a.waves, b.waves);
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let g = Grid::line(-8.0, 8.0, 64).unwrap();
        let pair = PairPotential::SoftCoulomb { coupling: 1.3, softening: 0.5 };
        let conv = RadialConvolver::new(&g, &pair).unwrap();
        let rho: Vec<f64> = g.points().map(|p| (-(p[0] - 1.0).powi(2)).exp()).collect();
        let got = conv.convolve(&rho);
        for (n, x) in g.points().enumerate() {
            let direct: f64 = g.points().zip(&rho).map(|(y, r)| r * pair.energy((x[0] - y[0]).abs())).sum::<f64>()
                * g.spacing(0);
            assert_abs_diff_eq!(got[n], direct, epsilon = 1e-11);
        }
    }

    #[test]
    fn mirror_symmetric_centers() {
        let s = pair_state(6.0, 0.5, PairPotential::Harmonic { k: 0.5 });
        let rec = run_manybody(&s, Coupling::Hartree, 0.01, 200, 10).unwrap();
        for cs in &rec.centers {
            assert_abs_diff_eq!(cs[0][0], -cs[1][0], epsilon = 1e-10);
        }
    }

    #[test]
    fn single_wave_is_free() {
        let g = line();
        let a = gaussian_packet(&g, [0.0, 0.0], [1.0, 0.0], 1.0, 1.0, 1.0).unwrap();
        let s = ManyBodyState::new(vec![a.clone()], PairPotential::Harmonic { k: 1.0 }).unwrap();
        let out = delta_approx_step(&s, 0.05).unwrap();
        let free = crate::propagator::split_step_evolve(&a, &crate::potential::PotentialSpec::Free, 0.05, 1, 1).unwrap();
        assert!(out.waves[0].l2_distance(free.last().unwrap()).unwrap() < 1e-13);
    }

    #[test]
    fn momentum_is_conserved() {
        let g = line();
        let a = gaussian_packet(&g, [-3.0, 0.0], [0.7, 0.0], 0.6, 1.0, 1.0).unwrap();
        let b = gaussian_packet(&g, [3.0, 0.0], [-0.2, 0.0], 0.6, 1.0, 2.0).unwrap();
        let s = ManyBodyState::new(vec![a, b], PairPotential::SoftCoulomb { coupling: 1.0, softening: 1.0 }).unwrap();
        let total = |s: &ManyBodyState| s.waves.iter().map(|w| mean_momentum(w)[0]).sum::<f64>();
        let p0 = total(&s);
        let rec = run_manybody(&s, Coupling::Hartree, 0.005, 1000, 1000).unwrap();
        let p1 = total(&rec.last);
        assert!(((p1 - p0) / p0).abs() < 1e-6, "{p0} -> {p1}");
    }

    #[test]
    fn exchange_relabels_outputs() {
        let g = line();
        let a = gaussian_packet(&g, [-2.5, 0.0], [0.3, 0.0], 0.6, 1.0, 1.0).unwrap();
        let b = gaussian_packet(&g, [3.0, 0.0], [-0.1, 0.0], 0.7, 1.0, 1.0).unwrap();
        let pair = PairPotential::Harmonic { k: 0.3 };
        let ab = run_manybody(&ManyBodyState::new(vec![a.clone(), b.clone()], pair.clone()).unwrap(), Coupling::Hartree, 0.01, 50, 50).unwrap();
        let ba = run_manybody(&ManyBodyState::new(vec![b, a], pair).unwrap(), Coupling::Hartree, 0.01, 50, 50).unwrap();
        assert!(ab.last.waves[0].l2_distance(&ba.last.waves[1]).unwrap() < 1e-13);
        assert!(ab.last.waves[1].l2_distance(&ba.last.waves[0]).unwrap() < 1e-13);
    }

    #[test]
    fn overlap_violation_is_flagged_not_fatal() {
        let s = pair_state(3.0, 1.0, PairPotential::None);
        let rec = run_manybody(&s, Coupling::Hartree, 0.01, 5, 1).unwrap();
        assert_eq!(rec.events.len(), 1);
        assert_eq!(rec.times.len(), 6);
    }

    #[test]
    fn product_of_factors() {
        let s = pair_state(6.0, 0.8, PairPotential::None);
        let prod = product_internal(&s, [0.0, 0.0]);
        let single = ManyBodyState::new(vec![s.waves[0].clone()], PairPotential::None).unwrap();
        let p1 = product_internal(&single, [0.0, 0.0]);
        let g = s.grid();
        let (i, j) = (218, 294);
        let (xi, xj) = (g.point(i), g.point(j));
        let v = prod.eval(&[xi, xj]).unwrap();
        let expect = s.waves[0].amplitudes()[i] * s.waves[1].amplitudes()[j];
        assert_abs_diff_eq!(v.re, expect.re, epsilon = 1e-12);
        assert_abs_diff_eq!(p1.eval(&[xi]).unwrap().re, s.waves[0].amplitudes()[i].re, epsilon = 1e-12);
        assert!(prod.eval(&[[0.0, 0.0]]).is_err());
    }
}
