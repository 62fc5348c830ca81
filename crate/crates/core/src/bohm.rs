//! de Broglie–Bohm trajectories piloted by a stored or streamed wave, and the
//! seeded ensemble machinery used for equivariance checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{marginal, WaveField};
use crate::grid::{Grid, Point};
use crate::madelung::{to_polar, velocity_field, VelocityField};
use crate::propagator::EvolutionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Bohm,
    Newton,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub kind: TrajectoryKind,
    pub initial: Point,
    pub times: Vec<f64>,
    pub positions: Vec<Point>,
    pub velocities: Vec<Point>,
    /// Set when the path reached the edge of the velocity validity mask; the
    /// path stops at the last complete stored time.
    pub exited: bool,
}

impl Trajectory {
    pub fn new(id: usize, kind: TrajectoryKind, initial: Point) -> Self {
        Trajectory {
            id,
            kind,
            initial,
            times: Vec::new(),
            positions: Vec::new(),
            velocities: Vec::new(),
            exited: false,
        }
    }

    pub fn push(&mut self, t: f64, x: Point, v: Point) {
        self.times.push(t);
        self.positions.push(x);
        self.velocities.push(v);
    }

    pub fn last_position(&self) -> Option<Point> {
        self.positions.last().copied()
    }

    /// Drops every sample but the latest.
    fn forget_history(&mut self) {
        for v in [&mut self.positions, &mut self.velocities] {
            let n = v.len();
            if n > 1 {
                v.drain(..n - 1);
            }
        }
        let n = self.times.len();
        if n > 1 {
            self.times.drain(..n - 1);
        }
    }
}

fn lerp_velocity(a: &VelocityField, b: &VelocityField, s: f64, p: Point) -> Option<Point> {
    let va = a.interpolate(p)?;
    let vb = b.interpolate(p)?;
    Some([va[0] + s * (vb[0] - va[0]), va[1] + s * (vb[1] - va[1])])
}

/// Classic RK4 across one stored interval of length `span`; `None` if a
/// stage leaves the mask. Stage times are fractions of the interval.
fn rk4_interval(a: &VelocityField, b: &VelocityField, span: f64, x0: Point, substeps: usize) -> Option<Point> {
    let h = 1.0 / substeps as f64;
    let dt = h * span;
    let add = |x: Point, k: Point, c: f64| [x[0] + c * k[0], x[1] + c * k[1]];
    let mut x = x0;
    for n in 0..substeps {
        let s = n as f64 * h;
        let k1 = lerp_velocity(a, b, s, x)?;
        let k2 = lerp_velocity(a, b, s + 0.5 * h, add(x, k1, 0.5 * dt))?;
        let k3 = lerp_velocity(a, b, s + 0.5 * h, add(x, k2, 0.5 * dt))?;
        let k4 = lerp_velocity(a, b, s + h, add(x, k3, dt))?;
        for k in 0..2 {
            x[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
    }
    Some(x)
}

/// Streams stored snapshots through a fixed set of trajectories without
/// retaining the snapshots themselves.
#[derive(Debug)]
pub struct BohmTracker {
    substeps: usize,
    rho_floor: Option<f64>,
    trajectories: Vec<Trajectory>,
    prev: Option<(f64, VelocityField)>,
    /// Paths with `id` at or above this keep only their latest sample.
    history: usize,
}

impl BohmTracker {
    pub fn new(initial: &[Point], substeps: usize, rho_floor: Option<f64>) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::Config("substeps must be positive".into()));
        }
        Ok(BohmTracker {
            substeps,
            rho_floor,
            trajectories: initial
                .iter()
                .enumerate()
                .map(|(i, &x)| Trajectory::new(i, TrajectoryKind::Bohm, x))
                .collect(),
            prev: None,
            history: usize::MAX,
        })
    }

    /// Keeps the full history only for the first `n` paths; the rest carry
    /// just their current sample, which bounds memory for large ensembles.
    pub fn with_history(mut self, n: usize) -> Self {
        self.history = n;
        self
    }

    /// Feeds the next stored snapshot; the first call fixes the initial
    /// velocities, later calls advance every active path to time `t`.
    pub fn observe(&mut self, t: f64, field: &WaveField) -> Result<()> {
        let vel = velocity_field(&to_polar(field, self.rho_floor));
        match self.prev.take() {
            None => {
                for tr in &mut self.trajectories {
                    match vel.interpolate(tr.initial) {
                        Some(v) => tr.push(t, tr.initial, v),
                        None => tr.exited = true,
                    }
                }
            }
            Some((t0, a)) => {
                if !(t > t0) {
                    return Err(Error::Precondition(format!("snapshot times not increasing: {t0} then {t}")));
                }
                let (substeps, history) = (self.substeps, self.history);
                let b = &vel;
                self.trajectories.par_iter_mut().filter(|tr| !tr.exited).for_each(|tr| {
                    let x0 = tr.last_position().expect("active path has a position");
                    match rk4_interval(&a, b, t - t0, x0, substeps).and_then(|x| b.interpolate(x).map(|v| (x, v))) {
                        Some((x, v)) => {
                            tr.push(t, x, v);
                            if tr.id >= history {
                                tr.forget_history();
                            }
                        }
                        None => tr.exited = true,
                    }
                });
            }
        }
        self.prev = Some((t, vel));
        Ok(())
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    /// Current positions of the paths still inside the support.
    pub fn active_positions(&self) -> Vec<Point> {
        self.trajectories
            .iter()
            .filter(|tr| !tr.exited)
            .filter_map(Trajectory::last_position)
            .collect()
    }

    pub fn finish(self) -> Vec<Trajectory> {
        self.trajectories
    }
}

/// Integrates `dX/dt = grad S / m` through the stored snapshots of `record`
/// with `substeps` RK4 steps per stored interval.
pub fn integrate_dbb(record: &EvolutionRecord, x0: Point, substeps: usize) -> Result<Trajectory> {
    let first = record
        .snapshots
        .first()
        .ok_or_else(|| Error::Precondition("record holds no snapshots".into()))?;
    let polar = to_polar(first, None);
    if velocity_field(&polar).interpolate(x0).is_none() {
        return Err(Error::Domain(format!("initial point {x0:?} is outside the density support")));
    }
    let mut out = integrate_many(record, &[x0], substeps)?;
    Ok(out.remove(0))
}

pub fn integrate_many(record: &EvolutionRecord, initial: &[Point], substeps: usize) -> Result<Vec<Trajectory>> {
    if record.snapshots.len() != record.times.len() {
        return Err(Error::Precondition("record snapshots and times differ in length".into()));
    }
    let mut tracker = BohmTracker::new(initial, substeps, None)?;
    for (t, f) in record.times.iter().zip(&record.snapshots) {
        tracker.observe(*t, f)?;
    }
    Ok(tracker.finish())
}

/// Cumulative distribution of a grid density, each node owning a cell of
/// width `dx` centered on it with constant density.
#[derive(Debug, Clone)]
pub struct CellCdf {
    start: f64,
    dx: f64,
    cumulative: Vec<f64>,
}

impl CellCdf {
    pub fn new(lower: f64, dx: f64, density: &[f64]) -> Result<Self> {
        let total: f64 = density.iter().sum();
        if !(total > 0.0) || density.iter().any(|r| *r < 0.0 || !r.is_finite()) {
            return Err(Error::Domain("density must be non-negative with positive mass".into()));
        }
        let mut cumulative = Vec::with_capacity(density.len() + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for r in density {
            acc += r / total;
            cumulative.push(acc);
        }
        Ok(CellCdf { start: lower - 0.5 * dx, dx, cumulative })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let f = (x - self.start) / self.dx;
        if f <= 0.0 {
            return 0.0;
        }
        let n = self.cumulative.len() - 1;
        if f >= n as f64 {
            return 1.0;
        }
        let i = f.floor() as usize;
        let w = f - i as f64;
        self.cumulative[i] + w * (self.cumulative[i + 1] - self.cumulative[i])
    }

    /// Inverse CDF, returning the position and the owning node index.
    pub fn invert(&self, u: f64) -> (f64, usize) {
        let n = self.cumulative.len() - 1;
        let i = self.cumulative.partition_point(|&c| c <= u).saturating_sub(1).min(n - 1);
        let width = self.cumulative[i + 1] - self.cumulative[i];
        let w = if width > 0.0 { ((u - self.cumulative[i]) / width).clamp(0.0, 1.0) } else { 0.5 };
        (self.start + (i as f64 + w) * self.dx, i)
    }
}

fn axis_cdf(grid: &Grid, axis: usize, density: &[f64]) -> Result<CellCdf> {
    let a = grid.axis(axis);
    CellCdf::new(a.lower, a.spacing(), density)
}

/// Per-trajectory generator: the master seed with the trajectory index as
/// stream, so draws do not depend on scheduling.
pub fn trajectory_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

/// Draws `count` positions from a grid density by inverse-CDF sampling
/// (marginal along axis 0, then the conditional along axis 1 in 2D).
pub fn sample_initial(grid: &Grid, rho0: &[f64], count: usize, seed: u64) -> Result<Vec<Point>> {
    if count == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    if rho0.len() != grid.len() {
        return Err(Error::GridMismatch("density does not match grid".into()));
    }
    let first = axis_cdf(grid, 0, &marginal(grid, rho0, 0))?;
    let (nx, ny) = grid.shape();
    let rows: Vec<Option<CellCdf>> = if grid.dim() == 2 {
        (0..nx)
            .map(|i| axis_cdf(grid, 1, &rho0[i * ny..(i + 1) * ny]).ok())
            .collect()
    } else {
        Vec::new()
    };
    (0..count)
        .into_par_iter()
        .map(|id| {
            let mut rng = trajectory_rng(seed, id);
            let (x, i) = first.invert(rng.random::<f64>());
            let u: f64 = rng.random();
            let y = match rows.get(i) {
                Some(Some(row)) => row.invert(u).0,
                Some(None) => return Err(Error::Domain("sampled an empty row".into())),
                None => 0.0,
            };
            Ok([x, y])
        })
        .collect()
}

/// Two-sided Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    if samples.is_empty() {
        return 1.0;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub trajectories: Vec<Trajectory>,
    pub grid: Grid,
    pub rho0: Vec<f64>,
    pub seed: u64,
}

impl Ensemble {
    /// Samples `count` starting points from the first snapshot of `record`
    /// and integrates all of them.
    pub fn from_record(record: &EvolutionRecord, count: usize, seed: u64, substeps: usize) -> Result<Self> {
        let first = record
            .snapshots
            .first()
            .ok_or_else(|| Error::Precondition("record holds no snapshots".into()))?;
        let rho0 = first.density();
        let starts = sample_initial(first.grid(), &rho0, count, seed)?;
        Ok(Ensemble {
            trajectories: integrate_many(record, &starts, substeps)?,
            grid: first.grid().clone(),
            rho0,
            seed,
        })
    }
}

/// KS distance per axis at one stored time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsRow {
    pub t: f64,
    pub ks: Point,
    pub active: usize,
}

/// Compares the ensemble against the marginals of `|psi_t|^2` at every
/// stored time. Paths that have left the mask are excluded and counted.
pub fn equivariance_check(record: &EvolutionRecord, ensemble: &Ensemble) -> Result<Vec<KsRow>> {
    let grid = record
        .grid()
        .ok_or_else(|| Error::Precondition("record holds no snapshots".into()))?;
    grid.same_as(&ensemble.grid)?;
    for tr in &ensemble.trajectories {
        let k = tr.times.len();
        if k > record.times.len() || tr.times.iter().zip(&record.times).any(|(a, b)| a != b) {
            return Err(Error::Precondition(format!(
                "trajectory {} does not share the record time mesh",
                tr.id
            )));
        }
    }
    let mut rows = Vec::with_capacity(record.times.len());
    for (k, (t, f)) in record.times.iter().zip(&record.snapshots).enumerate() {
        let alive: Vec<Point> = ensemble
            .trajectories
            .iter()
            .filter_map(|tr| tr.positions.get(k).copied())
            .collect();
        rows.push(ks_row(*t, f, &alive)?);
    }
    Ok(rows)
}

/// KS distance per axis between `positions` and the marginals of `|psi|^2`.
pub fn ks_row(t: f64, field: &WaveField, positions: &[Point]) -> Result<KsRow> {
    let grid = field.grid();
    let rho = field.density();
    let mut ks = [f64::NAN; 2];
    for (axis, slot) in ks.iter_mut().enumerate().take(grid.dim()) {
        let cdf = axis_cdf(grid, axis, &marginal(grid, &rho, axis))?;
        let xs: Vec<f64> = positions.iter().map(|p| p[axis]).collect();
        *slot = ks_statistic(&xs, |x| cdf.eval(x));
    }
    Ok(KsRow { t, ks, active: positions.len() })
}

pub fn trajectories_csv(trajectories: &[Trajectory], dim: usize) -> String {
    let mut out = String::from(if dim == 2 { "id,t,x,y,vx,vy,exited\n" } else { "id,t,x,vx,exited\n" });
    for tr in trajectories {
        for (k, t) in tr.times.iter().enumerate() {
            let (p, v) = (tr.positions[k], tr.velocities[k]);
            let last = k + 1 == tr.times.len();
            let flag = u8::from(tr.exited && last);
            let cols: Vec<f64> = if dim == 2 { vec![*t, p[0], p[1], v[0], v[1]] } else { vec![*t, p[0], v[0]] };
            let body = cols.iter().map(|&x| crate::io::fmt_f64(x)).collect::<Vec<_>>().join(",");
            out.push_str(&format!("{},{body},{flag}\n", tr.id));
        }
    }
    out
}

pub fn ks_csv(rows: &[KsRow], dim: usize) -> String {
    let mut out = String::from(if dim == 2 { "t,ks_x,ks_y,n_active\n" } else { "t,ks_x,n_active\n" });
    for r in rows {
        let mut cols = vec![r.t, r.ks[0]];
        if dim == 2 {
            cols.push(r.ks[1]);
        }
        let body = cols.iter().map(|&x| crate::io::fmt_f64(x)).collect::<Vec<_>>().join(",");
        out.push_str(&format!("{body},{}\n", r.active));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::gaussian_packet;
    use crate::potential::PotentialSpec;
    use crate::propagator::split_step_evolve;
    use approx::assert_abs_diff_eq;

    fn free_record(v0: f64, t_end: f64) -> EvolutionRecord {
        let g = Grid::line(-20.0, 20.0, 512).unwrap();
        let f = gaussian_packet(&g, [0.0, 0.0], [v0, 0.0], 1.0, 1.0, 1.0).unwrap();
        let dt = 0.0025;
        split_step_evolve(&f, &PotentialSpec::Free, dt, (t_end / dt).round() as usize, 1).unwrap()
    }

    #[test]
    fn packet_center_moves_uniformly() {
        let rec = free_record(1.5, 2.0);
        let tr = integrate_dbb(&rec, [0.0, 0.0], 4).unwrap();
        assert!(!tr.exited);
        for (t, x) in tr.times.iter().zip(&tr.positions) {
            assert_abs_diff_eq!(x[0], 1.5 * t, epsilon = 1e-6);
        }
    }

    #[test]
    fn spreading_packet_scales_trajectories() {
        let rec = free_record(0.0, 2.0);
        let tr = integrate_dbb(&rec, [1.0, 0.0], 4).unwrap();
        for (t, x) in tr.times.iter().zip(&tr.positions) {
            let width = (1.0 + (t / 2.0).powi(2)).sqrt();
            assert_abs_diff_eq!(x[0], width, epsilon = 1e-5);
        }
    }

    #[test]
    fn bounded_history_keeps_latest_sample() {
        let rec = free_record(1.0, 0.5);
        let mut full = BohmTracker::new(&[[0.0, 0.0], [0.5, 0.0]], 2, None).unwrap();
        let mut short = BohmTracker::new(&[[0.0, 0.0], [0.5, 0.0]], 2, None).unwrap().with_history(1);
        for (t, f) in rec.times.iter().zip(&rec.snapshots) {
            full.observe(*t, f).unwrap();
            short.observe(*t, f).unwrap();
        }
        let (a, b) = (full.trajectories(), short.trajectories());
        assert_eq!(a[0], b[0]);
        assert_eq!(b[1].positions.len(), 1);
        assert_eq!(a[1].last_position(), b[1].last_position());
        assert_eq!(short.active_positions(), full.active_positions());
    }

    #[test]
    fn off_support_start_is_rejected() {
        let rec = free_record(0.0, 0.025);
        assert!(matches!(integrate_dbb(&rec, [19.0, 0.0], 2), Err(Error::Domain(_))));
    }

    #[test]
    fn paths_do_not_cross_in_one_dimension() {
        let rec = free_record(0.7, 1.5);
        let starts: Vec<Point> = (0..9).map(|i| [-2.0 + 0.5 * i as f64, 0.0]).collect();
        let trs = integrate_many(&rec, &starts, 2).unwrap();
        for k in 0..rec.times.len() {
            for w in trs.windows(2) {
                assert!(w[0].positions[k][0] < w[1].positions[k][0]);
            }
        }
    }

    #[test]
    fn uniform_sampling_mean() {
        let g = Grid::line(0.0, 1.0, 64).unwrap();
        let rho = vec![1.0; 64];
        let xs = sample_initial(&g, &rho, 100_000, 7).unwrap();
        let mean = xs.iter().map(|p| p[0]).sum::<f64>() / xs.len() as f64;
        // The cell convention spans [-dx/2, 1 - dx/2].
        assert_abs_diff_eq!(mean, 0.5 - 0.5 / 64.0, epsilon = 0.005);
    }

    #[test]
    fn sampling_is_deterministic_and_seed_dependent() {
        let g = Grid::square(-5.0, 5.0, 32).unwrap();
        let f = gaussian_packet(&g, [0.0, 0.0], [0.0, 0.0], 0.8, 1.0, 1.0).unwrap();
        let a = sample_initial(&g, &f.density(), 500, 3).unwrap();
        let b = sample_initial(&g, &f.density(), 500, 3).unwrap();
        let c = sample_initial(&g, &f.density(), 500, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(sample_initial(&g, &f.density(), 0, 3).is_err());
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert_abs_diff_eq!(d, 0.5 / n as f64, epsilon = 1e-12);
    }

    #[test]
    fn single_member_ensemble_reports_large_distance() {
        let rec = free_record(0.0, 0.025);
        let ens = Ensemble::from_record(&rec, 1, 11, 2).unwrap();
        let rows = equivariance_check(&rec, &ens).unwrap();
        assert!(rows.iter().all(|r| r.ks[0] >= 0.5 && r.active == 1));
    }

    #[test]
    fn cdf_inverse_round_trip() {
        let dens = [0.0, 1.0, 3.0, 0.0, 2.0];
        let cdf = CellCdf::new(0.0, 1.0, &dens).unwrap();
        for u in [0.05, 0.3, 0.5, 0.8, 0.99] {
            let (x, _) = cdf.invert(u);
            assert_abs_diff_eq!(cdf.eval(x), u, epsilon = 1e-12);
        }
    }
}
