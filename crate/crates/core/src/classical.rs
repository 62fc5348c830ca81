//! Classical side of the small-`hbar` limit: Euler–Lagrange kernels, the
//! min-plus Hamilton–Jacobi action, Newton trajectories, density transport
//! along characteristics and the `hbar` sweep comparing both pictures.

use rayon::prelude::*;

use crate::bohm::{BohmTracker, Trajectory, TrajectoryKind};
use crate::error::{Error, Result};
use crate::field::{gaussian_packet, marginal};
use crate::grid::{Grid, Point};
use crate::madelung::to_polar;
use crate::potential::PotentialSpec;
use crate::propagator::{evolve_with_observer, propagator_for, Splitting, Stepping};

pub const DEFAULT_PATH_SEGMENTS: usize = 64;

/// Classical action of the extremal path from `(x0, 0)` to `(x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionKernel {
    pub potential: PotentialSpec,
    pub mass: f64,
    pub dim: usize,
    /// Segments of the piecewise-linear path used when no closed form exists.
    pub segments: usize,
}

impl ActionKernel {
    pub fn new(potential: PotentialSpec, mass: f64, dim: usize) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::Config(format!("mass must be positive, got {mass}")));
        }
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")));
        }
        Ok(ActionKernel { potential, mass, dim, segments: DEFAULT_PATH_SEGMENTS })
    }

    pub fn with_segments(mut self, segments: usize) -> Self {
        self.segments = segments;
        self
    }

    pub fn action(&self, x0: Point, x: Point, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Config(format!("kernel time must be positive, got {t}")));
        }
        match self.closed_form(x0, x, t) {
            Some(r) => r,
            None => self.path_minimized(x0, x, t).map(|(s, _)| s),
        }
    }

    fn closed_form(&self, x0: Point, x: Point, t: f64) -> Option<Result<f64>> {
        let m = self.mass;
        let axes = 0..self.dim;
        match &self.potential {
            PotentialSpec::Free => Some(Ok(axes.map(|k| m * (x[k] - x0[k]).powi(2) / (2.0 * t)).sum())),
            PotentialSpec::Constant(c) => {
                Some(Ok(axes.map(|k| m * (x[k] - x0[k]).powi(2) / (2.0 * t)).sum::<f64>() - c * t))
            }
            PotentialSpec::Linear { slope } => Some(Ok(axes
                .map(|k| {
                    let g = slope[k];
                    let u = (x[k] - x0[k] + 0.5 * g * t * t) / t;
                    0.5 * m * u * u * t - m * u * g * t * t - m * g * x0[k] * t + m * g * g * t.powi(3) / 3.0
                })
                .sum())),
            PotentialSpec::Harmonic { omega } => {
                let mut s = 0.0;
                for k in axes {
                    let w = omega[k];
                    if w == 0.0 {
                        s += m * (x[k] - x0[k]).powi(2) / (2.0 * t);
                        continue;
                    }
                    if w * t >= std::f64::consts::PI {
                        return Some(Err(Error::FocalPoint(format!(
                            "omega t = {} reaches the conjugate point on axis {k}",
                            w * t
                        ))));
                    }
                    let (sn, cs) = (w * t).sin_cos();
                    s += m * w / (2.0 * sn) * ((x0[k] * x0[k] + x[k] * x[k]) * cs - 2.0 * x0[k] * x[k]);
                }
                Some(Ok(s))
            }
            _ => None,
        }
    }

    /// Minimizes the trapezoid-rule action over piecewise-linear paths with
    /// fixed endpoints by over-relaxed coordinate (Newton) descent on the
    /// interior nodes. Returns the action and the nodes.
    pub fn path_minimized(&self, x0: Point, x: Point, t: f64) -> Result<(f64, Vec<Point>)> {
        if !(t > 0.0) {
            return Err(Error::Config(format!("kernel time must be positive, got {t}")));
        }
        let k_seg = self.segments.max(2);
        let h = t / k_seg as f64;
        let m = self.mass;
        let mut q: Vec<Point> = (0..=k_seg)
            .map(|i| {
                let s = i as f64 / k_seg as f64;
                [x0[0] + s * (x[0] - x0[0]), x0[1] + s * (x[1] - x0[1])]
            })
            .collect();
        let relax = 2.0 / (1.0 + (std::f64::consts::PI / k_seg as f64).sin());
        let scale = 1.0 + (0..self.dim).map(|k| x0[k].abs().max(x[k].abs())).fold(0.0, f64::max);
        let eps = 1e-5 * scale;
        let max_sweeps = 200 * k_seg * k_seg;
        let mut converged = false;
        for _ in 0..max_sweeps {
            let mut change: f64 = 0.0;
            for i in 1..k_seg {
                let grad_v = self.potential.gradient(q[i], m);
                for a in 0..self.dim {
                    let mut up = q[i];
                    let mut down = q[i];
                    up[a] += eps;
                    down[a] -= eps;
                    let curv = (self.potential.gradient(up, m)[a] - self.potential.gradient(down, m)[a]) / (2.0 * eps);
                    let diag = 2.0 * m / h - h * curv;
                    if !(diag > 0.0) {
                        return Err(Error::FocalPoint(format!(
                            "discrete action is not convex at t = {t}; the path passes a focal point"
                        )));
                    }
                    let g = m * (2.0 * q[i][a] - q[i - 1][a] - q[i + 1][a]) / h - h * grad_v[a];
                    let step = relax * g / diag;
                    q[i][a] -= step;
                    change = change.max(step.abs());
                }
            }
            if change <= 1e-14 * scale {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Divergence { step: max_sweeps, wave: None });
        }
        let mut s = 0.0;
        for i in 0..k_seg {
            let kin: f64 = (0..self.dim).map(|a| (q[i + 1][a] - q[i][a]).powi(2)).sum();
            s += m * kin / (2.0 * h)
                - 0.5 * h * (self.potential.energy(q[i], m) + self.potential.energy(q[i + 1], m));
        }
        Ok((s, q))
    }
}

pub fn euler_lagrange_action(x0: Point, x: Point, t: f64, potential: &PotentialSpec, mass: f64, dim: usize) -> Result<f64> {
    ActionKernel::new(potential.clone(), mass, dim)?.action(x0, x, t)
}

/// Action and minimizing initial point per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct MinPlus {
    pub action: Vec<f64>,
    pub argmin: Vec<Point>,
}

/// `S(x, t) = min_x0 (S0(x0) + S_EL(x0; x, t))` by exhaustive search over
/// the grid, then a parabolic refinement along each axis around the
/// discrete minimizer. Ties go to the first node in row-major order.
pub fn minplus_action(grid: &Grid, s0: &[f64], t: f64, kernel: &ActionKernel) -> Result<MinPlus> {
    if s0.len() != grid.len() {
        return Err(Error::GridMismatch("initial action does not match grid".into()));
    }
    if let Some(i) = s0.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("initial action not finite at node {i}")));
    }
    if t == 0.0 {
        return Ok(MinPlus { action: s0.to_vec(), argmin: grid.points().collect() });
    }
    if t < 0.0 {
        return Err(Error::Config(format!("time must be non-negative, got {t}")));
    }
    let origin = grid.point(0);
    kernel.action(origin, origin, t)?;
    let nodes: Vec<Point> = grid.points().collect();
    let rows: Vec<Result<(f64, Point)>> = nodes
        .par_iter()
        .map(|&x| {
            let cost = |j: usize| kernel.action(nodes[j], x, t).map(|k| s0[j] + k);
            let mut best = (f64::INFINITY, 0usize);
            for j in 0..nodes.len() {
                let f = cost(j)?;
                if f < best.0 {
                    best = (f, j);
                }
            }
            let (f0, j) = best;
            let (i0, j0) = grid.unravel(j);
            let (nx, ny) = grid.shape();
            let mut value = f0;
            let mut at = nodes[j];
            for axis in 0..grid.dim() {
                let (lo, hi) = match axis {
                    0 if i0 > 0 && i0 + 1 < nx => (grid.index(i0 - 1, j0), grid.index(i0 + 1, j0)),
                    1 if j0 > 0 && j0 + 1 < ny => (grid.index(i0, j0 - 1), grid.index(i0, j0 + 1)),
                    _ => continue,
                };
                let (fm, fp) = (cost(lo)?, cost(hi)?);
                let curv = fm - 2.0 * f0 + fp;
                if curv > 0.0 {
                    let delta = 0.5 * (fm - fp) / curv;
                    if delta.abs() <= 1.0 {
                        value -= (fp - fm).powi(2) / (8.0 * curv);
                        at[axis] += delta * grid.spacing(axis);
                    }
                }
            }
            Ok((value, at))
        })
        .collect();
    let mut action = Vec::with_capacity(rows.len());
    let mut argmin = Vec::with_capacity(rows.len());
    for r in rows {
        let (v, a) = r?;
        action.push(v);
        argmin.push(a);
    }
    Ok(MinPlus { action, argmin })
}

fn newton_rk4(x: &mut Point, v: &mut Point, potential: &PotentialSpec, mass: f64, dt: f64) {
    let acc = |p: Point| {
        let g = potential.gradient(p, mass);
        [-g[0] / mass, -g[1] / mass]
    };
    let add = |a: Point, b: Point, c: f64| [a[0] + c * b[0], a[1] + c * b[1]];
    let (x0, v0) = (*x, *v);
    let a1 = acc(x0);
    let (x2, v2) = (add(x0, v0, 0.5 * dt), add(v0, a1, 0.5 * dt));
    let a2 = acc(x2);
    let (x3, v3) = (add(x0, v2, 0.5 * dt), add(v0, a2, 0.5 * dt));
    let a3 = acc(x3);
    let (x4, v4) = (add(x0, v3, dt), add(v0, a3, dt));
    let a4 = acc(x4);
    for k in 0..2 {
        x[k] = x0[k] + dt / 6.0 * (v0[k] + 2.0 * v2[k] + 2.0 * v3[k] + v4[k]);
        v[k] = v0[k] + dt / 6.0 * (a1[k] + 2.0 * a2[k] + 2.0 * a3[k] + a4[k]);
    }
}

/// Newton trajectory sampled at `times` (starting at `times[0]`), with
/// `substeps` RK4 steps per interval.
pub fn newton_on_mesh(x0: Point, v0: Point, potential: &PotentialSpec, mass: f64, times: &[f64], substeps: usize) -> Result<Trajectory> {
    if !(mass > 0.0) || substeps == 0 || times.is_empty() {
        return Err(Error::Config("newton trajectory needs mass > 0, substeps > 0 and a time mesh".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("time mesh must be strictly increasing".into()));
    }
    let mut tr = Trajectory::new(0, TrajectoryKind::Newton, x0);
    let (mut x, mut v) = (x0, v0);
    tr.push(times[0], x, v);
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for _ in 0..substeps {
            newton_rk4(&mut x, &mut v, potential, mass, h);
        }
        tr.push(w[1], x, v);
    }
    Ok(tr)
}

pub fn newton_trajectory(x0: Point, v0: Point, potential: &PotentialSpec, mass: f64, t_end: f64, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::Config("t_end and dt must be positive".into()));
    }
    let steps = (t_end / dt).ceil() as usize;
    let times: Vec<f64> = (0..=steps).map(|i| t_end * i as f64 / steps as f64).collect();
    newton_on_mesh(x0, v0, potential, mass, &times, 1)
}

/// Densities pushed along the characteristics of the Hamilton–Jacobi flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Transport {
    pub times: Vec<f64>,
    pub densities: Vec<Vec<f64>>,
    /// First stored time at which neighbouring characteristics crossed.
    pub caustic: Option<f64>,
}

fn deposit(grid: &Grid, p: Point, w: f64, out: &mut [f64]) {
    let mut base = [0usize; 2];
    let mut frac = [0.0; 2];
    for (k, a) in grid.axes().iter().enumerate() {
        let f = a.fractional_index(p[k]);
        if !(f >= 0.0 && f < (a.points - 1) as f64) {
            return;
        }
        base[k] = f.floor() as usize;
        frac[k] = f - base[k] as f64;
    }
    if grid.dim() == 1 {
        out[base[0]] += w * (1.0 - frac[0]);
        out[base[0] + 1] += w * frac[0];
    } else {
        let (i, j, fx, fy) = (base[0], base[1], frac[0], frac[1]);
        out[grid.index(i, j)] += w * (1.0 - fx) * (1.0 - fy);
        out[grid.index(i + 1, j)] += w * fx * (1.0 - fy);
        out[grid.index(i, j + 1)] += w * (1.0 - fx) * fy;
        out[grid.index(i + 1, j + 1)] += w * fx * fy;
    }
}

/// Characteristics of the Hamilton–Jacobi flow are Newton paths launched
/// with `v = grad S0 / m`; every node of `rho0` is pushed along one and its
/// mass deposited back on the grid by cloud-in-cell weighting.
pub fn transport_density(
    grid: &Grid,
    rho0: &[f64],
    velocity0: &[Point],
    potential: &PotentialSpec,
    mass: f64,
    times: &[f64],
    substeps: usize,
) -> Result<Transport> {
    if rho0.len() != grid.len() || velocity0.len() != grid.len() {
        return Err(Error::GridMismatch("transport inputs do not match grid".into()));
    }
    let mut mesh = vec![0.0];
    mesh.extend(times.iter().copied().filter(|&t| t > 0.0));
    let peak = rho0.iter().copied().fold(0.0, f64::max);
    let cutoff = 1e-14 * peak;
    let paths: Vec<Option<Trajectory>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if rho0[i] <= cutoff {
                return Ok(None);
            }
            newton_on_mesh(grid.point(i), velocity0[i], potential, mass, &mesh, substeps).map(Some)
        })
        .collect::<Result<_>>()?;
    let mut densities = Vec::with_capacity(times.len());
    let mut caustic = None;
    let (nx, ny) = grid.shape();
    for (k, &t) in times.iter().enumerate() {
        let slot = if t > 0.0 { mesh.iter().position(|&s| s == t).unwrap_or(k) } else { 0 };
        let mut rho = vec![0.0; grid.len()];
        for (i, p) in paths.iter().enumerate() {
            if let Some(p) = p {
                deposit(grid, p.positions[slot], rho0[i], &mut rho);
            }
        }
        densities.push(rho);
        if caustic.is_none() {
            let pos = |i: usize, j: usize| paths[grid.index(i, j)].as_ref().map(|p| p.positions[slot]);
            let crossed = if grid.dim() == 1 {
                (0..nx - 1).any(|i| matches!((pos(i, 0), pos(i + 1, 0)), (Some(a), Some(b)) if b[0] <= a[0]))
            } else {
                (0..nx - 1).any(|i| {
                    (0..ny - 1).any(|j| match (pos(i, j), pos(i + 1, j), pos(i, j + 1)) {
                        (Some(a), Some(b), Some(c)) => {
                            (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]) <= 0.0
                        }
                        _ => false,
                    })
                })
            };
            if crossed {
                caustic = Some(t);
            }
        }
    }
    Ok(Transport { times: times.to_vec(), densities, caustic })
}

/// Wasserstein-1 distance between the marginals of two densities along
/// `axis`, from the integrated difference of their distribution functions.
pub fn wasserstein1(grid: &Grid, a: &[f64], b: &[f64], axis: usize) -> f64 {
    let (ma, mb) = (marginal(grid, a, axis), marginal(grid, b, axis));
    let (ta, tb): (f64, f64) = (ma.iter().sum(), mb.iter().sum());
    let (mut fa, mut fb, mut w) = (0.0, 0.0, 0.0);
    for (x, y) in ma.iter().zip(&mb) {
        fa += x / ta;
        fb += y / tb;
        w += (fa - fb).abs();
    }
    w * grid.spacing(axis)
}

/// Classical action, density and minimizer map at a list of times.
#[derive(Debug, Clone, PartialEq)]
pub struct HJSolution {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub action: Vec<Vec<f64>>,
    pub density: Vec<Vec<f64>>,
    pub argmin: Vec<Vec<Point>>,
    pub caustic: Option<f64>,
}

/// Solves the statistical Hamilton–Jacobi system from `(rho0, S0)`.
pub fn solve_hj(
    grid: &Grid,
    rho0: &[f64],
    s0: impl Fn(Point) -> f64 + Sync,
    kernel: &ActionKernel,
    times: &[f64],
    substeps: usize,
) -> Result<HJSolution> {
    let s0_grid: Vec<f64> = grid.points().map(&s0).collect();
    let velocity0: Vec<Point> = grid
        .points()
        .map(|p| {
            let mut v = [0.0; 2];
            for k in 0..grid.dim() {
                let h = 1e-4 * grid.spacing(k);
                let (mut a, mut b) = (p, p);
                a[k] += h;
                b[k] -= h;
                v[k] = (s0(a) - s0(b)) / (2.0 * h * kernel.mass);
            }
            v
        })
        .collect();
    let transport = transport_density(grid, rho0, &velocity0, &kernel.potential, kernel.mass, times, substeps)?;
    let mut action = Vec::with_capacity(times.len());
    let mut argmin = Vec::with_capacity(times.len());
    for &t in times {
        let mp = minplus_action(grid, &s0_grid, t, kernel)?;
        action.push(mp.action);
        argmin.push(mp.argmin);
    }
    Ok(HJSolution {
        grid: grid.clone(),
        times: times.to_vec(),
        action,
        density: transport.densities,
        argmin,
        caustic: transport.caustic,
    })
}

/// How the initial density of a sweep depends on `hbar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialDensity {
    /// Gaussian of fixed width: a prepared non-discerned system.
    Fixed { sigma: f64 },
    /// Coherent-state width `sqrt(hbar / 2 m omega)`; not admissible.
    HbarScaled { omega: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepScenario {
    pub grid: Grid,
    pub mass: f64,
    pub center: Point,
    /// `S0 = m velocity . x`.
    pub velocity: Point,
    pub density: InitialDensity,
    pub potential: PotentialSpec,
    pub t_end: f64,
    pub dt: f64,
    pub store_every: usize,
    /// Offset of the compared dBB/Newton start point from `center`.
    pub trajectory_offset: Point,
    pub substeps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub hbar: f64,
    pub action_sup_diff: f64,
    pub density_w1: f64,
    pub traj_sup_dev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Decreasing,
    NotDecreasing,
    Insufficient,
}

impl Verdict {
    fn of(values: &[f64]) -> Self {
        if values.len() < 2 {
            Verdict::Insufficient
        } else if values.iter().all(|v| v.is_finite()) && values.windows(2).all(|w| w[1] < w[0]) {
            Verdict::Decreasing
        } else {
            Verdict::NotDecreasing
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Verdict::Decreasing => "decreasing",
            Verdict::NotDecreasing => "not-decreasing",
            Verdict::Insufficient => "insufficient",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<SweepRow>,
    /// Verdicts for action, density and trajectory metrics, in that order.
    pub verdicts: [Verdict; 3],
}

impl ConvergenceReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("hbar,action_sup_diff,density_W1,traj_sup_dev\n");
        for r in &self.rows {
            out.push_str(&crate::io::csv_row(&[r.hbar, r.action_sup_diff, r.density_w1, r.traj_sup_dev]));
        }
        out
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Runs the quantum problem once per `hbar` and measures its distance to
/// the classical solution at `t_end`.
pub fn hbar_sweep(sc: &SweepScenario, hbars: &[f64]) -> Result<ConvergenceReport> {
    let sigma = match sc.density {
        InitialDensity::Fixed { sigma } => sigma,
        InitialDensity::HbarScaled { .. } => {
            return Err(Error::Precondition(
                "initial density depends on hbar; the sweep needs a prepared non-discerned system".into(),
            ))
        }
    };
    if hbars.is_empty() || hbars.windows(2).any(|w| !(w[1] < w[0])) || hbars.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::Precondition("hbar list must be positive and strictly decreasing".into()));
    }
    let grid = &sc.grid;
    let dim = grid.dim();
    let mass = sc.mass;
    let v0 = sc.velocity;
    let rho0 = gaussian_packet(grid, sc.center, v0, sigma, 1.0, mass)?.density();
    let kernel = ActionKernel::new(sc.potential.clone(), mass, dim)?;
    let s0 = move |p: Point| mass * (0..dim).map(|k| v0[k] * p[k]).sum::<f64>();
    let hj = solve_hj(grid, &rho0, s0, &kernel, &[sc.t_end], 4)?;
    let stepping = Stepping::new(sc.dt, (sc.t_end / sc.dt).round() as usize, sc.store_every)
        .with_splitting(Splitting::Strang)
        .with_diagnostics_every(usize::MAX);
    let start = [sc.center[0] + sc.trajectory_offset[0], sc.center[1] + sc.trajectory_offset[1]];

    let mut rows = Vec::with_capacity(hbars.len());
    for &hbar in hbars {
        let psi0 = gaussian_packet(grid, sc.center, v0, sigma, hbar, mass)?;
        let prop = propagator_for(&psi0, &sc.potential, sc.dt, Splitting::Strang)?;
        let mut tracker = BohmTracker::new(&[start], sc.substeps, None)?;
        let mut last = psi0.clone();
        evolve_with_observer(&psi0, &prop, &stepping, |t, f| {
            tracker.observe(t, f)?;
            last = f.clone();
            Ok(())
        })?;
        let dbb = tracker.finish().remove(0);
        let newton = newton_on_mesh(start, v0, &sc.potential, mass, &dbb.times, sc.substeps)?;
        let traj_sup_dev = if dbb.exited {
            f64::NAN
        } else {
            dbb.positions
                .iter()
                .zip(&newton.positions)
                .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
                .fold(0.0, f64::max)
        };

        let polar = to_polar(&last, None);
        let peak = polar.rho.iter().copied().fold(0.0, f64::max);
        let diffs: Vec<f64> = (0..grid.len())
            .filter(|&i| polar.valid[i] && polar.rho[i] > 0.01 * peak && polar.component[i] == 0)
            .map(|i| polar.action[i] - hj.action[0][i])
            .collect();
        let offset = median(diffs.clone());
        let action_sup_diff = diffs.iter().map(|d| (d - offset).abs()).fold(0.0, f64::max);
        let rho_q = last.density();
        let density_w1 = (0..dim).map(|k| wasserstein1(grid, &rho_q, &hj.density[0], k)).sum();
        rows.push(SweepRow { hbar, action_sup_diff, density_w1, traj_sup_dev });
    }
    let col = |f: fn(&SweepRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let verdicts = [
        Verdict::of(&col(|r| r.action_sup_diff)),
        Verdict::of(&col(|r| r.density_w1)),
        Verdict::of(&col(|r| r.traj_sup_dev)),
    ];
    Ok(ConvergenceReport { rows, verdicts })
}
