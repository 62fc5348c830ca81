//! Madelung variables: density/action extraction with phase unwrapping,
//! the quantum potential, the guidance velocity field and residuals of the
//! hydrodynamic equations.

use std::collections::VecDeque;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::{PolarField, WaveField};
use crate::grid::{Grid, Point};
use crate::potential::PotentialSpec;
use crate::propagator::EvolutionRecord;

/// Relative density floor below which the phase is treated as meaningless.
pub const DEFAULT_RHO_FLOOR: f64 = 1e-12;

fn wrap(x: f64, period: f64) -> f64 {
    x - period * (x / period).round()
}

/// Splits `psi = sqrt(rho) exp(i S / hbar)` and unwraps `S` by a breadth-first
/// flood fill from the density maximum of every connected piece of the
/// support `rho > floor * max(rho)`.
pub fn to_polar(field: &WaveField, rho_floor: Option<f64>) -> PolarField {
    let grid = field.grid().clone();
    let rho = field.density();
    let max = rho.iter().copied().fold(0.0, f64::max);
    let floor = rho_floor.unwrap_or(DEFAULT_RHO_FLOOR) * max;
    let valid: Vec<bool> = rho.iter().map(|&r| r > floor).collect();
    let phase: Vec<f64> = field.amplitudes().iter().map(|z| z.arg()).collect();

    let n = grid.len();
    let mut action = vec![0.0; n];
    let mut component = vec![u32::MAX; n];
    let mut order: Vec<usize> = (0..n).filter(|&i| valid[i]).collect();
    // Seeds in decreasing density so each component starts at its maximum.
    order.sort_by(|&a, &b| rho[b].total_cmp(&rho[a]).then(a.cmp(&b)));
    let mut next_label = 0u32;
    let mut queue = VecDeque::new();
    let mut unwrapped = vec![0.0; n];
    for &seed in &order {
        if component[seed] != u32::MAX {
            continue;
        }
        component[seed] = next_label;
        unwrapped[seed] = phase[seed];
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for q in grid.neighbors(p) {
                if valid[q] && component[q] == u32::MAX {
                    component[q] = next_label;
                    unwrapped[q] = phase[q] + 2.0 * PI * ((unwrapped[p] - phase[q]) / (2.0 * PI)).round();
                    queue.push_back(q);
                }
            }
        }
        next_label += 1;
    }
    for i in 0..n {
        action[i] = if valid[i] { field.hbar() * unwrapped[i] } else { f64::NAN };
    }
    PolarField {
        grid,
        rho,
        action,
        valid,
        component,
        disconnected: next_label > 1,
        hbar: field.hbar(),
        mass: field.mass(),
    }
}

/// A real field with an explicit validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl MaskedField {
    pub fn get(&self, idx: usize) -> Option<f64> {
        self.valid[idx].then(|| self.values[idx])
    }
}

/// Indices of the centered-stencil neighbours of `idx` along `axis`, if both
/// exist (no periodic wrap).
fn stencil(grid: &Grid, idx: usize, axis: usize) -> Option<(usize, usize)> {
    let (i, j) = grid.unravel(idx);
    let (nx, ny) = grid.shape();
    match axis {
        0 => (i > 0 && i + 1 < nx).then(|| (grid.index(i - 1, j), grid.index(i + 1, j))),
        _ => (j > 0 && j + 1 < ny).then(|| (grid.index(i, j - 1), grid.index(i, j + 1))),
    }
}

/// `Q = -(hbar^2 / 2m) Laplacian(sqrt rho) / sqrt rho` by centered
/// differences. Points whose stencil leaves the support are invalid.
pub fn quantum_potential(field: &WaveField, rho_floor: Option<f64>) -> MaskedField {
    let grid = field.grid();
    let rho = field.density();
    let max = rho.iter().copied().fold(0.0, f64::max);
    let floor = rho_floor.unwrap_or(DEFAULT_RHO_FLOOR) * max;
    let amp: Vec<f64> = rho.iter().map(|r| r.sqrt()).collect();
    let support: Vec<bool> = rho.iter().map(|&r| r > floor).collect();
    let coef = -field.hbar().powi(2) / (2.0 * field.mass());
    let mut values = vec![f64::NAN; grid.len()];
    let mut valid = vec![false; grid.len()];
    for idx in 0..grid.len() {
        if !support[idx] {
            continue;
        }
        let mut lap = 0.0;
        let mut ok = true;
        for axis in 0..grid.dim() {
            match stencil(grid, idx, axis) {
                Some((a, b)) if support[a] && support[b] => {
                    let h = grid.spacing(axis);
                    lap += (amp[a] - 2.0 * amp[idx] + amp[b]) / (h * h);
                }
                _ => ok = false,
            }
        }
        if ok {
            values[idx] = coef * lap / amp[idx];
            valid[idx] = true;
        }
    }
    MaskedField { grid: grid.clone(), values, valid }
}

/// Guidance velocity `grad S / m` with its validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub grid: Grid,
    pub velocity: Vec<Point>,
    pub valid: Vec<bool>,
    pub disconnected: bool,
}

impl VelocityField {
    pub fn get(&self, idx: usize) -> Option<Point> {
        self.valid[idx].then(|| self.velocity[idx])
    }

    /// Bilinear (linear in 1D) interpolation; `None` if any corner node is
    /// invalid or the point lies outside the grid.
    pub fn interpolate(&self, p: Point) -> Option<Point> {
        let g = &self.grid;
        let mut base = [0usize; 2];
        let mut frac = [0.0; 2];
        for (k, a) in g.axes().iter().enumerate() {
            let f = a.fractional_index(p[k]);
            if !(f >= 0.0 && f <= (a.points - 1) as f64) {
                return None;
            }
            let i = (f.floor() as usize).min(a.points - 2);
            base[k] = i;
            frac[k] = f - i as f64;
        }
        match g.dim() {
            1 => {
                let a = self.get(base[0])?;
                let b = self.get(base[0] + 1)?;
                let t = frac[0];
                Some([a[0] * (1.0 - t) + b[0] * t, 0.0])
            }
            _ => {
                let (i, j) = (base[0], base[1]);
                let (fx, fy) = (frac[0], frac[1]);
                let v00 = self.get(g.index(i, j))?;
                let v10 = self.get(g.index(i + 1, j))?;
                let v01 = self.get(g.index(i, j + 1))?;
                let v11 = self.get(g.index(i + 1, j + 1))?;
                let w = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
                let mut out = [0.0; 2];
                for k in 0..2 {
                    out[k] = w[0] * v00[k] + w[1] * v10[k] + w[2] * v01[k] + w[3] * v11[k];
                }
                Some(out)
            }
        }
    }
}

/// Centered difference of the action along `axis` at `idx`, taking each
/// nearest-neighbour increment modulo `2 pi hbar` so that branch cuts left by
/// the flood fill never leak into the gradient.
fn action_gradient(polar: &PolarField, idx: usize, axis: usize) -> Option<f64> {
    let (a, b) = stencil(&polar.grid, idx, axis)?;
    if !(polar.valid[a] && polar.valid[b] && polar.valid[idx]) {
        return None;
    }
    let c = polar.component[idx];
    if polar.component[a] != c || polar.component[b] != c {
        return None;
    }
    let period = 2.0 * PI * polar.hbar;
    let up = wrap(polar.action[b] - polar.action[idx], period);
    let down = wrap(polar.action[idx] - polar.action[a], period);
    Some((up + down) / (2.0 * polar.grid.spacing(axis)))
}

pub fn velocity_field(polar: &PolarField) -> VelocityField {
    let g = &polar.grid;
    let mut velocity = vec![[f64::NAN, f64::NAN]; g.len()];
    let mut valid = vec![false; g.len()];
    for idx in 0..g.len() {
        let mut v = [0.0; 2];
        let mut ok = true;
        for axis in 0..g.dim() {
            match action_gradient(polar, idx, axis) {
                Some(d) => v[axis] = d / polar.mass,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            velocity[idx] = v;
            valid[idx] = true;
        }
    }
    VelocityField {
        grid: g.clone(),
        velocity,
        valid,
        disconnected: polar.disconnected,
    }
}

/// Residual norms of the Madelung system at one interior stored time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRow {
    pub t: f64,
    /// `|| dS/dt + |grad S|^2/2m + V + Q ||_2` over the mask.
    pub action_l2: f64,
    /// `|| drho/dt + div(rho grad S / m) ||_2` over the mask.
    pub continuity_l2: f64,
    pub action_mean: f64,
    pub continuity_mean: f64,
    pub points: usize,
}

/// Evaluates both Madelung residuals at every interior stored time using
/// centered differences in time and space.
pub fn madelung_residuals(
    record: &EvolutionRecord,
    potential: &PotentialSpec,
    rho_floor: Option<f64>,
) -> Result<Vec<ResidualRow>> {
    if record.snapshots.len() < 3 {
        return Err(Error::Precondition(format!(
            "need at least 3 stored snapshots, got {}",
            record.snapshots.len()
        )));
    }
    let dt0 = record.times[1] - record.times[0];
    if record
        .times
        .windows(2)
        .any(|w| ((w[1] - w[0]) - dt0).abs() > 1e-9 * dt0.abs().max(1.0))
    {
        return Err(Error::Precondition("stored times are not uniformly spaced".into()));
    }
    let grid = record.snapshots[0].grid().clone();
    let mass = record.snapshots[0].mass();
    let hbar = record.snapshots[0].hbar();
    let period = 2.0 * PI * hbar;
    let v = potential.sample(&grid, mass)?;
    let polars: Vec<PolarField> = record.snapshots.iter().map(|f| to_polar(f, rho_floor)).collect();
    let dv = grid.cell_volume();

    let mut rows = Vec::with_capacity(polars.len() - 2);
    for k in 1..polars.len() - 1 {
        let (prev, cur, next) = (&polars[k - 1], &polars[k], &polars[k + 1]);
        let q = quantum_potential(&record.snapshots[k], rho_floor);
        let vel = velocity_field(cur);
        let flux: Vec<Option<Point>> = (0..grid.len())
            .map(|i| vel.get(i).map(|u| [cur.rho[i] * u[0], cur.rho[i] * u[1]]))
            .collect();
        let both: Vec<usize> = (0..grid.len())
            .filter(|&i| prev.valid[i] && next.valid[i] && cur.valid[i])
            .collect();
        if both.is_empty() {
            continue;
        }
        // Whole-period offset between the two time neighbours.
        let mean_diff = both.iter().map(|&i| next.action[i] - prev.action[i]).sum::<f64>()
            / both.len() as f64;

        let (mut s1, mut s2, mut m1, mut m2, mut count) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for &i in &both {
            let (Some(qv), Some(u)) = (q.get(i), vel.get(i)) else { continue };
            let mut div = 0.0;
            let mut ok = true;
            for axis in 0..grid.dim() {
                match stencil(&grid, i, axis) {
                    Some((a, b)) => match (flux[a], flux[b]) {
                        (Some(fa), Some(fb)) => {
                            div += (fb[axis] - fa[axis]) / (2.0 * grid.spacing(axis))
                        }
                        _ => ok = false,
                    },
                    None => ok = false,
                }
            }
            if !ok {
                continue;
            }
            let ds = mean_diff + wrap(next.action[i] - prev.action[i] - mean_diff, period);
            let dsdt = ds / (2.0 * dt0);
            let speed2 = u[0] * u[0] + u[1] * u[1];
            let r1 = dsdt + 0.5 * mass * speed2 + v[i] + qv;
            let r2 = (next.rho[i] - prev.rho[i]) / (2.0 * dt0) + div;
            s1 += r1 * r1;
            s2 += r2 * r2;
            m1 += r1;
            m2 += r2;
            count += 1;
        }
        if count == 0 {
            continue;
        }
        rows.push(ResidualRow {
            t: record.times[k],
            action_l2: (s1 * dv).sqrt(),
            continuity_l2: (s2 * dv).sqrt(),
            action_mean: m1 / count as f64,
            continuity_mean: m2 / count as f64,
            points: count,
        });
    }
    if rows.is_empty() {
        return Err(Error::Precondition("no interior point with a complete stencil".into()));
    }
    Ok(rows)
}

/// PolarField as CSV: `x[, y], rho, S, valid`.
pub fn polar_csv(polar: &PolarField) -> String {
    let dim = polar.grid.dim();
    let mut out = String::from(if dim == 2 { "x,y,rho,S,valid\n" } else { "x,rho,S,valid\n" });
    for idx in 0..polar.grid.len() {
        let p = polar.grid.point(idx);
        let mut cols = vec![p[0]];
        if dim == 2 {
            cols.push(p[1]);
        }
        cols.push(polar.rho[idx]);
        cols.push(if polar.valid[idx] { polar.action[idx] } else { 0.0 });
        let mut row = cols.iter().map(|&x| crate::io::fmt_f64(x)).collect::<Vec<_>>().join(",");
        row.push_str(if polar.valid[idx] { ",1\n" } else { ",0\n" });
        out.push_str(&row);
    }
    out
}

pub fn residual_csv(rows: &[ResidualRow]) -> String {
    let mut out = String::from("t,action_l2,continuity_l2,action_mean,continuity_mean,points\n");
    for r in rows {
        out.push_str(&crate::io::csv_row(&[
            r.t,
            r.action_l2,
            r.continuity_l2,
            r.action_mean,
            r.continuity_mean,
            r.points as f64,
        ]));
    }
    out
}
