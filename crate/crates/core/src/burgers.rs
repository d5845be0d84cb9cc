//! Deterministic inviscid Burgers solver: first-order central (local
//! Lax–Friedrichs) flux with classical RK4 in time and frozen boundary values.
//!
//! The kernels work on `lanes` independent fields interleaved point by point
//! (`u[j * lanes + l]`), so a batch of samples advances through the same
//! loop and vectorizes. A single field is the `lanes == 1` case and gives the
//! same bits as any batch containing it.

use alloc::vec::Vec;

use crate::error::ensure;
use crate::numerics::Grid1D;
use crate::{Error, Result};

/// `max(|u_l|, |u_r|)`, the largest `|f'(u)|` over the cell pair.
#[inline]
pub fn local_speed(u_l: f64, u_r: f64) -> f64 {
    u_l.abs().max(u_r.abs())
}

/// Burgers flux `u²/2`.
#[inline]
pub fn flux(u: f64) -> f64 {
    0.5 * u * u
}

/// Interface flux `½(f(u_l) + f(u_r)) − ½ a (u_r − u_l)`.
#[inline]
pub fn kt_flux(u_l: f64, u_r: f64) -> f64 {
    0.25 * (u_l * u_l + u_r * u_r) - 0.5 * local_speed(u_l, u_r) * (u_r - u_l)
}

/// Semi-discrete right-hand side `−(F_{j+½} − F_{j−½}) / dx` for interleaved
/// fields; both boundary points get a zero derivative.
pub fn rhs_lanes(u: &[f64], lanes: usize, dx: f64, out: &mut [f64]) {
    debug_assert_eq!(u.len(), out.len());
    debug_assert_eq!(u.len() % lanes, 0);
    let nx = u.len() / lanes;
    let inv_dx = 1.0 / dx;
    // out[j] first holds F_{j+½}; the backward sweep turns it into the
    // difference without scratch storage.
    for j in 0..nx - 1 {
        let (left, right) = (&u[j * lanes..(j + 1) * lanes], &u[(j + 1) * lanes..(j + 2) * lanes]);
        for ((f, &ul), &ur) in out[j * lanes..(j + 1) * lanes].iter_mut().zip(left).zip(right) {
            *f = kt_flux(ul, ur);
        }
    }
    for j in (1..nx - 1).rev() {
        let (lo, hi) = out.split_at_mut(j * lanes);
        for (f, &g) in hi[..lanes].iter_mut().zip(&lo[(j - 1) * lanes..]) {
            *f = -(*f - g) * inv_dx;
        }
    }
    out[..lanes].fill(0.0);
    out[(nx - 1) * lanes..].fill(0.0);
}

/// Single-field right-hand side.
pub fn rhs(u: &[f64], dx: f64, out: &mut [f64]) {
    rhs_lanes(u, 1, dx, out);
}

/// `Σ |u_{j+1} − u_j|`.
pub fn total_variation(u: &[f64]) -> f64 {
    u.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// `dt · max|u| / dx`; the scheme is comfortable below 0.5.
pub fn cfl_number(u: &[f64], dx: f64, dt: f64) -> f64 {
    dt * u.iter().fold(0.0f64, |m, v| m.max(v.abs())) / dx
}

/// Step sizes that march from 0 to `t_end`: `dt` each, with the last step
/// shortened so the final time is hit exactly.
pub fn time_steps(t_end: f64, dt: f64) -> Result<impl ExactSizeIterator<Item = f64>> {
    ensure!(dt > 0.0 && dt.is_finite(), "time step must be positive, got {dt}");
    ensure!(t_end >= 0.0 && t_end.is_finite(), "final time must be >= 0, got {t_end}");
    let n = libm::ceil(t_end / dt - 1e-9).max(0.0) as usize;
    Ok((0..n).map(move |k| if k + 1 == n { t_end - k as f64 * dt } else { dt }))
}

/// Reusable RK4 stage storage for `lanes` interleaved fields on a grid.
#[derive(Debug, Clone)]
pub struct Rk4 {
    lanes: usize,
    dx: f64,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(grid: &Grid1D, lanes: usize) -> Self {
        let len = grid.nx * lanes.max(1);
        Self {
            lanes: lanes.max(1),
            dx: grid.dx,
            k: core::array::from_fn(|_| alloc::vec![0.0; len]),
            tmp: alloc::vec![0.0; len],
        }
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    /// Advances `u` by one classical RK4 step.
    pub fn step(&mut self, u: &mut [f64], dt: f64) {
        let lanes = self.lanes;
        let dx = self.dx;
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        rhs_lanes(u, lanes, dx, k1);
        axpy_into(tmp, u, 0.5 * dt, k1);
        rhs_lanes(tmp, lanes, dx, k2);
        axpy_into(tmp, u, 0.5 * dt, k2);
        rhs_lanes(tmp, lanes, dx, k3);
        axpy_into(tmp, u, dt, k3);
        rhs_lanes(tmp, lanes, dx, k4);
        let h = dt / 6.0;
        for ((((v, a), b), c), d) in u.iter_mut().zip(&*k1).zip(&*k2).zip(&*k3).zip(&*k4) {
            *v += h * (a + 2.0 * b + 2.0 * c + d);
        }
    }
}

#[inline]
fn axpy_into(out: &mut [f64], u: &[f64], a: f64, k: &[f64]) {
    for ((o, &v), &kv) in out.iter_mut().zip(u).zip(k) {
        *o = v + a * kv;
    }
}

/// Index of the first non-finite entry, split into (grid index, lane).
pub(crate) fn first_non_finite(u: &[f64], lanes: usize) -> Option<(usize, usize)> {
    u.iter().position(|v| !v.is_finite()).map(|k| (k / lanes, k % lanes))
}

/// A single field at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub u: Vec<f64>,
    pub t: f64,
    pub grid: Grid1D,
}

/// Integrates one field from `t = 0` to `t_end`.
pub fn solve(grid: &Grid1D, u0: &[f64], t_end: f64, dt: f64) -> Result<FieldState> {
    ensure!(u0.len() == grid.nx, "initial field has length {} != nx {}", u0.len(), grid.nx);
    let mut u = u0.to_vec();
    solve_lanes(grid, &mut u, 1, t_end, dt)?;
    Ok(FieldState { u, t: t_end, grid: *grid })
}

/// Integrates `lanes` interleaved fields in place. A non-finite value aborts
/// with the step, grid index and lane.
pub fn solve_lanes(grid: &Grid1D, u: &mut [f64], lanes: usize, t_end: f64, dt: f64) -> Result<()> {
    ensure!(lanes >= 1, "need at least one lane");
    ensure!(
        u.len() == grid.nx * lanes,
        "batch storage {} does not match {} points x {lanes} lanes",
        u.len(),
        grid.nx
    );
    if let Some((index, lane)) = first_non_finite(u, lanes) {
        return Err(Error::SolverFailure {
            step: 0,
            index,
            sample: Some(lane),
        });
    }
    let mut rk = Rk4::new(grid, lanes);
    for (step, h) in time_steps(t_end, dt)?.enumerate() {
        rk.step(u, h);
        if let Some((index, lane)) = first_non_finite(u, lanes) {
            return Err(Error::SolverFailure {
                step: step + 1,
                index,
                sample: Some(lane),
            });
        }
    }
    Ok(())
}

/// Interleaves row-major fields (`fields[l * nx + j]`) into lane layout.
pub fn interleave(fields: &[f64], lanes: usize, out: &mut [f64]) {
    let nx = fields.len() / lanes;
    for l in 0..lanes {
        for j in 0..nx {
            out[j * lanes + l] = fields[l * nx + j];
        }
    }
}

/// Inverse of [`interleave`].
pub fn deinterleave(lanes_data: &[f64], lanes: usize, out: &mut [f64]) {
    let nx = lanes_data.len() / lanes;
    for l in 0..lanes {
        for j in 0..nx {
            out[l * nx + j] = lanes_data[j * lanes + l];
        }
    }
}
