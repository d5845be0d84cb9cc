//! Sample-blocked evaluation of the stochastic moments of the discrete Burgers
//! operator `L(u)` over a fixed germ ensemble.
//!
//! For every block of samples the field `u(s) = ū + Σ_i c_i(s) u_i` is
//! rebuilt in lane layout one grid row at a time, `L` is applied, and each
//! row is folded into the running sums for `E[L]`, `E[L c_k]` and, when requested, the per-sample
//! projections `⟨L(s), u_i⟩`.

use alloc::vec::Vec;

use crate::burgers::kt_flux;
use crate::numerics::Grid1D;

const BLOCK: usize = 256;

#[derive(Debug, Clone)]
pub(crate) struct FusedKernel {
    nx: usize,
    n: usize,
    dx: f64,
    weights: Vec<f64>,
    /// Five lane rows: `u_j`, `u_{j+1}`, `F_{j−½}`, `F_{j+½}` and `L_j`.
    rows: Vec<f64>,
    acc_mean: Vec<f64>,
    acc_f: Vec<f64>,
    wm: Vec<f64>,
}

impl FusedKernel {
    pub(crate) fn new(grid: &Grid1D, n: usize) -> Self {
        Self {
            nx: grid.nx,
            n,
            dx: grid.dx,
            weights: grid.trapezoid_weights(),
            rows: alloc::vec![0.0; 5 * BLOCK],
            acc_mean: alloc::vec![0.0; grid.nx],
            acc_f: alloc::vec![0.0; n * grid.nx],
            wm: alloc::vec![0.0; n * grid.nx],
        }
    }

    /// Fills `mean_out = E[L]`, `f_out[k] = E[L c_k] − E[L] E[c_k]` and, if
    /// given, the sample-centred projections `q[i][s] = ⟨L(s), u_i⟩ − E[⟨L, u_i⟩]`.
    ///
    /// `c` is `N × S` row-major and `c_bar` its row means.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn evaluate(
        &mut self,
        mean: &[f64],
        modes: &[f64],
        c: &[f64],
        c_bar: &[f64],
        mean_out: &mut [f64],
        f_out: &mut [f64],
        mut q: Option<&mut [f64]>,
    ) {
        let (nx, n) = (self.nx, self.n);
        let samples = c.len() / n;
        let inv_dx = 1.0 / self.dx;
        self.acc_mean.fill(0.0);
        self.acc_f.fill(0.0);
        if q.is_some() {
            for i in 0..n {
                for j in 0..nx {
                    self.wm[i * nx + j] = self.weights[j] * modes[i * nx + j];
                }
            }
        }
        let fill_row = |row: &mut [f64], j: usize, cs: &[&[f64]]| {
            row.fill(mean[j]);
            for (i, ci) in cs.iter().enumerate() {
                let m = modes[i * nx + j];
                for (x, &cv) in row.iter_mut().zip(*ci) {
                    *x += m * cv;
                }
            }
        };

        // One sweep over the grid per block: row j+1 is rebuilt, the flux
        // F_{j+½} formed and L_j = −(F_{j+½} − F_{j−½}) / dx folded into the
        // sums while everything is still in cache. The boundary rows have
        // L = 0 and add nothing.
        let mut s0 = 0;
        while s0 < samples {
            let b = BLOCK.min(samples - s0);
            let cs: Vec<&[f64]> = (0..n).map(|i| &c[i * samples + s0..i * samples + s0 + b]).collect();
            if let Some(q) = q.as_deref_mut() {
                for i in 0..n {
                    q[i * samples + s0..i * samples + s0 + b].fill(0.0);
                }
            }
            let (mut cur, rest) = self.rows.split_at_mut(BLOCK);
            let (mut next, rest) = rest.split_at_mut(BLOCK);
            let (mut f_lo, rest) = rest.split_at_mut(BLOCK);
            let (mut f_hi, l) = rest.split_at_mut(BLOCK);
            let l = &mut l[..b];
            fill_row(&mut cur[..b], 0, &cs);
            fill_row(&mut next[..b], 1, &cs);
            for ((f, &ul), &ur) in f_lo[..b].iter_mut().zip(&cur[..b]).zip(&next[..b]) {
                *f = kt_flux(ul, ur);
            }
            for j in 1..nx - 1 {
                core::mem::swap(&mut cur, &mut next);
                fill_row(&mut next[..b], j + 1, &cs);
                for ((f, &ul), &ur) in f_hi[..b].iter_mut().zip(&cur[..b]).zip(&next[..b]) {
                    *f = kt_flux(ul, ur);
                }
                for ((lv, &hi), &lo) in l.iter_mut().zip(&f_hi[..b]).zip(&f_lo[..b]) {
                    *lv = -(hi - lo) * inv_dx;
                }
                core::mem::swap(&mut f_lo, &mut f_hi);

                self.acc_mean[j] += sum(l);
                for (k, ck) in cs.iter().enumerate() {
                    self.acc_f[k * nx + j] += dot(l, ck);
                }
                if let Some(q) = q.as_deref_mut() {
                    for i in 0..n {
                        let w = self.wm[i * nx + j];
                        for (qv, &lv) in q[i * samples + s0..i * samples + s0 + b].iter_mut().zip(&*l) {
                            *qv += w * lv;
                        }
                    }
                }
            }
            s0 += b;
        }

        let inv_s = 1.0 / samples as f64;
        for j in 0..nx {
            mean_out[j] = self.acc_mean[j] * inv_s;
        }
        for k in 0..n {
            for j in 0..nx {
                f_out[k * nx + j] = self.acc_f[k * nx + j] * inv_s - mean_out[j] * c_bar[k];
            }
        }
        if let Some(q) = q {
            // Centre on the first sample, then on the mean. Identical samples
            // give exact zeros, which keeps a zero-variance state at zero
            // variance instead of seeding rounding noise.
            for i in 0..n {
                let qi = &mut q[i * samples..(i + 1) * samples];
                let first = qi[0];
                qi.iter_mut().for_each(|v| *v -= first);
                let shift = sum(qi) * inv_s;
                qi.iter_mut().for_each(|v| *v -= shift);
            }
        }
    }
}

/// Sum with eight independent partial sums so the loop vectorizes; the
/// order is fixed, so results are reproducible.
#[inline]
pub(crate) fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let chunks = a.chunks_exact(8);
    let tail = chunks.remainder();
    for ch in chunks {
        for (s, v) in acc.iter_mut().zip(ch) {
            *s += v;
        }
    }
    acc.iter().sum::<f64>() + tail.iter().sum::<f64>()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}
