use alloc::vec::Vec;

use crate::error::ensure;
use crate::Result;

/// Uniform 1-D grid `x_j = x_min + j·dx`, `j = 0..nx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub dx: f64,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, nx: usize) -> Result<Self> {
        ensure!(nx >= 3, "grid needs at least 3 points, got {nx}");
        ensure!(
            x_min.is_finite() && x_max.is_finite() && x_max > x_min,
            "grid bounds must satisfy x_min < x_max, got [{x_min}, {x_max}]"
        );
        Ok(Self {
            x_min,
            x_max,
            nx,
            dx: (x_max - x_min) / (nx - 1) as f64,
        })
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.nx).map(|j| self.x(j)).collect()
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    /// Composite trapezoid weights.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut w = alloc::vec![self.dx; self.nx];
        w[0] = 0.5 * self.dx;
        w[self.nx - 1] = 0.5 * self.dx;
        w
    }

    /// `∫ f g dx` by the composite trapezoid rule.
    pub fn inner_product(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        ensure!(
            f.len() == self.nx && g.len() == self.nx,
            "inner product needs two fields of length {}, got {} and {}",
            self.nx,
            f.len(),
            g.len()
        );
        Ok(self.inner_product_unchecked(f, g))
    }

    pub(crate) fn inner_product_unchecked(&self, f: &[f64], g: &[f64]) -> f64 {
        let n = self.nx;
        let interior: f64 = f[1..n - 1].iter().zip(&g[1..n - 1]).map(|(a, b)| a * b).sum();
        self.dx * (interior + 0.5 * (f[0] * g[0] + f[n - 1] * g[n - 1]))
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }
}

/// Four-point Lagrange interpolation of a grid field at `x`.
///
/// The stencil is the two nodes on either side of `x`, shifted inwards at the
/// domain edges. Exact for cubics.
pub fn cubic_interpolate(grid: &Grid1D, field: &[f64], x: f64) -> Result<f64> {
    ensure!(field.len() == grid.nx, "field length {} != nx {}", field.len(), grid.nx);
    let tol = 1e-12 * grid.width();
    ensure!(
        x >= grid.x_min - tol && x <= grid.x_max + tol,
        "interpolation point {x} outside grid [{}, {}]",
        grid.x_min,
        grid.x_max
    );
    let s = (x - grid.x_min) / grid.dx;
    let cell = (s.max(0.0) as usize).min(grid.nx - 2);
    let start = cell.saturating_sub(1).min(grid.nx - 4);
    let t = s - start as f64;
    // Lagrange basis on nodes 0,1,2,3 in local coordinate t.
    let l0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
    let l1 = t * (t - 2.0) * (t - 3.0) / 2.0;
    let l2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
    let l3 = t * (t - 1.0) * (t - 2.0) / 6.0;
    let f = &field[start..start + 4];
    Ok(l0 * f[0] + l1 * f[1] + l2 * f[2] + l3 * f[3])
}
