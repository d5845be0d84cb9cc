use alloc::vec::Vec;

use crate::error::ensure;
use crate::{Error, Result};

/// Solves `A X = B` for a symmetric positive definite row-major `n × n`
/// matrix `A` and an `n × m` right-hand side `B` (row-major), by Cholesky.
pub fn solve_spd(a: &[f64], n: usize, b: &[f64], m: usize) -> Result<Vec<f64>> {
    ensure!(a.len() == n * n, "matrix storage {} does not match {n}x{n}", a.len());
    ensure!(b.len() == n * m, "right-hand side storage {} does not match {n}x{m}", b.len());
    let mut l = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Numeric(alloc::format!(
                        "matrix is not positive definite (pivot {s:e} at row {i})"
                    )));
                }
                l[i * n + i] = libm::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut x = b.to_vec();
    for c in 0..m {
        for i in 0..n {
            let s: f64 = (0..i).map(|k| l[i * n + k] * x[k * m + c]).sum();
            x[i * m + c] = (x[i * m + c] - s) / l[i * n + i];
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k * m + c]).sum();
            x[i * m + c] = (x[i * m + c] - s) / l[i * n + i];
        }
    }
    Ok(x)
}
