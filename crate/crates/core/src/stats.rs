//! Pointwise ensemble statistics and the windowed relative L1 error.

use alloc::vec::Vec;

use crate::error::ensure;
use crate::mc::Ensemble;
use crate::numerics::pairwise_sum;
use crate::Result;

/// Pointwise moments of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    /// Unbiased sample variance.
    pub variance: Vec<f64>,
    /// `m3 / m2^{3/2}` with central moments about the sample mean.
    pub skewness: Vec<f64>,
    /// `m4 / m2²` (3 for a Gaussian).
    pub kurtosis: Vec<f64>,
    /// Points where all samples agree; variance, skewness and kurtosis are
    /// reported as 0 there.
    pub degenerate: Vec<bool>,
}

/// Moments and a central confidence band.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub moments: Moments,
    pub level: f64,
    pub conf_lo: Vec<f64>,
    pub conf_hi: Vec<f64>,
}

impl EnsembleStats {
    pub fn compute(e: &Ensemble, level: f64) -> Result<Self> {
        let moments = moments(e)?;
        let (conf_lo, conf_hi) = confidence_bound(e, level)?;
        Ok(Self {
            moments,
            level,
            conf_lo,
            conf_hi,
        })
    }
}

fn column(e: &Ensemble, j: usize, out: &mut Vec<f64>) {
    out.clear();
    out.extend(e.rows().map(|r| r[j]));
}

pub fn moments(e: &Ensemble) -> Result<Moments> {
    let s = e.len();
    ensure!(s >= 4, "moments need at least 4 samples, got {s}");
    let nx = e.grid.nx;
    let mut m = Moments {
        mean: alloc::vec![0.0; nx],
        variance: alloc::vec![0.0; nx],
        skewness: alloc::vec![0.0; nx],
        kurtosis: alloc::vec![0.0; nx],
        degenerate: alloc::vec![false; nx],
    };
    let mut col = Vec::with_capacity(s);
    let mut dev = alloc::vec![0.0; s];
    for j in 0..nx {
        column(e, j, &mut col);
        let mean = pairwise_sum(&col) / s as f64;
        m.mean[j] = mean;
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            m.degenerate[j] = true;
            continue;
        }
        let mut central = [0.0; 3];
        for (k, pow) in central.iter_mut().enumerate() {
            for (d, &v) in dev.iter_mut().zip(&col) {
                let e = v - mean;
                *d = (0..k).fold(e * e, |acc, _| acc * e);
            }
            *pow = pairwise_sum(&dev) / s as f64;
        }
        let [m2, m3, m4] = central;
        m.variance[j] = m2 * s as f64 / (s - 1) as f64;
        m.skewness[j] = m3 / (m2 * libm::sqrt(m2));
        m.kurtosis[j] = m4 / (m2 * m2);
    }
    Ok(m)
}

/// Empirical quantile with linear interpolation between order statistics
/// (`h = (S − 1) p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise quantiles at `(1 − q) / 2` and `(1 + q) / 2`.
pub fn confidence_bound(e: &Ensemble, q: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure!(q > 0.0 && q < 1.0, "confidence level must lie in (0, 1), got {q}");
    ensure!(!e.is_empty(), "confidence bound of an empty ensemble");
    let nx = e.grid.nx;
    let (mut lo, mut hi) = (alloc::vec![0.0; nx], alloc::vec![0.0; nx]);
    let mut col = Vec::with_capacity(e.len());
    for j in 0..nx {
        column(e, j, &mut col);
        col.sort_by(f64::total_cmp);
        lo[j] = quantile(&col, 0.5 * (1.0 - q));
        hi[j] = quantile(&col, 0.5 * (1.0 + q));
    }
    Ok((lo, hi))
}

/// Relative L1 error over a window of `window` cells on each side of every
/// grid point (clipped at the ends):
///
/// ```text
/// e(x_j) = E[∫_W |u_ref − u|] / E[∫_W |u_ref|]
/// ```
///
/// `None` marks points where the reference vanishes on the whole window.
pub fn l1_error(reference: &Ensemble, approx: &Ensemble, window: usize) -> Result<Vec<Option<f64>>> {
    ensure!(window >= 1, "L1 window must span at least one cell");
    ensure!(reference.grid == approx.grid, "ensembles live on different grids");
    ensure!(
        reference.germ == approx.germ,
        "ensembles are not aligned on the same germ samples (seeds {} and {}, sizes {} and {})",
        reference.germ.seed(),
        approx.germ.seed(),
        reference.len(),
        approx.len()
    );
    let grid = reference.grid;
    let nx = grid.nx;
    let s = reference.len();
    let mut num = alloc::vec![0.0; nx];
    let mut den = alloc::vec![0.0; nx];
    let mut diff = alloc::vec![0.0; nx];
    let mut abs_ref = alloc::vec![0.0; nx];
    for (r, a) in reference.rows().zip(approx.rows()) {
        for j in 0..nx {
            diff[j] = (r[j] - a[j]).abs();
            abs_ref[j] = r[j].abs();
        }
        for j in 0..nx {
            let lo = j.saturating_sub(window);
            let hi = (j + window).min(nx - 1);
            num[j] += trapezoid(&diff[lo..=hi], grid.dx);
            den[j] += trapezoid(&abs_ref[lo..=hi], grid.dx);
        }
    }
    Ok(num
        .iter()
        .zip(&den)
        .map(|(n, d)| if *d > 0.0 { Some((n / s as f64) / (d / s as f64)) } else { None })
        .collect())
}

fn trapezoid(v: &[f64], dx: f64) -> f64 {
    let inner: f64 = v.iter().sum();
    dx * (inner - 0.5 * (v[0] + v[v.len() - 1]))
}
