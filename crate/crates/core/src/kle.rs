//! Karhunen–Loève decomposition of the initial covariance operator.

use alloc::vec::Vec;

use crate::chaos::{ChaosBasis, GermEnsemble};
use crate::error::ensure;
use crate::kernels::{InitialCondition, KernelSpec};
use crate::numerics::{symmetric_eigen, Grid1D};
use crate::{Error, Result};

/// Leading eigenpairs of the covariance operator on the solver grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KlDecomposition {
    pub grid: Grid1D,
    /// Descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// `eigenfunctions[i]` sampled on the grid, unit norm in the trapezoid
    /// inner product and positive at `x_min` (or at its first nonzero value).
    pub eigenfunctions: Vec<Vec<f64>>,
    /// The full discrete spectrum, descending.
    pub spectrum: Vec<f64>,
}

impl KlDecomposition {
    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// The same decomposition with only the leading `n` modes.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        ensure!(n <= self.n_modes(), "cannot keep {n} of {} modes", self.n_modes());
        Ok(Self {
            grid: self.grid,
            eigenvalues: self.eigenvalues[..n].to_vec(),
            eigenfunctions: self.eigenfunctions[..n].to_vec(),
            spectrum: self.spectrum.clone(),
        })
    }
}

/// Nyström solution of `∫ C(x1, x2) u(x1) dx1 = λ u(x2)` with trapezoid
/// weights `W`: the symmetric problem `W^½ K W^½ z = λ z` is solved and
/// `u = W^{-½} z`.
pub fn solve_fredholm(kernel: &KernelSpec, grid: &Grid1D, n_modes: usize) -> Result<KlDecomposition> {
    kernel.validate()?;
    let nx = grid.nx;
    ensure!(n_modes <= nx, "requested {n_modes} modes on a grid of {nx} points");
    let xs = grid.points();
    let sqrt_w: Vec<f64> = grid.trapezoid_weights().iter().map(|&w| libm::sqrt(w)).collect();
    let mut a = alloc::vec![0.0; nx * nx];
    for i in 0..nx {
        for j in i..nx {
            let v = sqrt_w[i] * kernel.eval(xs[i], xs[j]) * sqrt_w[j];
            a[i * nx + j] = v;
            a[j * nx + i] = v;
        }
    }
    let eig = symmetric_eigen(&a, nx)?;
    let largest = eig.values[0].max(0.0);
    if let Some(&worst) = eig.values.last() {
        if worst < -1e-10 * largest {
            return Err(Error::KernelNotPsd {
                eigenvalue: worst,
                largest,
            });
        }
    }
    let spectrum: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
    let eigenfunctions = eig
        .vectors
        .iter()
        .take(n_modes)
        .map(|z| {
            let mut u: Vec<f64> = z.iter().zip(&sqrt_w).map(|(zi, wi)| zi / wi).collect();
            fix_sign(&mut u);
            u
        })
        .collect();
    Ok(KlDecomposition {
        grid: *grid,
        eigenvalues: spectrum[..n_modes].to_vec(),
        eigenfunctions,
        spectrum,
    })
}

fn fix_sign(u: &mut [f64]) {
    let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pivot = u.iter().copied().find(|v| v.abs() > 1e-12 * scale).unwrap_or(0.0);
    if pivot < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
}

/// How the initial chaos coefficients are obtained.
#[derive(Debug, Clone, Copy)]
pub enum CoefficientInit<'a> {
    /// Gaussian field: `Y_i = √λ_i ξ_i`.
    Gaussian,
    /// Monte Carlo projection of sampled fields onto the modes and the chaos.
    Projected {
        mean: &'a [f64],
        /// Row-major `S × nx` field samples aligned with `germ`.
        fields: &'a [f64],
        germ: &'a GermEnsemble,
    },
}

/// Initial coefficient matrix `Y[i][p]` (`N × P`, row-major).
pub fn initial_coefficients(kl: &KlDecomposition, basis: &ChaosBasis, init: CoefficientInit<'_>) -> Result<Vec<f64>> {
    let n = kl.n_modes();
    let p_len = basis.len();
    ensure!(
        basis.germ_dim() == n,
        "basis germ dimension {} does not match {} KL modes",
        basis.germ_dim(),
        n
    );
    let mut y = alloc::vec![0.0; n * p_len];
    match init {
        CoefficientInit::Gaussian => {
            if basis.order() >= 1 {
                for i in 0..n {
                    y[i * p_len + basis.linear_index(i)] = libm::sqrt(kl.eigenvalues[i]);
                }
            }
        }
        CoefficientInit::Projected { mean, fields, germ } => {
            let nx = kl.grid.nx;
            ensure!(!fields.is_empty(), "projected initialization needs field samples");
            ensure!(mean.len() == nx, "mean field has length {} != nx {nx}", mean.len());
            ensure!(
                fields.len() == germ.len() * nx,
                "{} field values do not match {} samples of {nx} points",
                fields.len(),
                germ.len()
            );
            let table = basis.eval_table(germ);
            let mut fluct = alloc::vec![0.0; nx];
            let mut proj = alloc::vec![0.0; germ.len() * n];
            for (s, row) in fields.chunks_exact(nx).enumerate() {
                for (f, (v, m)) in fluct.iter_mut().zip(row.iter().zip(mean)) {
                    *f = v - m;
                }
                for i in 0..n {
                    proj[s * n + i] = kl.grid.inner_product_unchecked(&fluct, &kl.eigenfunctions[i]);
                }
            }
            let count = germ.len() as f64;
            for i in 0..n {
                for p in 0..p_len {
                    let sum: f64 = (0..germ.len()).map(|s| proj[s * n + i] * table[s * p_len + p]).sum();
                    y[i * p_len + p] = sum / (count * basis.norm(p));
                }
            }
        }
    }
    Ok(y)
}

/// Initial field for one germ realization: `ū(x) + s Σ_i √λ_i ξ_i u_i(x)`.
pub fn sample_initial_field(kl: &KlDecomposition, ic: &InitialCondition, xi: &[f64]) -> Result<Vec<f64>> {
    ensure!(
        xi.len() == kl.n_modes(),
        "germ dimension {} != {} KL modes",
        xi.len(),
        kl.n_modes()
    );
    let grid = &kl.grid;
    let mut u: Vec<f64> = (0..grid.nx).map(|j| ic.mean_initial(grid.x(j))).collect();
    for ((lambda, mode), &x) in kl.eigenvalues.iter().zip(&kl.eigenfunctions).zip(xi) {
        let amp = ic.s * libm::sqrt(*lambda) * x;
        for (v, m) in u.iter_mut().zip(mode) {
            *v += amp * m;
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelKind, ScalingMode};
    use approx::assert_abs_diff_eq;

    fn grid() -> Grid1D {
        Grid1D::new(-1.0, 1.0, 201).unwrap()
    }

    fn ic() -> InitialCondition {
        InitialCondition {
            u_b: 0.0,
            x0: 0.0,
            s: 0.1,
            kernel: KernelSpec::exponential(0.25, 1.0),
            scaling: ScalingMode::Fluctuation,
        }
    }

    #[test]
    fn constant_kernel_is_rank_one() {
        // exp(−λc|d|) with tiny λc is numerically the constant kernel 0.3.
        let k = KernelSpec::exponential(0.3, 1e-14);
        let kl = solve_fredholm(&k, &grid(), 3).unwrap();
        assert_abs_diff_eq!(kl.eigenvalues[0], 0.6, epsilon = 1e-10);
        assert!(kl.eigenvalues[1] < 1e-10 && kl.eigenvalues[2] < 1e-10);
        for &v in &kl.eigenfunctions[0] {
            assert_abs_diff_eq!(v, core::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-8);
        }
    }

    #[test]
    fn exponential_kernel_spectrum() {
        let g = grid();
        let kl = solve_fredholm(&KernelSpec::exponential(0.25, 1.0), &g, 201).unwrap();
        let l = &kl.eigenvalues;
        assert!(l[0] > l[1] && l[1] > l[2]);
        assert!(l.windows(2).all(|w| w[0] >= w[1]));
        let trace: f64 = l.iter().sum();
        assert!((trace - 0.5).abs() <= 0.02 * 0.5, "trace {trace}");
        for i in 0..6 {
            for j in 0..6 {
                let ip = g.inner_product(&kl.eigenfunctions[i], &kl.eigenfunctions[j]).unwrap();
                assert_abs_diff_eq!(ip, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-8);
            }
            assert!(kl.eigenfunctions[i][0] > 0.0);
        }
    }

    #[test]
    fn decomposition_is_deterministic() {
        let k = KernelSpec::new(KernelKind::SquaredExponential, 0.1, 1.0).unwrap();
        let a = solve_fredholm(&k, &grid(), 4).unwrap();
        let b = solve_fredholm(&k, &grid(), 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_psd_kernel_rejected() {
        // (1 − t|d|) e^{−|d|} with t = 3 has a negative spectral density.
        let k = KernelSpec {
            kind: KernelKind::Triangular,
            sigma2: 1.0,
            corr_len: 3.0,
        };
        assert!(matches!(solve_fredholm(&k, &grid(), 3), Err(Error::KernelNotPsd { .. })));
    }

    #[test]
    fn gaussian_coefficients() {
        let g = grid();
        let kl = KlDecomposition {
            grid: g,
            eigenvalues: alloc::vec![1.0, 0.25, 0.04],
            eigenfunctions: alloc::vec![alloc::vec![0.0; g.nx]; 3],
            spectrum: alloc::vec![1.0, 0.25, 0.04],
        };
        let basis = ChaosBasis::new(3, 3).unwrap();
        let y = initial_coefficients(&kl, &basis, CoefficientInit::Gaussian).unwrap();
        let p = basis.len();
        let nonzero: Vec<(usize, usize, f64)> = (0..3)
            .flat_map(|i| (0..p).map(move |q| (i, q)))
            .filter(|&(i, q)| y[i * p + q] != 0.0)
            .map(|(i, q)| (i, q, y[i * p + q]))
            .collect();
        assert_eq!(nonzero, [(0, 1, 1.0), (1, 2, 0.5), (2, 3, 0.2)]);
        for i in 0..3 {
            let var: f64 = (1..p).map(|q| y[i * p + q] * y[i * p + q] * basis.norm(q)).sum();
            assert_abs_diff_eq!(var, kl.eigenvalues[i], epsilon = 1e-15);
        }

        let zero = KlDecomposition {
            eigenvalues: alloc::vec![0.0; 3],
            ..kl.clone()
        };
        let y = initial_coefficients(&zero, &basis, CoefficientInit::Gaussian).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));

        let wrong = ChaosBasis::new(2, 3).unwrap();
        assert!(initial_coefficients(&kl, &wrong, CoefficientInit::Gaussian).is_err());
    }

    #[test]
    fn projected_coefficients_recover_gaussian_ones() {
        let g = Grid1D::new(-1.0, 1.0, 41).unwrap();
        let kl = solve_fredholm(&KernelSpec::exponential(0.25, 1.0), &g, 2).unwrap();
        let basis = ChaosBasis::new(2, 2).unwrap();
        let germ = GermEnsemble::generate(2, 4000, 3).unwrap();
        let c = InitialCondition { s: 1.0, ..ic() };
        let mean: Vec<f64> = (0..g.nx).map(|j| c.mean_initial(g.x(j))).collect();
        let fields: Vec<f64> = germ.iter().flat_map(|xi| sample_initial_field(&kl, &c, xi).unwrap()).collect();
        let y = initial_coefficients(&kl, &basis, CoefficientInit::Projected { mean: &mean, fields: &fields, germ: &germ })
            .unwrap();
        let exact = initial_coefficients(&kl, &basis, CoefficientInit::Gaussian).unwrap();
        for (a, b) in y.iter().zip(&exact) {
            assert_abs_diff_eq!(a, b, epsilon = 0.05);
        }
        let err = initial_coefficients(
            &kl,
            &basis,
            CoefficientInit::Projected { mean: &mean, fields: &[], germ: &germ },
        );
        assert!(err.is_err());
    }

    #[test]
    fn initial_field_samples() {
        let g = grid();
        let kl = solve_fredholm(&KernelSpec::exponential(0.25, 1.0), &g, 3).unwrap();
        let c = ic();
        let mean: Vec<f64> = (0..g.nx).map(|j| c.mean_initial(g.x(j))).collect();
        assert_eq!(sample_initial_field(&kl, &c, &[0.0; 3]).unwrap(), mean);
        let xi = [0.3, -1.2, 2.0];
        let neg = [-0.3, 1.2, -2.0];
        let a = sample_initial_field(&kl, &c, &xi).unwrap();
        let b = sample_initial_field(&kl, &c, &neg).unwrap();
        for j in 0..g.nx {
            assert_abs_diff_eq!(0.5 * (a[j] + b[j]), mean[j], epsilon = 1e-15);
        }
        assert!(sample_initial_field(&kl, &c, &[0.0; 2]).is_err());
    }

    #[test]
    fn initial_field_variance_matches_kl() {
        let g = grid();
        let kl = solve_fredholm(&KernelSpec::exponential(0.25, 1.0), &g, 3).unwrap();
        let c = ic();
        let germ = GermEnsemble::generate(3, 10_000, 17).unwrap();
        let fields: Vec<Vec<f64>> = germ.iter().map(|xi| sample_initial_field(&kl, &c, xi).unwrap()).collect();
        for j in (0..g.nx).step_by(20) {
            let vals: Vec<f64> = fields.iter().map(|f| f[j]).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64;
            let exact: f64 = (0..3)
                .map(|i| c.s * c.s * kl.eigenvalues[i] * kl.eigenfunctions[i][j] * kl.eigenfunctions[i][j])
                .sum();
            // Sample variance has relative std √(2/(S−1)).
            let sd = exact * (2.0 / 9999.0f64).sqrt();
            assert!((var - exact).abs() <= 3.0 * sd + 1e-15, "j={j}: {var} vs {exact}");
        }
    }
}
