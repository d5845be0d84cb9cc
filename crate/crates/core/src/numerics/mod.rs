//! Shared numerical kernels: the solver grid, quadrature rules and small dense
//! linear algebra.

mod eigen;
mod grid;
mod linalg;
mod quadrature;

pub use eigen::{symmetric_eigen, SymmetricEigen};
pub use grid::{cubic_interpolate, Grid1D};
pub use linalg::solve_spd;
pub use quadrature::{gauss_gegenbauer_rule, gauss_legendre_rule, gegenbauer_mu0, QuadratureRule, WeightKind};

/// Sum of `values` by recursive pairwise splitting. The result depends only on
/// the order of `values`, never on how the caller chunked the work.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}
