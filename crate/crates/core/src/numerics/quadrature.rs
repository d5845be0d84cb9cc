use alloc::vec::Vec;

use super::symmetric_eigen;
use crate::error::ensure;
use crate::Result;

/// Weight function a rule integrates against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightKind {
    UniformTrapezoid,
    Legendre,
    /// `(1 − x²)^(λ − 1/2)` on `[−1, 1]`.
    Gegenbauer(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub weight_kind: WeightKind,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ w_q f(x_q)`
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// `∫_{-1}^{1} (1 − x²)^(λ − 1/2) dx = √π Γ(λ + 1/2) / Γ(λ + 1)`.
pub fn gegenbauer_mu0(lambda: f64) -> f64 {
    let ln = libm::lgamma(lambda + 0.5) - libm::lgamma(lambda + 1.0);
    libm::sqrt(core::f64::consts::PI) * libm::exp(ln)
}

/// Gauss–Gegenbauer rule with `n` nodes (Golub–Welsch).
///
/// The Jacobi matrix of the orthonormal Gegenbauer polynomials has a zero
/// diagonal and off-diagonal entries `√β_k`,
/// `β_k = k (k + 2λ − 1) / (4 (k + λ)(k + λ − 1))`. Its eigenvalues are the
/// nodes; the weights are `μ₀ v₀²` with `v₀` the first eigenvector component.
pub fn gauss_gegenbauer_rule(n: usize, lambda: f64) -> Result<QuadratureRule> {
    ensure!(n >= 1, "quadrature needs at least one node");
    ensure!(lambda > 0.0 && lambda.is_finite(), "Gegenbauer parameter must be > 0, got {lambda}");
    golub_welsch(n, lambda, WeightKind::Gegenbauer(lambda))
}

/// Gauss–Legendre rule with `n` nodes (the `λ = 1/2` Gegenbauer rule).
pub fn gauss_legendre_rule(n: usize) -> Result<QuadratureRule> {
    ensure!(n >= 1, "quadrature needs at least one node");
    golub_welsch(n, 0.5, WeightKind::Legendre)
}

fn golub_welsch(n: usize, lambda: f64, weight_kind: WeightKind) -> Result<QuadratureRule> {
    let mut jacobi = alloc::vec![0.0; n * n];
    for k in 1..n {
        let kf = k as f64;
        let beta = kf * (kf + 2.0 * lambda - 1.0) / (4.0 * (kf + lambda) * (kf + lambda - 1.0));
        let b = libm::sqrt(beta);
        jacobi[(k - 1) * n + k] = b;
        jacobi[k * n + (k - 1)] = b;
    }
    let eig = symmetric_eigen(&jacobi, n)?;
    let mu0 = gegenbauer_mu0(lambda);
    let mut pairs: Vec<(f64, f64)> = eig
        .values
        .iter()
        .zip(&eig.vectors)
        .map(|(&x, v)| (x, mu0 * v[0] * v[0]))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetric weight: enforce exact antisymmetry of nodes and symmetry of weights.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    Ok(QuadratureRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
        weight_kind,
    })
}
