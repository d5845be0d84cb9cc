//! Multivariate probabilists' Hermite chaos over a standard Gaussian germ.
//!
//! Basis functions are indexed from 0 in graded lexicographic order; index 0
//! is the constant `ψ = 1`, indices `1..=germ_dim` are the linear terms
//! `ξ_1 .. ξ_N`, followed by all degree-2 products, and so on.

use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::ensure;
use crate::Result;

/// `He_n(t)` by the recurrence `He_{n+1} = t He_n − n He_{n−1}`.
pub fn hermite(n: usize, t: f64) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..n {
        let next = t * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// `E[He_a He_b He_c]` for a standard normal variable.
///
/// Nonzero only when `a + b + c` is even and each index is at most the sum of
/// the other two; then it equals `a! b! c! / ((s−a)! (s−b)! (s−c)!)` with
/// `s = (a + b + c) / 2`.
pub fn hermite_triple(a: usize, b: usize, c: usize) -> f64 {
    let total = a + b + c;
    if total % 2 == 1 {
        return 0.0;
    }
    let s = total / 2;
    if a > s || b > s || c > s {
        return 0.0;
    }
    factorial(a) * factorial(b) * factorial(c) / (factorial(s - a) * factorial(s - b) * factorial(s - c))
}

/// Total-degree Hermite chaos basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosBasis {
    germ_dim: usize,
    order: usize,
    index_map: Vec<Vec<usize>>,
    norms: Vec<f64>,
}

impl ChaosBasis {
    pub fn new(germ_dim: usize, order: usize) -> Result<Self> {
        ensure!(germ_dim >= 1, "chaos basis needs at least one germ dimension");
        let mut index_map = Vec::new();
        for degree in 0..=order {
            let mut current = alloc::vec![0; germ_dim];
            push_graded(&mut index_map, &mut current, 0, degree);
        }
        let norms = index_map
            .iter()
            .map(|m| m.iter().map(|&k| factorial(k)).product())
            .collect();
        Ok(Self {
            germ_dim,
            order,
            index_map,
            norms,
        })
    }

    pub fn germ_dim(&self) -> usize {
        self.germ_dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions, `(N + order)! / (N! order!)`.
    pub fn len(&self) -> usize {
        self.index_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_map.is_empty()
    }

    pub fn multi_index(&self, p: usize) -> &[usize] {
        &self.index_map[p]
    }

    pub fn index_map(&self) -> &[Vec<usize>] {
        &self.index_map
    }

    /// `⟨ψ_p²⟩ = Π_d m_d!`
    pub fn norm(&self, p: usize) -> f64 {
        self.norms[p]
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Index of the degree-1 polynomial in germ dimension `dim`.
    pub fn linear_index(&self, dim: usize) -> usize {
        debug_assert!(dim < self.germ_dim);
        1 + dim
    }

    /// Position of a multi-index in the basis, if present.
    pub fn position(&self, multi: &[usize]) -> Option<usize> {
        self.index_map.iter().position(|m| m == multi)
    }

    /// `ψ_p(ξ)`.
    pub fn eval(&self, p: usize, xi: &[f64]) -> Result<f64> {
        ensure!(p < self.len(), "chaos index {p} out of range (P = {})", self.len());
        ensure!(
            xi.len() == self.germ_dim,
            "germ has dimension {}, basis expects {}",
            xi.len(),
            self.germ_dim
        );
        Ok(self.index_map[p]
            .iter()
            .zip(xi)
            .map(|(&m, &t)| hermite(m, t))
            .product())
    }

    /// All `ψ_p(ξ)` for one germ realization; `xi` may be longer than
    /// `germ_dim`, in which case only the leading coordinates are used.
    pub fn eval_all(&self, xi: &[f64], out: &mut [f64]) {
        debug_assert!(xi.len() >= self.germ_dim && out.len() == self.len());
        let o = self.order;
        let mut he = alloc::vec![0.0; self.germ_dim * (o + 1)];
        for (d, &t) in xi.iter().take(self.germ_dim).enumerate() {
            let row = &mut he[d * (o + 1)..(d + 1) * (o + 1)];
            row[0] = 1.0;
            if o >= 1 {
                row[1] = t;
            }
            for k in 1..o {
                row[k + 1] = t * row[k] - k as f64 * row[k - 1];
            }
        }
        for (slot, m) in out.iter_mut().zip(&self.index_map) {
            *slot = m
                .iter()
                .enumerate()
                .map(|(d, &k)| he[d * (o + 1) + k])
                .product();
        }
    }

    /// `S × P` table of basis values over an ensemble, row-major by sample.
    pub fn eval_table(&self, germ: &GermEnsemble) -> Vec<f64> {
        let p = self.len();
        let mut table = alloc::vec![0.0; germ.len() * p];
        for (s, row) in table.chunks_exact_mut(p).enumerate() {
            self.eval_all(germ.sample(s), row);
        }
        table
    }
}

fn push_graded(out: &mut Vec<Vec<usize>>, current: &mut [usize], dim: usize, remaining: usize) {
    if dim == current.len() - 1 {
        current[dim] = remaining;
        out.push(current.to_vec());
        current[dim] = 0;
        return;
    }
    for k in (0..=remaining).rev() {
        current[dim] = k;
        push_graded(out, current, dim + 1, remaining - k);
    }
    current[dim] = 0;
}

/// An ensemble of i.i.d. `N(0, I)` germ realizations.
///
/// Sample `id` is drawn from its own ChaCha8 stream keyed by `(seed, id)`, so
/// any subset of samples can be regenerated independently of the others.
#[derive(Debug, Clone, PartialEq)]
pub struct GermEnsemble {
    dim: usize,
    seed: u64,
    values: Vec<f64>,
}

impl GermEnsemble {
    pub fn generate(dim: usize, count: usize, seed: u64) -> Result<Self> {
        ensure!(count >= 1, "germ ensemble needs at least one sample");
        ensure!(dim >= 1, "germ dimension must be at least 1");
        let mut values = Vec::with_capacity(dim * count);
        for id in 0..count {
            values.extend(draw_germ(dim, seed, id as u64));
        }
        Ok(Self { dim, seed, values })
    }

    /// Wraps explicit realizations (row-major, `dim` values per sample).
    pub fn from_values(dim: usize, seed: u64, values: Vec<f64>) -> Result<Self> {
        ensure!(dim >= 1, "germ dimension must be at least 1");
        ensure!(
            !values.is_empty() && values.len().is_multiple_of(dim),
            "germ values ({}) are not a positive multiple of dim {dim}",
            values.len()
        );
        Ok(Self { dim, seed, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sample(&self, id: usize) -> &[f64] {
        &self.values[id * self.dim..(id + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// The same samples restricted to their first `dim` coordinates.
    pub fn truncated(&self, dim: usize) -> Result<Self> {
        ensure!(
            (1..=self.dim).contains(&dim),
            "cannot truncate a {}-dimensional germ to {dim}",
            self.dim
        );
        let values = self.iter().flat_map(|xi| xi[..dim].iter().copied()).collect();
        Ok(Self {
            dim,
            seed: self.seed,
            values,
        })
    }
}

/// Germ realization `id` of the stream family `seed`.
pub fn draw_germ(dim: usize, seed: u64, id: u64) -> impl Iterator<Item = f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    (0..dim).map(move |_| StandardNormal.sample(&mut rng))
}

/// Monte Carlo estimate of `⟨v, ψ_p⟩ / ⟨ψ_p²⟩`.
pub fn stochastic_project(values: &[f64], basis: &ChaosBasis, p: usize, germ: &GermEnsemble) -> Result<f64> {
    ensure!(!germ.is_empty(), "projection needs a non-empty ensemble");
    ensure!(
        values.len() == germ.len(),
        "{} values for {} germ samples",
        values.len(),
        germ.len()
    );
    ensure!(p < basis.len(), "chaos index {p} out of range (P = {})", basis.len());
    ensure!(germ.dim() >= basis.germ_dim(), "germ dimension {} < basis dimension {}", germ.dim(), basis.germ_dim());
    let mut psi = alloc::vec![0.0; basis.len()];
    let terms: Vec<f64> = values
        .iter()
        .zip(germ.iter())
        .map(|(&v, xi)| {
            basis.eval_all(xi, &mut psi);
            v * psi[p]
        })
        .collect();
    Ok(crate::numerics::pairwise_sum(&terms) / (germ.len() as f64 * basis.norm(p)))
}

/// All `P` chaos coefficients of per-sample values, using the centred
/// estimator: the constant coefficient is the sample mean and the others
/// project the mean-removed values. Constants are therefore reproduced
/// exactly for any ensemble.
pub fn project_centered(values: &[f64], basis: &ChaosBasis, psi_table: &[f64]) -> Vec<f64> {
    let p_len = basis.len();
    let s = values.len();
    debug_assert_eq!(psi_table.len(), s * p_len);
    let mean = crate::numerics::pairwise_sum(values) / s as f64;
    let mut coeffs = alloc::vec![0.0; p_len];
    coeffs[0] = mean;
    let mut terms = alloc::vec![0.0; s];
    for (p, c) in coeffs.iter_mut().enumerate().skip(1) {
        for (k, t) in terms.iter_mut().enumerate() {
            *t = (values[k] - mean) * psi_table[k * p_len + p];
        }
        *c = crate::numerics::pairwise_sum(&terms) / (s as f64 * basis.norm(p));
    }
    coeffs
}
