//! Owen-scrambled Sobol points mapped to standard normal germs.
//!
//! Used for the DBFE integration ensemble, where every stochastic inner
//! product is a sample mean over the same fixed point set. A scrambled
//! low-discrepancy set reaches a given quadrature error with far fewer
//! points than i.i.d. draws.

use anyhow::{ensure, Result};
use dbfe_core::chaos::GermEnsemble;
use statrs::distribution::{ContinuousCDF, Normal};

/// Primitive polynomials (with both end bits set) and initial direction
/// numbers of the Joe-Kuo table for dimensions 2 onwards. Dimension 1 is the
/// van der Corput sequence.
const DIRECTIONS: [(u32, &[u32]); 31] = [
    (3, &[1]),
    (7, &[1, 3]),
    (11, &[1, 3, 1]),
    (13, &[1, 1, 1]),
    (19, &[1, 1, 3, 3]),
    (25, &[1, 3, 5, 13]),
    (37, &[1, 1, 5, 5, 17]),
    (41, &[1, 1, 5, 5, 5]),
    (47, &[1, 1, 7, 11, 19]),
    (55, &[1, 1, 5, 1, 1]),
    (59, &[1, 1, 1, 3, 11]),
    (61, &[1, 3, 5, 5, 31]),
    (67, &[1, 3, 3, 9, 7, 49]),
    (91, &[1, 1, 1, 15, 21, 21]),
    (97, &[1, 3, 1, 13, 27, 49]),
    (103, &[1, 1, 1, 15, 7, 5]),
    (109, &[1, 3, 1, 15, 13, 25]),
    (115, &[1, 1, 5, 5, 19, 61]),
    (131, &[1, 3, 7, 11, 23, 15, 103]),
    (137, &[1, 3, 7, 13, 13, 15, 69]),
    (143, &[1, 1, 3, 13, 7, 35, 63]),
    (145, &[1, 3, 5, 9, 1, 25, 53]),
    (157, &[1, 3, 1, 13, 9, 35, 107]),
    (167, &[1, 3, 1, 5, 27, 61, 31]),
    (171, &[1, 1, 5, 11, 19, 41, 61]),
    (185, &[1, 3, 5, 3, 3, 13, 69]),
    (191, &[1, 1, 7, 13, 1, 19, 1]),
    (193, &[1, 3, 7, 5, 13, 19, 59]),
    (203, &[1, 1, 3, 9, 25, 29, 41]),
    (211, &[1, 3, 5, 13, 23, 1, 55]),
    (213, &[1, 3, 7, 3, 13, 59, 17]),
];

pub const MAX_DIM: usize = DIRECTIONS.len() + 1;

const BITS: usize = 32;

/// Direction integers `v[k]` of one dimension, left-aligned in 32 bits.
fn direction_integers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (poly, init) = DIRECTIONS[dim - 1];
    let s = init.len();
    for k in 0..s {
        v[k] = init[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (poly >> (s - j)) & 1 == 1 {
                x ^= v[k - j];
            }
        }
        v[k] = x;
    }
    v
}

fn mix(mut x: u32, seed: u32) -> u32 {
    x = x.wrapping_add(seed);
    x ^= x.wrapping_mul(0x6c50_b47c);
    x ^= x.wrapping_mul(0xb82f_1e52);
    x ^= x.wrapping_mul(0xc7af_e638);
    x ^= x.wrapping_mul(0x8d22_f6e6);
    x
}

/// Nested uniform (Owen) scramble of a 32-bit fraction: every bit is flipped
/// depending only on the bits above it.
fn owen_scramble(x: u32, seed: u32) -> u32 {
    mix(x.reverse_bits(), seed).reverse_bits()
}

fn dim_seed(seed: u64, dim: usize) -> u32 {
    let lo = mix(seed as u32, 0x9e37_79b9 ^ dim as u32);
    mix((seed >> 32) as u32 ^ lo, dim as u32)
}

/// The first `count` Sobol points in Gray code order as 32-bit fractions,
/// row-major. Any power-of-two prefix is the same set as in natural order.
fn sobol_bits(dims: usize, count: usize) -> Result<Vec<u32>> {
    ensure!((1..=MAX_DIM).contains(&dims), "Sobol points support 1..={MAX_DIM} dimensions, got {dims}");
    ensure!(count >= 1, "need at least one point");
    ensure!(count <= u32::MAX as usize, "at most 2^32 - 1 Sobol points, got {count}");
    let dirs: Vec<[u32; BITS]> = (0..dims).map(direction_integers).collect();
    let mut out = Vec::with_capacity(dims * count);
    let mut point = vec![0u32; dims];
    for i in 0..count as u32 {
        if i > 0 {
            let k = i.trailing_zeros() as usize;
            for (p, v) in point.iter_mut().zip(&dirs) {
                *p ^= v[k];
            }
        }
        out.extend_from_slice(&point);
    }
    Ok(out)
}

/// `count` scrambled points in `(0, 1)^dims`, row-major. Cell midpoints of
/// the 32-bit grid are used so no coordinate is exactly 0 or 1.
pub fn scrambled_uniforms(dims: usize, count: usize, seed: u64) -> Result<Vec<f64>> {
    let seeds: Vec<u32> = (0..dims).map(|d| dim_seed(seed, d)).collect();
    let scale = 1.0 / (1u64 << BITS) as f64;
    let bits = sobol_bits(dims, count)?;
    Ok(bits
        .chunks_exact(dims)
        .flat_map(|p| p.iter().zip(&seeds).map(move |(&x, &s)| (owen_scramble(x, s) as f64 + 0.5) * scale))
        .collect())
}

/// Scrambled Sobol germ ensemble pushed through the inverse normal CDF.
pub fn sobol_germ(dims: usize, count: usize, seed: u64) -> Result<GermEnsemble> {
    let normal = Normal::standard();
    let values = scrambled_uniforms(dims, count, seed)?.into_iter().map(|u| normal.inverse_cdf(u)).collect();
    Ok(GermEnsemble::from_values(dims, seed, values)?)
}
