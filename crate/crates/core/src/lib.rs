//! Uncertainty propagation for one-dimensional scalar conservation laws with
//! shocks.
//!
//! The crate evolves a random field `u(x, t; ξ)` driven by a Gaussian germ `ξ`
//! in its dynamically bi-orthogonal form
//!
//! ```text
//! u(x, t; ξ) = ū(x, t) + Σ_i Σ_p Y[i][p](t) ψ_p(ξ) u_i(x, t)
//! ```
//!
//! where the spatial modes `u_i` stay orthonormal through the dynamic
//! orthogonality constraint and the stochastic coefficients live in a Hermite
//! chaos. Samples reconstructed from that expansion oscillate near shocks; the
//! [`gegenbauer`] module reprojects each sample onto Gegenbauer polynomials
//! on the smooth sides of the shock to remove those oscillations.
//!
//! Monte Carlo ([`mc`]) and intrusive Galerkin chaos ([`gpc`]) propagators are
//! provided as baselines, and [`stats`] holds the ensemble moments and the
//! windowed relative L1 error used to compare them.
//!
//! Everything here is pure computation on `alloc` containers; file formats,
//! threading and the command line live in the `dbfe-uq` crate.

#![no_std]
#![forbid(unsafe_code)]
// Grid loops index several arrays at once, and `!(x > 0.0)` style checks are
// deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod error;

pub mod burgers;
pub mod chaos;
pub mod dbfe;
pub mod gegenbauer;
pub mod gpc;
pub mod kernels;
pub mod kle;
pub mod mc;
pub mod numerics;
pub mod stats;

pub use error::{Error, Result};
