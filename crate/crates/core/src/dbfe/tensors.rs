//! Chaos moments of the interface speed and the flux, and the derivatives
//! assembled from them.
//!
//! With `a = max(|u_j|, |u_{j+1}|)` and `Δv = v_{j+1} − v_j`, the interface
//! flux of a sample is `½(f(u_j) + f(u_{j+1})) − ½ a (Δū + Σ_i Y_i Δu_i)`.
//! Its chaos moments only need the projections of `a`, `Y_i a` and
//! `Y_i Y_k a` together with those of the point fluxes `f(u_j)`. This route
//! is far more expensive than the sample-blocked one and is kept as an
//! independent check of it.

use alloc::vec::Vec;

use super::{apply_inverse, covariance, project_out_modes, reconstruct_sample, regularized_inverse, DbfeState, Derivatives};
use crate::burgers::{flux, local_speed};
use crate::chaos::GermEnsemble;
use crate::error::ensure;
use crate::Result;

/// Monte Carlo chaos projections `⟨v, ψ_p⟩ / ⟨ψ_p²⟩` needed by the flux.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxTensors {
    pub n: usize,
    pub p: usize,
    pub nx: usize,
    /// `â[j][p]` of the speed at interface `j + ½`, `(nx − 1) × P`.
    pub a_hat: Vec<f64>,
    /// `M[j][i][p]` of `Y_i a`, `(nx − 1) × N × P`.
    pub m: Vec<f64>,
    /// `T[j][i][k][p]` of `Y_i Y_k a`, `(nx − 1) × N × N × P`.
    pub t3: Vec<f64>,
    /// Projections of the point flux `f(u_j)`, `nx × P`.
    pub f_hat: Vec<f64>,
    /// `E[f(u_j) Y_k]`, `nx × N`.
    pub f_y: Vec<f64>,
    /// `E[Y_k]` over the ensemble.
    pub y_bar: Vec<f64>,
    /// `E[ψ_p] / ⟨ψ_p²⟩` over the ensemble.
    pub psi_bar: Vec<f64>,
}

impl FluxTensors {
    pub fn a_hat(&self, j: usize, p: usize) -> f64 {
        self.a_hat[j * self.p + p]
    }

    pub fn m(&self, j: usize, i: usize, p: usize) -> f64 {
        self.m[(j * self.n + i) * self.p + p]
    }

    pub fn t3(&self, j: usize, i: usize, k: usize, p: usize) -> f64 {
        self.t3[((j * self.n + i) * self.n + k) * self.p + p]
    }
}

pub fn flux_tensors(state: &DbfeState, germ: &GermEnsemble) -> Result<FluxTensors> {
    let (nx, n, p) = (state.grid.nx, state.n_modes(), state.n_chaos());
    ensure!(germ.dim() >= n, "germ dimension {} < {n} modes", germ.dim());
    let ni = nx - 1;
    let mut t = FluxTensors {
        n,
        p,
        nx,
        a_hat: alloc::vec![0.0; ni * p],
        m: alloc::vec![0.0; ni * n * p],
        t3: alloc::vec![0.0; ni * n * n * p],
        f_hat: alloc::vec![0.0; nx * p],
        f_y: alloc::vec![0.0; nx * n],
        y_bar: alloc::vec![0.0; n],
        psi_bar: alloc::vec![0.0; p],
    };
    let mut psi = alloc::vec![0.0; p];
    for xi in germ.iter() {
        state.basis.eval_all(xi, &mut psi);
        let y = state.stochastic_coefficients(xi)?;
        let u = reconstruct_sample(state, xi)?;
        for (b, v) in t.psi_bar.iter_mut().zip(&psi) {
            *b += v;
        }
        for (b, v) in t.y_bar.iter_mut().zip(&y) {
            *b += v;
        }
        for j in 0..nx {
            let fj = flux(u[j]);
            for q in 0..p {
                t.f_hat[j * p + q] += fj * psi[q];
            }
            for k in 0..n {
                t.f_y[j * n + k] += fj * y[k];
            }
        }
        for j in 0..ni {
            let a = local_speed(u[j], u[j + 1]);
            for q in 0..p {
                let ap = a * psi[q];
                t.a_hat[j * p + q] += ap;
                for i in 0..n {
                    t.m[(j * n + i) * p + q] += y[i] * ap;
                    for k in 0..n {
                        t.t3[((j * n + i) * n + k) * p + q] += y[i] * y[k] * ap;
                    }
                }
            }
        }
    }
    let count = germ.len() as f64;
    let scale_p = |v: &mut [f64]| {
        for (k, x) in v.iter_mut().enumerate() {
            *x /= count * state.basis.norm(k % p);
        }
    };
    scale_p(&mut t.a_hat);
    scale_p(&mut t.m);
    scale_p(&mut t.t3);
    scale_p(&mut t.f_hat);
    scale_p(&mut t.psi_bar);
    t.f_y.iter_mut().chain(t.y_bar.iter_mut()).for_each(|x| *x /= count);
    Ok(t)
}

/// Derivatives of every unknown from the flux moments, with the mode end
/// values held.
pub fn tensor_rhs(state: &DbfeState, tensors: &FluxTensors) -> Result<Derivatives> {
    let grid = state.grid;
    let (nx, n, p) = (grid.nx, state.n_modes(), state.n_chaos());
    ensure!(
        tensors.nx == nx && tensors.n == n && tensors.p == p,
        "flux tensors do not match the state dimensions"
    );
    let inv_dx = 1.0 / grid.dx;
    let jump = |v: &[f64], j: usize| v[j + 1] - v[j];
    let divergence = |flux_at: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut out = alloc::vec![0.0; nx];
        for j in 1..nx - 1 {
            out[j] = -(flux_at(j) - flux_at(j - 1)) * inv_dx;
        }
        out
    };

    // L projected on every ψ_q.
    let l_hat: Vec<Vec<f64>> = (0..p)
        .map(|q| {
            divergence(&|j| {
                let mut diss = tensors.a_hat(j, q) * jump(&state.mean, j);
                for i in 0..n {
                    diss += tensors.m(j, i, q) * jump(state.mode(i), j);
                }
                0.5 * (tensors.f_hat[j * p + q] + tensors.f_hat[(j + 1) * p + q]) - 0.5 * diss
            })
        })
        .collect();
    let mean = l_hat[0].clone();

    let mut f = alloc::vec![0.0; n * nx];
    for k in 0..n {
        let ly = divergence(&|j| {
            let mut diss = tensors.m(j, k, 0) * jump(&state.mean, j);
            for i in 0..n {
                diss += tensors.t3(j, i, k, 0) * jump(state.mode(i), j);
            }
            0.5 * (tensors.f_y[j * n + k] + tensors.f_y[(j + 1) * n + k]) - 0.5 * diss
        });
        for j in 0..nx {
            f[k * nx + j] = ly[j] - mean[j] * tensors.y_bar[k];
        }
    }
    let cinv = regularized_inverse(&covariance(state))?;
    let mut modes = alloc::vec![0.0; n * nx];
    apply_inverse(n, nx, &cinv, &f, &mut modes);
    project_out_modes(&grid, n, &state.modes, &mut modes)?;

    let mut coeffs = alloc::vec![0.0; n * p];
    for i in 0..n {
        let base = grid.inner_product_unchecked(&mean, state.mode(i));
        for q in 0..p {
            coeffs[i * p + q] = grid.inner_product_unchecked(&l_hat[q], state.mode(i)) - base * tensors.psi_bar[q];
        }
    }
    Ok(Derivatives { mean, modes, coeffs })
}

#[cfg(test)]
mod tests {
    use super::super::{DbfeOptions, DbfeSolver};
    use super::*;
    use crate::chaos::ChaosBasis;
    use crate::kernels::{InitialCondition, KernelSpec, ScalingMode};
    use crate::kle::solve_fredholm;
    use crate::numerics::Grid1D;

    fn state(nx: usize, n: usize, s: f64) -> DbfeState {
        let grid = Grid1D::new(-1.0, 1.0, nx).unwrap();
        let ic = InitialCondition {
            u_b: 0.0,
            x0: 0.0,
            s,
            kernel: KernelSpec::exponential(0.25, 1.0),
            scaling: ScalingMode::Fluctuation,
        };
        let kl = solve_fredholm(&ic.kernel, &grid, n).unwrap();
        DbfeState::initial(&kl, &ic, ChaosBasis::new(n, 2).unwrap()).unwrap()
    }

    #[test]
    fn deterministic_state_has_deterministic_speed() {
        let st = state(21, 2, 0.0);
        let germ = GermEnsemble::generate(2, 64, 3).unwrap();
        let t = flux_tensors(&st, &germ).unwrap();
        for j in 0..20 {
            let a = local_speed(st.mean[j], st.mean[j + 1]);
            assert!((t.a_hat(j, 0) - a).abs() < 1e-14);
            for i in 0..2 {
                for q in 0..t.p {
                    assert_eq!(t.m(j, i, q), 0.0);
                    for k in 0..2 {
                        assert_eq!(t.t3(j, i, k, q), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn speed_triple_moments_are_symmetric() {
        let st = state(21, 2, 0.3);
        let germ = GermEnsemble::generate(2, 200, 8).unwrap();
        let t = flux_tensors(&st, &germ).unwrap();
        for j in 0..20 {
            for q in 0..t.p {
                assert!((t.t3(j, 0, 1, q) - t.t3(j, 1, 0, q)).abs() <= 1e-14 * t.t3(j, 0, 0, 0).abs().max(1.0));
            }
        }
    }

    #[test]
    fn both_routes_agree() {
        let st = state(61, 3, 0.3);
        let germ = GermEnsemble::generate(3, 300, 21).unwrap();
        let via_tensors = tensor_rhs(&st, &flux_tensors(&st, &germ).unwrap()).unwrap();
        let mut solver = DbfeSolver::new(st, germ, DbfeOptions::default()).unwrap();
        let fused = solver.derivatives().unwrap();
        let close = |a: &[f64], b: &[f64]| {
            let scale = a.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
            a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * scale)
        };
        assert!(close(&via_tensors.mean, &fused.mean));
        assert!(close(&via_tensors.modes, &fused.modes));
        assert!(close(&via_tensors.coeffs, &fused.coeffs));
    }
}
