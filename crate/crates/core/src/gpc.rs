//! Intrusive Galerkin chaos baseline.
//!
//! The field is expanded as `u = Σ_p û_p(x, t) ψ_p(ξ)` and the Burgers
//! operator is projected onto every `ψ_k`. The point flux `u²/2` projects
//! exactly through the Hermite triple products. The dissipative part of the
//! interface flux uses one deterministic speed per interface,
//!
//! ```text
//! a_{j+½} = max over j, j+1 of  √(û_0² + Var u) + 2 √(Var u)
//! ```
//!
//! which bounds `E|u| + 2 std(u)` (since `E|u| ≤ √E[u²]`) and reduces to the
//! deterministic `max(|u_j|, |u_{j+1}|)` when the variance is zero.

use alloc::vec::Vec;

use crate::burgers::{first_non_finite, time_steps};
use crate::chaos::{hermite_triple, ChaosBasis, GermEnsemble};
use crate::error::ensure;
use crate::kernels::InitialCondition;
use crate::kle::{initial_coefficients, CoefficientInit, KlDecomposition};
use crate::numerics::Grid1D;
use crate::{Error, Result};

/// `E[ψ_a ψ_b ψ_c]`, the product of the one-dimensional Hermite factors.
pub fn triple_product(basis: &ChaosBasis, a: usize, b: usize, c: usize) -> f64 {
    let (ia, ib, ic) = (basis.multi_index(a), basis.multi_index(b), basis.multi_index(c));
    let mut v = 1.0;
    for d in 0..basis.germ_dim() {
        v *= hermite_triple(ia[d], ib[d], ic[d]);
        if v == 0.0 {
            return 0.0;
        }
    }
    v
}

/// Dense `P × P × P` table of `E[ψ_i ψ_j ψ_k]`, index `(i P + j) P + k`.
pub fn triple_products(basis: &ChaosBasis) -> Vec<f64> {
    let p = basis.len();
    let mut t = alloc::vec![0.0; p * p * p];
    for i in 0..p {
        for j in i..p {
            for k in j..p {
                let v = triple_product(basis, i, j, k);
                if v != 0.0 {
                    for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
                        t[(a * p + b) * p + c] = v;
                    }
                }
            }
        }
    }
    t
}

/// Nonzero entries `(i, j, k, E[ψ_i ψ_j ψ_k] / (2 ⟨ψ_k²⟩))` with `i ≤ j`,
/// off-diagonal pairs counted twice, so that
/// `Σ weight û_i û_j = ⟨(Σ û_p ψ_p)² / 2, ψ_k⟩ / ⟨ψ_k²⟩`.
fn flux_entries(basis: &ChaosBasis) -> Vec<(usize, usize, usize, f64)> {
    let p = basis.len();
    let mut out = Vec::new();
    for k in 0..p {
        for i in 0..p {
            for j in i..p {
                let v = triple_product(basis, i, j, k);
                if v != 0.0 {
                    let mult = if i == j { 0.5 } else { 1.0 };
                    out.push((i, j, k, mult * v / basis.norm(k)));
                }
            }
        }
    }
    out
}

/// Chaos coefficients of the solution at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GpcState {
    pub grid: Grid1D,
    pub basis: ChaosBasis,
    /// `P × nx` row-major; row 0 is the mean.
    pub u_hat: Vec<f64>,
    pub t: f64,
}

impl GpcState {
    pub fn new(grid: Grid1D, basis: ChaosBasis, u_hat: Vec<f64>, t: f64) -> Result<Self> {
        ensure!(
            u_hat.len() == basis.len() * grid.nx,
            "coefficient storage {} does not match P = {} x nx = {}",
            u_hat.len(),
            basis.len(),
            grid.nx
        );
        Ok(Self { grid, basis, u_hat, t })
    }

    /// Chaos expansion of the KL initial field at the given order.
    pub fn initial(kl: &KlDecomposition, ic: &InitialCondition, order: usize) -> Result<Self> {
        let grid = kl.grid;
        ic.validate(grid.x_min, grid.x_max)?;
        let n = kl.n_modes();
        let basis = ChaosBasis::new(n, order)?;
        let p = basis.len();
        let y = initial_coefficients(kl, &basis, CoefficientInit::Gaussian)?;
        let mut u_hat = alloc::vec![0.0; p * grid.nx];
        for j in 0..grid.nx {
            u_hat[j] = ic.mean_initial(grid.x(j));
        }
        for i in 0..n {
            for q in 1..p {
                let c = ic.s * y[i * p + q];
                if c != 0.0 {
                    for (v, m) in u_hat[q * grid.nx..(q + 1) * grid.nx].iter_mut().zip(&kl.eigenfunctions[i]) {
                        *v += c * m;
                    }
                }
            }
        }
        Self::new(grid, basis, u_hat, 0.0)
    }

    pub fn coefficient(&self, p: usize) -> &[f64] {
        &self.u_hat[p * self.grid.nx..(p + 1) * self.grid.nx]
    }

    pub fn mean(&self) -> &[f64] {
        self.coefficient(0)
    }

    /// `Σ_{p≥1} û_p² ⟨ψ_p²⟩` at every point.
    pub fn variance(&self) -> Vec<f64> {
        variance_of(&self.u_hat, &self.basis, self.grid.nx)
    }

    /// `u(x_j; ξ)` for one germ sample.
    pub fn sample(&self, xi: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            xi.len() >= self.basis.germ_dim(),
            "germ sample has {} entries, need {}",
            xi.len(),
            self.basis.germ_dim()
        );
        let mut psi = alloc::vec![0.0; self.basis.len()];
        self.basis.eval_all(xi, &mut psi);
        let nx = self.grid.nx;
        let mut u = alloc::vec![0.0; nx];
        for (q, &w) in psi.iter().enumerate() {
            for (v, c) in u.iter_mut().zip(&self.u_hat[q * nx..(q + 1) * nx]) {
                *v += w * c;
            }
        }
        Ok(u)
    }

    /// Row-major `S × nx` fields at every sample of `germ`.
    pub fn sample_ensemble(&self, germ: &GermEnsemble) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(germ.len() * self.grid.nx);
        for xi in germ.iter() {
            out.extend(self.sample(xi)?);
        }
        Ok(out)
    }
}

fn variance_of(u_hat: &[f64], basis: &ChaosBasis, nx: usize) -> Vec<f64> {
    let mut var = alloc::vec![0.0; nx];
    for q in 1..basis.len() {
        let norm = basis.norm(q);
        for (v, c) in var.iter_mut().zip(&u_hat[q * nx..(q + 1) * nx]) {
            *v += c * c * norm;
        }
    }
    var
}

/// Galerkin right-hand side and RK4 stepping.
#[derive(Debug, Clone)]
pub struct GpcSolver {
    state: GpcState,
    entries: Vec<(usize, usize, usize, f64)>,
    point_flux: Vec<f64>,
    speed: Vec<f64>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl GpcSolver {
    pub fn new(state: GpcState) -> Result<Self> {
        if let Some((index, _)) = first_non_finite(&state.u_hat, 1) {
            return Err(Error::SolverFailure {
                step: 0,
                index,
                sample: None,
            });
        }
        let len = state.u_hat.len();
        let nx = state.grid.nx;
        Ok(Self {
            entries: flux_entries(&state.basis),
            point_flux: alloc::vec![0.0; len],
            speed: alloc::vec![0.0; nx - 1],
            k: core::array::from_fn(|_| alloc::vec![0.0; len]),
            tmp: alloc::vec![0.0; len],
            state,
        })
    }

    pub fn state(&self) -> &GpcState {
        &self.state
    }

    pub fn into_state(self) -> GpcState {
        self.state
    }

    /// `dû/dt` for coefficients `u`, written to `out`.
    fn rhs(&mut self, u: &[f64], out: &mut [f64]) {
        let nx = self.state.grid.nx;
        let inv_dx = 1.0 / self.state.grid.dx;
        let p = self.state.basis.len();

        self.point_flux.fill(0.0);
        for &(i, j, k, w) in &self.entries {
            let (ui, uj) = (&u[i * nx..(i + 1) * nx], &u[j * nx..(j + 1) * nx]);
            for ((f, a), b) in self.point_flux[k * nx..(k + 1) * nx].iter_mut().zip(ui).zip(uj) {
                *f += w * a * b;
            }
        }

        let var = variance_of(u, &self.state.basis, nx);
        let bound: Vec<f64> = (0..nx)
            .map(|j| libm::sqrt(u[j] * u[j] + var[j]) + 2.0 * libm::sqrt(var[j]))
            .collect();
        for (j, a) in self.speed.iter_mut().enumerate() {
            *a = bound[j].max(bound[j + 1]);
        }

        for q in 0..p {
            let uq = &u[q * nx..(q + 1) * nx];
            let fq = &self.point_flux[q * nx..(q + 1) * nx];
            let o = &mut out[q * nx..(q + 1) * nx];
            let interface = |j: usize| 0.5 * (fq[j] + fq[j + 1]) - 0.5 * self.speed[j] * (uq[j + 1] - uq[j]);
            let mut left = interface(0);
            for j in 1..nx - 1 {
                let right = interface(j);
                o[j] = -(right - left) * inv_dx;
                left = right;
            }
            o[0] = 0.0;
            o[nx - 1] = 0.0;
        }
    }

    /// One RK4 step of size `dt`.
    pub fn step(&mut self, dt: f64) {
        let [mut k1, mut k2, mut k3, mut k4] = core::mem::take(&mut self.k);
        let mut tmp = core::mem::take(&mut self.tmp);
        let mut u = core::mem::take(&mut self.state.u_hat);
        self.rhs(&u, &mut k1);
        axpy_into(&mut tmp, &u, 0.5 * dt, &k1);
        self.rhs(&tmp, &mut k2);
        axpy_into(&mut tmp, &u, 0.5 * dt, &k2);
        self.rhs(&tmp, &mut k3);
        axpy_into(&mut tmp, &u, dt, &k3);
        self.rhs(&tmp, &mut k4);
        let h = dt / 6.0;
        for ((((v, a), b), c), d) in u.iter_mut().zip(&k1).zip(&k2).zip(&k3).zip(&k4) {
            *v += h * (a + 2.0 * b + 2.0 * c + d);
        }
        self.state.u_hat = u;
        self.state.t += dt;
        self.k = [k1, k2, k3, k4];
        self.tmp = tmp;
    }

    /// Integrates to `t_end`; `observer` sees the state after every step.
    pub fn run(&mut self, t_end: f64, dt: f64, mut observer: impl FnMut(&GpcState)) -> Result<()> {
        ensure!(t_end >= self.state.t, "final time {t_end} precedes the current time {}", self.state.t);
        let start = self.state.t;
        let mut elapsed = 0.0;
        for (step, h) in time_steps(t_end - start, dt)?.enumerate() {
            self.step(h);
            elapsed += h;
            self.state.t = start + elapsed;
            if let Some((k, _)) = first_non_finite(&self.state.u_hat, 1) {
                return Err(Error::SolverFailure {
                    step: step + 1,
                    index: k % self.state.grid.nx,
                    sample: None,
                });
            }
            observer(&self.state);
        }
        self.state.t = t_end;
        Ok(())
    }
}

fn axpy_into(out: &mut [f64], u: &[f64], a: f64, k: &[f64]) {
    for ((o, &v), &kv) in out.iter_mut().zip(u).zip(k) {
        *o = v + a * kv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::burgers::solve;
    use crate::kernels::{KernelSpec, ScalingMode};
    use crate::kle::solve_fredholm;

    #[test]
    fn triple_product_examples() {
        let b1 = ChaosBasis::new(1, 3).unwrap();
        assert_eq!(triple_product(&b1, 0, 0, 0), 1.0);
        assert_eq!(triple_product(&b1, 1, 1, 2), 2.0);
        assert_eq!(triple_product(&b1, 1, 1, 1), 0.0);
        assert_eq!(triple_product(&b1, 3, 3, 0), 6.0);

        let b = ChaosBasis::new(3, 3).unwrap();
        let p = b.len();
        let t = triple_products(&b);
        for i in 0..p {
            for j in 0..p {
                for k in 0..p {
                    let v = t[(i * p + j) * p + k];
                    assert_eq!(v, t[(j * p + i) * p + k]);
                    assert_eq!(v, t[(k * p + j) * p + i]);
                    let odd = (0..3).any(|d| (b.multi_index(i)[d] + b.multi_index(j)[d] + b.multi_index(k)[d]) % 2 == 1);
                    if odd {
                        assert_eq!(v, 0.0);
                    }
                }
            }
            // ⟨ψ_i ψ_i ψ_0⟩ is the norm.
            assert_eq!(t[(i * p + i) * p], b.norm(i));
        }
    }

    #[test]
    fn triple_products_match_sampling() {
        let b = ChaosBasis::new(2, 2).unwrap();
        let germ = GermEnsemble::generate(2, 200_000, 5).unwrap();
        let table = b.eval_table(&germ);
        let p = b.len();
        for (i, j, k) in [(1, 1, 3), (1, 2, 4), (3, 3, 3), (2, 5, 2)] {
            let mc: f64 = table.chunks_exact(p).map(|r| r[i] * r[j] * r[k]).sum::<f64>() / germ.len() as f64;
            let exact = triple_product(&b, i, j, k);
            assert!((mc - exact).abs() < 0.1 * exact.abs().max(1.0), "{i} {j} {k}: {mc} vs {exact}");
        }
    }

    fn setup(s: f64) -> (KlDecomposition, InitialCondition) {
        let grid = Grid1D::new(-1.0, 1.0, 101).unwrap();
        let ic = InitialCondition {
            u_b: 0.0,
            x0: 0.0,
            s,
            kernel: KernelSpec::exponential(0.25, 1.0),
            scaling: ScalingMode::Fluctuation,
        };
        (solve_fredholm(&ic.kernel, &grid, 3).unwrap(), ic)
    }

    #[test]
    fn initial_state_matches_kl_samples() {
        let (kl, ic) = setup(0.1);
        let st = GpcState::initial(&kl, &ic, 3).unwrap();
        let xi = [0.3, -1.2, 0.8];
        let expect = crate::kle::sample_initial_field(&kl, &ic, &xi).unwrap();
        for (a, b) in st.sample(&xi).unwrap().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_variance_matches_deterministic_solver() {
        let (kl, ic) = setup(0.0);
        let st = GpcState::initial(&kl, &ic, 3).unwrap();
        let u0 = st.mean().to_vec();
        let mut solver = GpcSolver::new(st).unwrap();
        solver.run(0.3, 1e-3, |_| {}).unwrap();
        let det = solve(&kl.grid, &u0, 0.3, 1e-3).unwrap();
        for (a, b) in solver.state().mean().iter().zip(&det.u) {
            assert!((a - b).abs() <= 1e-9);
        }
        assert!(solver.state().u_hat[kl.grid.nx..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mean_is_conserved_between_boundaries() {
        let (kl, ic) = setup(0.1);
        let mut solver = GpcSolver::new(GpcState::initial(&kl, &ic, 2).unwrap()).unwrap();
        let g = kl.grid;
        let mass = |u: &[f64]| u[1..g.nx - 1].iter().sum::<f64>() * g.dx;
        let before: Vec<f64> = (0..solver.state().basis.len()).map(|q| mass(solver.state().coefficient(q))).collect();
        let u_b0: Vec<f64> = solver.state().mean().to_vec();
        solver.run(0.2, 1e-3, |_| {}).unwrap();
        // Mass changes only through the boundary fluxes, which stay small
        // while the profile is far from the walls.
        let after = mass(solver.state().mean());
        assert!((after - before[0]).abs() < 1e-3);
        assert_eq!(solver.state().mean()[0], u_b0[0]);
        assert_eq!(solver.state().mean()[g.nx - 1], u_b0[g.nx - 1]);
    }

    #[test]
    fn nan_is_reported() {
        let (kl, ic) = setup(0.1);
        let mut st = GpcState::initial(&kl, &ic, 1).unwrap();
        st.u_hat[7] = f64::NAN;
        assert!(matches!(GpcSolver::new(st), Err(Error::SolverFailure { step: 0, index: 7, .. })));
    }
}
