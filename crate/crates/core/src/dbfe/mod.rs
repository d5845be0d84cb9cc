//! Dynamically bi-orthogonal field equations for the stochastic Burgers
//! equation.
//!
//! The random solution is carried as
//! `u(x, t; ξ) = ū(x, t) + Σ_i Y_i(t; ξ) u_i(x, t)` with
//! `Y_i = Σ_p Y[i][p] ψ_p(ξ)`. Writing `L` for the discrete Burgers operator
//! and `E` for the expectation over the germ, the unknowns evolve as
//!
//! ```text
//! dū/dt      = E[L(u)]
//! du_i/dt    = Σ_k C⁻¹_ik (F_k − Π F_k),        F_k = E[(L(u) − E[L(u)]) Y_k]
//! dY[i][p]/dt = E[⟨L(u) − E[L(u)], u_i⟩ ψ_p] / ⟨ψ_p²⟩
//! ```
//!
//! where `C` is the covariance of the `Y_i` and `Π` projects onto the span of
//! the modes. Expectations are Monte Carlo averages over one germ ensemble
//! that stays fixed for the whole run.
//!
//! The solution keeps its initial value `h(ξ)` at both end points. The mean
//! is frozen there; the mode end values follow the least-squares fit of
//! `h − h̄` by the current coefficients, `u_i(β) = Σ_j C⁻¹_ij E[(h − h̄) Y_j]`,
//! which is exact while `h` lies in the span of the `Y_j`. Within a step the
//! mode ends move linearly to that target, and `Π` is taken along the modes
//! with their end values zeroed, so the end values are set exactly while the
//! derivatives stay orthogonal to every mode.

mod fused;
mod tensors;

use alloc::vec::Vec;

pub use tensors::{flux_tensors, tensor_rhs, FluxTensors};

use crate::burgers::time_steps;
use crate::chaos::{ChaosBasis, GermEnsemble};
use crate::error::ensure;
use crate::kernels::InitialCondition;
use crate::kle::{initial_coefficients, CoefficientInit, KlDecomposition};
use crate::numerics::{solve_spd, symmetric_eigen, Grid1D};
use crate::{Error, Result};
use fused::FusedKernel;

/// Mean, modes and chaos coefficients of the bi-orthogonal expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct DbfeState {
    pub grid: Grid1D,
    pub basis: ChaosBasis,
    pub mean: Vec<f64>,
    /// `N × nx`, row-major.
    pub modes: Vec<f64>,
    /// `N × P`, row-major: `coeffs[i * P + p] = Y[i][p]`.
    pub coeffs: Vec<f64>,
    pub t: f64,
}

impl DbfeState {
    pub fn new(grid: Grid1D, basis: ChaosBasis, mean: Vec<f64>, modes: Vec<f64>, coeffs: Vec<f64>, t: f64) -> Result<Self> {
        let n = basis.germ_dim();
        ensure!(mean.len() == grid.nx, "mean has length {} != nx {}", mean.len(), grid.nx);
        ensure!(
            modes.len() == n * grid.nx,
            "modes storage {} does not match {n} modes of {} points",
            modes.len(),
            grid.nx
        );
        ensure!(
            coeffs.len() == n * basis.len(),
            "coefficient storage {} does not match {n} x {}",
            coeffs.len(),
            basis.len()
        );
        Ok(Self {
            grid,
            basis,
            mean,
            modes,
            coeffs,
            t,
        })
    }

    /// Initial state from a KL decomposition of a Gaussian field: the mean
    /// profile, the KL eigenfunctions, and `Y_i = s √λ_i ξ_i`.
    pub fn initial(kl: &KlDecomposition, ic: &InitialCondition, basis: ChaosBasis) -> Result<Self> {
        let grid = kl.grid;
        ic.validate(grid.x_min, grid.x_max)?;
        let mut coeffs = initial_coefficients(kl, &basis, CoefficientInit::Gaussian)?;
        coeffs.iter_mut().for_each(|y| *y *= ic.s);
        let mean = (0..grid.nx).map(|j| ic.mean_initial(grid.x(j))).collect();
        let modes = kl.eigenfunctions.concat();
        Self::new(grid, basis, mean, modes, coeffs, 0.0)
    }

    pub fn n_modes(&self) -> usize {
        self.basis.germ_dim()
    }

    pub fn n_chaos(&self) -> usize {
        self.basis.len()
    }

    pub fn mode(&self, i: usize) -> &[f64] {
        &self.modes[i * self.grid.nx..(i + 1) * self.grid.nx]
    }

    pub fn coeff_row(&self, i: usize) -> &[f64] {
        let p = self.n_chaos();
        &self.coeffs[i * p..(i + 1) * p]
    }

    /// `Y_i(ξ)` for every mode.
    pub fn stochastic_coefficients(&self, xi: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            xi.len() >= self.n_modes(),
            "germ dimension {} < {} modes",
            xi.len(),
            self.n_modes()
        );
        let mut psi = alloc::vec![0.0; self.n_chaos()];
        self.basis.eval_all(xi, &mut psi);
        Ok((0..self.n_modes())
            .map(|i| self.coeff_row(i).iter().zip(&psi).map(|(y, p)| y * p).sum())
            .collect())
    }

    /// Largest `|⟨u_i, u_j⟩ − δ_ij|`.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.n_modes();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..=i {
                let ip = self.grid.inner_product_unchecked(self.mode(i), self.mode(j));
                worst = worst.max((ip - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        worst
    }
}

/// Covariance of the stochastic coefficients, `C_ij = Σ_{p≥1} Y[i][p] Y[j][p] ⟨ψ_p²⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    pub n: usize,
    /// Row-major `n × n`.
    pub c: Vec<f64>,
}

impl CovMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.n + j]
    }

    /// Smallest eigenvalue the inverse will use:
    /// `1e−8 · max(trace / n, 1e−30)`.
    pub fn floor(&self) -> f64 {
        let trace: f64 = (0..self.n).map(|i| self.get(i, i)).sum();
        1e-8 * (trace / self.n as f64).max(1e-30)
    }

    pub fn variances(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }
}

pub fn covariance(state: &DbfeState) -> CovMatrix {
    let n = state.n_modes();
    let norms = state.basis.norms();
    let mut c = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = state
                .coeff_row(i)
                .iter()
                .zip(state.coeff_row(j))
                .zip(norms)
                .skip(1)
                .map(|((a, b), h)| a * b * h)
                .sum();
            c[i * n + j] = v;
            c[j * n + i] = v;
        }
    }
    CovMatrix { n, c }
}

/// Eigenvalue-floored inverse of a covariance matrix.
pub fn regularized_inverse(c: &CovMatrix) -> Result<Vec<f64>> {
    let n = c.n;
    let floor = c.floor();
    let eig = symmetric_eigen(&c.c, n)?;
    let mut inv = alloc::vec![0.0; n * n];
    for (lambda, v) in eig.values.iter().zip(&eig.vectors) {
        let w = 1.0 / lambda.max(floor);
        for i in 0..n {
            for j in 0..n {
                inv[i * n + j] += w * v[i] * v[j];
            }
        }
    }
    // Exact symmetry keeps the downstream mode updates symmetric too.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv[i * n + j] + inv[j * n + i]);
            inv[i * n + j] = v;
            inv[j * n + i] = v;
        }
    }
    Ok(inv)
}

/// The bi-orthogonal partial sum at one germ realization.
pub fn reconstruct_sample(state: &DbfeState, xi: &[f64]) -> Result<Vec<f64>> {
    let y = state.stochastic_coefficients(xi)?;
    let mut u = state.mean.clone();
    for (i, yi) in y.iter().enumerate() {
        for (v, m) in u.iter_mut().zip(state.mode(i)) {
            *v += yi * m;
        }
    }
    Ok(u)
}

/// Reconstructions at every sample of `germ`, row-major `S × nx`.
pub fn reconstruct_ensemble(state: &DbfeState, germ: &GermEnsemble) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(germ.len() * state.grid.nx);
    for xi in germ.iter() {
        out.extend(reconstruct_sample(state, xi)?);
    }
    Ok(out)
}

/// The prescribed end values: the frozen mean and the chaos coefficients of
/// the fluctuation `h − h̄`, both captured at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryValues {
    pub mean: [f64; 2],
    /// `P` entries; the constant term is zero.
    pub fluctuation: Vec<[f64; 2]>,
}

impl BoundaryValues {
    pub fn capture(state: &DbfeState) -> Self {
        let last = state.grid.nx - 1;
        let p = state.n_chaos();
        let mut fluctuation = alloc::vec![[0.0; 2]; p];
        for i in 0..state.n_modes() {
            let ends = [state.mode(i)[0], state.mode(i)[last]];
            for (f, y) in fluctuation.iter_mut().zip(state.coeff_row(i)).skip(1) {
                f[0] += y * ends[0];
                f[1] += y * ends[1];
            }
        }
        Self {
            mean: [state.mean[0], state.mean[last]],
            fluctuation,
        }
    }

    /// `u_i(β) = Σ_j C⁻¹_ij E[(h − h̄) Y_j]` at both ends for the coefficients
    /// of `state`.
    pub fn mode_targets(&self, state: &DbfeState, cinv: &[f64]) -> Vec<[f64; 2]> {
        let n = state.n_modes();
        let e: Vec<[f64; 2]> = (0..n)
            .map(|j| {
                let mut acc = [0.0; 2];
                for (pp, (f, y)) in self.fluctuation.iter().zip(state.coeff_row(j)).enumerate().skip(1) {
                    let w = y * state.basis.norm(pp);
                    acc[0] += f[0] * w;
                    acc[1] += f[1] * w;
                }
                acc
            })
            .collect();
        (0..n)
            .map(|i| {
                let mut t = [0.0; 2];
                for (j, ej) in e.iter().enumerate() {
                    t[0] += cinv[i * n + j] * ej[0];
                    t[1] += cinv[i * n + j] * ej[1];
                }
                t
            })
            .collect()
    }
}

/// Resets the mean at both end points and sets the mode end values to their
/// targets for the current coefficients.
pub fn apply_boundary(state: &mut DbfeState, boundary: &BoundaryValues) -> Result<()> {
    let nx = state.grid.nx;
    state.mean[0] = boundary.mean[0];
    state.mean[nx - 1] = boundary.mean[1];
    let cinv = regularized_inverse(&covariance(state))?;
    for (i, t) in boundary.mode_targets(state, &cinv).iter().enumerate() {
        state.modes[i * nx] = t[0];
        state.modes[i * nx + nx - 1] = t[1];
    }
    Ok(())
}

/// Time derivatives of every unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub mean: Vec<f64>,
    pub modes: Vec<f64>,
    pub coeffs: Vec<f64>,
}

/// Removes from each `f_k` its component along the boundary-zeroed modes, so
/// the result is orthogonal to every mode and keeps the end values of `f_k`.
pub(crate) fn project_out_modes(grid: &Grid1D, n: usize, modes: &[f64], f: &mut [f64]) -> Result<()> {
    let nx = grid.nx;
    let trimmed = |i: usize| &modes[i * nx + 1..(i + 1) * nx - 1];
    let inner = |a: &[f64], b: &[f64]| fused::dot(a, b) * grid.dx;
    let mut g = alloc::vec![0.0; n * n];
    for i in 0..n {
        for k in 0..=i {
            let v = inner(trimmed(i), trimmed(k));
            g[i * n + k] = v;
            g[k * n + i] = v;
        }
    }
    let mut b = alloc::vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            b[i * n + k] = grid.inner_product_unchecked(&modes[i * nx..(i + 1) * nx], &f[k * nx..(k + 1) * nx]);
        }
    }
    let x = solve_spd(&g, n, &b, n)?;
    for k in 0..n {
        for i in 0..n {
            let a = x[i * n + k];
            for (fv, m) in f[k * nx + 1..(k + 1) * nx - 1].iter_mut().zip(trimmed(i)) {
                *fv -= a * m;
            }
        }
    }
    Ok(())
}

/// Mode derivatives `Σ_k C⁻¹_ik r_k`.
pub(crate) fn apply_inverse(n: usize, nx: usize, cinv: &[f64], r: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..n {
        for k in 0..n {
            let w = cinv[i * n + k];
            for (o, v) in out[i * nx..(i + 1) * nx].iter_mut().zip(&r[k * nx..(k + 1) * nx]) {
                *o += w * v;
            }
        }
    }
}

/// Solver switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DbfeOptions {
    /// Gram–Schmidt repair of the modes after every step, with the inverse
    /// transform applied to the coefficients.
    pub reorthonormalize: bool,
    /// Compute [`StepDiagnostics`] (a few inner products per step).
    pub diagnostics: bool,
}

/// Per-step checks of the dynamic orthogonality condition.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepDiagnostics {
    /// `max |⟨(u_i^n + u_i^{n+1}) / 2, (u_j^{n+1} − u_j^n) / Δt⟩|`.
    pub do_residual: f64,
    /// The same with `u_i^n` in place of the midpoint; carries an `O(Δt)`
    /// term `Δt/2 ⟨u_i', u_j'⟩` that the midpoint form cancels.
    pub do_residual_left: f64,
    /// `max |⟨u_i, u_j⟩ − δ_ij|` after the step.
    pub orthonormality_error: f64,
}

/// Time integrator: RK4 for the mean and the modes with the stochastic
/// coefficients held at their start-of-step values, forward Euler for the
/// coefficients.
#[derive(Debug, Clone)]
pub struct DbfeSolver {
    state: DbfeState,
    boundary: BoundaryValues,
    germ: GermEnsemble,
    psi: Vec<f64>,
    options: DbfeOptions,
    kernel: FusedKernel,
    c: Vec<f64>,
    c_bar: Vec<f64>,
    q: Vec<f64>,
    steps: usize,
}

impl DbfeSolver {
    /// `germ` is the integration ensemble used for every expectation.
    pub fn new(state: DbfeState, germ: GermEnsemble, options: DbfeOptions) -> Result<Self> {
        let n = state.n_modes();
        ensure!(
            germ.dim() >= n,
            "integration germ dimension {} < {n} modes",
            germ.dim()
        );
        ensure!(germ.len() >= 2, "integration ensemble needs at least 2 samples");
        let psi = state.basis.eval_table(&germ);
        let s = germ.len();
        Ok(Self {
            boundary: BoundaryValues::capture(&state),
            kernel: FusedKernel::new(&state.grid, n),
            c: alloc::vec![0.0; n * s],
            c_bar: alloc::vec![0.0; n],
            q: alloc::vec![0.0; n * s],
            state,
            germ,
            psi,
            options,
            steps: 0,
        })
    }

    pub fn state(&self) -> &DbfeState {
        &self.state
    }

    pub fn into_state(self) -> DbfeState {
        self.state
    }

    pub fn germ(&self) -> &GermEnsemble {
        &self.germ
    }

    pub fn boundary(&self) -> &BoundaryValues {
        &self.boundary
    }

    fn load_coefficients(&mut self) {
        let st = &self.state;
        let (n, p, s) = (st.n_modes(), st.n_chaos(), self.germ.len());
        for i in 0..n {
            let row = st.coeff_row(i);
            for k in 0..s {
                self.c[i * s + k] = fused::dot(row, &self.psi[k * p..(k + 1) * p]);
            }
            self.c_bar[i] = fused::sum(&self.c[i * s..(i + 1) * s]) / s as f64;
        }
    }

    /// Mean and mode derivatives at `(mean, modes)` with the loaded
    /// coefficients and mode end rates `ends`; fills `self.q` when `with_q`.
    #[allow(clippy::too_many_arguments)]
    fn stage(
        &mut self,
        mean: &[f64],
        modes: &[f64],
        cinv: &[f64],
        ends: &[[f64; 2]],
        with_q: bool,
        d_mean: &mut [f64],
        d_modes: &mut [f64],
    ) -> Result<()> {
        let grid = self.state.grid;
        let (nx, n) = (grid.nx, self.state.n_modes());
        let mut f = alloc::vec![0.0; n * nx];
        let q = if with_q { Some(&mut self.q[..]) } else { None };
        self.kernel.evaluate(mean, modes, &self.c, &self.c_bar, d_mean, &mut f, q);
        apply_inverse(n, nx, cinv, &f, d_modes);
        for (i, r) in ends.iter().enumerate() {
            d_modes[i * nx] = r[0];
            d_modes[i * nx + nx - 1] = r[1];
        }
        project_out_modes(&grid, n, modes, d_modes)?;
        self.check_finite(d_mean)?;
        self.check_finite(d_modes)
    }

    fn check_finite(&self, v: &[f64]) -> Result<()> {
        match v.iter().position(|x| !x.is_finite()) {
            Some(k) => Err(Error::SolverFailure {
                step: self.steps,
                index: k % self.state.grid.nx,
                sample: None,
            }),
            None => Ok(()),
        }
    }

    fn coefficient_rates(&self, out: &mut [f64]) {
        let st = &self.state;
        let (n, p, s) = (st.n_modes(), st.n_chaos(), self.germ.len());
        let mut acc = alloc::vec![0.0; p];
        for i in 0..n {
            acc.fill(0.0);
            let qi = &self.q[i * s..(i + 1) * s];
            for (k, &qv) in qi.iter().enumerate() {
                for (a, psi) in acc.iter_mut().zip(&self.psi[k * p..(k + 1) * p]) {
                    *a += qv * psi;
                }
            }
            for (pp, a) in acc.iter().enumerate() {
                out[i * p + pp] = a / (s as f64 * st.basis.norm(pp));
            }
        }
    }

    /// All derivatives at the current state, with the mode end values held.
    pub fn derivatives(&mut self) -> Result<Derivatives> {
        self.load_coefficients();
        let cinv = regularized_inverse(&covariance(&self.state))?;
        let (nx, n, p) = (self.state.grid.nx, self.state.n_modes(), self.state.n_chaos());
        let mut d = Derivatives {
            mean: alloc::vec![0.0; nx],
            modes: alloc::vec![0.0; n * nx],
            coeffs: alloc::vec![0.0; n * p],
        };
        let (mean, modes) = (self.state.mean.clone(), self.state.modes.clone());
        let held = alloc::vec![[0.0; 2]; n];
        self.stage(&mean, &modes, &cinv, &held, true, &mut d.mean, &mut d.modes)?;
        self.coefficient_rates(&mut d.coeffs);
        Ok(d)
    }

    /// Advances the state by `dt`.
    pub fn step(&mut self, dt: f64) -> Result<StepDiagnostics> {
        ensure!(dt > 0.0 && dt.is_finite(), "time step must be positive, got {dt}");
        self.load_coefficients();
        let cinv = regularized_inverse(&covariance(&self.state))?;
        let (nx, n, p) = (self.state.grid.nx, self.state.n_modes(), self.state.n_chaos());
        let mean0 = self.state.mean.clone();
        let modes0 = self.state.modes.clone();
        let ends: Vec<[f64; 2]> = self
            .boundary
            .mode_targets(&self.state, &cinv)
            .iter()
            .enumerate()
            .map(|(i, t)| [(t[0] - modes0[i * nx]) / dt, (t[1] - modes0[(i + 1) * nx - 1]) / dt])
            .collect();

        let mut km = [(); 4].map(|_| alloc::vec![0.0; nx]);
        let mut ku = [(); 4].map(|_| alloc::vec![0.0; n * nx]);
        let mut dy = alloc::vec![0.0; n * p];
        let mut mean_s = alloc::vec![0.0; nx];
        let mut modes_s = alloc::vec![0.0; n * nx];

        {
            let [k1m, ..] = &mut km;
            let [k1u, ..] = &mut ku;
            self.stage(&mean0, &modes0, &cinv, &ends, true, k1m, k1u)?;
        }
        self.coefficient_rates(&mut dy);
        for stage in 1..4 {
            let h = if stage == 3 { dt } else { 0.5 * dt };
            for ((o, a), k) in mean_s.iter_mut().zip(&mean0).zip(&km[stage - 1]) {
                *o = a + h * k;
            }
            for ((o, a), k) in modes_s.iter_mut().zip(&modes0).zip(&ku[stage - 1]) {
                *o = a + h * k;
            }
            let (mut dm, mut du) = (core::mem::take(&mut km[stage]), core::mem::take(&mut ku[stage]));
            self.stage(&mean_s, &modes_s, &cinv, &ends, false, &mut dm, &mut du)?;
            km[stage] = dm;
            ku[stage] = du;
        }

        let h6 = dt / 6.0;
        let st = &mut self.state;
        for (j, v) in st.mean.iter_mut().enumerate() {
            *v += h6 * (km[0][j] + 2.0 * km[1][j] + 2.0 * km[2][j] + km[3][j]);
        }
        for (j, v) in st.modes.iter_mut().enumerate() {
            *v += h6 * (ku[0][j] + 2.0 * ku[1][j] + 2.0 * ku[2][j] + ku[3][j]);
        }
        for (y, d) in st.coeffs.iter_mut().zip(&dy) {
            *y += dt * d;
        }
        st.t += dt;
        self.steps += 1;
        // The mean never moves at the ends; restoring it only removes rounding.
        self.state.mean[0] = self.boundary.mean[0];
        self.state.mean[nx - 1] = self.boundary.mean[1];
        if self.options.reorthonormalize {
            self.reorthonormalize()?;
        }
        self.check_finite(&self.state.mean)?;
        self.check_finite(&self.state.modes)?;
        self.check_finite(&self.state.coeffs)?;

        if !self.options.diagnostics {
            return Ok(StepDiagnostics::default());
        }
        let st = &self.state;
        let grid = st.grid;
        let mut diag = StepDiagnostics {
            orthonormality_error: st.orthonormality_error(),
            ..Default::default()
        };
        let mut delta = alloc::vec![0.0; nx];
        let mut mid = alloc::vec![0.0; nx];
        for j in 0..n {
            for ((d, a), b) in delta.iter_mut().zip(st.mode(j)).zip(&modes0[j * nx..(j + 1) * nx]) {
                *d = (a - b) / dt;
            }
            for i in 0..n {
                let old = &modes0[i * nx..(i + 1) * nx];
                for ((m, a), b) in mid.iter_mut().zip(st.mode(i)).zip(old) {
                    *m = 0.5 * (a + b);
                }
                diag.do_residual = diag.do_residual.max(grid.inner_product_unchecked(&mid, &delta).abs());
                diag.do_residual_left = diag
                    .do_residual_left
                    .max(grid.inner_product_unchecked(old, &delta).abs());
            }
        }
        Ok(diag)
    }

    /// Steps to `t_end` (measured from the current time), calling `observer`
    /// after every step.
    pub fn run(&mut self, t_end: f64, dt: f64, mut observer: impl FnMut(&DbfeState, &StepDiagnostics)) -> Result<()> {
        let remaining = t_end - self.state.t;
        ensure!(remaining >= -1e-12, "final time {t_end} is before the current time {}", self.state.t);
        let t0 = self.state.t;
        let mut elapsed = 0.0;
        for h in time_steps(remaining.max(0.0), dt)? {
            let diag = self.step(h)?;
            elapsed += h;
            // Keep the clock on the nominal grid instead of accumulating sums.
            self.state.t = t0 + elapsed;
            observer(&self.state, &diag);
        }
        if remaining > 0.0 {
            self.state.t = t_end;
        }
        Ok(())
    }

    fn reorthonormalize(&mut self) -> Result<()> {
        let st = &mut self.state;
        let (nx, n, p) = (st.grid.nx, st.n_modes(), st.n_chaos());
        // Modified Gram–Schmidt U = R Q with R lower triangular; the field
        // Σ Y_i u_i is kept by Y' = Rᵀ Y.
        let mut r = alloc::vec![0.0; n * n];
        for i in 0..n {
            for k in 0..i {
                let (done, rest) = st.modes.split_at_mut(i * nx);
                let qk = &done[k * nx..(k + 1) * nx];
                let v = &mut rest[..nx];
                let proj = st.grid.inner_product_unchecked(v, qk);
                r[i * n + k] = proj;
                for (a, b) in v.iter_mut().zip(qk) {
                    *a -= proj * b;
                }
            }
            let v = &mut st.modes[i * nx..(i + 1) * nx];
            let norm = libm::sqrt(st.grid.inner_product_unchecked(v, v));
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::Numeric(alloc::format!("mode {i} collapsed during re-orthonormalization")));
            }
            r[i * n + i] = norm;
            v.iter_mut().for_each(|a| *a /= norm);
        }
        let old = st.coeffs.clone();
        for k in 0..n {
            for pp in 0..p {
                st.coeffs[k * p + pp] = (k..n).map(|i| r[i * n + k] * old[i * p + pp]).sum();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelSpec, ScalingMode};
    use crate::kle::{sample_initial_field, solve_fredholm};
    use approx::assert_abs_diff_eq;

    fn ic() -> InitialCondition {
        InitialCondition {
            u_b: 0.0,
            x0: 0.0,
            s: 0.1,
            kernel: KernelSpec::exponential(0.25, 1.0),
            scaling: ScalingMode::Fluctuation,
        }
    }

    fn setup(nx: usize, n: usize) -> DbfeState {
        let grid = Grid1D::new(-1.0, 1.0, nx).unwrap();
        let kl = solve_fredholm(&ic().kernel, &grid, n).unwrap();
        DbfeState::initial(&kl, &ic(), ChaosBasis::new(n, 3).unwrap()).unwrap()
    }

    fn synthetic(eigenvalues: &[f64]) -> DbfeState {
        let grid = Grid1D::new(-1.0, 1.0, 21).unwrap();
        let n = eigenvalues.len();
        let kl = KlDecomposition {
            grid,
            eigenvalues: eigenvalues.to_vec(),
            eigenfunctions: alloc::vec![alloc::vec![0.0; grid.nx]; n],
            spectrum: eigenvalues.to_vec(),
        };
        let c = InitialCondition { s: 1.0, ..ic() };
        DbfeState::initial(&kl, &c, ChaosBasis::new(n, 3).unwrap()).unwrap()
    }

    #[test]
    fn covariance_examples() {
        let st = synthetic(&[1.0, 0.25, 0.04]);
        let c = covariance(&st);
        let expect = [1.0, 0.0, 0.0, 0.0, 0.25, 0.0, 0.0, 0.0, 0.04];
        for (a, b) in c.c.iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let zero = synthetic(&[0.0, 0.0]);
        assert!(covariance(&zero).c.iter().all(|&v| v == 0.0));

        let mut flipped = st.clone();
        let p = flipped.n_chaos();
        flipped.coeffs[p..2 * p].iter_mut().for_each(|v| *v = -*v);
        assert_eq!(covariance(&flipped).variances(), c.variances());
    }

    #[test]
    fn covariance_is_exactly_symmetric() {
        let mut st = setup(41, 3);
        for (k, v) in st.coeffs.iter_mut().enumerate() {
            *v += 0.01 * ((k * 31 % 17) as f64 - 8.0);
        }
        let c = covariance(&st);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(c.get(i, j), c.get(j, i));
            }
        }
    }

    #[test]
    fn regularized_inverse_examples() {
        let inv = regularized_inverse(&CovMatrix { n: 2, c: alloc::vec![1.0, 0.0, 0.0, 0.25] }).unwrap();
        for (a, b) in inv.iter().zip([1.0, 0.0, 0.0, 4.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let c = CovMatrix { n: 2, c: alloc::vec![1.0, 0.0, 0.0, 0.0] };
        assert_eq!(c.floor(), 1e-8 * 0.5);
        let inv = regularized_inverse(&c).unwrap();
        assert_abs_diff_eq!(inv[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(inv[3], 1.0 / (1e-8 * 0.5), epsilon = 1e-3);
        let id = regularized_inverse(&CovMatrix { n: 3, c: alloc::vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0] }).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(id[i * 3 + j], if i == j { 1.0 } else { 0.0 }, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn reconstruction_matches_initial_field() {
        let grid = Grid1D::new(-1.0, 1.0, 101).unwrap();
        let kl = solve_fredholm(&ic().kernel, &grid, 3).unwrap();
        let st = DbfeState::initial(&kl, &ic(), ChaosBasis::new(3, 3).unwrap()).unwrap();
        assert_eq!(reconstruct_sample(&st, &[0.0; 3]).unwrap(), st.mean);
        let germ = GermEnsemble::generate(3, 20, 5).unwrap();
        for xi in germ.iter() {
            let a = reconstruct_sample(&st, xi).unwrap();
            let b = sample_initial_field(&kl, &ic(), xi).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
        assert!(reconstruct_sample(&st, &[0.0; 2]).is_err());
    }

    #[test]
    fn boundary_values_are_restored() {
        let mut st = setup(41, 2);
        let orig = st.clone();
        let b = BoundaryValues::capture(&st);
        assert_eq!(b.fluctuation[0], [0.0; 2]);
        let interior = st.mean[10];
        st.mean[0] = 9.0;
        st.modes[2 * 41 - 1] = -9.0;
        apply_boundary(&mut st, &b).unwrap();
        assert_eq!(st.mean, orig.mean);
        for (a, o) in st.modes.iter().zip(&orig.modes) {
            assert_abs_diff_eq!(a, o, epsilon = 1e-12);
        }
        assert_eq!(st.mean[10], interior);
    }

    #[test]
    fn mode_targets_follow_mixed_coefficients() {
        // Rotating the coefficients of two modes leaves the targets such that
        // Σ Y_i u_i(β) still reproduces h(β) at every germ sample.
        let st = setup(41, 2);
        let b = BoundaryValues::capture(&st);
        let mut turned = st.clone();
        let p = st.n_chaos();
        let (c, s) = (0.8f64, 0.6f64);
        for pp in 0..p {
            let (y0, y1) = (st.coeffs[pp], st.coeffs[p + pp]);
            turned.coeffs[pp] = c * y0 - s * y1;
            turned.coeffs[p + pp] = s * y0 + c * y1;
        }
        apply_boundary(&mut turned, &b).unwrap();
        for xi in [[0.3, -1.1], [2.0, 0.5], [-0.7, -0.2]] {
            let h = reconstruct_sample(&st, &xi).unwrap();
            let u = reconstruct_sample(&turned, &xi).unwrap();
            assert_abs_diff_eq!(h[0], u[0], epsilon = 1e-12);
            assert_abs_diff_eq!(h[40], u[40], epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_state_has_zero_derivatives() {
        let grid = Grid1D::new(-1.0, 1.0, 41).unwrap();
        let basis = ChaosBasis::new(2, 2).unwrap();
        let modes: Vec<f64> = (0..2)
            .flat_map(|i| grid.points().into_iter().map(move |x| (core::f64::consts::PI * (i + 1) as f64 * x / 2.0).sin()))
            .collect();
        let st = DbfeState::new(grid, basis.clone(), alloc::vec![0.7; 41], modes, alloc::vec![0.0; 2 * basis.len()], 0.0).unwrap();
        let mut solver = DbfeSolver::new(st, GermEnsemble::generate(2, 50, 1).unwrap(), DbfeOptions::default()).unwrap();
        let d = solver.derivatives().unwrap();
        assert!(d.mean.iter().chain(&d.modes).chain(&d.coeffs).all(|&v| v == 0.0));
    }

    #[test]
    fn mode_derivatives_satisfy_dynamic_orthogonality() {
        let st = setup(101, 3);
        let germ = GermEnsemble::generate(3, 500, 9).unwrap();
        let mut solver = DbfeSolver::new(st.clone(), germ, DbfeOptions::default()).unwrap();
        let d = solver.derivatives().unwrap();
        let nx = st.grid.nx;
        let scale = d.modes.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(scale > 0.0);
        for i in 0..3 {
            for j in 0..3 {
                let ip = st.grid.inner_product(st.mode(i), &d.modes[j * nx..(j + 1) * nx]).unwrap();
                assert!(ip.abs() <= 1e-12 * scale, "<u_{i}, du_{j}> = {ip}");
            }
            assert_eq!(d.modes[i * nx], 0.0);
            assert_eq!(d.modes[(i + 1) * nx - 1], 0.0);
        }
        assert!(d.coeffs.iter().step_by(st.n_chaos()).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_variance_step_matches_deterministic_solver() {
        let grid = Grid1D::new(-1.0, 1.0, 101).unwrap();
        let kl = solve_fredholm(&ic().kernel, &grid, 2).unwrap();
        let c = InitialCondition { s: 0.0, ..ic() };
        let st = DbfeState::initial(&kl, &c, ChaosBasis::new(2, 3).unwrap()).unwrap();
        let mut u = st.mean.clone();
        let mut solver = DbfeSolver::new(st, GermEnsemble::generate(2, 100, 2).unwrap(), DbfeOptions::default()).unwrap();
        let mut rk = crate::burgers::Rk4::new(&grid, 1);
        for _ in 0..50 {
            solver.step(1e-3).unwrap();
            rk.step(&mut u, 1e-3);
            for (a, b) in solver.state().mean.iter().zip(&u) {
                assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn short_run_keeps_invariants() {
        let st = setup(101, 3);
        let germ = GermEnsemble::generate(3, 400, 4).unwrap();
        let opts = DbfeOptions {
            diagnostics: true,
            ..Default::default()
        };
        let mut solver = DbfeSolver::new(st.clone(), germ, opts).unwrap();
        let mut worst = StepDiagnostics::default();
        solver
            .run(0.05, 1e-3, |s, d| {
                worst.do_residual = worst.do_residual.max(d.do_residual);
                worst.orthonormality_error = worst.orthonormality_error.max(d.orthonormality_error);
                assert!(s.coeffs.iter().step_by(s.n_chaos()).all(|v| v.abs() <= 1e-10));
            })
            .unwrap();
        let end = solver.state();
        assert_abs_diff_eq!(end.t, 0.05, epsilon = 1e-15);
        assert!(worst.do_residual <= 1e-6, "{worst:?}");
        assert!(worst.orthonormality_error <= 1e-8, "{worst:?}");
        assert_eq!([end.mean[0], end.mean[100]], [st.mean[0], st.mean[100]]);
        for xi in [[0.5, -0.3, 1.2], [-1.5, 0.2, 0.0]] {
            let h = reconstruct_sample(&st, &xi).unwrap();
            let u = reconstruct_sample(end, &xi).unwrap();
            assert!((h[0] - u[0]).abs() < 2e-3 && (h[100] - u[100]).abs() < 2e-3, "{} {} {} {}", h[0], u[0], h[100], u[100]);
        }
    }

    #[test]
    fn reorthonormalization_preserves_the_field() {
        let mut st = setup(61, 2);
        // Skew the modes so that the repair has work to do.
        let nx = st.grid.nx;
        for j in 0..nx {
            st.modes[nx + j] += 0.1 * st.modes[j];
        }
        let xi = [0.4, -1.3];
        let before = reconstruct_sample(&st, &xi).unwrap();
        let mut solver = DbfeSolver::new(
            st,
            GermEnsemble::generate(2, 10, 0).unwrap(),
            DbfeOptions {
                reorthonormalize: true,
                ..Default::default()
            },
        )
        .unwrap();
        solver.reorthonormalize().unwrap();
        let after = reconstruct_sample(solver.state(), &xi).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(solver.state().orthonormality_error() < 1e-12);
    }
}
