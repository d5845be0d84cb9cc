//! Gegenbauer reprojection of shocked samples.
//!
//! Each sample is split at its shock into two intervals where it is smooth.
//! On each interval the sample is projected onto the Gegenbauer polynomials
//! `C^λ_l`, `l < M`, of the mapped coordinate `ζ = (x − δ) / ε`; the
//! coefficients are then expanded in the chaos basis so the post-processed
//! field is again a function of the germ.

use alloc::vec::Vec;

use crate::chaos::{project_centered, ChaosBasis};
use crate::dbfe::{reconstruct_sample, DbfeState};
use crate::chaos::GermEnsemble;
use crate::error::ensure;
use crate::numerics::{cubic_interpolate, gauss_gegenbauer_rule, Grid1D};
use crate::{Error, Result};

/// `C^λ_n(z)` by the three-term recurrence.
pub fn gegenbauer_eval(n: usize, lambda: f64, z: f64) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..n {
        let kf = k as f64;
        let next = (2.0 * (lambda + kf) * z * cur - (2.0 * lambda + kf - 1.0) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `C^λ_0(z) .. C^λ_{M−1}(z)` into `out`.
pub fn gegenbauer_all(lambda: f64, z: f64, out: &mut [f64]) {
    let (mut prev, mut cur) = (0.0, 1.0);
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = cur;
        let kf = k as f64;
        let next = (2.0 * (lambda + kf) * z * cur - (2.0 * lambda + kf - 1.0) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
}

/// `C^λ_n(1) = Γ(n + 2λ) / (n! Γ(2λ))`.
pub fn gegenbauer_at_one(n: usize, lambda: f64) -> f64 {
    let nf = n as f64;
    libm::exp(libm::lgamma(nf + 2.0 * lambda) - libm::lgamma(nf + 1.0) - libm::lgamma(2.0 * lambda))
}

/// `h^λ_n = ∫ (1 − z²)^{λ−½} (C^λ_n)² dz = √π C^λ_n(1) Γ(λ + ½) / (Γ(λ) (n + λ))`.
pub fn gegenbauer_norm(n: usize, lambda: f64) -> f64 {
    let ratio = libm::exp(libm::lgamma(lambda + 0.5) - libm::lgamma(lambda));
    libm::sqrt(core::f64::consts::PI) * gegenbauer_at_one(n, lambda) * ratio / (n as f64 + lambda)
}

/// Reprojection parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GegenbauerConfig {
    pub lambda_g: f64,
    pub m_terms: usize,
    pub n_quad: usize,
    /// Cells left out on each side of the shock.
    pub margin: usize,
    /// Rebuild each sample from the chaos expansion of its coefficients
    /// (the default); when false the sample's own coefficients are used.
    pub chaos_projection: bool,
    /// Continue each side's expansion across the margin up to the shock.
    /// Off by default: the margin cells keep their raw values.
    pub extend_to_shock: bool,
}

impl Default for GegenbauerConfig {
    fn default() -> Self {
        Self {
            lambda_g: 7.0,
            m_terms: 7,
            n_quad: 100,
            margin: 2,
            chaos_projection: true,
            extend_to_shock: false,
        }
    }
}

impl GegenbauerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.lambda_g > 0.0 && self.lambda_g.is_finite(),
            "post.lambda_g must be > 0, got {}",
            self.lambda_g
        );
        ensure!(
            self.m_terms >= 1 && self.m_terms <= self.n_quad,
            "post.M must satisfy 1 <= M <= n_quad, got M = {} and n_quad = {}",
            self.m_terms,
            self.n_quad
        );
        Ok(())
    }
}

/// `[a, b]` with the affine map `ζ(x) = (x − δ) / ε` onto `[−1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticityInterval {
    pub a: f64,
    pub b: f64,
}

impl AnalyticityInterval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        ensure!(a < b, "interval [{a}, {b}] is empty");
        Ok(Self { a, b })
    }

    pub fn epsilon(&self) -> f64 {
        0.5 * (self.b - self.a)
    }

    pub fn delta(&self) -> f64 {
        0.5 * (self.b + self.a)
    }

    pub fn zeta(&self, x: f64) -> f64 {
        (x - self.delta()) / self.epsilon()
    }

    pub fn x_of(&self, z: f64) -> f64 {
        self.delta() + self.epsilon() * z
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.a && x <= self.b
    }
}

/// Which side of the shock an interval lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    LeftOfShock,
    RightOfShock,
}

/// Shock location: among the cells where `u` changes sign, the one with the
/// largest jump `|u_{j+1} − u_j|` (leftmost on ties), refined by the linear
/// zero crossing inside it.
pub fn detect_shock(grid: &Grid1D, field: &[f64]) -> Result<f64> {
    ensure!(field.len() == grid.nx, "field length {} != nx {}", field.len(), grid.nx);
    let mut best: Option<(usize, f64)> = None;
    for j in 0..grid.nx - 1 {
        let (l, r) = (field[j], field[j + 1]);
        if (l > 0.0) == (r > 0.0) {
            continue;
        }
        let jump = (r - l).abs();
        if best.is_none_or(|(_, b)| jump > b) {
            best = Some((j, jump));
        }
    }
    let (j, _) = best.ok_or(Error::NoShock)?;
    let (l, r) = (field[j], field[j + 1]);
    Ok(grid.x(j) + l / (l - r) * grid.dx)
}

/// The intervals on either side of a shock at `x_s`, leaving `margin` cells
/// out next to it. An interval narrower than ten cells is dropped.
pub fn analyticity_intervals(x_s: f64, grid: &Grid1D, margin: usize) -> Result<(Option<AnalyticityInterval>, Option<AnalyticityInterval>)> {
    ensure!(grid.contains(x_s), "shock location {x_s} outside the domain");
    let gap = margin as f64 * grid.dx;
    let min_width = 10.0 * grid.dx * (1.0 - 1e-12);
    let make = |a: f64, b: f64| (b - a >= min_width).then_some(AnalyticityInterval { a, b });
    Ok((make(grid.x_min, x_s - gap), make(x_s + gap, grid.x_max)))
}

/// Quadrature rule and polynomial tables for a fixed configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GegenbauerProjector {
    pub config: GegenbauerConfig,
    nodes: Vec<f64>,
    /// `w_q C_l(z_q) / h_l`, `M × n_quad`.
    analysis: Vec<f64>,
}

impl GegenbauerProjector {
    pub fn new(config: GegenbauerConfig) -> Result<Self> {
        config.validate()?;
        let rule = gauss_gegenbauer_rule(config.n_quad, config.lambda_g)?;
        let m = config.m_terms;
        let nq = rule.len();
        let mut analysis = alloc::vec![0.0; m * nq];
        let mut c = alloc::vec![0.0; m];
        for (q, (&z, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
            gegenbauer_all(config.lambda_g, z, &mut c);
            for l in 0..m {
                analysis[l * nq + q] = w * c[l] / gegenbauer_norm(l, config.lambda_g);
            }
        }
        Ok(Self {
            config,
            nodes: rule.nodes,
            analysis,
        })
    }

    pub fn m_terms(&self) -> usize {
        self.config.m_terms
    }

    /// Coefficients `ĝ_l = (1/h_l) Σ_q w_q C_l(z_q) f(x(z_q))`.
    pub fn project(&self, f: impl Fn(f64) -> Result<f64>, interval: &AnalyticityInterval) -> Result<Vec<f64>> {
        let nq = self.nodes.len();
        let values = self
            .nodes
            .iter()
            .map(|&z| f(interval.x_of(z)))
            .collect::<Result<Vec<f64>>>()?;
        Ok((0..self.m_terms())
            .map(|l| self.analysis[l * nq..(l + 1) * nq].iter().zip(&values).map(|(a, v)| a * v).sum())
            .collect())
    }

    /// Projection of a grid field, read at the nodes by cubic interpolation.
    pub fn project_field(&self, grid: &Grid1D, field: &[f64], interval: &AnalyticityInterval) -> Result<Vec<f64>> {
        self.project(|x| cubic_interpolate(grid, field, x), interval)
    }

    /// `Σ_l ĝ_l C_l(ζ(x))`.
    pub fn evaluate(&self, g: &[f64], interval: &AnalyticityInterval, x: f64) -> Result<f64> {
        ensure!(
            interval.contains(x),
            "point {x} outside the interval [{}, {}]",
            interval.a,
            interval.b
        );
        let mut c = alloc::vec![0.0; g.len()];
        gegenbauer_all(self.config.lambda_g, interval.zeta(x), &mut c);
        Ok(g.iter().zip(&c).map(|(a, b)| a * b).sum())
    }
}

/// Gegenbauer coefficients of the bi-orthogonal reconstruction at `xi`.
pub fn reproject_sample(state: &DbfeState, xi: &[f64], interval: &AnalyticityInterval, projector: &GegenbauerProjector) -> Result<Vec<f64>> {
    let u = reconstruct_sample(state, xi)?;
    projector.project_field(&state.grid, &u, interval)
}

/// Chaos coefficients of per-sample Gegenbauer coefficients.
///
/// `g_samples` is `S × M` row-major and `psi_table` the `S × P` basis table
/// of the same samples; the result is `M × P` row-major.
pub fn chaos_project_post(g_samples: &[f64], m: usize, basis: &ChaosBasis, psi_table: &[f64]) -> Result<Vec<f64>> {
    ensure!(m >= 1 && g_samples.len().is_multiple_of(m), "coefficient storage is not a multiple of M = {m}");
    let s = g_samples.len() / m;
    ensure!(s >= 1, "chaos projection needs at least one sample");
    ensure!(
        psi_table.len() == s * basis.len(),
        "basis table does not match {s} samples"
    );
    let mut out = Vec::with_capacity(m * basis.len());
    let mut column = alloc::vec![0.0; s];
    for l in 0..m {
        for (k, v) in column.iter_mut().enumerate() {
            *v = g_samples[k * m + l];
        }
        out.extend(project_centered(&column, basis, psi_table));
    }
    Ok(out)
}

/// Chaos-expanded Gegenbauer coefficients for one side of the shock.
#[derive(Debug, Clone, PartialEq)]
pub struct PostCoefficients {
    pub side: Side,
    /// Samples that own an interval on this side.
    pub members: Vec<usize>,
    /// Per-member coefficients, `members.len() × M`.
    pub g_hat_samples: Vec<f64>,
    /// `M × P`.
    pub g_hat_chaos: Vec<f64>,
}

impl PostCoefficients {
    /// `ĝ_l(ξ) = Σ_p ĝ^l_p ψ_p(ξ)` for every `l`.
    pub fn coefficients_at(&self, psi: &[f64]) -> Vec<f64> {
        let p = psi.len();
        self.g_hat_chaos
            .chunks_exact(p)
            .map(|row| row.iter().zip(psi).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// `Σ_l Σ_p ĝ^l_p ψ_p(ξ) C_l(ζ(x))`.
pub fn reconstruct_post(
    coeffs: &PostCoefficients,
    basis: &ChaosBasis,
    projector: &GegenbauerProjector,
    interval: &AnalyticityInterval,
    x: f64,
    xi: &[f64],
) -> Result<f64> {
    let mut psi = alloc::vec![0.0; basis.len()];
    basis.eval_all(xi, &mut psi);
    projector.evaluate(&coeffs.coefficients_at(&psi), interval, x)
}

/// Result of post-processing an ensemble of reconstructions.
#[derive(Debug, Clone, PartialEq)]
pub struct PostResult {
    /// Post-processed fields, `S × nx`.
    pub fields: Vec<f64>,
    /// Detected shock per sample (`None`: passed through unchanged).
    pub shocks: Vec<Option<f64>>,
    pub intervals: Vec<[Option<AnalyticityInterval>; 2]>,
    pub left: PostCoefficients,
    pub right: PostCoefficients,
}

/// Reprojects the DBFE reconstruction at every sample of `germ`.
///
/// Grid points inside a sample's intervals take the post-processed value;
/// the gap around the shock and samples without a shock keep the raw
/// reconstruction.
pub fn post_process(state: &DbfeState, germ: &GermEnsemble, config: &GegenbauerConfig) -> Result<PostResult> {
    let projector = GegenbauerProjector::new(*config)?;
    let grid = state.grid;
    let nx = grid.nx;
    let s = germ.len();
    let m = config.m_terms;
    let basis = &state.basis;
    let p = basis.len();
    let psi_table = basis.eval_table(germ);

    let mut fields = Vec::with_capacity(s * nx);
    let mut shocks = Vec::with_capacity(s);
    let mut intervals = Vec::with_capacity(s);
    let mut sides = [Side::LeftOfShock, Side::RightOfShock].map(|side| PostCoefficients {
        side,
        members: Vec::new(),
        g_hat_samples: Vec::new(),
        g_hat_chaos: Vec::new(),
    });
    for (k, xi) in germ.iter().enumerate() {
        let u = reconstruct_sample(state, xi)?;
        let (shock, pair) = match detect_shock(&grid, &u) {
            Ok(x_s) => {
                let (l, r) = analyticity_intervals(x_s, &grid, config.margin)?;
                (Some(x_s), [l, r])
            }
            Err(Error::NoShock) => (None, [None, None]),
            Err(e) => return Err(e),
        };
        for (side, iv) in sides.iter_mut().zip(&pair) {
            if let Some(iv) = iv {
                side.members.push(k);
                side.g_hat_samples.extend(projector.project_field(&grid, &u, iv)?);
            }
        }
        fields.extend(u);
        shocks.push(shock);
        intervals.push(pair);
    }

    for side in sides.iter_mut() {
        if side.members.is_empty() {
            side.g_hat_chaos = alloc::vec![0.0; m * p];
            continue;
        }
        let table: Vec<f64> = side
            .members
            .iter()
            .flat_map(|&k| psi_table[k * p..(k + 1) * p].iter().copied())
            .collect();
        side.g_hat_chaos = chaos_project_post(&side.g_hat_samples, m, basis, &table)?;
    }

    let mut c = alloc::vec![0.0; m];
    for (si, side) in sides.iter().enumerate() {
        for (pos, &k) in side.members.iter().enumerate() {
            let g = if config.chaos_projection {
                side.coefficients_at(&psi_table[k * p..(k + 1) * p])
            } else {
                side.g_hat_samples[pos * m..(pos + 1) * m].to_vec()
            };
            let iv = intervals[k][si].expect("members own an interval");
            let x_s = shocks[k].expect("members have a shock");
            let covers = |x: f64| {
                if !config.extend_to_shock {
                    iv.contains(x)
                } else if side.side == Side::LeftOfShock {
                    x >= iv.a && x < x_s
                } else {
                    x >= x_s && x <= iv.b
                }
            };
            let row = &mut fields[k * nx..(k + 1) * nx];
            for (j, v) in row.iter_mut().enumerate() {
                let x = grid.x(j);
                if covers(x) {
                    gegenbauer_all(config.lambda_g, iv.zeta(x), &mut c);
                    *v = g.iter().zip(&c).map(|(a, b)| a * b).sum();
                }
            }
        }
    }
    let [left, right] = sides;
    Ok(PostResult {
        fields,
        shocks,
        intervals,
        left,
        right,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use core::f64::consts::PI;

    #[test]
    fn recurrence_examples() {
        assert_eq!(gegenbauer_eval(0, 7.0, 0.3), 1.0);
        assert_eq!(gegenbauer_eval(1, 7.0, 0.5), 7.0);
        assert_abs_diff_eq!(gegenbauer_eval(2, 1.0, 1.0), 3.0, epsilon = 1e-14);
    }

    #[test]
    fn value_at_one_matches_closed_form() {
        for lambda in [1.0, 3.5, 7.0] {
            for n in 0..=10 {
                assert_relative_eq!(gegenbauer_eval(n, lambda, 1.0), gegenbauer_at_one(n, lambda), max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn norms() {
        assert_relative_eq!(gegenbauer_norm(0, 1.0), PI / 2.0, max_relative = 1e-12);
        for n in 0..=7 {
            assert_relative_eq!(gegenbauer_norm(n, 1.0), PI / 2.0, max_relative = 1e-10);
        }
        let rule = gauss_gegenbauer_rule(100, 7.0).unwrap();
        for n in 0..=7 {
            for m in 0..=7 {
                let ip = rule.integrate(|z| gegenbauer_eval(n, 7.0, z) * gegenbauer_eval(m, 7.0, z));
                let expect = if n == m { gegenbauer_norm(n, 7.0) } else { 0.0 };
                assert!((ip - expect).abs() <= 1e-9 * gegenbauer_norm(n, 7.0).max(1.0), "n={n} m={m}");
            }
        }
    }

    #[test]
    fn shock_detection_examples() {
        let g = Grid1D::new(-1.0, 1.0, 201).unwrap();
        let u: Vec<f64> = g.points().iter().map(|x| -x).collect();
        assert_abs_diff_eq!(detect_shock(&g, &u).unwrap(), 0.0, epsilon = g.dx);
        let step: Vec<f64> = g.points().iter().map(|&x| if x < 0.3 { 1.0 } else { -1.0 }).collect();
        assert_abs_diff_eq!(detect_shock(&g, &step).unwrap(), 0.3, epsilon = g.dx);
        assert_eq!(detect_shock(&g, &alloc::vec![1.0; 201]), Err(Error::NoShock));
        // The steepest of several crossings wins.
        let mut wiggly: Vec<f64> = g.points().iter().map(|&x| if x < -0.5 { 0.01 } else { -0.01 }).collect();
        for (j, v) in wiggly.iter_mut().enumerate() {
            if g.x(j) >= 0.2 && g.x(j) < 0.6 {
                *v = 0.5;
            } else if g.x(j) >= 0.6 {
                *v = -0.5;
            }
        }
        assert_abs_diff_eq!(detect_shock(&g, &wiggly).unwrap(), 0.595, epsilon = g.dx);
    }

    #[test]
    fn interval_rules() {
        let g = Grid1D::new(-1.0, 1.0, 201).unwrap();
        let (l, r) = analyticity_intervals(0.0, &g, 2).unwrap();
        let (l, r) = (l.unwrap(), r.unwrap());
        assert_abs_diff_eq!(l.a, -1.0);
        assert_abs_diff_eq!(l.b, -0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(r.a, 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(r.b, 1.0);
        assert_abs_diff_eq!(l.epsilon(), 0.49, epsilon = 1e-15);
        assert_abs_diff_eq!(l.delta(), -0.51, epsilon = 1e-15);
        let (l, r) = analyticity_intervals(-1.0 + 5.0 * g.dx, &g, 2).unwrap();
        assert!(l.is_none() && r.is_some());
        assert!(analyticity_intervals(2.0, &g, 2).is_err());
    }

    fn projector(m: usize) -> GegenbauerProjector {
        GegenbauerProjector::new(GegenbauerConfig {
            m_terms: m,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn constants_and_lines_are_reproduced() {
        let p = projector(7);
        let iv = AnalyticityInterval::new(-1.0, 1.0).unwrap();
        let g = p.project(|_| Ok(0.8), &iv).unwrap();
        assert_abs_diff_eq!(g[0], 0.8, epsilon = 1e-12);
        for z in [-1.0, -0.3, 0.0, 0.77, 1.0] {
            assert_abs_diff_eq!(p.evaluate(&g, &iv, z).unwrap(), 0.8, epsilon = 1e-10);
        }
        let g = p.project(|x| Ok(2.0 * x - 0.5), &iv).unwrap();
        assert!(g[2..].iter().all(|v| v.abs() < 1e-9));
        assert!(g[1].abs() > 0.1);
    }

    #[test]
    fn exponential_converges() {
        // Truncation error of exp at degree M−1 is dominated by the endpoints:
        // about 7.8e-5 for seven terms and 7.3e-6 for eight.
        let iv = AnalyticityInterval::new(-1.0, 1.0).unwrap();
        for (m, tol, centre_tol) in [(7, 1e-4, 5e-7), (8, 1e-5, 5e-8), (10, 1e-7, 1e-10)] {
            let p = projector(m);
            let g = p.project(|x| Ok(x.exp()), &iv).unwrap();
            let mut worst: f64 = 0.0;
            for k in 0..=200 {
                let z = -1.0 + 0.01 * k as f64;
                let err = (p.evaluate(&g, &iv, z).unwrap() - z.exp()).abs();
                worst = worst.max(err);
                if z.abs() <= 0.5 {
                    assert!(err <= centre_tol, "M={m} z={z} err={err}");
                }
            }
            assert!(worst <= tol, "M={m} worst={worst}");
        }
    }

    #[test]
    fn polynomials_are_exact_on_grid_fields() {
        let g = Grid1D::new(-1.0, 1.0, 201).unwrap();
        let p = projector(7);
        let iv = AnalyticityInterval::new(-0.9, 0.35).unwrap();
        // Cubic: interpolation is exact, and degree 3 < M.
        let f = |x: f64| 0.3 - x + 0.7 * x * x - 0.4 * x * x * x;
        let u: Vec<f64> = g.points().into_iter().map(f).collect();
        let coeffs = p.project_field(&g, &u, &iv).unwrap();
        for j in 0..g.nx {
            if iv.contains(g.x(j)) {
                assert_abs_diff_eq!(p.evaluate(&coeffs, &iv, g.x(j)).unwrap(), f(g.x(j)), epsilon = 1e-9);
            }
        }
        assert!(p.evaluate(&coeffs, &iv, 0.5).is_err());
    }

    #[test]
    fn chaos_projection_examples() {
        let basis = ChaosBasis::new(2, 3).unwrap();
        let germ = GermEnsemble::generate(2, 20_000, 4).unwrap();
        let table = basis.eval_table(&germ);
        let constant: Vec<f64> = (0..germ.len()).flat_map(|_| [1.5, -0.25]).collect();
        let c = chaos_project_post(&constant, 2, &basis, &table).unwrap();
        assert_eq!(c[0], 1.5);
        assert_eq!(c[basis.len()], -0.25);
        assert!(c.iter().enumerate().all(|(k, v)| k % basis.len() == 0 || v.abs() < 1e-15));

        let linear: Vec<f64> = germ.iter().map(|xi| xi[0]).collect();
        let c = chaos_project_post(&linear, 1, &basis, &table).unwrap();
        assert_abs_diff_eq!(c[basis.linear_index(0)], 1.0, epsilon = 0.03);
        assert!(c[basis.linear_index(1)].abs() < 0.03);
    }
}
