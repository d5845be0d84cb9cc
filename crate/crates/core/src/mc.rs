//! Monte Carlo reference: sample initial fields from the KL expansion and
//! solve each one deterministically.

use alloc::vec::Vec;
use core::ops::Range;

use crate::burgers::{deinterleave, interleave, solve_lanes};
use crate::chaos::GermEnsemble;
use crate::error::ensure;
use crate::kernels::InitialCondition;
use crate::kle::{sample_initial_field, KlDecomposition};
use crate::numerics::Grid1D;
use crate::{Error, Result};

/// Samples solved together in one interleaved batch.
pub const BATCH_LANES: usize = 8;

/// Solution fields at one time, one row per germ sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub grid: Grid1D,
    pub t: f64,
    pub germ: GermEnsemble,
    /// Row-major `S × nx`; row `s` belongs to `germ.sample(s)`.
    pub fields: Vec<f64>,
}

impl Ensemble {
    pub fn new(grid: Grid1D, t: f64, germ: GermEnsemble, fields: Vec<f64>) -> Result<Self> {
        ensure!(
            fields.len() == germ.len() * grid.nx,
            "{} field values do not match {} samples of {} points",
            fields.len(),
            germ.len(),
            grid.nx
        );
        Ok(Self { grid, t, germ, fields })
    }

    pub fn len(&self) -> usize {
        self.germ.len()
    }

    pub fn is_empty(&self) -> bool {
        self.germ.is_empty()
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.fields[s * self.grid.nx..(s + 1) * self.grid.nx]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.fields.chunks_exact(self.grid.nx)
    }
}

/// Solves the samples `ids` of `germ` and writes their final fields into
/// `out` (row-major, `ids.len() × nx`). Results do not depend on how the
/// samples are split between calls.
pub fn solve_samples(
    kl: &KlDecomposition,
    ic: &InitialCondition,
    germ: &GermEnsemble,
    ids: Range<usize>,
    t_end: f64,
    dt: f64,
    out: &mut [f64],
) -> Result<()> {
    let grid = kl.grid;
    let nx = grid.nx;
    ensure!(ids.end <= germ.len(), "sample range {ids:?} exceeds {} samples", germ.len());
    ensure!(out.len() == ids.len() * nx, "output storage does not match {} samples", ids.len());
    let n = kl.n_modes();
    ensure!(germ.dim() >= n, "germ dimension {} < {n} KL modes", germ.dim());
    let mut batch = alloc::vec![0.0; nx * BATCH_LANES];
    let mut start = ids.start;
    while start < ids.end {
        let lanes = BATCH_LANES.min(ids.end - start);
        let rows = &mut out[(start - ids.start) * nx..(start - ids.start + lanes) * nx];
        for (l, row) in rows.chunks_exact_mut(nx).enumerate() {
            row.copy_from_slice(&sample_initial_field(kl, ic, &germ.sample(start + l)[..n])?);
        }
        let batch = &mut batch[..nx * lanes];
        interleave(rows, lanes, batch);
        solve_lanes(&grid, batch, lanes, t_end, dt).map_err(|e| match e {
            Error::SolverFailure { step, index, sample } => Error::SolverFailure {
                step,
                index,
                sample: sample.map(|l| start + l),
            },
            other => other,
        })?;
        deinterleave(batch, lanes, rows);
        start += lanes;
    }
    Ok(())
}

/// Sequential Monte Carlo run over an explicit germ ensemble.
pub fn run_mc_with_germ(kl: &KlDecomposition, ic: &InitialCondition, germ: GermEnsemble, t_end: f64, dt: f64) -> Result<Ensemble> {
    let mut fields = alloc::vec![0.0; germ.len() * kl.grid.nx];
    solve_samples(kl, ic, &germ, 0..germ.len(), t_end, dt, &mut fields)?;
    Ensemble::new(kl.grid, t_end, germ, fields)
}

/// Sequential Monte Carlo run with `samples` germ draws from `seed`.
pub fn run_mc(kl: &KlDecomposition, ic: &InitialCondition, samples: usize, t_end: f64, dt: f64, seed: u64) -> Result<Ensemble> {
    ensure!(samples >= 2, "Monte Carlo needs at least 2 samples, got {samples}");
    let germ = GermEnsemble::generate(kl.n_modes(), samples, seed)?;
    run_mc_with_germ(kl, ic, germ, t_end, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::burgers::solve;
    use crate::kernels::{KernelSpec, ScalingMode};
    use crate::kle::solve_fredholm;

    fn setup() -> (KlDecomposition, InitialCondition) {
        let grid = Grid1D::new(-1.0, 1.0, 101).unwrap();
        let ic = InitialCondition {
            u_b: 0.0,
            x0: 0.0,
            s: 0.1,
            kernel: KernelSpec::exponential(0.25, 1.0),
            scaling: ScalingMode::Fluctuation,
        };
        (solve_fredholm(&ic.kernel, &grid, 3).unwrap(), ic)
    }

    #[test]
    fn zero_germ_gives_mean_solution() {
        let (kl, ic) = setup();
        let germ = GermEnsemble::from_values(3, 0, alloc::vec![0.0; 3]).unwrap();
        let e = run_mc_with_germ(&kl, &ic, germ, 0.1, 1e-3).unwrap();
        let mean: Vec<f64> = (0..kl.grid.nx).map(|j| ic.mean_initial(kl.grid.x(j))).collect();
        assert_eq!(e.row(0), solve(&kl.grid, &mean, 0.1, 1e-3).unwrap().u);
    }

    #[test]
    fn zero_time_mean_matches_initial_mean() {
        let (kl, ic) = setup();
        let e = run_mc(&kl, &ic, 1000, 0.0, 1e-3, 4).unwrap();
        for j in (0..kl.grid.nx).step_by(10) {
            let col: Vec<f64> = e.rows().map(|r| r[j]).collect();
            let m = col.iter().sum::<f64>() / 1000.0;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 999.0).sqrt();
            let exact = ic.mean_initial(kl.grid.x(j));
            assert!((m - exact).abs() <= 3.0 * sd / 1000f64.sqrt() + 1e-15);
        }
    }

    #[test]
    fn split_runs_are_bit_identical() {
        let (kl, ic) = setup();
        let germ = GermEnsemble::generate(3, 13, 8).unwrap();
        let whole = run_mc_with_germ(&kl, &ic, germ.clone(), 0.05, 1e-3).unwrap();
        let nx = kl.grid.nx;
        let mut parts = alloc::vec![0.0; 13 * nx];
        for r in [0..5, 5..6, 6..13] {
            let (a, b) = (r.start * nx, r.end * nx);
            solve_samples(&kl, &ic, &germ, r, 0.05, 1e-3, &mut parts[a..b]).unwrap();
        }
        assert_eq!(whole.fields, parts);
    }

    #[test]
    fn failure_reports_global_sample() {
        let (kl, ic) = setup();
        let mut values = alloc::vec![0.0; 3 * 10];
        values[3 * 9] = f64::NAN;
        let germ = GermEnsemble::from_values(3, 0, values).unwrap();
        match run_mc_with_germ(&kl, &ic, germ, 0.01, 1e-3) {
            Err(Error::SolverFailure { sample: Some(9), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(run_mc(&kl, &ic, 1, 0.0, 1e-3, 0).is_err());
    }

    #[test]
    fn one_shock_per_sample() {
        let (kl, ic) = setup();
        let e = run_mc(&kl, &ic, 16, 1.1, 1e-3, 12).unwrap();
        let mut locations = Vec::new();
        for row in e.rows() {
            let changes: Vec<usize> = (0..row.len() - 1).filter(|&j| (row[j] > 0.0) != (row[j + 1] > 0.0)).collect();
            assert_eq!(changes.len(), 1);
            locations.push(changes[0]);
        }
        assert!(locations.iter().any(|&l| l != locations[0]));
    }
}
