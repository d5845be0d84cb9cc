//! Run orchestration: Monte Carlo, DBFE with reprojection, gPC, comparisons
//! and parameter sweeps, each writing a bundle of CSV files.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use cpu_time::ProcessTime;
use dbfe_core::chaos::{ChaosBasis, GermEnsemble};
use dbfe_core::dbfe::{covariance, reconstruct_ensemble, DbfeSolver, DbfeState};
use dbfe_core::gegenbauer::{post_process, PostResult};
use dbfe_core::gpc::{GpcSolver, GpcState};
use dbfe_core::kernels::InitialCondition;
use dbfe_core::kle::{solve_fredholm, KlDecomposition};
use dbfe_core::mc::{solve_samples, Ensemble};
use dbfe_core::numerics::Grid1D;
use dbfe_core::stats::{l1_error, EnsembleStats};
use rayon::prelude::*;

use crate::config::{sweep_key, IntSampling, Method, RunConfig};
use crate::io::{fmt_f64, read_sidecar, Outputs, Table};
use crate::qmc::sobol_germ;

/// Wall and process CPU time of one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub method: String,
    pub phase: String,
    pub wall: Duration,
    pub cpu: Duration,
}

/// Collects phase timings and prints progress unless quiet.
#[derive(Debug, Default)]
pub struct Session {
    pub quiet: bool,
    pub timings: Vec<Timing>,
}

impl Session {
    pub fn new(quiet: bool) -> Self {
        Self {
            quiet,
            timings: Vec::new(),
        }
    }

    pub fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    /// Runs `f` as phase `phase` of `method`, recording its cost. Errors are
    /// tagged with the method and phase.
    pub fn phase<T>(&mut self, method: &str, phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let (wall, cpu) = (Instant::now(), ProcessTime::now());
        let out = f().with_context(|| format!("{method}: {phase} phase failed"))?;
        let t = Timing {
            method: method.to_string(),
            phase: phase.to_string(),
            wall: wall.elapsed(),
            cpu: cpu.elapsed(),
        };
        self.say(format!(
            "{method:>5} {phase:<8} wall {:9.3} s  cpu {:9.3} s",
            t.wall.as_secs_f64(),
            t.cpu.as_secs_f64()
        ));
        self.timings.push(t);
        Ok(out)
    }

    pub fn wall_of(&self, method: &str) -> Duration {
        self.timings.iter().filter(|t| t.method == method).map(|t| t.wall).sum()
    }

    pub fn cpu_of(&self, method: &str) -> Duration {
        self.timings.iter().filter(|t| t.method == method).map(|t| t.cpu).sum()
    }
}

/// Caps the global worker pool from `UQ_THREADS`; returns the worker count.
pub fn init_threads() -> Result<usize> {
    if let Ok(v) = std::env::var("UQ_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| anyhow!("UQ_THREADS must be a positive integer, got {v:?}"))?;
        // A pool that is already built (tests, repeated calls) is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

/// Quantities shared by every method of one configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: Grid1D,
    pub ic: InitialCondition,
    pub kl: KlDecomposition,
    /// Evaluation germ: Monte Carlo samples, and the points where DBFE and
    /// gPC are sampled, so all ensembles pair up row by row.
    pub germ: GermEnsemble,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid();
        let ic = cfg.initial_condition();
        ic.validate(grid.x_min, grid.x_max)?;
        let kl = solve_fredholm(&ic.kernel, &grid, cfg.solver.n_modes)?;
        let germ = GermEnsemble::generate(cfg.solver.n_modes, cfg.solver.s_mc, cfg.solver.seed)?;
        Ok(Self { grid, ic, kl, germ })
    }
}

/// Integration ensemble of the DBFE solver.
pub fn integration_germ(cfg: &RunConfig) -> Result<GermEnsemble> {
    let s = &cfg.solver;
    match s.int_sampling {
        IntSampling::Sobol => sobol_germ(s.n_modes, s.s_int, s.int_seed),
        IntSampling::Random => Ok(GermEnsemble::generate(s.n_modes, s.s_int, s.int_seed)?),
    }
}

fn common_meta(cfg: &RunConfig) -> Vec<(&'static str, String)> {
    let mut v = vec![
        ("t_end", fmt_f64(cfg.time.t_end)),
        ("dt", fmt_f64(cfg.time.dt)),
        ("x_min", fmt_f64(cfg.domain.x_min)),
        ("x_max", fmt_f64(cfg.domain.x_max)),
        ("nx", cfg.domain.nx.to_string()),
        ("kernel", cfg.ic.kernel.name().to_string()),
        ("sigma2", fmt_f64(cfg.ic.sigma2)),
        ("corr_len", fmt_f64(cfg.corr_len())),
        ("s", fmt_f64(cfg.ic.s)),
        ("u_b", fmt_f64(cfg.ic.u_b)),
        ("x0", fmt_f64(cfg.ic.x0)),
        ("scaling", cfg.ic.scaling.name().to_string()),
        ("N", cfg.solver.n_modes.to_string()),
    ];
    v.push(("seed", cfg.solver.seed.to_string()));
    v.push(("S", cfg.solver.s_mc.to_string()));
    v
}

fn peak(l1: &[Option<f64>]) -> f64 {
    l1.iter().flatten().fold(0.0, |a, &b| a.max(b))
}

/// A sampled ensemble with its statistics and, given a reference, its L1
/// error profile.
#[derive(Debug, Clone)]
pub struct Sampled {
    pub ensemble: Ensemble,
    pub stats: EnsembleStats,
    pub l1: Option<Vec<Option<f64>>>,
}

impl Sampled {
    fn new(ensemble: Ensemble, cfg: &RunConfig, reference: Option<&Ensemble>) -> Result<Self> {
        let stats = EnsembleStats::compute(&ensemble, cfg.stats.level)?;
        let l1 = reference.map(|r| l1_error(r, &ensemble, cfg.stats.window)).transpose()?;
        Ok(Self { ensemble, stats, l1 })
    }

    pub fn peak_l1(&self) -> Option<f64> {
        self.l1.as_deref().map(peak)
    }

    fn write(&self, out: &mut Outputs, name: &str, meta: &[(&str, String)]) -> Result<()> {
        let e = &self.ensemble;
        out.write_ensemble(&format!("{name}_ensemble.csv"), &e.grid, &e.fields)?;
        out.write_sidecar(&format!("{name}_ensemble"), meta)?;
        out.write_stats(&format!("{name}_stats.csv"), &e.grid, &self.stats, self.l1.as_deref())?;
        Ok(())
    }
}

pub fn write_kl(out: &mut Outputs, kl: &KlDecomposition) -> Result<()> {
    let xs = kl.grid.points();
    let names: Vec<String> = (1..=kl.n_modes()).map(|i| format!("u_{i}")).collect();
    let mut cols: Vec<(&str, &[f64])> = vec![("x", &xs)];
    cols.extend(names.iter().map(String::as_str).zip(kl.eigenfunctions.iter().map(Vec::as_slice)));
    out.write_columns("kl_modes.csv", &cols)?;
    let idx: Vec<f64> = (1..=kl.spectrum.len()).map(|i| i as f64).collect();
    out.write_columns("kl_eigenvalues.csv", &[("i", &idx), ("lambda", &kl.spectrum)])?;
    Ok(())
}

/// Solves every germ sample in parallel. The split into batches is fixed,
/// so the result does not depend on the number of workers.
pub fn solve_mc(setup: &Setup, cfg: &RunConfig, germ: &GermEnsemble) -> Result<Ensemble> {
    const CHUNK: usize = 16;
    let nx = setup.grid.nx;
    let mut fields = vec![0.0; germ.len() * nx];
    fields
        .par_chunks_mut(CHUNK * nx)
        .enumerate()
        .try_for_each(|(c, rows)| {
            let start = c * CHUNK;
            solve_samples(&setup.kl, &setup.ic, germ, start..start + rows.len() / nx, cfg.time.t_end, cfg.time.dt, rows)
        })?;
    Ok(Ensemble::new(setup.grid, cfg.time.t_end, germ.clone(), fields)?)
}

pub fn run_mc(session: &mut Session, setup: &Setup, cfg: &RunConfig, out: &mut Outputs) -> Result<Sampled> {
    let e = session.phase("mc", "solve", || solve_mc(setup, cfg, &setup.germ))?;
    let s = session.phase("mc", "stats", || Sampled::new(e, cfg, None))?;
    let mut meta = common_meta(cfg);
    meta.push(("method", "mc".into()));
    s.write(out, "mc", &meta)?;
    Ok(s)
}

/// DBFE solution, its diagnostics, and the sampled ensembles.
#[derive(Debug, Clone)]
pub struct DbfeRun {
    pub state: DbfeState,
    pub max_do_residual: f64,
    pub max_orthonormality_error: f64,
    /// `(t, Var[Y_i])` every `solver.history_every` steps.
    pub history: VarianceHistory,
    pub raw: Sampled,
    pub post: Option<PostRun>,
}

#[derive(Debug, Clone)]
pub struct PostRun {
    pub result: PostResult,
    pub sampled: Sampled,
}

/// Mode variances `(t, [Var Y_i])` recorded during a DBFE run.
pub type VarianceHistory = Vec<(f64, Vec<f64>)>;

/// Returns the final state, the largest DO residual and orthonormality
/// error seen, and the variance history.
pub fn solve_dbfe(setup: &Setup, cfg: &RunConfig) -> Result<(DbfeState, f64, f64, VarianceHistory)> {
    let basis = ChaosBasis::new(cfg.solver.n_modes, cfg.solver.order)?;
    let state = DbfeState::initial(&setup.kl, &setup.ic, basis)?;
    let mut history = vec![(0.0, covariance(&state).variances())];
    let mut solver = DbfeSolver::new(state, integration_germ(cfg)?, cfg.dbfe_options())?;
    let (mut max_do, mut max_orth, mut step) = (0.0f64, 0.0f64, 0usize);
    let every = cfg.solver.history_every;
    solver.run(cfg.time.t_end, cfg.time.dt, |st, d| {
        step += 1;
        max_do = max_do.max(d.do_residual);
        max_orth = max_orth.max(d.orthonormality_error);
        if every > 0 && step % every == 0 {
            history.push((st.t, covariance(st).variances()));
        }
    })?;
    let state = solver.into_state();
    if history.last().map(|h| h.0) != Some(state.t) {
        history.push((state.t, covariance(&state).variances()));
    }
    Ok((state, max_do, max_orth, history))
}

fn write_dbfe_state(out: &mut Outputs, cfg: &RunConfig, run: &DbfeRun) -> Result<()> {
    let st = &run.state;
    let (n, p) = (st.n_modes(), st.n_chaos());
    let xs = st.grid.points();
    out.write_columns("dbfe_mean.csv", &[("x", &xs), ("mean", &st.mean)])?;
    let names: Vec<String> = (1..=n).map(|i| format!("u_{i}")).collect();
    let mut cols: Vec<(&str, &[f64])> = vec![("x", &xs)];
    cols.extend(names.iter().map(String::as_str).zip((0..n).map(|i| st.mode(i))));
    out.write_columns("dbfe_modes.csv", &cols)?;
    let header: Vec<String> = std::iter::once("mode".to_string()).chain((0..p).map(|k| format!("p{k}"))).collect();
    out.write_csv(
        "dbfe_coeffs.csv",
        &header,
        (0..n).map(|i| std::iter::once((i + 1).to_string()).chain(st.coeff_row(i).iter().map(|&v| fmt_f64(v)))),
    )?;
    let mut meta = common_meta(cfg);
    meta.extend([
        ("P", p.to_string()),
        ("order", cfg.solver.order.to_string()),
        ("t", fmt_f64(st.t)),
        ("S_int", cfg.solver.s_int.to_string()),
        ("int_seed", cfg.solver.int_seed.to_string()),
        ("max_do_residual", fmt_f64(run.max_do_residual)),
        ("max_orthonormality_error", fmt_f64(run.max_orthonormality_error)),
    ]);
    out.write_sidecar("dbfe_state", &meta)?;

    let vnames: Vec<String> = (1..=n).map(|i| format!("var_{i}")).collect();
    let header: Vec<String> = std::iter::once("t".to_string()).chain(vnames).collect();
    out.write_csv(
        "dbfe_variance.csv",
        &header,
        run.history
            .iter()
            .map(|(t, v)| std::iter::once(fmt_f64(*t)).chain(v.iter().map(|&x| fmt_f64(x)))),
    )?;
    Ok(())
}

/// Reprojects the DBFE samples and writes the `post_*` files.
pub fn run_post(
    session: &mut Session,
    setup: &Setup,
    cfg: &RunConfig,
    state: &DbfeState,
    reference: Option<&Ensemble>,
    out: &mut Outputs,
) -> Result<PostRun> {
    let result = session.phase("post", "post", || Ok(post_process(state, &setup.germ, &cfg.gegenbauer())?))?;
    let e = Ensemble::new(setup.grid, state.t, setup.germ.clone(), result.fields.clone())?;
    let sampled = session.phase("post", "stats", || Sampled::new(e, cfg, reference))?;
    let mut meta = common_meta(cfg);
    meta.extend([
        ("method", "dbfe+post".to_string()),
        ("lambda_g", fmt_f64(cfg.post.lambda_g)),
        ("M", cfg.post.m_terms.to_string()),
        ("n_quad", cfg.post.n_quad.to_string()),
        ("margin", cfg.post.margin.to_string()),
    ]);
    sampled.write(out, "post", &meta)?;
    let header: Vec<String> = ["sample", "x_s", "a_left", "b_left", "a_right", "b_right"].map(String::from).to_vec();
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    out.write_csv(
        "post_shocks.csv",
        &header,
        result.shocks.iter().zip(&result.intervals).enumerate().map(|(k, (x_s, [l, r]))| {
            vec![
                k.to_string(),
                opt(*x_s),
                opt(l.map(|i| i.a)),
                opt(l.map(|i| i.b)),
                opt(r.map(|i| i.a)),
                opt(r.map(|i| i.b)),
            ]
        }),
    )?;
    Ok(PostRun { result, sampled })
}

pub fn run_dbfe(
    session: &mut Session,
    setup: &Setup,
    cfg: &RunConfig,
    reference: Option<&Ensemble>,
    out: &mut Outputs,
) -> Result<DbfeRun> {
    let (state, max_do, max_orth, history) = session.phase("dbfe", "solve", || solve_dbfe(setup, cfg))?;
    let raw = session.phase("dbfe", "stats", || {
        let fields = reconstruct_ensemble(&state, &setup.germ)?;
        Sampled::new(Ensemble::new(setup.grid, state.t, setup.germ.clone(), fields)?, cfg, reference)
    })?;
    let mut run = DbfeRun {
        state,
        max_do_residual: max_do,
        max_orthonormality_error: max_orth,
        history,
        raw,
        post: None,
    };
    write_dbfe_state(out, cfg, &run)?;
    let mut meta = common_meta(cfg);
    meta.extend([("method", "dbfe".to_string()), ("S_int", cfg.solver.s_int.to_string())]);
    run.raw.write(out, "dbfe", &meta)?;
    if cfg.post.enabled {
        run.post = Some(run_post(session, setup, cfg, &run.state, reference, out)?);
    }
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct GpcRun {
    pub state: GpcState,
    pub sampled: Sampled,
}

pub fn run_gpc(
    session: &mut Session,
    setup: &Setup,
    cfg: &RunConfig,
    reference: Option<&Ensemble>,
    out: &mut Outputs,
) -> Result<GpcRun> {
    let state = session.phase("gpc", "solve", || {
        let mut solver = GpcSolver::new(GpcState::initial(&setup.kl, &setup.ic, cfg.solver.order)?)?;
        solver.run(cfg.time.t_end, cfg.time.dt, |_| {})?;
        Ok(solver.into_state())
    })?;
    let sampled = session.phase("gpc", "stats", || {
        let fields = state.sample_ensemble(&setup.germ)?;
        Sampled::new(Ensemble::new(setup.grid, state.t, setup.germ.clone(), fields)?, cfg, reference)
    })?;
    let xs = setup.grid.points();
    let names: Vec<String> = (0..state.basis.len()).map(|p| format!("c_{p}")).collect();
    let mut cols: Vec<(&str, &[f64])> = vec![("x", &xs)];
    cols.extend(names.iter().map(String::as_str).zip((0..state.basis.len()).map(|p| state.coefficient(p))));
    out.write_columns("gpc_coeffs.csv", &cols)?;
    let mut meta = common_meta(cfg);
    meta.extend([
        ("method", "gpc".to_string()),
        ("order", cfg.solver.order.to_string()),
        ("P", state.basis.len().to_string()),
        ("t", fmt_f64(state.t)),
    ]);
    out.write_sidecar("gpc_state", &meta)?;
    sampled.write(out, "gpc", &meta)?;
    Ok(GpcRun { state, sampled })
}

/// Everything produced by one `compare` run.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub mc: Sampled,
    pub dbfe: DbfeRun,
    pub gpc: Option<GpcRun>,
}

fn write_timings(out: &mut Outputs, session: &Session) -> Result<()> {
    let header: Vec<String> = ["method", "phase", "wall_s", "cpu_s"].map(String::from).to_vec();
    out.write_csv(
        "timing.csv",
        &header,
        session.timings.iter().map(|t| {
            vec![
                t.method.clone(),
                t.phase.clone(),
                fmt_f64(t.wall.as_secs_f64()),
                fmt_f64(t.cpu.as_secs_f64()),
            ]
        }),
    )?;
    Ok(())
}

/// MC reference, DBFE (with reprojection when enabled) and optionally gPC
/// on the same germ, plus an L1 table keyed by x.
pub fn compare(session: &mut Session, cfg: &RunConfig, with_gpc: bool, out: &mut Outputs) -> Result<Comparison> {
    let setup = Setup::new(cfg)?;
    write_kl(out, &setup.kl)?;
    let mc = run_mc(session, &setup, cfg, out)?;
    let dbfe = run_dbfe(session, &setup, cfg, Some(&mc.ensemble), out)?;
    let gpc = if with_gpc {
        Some(run_gpc(session, &setup, cfg, Some(&mc.ensemble), out)?)
    } else {
        None
    };
    let xs = setup.grid.points();
    let col = |s: &Sampled| -> Vec<f64> {
        s.l1.as_deref()
            .unwrap_or_default()
            .iter()
            .map(|v| v.unwrap_or(f64::NAN))
            .collect()
    };
    let mut names = vec!["x"];
    let mut cols = vec![xs];
    names.push("dbfe");
    cols.push(col(&dbfe.raw));
    if let Some(p) = &dbfe.post {
        names.push("post");
        cols.push(col(&p.sampled));
    }
    if let Some(g) = &gpc {
        names.push("gpc");
        cols.push(col(&g.sampled));
    }
    let pairs: Vec<(&str, &[f64])> = names.iter().copied().zip(cols.iter().map(Vec::as_slice)).collect();
    out.write_columns("l1_comparison.csv", &pairs)?;
    write_timings(out, session)?;
    Ok(Comparison { mc, dbfe, gpc })
}

/// One row of a sweep summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub peak_l1_pre: f64,
    pub peak_l1_post: f64,
    /// Grid points where reprojection raised the L1 error.
    pub points_post_above_pre: usize,
    pub runtime: Duration,
    pub bundle: PathBuf,
}

fn sweep_row(value: &str, dbfe: &DbfeRun, runtime: Duration, bundle: PathBuf) -> Result<SweepRow> {
    let pre = dbfe.raw.l1.as_deref().context("sweep runs carry a reference")?;
    let post = dbfe
        .post
        .as_ref()
        .and_then(|p| p.sampled.l1.as_deref())
        .context("sweeps need post.enabled = true")?;
    let above = pre
        .iter()
        .zip(post)
        .filter(|(a, b)| matches!((a, b), (Some(a), Some(b)) if b > a))
        .count();
    Ok(SweepRow {
        value: value.to_string(),
        peak_l1_pre: peak(pre),
        peak_l1_post: peak(post),
        points_post_above_pre: above,
        runtime,
        bundle,
    })
}

/// Runs one bundle per value of `parameter` under `root`, then writes
/// `sweep_<parameter>.csv` there.
///
/// Reprojection parameters only affect the post-processing step, so their
/// sweeps solve the MC reference and the DBFE system once and share them.
pub fn sweep(session: &mut Session, cfg: &RunConfig, parameter: &str, values: &[String], root: &Path) -> Result<Vec<SweepRow>> {
    let key = sweep_key(parameter)
        .ok_or_else(|| anyhow!("cannot sweep {parameter:?}; expected one of lambda_g, M, sigma2, N, kernel"))?;
    if values.is_empty() {
        bail!("sweep over {parameter} needs at least one value");
    }
    if !cfg.post.enabled {
        bail!("post.enabled: sweeps compare errors before and after reprojection and need it set to true");
    }
    // Validate every point before any work starts.
    let configs: Vec<RunConfig> = values
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.set(key, v)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;

    let mut root_out = Outputs::new(root, &cfg.output.prefix)?;
    let mut bundles = Vec::new();
    let mut rows = Vec::new();
    let post_only = key.starts_with("post.");
    let shared = if post_only {
        let mut base = cfg.clone();
        base.post.enabled = false;
        let setup = Setup::new(&base)?;
        write_kl(&mut root_out, &setup.kl)?;
        let mc = run_mc(session, &setup, &base, &mut root_out)?;
        let dbfe = run_dbfe(session, &setup, &base, Some(&mc.ensemble), &mut root_out)?;
        Some((setup, mc, dbfe))
    } else {
        None
    };

    for (value, c) in values.iter().zip(&configs) {
        let dir = root.join(format!("{parameter}_{value}"));
        session.say(format!("sweep {parameter} = {value} -> {}", dir.display()));
        let mut out = Outputs::new(&dir, &c.output.prefix)?;
        let start = Instant::now();
        let row = match &shared {
            Some((setup, mc, dbfe)) => {
                let post = run_post(session, setup, c, &dbfe.state, Some(&mc.ensemble), &mut out)?;
                let run = DbfeRun {
                    post: Some(post),
                    ..dbfe.clone()
                };
                sweep_row(value, &run, start.elapsed(), dir.clone())?
            }
            None => {
                // Each bundle's timing table covers that bundle only.
                let mut sub = Session::new(session.quiet);
                let r = compare(&mut sub, c, false, &mut out);
                session.timings.append(&mut sub.timings);
                sweep_row(value, &r?.dbfe, start.elapsed(), dir.clone())?
            }
        };
        out.write_sidecar("bundle", &[("parameter", parameter.to_string()), ("value", value.clone())])?;
        out.write_text("config.txt", &c.serialize())?;
        rows.push(row);
        bundles.push(out);
    }

    let header: Vec<String> = ["value", "peak_l1_pre", "peak_l1_post", "points_post_above_pre", "runtime_s"]
        .map(String::from)
        .to_vec();
    root_out.write_csv(
        &format!("sweep_{parameter}.csv"),
        &header,
        rows.iter().map(|r| {
            vec![
                r.value.clone(),
                fmt_f64(r.peak_l1_pre),
                fmt_f64(r.peak_l1_post),
                r.points_post_above_pre.to_string(),
                fmt_f64(r.runtime.as_secs_f64()),
            ]
        }),
    )?;
    for b in bundles {
        b.commit();
    }
    root_out.commit();
    Ok(rows)
}

/// Reads a DBFE state written by [`run_dbfe`] from `dir`.
pub fn read_dbfe_state(dir: &Path, prefix: &str) -> Result<DbfeState> {
    let file = |name: &str| dir.join(format!("{prefix}{name}"));
    let meta = read_sidecar(&file("dbfe_state.meta"))?;
    let get = |k: &str| -> Result<&String> { meta.get(k).with_context(|| format!("dbfe_state.meta lacks {k}")) };
    let n: usize = get("N")?.parse()?;
    let order: usize = get("order")?.parse()?;
    let t: f64 = get("t")?.parse()?;
    let grid = Grid1D::new(get("x_min")?.parse()?, get("x_max")?.parse()?, get("nx")?.parse()?)?;
    let basis = ChaosBasis::new(n, order)?;
    let mean_t = Table::read(&file("dbfe_mean.csv"))?;
    let modes_t = Table::read(&file("dbfe_modes.csv"))?;
    let coeffs_t = Table::read(&file("dbfe_coeffs.csv"))?;
    let mean = mean_t.column("mean")?;
    let mut modes = Vec::with_capacity(n * grid.nx);
    for i in 1..=n {
        modes.extend(modes_t.column(&format!("u_{i}"))?);
    }
    if coeffs_t.rows.len() != n {
        bail!("dbfe_coeffs.csv has {} rows, expected {n}", coeffs_t.rows.len());
    }
    let coeffs: Vec<f64> = coeffs_t.rows.iter().flat_map(|r| r[1..].to_vec()).collect();
    Ok(DbfeState::new(grid, basis, mean, modes, coeffs, t)?)
}

/// Reads a Monte Carlo ensemble written by [`run_mc`] if it was sampled on
/// `germ`.
pub fn read_mc_reference(dir: &Path, prefix: &str, grid: &Grid1D, germ: &GermEnsemble) -> Result<Option<Ensemble>> {
    let path = dir.join(format!("{prefix}mc_ensemble.csv"));
    if !path.exists() {
        return Ok(None);
    }
    let meta = read_sidecar(&dir.join(format!("{prefix}mc_ensemble.meta")))?;
    let matches = meta.get("seed").map(String::as_str) == Some(&germ.seed().to_string())
        && meta.get("S").map(String::as_str) == Some(&germ.len().to_string())
        && meta.get("N").map(String::as_str) == Some(&germ.dim().to_string());
    if !matches {
        return Ok(None);
    }
    let t = Table::read(&path)?;
    let fields = t.rows.concat();
    let time: f64 = meta.get("t_end").context("mc_ensemble.meta lacks t_end")?.parse()?;
    Ok(Some(Ensemble::new(*grid, time, germ.clone(), fields)?))
}

/// Runs the configured method from the command line and commits its files.
pub fn execute(session: &mut Session, cfg: &RunConfig, method: Method) -> Result<Vec<PathBuf>> {
    let mut out = Outputs::new(&cfg.output.directory, &cfg.output.prefix)?;
    match method {
        Method::Compare => {
            compare(session, cfg, true, &mut out)?;
        }
        _ => {
            let setup = Setup::new(cfg)?;
            write_kl(&mut out, &setup.kl)?;
            match method {
                Method::Mc => {
                    run_mc(session, &setup, cfg, &mut out)?;
                }
                Method::Dbfe => {
                    run_dbfe(session, &setup, cfg, None, &mut out)?;
                }
                Method::Gpc => {
                    run_gpc(session, &setup, cfg, None, &mut out)?;
                }
                Method::Compare => unreachable!(),
            }
            write_timings(&mut out, session)?;
        }
    }
    out.write_text("config.txt", &cfg.serialize())?;
    Ok(out.commit())
}

/// Reprojects a saved DBFE state from `state_dir`; compares against a saved
/// MC ensemble there when it was drawn on the same germ.
pub fn execute_post(session: &mut Session, cfg: &RunConfig, state_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let state = read_dbfe_state(state_dir, &cfg.output.prefix)?;
    let germ = GermEnsemble::generate(state.n_modes(), cfg.solver.s_mc, cfg.solver.seed)?;
    let reference = read_mc_reference(state_dir, &cfg.output.prefix, &state.grid, &germ)?;
    let setup = Setup {
        grid: state.grid,
        ic: cfg.initial_condition(),
        kl: solve_fredholm(&cfg.kernel(), &state.grid, state.n_modes())?,
        germ,
    };
    let mut out = Outputs::new(&cfg.output.directory, &cfg.output.prefix)?;
    run_post(session, &setup, cfg, &state, reference.as_ref(), &mut out)?;
    Ok(out.commit())
}
