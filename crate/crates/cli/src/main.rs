use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dbfe_uq::pipeline::{execute, execute_post, init_threads, sweep, Session};
use dbfe_uq::{Method, RunConfig};

/// Uncertainty propagation for the stochastic Burgers equation: DBFE with
/// Gegenbauer reprojection, Monte Carlo and gPC.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file of `section.key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides solver.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides solver.S_mc.
    #[arg(long)]
    samples: Option<usize>,
    /// Overrides output.directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo reference ensemble.
    Mc(Common),
    /// DBFE solve, reconstructed ensemble and (if post.enabled) reprojection.
    Dbfe(Common),
    /// Intrusive gPC solve.
    Gpc(Common),
    /// Reproject a saved DBFE state.
    Post {
        #[command(flatten)]
        common: Common,
        /// Directory holding the dbfe_* state files; defaults to the output directory.
        #[arg(long, value_name = "DIR")]
        state: Option<PathBuf>,
    },
    /// MC, DBFE and gPC on one germ with an L1 comparison table.
    Compare(Common),
    /// One bundle per parameter value plus a summary table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// lambda_g, M, sigma2, N or kernel.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("invalid configuration {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.solver.seed = seed;
    }
    if let Some(s) = common.samples {
        cfg.solver.s_mc = s;
    }
    if let Some(dir) = &common.out {
        cfg.output.directory = dir.clone();
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let threads = init_threads()?;
    let (common, written) = match &cli.command {
        Command::Mc(c) | Command::Dbfe(c) | Command::Gpc(c) | Command::Compare(c) => {
            let method = match cli.command {
                Command::Mc(_) => Method::Mc,
                Command::Dbfe(_) => Method::Dbfe,
                Command::Gpc(_) => Method::Gpc,
                _ => Method::Compare,
            };
            let cfg = load(c)?;
            let mut session = Session::new(c.quiet);
            session.say(format!("{} with {threads} worker(s)", method.name()));
            (c, execute(&mut session, &cfg, method)?)
        }
        Command::Post { common, state } => {
            let cfg = load(common)?;
            let mut session = Session::new(common.quiet);
            let dir = state.clone().unwrap_or_else(|| cfg.output.directory.clone());
            (common, execute_post(&mut session, &cfg, &dir)?)
        }
        Command::Sweep { common, param, values } => {
            let cfg = load(common)?;
            let mut session = Session::new(common.quiet);
            let rows = sweep(&mut session, &cfg, param, values, &cfg.output.directory)?;
            if !common.quiet {
                println!("value,peak_l1_pre,peak_l1_post,points_post_above_pre,runtime_s");
                for r in &rows {
                    println!(
                        "{},{:.4e},{:.4e},{},{:.2}",
                        r.value,
                        r.peak_l1_pre,
                        r.peak_l1_post,
                        r.points_post_above_pre,
                        r.runtime.as_secs_f64()
                    );
                }
            }
            (common, Vec::new())
        }
    };
    if !common.quiet {
        for p in written {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
