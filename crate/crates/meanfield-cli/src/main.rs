//! `meanfield` — drive the simulation and analysis pipeline from the shell.
//!
//! Subcommands mirror the library layers: `simulate` (finite-N event
//! simulation), `ode`/`equilibria` (mean-field flow), `action` (path
//! functionals), `qpot`/`qpot-path` (quasipotential estimates), `fw`/`cycles`
//! (connection-graph analysis), and the reproducible studies `exit-scaling`,
//! `occupation`, and `convergence-probe`.
//!
//! Every output is a CSV or JSON file with a schema-version header that the
//! library's own readers accept back, so artifacts chain between commands:
//! `equilibria` feeds `qpot`, whose matrix feeds `fw` and `cycles`, and so
//! on. Runs are deterministic given `--seed`; replica seeds are derived from
//! it, never from the clock.

mod graph_cmds;
mod path_cmds;
mod sim_cmds;
mod study_cmds;
mod util;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "meanfield", version, about = "Mean-field jump systems: simulation, action functionals, and metastability analysis", max_term_width = 100)]
struct Cli {
    /// Base RNG seed; replica seeds are derived from it deterministically.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for replica sweeps and pair matrices (default: all
    /// cores; ignored by the sequential build).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory that relative output paths are resolved against (created
    /// if missing).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

/// Knot-path minimizer budget, shared by every command that estimates
/// quasipotentials. The defaults favor accuracy; turn them down for quick
/// passes.
#[derive(Debug, Args)]
struct MinimizerArgs {
    /// Interior knots of each candidate path.
    #[arg(long)]
    knots: Option<usize>,

    /// Candidate path durations, comma-separated; the best is kept.
    #[arg(long, value_delimiter = ',')]
    t_grid: Option<Vec<f64>>,

    /// Coordinate-descent sweep budget per candidate duration.
    #[arg(long)]
    max_sweeps: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the N-node jump process; one replica records its full event
    /// list, several record one terminal empirical vector each.
    Simulate(sim_cmds::SimulateArgs),
    /// Integrate the mean-field flow from a given start.
    Ode(sim_cmds::OdeArgs),
    /// Catalog the flow's equilibria with the stopping radii r0 > r1.
    Equilibria(sim_cmds::EquilibriaArgs),
    /// Evaluate the action of a path, optionally against a rate realization.
    Action(path_cmds::ActionArgs),
    /// Estimate the pairwise quasipotential matrix over the stable compacts.
    Qpot(path_cmds::QpotArgs),
    /// Minimize the action between two states and emit the optimizing path.
    QpotPath(path_cmds::QpotPathArgs),
    /// W-graph analysis of a connection-cost matrix: W values, stability
    /// levels, the convergence constant, and exit exponents.
    Fw(graph_cmds::FwArgs),
    /// Build the cycle hierarchy of a connection-cost matrix, with exit and
    /// transition forecasts.
    Cycles(graph_cmds::CyclesArgs),
    /// Mean exit times from a compact's ball across population sizes, with
    /// the log-mean slope against the minimized exit exponent.
    ExitScaling(study_cmds::ExitScalingArgs),
    /// Long-run occupation fractions of the compacts' balls against their
    /// stability levels.
    Occupation(study_cmds::OccupationArgs),
    /// Mixing probe: functional gaps between two starts across geometric
    /// horizons, against the exp(N·Λ) timescale.
    ConvergenceProbe(study_cmds::ProbeArgs),
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let ctx = util::Context::new(cli.seed, cli.out_dir)?;
    match cli.command {
        Command::Simulate(args) => sim_cmds::simulate(&ctx, args),
        Command::Ode(args) => sim_cmds::ode(&ctx, args),
        Command::Equilibria(args) => sim_cmds::equilibria(&ctx, args),
        Command::Action(args) => path_cmds::action(&ctx, args),
        Command::Qpot(args) => path_cmds::qpot(&ctx, args),
        Command::QpotPath(args) => path_cmds::qpot_path(&ctx, args),
        Command::Fw(args) => graph_cmds::fw(&ctx, args),
        Command::Cycles(args) => graph_cmds::cycles(&ctx, args),
        Command::ExitScaling(args) => study_cmds::exit_scaling(&ctx, args),
        Command::Occupation(args) => study_cmds::occupation(&ctx, args),
        Command::ConvergenceProbe(args) => study_cmds::convergence_probe(&ctx, args),
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        anyhow::ensure!(n > 0, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("thread pool setup failed: {e}"))?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: Option<usize>) -> Result<()> {
    if threads.is_some() {
        eprintln!("note: sequential build, --threads has no effect");
    }
    Ok(())
}

impl MinimizerArgs {
    /// Default minimizer options with any explicit overrides applied.
    fn options(&self) -> meanfield::qpot::QpotOptions {
        let mut opts = meanfield::qpot::QpotOptions::default();
        if let Some(k) = self.knots {
            opts.knots = k;
        }
        if let Some(grid) = &self.t_grid {
            opts.t_grid = grid.clone();
        }
        if let Some(s) = self.max_sweeps {
            opts.max_sweeps = s;
        }
        opts
    }
}
