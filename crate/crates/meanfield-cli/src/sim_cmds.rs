//! `simulate`, `ode`, and `equilibria`: the finite-N process and its
//! mean-field limit.

use crate::util::{self, Context};
use anyhow::{bail, Context as _, Result};
use clap::{Args, ValueEnum};
use meanfield::model::EmpiricalVector;
use meanfield::mvode::{self, Direction, EquilibriaOptions};
use meanfield::sim::{self, PopulationCounts};
use meanfield::{action::PathGrid, io, parallel};
use std::path::PathBuf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Recording {
    /// Full event list (single replica only): time, block, category, from, to.
    Events,
    /// One terminal empirical vector per replica.
    Terminal,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model file (TOML).
    #[arg(long)]
    model: PathBuf,

    /// Number of nodes.
    #[arg(long)]
    n: u64,

    /// Simulation horizon.
    #[arg(long)]
    horizon: f64,

    /// Independent replicas; replica i runs with seed `--seed + i`.
    #[arg(long, default_value_t = 1)]
    replicas: usize,

    /// Initial empirical measure: `uniform` or comma-separated weights
    /// (node counts are the rounding of N times the measure).
    #[arg(long, default_value = "uniform")]
    init: String,

    /// What to write; defaults to `events` for one replica and `terminal`
    /// for several.
    #[arg(long, value_enum)]
    record: Option<Recording>,

    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

pub fn simulate(ctx: &Context, args: SimulateArgs) -> Result<()> {
    let model = util::load_model(&args.model)?;
    let target = util::parse_state(&args.init, &model, None)?;
    let init = PopulationCounts::from_target(&model, args.n, &target)?;
    if args.replicas == 0 {
        bail!("--replicas must be at least 1");
    }
    let out = ctx.out_path(&args.out);
    let mode = args.record.unwrap_or(if args.replicas == 1 {
        Recording::Events
    } else {
        Recording::Terminal
    });
    match mode {
        Recording::Events => {
            if args.replicas != 1 {
                bail!("event recording holds one trajectory; use --replicas 1 or --record terminal");
            }
            let traj = sim::simulate(&model, &init, args.horizon, ctx.seed)?;
            io::write_events(&out, &traj.events)?;
        }
        Recording::Terminal => {
            let runs = parallel::par_map(args.replicas, |i| {
                let seed = ctx.seed.wrapping_add(i as u64);
                sim::simulate(&model, &init, args.horizon, seed)
                    .map(|traj| (seed, traj.final_counts().empirical()))
            });
            let rows: Vec<(u64, EmpiricalVector)> =
                runs.into_iter().collect::<meanfield::error::Result<_>>()?;
            io::write_replica_summary(&out, &model, &rows)?;
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct OdeArgs {
    /// Model file (TOML).
    #[arg(long)]
    model: PathBuf,

    /// Starting measure: `uniform` or comma-separated weights.
    #[arg(long, default_value = "uniform")]
    init: String,

    /// Integration horizon.
    #[arg(long)]
    horizon: f64,

    /// RK4 step.
    #[arg(long, default_value_t = 1e-2)]
    dt: f64,

    /// Output CSV: time column plus the flat measure columns.
    #[arg(long)]
    out: PathBuf,
}

pub fn ode(ctx: &Context, args: OdeArgs) -> Result<()> {
    let model = util::load_model(&args.model)?;
    let init = util::parse_state(&args.init, &model, None)?;
    let sol = mvode::integrate(&model, &init, args.horizon, args.dt, Direction::Forward)?;
    let grid = PathGrid::new(sol.times, sol.states).context("assembling the solution grid")?;
    io::write_path_grid(&ctx.out_path(&args.out), &model, &grid)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EquilibriaArgs {
    /// Model file (TOML).
    #[arg(long)]
    model: PathBuf,

    /// Output JSON: the equilibrium catalog with the radii r0 > r1.
    #[arg(long)]
    out: PathBuf,
}

pub fn equilibria(ctx: &Context, args: EquilibriaArgs) -> Result<()> {
    let model = util::load_model(&args.model)?;
    let catalog = mvode::find_equilibria(&model, &EquilibriaOptions::default())?;
    io::write_json(&ctx.out_path(&args.out), io::CATALOG_SCHEMA, &catalog)?;
    Ok(())
}
