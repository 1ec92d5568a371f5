//! `exit-scaling`, `occupation`, and `convergence-probe`: the reproducible
//! multi-replica studies, each emitting one JSON report that embeds its
//! full config and seed.

use crate::util::{self, Context};
use crate::MinimizerArgs;
use anyhow::Result;
use clap::Args;
use meanfield::experiments::{
    self, ExitScalingConfig, ExitScalingReport, OccupationConfig, OccupationReport, ProbeConfig,
    ProbeReport,
};
use meanfield::io;
use serde::Serialize;
use std::path::PathBuf;

/// Envelope distinguishing the study kinds inside the shared experiment
/// schema.
#[derive(Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StudyReport {
    ExitScaling(ExitScalingReport),
    InvariantOccupation(OccupationReport),
    ConvergenceProbe(ProbeReport),
}

#[derive(Debug, Args)]
pub struct ExitScalingArgs {
    /// Model file (TOML).
    #[arg(long)]
    model: PathBuf,

    /// Equilibrium catalog JSON; computed from the model when absent.
    #[arg(long)]
    catalog: Option<PathBuf>,

    /// Population sizes, comma-separated; one study arm per size.
    #[arg(long, value_delimiter = ',')]
    n: Vec<u64>,

    /// Replicas per population size.
    #[arg(long, default_value_t = 200)]
    replicas: usize,

    /// Index into the catalog's stable compacts; replicas start there.
    #[arg(long, default_value_t = 0)]
    compact: usize,

    /// Exit ball radius; the catalog's r0 when absent.
    #[arg(long)]
    r0: Option<f64>,

    /// Per-replica simulation cap; replicas still inside are censored.
    #[arg(long, default_value_t = 1e6)]
    t_cap: f64,

    #[command(flatten)]
    minimizer: MinimizerArgs,

    /// Output JSON.
    #[arg(long)]
    out: PathBuf,
}

pub fn exit_scaling(ctx: &Context, args: ExitScalingArgs) -> Result<()> {
    let model = util::load_model(&args.model)?;
    let catalog = util::catalog_or_compute(&model, args.catalog.as_deref())?;
    let cfg = ExitScalingConfig {
        n_values: args.n.clone(),
        replicas: args.replicas,
        compact: args.compact,
        r0: args.r0.unwrap_or(catalog.r0),
        t_cap: args.t_cap,
        seed: ctx.seed,
    };
    let report = experiments::run_exit_scaling(&model, &catalog, &args.minimizer.options(), &cfg)?;
    io::write_json(&ctx.out_path(&args.out), io::EXPERIMENT_SCHEMA, &StudyReport::ExitScaling(report))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct OccupationArgs {
    /// Model file (TOML).
    #[arg(long)]
    model: PathBuf,

    /// Equilibrium catalog JSON; computed from the model when absent.
    #[arg(long)]
    catalog: Option<PathBuf>,

    /// Connection-cost matrix CSV over the catalog's compacts (for the
    /// stability levels); minimized from the model when absent.
    #[arg(long)]
    costs: Option<PathBuf>,

    /// Population size.
    #[arg(long)]
    n: u64,

    /// Trajectory horizon.
    #[arg(long)]
    horizon: f64,

    /// Index into the catalog's stable compacts to start at.
    #[arg(long, default_value_t = 0)]
    start: usize,

    #[command(flatten)]
    minimizer: MinimizerArgs,

    /// Output JSON.
    #[arg(long)]
    out: PathBuf,
}

pub fn occupation(ctx: &Context, args: OccupationArgs) -> Result<()> {
    let model = util::load_model(&args.model)?;
    let catalog = util::catalog_or_compute(&model, args.catalog.as_deref())?;
    let costs = util::costs_or_compute(
        &model,
        &catalog,
        args.costs.as_deref(),
        &args.minimizer.options(),
    )?;
    let cfg = OccupationConfig {
        n: args.n,
        t_end: args.horizon,
        start: args.start,
        seed: ctx.seed,
    };
    let report = experiments::run_invariant_occupation(&model, &catalog, &costs, &cfg)?;
    io::write_json(
        &ctx.out_path(&args.out),
        io::EXPERIMENT_SCHEMA,
        &StudyReport::InvariantOccupation(report),
    )?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Model file (TOML).
    #[arg(long)]
    model: PathBuf,

    /// Equilibrium catalog JSON; computed from the model when absent.
    #[arg(long)]
    catalog: Option<PathBuf>,

    /// Connection-cost matrix CSV (for the convergence constant Λ);
    /// minimized from the model when absent.
    #[arg(long)]
    costs: Option<PathBuf>,

    /// Population size.
    #[arg(long)]
    n: u64,

    /// Checkpoint horizons, comma-separated and non-decreasing.
    #[arg(long, value_delimiter = ',')]
    horizons: Vec<f64>,

    /// Replicas per initial condition.
    #[arg(long, default_value_t = 100)]
    replicas: usize,

    /// First start: `uniform`, `compact:<i>`, or comma-separated weights;
    /// the catalog's first compact when absent.
    #[arg(long)]
    init_a: Option<String>,

    /// Second start, same spellings; the catalog's last compact when
    /// absent.
    #[arg(long)]
    init_b: Option<String>,

    /// Output JSON.
    #[arg(long)]
    out: PathBuf,

    #[command(flatten)]
    minimizer: MinimizerArgs,
}

pub fn convergence_probe(ctx: &Context, args: ProbeArgs) -> Result<()> {
    let model = util::load_model(&args.model)?;
    let catalog = util::catalog_or_compute(&model, args.catalog.as_deref())?;
    let costs = util::costs_or_compute(
        &model,
        &catalog,
        args.costs.as_deref(),
        &args.minimizer.options(),
    )?;
    let init_a = args
        .init_a
        .as_deref()
        .map(|s| util::parse_state(s, &model, Some(&catalog)))
        .transpose()?;
    let init_b = args
        .init_b
        .as_deref()
        .map(|s| util::parse_state(s, &model, Some(&catalog)))
        .transpose()?;
    let cfg = ProbeConfig {
        n: args.n,
        horizons: args.horizons.clone(),
        replicas: args.replicas,
        init_a,
        init_b,
        seed: ctx.seed,
    };
    let report = experiments::run_convergence_probe(&model, &catalog, &costs, &cfg)?;
    io::write_json(
        &ctx.out_path(&args.out),
        io::EXPERIMENT_SCHEMA,
        &StudyReport::ConvergenceProbe(report),
    )?;
    Ok(())
}
