//! `action`, `qpot`, and `qpot-path`: path functionals and minimized
//! connection costs.

use crate::util::{self, Context};
use crate::MinimizerArgs;
use anyhow::{Context as _, Result};
use clap::Args;
use meanfield::action::{self, RateMatrixPath};
use meanfield::fw::CostMatrix;
use meanfield::num::Cost;
use meanfield::io;
use meanfield::qpot;
use serde::Serialize;
use std::path::PathBuf;

#[derive(Debug, Args)]
pub struct ActionArgs {
    /// Model file (TOML).
    #[arg(long)]
    model: PathBuf,

    /// Path CSV: time column plus the flat measure columns.
    #[arg(long)]
    path: PathBuf,

    /// Rate realization CSV (one row per path segment); its action and
    /// velocity residual are reported.
    #[arg(long, conflicts_with = "auto_rates")]
    rates: Option<PathBuf>,

    /// Construct the velocity-consistent tilted realization of the path
    /// and report its action alongside the dual value.
    #[arg(long)]
    auto_rates: bool,

    /// Output JSON.
    #[arg(long)]
    out: PathBuf,
}

/// What `action` writes: the dual (potential-form) value always, the primal
/// (rate-form) value whenever a realization was given or constructed, and
/// the explicit transport upper bound as a sanity envelope.
#[derive(Debug, Serialize)]
struct ActionReport {
    duration: f64,
    segments: usize,
    /// `provided`, `tilted`, or `none`.
    rate_source: &'static str,
    /// Rate-form action of the realization, absent without one.
    primal: Option<Cost>,
    /// Potential-form action of the path itself.
    dual: Cost,
    /// Max-norm mismatch between the realization's flux and the path
    /// velocity, absent without a realization.
    velocity_residual: Option<f64>,
    /// Constant-velocity transport upper bound on the path action.
    transport_bound: f64,
}

pub fn action(ctx: &Context, args: ActionArgs) -> Result<()> {
    let model = util::load_model(&args.model)?;
    let grid = io::read_path_grid(&args.path, &model)
        .with_context(|| format!("loading path {}", args.path.display()))?;
    let dual = action::path_action_dual(&model, &grid);
    let transport_bound = action::transport_cost_bound(&model, &grid);

    let realization: Option<(&'static str, RateMatrixPath)> = match &args.rates {
        Some(path) => {
            let rows = io::read_rate_rows(path, &model)
                .with_context(|| format!("loading rates {}", path.display()))?;
            Some(("provided", RateMatrixPath::new(&model, grid.clone(), rows)?))
        }
        None if args.auto_rates => {
            Some(("tilted", action::tilted_rates(&model, &grid).context("tilting rates")?))
        }
        None => None,
    };

    let report = match realization {
        Some((source, rmp)) => ActionReport {
            duration: grid.duration(),
            segments: grid.segments(),
            rate_source: source,
            primal: Some(action::action(&model, &rmp)),
            dual,
            velocity_residual: Some(rmp.velocity_residual(&model)),
            transport_bound,
        },
        None => ActionReport {
            duration: grid.duration(),
            segments: grid.segments(),
            rate_source: "none",
            primal: None,
            dual,
            velocity_residual: None,
            transport_bound,
        },
    };
    io::write_json(&ctx.out_path(&args.out), io::ACTION_SCHEMA, &report)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct QpotArgs {
    /// Model file (TOML).
    #[arg(long)]
    model: PathBuf,

    /// Equilibrium catalog JSON; computed from the model when absent.
    #[arg(long)]
    catalog: Option<PathBuf>,

    /// Forbid each connection from entering the other compacts' inner
    /// balls (the avoiding quasipotential).
    #[arg(long)]
    avoiding: bool,

    #[command(flatten)]
    minimizer: MinimizerArgs,

    /// Output CSV: the l-by-l connection-cost matrix, `inf` marking
    /// connections the minimizer could not realize.
    #[arg(long)]
    out: PathBuf,
}

pub fn qpot(ctx: &Context, args: QpotArgs) -> Result<()> {
    let model = util::load_model(&args.model)?;
    let catalog = util::catalog_or_compute(&model, args.catalog.as_deref())?;
    let opts = args.minimizer.options();
    let rows = qpot::compact_cost_matrix(&model, &catalog, &opts, args.avoiding)?;
    let matrix = CostMatrix::new(rows)?;
    io::write_cost_matrix(&ctx.out_path(&args.out), &matrix)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct QpotPathArgs {
    /// Model file (TOML).
    #[arg(long)]
    model: PathBuf,

    /// Start state: `uniform`, `compact:<i>`, or comma-separated weights.
    #[arg(long)]
    from: String,

    /// End state, same spellings as --from.
    #[arg(long)]
    to: String,

    /// Equilibrium catalog JSON; computed from the model when absent.
    /// Supplies the `compact:<i>` references, the saddle splice starts,
    /// and the --avoiding balls.
    #[arg(long)]
    catalog: Option<PathBuf>,

    /// Keep the path out of the inner balls of compacts other than the
    /// endpoints.
    #[arg(long)]
    avoiding: bool,

    #[command(flatten)]
    minimizer: MinimizerArgs,

    /// Output CSV: the optimizing path.
    #[arg(long)]
    out: PathBuf,

    /// Also write the tilted rate realization of the optimizing path.
    #[arg(long)]
    rates_out: Option<PathBuf>,

    /// Also write a JSON summary (value, duration, convergence).
    #[arg(long)]
    report: Option<PathBuf>,
}

/// What `qpot-path --report` writes.
#[derive(Debug, Serialize)]
struct QpotPathReport {
    value: f64,
    duration: f64,
    segments: usize,
    converged: bool,
}

pub fn qpot_path(ctx: &Context, args: QpotPathArgs) -> Result<()> {
    let model = util::load_model(&args.model)?;
    let catalog = util::catalog_or_compute(&model, args.catalog.as_deref())?;
    let from = util::parse_state(&args.from, &model, Some(&catalog))?;
    let to = util::parse_state(&args.to, &model, Some(&catalog))?;

    let mut opts = args.minimizer.options();
    opts.saddles = catalog.saddles().into_iter().cloned().collect();
    if args.avoiding {
        for compact in catalog.compacts() {
            if compact.product_metric(&from) > catalog.r1
                && compact.product_metric(&to) > catalog.r1
            {
                opts.avoid.push((compact.clone(), catalog.r1));
            }
        }
    }

    let result = qpot::minimize_action(&model, &from, &to, &opts)?;
    io::write_path_grid(&ctx.out_path(&args.out), &model, &result.grid)?;
    if let Some(path) = &args.rates_out {
        io::write_rate_rows(&ctx.out_path(path), &model, &result.rates.rates)?;
    }
    if let Some(path) = &args.report {
        let report = QpotPathReport {
            value: result.value,
            duration: result.duration,
            segments: result.grid.segments(),
            converged: result.converged,
        };
        io::write_json(&ctx.out_path(path), io::QPOT_SCHEMA, &report)?;
    }
    Ok(())
}
