//! `fw` and `cycles`: combinatorial analysis of a connection-cost matrix.

use crate::util::{self, Context};
use anyhow::{bail, Context as _, Result};
use clap::{Args, ValueEnum};
use meanfield::cycles::{self, CycleHierarchy, ExitPrediction};
use meanfield::fw::{self, CostMatrix};
use meanfield::io;
use meanfield::num::Cost;
use serde::Serialize;
use std::path::PathBuf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FwOp {
    /// Minimum one-sink W-graph cost per node, plus stability levels.
    W,
    /// Exit exponent I_i(W) for node --i against the absorbing set --W.
    I,
    /// The convergence constant Λ (one-sink minus two-sink minimum).
    Lambda,
}

#[derive(Debug, Args)]
pub struct FwArgs {
    /// Connection-cost matrix CSV (square, `inf` tokens allowed).
    #[arg(long)]
    matrix: PathBuf,

    /// Which quantity to compute.
    #[arg(long, value_enum)]
    op: FwOp,

    /// Node whose exit exponent is wanted (op `i` only, 0-based).
    #[arg(long)]
    i: Option<usize>,

    /// Absorbing node set, comma-separated 0-based indices (op `i` only).
    #[arg(long = "W", value_delimiter = ',')]
    w_set: Option<Vec<usize>>,

    /// Output JSON.
    #[arg(long)]
    out: PathBuf,
}

/// What `fw` writes; fields beyond `size` depend on the op.
#[derive(Debug, Serialize)]
struct FwReport {
    op: String,
    size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    w_values: Option<Vec<Cost>>,
    /// W(K_i) minus the smallest W value.
    #[serde(skip_serializing_if = "Option::is_none")]
    levels: Option<Vec<Cost>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<Cost>,
    #[serde(skip_serializing_if = "Option::is_none")]
    i: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    absorbing: Option<Vec<usize>>,
    /// I_i(W) for op `i`.
    #[serde(skip_serializing_if = "Option::is_none")]
    exit_exponent: Option<Cost>,
}

impl FwReport {
    fn new(op: FwOp, size: usize) -> Self {
        FwReport {
            op: format!("{op:?}").to_lowercase(),
            size,
            w_values: None,
            levels: None,
            lambda: None,
            i: None,
            absorbing: None,
            exit_exponent: None,
        }
    }
}

pub fn fw(ctx: &Context, args: FwArgs) -> Result<()> {
    let matrix = io::read_cost_matrix(&args.matrix)
        .with_context(|| format!("loading matrix {}", args.matrix.display()))?;
    let mut report = FwReport::new(args.op, matrix.len());
    match args.op {
        FwOp::W => {
            report.w_values = Some(fw::w_values(&matrix)?);
            report.levels = Some(fw::stability_levels(&matrix)?);
        }
        FwOp::Lambda => {
            report.lambda = Some(fw::lambda_constant(&matrix)?);
        }
        FwOp::I => {
            let (Some(i), Some(w_set)) = (args.i, &args.w_set) else {
                bail!("op `i` needs both --i <node> and --W <nodes>");
            };
            let absorbing = util::parse_index_set(w_set, matrix.len(), "absorbing set")?;
            if i >= matrix.len() {
                bail!("--i {} out of range for a {}-node matrix", i, matrix.len());
            }
            report.i = Some(i);
            report.absorbing = Some(absorbing.iter().copied().collect());
            report.exit_exponent = Some(fw::exit_exponent(&matrix, &absorbing, i)?);
        }
    }
    io::write_json(&ctx.out_path(&args.out), io::GRAPH_SCHEMA, &report)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct CyclesArgs {
    /// Connection-cost matrix CSV (square, `inf` tokens allowed).
    #[arg(long)]
    matrix: PathBuf,

    /// Population scale; adds exp{N·Ṽ} exit-time and transition forecasts.
    #[arg(long)]
    n: Option<f64>,

    /// Output JSON.
    #[arg(long)]
    out: PathBuf,
}

/// What `cycles` writes: the full hierarchy (ranks, arrows, V̂/Ṽ, pair
/// tables) plus per-element forecasts when a scale was given.
#[derive(Debug, Serialize)]
struct CyclesReport {
    size: usize,
    height: usize,
    /// Elements per rank, base nodes first.
    level_sizes: Vec<usize>,
    degenerate: bool,
    hierarchy: CycleHierarchy,
    #[serde(skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    predictions: Option<Vec<ExitPrediction>>,
}

pub fn cycles(ctx: &Context, args: CyclesArgs) -> Result<()> {
    let matrix: CostMatrix = io::read_cost_matrix(&args.matrix)
        .with_context(|| format!("loading matrix {}", args.matrix.display()))?;
    let hierarchy = cycles::build_hierarchy(&matrix)?;
    let predictions = match args.n {
        Some(scale) => Some(cycles::exit_predictions(&hierarchy, scale)?),
        None => None,
    };
    let report = CyclesReport {
        size: matrix.len(),
        height: hierarchy.height(),
        level_sizes: hierarchy.levels.iter().map(|lvl| lvl.elements.len()).collect(),
        degenerate: hierarchy.degenerate,
        hierarchy,
        scale: args.n,
        predictions,
    };
    io::write_json(&ctx.out_path(&args.out), io::CYCLES_SCHEMA, &report)?;
    Ok(())
}
