//! Shared plumbing: output-path resolution, state parsing, and loaders for
//! the artifacts that chain between subcommands.

use anyhow::{bail, Context as _, Result};
use meanfield::config;
use meanfield::fw::CostMatrix;
use meanfield::io;
use meanfield::model::{BlockModel, EmpiricalVector};
use meanfield::mvode::{self, CompactCatalog, EquilibriaOptions};
use meanfield::qpot::{self, QpotOptions};
use std::path::{Path, PathBuf};

/// Run-wide context threaded to every subcommand.
pub struct Context {
    pub seed: u64,
    out_dir: Option<PathBuf>,
}

impl Context {
    pub fn new(seed: u64, out_dir: Option<PathBuf>) -> Result<Self> {
        if let Some(dir) = &out_dir {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating --out-dir {}", dir.display()))?;
        }
        Ok(Context { seed, out_dir })
    }

    /// Resolves an output path: relative paths land under `--out-dir` when
    /// one was given, absolute paths are used as-is.
    pub fn out_path(&self, path: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}

pub fn load_model(path: &Path) -> Result<BlockModel> {
    config::load_model(path).with_context(|| format!("loading model {}", path.display()))
}

/// Loads a catalog from JSON, or computes one from the model when no file
/// was given.
pub fn catalog_or_compute(model: &BlockModel, path: Option<&Path>) -> Result<CompactCatalog> {
    match path {
        Some(p) => io::read_json(p, io::CATALOG_SCHEMA)
            .with_context(|| format!("loading catalog {}", p.display())),
        None => mvode::find_equilibria(model, &EquilibriaOptions::default())
            .context("cataloging equilibria"),
    }
}

/// Loads a connection-cost matrix from CSV, or minimizes one over the
/// catalog's compacts when no file was given.
pub fn costs_or_compute(
    model: &BlockModel,
    catalog: &CompactCatalog,
    path: Option<&Path>,
    opts: &QpotOptions,
) -> Result<CostMatrix> {
    match path {
        Some(p) => io::read_cost_matrix(p)
            .with_context(|| format!("loading cost matrix {}", p.display())),
        None => {
            let rows = qpot::compact_cost_matrix(model, catalog, opts, false)
                .context("minimizing the compact cost matrix")?;
            Ok(CostMatrix::new(rows)?)
        }
    }
}

/// Parses a state argument: `uniform`, `compact:<i>` (index into the
/// catalog's stable compacts), or `2rK` comma-separated weights in the flat
/// block-major layout (each block: central colors, then peripheral colors).
pub fn parse_state(
    spec: &str,
    model: &BlockModel,
    catalog: Option<&CompactCatalog>,
) -> Result<EmpiricalVector> {
    let spec = spec.trim();
    if spec.eq_ignore_ascii_case("uniform") {
        return Ok(EmpiricalVector::uniform(model.block_count(), model.colors()));
    }
    if let Some(idx) = spec.strip_prefix("compact:") {
        let idx: usize = idx.parse().with_context(|| format!("bad compact index `{idx}`"))?;
        let catalog = catalog
            .context("`compact:<i>` needs a catalog; pass --catalog or use a model command")?;
        let compacts = catalog.compacts();
        if idx >= compacts.len() {
            bail!("compact index {idx} out of range (catalog has {})", compacts.len());
        }
        return Ok(compacts[idx].clone());
    }
    let data: Vec<f64> = spec
        .split(',')
        .map(|tok| tok.trim().parse::<f64>().with_context(|| format!("bad weight `{tok}`")))
        .collect::<Result<_>>()?;
    let expected = model.block_count() * 2 * model.colors();
    if data.len() != expected {
        bail!(
            "state has {} weights, expected {expected} \
             (per block: central colors, then peripheral colors)",
            data.len()
        );
    }
    Ok(EmpiricalVector::new(model.block_count(), model.colors(), data)?)
}

/// Parses a comma-separated list of node indices.
pub fn parse_index_set(tokens: &[usize], size: usize, what: &str) -> Result<std::collections::BTreeSet<usize>> {
    let set: std::collections::BTreeSet<usize> = tokens.iter().copied().collect();
    if set.is_empty() {
        bail!("{what} must name at least one node");
    }
    if let Some(&bad) = set.iter().find(|&&i| i >= size) {
        bail!("{what} index {bad} out of range for a {size}-node matrix");
    }
    Ok(set)
}
