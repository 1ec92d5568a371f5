//! Model configuration files.
//!
//! Models are stored as TOML with an explicit schema tag:
//!
//! ```toml
//! schema = "meanfield-model/1"
//!
//! [graph]
//! colors = 2
//! edges = [[0, 1], [1, 0]]
//!
//! [[blocks]]
//! alpha = 1.0
//! p_central = 0.5
//! p_peripheral = 0.5
//!
//! [rates]
//! lower = 0.1
//! upper = 4.0
//!
//! [[rates.shared]]            # applies to both categories
//! from = 0
//! to = 1
//! base = 0.1
//! terms = [{ coeff = 0.375, factors = [["c", 1], ["c", 1]] }]
//! ```
//!
//! Rate entries live in `rates.central`, `rates.peripheral`, or
//! `rates.shared` (both categories). An entry may name a `block`; without
//! one it applies to every block that lacks a more specific entry.
//! Category-specific entries override shared ones. Term factors reference
//! measures as `"c"` (own central), `"p"` (own peripheral), or `"p<i>"`
//! (peripheral distribution of block `i`, peripheral rates only).

use crate::error::{Error, Result};
use crate::model::{
    BlockModel, BlockSpec, ColorGraph, EdgeRateFn, MeasureRef, ParametricRates, RateSpec, RateTerm,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MODEL_SCHEMA: &str = "meanfield-model/1";

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    graph: GraphSection,
    blocks: Vec<BlockSpec>,
    rates: RatesSection,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphSection {
    colors: usize,
    edges: Vec<[usize; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RatesSection {
    lower: f64,
    upper: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    central: Vec<RateEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    peripheral: Vec<RateEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    shared: Vec<RateEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RateEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block: Option<usize>,
    from: usize,
    to: usize,
    base: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    terms: Vec<TermEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TermEntry {
    coeff: f64,
    factors: Vec<(String, usize)>,
}

fn parse_measure(s: &str) -> Result<MeasureRef> {
    match s {
        "c" => Ok(MeasureRef::OwnCentral),
        "p" => Ok(MeasureRef::OwnPeripheral),
        _ => {
            if let Some(rest) = s.strip_prefix('p') {
                if let Ok(i) = rest.parse::<usize>() {
                    return Ok(MeasureRef::PeripheralOf(i));
                }
            }
            Err(Error::InvalidInput(format!(
                "unknown measure reference {s:?} (expected \"c\", \"p\", or \"p<i>\")"
            )))
        }
    }
}

fn emit_measure(m: MeasureRef) -> String {
    match m {
        MeasureRef::OwnCentral => "c".to_string(),
        MeasureRef::OwnPeripheral => "p".to_string(),
        MeasureRef::PeripheralOf(i) => format!("p{i}"),
    }
}

fn entry_to_fn(e: &RateEntry) -> Result<EdgeRateFn> {
    let mut terms = Vec::with_capacity(e.terms.len());
    for t in &e.terms {
        let mut factors = Vec::with_capacity(t.factors.len());
        for (name, color) in &t.factors {
            factors.push((parse_measure(name)?, *color));
        }
        terms.push(RateTerm { coeff: t.coeff, factors });
    }
    Ok(EdgeRateFn { base: e.base, terms })
}

/// Parses a model from TOML text.
pub fn model_from_toml(text: &str) -> Result<BlockModel> {
    let file: ModelFile = toml::from_str(text)?;
    if file.schema != MODEL_SCHEMA {
        return Err(Error::InvalidInput(format!(
            "unsupported model schema {:?}, expected {MODEL_SCHEMA:?}",
            file.schema
        )));
    }
    let graph = ColorGraph::new(
        file.graph.colors,
        file.graph.edges.iter().map(|&[a, b]| (a, b)).collect(),
    )?;
    let r = file.blocks.len();
    let ne = graph.edge_count();

    // Resolution per (category, block, edge): category-specific block entry,
    // then category-specific template, then shared block entry, then shared
    // template.
    let lookup = |specific: &[RateEntry], j: usize, from: usize, to: usize| -> Option<RateEntry> {
        let matches = |e: &&RateEntry, want_block: Option<usize>| {
            e.from == from && e.to == to && e.block == want_block
        };
        specific
            .iter()
            .find(|e| matches(e, Some(j)))
            .or_else(|| specific.iter().find(|e| matches(e, None)))
            .or_else(|| file.rates.shared.iter().find(|e| matches(e, Some(j))))
            .or_else(|| file.rates.shared.iter().find(|e| matches(e, None)))
            .cloned()
    };

    let mut central = vec![Vec::with_capacity(ne); r];
    let mut peripheral = vec![Vec::with_capacity(ne); r];
    let mut missing = Vec::new();
    for j in 0..r {
        for &(from, to) in graph.edges() {
            match lookup(&file.rates.central, j, from, to) {
                Some(e) => central[j].push(entry_to_fn(&e)?),
                None => missing.push(format!("central rate for block {j} edge ({from},{to})")),
            }
            match lookup(&file.rates.peripheral, j, from, to) {
                Some(e) => peripheral[j].push(entry_to_fn(&e)?),
                None => missing.push(format!("peripheral rate for block {j} edge ({from},{to})")),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::InvalidModel(missing));
    }
    let rates = ParametricRates {
        lower: file.rates.lower,
        upper: file.rates.upper,
        central,
        peripheral,
    };
    BlockModel::new(graph, file.blocks, RateSpec::Parametric(rates))
}

/// Loads a model from a TOML file on disk.
pub fn load_model(path: impl AsRef<Path>) -> Result<BlockModel> {
    let text = std::fs::read_to_string(path)?;
    model_from_toml(&text)
}

/// Serializes a parametric model back to TOML (explicit per-block entries).
/// Models with custom rate functions are not serializable.
pub fn model_to_toml(model: &BlockModel) -> Result<String> {
    let rates = model.parametric().ok_or_else(|| {
        Error::InvalidInput("models with custom rate functions cannot be serialized".into())
    })?;
    let fn_to_entry = |j: usize, from: usize, to: usize, f: &EdgeRateFn| RateEntry {
        block: Some(j),
        from,
        to,
        base: f.base,
        terms: f
            .terms
            .iter()
            .map(|t| TermEntry {
                coeff: t.coeff,
                factors: t.factors.iter().map(|&(m, z)| (emit_measure(m), z)).collect(),
            })
            .collect(),
    };
    let mut central = Vec::new();
    let mut peripheral = Vec::new();
    for j in 0..model.block_count() {
        for (e, &(from, to)) in model.graph().edges().iter().enumerate() {
            central.push(fn_to_entry(j, from, to, &rates.central[j][e]));
            peripheral.push(fn_to_entry(j, from, to, &rates.peripheral[j][e]));
        }
    }
    let file = ModelFile {
        schema: MODEL_SCHEMA.to_string(),
        graph: GraphSection {
            colors: model.colors(),
            edges: model.graph().edges().iter().map(|&(a, b)| [a, b]).collect(),
        },
        blocks: model.blocks().to_vec(),
        rates: RatesSection {
            lower: rates.lower,
            upper: rates.upper,
            central,
            peripheral,
            shared: Vec::new(),
        },
    };
    toml::to_string_pretty(&file).map_err(|e| Error::InvalidInput(format!("toml encode: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Category;
    use crate::model::EmpiricalVector;

    const BISTABLE: &str = r#"
schema = "meanfield-model/1"

[graph]
colors = 2
edges = [[0, 1], [1, 0]]

[[blocks]]
alpha = 1.0
p_central = 0.5
p_peripheral = 0.5

[rates]
lower = 0.1
upper = 4.0

[[rates.shared]]
from = 0
to = 1
base = 0.1
terms = [
  { coeff = 0.375, factors = [["c", 1], ["c", 1]] },
  { coeff = 0.75,  factors = [["c", 1], ["p", 1]] },
  { coeff = 0.375, factors = [["p", 1], ["p", 1]] },
]

[[rates.shared]]
from = 1
to = 0
base = 0.1
terms = [
  { coeff = 0.375, factors = [["c", 0], ["c", 0]] },
  { coeff = 0.75,  factors = [["c", 0], ["p", 0]] },
  { coeff = 0.375, factors = [["p", 0], ["p", 0]] },
]
"#;

    #[test]
    fn parses_shared_rates_for_both_categories() {
        let m = model_from_toml(BISTABLE).unwrap();
        let ev = EmpiricalVector::new(1, 2, vec![0.3, 0.7, 0.5, 0.5]).unwrap();
        let mix1: f64 = 0.5 * 0.7 + 0.5 * 0.5;
        let want = 0.1 + 1.5 * mix1 * mix1;
        let e01 = m.graph().edge_index(0, 1).unwrap();
        assert!((m.rate(0, Category::Central, e01, &ev) - want).abs() < 1e-12);
        assert!((m.rate(0, Category::Peripheral, e01, &ev) - want).abs() < 1e-12);
    }

    #[test]
    fn round_trips_through_serialization() {
        let m = model_from_toml(BISTABLE).unwrap();
        let text = model_to_toml(&m).unwrap();
        let m2 = model_from_toml(&text).unwrap();
        let ev = EmpiricalVector::new(1, 2, vec![0.3, 0.7, 0.45, 0.55]).unwrap();
        for e in 0..2 {
            for cat in Category::ALL {
                assert_eq!(m.rate(0, cat, e, &ev), m2.rate(0, cat, e, &ev));
            }
        }
    }

    #[test]
    fn rejects_wrong_schema_and_missing_rates() {
        let bad_schema = BISTABLE.replace("meanfield-model/1", "meanfield-model/9");
        assert!(matches!(model_from_toml(&bad_schema), Err(Error::InvalidInput(_))));

        // Dropping the (1,0) entry leaves both categories without a rate.
        let cut = BISTABLE.split("[[rates.shared]]").take(2).collect::<Vec<_>>().join("[[rates.shared]]");
        match model_from_toml(&cut) {
            Err(Error::InvalidModel(problems)) => {
                assert!(problems.iter().any(|p| p.contains("(1,0)")));
            }
            other => panic!("expected InvalidModel, got {other:?}"),
        }
    }

    #[test]
    fn category_specific_entries_override_shared() {
        let text = BISTABLE.to_string()
            + r#"
[[rates.central]]
from = 0
to = 1
base = 0.9
"#;
        let m = model_from_toml(&text).unwrap();
        let ev = EmpiricalVector::uniform(1, 2);
        let e01 = m.graph().edge_index(0, 1).unwrap();
        assert!((m.rate(0, Category::Central, e01, &ev) - 0.9).abs() < 1e-15);
        // Peripheral still uses the shared quadratic: 0.1 + 1.5 * 0.25.
        assert!((m.rate(0, Category::Peripheral, e01, &ev) - 0.475).abs() < 1e-12);
    }
}
