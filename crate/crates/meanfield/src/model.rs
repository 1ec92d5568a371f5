//! Model vocabulary: color graph, block structure, rate families, and
//! empirical (probability) vectors.
//!
//! A system has `r` blocks; block `j` carries a weight `alpha_j` and splits
//! into a central and a peripheral category with fractions `p_central` /
//! `p_peripheral`. Nodes carry one of `K` colors and jump along the directed
//! admissible edge set `E` (irreducible, no self-loops). Central rates may
//! depend on the own-block central and peripheral color distributions;
//! peripheral rates on the own-block central distribution and on every
//! block's peripheral distribution.
//!
//! The state of the mean-field limit is an [`EmpiricalVector`]: `2r`
//! probability vectors of length `K`, ordered block by block, central before
//! peripheral.

use crate::error::{Error, Result};
use crate::num::{CLAMP_TOL, SIMPLEX_SUM_TOL};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Node category within a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Central,
    Peripheral,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::Central, Category::Peripheral];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Category::Central => 0,
            Category::Peripheral => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::Central => "central",
            Category::Peripheral => "peripheral",
        }
    }
}

/// Directed admissible color-transition graph on `K` colors.
///
/// Validated at construction: colors in range, no self-loops, no duplicate
/// edges, and strong connectivity (irreducibility).
#[derive(Clone, Debug, PartialEq)]
pub struct ColorGraph {
    k: usize,
    edges: Vec<(usize, usize)>,
    out: Vec<Vec<usize>>,
    index: Vec<Option<usize>>,
}

impl ColorGraph {
    pub fn new(k: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut problems = Vec::new();
        if k < 2 {
            problems.push(format!("need at least 2 colors, got {k}"));
        }
        for &(a, b) in &edges {
            if a >= k || b >= k {
                problems.push(format!("edge ({a},{b}) out of range for {k} colors"));
            } else if a == b {
                problems.push(format!("self-loop ({a},{a}) not admissible"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::InvalidModel(problems));
        }
        edges.sort_unstable();
        let before = edges.len();
        edges.dedup();
        if edges.len() != before {
            return Err(Error::InvalidModel(vec!["duplicate edges".into()]));
        }
        let mut out = vec![Vec::new(); k];
        let mut index = vec![None; k * k];
        for (i, &(a, b)) in edges.iter().enumerate() {
            out[a].push(i);
            index[a * k + b] = Some(i);
        }
        let graph = ColorGraph { k, edges, out, index };
        if !graph.strongly_connected() {
            return Err(Error::InvalidModel(vec![
                "edge set is not irreducible (colors are not mutually reachable)".into(),
            ]));
        }
        Ok(graph)
    }

    /// The complete admissible graph on `k` colors.
    pub fn complete(k: usize) -> Result<Self> {
        let mut edges = Vec::with_capacity(k * (k - 1));
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    edges.push((a, b));
                }
            }
        }
        ColorGraph::new(k, edges)
    }

    #[inline]
    pub fn colors(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Indices into `edges()` of the edges leaving color `z`.
    #[inline]
    pub fn out_edges(&self, z: usize) -> &[usize] {
        &self.out[z]
    }

    #[inline]
    pub fn edge_index(&self, from: usize, to: usize) -> Option<usize> {
        self.index[from * self.k + to]
    }

    fn strongly_connected(&self) -> bool {
        // All colors reachable from 0 along edges, and 0 reachable from all
        // colors (search along reversed edges), implies strong connectivity.
        let forward = self.reach(0, false);
        let backward = self.reach(0, true);
        forward.iter().all(|&b| b) && backward.iter().all(|&b| b)
    }

    fn reach(&self, start: usize, reversed: bool) -> Vec<bool> {
        let mut seen = vec![false; self.k];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(z) = stack.pop() {
            for &(a, b) in &self.edges {
                let (from, to) = if reversed { (b, a) } else { (a, b) };
                if from == z && !seen[to] {
                    seen[to] = true;
                    stack.push(to);
                }
            }
        }
        seen
    }
}

/// Weight and category split of one block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    /// Asymptotic share of the population, `alpha_j > 0`, summing to 1.
    pub alpha: f64,
    /// Central fraction within the block, in (0, 1).
    pub p_central: f64,
    /// Peripheral fraction within the block, in (0, 1); sums with
    /// `p_central` to 1.
    pub p_peripheral: f64,
}

/// Which probability vector a rate term reads from, relative to the block
/// whose rate is being evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasureRef {
    /// Own-block central distribution.
    OwnCentral,
    /// Own-block peripheral distribution.
    OwnPeripheral,
    /// Peripheral distribution of a specific block (peripheral rates only).
    PeripheralOf(usize),
}

/// One monomial in a rate polynomial: `coeff * product of measure entries`
/// (one or two factors).
#[derive(Clone, Debug, PartialEq)]
pub struct RateTerm {
    pub coeff: f64,
    pub factors: Vec<(MeasureRef, usize)>,
}

/// Rate function attached to one admissible edge: `max(lower, base + sum of
/// terms)`, affine-plus-quadratic in the entries of the allowed measures.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct EdgeRateFn {
    pub base: f64,
    pub terms: Vec<RateTerm>,
}

impl EdgeRateFn {
    pub fn constant(base: f64) -> Self {
        EdgeRateFn { base, terms: Vec::new() }
    }
}

/// The built-in clipped polynomial rate family.
///
/// `central[j][e]` / `peripheral[j][e]` give the rate function of edge `e`
/// for block `j`'s central / peripheral nodes. `lower` is the clipping
/// floor `c > 0`; `upper` is the uniform bound `C`, verified at model
/// construction to dominate every worst-case polynomial value so it never
/// actually clips.
#[derive(Clone, Debug, PartialEq)]
pub struct ParametricRates {
    pub lower: f64,
    pub upper: f64,
    pub central: Vec<Vec<EdgeRateFn>>,
    pub peripheral: Vec<Vec<EdgeRateFn>>,
}

/// Host extension point: arbitrary rate functions with declared bounds.
///
/// Implementations must be bounded in `[bounds().0, bounds().1]` and
/// Lipschitz in the empirical vector; the library clamps defensively at the
/// floor but otherwise trusts the declaration.
pub trait RateFamily: Send + Sync {
    fn central(&self, block: usize, edge: usize, ev: &EmpiricalVector) -> f64;
    fn peripheral(&self, block: usize, edge: usize, ev: &EmpiricalVector) -> f64;
    /// `(c, C)` with `0 < c <= C`.
    fn bounds(&self) -> (f64, f64);
}

/// Rate specification: the serializable parametric family or a custom
/// implementation supplied by the host program.
#[derive(Clone)]
pub enum RateSpec {
    Parametric(ParametricRates),
    Custom(Arc<dyn RateFamily>),
}

impl std::fmt::Debug for RateSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RateSpec::Parametric(p) => f.debug_tuple("Parametric").field(p).finish(),
            RateSpec::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Clone, Debug)]
struct CompiledTerm {
    coeff: f64,
    a: u32,
    b: u32, // u32::MAX marks a linear term
}

#[derive(Clone, Debug, Default)]
struct CompiledChannel {
    base: f64,
    terms: Vec<CompiledTerm>,
}

/// Parametric rates with measure references resolved to flat offsets into
/// `EmpiricalVector::data`, indexed by channel `(block, category, edge)`.
#[derive(Clone, Debug)]
struct CompiledRates {
    lower: f64,
    chans: Vec<CompiledChannel>,
}

impl CompiledRates {
    #[inline]
    fn eval(&self, chan: usize, data: &[f64]) -> f64 {
        let c = &self.chans[chan];
        let mut v = c.base;
        for t in &c.terms {
            let fa = data[t.a as usize];
            v += t.coeff * if t.b == u32::MAX { fa } else { fa * data[t.b as usize] };
        }
        if v < self.lower {
            self.lower
        } else {
            v
        }
    }
}

/// A complete validated model: graph, blocks, and rates.
#[derive(Clone, Debug)]
pub struct BlockModel {
    graph: ColorGraph,
    blocks: Vec<BlockSpec>,
    spec: RateSpec,
    compiled: Option<CompiledRates>,
}

impl BlockModel {
    pub fn new(graph: ColorGraph, blocks: Vec<BlockSpec>, spec: RateSpec) -> Result<Self> {
        let mut problems = Vec::new();
        if blocks.is_empty() {
            problems.push("at least one block required".to_string());
        }
        let alpha_sum: f64 = blocks.iter().map(|b| b.alpha).sum();
        if (alpha_sum - 1.0).abs() > 1e-12 {
            problems.push(format!("block weights sum to {alpha_sum}, expected 1"));
        }
        for (j, b) in blocks.iter().enumerate() {
            if !(b.alpha > 0.0) {
                problems.push(format!("block {j}: alpha must be positive"));
            }
            if !(b.p_central > 0.0 && b.p_central < 1.0) {
                problems.push(format!("block {j}: p_central must lie in (0,1)"));
            }
            if !(b.p_peripheral > 0.0 && b.p_peripheral < 1.0) {
                problems.push(format!("block {j}: p_peripheral must lie in (0,1)"));
            }
            if (b.p_central + b.p_peripheral - 1.0).abs() > 1e-12 {
                problems.push(format!("block {j}: category fractions must sum to 1"));
            }
        }
        let compiled = match &spec {
            RateSpec::Parametric(p) => {
                validate_parametric(&graph, blocks.len(), p, &mut problems);
                if problems.is_empty() {
                    Some(compile(&graph, blocks.len(), p))
                } else {
                    None
                }
            }
            RateSpec::Custom(f) => {
                let (c, big_c) = f.bounds();
                if !(c > 0.0 && big_c >= c) {
                    problems.push(format!("custom rate bounds ({c}, {big_c}) must satisfy 0 < c <= C"));
                }
                None
            }
        };
        if !problems.is_empty() {
            return Err(Error::InvalidModel(problems));
        }
        Ok(BlockModel { graph, blocks, spec, compiled })
    }

    #[inline]
    pub fn graph(&self) -> &ColorGraph {
        &self.graph
    }

    #[inline]
    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    #[inline]
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    #[inline]
    pub fn colors(&self) -> usize {
        self.graph.colors()
    }

    pub fn rate_spec(&self) -> &RateSpec {
        &self.spec
    }

    pub fn parametric(&self) -> Option<&ParametricRates> {
        match &self.spec {
            RateSpec::Parametric(p) => Some(p),
            RateSpec::Custom(_) => None,
        }
    }

    /// `(c, C)`: uniform rate bounds.
    pub fn rate_bounds(&self) -> (f64, f64) {
        match &self.spec {
            RateSpec::Parametric(p) => (p.lower, p.upper),
            RateSpec::Custom(f) => f.bounds(),
        }
    }

    /// `alpha_j * p_j^{category}`: the weight of one component in action
    /// functionals and population splits.
    #[inline]
    pub fn weight(&self, block: usize, cat: Category) -> f64 {
        let b = &self.blocks[block];
        b.alpha
            * match cat {
                Category::Central => b.p_central,
                Category::Peripheral => b.p_peripheral,
            }
    }

    /// Number of jump channels `(block, category, edge)`.
    #[inline]
    pub fn channel_count(&self) -> usize {
        2 * self.blocks.len() * self.graph.edge_count()
    }

    #[inline]
    pub fn channel_index(&self, block: usize, cat: Category, edge: usize) -> usize {
        (block * 2 + cat.index()) * self.graph.edge_count() + edge
    }

    /// Inverse of [`channel_index`](Self::channel_index).
    #[inline]
    pub fn channel_decode(&self, channel: usize) -> (usize, Category, usize) {
        let e_count = self.graph.edge_count();
        let comp = channel / e_count;
        let cat = if comp % 2 == 0 { Category::Central } else { Category::Peripheral };
        (comp / 2, cat, channel % e_count)
    }

    /// Jump rate of edge `edge` for `(block, cat)` nodes at state `ev`.
    #[inline]
    pub fn rate(&self, block: usize, cat: Category, edge: usize, ev: &EmpiricalVector) -> f64 {
        if let Some(c) = &self.compiled {
            return c.eval(self.channel_index(block, cat, edge), ev.data());
        }
        match &self.spec {
            RateSpec::Custom(f) => {
                let v = match cat {
                    Category::Central => f.central(block, edge, ev),
                    Category::Peripheral => f.peripheral(block, edge, ev),
                };
                v.max(f.bounds().0)
            }
            RateSpec::Parametric(_) => unreachable!("parametric rates are always compiled"),
        }
    }
}

fn validate_parametric(
    graph: &ColorGraph,
    r: usize,
    p: &ParametricRates,
    problems: &mut Vec<String>,
) {
    if !(p.lower > 0.0) {
        problems.push("rate floor c must be positive".into());
    }
    if p.upper < p.lower {
        problems.push(format!("rate bound C = {} below floor c = {}", p.upper, p.lower));
    }
    for (cat, table) in [(Category::Central, &p.central), (Category::Peripheral, &p.peripheral)] {
        if table.len() != r {
            problems.push(format!(
                "{} rate table has {} blocks, model has {r}",
                cat.label(),
                table.len()
            ));
            continue;
        }
        for (j, per_edge) in table.iter().enumerate() {
            if per_edge.len() != graph.edge_count() {
                problems.push(format!(
                    "{} rates for block {j}: {} entries for {} edges",
                    cat.label(),
                    per_edge.len(),
                    graph.edge_count()
                ));
                continue;
            }
            for (e, f) in per_edge.iter().enumerate() {
                // Worst case over the product of simplices: every entry <= 1,
                // so positive coefficients contribute at most themselves.
                let worst: f64 =
                    f.base + f.terms.iter().map(|t| t.coeff.max(0.0)).sum::<f64>();
                if worst > p.upper + 1e-12 {
                    problems.push(format!(
                        "{} rate for block {j} edge {e}: worst case {worst} exceeds declared bound C = {}",
                        cat.label(),
                        p.upper
                    ));
                }
                for t in &f.terms {
                    if t.factors.is_empty() || t.factors.len() > 2 {
                        problems.push(format!(
                            "{} rate for block {j} edge {e}: terms must have 1 or 2 factors",
                            cat.label()
                        ));
                    }
                    for &(m, z) in &t.factors {
                        if z >= graph.colors() {
                            problems.push(format!(
                                "{} rate for block {j} edge {e}: color {z} out of range",
                                cat.label()
                            ));
                        }
                        match m {
                            MeasureRef::PeripheralOf(i) => {
                                if cat == Category::Central {
                                    problems.push(format!(
                                        "central rate for block {j} edge {e}: may only read own-block measures"
                                    ));
                                }
                                if i >= r {
                                    problems.push(format!(
                                        "peripheral rate for block {j} edge {e}: block {i} out of range"
                                    ));
                                }
                            }
                            MeasureRef::OwnCentral | MeasureRef::OwnPeripheral => {}
                        }
                    }
                }
            }
        }
    }
}

fn compile(graph: &ColorGraph, r: usize, p: &ParametricRates) -> CompiledRates {
    let k = graph.colors();
    let ne = graph.edge_count();
    let mut chans = vec![CompiledChannel::default(); 2 * r * ne];
    for (cat, table) in [(Category::Central, &p.central), (Category::Peripheral, &p.peripheral)] {
        for (j, per_edge) in table.iter().enumerate() {
            for (e, f) in per_edge.iter().enumerate() {
                let resolve = |m: MeasureRef, z: usize| -> u32 {
                    let (block, c) = match m {
                        MeasureRef::OwnCentral => (j, Category::Central),
                        MeasureRef::OwnPeripheral => (j, Category::Peripheral),
                        MeasureRef::PeripheralOf(i) => (i, Category::Peripheral),
                    };
                    (((block * 2) + c.index()) * k + z) as u32
                };
                let terms = f
                    .terms
                    .iter()
                    .map(|t| {
                        let a = resolve(t.factors[0].0, t.factors[0].1);
                        let b = t
                            .factors
                            .get(1)
                            .map(|&(m, z)| resolve(m, z))
                            .unwrap_or(u32::MAX);
                        CompiledTerm { coeff: t.coeff, a, b }
                    })
                    .collect();
                chans[(j * 2 + cat.index()) * ne + e] = CompiledChannel { base: f.base, terms };
            }
        }
    }
    CompiledRates { lower: p.lower, chans }
}

/// State of the mean-field system: `2r` probability vectors of length `K`,
/// stored flat, block by block, central before peripheral.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEmpirical", into = "RawEmpirical")]
pub struct EmpiricalVector {
    r: usize,
    k: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawEmpirical {
    blocks: usize,
    colors: usize,
    data: Vec<f64>,
}

impl From<EmpiricalVector> for RawEmpirical {
    fn from(ev: EmpiricalVector) -> Self {
        RawEmpirical { blocks: ev.r, colors: ev.k, data: ev.data }
    }
}

impl TryFrom<RawEmpirical> for EmpiricalVector {
    type Error = String;
    fn try_from(raw: RawEmpirical) -> std::result::Result<Self, String> {
        EmpiricalVector::new(raw.blocks, raw.colors, raw.data).map_err(|e| e.to_string())
    }
}

impl EmpiricalVector {
    /// Validates and normalizes: `data` has length `2*r*k`; each component
    /// must have entries `>= -1e-12` (small negatives are clamped to 0) and
    /// sum within `1e-9` of 1, after which it is renormalized exactly.
    pub fn new(r: usize, k: usize, mut data: Vec<f64>) -> Result<Self> {
        if r == 0 || k == 0 || data.len() != 2 * r * k {
            return Err(Error::ShapeMismatch(format!(
                "empirical vector: expected {} entries for {r} blocks x {k} colors, got {}",
                2 * r * k,
                data.len()
            )));
        }
        for c in 0..2 * r {
            let comp = &mut data[c * k..(c + 1) * k];
            for v in comp.iter_mut() {
                if *v < 0.0 {
                    if *v < -CLAMP_TOL {
                        return Err(Error::InvalidInput(format!(
                            "component {c}: entry {v} below -{CLAMP_TOL}",
                        )));
                    }
                    *v = 0.0;
                }
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!("component {c}: non-finite entry")));
                }
            }
            let sum: f64 = comp.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "component {c}: sums to {sum}, expected 1 within {SIMPLEX_SUM_TOL}"
                )));
            }
            for v in comp.iter_mut() {
                *v /= sum;
            }
        }
        Ok(EmpiricalVector { r, k, data })
    }

    /// Builds from per-component slices in canonical order.
    pub fn from_components(r: usize, k: usize, comps: &[&[f64]]) -> Result<Self> {
        if comps.len() != 2 * r {
            return Err(Error::ShapeMismatch(format!(
                "expected {} components, got {}",
                2 * r,
                comps.len()
            )));
        }
        let mut data = Vec::with_capacity(2 * r * k);
        for c in comps {
            if c.len() != k {
                return Err(Error::ShapeMismatch(format!(
                    "component has {} colors, expected {k}",
                    c.len()
                )));
            }
            data.extend_from_slice(c);
        }
        EmpiricalVector::new(r, k, data)
    }

    /// All components uniform.
    pub fn uniform(r: usize, k: usize) -> Self {
        EmpiricalVector { r, k, data: vec![1.0 / k as f64; 2 * r * k] }
    }

    /// Internal constructor for callers that guarantee validity (hot paths,
    /// finite-difference probes that may leave the simplex slightly).
    pub(crate) fn from_raw_unchecked(r: usize, k: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), 2 * r * k);
        EmpiricalVector { r, k, data }
    }

    #[inline]
    pub fn blocks(&self) -> usize {
        self.r
    }

    #[inline]
    pub fn colors(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Flat offset of `(block, category)`'s first color.
    #[inline]
    pub fn offset(&self, block: usize, cat: Category) -> usize {
        (block * 2 + cat.index()) * self.k
    }

    /// One component as a slice of length `K`.
    #[inline]
    pub fn component(&self, block: usize, cat: Category) -> &[f64] {
        let o = self.offset(block, cat);
        &self.data[o..o + self.k]
    }

    /// Uniform (L-infinity) product metric: the largest absolute entry
    /// difference across all components.
    pub fn product_metric(&self, other: &EmpiricalVector) -> f64 {
        assert_eq!(
            (self.r, self.k),
            (other.r, other.k),
            "product_metric: mismatched shapes"
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(k: usize) -> ColorGraph {
        let edges = (0..k).map(|z| (z, (z + 1) % k)).collect();
        ColorGraph::new(k, edges).unwrap()
    }

    #[test]
    fn color_graph_rejects_self_loops_and_reducible_sets() {
        assert!(ColorGraph::new(2, vec![(0, 0)]).is_err());
        // One direction only: not irreducible.
        assert!(ColorGraph::new(2, vec![(0, 1)]).is_err());
        assert!(ColorGraph::new(2, vec![(0, 1), (1, 0)]).is_ok());
        // 3-ring is irreducible even without reverse edges.
        assert_eq!(ring(3).edge_count(), 3);
        // Disconnected pair of 2-cycles on 4 colors.
        assert!(ColorGraph::new(4, vec![(0, 1), (1, 0), (2, 3), (3, 2)]).is_err());
    }

    #[test]
    fn edge_lookup_matches_edge_list() {
        let g = ColorGraph::complete(3).unwrap();
        assert_eq!(g.edge_count(), 6);
        for (i, &(a, b)) in g.edges().iter().enumerate() {
            assert_eq!(g.edge_index(a, b), Some(i));
        }
        assert_eq!(g.edge_index(1, 1), None);
        assert_eq!(g.out_edges(0).len(), 2);
    }

    #[test]
    fn empirical_vector_normalizes_and_rejects() {
        // Slightly off sums inside tolerance are renormalized.
        let near = EmpiricalVector::new(1, 2, vec![0.5, 0.5 + 5e-10, 0.25, 0.75]).unwrap();
        let s: f64 = near.component(0, Category::Central).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);

        // Negative beyond the clamp tolerance fails.
        assert!(EmpiricalVector::new(1, 2, vec![-1e-6, 1.0 + 1e-6, 0.5, 0.5]).is_err());
        // Tiny negative is clamped.
        let ev = EmpiricalVector::new(1, 2, vec![-5e-13, 1.0, 0.5, 0.5]).unwrap();
        assert_eq!(ev.component(0, Category::Central)[0], 0.0);
        // Sum off by more than 1e-9 fails.
        assert!(EmpiricalVector::new(1, 2, vec![0.5, 0.6, 0.5, 0.5]).is_err());
        // Shape mismatch fails.
        assert!(EmpiricalVector::new(1, 2, vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn product_metric_is_a_metric_on_samples() {
        let a = EmpiricalVector::new(1, 2, vec![0.2, 0.8, 0.3, 0.7]).unwrap();
        let b = EmpiricalVector::new(1, 2, vec![0.25, 0.75, 0.3, 0.7]).unwrap();
        let c = EmpiricalVector::new(1, 2, vec![0.5, 0.5, 0.1, 0.9]).unwrap();
        assert_eq!(a.product_metric(&a), 0.0);
        assert!((a.product_metric(&b) - 0.05).abs() < 1e-15);
        assert_eq!(a.product_metric(&b), b.product_metric(&a));
        assert!(a.product_metric(&c) <= a.product_metric(&b) + b.product_metric(&c));
    }

    #[test]
    fn model_validates_blocks_and_rate_tables() {
        let g = ColorGraph::new(2, vec![(0, 1), (1, 0)]).unwrap();
        let blocks = vec![BlockSpec { alpha: 1.0, p_central: 0.5, p_peripheral: 0.5 }];
        let rates = ParametricRates {
            lower: 0.1,
            upper: 4.0,
            central: vec![vec![EdgeRateFn::constant(1.0), EdgeRateFn::constant(1.0)]],
            peripheral: vec![vec![EdgeRateFn::constant(1.0), EdgeRateFn::constant(1.0)]],
        };
        assert!(BlockModel::new(g.clone(), blocks.clone(), RateSpec::Parametric(rates.clone())).is_ok());

        // Bad alpha sum.
        let bad = vec![BlockSpec { alpha: 0.9, p_central: 0.5, p_peripheral: 0.5 }];
        assert!(BlockModel::new(g.clone(), bad, RateSpec::Parametric(rates.clone())).is_err());

        // Central rate referencing another block's peripheral measure.
        let mut leaky = rates.clone();
        leaky.central[0][0].terms.push(RateTerm {
            coeff: 0.1,
            factors: vec![(MeasureRef::PeripheralOf(0), 0)],
        });
        assert!(BlockModel::new(g.clone(), blocks.clone(), RateSpec::Parametric(leaky)).is_err());

        // Worst case exceeding C.
        let mut hot = rates;
        hot.central[0][0].base = 5.0;
        assert!(BlockModel::new(g, blocks, RateSpec::Parametric(hot)).is_err());
    }

    #[test]
    fn rate_evaluation_applies_floor_and_terms() {
        let g = ColorGraph::new(2, vec![(0, 1), (1, 0)]).unwrap();
        let blocks = vec![BlockSpec { alpha: 1.0, p_central: 0.5, p_peripheral: 0.5 }];
        // lambda_{0,1} = max(0.1, -1 + 2*mu_c(1) + mu_c(1)*mu_p(1))
        let f = EdgeRateFn {
            base: -1.0,
            terms: vec![
                RateTerm { coeff: 2.0, factors: vec![(MeasureRef::OwnCentral, 1)] },
                RateTerm {
                    coeff: 1.0,
                    factors: vec![(MeasureRef::OwnCentral, 1), (MeasureRef::OwnPeripheral, 1)],
                },
            ],
        };
        let rates = ParametricRates {
            lower: 0.1,
            upper: 4.0,
            central: vec![vec![f, EdgeRateFn::constant(1.0)]],
            peripheral: vec![vec![EdgeRateFn::constant(1.0), EdgeRateFn::constant(1.0)]],
        };
        let m = BlockModel::new(g, blocks, RateSpec::Parametric(rates)).unwrap();
        let ev = EmpiricalVector::new(1, 2, vec![0.2, 0.8, 0.4, 0.6]).unwrap();
        let want: f64 = -1.0 + 2.0 * 0.8 + 0.8 * 0.6;
        assert!((m.rate(0, Category::Central, 0, &ev) - want).abs() < 1e-15);

        // Floor engages when the polynomial dips below c.
        let low = EmpiricalVector::new(1, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(m.rate(0, Category::Central, 0, &low), 0.1);
        assert_eq!(m.weight(0, Category::Peripheral), 0.5);
    }
}
