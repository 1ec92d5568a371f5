//! Minimum-cost arrow systems (W-graphs) over a finite catalog of
//! compacts, and the exponents they induce: stability levels of the
//! invariant measure, exit and transition exponents for the metastable
//! dynamics, and the convergence constant.
//!
//! A W-graph for a sink set `W` gives every node outside `W` exactly one
//! outgoing arrow so that following arrows from any node ends in `W`
//! (no cycles). Its cost is the sum of its arrow costs, read off a
//! [`CostMatrix`] of pairwise connection costs. Every quantity in this
//! module is an exact minimum of graph costs over such a family:
//! branch-and-bound does the real work, and [`enumerate_w_graphs`]
//! provides an independent exhaustive route for cross-checks on small
//! instances. Both refuse instances with more than [`NODE_LIMIT`] nodes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{cost_min, Cost};

/// Hard cap on the node count for exhaustive W-graph search.
pub const NODE_LIMIT: usize = 9;

/// Square matrix of pairwise connection costs with zero diagonal.
///
/// Entry `(i, j)` is the cost of moving from node `i` to node `j`;
/// `Cost::Infinite` marks an impossible connection. Off-diagonal entries
/// must be nonnegative.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    n: usize,
    entries: Vec<Cost>,
}

impl CostMatrix {
    pub fn new(rows: Vec<Vec<Cost>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidInput("cost matrix needs at least one row".into()));
        }
        let mut entries = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "cost matrix row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &c) in row.iter().enumerate() {
                if let Cost::Finite(v) = c {
                    if !v.is_finite() {
                        return Err(Error::InvalidInput(format!(
                            "cost ({i}, {j}) is not a finite number; use Cost::Infinite \
                             for impossible connections"
                        )));
                    }
                    if v < 0.0 {
                        return Err(Error::InvalidInput(format!(
                            "cost ({i}, {j}) is negative: {v}"
                        )));
                    }
                }
                if i == j && c != Cost::Finite(0.0) {
                    return Err(Error::InvalidInput(format!(
                        "diagonal cost ({i}, {i}) must be zero, got {c}"
                    )));
                }
                entries.push(c);
            }
        }
        Ok(CostMatrix { n, entries })
    }

    /// Builds a matrix from plain floats, mapping `f64::INFINITY` to
    /// `Cost::Infinite`.
    pub fn from_finite(rows: &[Vec<f64>]) -> Result<Self> {
        let cost_rows = rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&v| if v == f64::INFINITY { Cost::Infinite } else { Cost::Finite(v) })
                    .collect()
            })
            .collect();
        CostMatrix::new(cost_rows)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false // a valid matrix has at least one row
    }

    pub fn get(&self, i: usize, j: usize) -> Cost {
        assert!(i < self.n && j < self.n, "cost index out of range");
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[Cost] {
        assert!(i < self.n, "cost row out of range");
        &self.entries[i * self.n..(i + 1) * self.n]
    }
}

/// One arrow assignment: `arrows[i]` is `None` for sinks and
/// `Some(target)` for the single outgoing arrow of a non-sink.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WGraph {
    arrows: Vec<Option<usize>>,
}

impl WGraph {
    /// Validates targets (in range, no self-loops) and acyclicity:
    /// following arrows from every non-sink must end at a sink.
    pub fn new(arrows: Vec<Option<usize>>) -> Result<Self> {
        let n = arrows.len();
        if n == 0 {
            return Err(Error::InvalidInput("a W-graph needs at least one node".into()));
        }
        for (i, &a) in arrows.iter().enumerate() {
            if let Some(t) = a {
                if t >= n {
                    return Err(Error::InvalidInput(format!(
                        "arrow {i} -> {t} points out of range (n = {n})"
                    )));
                }
                if t == i {
                    return Err(Error::InvalidInput(format!("arrow {i} -> {i} is a self-loop")));
                }
            }
        }
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0usize;
            while let Some(next) = arrows[cur] {
                cur = next;
                steps += 1;
                if steps > n {
                    return Err(Error::InvalidInput(format!(
                        "arrows from node {start} cycle without reaching a sink"
                    )));
                }
            }
        }
        Ok(WGraph { arrows })
    }

    pub fn len(&self) -> usize {
        self.arrows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrows.is_empty()
    }

    pub fn arrows(&self) -> &[Option<usize>] {
        &self.arrows
    }

    pub fn arrow(&self, i: usize) -> Option<usize> {
        self.arrows[i]
    }

    pub fn sinks(&self) -> BTreeSet<usize> {
        self.arrows
            .iter()
            .enumerate()
            .filter_map(|(i, a)| if a.is_none() { Some(i) } else { None })
            .collect()
    }

    /// Sum of arrow costs.
    pub fn cost(&self, costs: &CostMatrix) -> Result<Cost> {
        if costs.len() != self.arrows.len() {
            return Err(Error::ShapeMismatch(format!(
                "cost matrix has {} nodes, graph has {}",
                costs.len(),
                self.arrows.len()
            )));
        }
        let mut total = Cost::Finite(0.0);
        for (i, &a) in self.arrows.iter().enumerate() {
            if let Some(t) = a {
                total = total + costs.get(i, t);
            }
        }
        Ok(total)
    }

    /// Whether following arrows from `from` visits `target` (the terminal
    /// sink counts). `from == target` holds only when `from` is a sink.
    pub fn reaches(&self, from: usize, target: usize) -> bool {
        path_hits(&self.arrows, from, target)
    }
}

fn path_hits(arrows: &[Option<usize>], from: usize, target: usize) -> bool {
    let mut cur = from;
    while let Some(next) = arrows[cur] {
        cur = next;
        if cur == target {
            return true;
        }
    }
    cur == target
}

fn check_size(n: usize) -> Result<()> {
    if n > NODE_LIMIT {
        return Err(Error::SizeLimit(format!(
            "exhaustive W-graph search handles at most {NODE_LIMIT} nodes, got {n}"
        )));
    }
    Ok(())
}

fn check_sinks(n: usize, sinks: &BTreeSet<usize>) -> Result<()> {
    if let Some(&top) = sinks.iter().next_back() {
        if top >= n {
            return Err(Error::InvalidInput(format!(
                "sink index {top} out of range for {n} nodes"
            )));
        }
    }
    Ok(())
}

/// All W-graphs on `n` nodes with the given sink set, by exhaustive
/// enumeration. Intended for cross-checks; refuses `n > NODE_LIMIT`.
pub fn enumerate_w_graphs(n: usize, sinks: &BTreeSet<usize>) -> Result<Vec<WGraph>> {
    check_size(n)?;
    if n == 0 {
        return Err(Error::InvalidInput("a W-graph needs at least one node".into()));
    }
    check_sinks(n, sinks)?;
    let nonsinks: Vec<usize> = (0..n).filter(|m| !sinks.contains(m)).collect();
    if sinks.is_empty() && !nonsinks.is_empty() {
        return Ok(Vec::new());
    }
    let targets: Vec<Vec<usize>> = nonsinks
        .iter()
        .map(|&m| (0..n).filter(|&t| t != m).collect())
        .collect();
    let mut graphs = Vec::new();
    // Odometer over the target choices of each non-sink.
    let mut pick = vec![0usize; nonsinks.len()];
    loop {
        let mut arrows: Vec<Option<usize>> = vec![None; n];
        for (d, &m) in nonsinks.iter().enumerate() {
            arrows[m] = Some(targets[d][pick[d]]);
        }
        let acyclic = nonsinks.iter().all(|&start| {
            let mut cur = start;
            let mut steps = 0usize;
            while let Some(next) = arrows[cur] {
                cur = next;
                steps += 1;
                if steps > n {
                    return false;
                }
            }
            true
        });
        if acyclic {
            graphs.push(WGraph { arrows });
        }
        // Advance the odometer.
        let mut d = 0;
        loop {
            if d == pick.len() {
                return Ok(graphs);
            }
            pick[d] += 1;
            if pick[d] < targets[d].len() {
                break;
            }
            pick[d] = 0;
            d += 1;
        }
    }
}

/// Branch-and-bound search state for the minimum-cost W-graph.
struct Search {
    /// Non-sinks in assignment order.
    nonsinks: Vec<usize>,
    /// Finite-cost targets per non-sink, ascending by cost.
    options: Vec<Vec<(usize, f64)>>,
    /// `tail[d]` = sum of per-row minima for rows `d..`; admissible
    /// lower bound on the cost still to be paid.
    tail: Vec<f64>,
    arrows: Vec<Option<usize>>,
    /// Leaves must route `from` through `via` when present.
    constraint: Option<(usize, usize)>,
    best: f64,
}

impl Search {
    fn closes_cycle(&self, source: usize, target: usize) -> bool {
        let mut cur = target;
        loop {
            if cur == source {
                return true;
            }
            match self.arrows[cur] {
                Some(next) => cur = next,
                None => return false,
            }
        }
    }

    fn dfs(&mut self, depth: usize, partial: f64) {
        if depth == self.nonsinks.len() {
            if let Some((from, via)) = self.constraint {
                if !path_hits(&self.arrows, from, via) {
                    return;
                }
            }
            if partial < self.best {
                self.best = partial;
            }
            return;
        }
        if partial + self.tail[depth] >= self.best {
            return;
        }
        let m = self.nonsinks[depth];
        for k in 0..self.options[depth].len() {
            let (t, c) = self.options[depth][k];
            // Options are ascending in cost, so once one target breaches
            // the bound every later one does too.
            if partial + c + self.tail[depth + 1] >= self.best {
                break;
            }
            if self.closes_cycle(m, t) {
                continue;
            }
            self.arrows[m] = Some(t);
            self.dfs(depth + 1, partial + c);
            self.arrows[m] = None;
        }
    }
}

fn min_search(
    costs: &CostMatrix,
    sinks: &BTreeSet<usize>,
    constraint: Option<(usize, usize)>,
) -> Result<Cost> {
    let n = costs.len();
    check_size(n)?;
    check_sinks(n, sinks)?;
    let nonsinks: Vec<usize> = (0..n).filter(|m| !sinks.contains(m)).collect();
    if nonsinks.is_empty() {
        return Ok(Cost::Finite(0.0));
    }
    if sinks.is_empty() {
        // Every node would need an arrow, so following arrows could
        // never terminate: the family is empty.
        return Ok(Cost::Infinite);
    }
    let mut options = Vec::with_capacity(nonsinks.len());
    for &m in &nonsinks {
        let mut row: Vec<(usize, f64)> = (0..n)
            .filter(|&t| t != m)
            .filter_map(|t| costs.get(m, t).finite().map(|c| (t, c)))
            .collect();
        if row.is_empty() {
            // Node m has no finite-cost arrow, so every graph in the
            // family costs infinity.
            return Ok(Cost::Infinite);
        }
        row.sort_by(|a, b| a.1.total_cmp(&b.1));
        options.push(row);
    }
    let mut tail = vec![0.0; nonsinks.len() + 1];
    for d in (0..nonsinks.len()).rev() {
        tail[d] = tail[d + 1] + options[d][0].1;
    }
    let mut search = Search {
        nonsinks,
        options,
        tail,
        arrows: vec![None; n],
        constraint,
        best: f64::INFINITY,
    };
    search.dfs(0, 0.0);
    Ok(if search.best.is_finite() { Cost::Finite(search.best) } else { Cost::Infinite })
}

/// Minimum cost over all W-graphs with the given sink set.
/// `Infinite` when the family is empty or all its members cost infinity.
pub fn min_wgraph(costs: &CostMatrix, sinks: &BTreeSet<usize>) -> Result<Cost> {
    min_search(costs, sinks, None)
}

/// Minimum cost over W-graphs whose arrow path from `from` visits `via`
/// (as an intermediate node or as the terminal sink).
pub fn min_wgraph_via(
    costs: &CostMatrix,
    sinks: &BTreeSet<usize>,
    from: usize,
    via: usize,
) -> Result<Cost> {
    let n = costs.len();
    if from >= n || via >= n {
        return Err(Error::InvalidInput(format!(
            "route constraint ({from} -> {via}) out of range for {n} nodes"
        )));
    }
    if from == via {
        return Err(Error::InvalidInput(
            "route constraint needs two distinct nodes".into(),
        ));
    }
    if sinks.contains(&from) {
        return Err(Error::InvalidInput(format!(
            "route origin {from} is a sink and has no outgoing path"
        )));
    }
    min_search(costs, sinks, Some((from, via)))
}

/// `W(K_i)`: minimum one-sink graph cost with sink `i`, for every `i`.
pub fn w_values(costs: &CostMatrix) -> Result<Vec<Cost>> {
    (0..costs.len())
        .map(|i| min_wgraph(costs, &BTreeSet::from([i])))
        .collect()
}

/// Stability levels `s_i = W(K_i) - min_m W(K_m)`. The minimizers sit at
/// level zero; `Infinite` marks nodes that no finite-cost one-sink graph
/// selects.
pub fn stability_levels(costs: &CostMatrix) -> Result<Vec<Cost>> {
    let w = w_values(costs)?;
    let floor = cost_min(w.iter().copied()).finite().ok_or_else(|| {
        Error::InvalidInput(
            "every one-sink graph has infinite cost; the nodes are not connected".into(),
        )
    })?;
    Ok(w.into_iter().map(|c| c - floor).collect())
}

/// Convergence constant: minimum one-sink cost minus minimum two-sink
/// cost. Governs the time scale `exp(N * lambda)` beyond which the
/// process forgets its starting basin.
pub fn lambda_constant(costs: &CostMatrix) -> Result<Cost> {
    let n = costs.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "the convergence constant needs at least two nodes".into(),
        ));
    }
    let one_sink = cost_min(w_values(costs)?);
    let two_sink = cost_min(
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| min_wgraph(costs, &BTreeSet::from([i, j])))
            .collect::<Result<Vec<Cost>>>()?,
    );
    match (one_sink, two_sink) {
        (Cost::Finite(a), Cost::Finite(b)) => Ok(Cost::Finite((a - b).max(0.0))),
        (Cost::Infinite, _) => Ok(Cost::Infinite),
        (Cost::Finite(_), Cost::Infinite) => unreachable!(
            "dropping one arrow from a finite one-sink optimum yields a finite two-sink graph"
        ),
    }
}

/// Exit exponent `I_i(W)`: starting near node `i` with the set `W`
/// absorbing, the exit time scales as `exp(N * I_i(W))`.
///
/// Computed as `min-W-graph minus the best escape`: the escape may drop
/// `i` into the sink set directly or route `i` through any other
/// transient node `j` made absorbing.
pub fn exit_exponent(costs: &CostMatrix, absorbing: &BTreeSet<usize>, i: usize) -> Result<Cost> {
    let n = costs.len();
    if i >= n {
        return Err(Error::InvalidInput(format!("node {i} out of range for {n} nodes")));
    }
    if absorbing.contains(&i) {
        return Err(Error::InvalidInput(format!(
            "node {i} is absorbing; its exit exponent is not defined"
        )));
    }
    check_sinks(n, absorbing)?;
    let base = min_wgraph(costs, absorbing)?;
    let mut with_i = absorbing.clone();
    with_i.insert(i);
    let mut escape = min_wgraph(costs, &with_i)?;
    for j in 0..n {
        if j == i || absorbing.contains(&j) {
            continue;
        }
        let mut with_j = absorbing.clone();
        with_j.insert(j);
        escape = escape.min(min_wgraph_via(costs, &with_j, i, j)?);
    }
    match (base, escape) {
        (Cost::Finite(a), Cost::Finite(b)) => Ok(Cost::Finite((a - b).max(0.0))),
        (Cost::Infinite, Cost::Finite(_)) => Ok(Cost::Infinite),
        (Cost::Finite(_), Cost::Infinite) => unreachable!(
            "dropping node {i}'s arrow from a finite optimum bounds the escape cost"
        ),
        (Cost::Infinite, Cost::Infinite) => Err(Error::InvalidInput(
            "exit exponent is indeterminate: every relevant graph cost is infinite".into(),
        )),
    }
}

/// Transition exponent `I_{i,j}(W)`: with `W` absorbing, the chance that
/// the path from `i` passes `j` decays as `exp(-N * I_{i,j}(W))`. Zero
/// marks the destinations a typical exit actually selects.
pub fn transition_exponent(
    costs: &CostMatrix,
    absorbing: &BTreeSet<usize>,
    i: usize,
    j: usize,
) -> Result<Cost> {
    if absorbing.contains(&i) {
        return Err(Error::InvalidInput(format!(
            "node {i} is absorbing; its transition exponent is not defined"
        )));
    }
    check_sinks(costs.len(), absorbing)?;
    let base = min_wgraph(costs, absorbing)?;
    let via = min_wgraph_via(costs, absorbing, i, j)?;
    match (via, base) {
        (Cost::Finite(v), Cost::Finite(b)) => Ok(Cost::Finite((v - b).max(0.0))),
        (Cost::Infinite, Cost::Finite(_)) => Ok(Cost::Infinite),
        (Cost::Finite(_), Cost::Infinite) => {
            unreachable!("a route-constrained minimum cannot beat the unconstrained one")
        }
        (Cost::Infinite, Cost::Infinite) => Err(Error::InvalidInput(
            "transition exponent is indeterminate: every relevant graph cost is infinite".into(),
        )),
    }
}

/// Invariant-measure weights `proportional to exp(-scale * level_i)`,
/// normalized to sum to one. Infinite levels receive weight zero.
pub fn invariant_weights(levels: &[Cost], scale: f64) -> Result<Vec<f64>> {
    if levels.is_empty() {
        return Err(Error::InvalidInput("no levels to weight".into()));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidInput(format!(
            "weight scale must be a positive finite number, got {scale}"
        )));
    }
    let floor = cost_min(levels.iter().copied()).finite().ok_or_else(|| {
        Error::InvalidInput("all levels are infinite; weights are undefined".into())
    })?;
    let raw: Vec<f64> = levels
        .iter()
        .map(|c| match c {
            Cost::Finite(v) => (-scale * (v - floor)).exp(),
            Cost::Infinite => 0.0,
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Headline outputs of the graph analysis for a compact catalog.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphAnalysis {
    /// Minimum one-sink graph cost per node.
    pub w_values: Vec<Cost>,
    /// Stability levels relative to the deepest node.
    pub levels: Vec<Cost>,
    /// Convergence constant (one-sink minus two-sink minimum).
    pub lambda: Cost,
}

/// One-call summary: `W(K_i)`, stability levels, and the convergence
/// constant. Needs at least two nodes.
pub fn analyze(costs: &CostMatrix) -> Result<GraphAnalysis> {
    let w_values = w_values(costs)?;
    let levels = stability_levels(costs)?;
    let lambda = lambda_constant(costs)?;
    Ok(GraphAnalysis { w_values, levels, lambda })
}
