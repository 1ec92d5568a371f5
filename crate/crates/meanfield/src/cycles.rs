//! Cycle hierarchy over a cost matrix: the recursive coarsening of the
//! compact catalog into cycles of increasing rank, with the exit rates
//! and transition exponents that drive metastable passage times.
//!
//! At rank 0 every node is its own element; its exit rate is the row
//! minimum of the cost matrix, and its arrow points at the argmin.
//! Cycles of the arrow graph become the next rank's elements (elements
//! on no cycle are carried over unchanged), and the value recursion
//!
//! ```text
//! V̂(π)        = max { Ṽ(member) }                       (genuine cycles)
//! Ṽ(π₁, π₂)   = V̂(π₁) + min { Ṽ(a, b) − V̂(a) }          (a ∈ π₁, b ∈ π₂)
//! Ṽ(π₁)       = min over π₂ ≠ π₁ of Ṽ(π₁, π₂)
//! ```
//!
//! produces the next rank's pair table, exit rates, and arrows. Carried
//! elements keep their `V̂` and act as one-member sets in the pair
//! formula. The recursion stops when a rank is a single element.
//!
//! Exact ties in any selection minimum are broken toward the smallest
//! index and flagged `degenerate`: tied costs make the hierarchy
//! non-unique, so the flag warns that a different tie-break could give
//! a different decomposition.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fw::CostMatrix;
use crate::num::{Cost, TIE_TOL};

/// Arrow targets at rank 0: each node points at the cheapest other node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrowMap {
    /// `targets[i]` is the argmin of row `i` (smallest index on ties).
    pub targets: Vec<usize>,
    /// Whether any argmin was tied within [`TIE_TOL`].
    pub degenerate: bool,
}

/// One element of a hierarchy rank: a genuine cycle formed by the
/// previous rank's arrows, or an element carried over because it sat on
/// no cycle. Rank-0 elements are the base nodes themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleElement {
    /// Indices into the previous rank (empty at rank 0).
    pub members: Vec<usize>,
    /// Base nodes covered, ascending.
    pub base_nodes: Vec<usize>,
    /// True when this element was formed as a cycle at this rank; false
    /// for carried-over elements and every rank-0 singleton.
    pub genuine: bool,
    /// V̂: maximum member exit rate for genuine cycles, carried over for
    /// the rest; the row minimum at rank 0.
    pub v_hat: f64,
    /// Ṽ: exit rate, the minimum pair value against the rest of the
    /// rank. `None` only on the final single-element rank.
    pub exit_rate: Option<f64>,
    /// Index of the arrow target within the same rank; `None` only on
    /// the final rank.
    pub arrow: Option<usize>,
}

/// One rank of the hierarchy with its ordered pair table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyLevel {
    pub elements: Vec<CycleElement>,
    /// `pairs[x][y]` = Ṽ(x, y); the diagonal holds `Cost::Infinite` as a
    /// placeholder (an element never exits to itself).
    pub pairs: Vec<Vec<Cost>>,
    /// Whether any selection minimum at this rank was tied.
    pub degenerate: bool,
}

/// The full decomposition, rank 0 (base nodes) through the final
/// single-element rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleHierarchy {
    pub levels: Vec<HierarchyLevel>,
    /// True when any rank is degenerate.
    pub degenerate: bool,
}

impl CycleHierarchy {
    /// Number of coarsening steps (index of the final rank).
    pub fn height(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, rank: usize) -> &HierarchyLevel {
        &self.levels[rank]
    }
}

/// Minimum over `(index, cost)` candidates: smallest value, smallest
/// index on ties, with a flag when two candidates sit within `TIE_TOL`
/// of the minimum. `None` when no candidate is finite.
fn select_min<I>(candidates: I) -> Option<(usize, f64, bool)>
where
    I: IntoIterator<Item = (usize, Cost)> + Clone,
{
    let mut best: Option<f64> = None;
    for (_, c) in candidates.clone() {
        if let Cost::Finite(v) = c {
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    let best = best?;
    let mut chosen = None;
    let mut hits = 0usize;
    for (i, c) in candidates {
        if let Cost::Finite(v) = c {
            if v - best <= TIE_TOL {
                hits += 1;
                if chosen.is_none() {
                    chosen = Some(i);
                }
            }
        }
    }
    Some((chosen.expect("a finite minimum exists"), best, hits > 1))
}

/// Rank-0 arrows: each node points at its cheapest other node.
pub fn base_arrows(cm: &CostMatrix) -> Result<ArrowMap> {
    let n = cm.len();
    let mut targets = Vec::with_capacity(n);
    let mut degenerate = false;
    for i in 0..n {
        let candidates: Vec<(usize, Cost)> =
            (0..n).filter(|&j| j != i).map(|j| (j, cm.get(i, j))).collect();
        let (j, _, tied) = select_min(candidates.iter().copied()).ok_or_else(|| {
            Error::InvalidInput(format!("row {i} has no finite off-diagonal cost"))
        })?;
        degenerate |= tied;
        targets.push(j);
    }
    Ok(ArrowMap { targets, degenerate })
}

/// Cycles of a functional graph (every node has exactly one arrow, no
/// self-loops), each returned in walk order.
fn functional_cycles(arrows: &[usize]) -> Vec<Vec<usize>> {
    let k = arrows.len();
    let mut state = vec![0u8; k]; // 0 new, 1 on current walk, 2 finished
    let mut cycles = Vec::new();
    for start in 0..k {
        if state[start] != 0 {
            continue;
        }
        let mut walk = Vec::new();
        let mut cur = start;
        while state[cur] == 0 {
            state[cur] = 1;
            walk.push(cur);
            cur = arrows[cur];
        }
        if state[cur] == 1 {
            // The walk ran into itself: the suffix from `cur` is a new cycle.
            let at = walk.iter().position(|&x| x == cur).expect("cur is on the walk");
            cycles.push(walk[at..].to_vec());
        }
        for &x in &walk {
            state[x] = 2;
        }
    }
    cycles
}

fn is_reachable(arrows: &[usize], from: usize, to: usize) -> bool {
    let mut cur = from;
    for _ in 0..arrows.len() {
        cur = arrows[cur];
        if cur == to {
            return true;
        }
    }
    false
}

/// Guards the equivalence between functional-graph cycles and the
/// two-condition definition (closure under arrows, mutual reachability).
fn verify_cycle(arrows: &[usize], cycle: &[usize]) {
    let set: BTreeSet<usize> = cycle.iter().copied().collect();
    for &i in cycle {
        assert!(
            set.contains(&arrows[i]),
            "cycle {cycle:?} is not closed under its arrows"
        );
        for &j in cycle {
            assert!(
                i == j || is_reachable(arrows, i, j),
                "cycle {cycle:?} is not mutually reachable"
            );
        }
    }
}

/// Builds the full hierarchy. Ranks strictly shrink, so the recursion
/// always terminates within `cm.len()` steps.
pub fn build_hierarchy(cm: &CostMatrix) -> Result<CycleHierarchy> {
    let n = cm.len();
    let base = base_arrows(cm)?;
    let mut degenerate = base.degenerate;

    // Rank 0: every node is its own element, exit = row minimum.
    let mut elements = Vec::with_capacity(n);
    let mut pairs = vec![vec![Cost::Infinite; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                pairs[i][j] = cm.get(i, j);
            }
        }
        let exit = select_min((0..n).filter(|&j| j != i).map(|j| (j, cm.get(i, j))))
            .expect("base_arrows guaranteed a finite row minimum")
            .1;
        elements.push(CycleElement {
            members: Vec::new(),
            base_nodes: vec![i],
            genuine: false,
            v_hat: exit,
            exit_rate: Some(exit),
            arrow: Some(base.targets[i]),
        });
    }
    let mut levels = vec![HierarchyLevel { elements, pairs, degenerate: base.degenerate }];

    while levels.last().expect("at least rank 0").elements.len() > 1 {
        let prev = levels.last().expect("at least rank 0");
        let k = prev.elements.len();
        let arrows: Vec<usize> = prev
            .elements
            .iter()
            .map(|e| e.arrow.expect("non-final ranks carry arrows"))
            .collect();

        let cycles = functional_cycles(&arrows);
        for cycle in &cycles {
            verify_cycle(&arrows, cycle);
        }
        let on_cycle: BTreeSet<usize> = cycles.iter().flatten().copied().collect();

        // New elements: genuine cycles plus carried-over elements,
        // ordered by their smallest base node for determinism.
        let mut groups: Vec<(Vec<usize>, bool)> = cycles
            .into_iter()
            .map(|mut c| {
                c.sort_unstable();
                (c, true)
            })
            .chain((0..k).filter(|x| !on_cycle.contains(x)).map(|x| (vec![x], false)))
            .collect();
        groups.sort_by_key(|(members, _)| prev.elements[members[0]].base_nodes[0]);

        let knew = groups.len();
        assert!(knew < k, "every functional graph on >= 2 nodes has a cycle");

        let mut elements = Vec::with_capacity(knew);
        let mut level_degenerate = false;
        for (members, genuine) in &groups {
            let mut base_nodes: Vec<usize> = members
                .iter()
                .flat_map(|&a| prev.elements[a].base_nodes.iter().copied())
                .collect();
            base_nodes.sort_unstable();
            let v_hat = if *genuine {
                members
                    .iter()
                    .map(|&a| prev.elements[a].exit_rate.expect("non-final rank"))
                    .fold(f64::NEG_INFINITY, f64::max)
            } else {
                prev.elements[members[0]].v_hat
            };
            elements.push(CycleElement {
                members: members.clone(),
                base_nodes,
                genuine: *genuine,
                v_hat,
                exit_rate: None,
                arrow: None,
            });
        }

        // Pair table: Ṽ(x, y) = V̂(x) + min over member pairs of
        // Ṽ_prev(a, b) − V̂_prev(a).
        let mut pairs = vec![vec![Cost::Infinite; knew]; knew];
        for x in 0..knew {
            for y in 0..knew {
                if x == y {
                    continue;
                }
                let candidates: Vec<(usize, Cost)> = elements[x]
                    .members
                    .iter()
                    .flat_map(|&a| {
                        elements[y]
                            .members
                            .iter()
                            .map(move |&b| (0, prev.pairs[a][b] - prev.elements[a].v_hat))
                    })
                    .collect();
                if let Some((_, inner, tied)) = select_min(candidates.iter().copied()) {
                    level_degenerate |= tied;
                    debug_assert!(
                        inner > -1e-9,
                        "pair increments are nonnegative because Ṽ(a, b) >= V̂(a)"
                    );
                    pairs[x][y] = Cost::Finite(elements[x].v_hat + inner.max(0.0));
                }
            }
        }

        // Exit rates and arrows from the pair table.
        if knew > 1 {
            for x in 0..knew {
                let candidates: Vec<(usize, Cost)> =
                    (0..knew).filter(|&y| y != x).map(|y| (y, pairs[x][y])).collect();
                let (target, exit, tied) =
                    select_min(candidates.iter().copied()).ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "element {x} at rank {} has no finite exit rate",
                            levels.len()
                        ))
                    })?;
                level_degenerate |= tied;
                elements[x].exit_rate = Some(exit);
                elements[x].arrow = Some(target);
            }
        }

        degenerate |= level_degenerate;
        levels.push(HierarchyLevel { elements, pairs, degenerate: level_degenerate });
    }

    Ok(CycleHierarchy { levels, degenerate })
}

/// One element's exit forecast at a given population scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitPrediction {
    /// Rank of the element within the hierarchy.
    pub level: usize,
    /// Index of the element within its rank.
    pub element: usize,
    pub base_nodes: Vec<usize>,
    /// Ṽ: the exit-rate exponent.
    pub exit_exponent: f64,
    /// exp(scale * Ṽ); saturates to `+inf` for large exponents.
    pub expected_exit_time: f64,
    pub transitions: Vec<TransitionPrediction>,
}

/// Exponent of the probability that the exit lands on `target`:
/// Ṽ(π₁, π₂) − Ṽ(π₁), zero for the most probable target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionPrediction {
    pub target: usize,
    pub exponent: Cost,
    pub most_probable: bool,
}

/// Tabulates `exp(scale * Ṽ)` exit times and per-target transition
/// exponents for every element of every non-final rank.
pub fn exit_predictions(h: &CycleHierarchy, scale: f64) -> Result<Vec<ExitPrediction>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidInput(format!(
            "population scale must be a positive finite number, got {scale}"
        )));
    }
    let mut out = Vec::new();
    for (rank, level) in h.levels.iter().enumerate() {
        let k = level.elements.len();
        if k < 2 {
            continue; // the final rank has nothing to exit to
        }
        for (x, element) in level.elements.iter().enumerate() {
            let exit = element.exit_rate.expect("non-final ranks carry exit rates");
            let transitions = (0..k)
                .filter(|&y| y != x)
                .map(|y| {
                    let exponent = level.pairs[x][y] - exit;
                    let most_probable = match exponent {
                        Cost::Finite(v) => v <= TIE_TOL,
                        Cost::Infinite => false,
                    };
                    let exponent = match exponent {
                        Cost::Finite(v) => Cost::Finite(v.max(0.0)),
                        Cost::Infinite => Cost::Infinite,
                    };
                    TransitionPrediction { target: y, exponent, most_probable }
                })
                .collect();
            out.push(ExitPrediction {
                level: rank,
                element: x,
                base_nodes: element.base_nodes.clone(),
                exit_exponent: exit,
                expected_exit_time: (scale * exit).exp(),
                transitions,
            });
        }
    }
    Ok(out)
}
