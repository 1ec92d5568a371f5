//! Finite-population stochastic dynamics: direct-method event simulation
//! over aggregate `(block, category, edge)` channels, online exit and
//! hitting-chain observers, a per-node reference implementation, and path
//! log-likelihoods relative to the unit-rate baseline.
//!
//! Nodes are exchangeable within a component, so the aggregate channel with
//! propensity `n_z * lambda(z -> z')` is an exact reformulation of the
//! per-node system; propensities are recomputed from the integer counts
//! after every event, so trajectories are bit-reproducible for a given
//! seed regardless of history length.

use crate::error::{Error, Result};
use crate::model::{BlockModel, Category, EmpiricalVector};
use crate::mvode::CompactCatalog;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::ControlFlow;

/// Largest-remainder apportionment of `total` items over nonnegative
/// weights (ties broken by smaller index). The result sums to `total`.
fn apportion(total: u64, weights: &[f64]) -> Vec<u64> {
    let wsum: f64 = weights.iter().sum();
    let mut out: Vec<u64> = Vec::with_capacity(weights.len());
    let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(weights.len());
    let mut assigned = 0u64;
    for (i, w) in weights.iter().enumerate() {
        let quota = total as f64 * w / wsum;
        let floor = quota.floor() as u64;
        out.push(floor);
        assigned += floor;
        fracs.push((quota - floor as f64, i));
    }
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, i) in fracs.iter().take((total - assigned) as usize) {
        out[i] += 1;
    }
    out
}

/// Integer node counts per `(block, category, color)`, in the same flat
/// layout as [`EmpiricalVector`]. Component sizes are fixed over time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationCounts {
    blocks: usize,
    colors: usize,
    /// Nodes per component, indexed `block * 2 + category`.
    sizes: Vec<u64>,
    /// Nodes per color, flat layout `(block * 2 + category) * colors + z`.
    counts: Vec<u64>,
}

impl PopulationCounts {
    /// Apportions `n` nodes to components by the model weights
    /// `alpha_j p_j^iota` and, within each component, to colors by the
    /// target empirical vector — largest remainders both times.
    pub fn from_target(model: &BlockModel, n: u64, target: &EmpiricalVector) -> Result<Self> {
        let (r, k) = (model.block_count(), model.colors());
        if target.blocks() != r || target.colors() != k {
            return Err(Error::ShapeMismatch("target shape differs from the model".into()));
        }
        let weights: Vec<f64> = (0..r)
            .flat_map(|j| Category::ALL.map(|cat| model.weight(j, cat)))
            .collect();
        let sizes = apportion(n, &weights);
        if let Some(comp) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidInput(format!(
                "population {n} leaves component {comp} empty; increase N"
            )));
        }
        let mut counts = Vec::with_capacity(2 * r * k);
        for j in 0..r {
            for cat in Category::ALL {
                let comp = target.component(j, cat);
                counts.extend(apportion(sizes[j * 2 + cat.index()], comp));
            }
        }
        Ok(PopulationCounts { blocks: r, colors: k, sizes, counts })
    }

    pub fn new(blocks: usize, colors: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != 2 * blocks * colors {
            return Err(Error::ShapeMismatch(format!(
                "expected {} counts, got {}",
                2 * blocks * colors,
                counts.len()
            )));
        }
        let sizes: Vec<u64> =
            counts.chunks(colors).map(|chunk| chunk.iter().sum()).collect();
        if let Some(comp) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidInput(format!("component {comp} has no nodes")));
        }
        Ok(PopulationCounts { blocks, colors, sizes, counts })
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn colors(&self) -> usize {
        self.colors
    }

    pub fn total(&self) -> u64 {
        self.sizes.iter().sum()
    }

    pub fn component_sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, block: usize, cat: Category, color: usize) -> u64 {
        self.counts[(block * 2 + cat.index()) * self.colors + color]
    }

    /// The empirical vector `counts / size`, exact per entry.
    pub fn empirical(&self) -> EmpiricalVector {
        let data = self
            .counts
            .chunks(self.colors)
            .zip(&self.sizes)
            .flat_map(|(chunk, &s)| chunk.iter().map(move |&c| c as f64 / s as f64))
            .collect();
        EmpiricalVector::from_raw_unchecked(self.blocks, self.colors, data)
    }

    /// Moves one node along an edge; panics if no node sits at the source.
    fn apply_jump(&mut self, block: usize, cat: Category, from: usize, to: usize) {
        let base = (block * 2 + cat.index()) * self.colors;
        assert!(self.counts[base + from] > 0, "jump from an empty color");
        self.counts[base + from] -= 1;
        self.counts[base + to] += 1;
    }
}

/// One recorded jump.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub block: usize,
    pub category: Category,
    pub from: usize,
    pub to: usize,
}

/// A complete recorded trajectory: initial counts plus the event list.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t_end: f64,
    pub seed: u64,
    pub init: PopulationCounts,
    pub events: Vec<Event>,
}

impl TrajectoryRecord {
    /// Replays the event list, yielding `(time, counts-after)` pairs
    /// starting with `(0, init)`.
    pub fn states(&self) -> impl Iterator<Item = (f64, PopulationCounts)> + '_ {
        let mut current = self.init.clone();
        std::iter::once((0.0, current.clone())).chain(self.events.iter().map(move |e| {
            current.apply_jump(e.block, e.category, e.from, e.to);
            (e.time, current.clone())
        }))
    }

    pub fn final_counts(&self) -> PopulationCounts {
        self.states().last().unwrap().1
    }
}

struct DriveOutcome {
    #[allow(dead_code)]
    counts: PopulationCounts,
    t: f64,
    events: u64,
    stopped_early: bool,
}

/// Direct-method event loop. `on_event` sees each jump and the empirical
/// state right after it; `ControlFlow::Break` stops the run.
fn drive<F>(
    model: &BlockModel,
    mut counts: PopulationCounts,
    t_end: f64,
    seed: u64,
    mut on_event: F,
) -> Result<DriveOutcome>
where
    F: FnMut(&Event, &EmpiricalVector) -> ControlFlow<()>,
{
    if counts.blocks != model.block_count() || counts.colors != model.colors() {
        return Err(Error::ShapeMismatch("population shape differs from the model".into()));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidInput(format!("t_end must be positive, got {t_end}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ev = counts.empirical();
    let chans = model.channel_count();
    let edges = model.graph().edges();
    let e_count = edges.len();
    let mut props = vec![0.0f64; chans];
    let mut t = 0.0;
    let mut events = 0u64;
    let mut stopped_early = false;
    loop {
        let mut total = 0.0;
        for j in 0..counts.blocks {
            for cat in Category::ALL {
                let base = (j * 2 + cat.index()) * counts.colors;
                for (e, &(z, _)) in edges.iter().enumerate() {
                    let n = counts.counts[base + z];
                    let ch = (j * 2 + cat.index()) * e_count + e;
                    props[ch] = if n == 0 {
                        0.0
                    } else {
                        n as f64 * model.rate(j, cat, e, &ev)
                    };
                    total += props[ch];
                }
            }
        }
        if total <= 0.0 {
            break;
        }
        let u: f64 = rng.random();
        let dt = -(1.0 - u).ln() / total;
        if t + dt >= t_end {
            t = t_end;
            break;
        }
        t += dt;
        let x = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = chans - 1;
        for (ch, &p) in props.iter().enumerate() {
            acc += p;
            if x < acc {
                pick = ch;
                break;
            }
        }
        let (j, cat, e) = model.channel_decode(pick);
        let (z, zp) = edges[e];
        counts.apply_jump(j, cat, z, zp);
        let base = (j * 2 + cat.index()) * counts.colors;
        let size = counts.sizes[j * 2 + cat.index()] as f64;
        let data = ev.data_mut();
        data[base + z] = counts.counts[base + z] as f64 / size;
        data[base + zp] = counts.counts[base + zp] as f64 / size;
        events += 1;
        let event = Event { time: t, block: j, category: cat, from: z, to: zp };
        if on_event(&event, &ev).is_break() {
            stopped_early = true;
            break;
        }
    }
    Ok(DriveOutcome { counts, t, events, stopped_early })
}

/// Simulates to `t_end`, recording every event.
pub fn simulate(
    model: &BlockModel,
    init: &PopulationCounts,
    t_end: f64,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let mut events = Vec::new();
    let outcome = drive(model, init.clone(), t_end, seed, |e, _| {
        events.push(*e);
        ControlFlow::Continue(())
    })?;
    debug_assert_eq!(outcome.events as usize, events.len());
    Ok(TrajectoryRecord { t_end, seed, init: init.clone(), events })
}

/// First-exit observation from a metric ball.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExitReport {
    /// Exit time, or `None` if the cap was reached first.
    pub exit_time: Option<f64>,
    /// Empirical state at exit.
    pub exit_state: Option<EmpiricalVector>,
    pub events: u64,
    pub t_cap: f64,
}

/// Runs until the empirical vector leaves the closed ball
/// `{product_metric(. , center) <= radius}`, or until `t_cap`.
pub fn exit_time(
    model: &BlockModel,
    init: &PopulationCounts,
    center: &EmpiricalVector,
    radius: f64,
    t_cap: f64,
    seed: u64,
) -> Result<ExitReport> {
    let mut exit: Option<(f64, EmpiricalVector)> = None;
    let outcome = drive(model, init.clone(), t_cap, seed, |e, ev| {
        if ev.product_metric(center) > radius {
            exit = Some((e.time, ev.clone()));
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    let (exit_time, exit_state) = match exit {
        Some((t, s)) => (Some(t), Some(s)),
        None => (None, None),
    };
    debug_assert!(outcome.stopped_early == exit_time.is_some());
    Ok(ExitReport { exit_time, exit_state, events: outcome.events, t_cap })
}

/// Empirical states of one trajectory at the requested times.
///
/// `times` must be finite, non-decreasing, and end above zero; the run
/// covers `[0, times.last()]` and each checkpoint reports the
/// right-continuous state (all jumps up to and including that instant
/// applied). One trajectory serves every checkpoint, so estimates taken
/// at different horizons from the same seed are paired.
pub fn states_at(
    model: &BlockModel,
    init: &PopulationCounts,
    times: &[f64],
    seed: u64,
) -> Result<Vec<EmpiricalVector>> {
    let Some(&t_end) = times.last() else {
        return Err(Error::InvalidInput("states_at needs at least one checkpoint".into()));
    };
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) || times.windows(2).any(|w| w[0] > w[1])
    {
        return Err(Error::InvalidInput(
            "checkpoint times must be finite, nonnegative, and non-decreasing".into(),
        ));
    }
    let mut out: Vec<EmpiricalVector> = Vec::with_capacity(times.len());
    let mut current = init.empirical();
    drive(model, init.clone(), t_end, seed, |e, ev| {
        while out.len() < times.len() && times[out.len()] < e.time {
            out.push(current.clone());
        }
        current = ev.clone();
        ControlFlow::Continue(())
    })?;
    while out.len() < times.len() {
        out.push(current.clone());
    }
    Ok(out)
}

/// One step of the coarse-grained visit chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainVisit {
    /// Index into the catalog's stable equilibria.
    pub compact: usize,
    /// Time the inner ball of this compact was entered.
    pub time: f64,
}

/// Observed visit chain over the catalog's stable compacts.
///
/// The process is *associated* with compact `i` from the moment it enters
/// the inner ball `B(K_i, r1)` until it first enters the inner ball of a
/// different compact; since `2 r0 <` the minimal separation and `r1 < r0`,
/// re-association necessarily happens after leaving `B(K_i, r0)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainReport {
    /// Association changes, in order; consecutive compacts differ.
    pub visits: Vec<ChainVisit>,
    pub t_end: f64,
    pub events: u64,
    /// Total time associated with each compact (unassociated head time is
    /// attributed to nothing).
    pub association_time: Vec<f64>,
    /// Total time spent strictly inside each compact's `r0`-ball.
    pub ball_time: Vec<f64>,
}

/// Simulates to `t_end`, recording the visit chain over stable compacts.
pub fn hitting_chain(
    model: &BlockModel,
    init: &PopulationCounts,
    catalog: &CompactCatalog,
    t_end: f64,
    seed: u64,
) -> Result<ChainReport> {
    let compacts: Vec<&EmpiricalVector> = catalog.compacts();
    if compacts.is_empty() {
        return Err(Error::InvalidInput("catalog has no stable compacts".into()));
    }
    let nearest_inner = |ev: &EmpiricalVector| -> Option<usize> {
        compacts.iter().position(|c| ev.product_metric(c) <= catalog.r1)
    };
    let mut visits: Vec<ChainVisit> = Vec::new();
    let mut association: Option<usize> = nearest_inner(&init.empirical());
    if let Some(c) = association {
        visits.push(ChainVisit { compact: c, time: 0.0 });
    }
    let mut association_time = vec![0.0; compacts.len()];
    let mut ball_time = vec![0.0; compacts.len()];
    let mut in_ball: Option<usize> =
        compacts.iter().position(|c| init.empirical().product_metric(c) <= catalog.r0);
    let mut last_t = 0.0;
    let outcome = drive(model, init.clone(), t_end, seed, |e, ev| {
        let dt = e.time - last_t;
        if let Some(a) = association {
            association_time[a] += dt;
        }
        if let Some(b) = in_ball {
            ball_time[b] += dt;
        }
        last_t = e.time;
        in_ball = compacts.iter().position(|c| ev.product_metric(c) <= catalog.r0);
        if let Some(c) = nearest_inner(ev) {
            if association != Some(c) {
                association = Some(c);
                visits.push(ChainVisit { compact: c, time: e.time });
            }
        }
        ControlFlow::Continue(())
    })?;
    let tail = outcome.t - last_t;
    if let Some(a) = association {
        association_time[a] += tail;
    }
    if let Some(b) = in_ball {
        ball_time[b] += tail;
    }
    Ok(ChainReport {
        visits,
        t_end: outcome.t,
        events: outcome.events,
        association_time,
        ball_time,
    })
}

/// Per-node reference simulator: every node carries its own color and each
/// `(node, out-edge)` pair is a separate exponential channel. Statistically
/// identical to [`simulate`]; linear cost per event, for cross-checks at
/// small N.
pub fn simulate_per_node(
    model: &BlockModel,
    init: &PopulationCounts,
    t_end: f64,
    seed: u64,
) -> Result<TrajectoryRecord> {
    if init.blocks != model.block_count() || init.colors != model.colors() {
        return Err(Error::ShapeMismatch("population shape differs from the model".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Node table: (block, category, current color).
    let mut nodes: Vec<(usize, Category, usize)> = Vec::new();
    for j in 0..init.blocks {
        for cat in Category::ALL {
            for z in 0..init.colors {
                for _ in 0..init.count(j, cat, z) {
                    nodes.push((j, cat, z));
                }
            }
        }
    }
    let mut counts = init.clone();
    let mut ev = counts.empirical();
    let edges = model.graph().edges();
    let mut events = Vec::new();
    let mut t = 0.0;
    loop {
        // Propensity per (node, out-edge).
        let mut total = 0.0;
        let mut weights: Vec<(usize, usize, f64)> = Vec::new();
        for (ni, &(j, cat, z)) in nodes.iter().enumerate() {
            for &e in model.graph().out_edges(z) {
                let lam = model.rate(j, cat, e, &ev);
                weights.push((ni, e, lam));
                total += lam;
            }
        }
        if total <= 0.0 {
            break;
        }
        let u: f64 = rng.random();
        let dt = -(1.0 - u).ln() / total;
        if t + dt >= t_end {
            break;
        }
        t += dt;
        let x = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = weights.len() - 1;
        for (i, &(_, _, w)) in weights.iter().enumerate() {
            acc += w;
            if x < acc {
                pick = i;
                break;
            }
        }
        let (ni, e, _) = weights[pick];
        let (j, cat, _) = nodes[ni];
        let (z, zp) = edges[e];
        nodes[ni].2 = zp;
        counts.apply_jump(j, cat, z, zp);
        let base = (j * 2 + cat.index()) * counts.colors;
        let size = counts.sizes[j * 2 + cat.index()] as f64;
        let data = ev.data_mut();
        data[base + z] = counts.counts[base + z] as f64 / size;
        data[base + zp] = counts.counts[base + zp] as f64 / size;
        events.push(Event { time: t, block: j, category: cat, from: z, to: zp });
    }
    Ok(TrajectoryRecord { t_end, seed, init: init.clone(), events })
}

/// Log-likelihood of a recorded trajectory under `model`, relative to the
/// unit-rate process on the same graph and population, decomposed by
/// component:
///
/// ```text
/// L(j, iota) = sum_{events of (j, iota)} ln lambda(state before)
///            - int_0^T sum_{(z,z') in E} n_z (lambda - 1) dt.
/// ```
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogLikelihoodReport {
    /// Indexed `block * 2 + category`.
    pub per_component: Vec<f64>,
    pub total: f64,
}

pub fn path_log_likelihood(model: &BlockModel, traj: &TrajectoryRecord) -> Result<LogLikelihoodReport> {
    let mut counts = traj.init.clone();
    if counts.blocks != model.block_count() || counts.colors != model.colors() {
        return Err(Error::ShapeMismatch("trajectory shape differs from the model".into()));
    }
    let mut ev = counts.empirical();
    let edges = model.graph().edges();
    let r = counts.blocks;
    let mut per_component = vec![0.0f64; 2 * r];
    let mut last_t = 0.0;
    // Piecewise-constant integrand between events.
    let integrand = |counts: &PopulationCounts, ev: &EmpiricalVector, acc: &mut [f64], dt: f64| {
        for j in 0..r {
            for cat in Category::ALL {
                let comp = j * 2 + cat.index();
                let base = comp * counts.colors;
                let mut s = 0.0;
                for (e, &(z, _)) in edges.iter().enumerate() {
                    let n = counts.counts[base + z];
                    if n > 0 {
                        s += n as f64 * (model.rate(j, cat, e, ev) - 1.0);
                    }
                }
                acc[comp] -= s * dt;
            }
        }
    };
    for event in &traj.events {
        if event.time < last_t || event.time > traj.t_end {
            return Err(Error::InvalidInput(format!(
                "event at t = {} outside [{last_t}, {}]",
                event.time, traj.t_end
            )));
        }
        integrand(&counts, &ev, &mut per_component, event.time - last_t);
        let e = model
            .graph()
            .edge_index(event.from, event.to)
            .ok_or_else(|| {
                Error::InvalidInput(format!("event jumps a non-edge {} -> {}", event.from, event.to))
            })?;
        let lam = model.rate(event.block, event.category, e, &ev);
        per_component[event.block * 2 + event.category.index()] += lam.ln();
        counts.apply_jump(event.block, event.category, event.from, event.to);
        let base = (event.block * 2 + event.category.index()) * counts.colors;
        let size = counts.sizes[event.block * 2 + event.category.index()] as f64;
        let data = ev.data_mut();
        data[base + event.from] = counts.counts[base + event.from] as f64 / size;
        data[base + event.to] = counts.counts[base + event.to] as f64 / size;
        last_t = event.time;
    }
    integrand(&counts, &ev, &mut per_component, traj.t_end - last_t);
    let total = per_component.iter().sum();
    Ok(LogLikelihoodReport { per_component, total })
}
