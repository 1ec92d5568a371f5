//! Reproducible multi-replica studies over a cataloged model: mean-field
//! concentration, exit-time scaling, long-run occupation fractions, and a
//! convergence (mixing) probe.
//!
//! Every report embeds the configuration and master seed that produced it,
//! and per-replica seeds are derived deterministically from that seed, so
//! re-running a report's own config reproduces it bit for bit. Replica
//! sweeps run through [`par_map`]; report assembly is sequential, so
//! results do not depend on thread count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fw;
use crate::model::{BlockModel, EmpiricalVector};
use crate::mvode::{self, CompactCatalog, Direction, OdeSolution};
use crate::num::Cost;
use crate::parallel::par_map;
use crate::qpot::{self, QpotOptions};
use crate::sim::{self, PopulationCounts};

/// SplitMix64 finalizer, used to decorrelate structured seed indices.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-replica stream: `lane` separates experiment arms
/// (population sizes, initial conditions), `idx` the replica within one.
fn derive_seed(base: u64, lane: u64, idx: u64) -> u64 {
    mix(mix(base.wrapping_add(mix(lane))).wrapping_add(idx))
}

fn validate_positive(value: f64, what: &str) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::InvalidInput(format!("{what} must be positive, got {value}")));
    }
    Ok(())
}

/// Checks that `2 r` stays below the minimal pairwise distance between the
/// catalog's stable compacts, so a radius-`r` ball around one compact
/// cannot meet another's.
fn validate_radius(catalog: &CompactCatalog, r: f64) -> Result<()> {
    validate_positive(r, "radius")?;
    let compacts = catalog.compacts();
    for (i, a) in compacts.iter().enumerate() {
        for b in compacts.iter().skip(i + 1) {
            let d = a.product_metric(b);
            if 2.0 * r >= d {
                return Err(Error::InvalidInput(format!(
                    "radius {r} too large: twice the radius must stay below the \
                     minimal compact separation {d}"
                )));
            }
        }
    }
    Ok(())
}

fn stable_point(catalog: &CompactCatalog, index: usize) -> Result<EmpiricalVector> {
    let compacts = catalog.compacts();
    compacts
        .get(index)
        .map(|p| (*p).clone())
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "compact index {index} out of range for {} stable compacts",
                compacts.len()
            ))
        })
}

// ---------------------------------------------------------------------------
// Exit-time scaling
// ---------------------------------------------------------------------------

/// Canonical exit targets on the sphere of product radius `r0` around
/// `center`: every feasible single-component color shift, and every
/// feasible simultaneous shift of all components. Each target sits at
/// product distance exactly `r0` from the center.
pub fn ball_boundary_targets(center: &EmpiricalVector, r0: f64) -> Vec<EmpiricalVector> {
    let k = center.colors();
    let comps = center.data().len() / k;
    let feasible = |data: &[f64], comp: usize, from: usize, to: usize| {
        data[comp * k + from] - r0 >= 0.0 && data[comp * k + to] + r0 <= 1.0
    };
    let shift = |data: &mut [f64], comp: usize, from: usize, to: usize| {
        data[comp * k + from] -= r0;
        data[comp * k + to] += r0;
    };
    let mut out = Vec::new();
    for from in 0..k {
        for to in (0..k).filter(|&to| to != from) {
            for comp in 0..comps {
                if feasible(center.data(), comp, from, to) {
                    let mut data = center.data().to_vec();
                    shift(&mut data, comp, from, to);
                    out.push(
                        EmpiricalVector::new(center.blocks(), k, data)
                            .expect("a feasible shift preserves the simplex"),
                    );
                }
            }
            if (0..comps).all(|comp| feasible(center.data(), comp, from, to)) {
                let mut data = center.data().to_vec();
                for comp in 0..comps {
                    shift(&mut data, comp, from, to);
                }
                out.push(
                    EmpiricalVector::new(center.blocks(), k, data)
                        .expect("a feasible shift preserves the simplex"),
                );
            }
        }
    }
    out
}

/// Quasipotential estimate of the exit exponent from the `r0`-ball of
/// `center`: the cheapest minimized connection from the center to a
/// canonical boundary target. Targets are minimized in parallel.
pub fn ball_exit_exponent(
    model: &BlockModel,
    center: &EmpiricalVector,
    r0: f64,
    opts: &QpotOptions,
) -> Result<f64> {
    validate_positive(r0, "radius")?;
    let targets = ball_boundary_targets(center, r0);
    if targets.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no feasible exit target at radius {r0} around the given center"
        )));
    }
    let values = par_map(targets.len(), |i| {
        qpot::minimize_action(model, center, &targets[i], opts).map(|r| r.value)
    });
    let mut best = f64::INFINITY;
    for v in values {
        best = best.min(v?);
    }
    Ok(best)
}

/// Exit-time scaling study: mean first-exit times from a compact's ball
/// across population sizes, against the quasipotential exponent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExitScalingConfig {
    /// Population sizes, one arm each.
    pub n_values: Vec<u64>,
    /// Replicas per population size.
    pub replicas: usize,
    /// Index into the catalog's stable compacts; replicas start there.
    pub compact: usize,
    /// Exit ball radius.
    pub r0: f64,
    /// Per-replica simulation cap; replicas still inside at the cap are
    /// censored.
    pub t_cap: f64,
    pub seed: u64,
}

/// One population-size arm of the scaling study.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExitScalingRow {
    pub n: u64,
    /// Replicas that exited before the cap.
    pub completed: usize,
    /// Replicas cut off by the cap (their times are not averaged).
    pub censored: usize,
    /// Mean exit time over completed replicas.
    pub mean_exit: Option<f64>,
    pub log_mean: Option<f64>,
    /// Delta-method standard error of `log_mean` (needs two completions).
    pub log_mean_se: Option<f64>,
}

/// Least-squares line through `(N, log mean exit time)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegressionLine {
    pub slope: f64,
    pub intercept: f64,
    /// Propagated from the per-row standard errors; `None` when any used
    /// row lacks one.
    pub slope_se: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExitScalingReport {
    pub config: ExitScalingConfig,
    /// The compact the replicas exit from.
    pub center: EmpiricalVector,
    pub rows: Vec<ExitScalingRow>,
    /// `None` with fewer than two rows carrying a log mean.
    pub regression: Option<RegressionLine>,
    /// Quasipotential estimate of the exit exponent.
    pub exponent: f64,
    /// Regression slope over the exponent, when both are available.
    pub slope_over_exponent: Option<f64>,
    /// False when any replica was censored; the report is then partial.
    pub complete: bool,
}

fn summarize_exits(n: u64, times: &[Option<f64>]) -> ExitScalingRow {
    let completed: Vec<f64> = times.iter().flatten().copied().collect();
    let m = completed.len();
    let censored = times.len() - m;
    if m == 0 {
        return ExitScalingRow {
            n,
            completed: 0,
            censored,
            mean_exit: None,
            log_mean: None,
            log_mean_se: None,
        };
    }
    let mean = completed.iter().sum::<f64>() / m as f64;
    let log_mean_se = (m >= 2).then(|| {
        let var =
            completed.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
        (var / m as f64).sqrt() / mean
    });
    ExitScalingRow {
        n,
        completed: m,
        censored,
        mean_exit: Some(mean),
        log_mean: Some(mean.ln()),
        log_mean_se,
    }
}

fn fit_line(rows: &[ExitScalingRow]) -> Option<RegressionLine> {
    let points: Vec<(f64, f64, Option<f64>)> = rows
        .iter()
        .filter_map(|r| r.log_mean.map(|y| (r.n as f64, y, r.log_mean_se)))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let m = points.len() as f64;
    let x_bar = points.iter().map(|p| p.0).sum::<f64>() / m;
    let y_bar = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - x_bar).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - x_bar) * (p.1 - y_bar)).sum();
    let slope = sxy / sxx;
    let slope_se = points
        .iter()
        .map(|p| p.2.map(|se| ((p.0 - x_bar) / sxx * se).powi(2)))
        .sum::<Option<f64>>()
        .map(f64::sqrt);
    Some(RegressionLine { slope, intercept: y_bar - slope * x_bar, slope_se })
}

/// Runs the exit-time scaling study. Replicas for all population sizes
/// run in parallel; each arm's start is the compact rounded to counts.
pub fn run_exit_scaling(
    model: &BlockModel,
    catalog: &CompactCatalog,
    opts: &QpotOptions,
    cfg: &ExitScalingConfig,
) -> Result<ExitScalingReport> {
    if cfg.n_values.is_empty() {
        return Err(Error::InvalidInput("no population sizes given".into()));
    }
    if cfg.replicas == 0 {
        return Err(Error::InvalidInput("at least one replica per size is needed".into()));
    }
    validate_radius(catalog, cfg.r0)?;
    validate_positive(cfg.t_cap, "t_cap")?;
    let center = stable_point(catalog, cfg.compact)?;
    let exponent = ball_exit_exponent(model, &center, cfg.r0, opts)?;

    let tasks: Vec<(usize, usize)> = (0..cfg.n_values.len())
        .flat_map(|ni| (0..cfg.replicas).map(move |rep| (ni, rep)))
        .collect();
    let outcomes = par_map(tasks.len(), |t| -> Result<Option<f64>> {
        let (ni, rep) = tasks[t];
        let n = cfg.n_values[ni];
        let init = PopulationCounts::from_target(model, n, &center)?;
        let seed = derive_seed(cfg.seed, n, rep as u64);
        let report = sim::exit_time(model, &init, &center, cfg.r0, cfg.t_cap, seed)?;
        Ok(report.exit_time)
    });
    let mut per_n: Vec<Vec<Option<f64>>> = vec![Vec::new(); cfg.n_values.len()];
    for (t, outcome) in outcomes.into_iter().enumerate() {
        per_n[tasks[t].0].push(outcome?);
    }
    let rows: Vec<ExitScalingRow> = cfg
        .n_values
        .iter()
        .zip(&per_n)
        .map(|(&n, times)| summarize_exits(n, times))
        .collect();
    let regression = fit_line(&rows);
    let slope_over_exponent = regression
        .as_ref()
        .and_then(|r| (exponent > 0.0).then(|| r.slope / exponent));
    let complete = rows.iter().all(|r| r.censored == 0);
    Ok(ExitScalingReport {
        config: cfg.clone(),
        center,
        rows,
        regression,
        exponent,
        slope_over_exponent,
        complete,
    })
}

// ---------------------------------------------------------------------------
// Invariant occupation
// ---------------------------------------------------------------------------

/// Long-run occupation study: one trajectory, association and ball
/// occupation per compact, compared against the stability levels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OccupationConfig {
    /// Population size.
    pub n: u64,
    /// Trajectory horizon.
    pub t_end: f64,
    /// Index into the catalog's stable compacts to start at.
    pub start: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OccupationRow {
    pub compact: usize,
    /// Share of time inside the compact's `r0`-ball.
    pub ball_fraction: f64,
    /// Share of time associated with the compact by the visit chain.
    pub association_fraction: f64,
    /// `−log(ball_fraction) / N`; `None` when the ball was never entered.
    pub rate: Option<f64>,
    /// Stability level `s_i` of the compact from the connection costs;
    /// `None` when the level is infinite (unreachable at exponential
    /// order).
    pub s_level: Option<f64>,
}

/// Two compacts are statistically resolvable at population size `N` when
/// their level gap satisfies `N · Δs ≥ 2` (occupation ratio at least
/// `e²`); the ordering check skips closer pairs.
pub const RESOLVABLE_LEVEL_GAP: f64 = 2.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OccupationReport {
    pub config: OccupationConfig,
    pub rows: Vec<OccupationRow>,
    /// Association switches observed along the trajectory.
    pub switches: usize,
    /// True when ball occupations order opposite to the `s` levels over
    /// every resolvable pair (see [`RESOLVABLE_LEVEL_GAP`]).
    pub ordering_consistent: bool,
}

/// Runs the occupation study. `costs` are the pairwise connection costs
/// between the catalog's stable compacts, in catalog order.
pub fn run_invariant_occupation(
    model: &BlockModel,
    catalog: &CompactCatalog,
    costs: &fw::CostMatrix,
    cfg: &OccupationConfig,
) -> Result<OccupationReport> {
    let l = catalog.compacts().len();
    if costs.len() != l {
        return Err(Error::ShapeMismatch(format!(
            "cost matrix covers {} compacts, catalog has {l}",
            costs.len()
        )));
    }
    if cfg.n == 0 {
        return Err(Error::InvalidInput("population size must be positive".into()));
    }
    validate_positive(cfg.t_end, "t_end")?;
    let start = stable_point(catalog, cfg.start)?;
    let levels = fw::stability_levels(costs)?;
    let init = PopulationCounts::from_target(model, cfg.n, &start)?;
    let chain = sim::hitting_chain(model, &init, catalog, cfg.t_end, cfg.seed)?;
    let rows: Vec<OccupationRow> = (0..l)
        .map(|i| {
            let ball_fraction = chain.ball_time[i] / chain.t_end;
            OccupationRow {
                compact: i,
                ball_fraction,
                association_fraction: chain.association_time[i] / chain.t_end,
                rate: (ball_fraction > 0.0).then(|| -ball_fraction.ln() / cfg.n as f64),
                s_level: levels[i].finite(),
            }
        })
        .collect();
    let n = cfg.n as f64;
    let level_of = |row: &OccupationRow| row.s_level.unwrap_or(f64::INFINITY);
    let ordering_consistent = rows.iter().all(|a| {
        rows.iter()
            .filter(|b| (level_of(b) - level_of(a)) * n >= RESOLVABLE_LEVEL_GAP)
            .all(|b| a.ball_fraction > b.ball_fraction)
    });
    Ok(OccupationReport {
        config: cfg.clone(),
        rows,
        switches: chain.visits.len().saturating_sub(1),
        ordering_consistent,
    })
}

// ---------------------------------------------------------------------------
// Convergence probe
// ---------------------------------------------------------------------------

/// Mixing probe: empirical averages of a panel of bounded functionals at
/// growing horizons, from two initial conditions. A qualitative trend
/// probe — the gaps and the critical constant are reported side by side,
/// nothing sharper.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Population size.
    pub n: u64,
    /// Checkpoint horizons, non-decreasing; typically geometric.
    pub horizons: Vec<f64>,
    /// Replicas per initial condition.
    pub replicas: usize,
    /// First initial condition; the catalog's first compact when absent.
    pub init_a: Option<EmpiricalVector>,
    /// Second initial condition; the catalog's last compact when absent.
    pub init_b: Option<EmpiricalVector>,
    pub seed: u64,
}

/// One functional's gap between the two initial conditions at one horizon.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FunctionalGap {
    pub functional: String,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `|mean_a − mean_b|`.
    pub gap: f64,
    /// Combined Monte Carlo standard error of the gap.
    pub noise: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeRow {
    pub horizon: f64,
    pub gaps: Vec<FunctionalGap>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub config: ProbeConfig,
    pub init_a: EmpiricalVector,
    pub init_b: EmpiricalVector,
    /// Panel labels: every measure coordinate, then one ball indicator
    /// per compact.
    pub functionals: Vec<String>,
    pub rows: Vec<ProbeRow>,
    /// Critical constant of the connection costs (zero for one compact).
    pub lambda: Cost,
    /// `exp(N·Λ)`, the horizon scale where basin mixing is expected;
    /// `None` when it overflows or Λ is infinite.
    pub mixing_scale: Option<f64>,
}

fn probe_panel(model: &BlockModel, compacts: usize) -> Vec<String> {
    let mut labels = crate::io::measure_headers(model);
    labels.extend((0..compacts).map(|i| format!("in_gamma_{i}")));
    labels
}

fn evaluate_panel(
    state: &EmpiricalVector,
    compacts: &[EmpiricalVector],
    r0: f64,
    out: &mut Vec<f64>,
) {
    out.extend_from_slice(state.data());
    out.extend(
        compacts
            .iter()
            .map(|c| if state.product_metric(c) <= r0 { 1.0 } else { 0.0 }),
    );
}

/// Runs the convergence probe. One trajectory per replica serves every
/// horizon, so the per-horizon estimates are paired within a replica.
pub fn run_convergence_probe(
    model: &BlockModel,
    catalog: &CompactCatalog,
    costs: &fw::CostMatrix,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let compacts: Vec<EmpiricalVector> =
        catalog.compacts().into_iter().cloned().collect();
    let l = compacts.len();
    if costs.len() != l {
        return Err(Error::ShapeMismatch(format!(
            "cost matrix covers {} compacts, catalog has {l}",
            costs.len()
        )));
    }
    if cfg.replicas < 2 {
        return Err(Error::InvalidInput(
            "the probe needs at least two replicas per initial condition".into(),
        ));
    }
    if cfg.horizons.is_empty() {
        return Err(Error::InvalidInput("no horizons given".into()));
    }
    if cfg.n == 0 {
        return Err(Error::InvalidInput("population size must be positive".into()));
    }
    let init_a = match &cfg.init_a {
        Some(p) => p.clone(),
        None => stable_point(catalog, 0)?,
    };
    let init_b = match &cfg.init_b {
        Some(p) => p.clone(),
        None => stable_point(catalog, l.saturating_sub(1))?,
    };
    let lambda = if l == 1 { Cost::Finite(0.0) } else { fw::lambda_constant(costs)? };
    let mixing_scale = match lambda {
        Cost::Finite(v) => {
            let scale = (cfg.n as f64 * v).exp();
            scale.is_finite().then_some(scale)
        }
        Cost::Infinite => None,
    };

    let labels = probe_panel(model, l);
    let sides = [&init_a, &init_b];
    let tasks: Vec<(usize, usize)> = (0..2)
        .flat_map(|side| (0..cfg.replicas).map(move |rep| (side, rep)))
        .collect();
    let panels = par_map(tasks.len(), |t| -> Result<Vec<Vec<f64>>> {
        let (side, rep) = tasks[t];
        let init = PopulationCounts::from_target(model, cfg.n, sides[side])?;
        let seed = derive_seed(cfg.seed, side as u64, rep as u64);
        let states = sim::states_at(model, &init, &cfg.horizons, seed)?;
        Ok(states
            .iter()
            .map(|s| {
                let mut row = Vec::with_capacity(labels.len());
                evaluate_panel(s, &compacts, catalog.r0, &mut row);
                row
            })
            .collect())
    });
    let mut by_side: [Vec<Vec<Vec<f64>>>; 2] = [Vec::new(), Vec::new()];
    for (t, panel) in panels.into_iter().enumerate() {
        by_side[tasks[t].0].push(panel?);
    }

    let r = cfg.replicas as f64;
    let mean_and_se = |side: &[Vec<Vec<f64>>], h: usize, f: usize| -> (f64, f64) {
        let mean = side.iter().map(|p| p[h][f]).sum::<f64>() / r;
        let var = side.iter().map(|p| (p[h][f] - mean).powi(2)).sum::<f64>() / (r - 1.0);
        (mean, (var / r).sqrt())
    };
    let rows: Vec<ProbeRow> = (0..cfg.horizons.len())
        .map(|h| ProbeRow {
            horizon: cfg.horizons[h],
            gaps: (0..labels.len())
                .map(|f| {
                    let (mean_a, se_a) = mean_and_se(&by_side[0], h, f);
                    let (mean_b, se_b) = mean_and_se(&by_side[1], h, f);
                    FunctionalGap {
                        functional: labels[f].clone(),
                        mean_a,
                        mean_b,
                        gap: (mean_a - mean_b).abs(),
                        noise: se_a.hypot(se_b),
                    }
                })
                .collect(),
        })
        .collect();
    Ok(ProbeReport {
        config: cfg.clone(),
        init_a,
        init_b,
        functionals: labels,
        rows,
        lambda,
        mixing_scale,
    })
}

// ---------------------------------------------------------------------------
// Mean-field concentration
// ---------------------------------------------------------------------------

/// Concentration study: per-replica sup-over-time distance between the
/// empirical path and the mean-field flow from the same start.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConcentrationConfig {
    /// Population size.
    pub n: u64,
    /// Horizon.
    pub t_end: f64,
    pub replicas: usize,
    /// Common initial condition (replicas start at its rounding).
    pub init: EmpiricalVector,
    /// RK4 step for the reference flow.
    pub dt: f64,
    /// Pass threshold on the sup distance.
    pub threshold: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub config: ConcentrationConfig,
    /// Per-replica sup over time of the product metric to the flow.
    pub sup_distances: Vec<f64>,
    /// Replicas whose sup distance stayed within the threshold.
    pub within: usize,
}

fn flow_state_near(sol: &OdeSolution, t: f64) -> &EmpiricalVector {
    let i = sol.times.partition_point(|&x| x < t);
    let pick = if i == 0 {
        0
    } else if i >= sol.times.len() {
        sol.times.len() - 1
    } else if t - sol.times[i - 1] <= sol.times[i] - t {
        i - 1
    } else {
        i
    };
    &sol.states[pick]
}

/// Runs the concentration study: the sup distance is sampled just before
/// and just after every jump and at the horizon, which brackets the
/// piecewise-constant empirical path against the continuous flow.
pub fn run_concentration(
    model: &BlockModel,
    cfg: &ConcentrationConfig,
) -> Result<ConcentrationReport> {
    if cfg.replicas == 0 {
        return Err(Error::InvalidInput("at least one replica is needed".into()));
    }
    if cfg.n == 0 {
        return Err(Error::InvalidInput("population size must be positive".into()));
    }
    validate_positive(cfg.t_end, "t_end")?;
    validate_positive(cfg.threshold, "threshold")?;
    let flow = mvode::integrate(model, &cfg.init, cfg.t_end, cfg.dt, Direction::Forward)?;
    let sup_distances = par_map(cfg.replicas, |rep| -> Result<f64> {
        let init = PopulationCounts::from_target(model, cfg.n, &cfg.init)?;
        let seed = derive_seed(cfg.seed, 0, rep as u64);
        let traj = sim::simulate(model, &init, cfg.t_end, seed)?;
        let mut sup: f64 = 0.0;
        let mut prev = init.empirical();
        for (t, counts) in traj.states() {
            let reference = flow_state_near(&flow, t);
            let after = counts.empirical();
            sup = sup.max(prev.product_metric(reference));
            sup = sup.max(after.product_metric(reference));
            prev = after;
        }
        sup = sup.max(prev.product_metric(flow.final_state()));
        Ok(sup)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let within = sup_distances.iter().filter(|d| **d <= cfg.threshold).count();
    Ok(ConcentrationReport { config: cfg.clone(), sup_distances, within })
}
