//! Quasipotential estimation: the minimum action to steer the mean-field
//! limit from one state to another, over free travel time.
//!
//! The minimizer is a piecewise-linear path on `M` interior knots and a
//! uniform time grid. For each candidate duration and each starting guess
//! (straight line, plus saddle splices built from heteroclinic flow
//! segments), coordinate descent moves one knot at a time in reduced
//! simplex coordinates, scoring segments with the dual Lagrangian of
//! [`crate::action::dual_action_density`]. Forbidden balls turn a segment's
//! cost infinite, steering paths around excluded regions.

use crate::action::{self, PathGrid, RateMatrixPath};
use crate::error::{Error, Result};
use crate::model::{BlockModel, EmpiricalVector};
use crate::mvode::{self, CompactCatalog, Direction};
use crate::num::Cost;
use crate::parallel::par_map;
use serde::{Deserialize, Serialize};

/// Options for [`minimize_action`].
#[derive(Clone, Debug)]
pub struct QpotOptions {
    /// Interior knots of the candidate path.
    pub knots: usize,
    /// Candidate total durations; the best is kept.
    pub t_grid: Vec<f64>,
    /// Coordinate-descent sweep budget per candidate.
    pub max_sweeps: usize,
    /// Central-difference step for knot gradients.
    pub fd_step: f64,
    /// Stop when a sweep improves the total by less than
    /// `tol * (1 + |total|)` twice in a row.
    pub tol: f64,
    /// Closed balls `(center, radius)` the path must stay out of.
    pub avoid: Vec<(EmpiricalVector, f64)>,
    /// Saddle points used to build heteroclinic splice starts.
    pub saddles: Vec<EmpiricalVector>,
    /// RK4 step for splice flows.
    pub dt_flow: f64,
    /// Flow horizon when tracing splice halves.
    pub flow_time: f64,
}

impl Default for QpotOptions {
    fn default() -> Self {
        QpotOptions {
            knots: 28,
            t_grid: vec![4.0, 8.0, 16.0, 32.0, 64.0],
            max_sweeps: 120,
            fd_step: 1e-6,
            tol: 1e-9,
            avoid: Vec::new(),
            saddles: Vec::new(),
            dt_flow: 1e-2,
            flow_time: 200.0,
        }
    }
}

/// A minimized connection: the value, the optimal knot path, and a
/// velocity-consistent tilted-rate realization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QpotResult {
    pub value: f64,
    pub grid: PathGrid,
    pub rates: RateMatrixPath,
    pub duration: f64,
    pub converged: bool,
}

fn inside_avoid(avoid: &[(EmpiricalVector, f64)], p: &EmpiricalVector) -> bool {
    avoid.iter().any(|(c, r)| p.product_metric(c) <= *r)
}

struct Descent<'a> {
    model: &'a BlockModel,
    times: Vec<f64>,
    knots: Vec<EmpiricalVector>,
    avoid: &'a [(EmpiricalVector, f64)],
    seg_costs: Vec<f64>,
    step_mem: Vec<f64>,
}

impl<'a> Descent<'a> {
    fn new(
        model: &'a BlockModel,
        times: Vec<f64>,
        knots: Vec<EmpiricalVector>,
        avoid: &'a [(EmpiricalVector, f64)],
    ) -> Self {
        let segs = times.len() - 1;
        let mut d = Descent {
            model,
            times,
            knots,
            avoid,
            seg_costs: vec![0.0; segs],
            step_mem: vec![0.05; segs + 1],
        };
        for s in 0..segs {
            d.seg_costs[s] = d.seg_cost(s);
        }
        d
    }

    fn seg_cost(&self, s: usize) -> f64 {
        let (a, b) = (&self.knots[s], &self.knots[s + 1]);
        let dt = self.times[s + 1] - self.times[s];
        let mid_data: Vec<f64> =
            a.data().iter().zip(b.data()).map(|(x, y)| 0.5 * (x + y)).collect();
        let mid = EmpiricalVector::from_raw_unchecked(a.blocks(), a.colors(), mid_data);
        if inside_avoid(self.avoid, a) || inside_avoid(self.avoid, b) || inside_avoid(self.avoid, &mid)
        {
            return f64::INFINITY;
        }
        let v: Vec<f64> =
            a.data().iter().zip(b.data()).map(|(x, y)| (y - x) / dt).collect();
        match action::dual_action_density(self.model, &mid, &v).value {
            Cost::Finite(val) => dt * val,
            Cost::Infinite => f64::INFINITY,
        }
    }

    fn total(&self) -> f64 {
        self.seg_costs.iter().sum()
    }

    /// Local cost of the two segments adjacent to interior knot `i`, with
    /// the knot temporarily replaced by `trial`.
    fn local_with(&self, i: usize, trial: &EmpiricalVector) -> f64 {
        let cost = |a: &EmpiricalVector, b: &EmpiricalVector, s: usize| -> f64 {
            let dt = self.times[s + 1] - self.times[s];
            let mid_data: Vec<f64> =
                a.data().iter().zip(b.data()).map(|(x, y)| 0.5 * (x + y)).collect();
            let mid = EmpiricalVector::from_raw_unchecked(a.blocks(), a.colors(), mid_data);
            if inside_avoid(self.avoid, a)
                || inside_avoid(self.avoid, b)
                || inside_avoid(self.avoid, &mid)
            {
                return f64::INFINITY;
            }
            let v: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| (y - x) / dt).collect();
            match action::dual_action_density(self.model, &mid, &v).value {
                Cost::Finite(val) => dt * val,
                Cost::Infinite => f64::INFINITY,
            }
        };
        cost(&self.knots[i - 1], trial, i - 1) + cost(trial, &self.knots[i + 1], i)
    }

    /// One coordinate-descent sweep; returns the total improvement.
    fn sweep(&mut self, fd: f64) -> f64 {
        let (r, k) = (self.knots[0].blocks(), self.knots[0].colors());
        let dim = 2 * r * (k - 1);
        let mut improved = 0.0;
        for i in 1..self.knots.len() - 1 {
            let y0 = mvode::to_reduced(&self.knots[i]);
            let f0 = self.seg_costs[i - 1] + self.seg_costs[i];
            if !f0.is_finite() {
                continue;
            }
            // Central-difference gradient in reduced coordinates.
            let mut grad = vec![0.0; dim];
            let mut y = y0.clone();
            for d in 0..dim {
                y[d] = y0[d] + fd;
                let fp = self.local_with(i, &mvode::from_reduced(r, k, &y));
                y[d] = y0[d] - fd;
                let fm = self.local_with(i, &mvode::from_reduced(r, k, &y));
                y[d] = y0[d];
                grad[d] = match (fp.is_finite(), fm.is_finite()) {
                    (true, true) => (fp - fm) / (2.0 * fd),
                    (true, false) => (fp - f0) / fd,
                    (false, true) => (f0 - fm) / fd,
                    (false, false) => 0.0,
                };
            }
            let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gnorm < 1e-14 {
                continue;
            }
            // Largest feasible step keeping every color mass nonnegative.
            let mut s_max = f64::INFINITY;
            for c in 0..2 * r {
                let ys = &y0[c * (k - 1)..(c + 1) * (k - 1)];
                let gs = &grad[c * (k - 1)..(c + 1) * (k - 1)];
                for (yv, gv) in ys.iter().zip(gs) {
                    if *gv > 0.0 {
                        s_max = s_max.min(yv / gv);
                    }
                }
                let last = 1.0 - ys.iter().sum::<f64>();
                let glast = -gs.iter().sum::<f64>();
                if glast > 0.0 {
                    s_max = s_max.min(last / glast);
                }
            }
            let mut step = self.step_mem[i].min(0.9 * s_max / gnorm.max(1e-300));
            let mut accepted = false;
            for _ in 0..25 {
                if step * gnorm < 1e-16 {
                    break;
                }
                let trial_y: Vec<f64> =
                    y0.iter().zip(&grad).map(|(yv, gv)| yv - step * gv).collect();
                let trial = mvode::from_reduced(r, k, &trial_y);
                let ft = self.local_with(i, &trial);
                if ft < f0 - 1e-15 {
                    self.knots[i] = trial;
                    self.seg_costs[i - 1] = self.seg_cost(i - 1);
                    self.seg_costs[i] = self.seg_cost(i);
                    improved += f0 - (self.seg_costs[i - 1] + self.seg_costs[i]);
                    self.step_mem[i] = (step * 2.0).min(0.5);
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                self.step_mem[i] = (self.step_mem[i] * 0.5).max(1e-12);
            }
        }
        improved
    }
}

/// Resamples a polyline of states to `n` knots equally spaced in
/// cumulative product-metric arc length.
fn resample(points: &[EmpiricalVector], n: usize) -> Vec<EmpiricalVector> {
    assert!(n >= 2 && !points.is_empty());
    let mut arcs = vec![0.0];
    for w in points.windows(2) {
        let d = w[0].product_metric(&w[1]);
        arcs.push(arcs.last().unwrap() + d.max(1e-15));
    }
    let total = *arcs.last().unwrap();
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let target = total * i as f64 / (n - 1) as f64;
        while j + 1 < arcs.len() - 1 && arcs[j + 1] < target {
            j += 1;
        }
        let span = arcs[j + 1] - arcs[j];
        let s = if span > 0.0 { (target - arcs[j]) / span } else { 0.0 };
        let a = &points[j];
        let b = &points[j + 1];
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (1.0 - s.clamp(0.0, 1.0)) * x + s.clamp(0.0, 1.0) * y)
            .collect();
        out.push(EmpiricalVector::from_raw_unchecked(a.blocks(), a.colors(), data));
    }
    out
}

/// Straight-line initial knots.
fn straight_start(from: &EmpiricalVector, to: &EmpiricalVector, n: usize) -> Vec<EmpiricalVector> {
    (0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            let data = from
                .data()
                .iter()
                .zip(to.data())
                .map(|(x, y)| (1.0 - s) * x + s * y)
                .collect();
            EmpiricalVector::from_raw_unchecked(from.blocks(), from.colors(), data)
        })
        .collect()
}

/// Bowed variants of the straight chord: a sine-shaped deviation along one
/// reduced coordinate, used to start feasibly when forbidden balls sit on
/// the chord. Knots that would leave the simplex shrink their deviation.
fn bowed_starts(
    from: &EmpiricalVector,
    to: &EmpiricalVector,
    n: usize,
    bow: f64,
) -> Vec<Vec<EmpiricalVector>> {
    let (r, k) = (from.blocks(), from.colors());
    let dim = 2 * r * (k - 1);
    let straight = straight_start(from, to, n);
    let mut out = Vec::new();
    for d in 0..dim {
        for sign in [1.0, -1.0] {
            let mut knots = Vec::with_capacity(n);
            for (i, base) in straight.iter().enumerate() {
                let mut y = mvode::to_reduced(base);
                let mut dev = sign * bow * (std::f64::consts::PI * i as f64 / (n - 1) as f64).sin();
                // Shrink the deviation to stay inside the simplex.
                let comp = d / (k - 1);
                let within = &y[comp * (k - 1)..(comp + 1) * (k - 1)];
                let slack_last = 1.0 - within.iter().sum::<f64>();
                if dev > 0.0 {
                    dev = dev.min((slack_last - 1e-9).max(0.0));
                } else {
                    dev = dev.max(-(y[d] - 1e-9).max(0.0));
                }
                y[d] += dev;
                knots.push(mvode::from_reduced(r, k, &y));
            }
            out.push(knots);
        }
    }
    out
}

/// Heteroclinic splice start: ride the flow from a slight perturbation of
/// the saddle toward each endpoint, reverse the `from` half, and join.
fn splice_start(
    model: &BlockModel,
    from: &EmpiricalVector,
    to: &EmpiricalVector,
    saddle: &EmpiricalVector,
    n: usize,
    opts: &QpotOptions,
) -> Result<Option<Vec<EmpiricalVector>>> {
    let half = |target: &EmpiricalVector| -> Result<Vec<EmpiricalVector>> {
        let dist = saddle.product_metric(target);
        if dist < 1e-9 {
            return Ok(vec![saddle.clone()]);
        }
        let s = (1e-3 / dist).min(0.5);
        let start_data: Vec<f64> = saddle
            .data()
            .iter()
            .zip(target.data())
            .map(|(x, y)| (1.0 - s) * x + s * y)
            .collect();
        let start =
            EmpiricalVector::from_raw_unchecked(saddle.blocks(), saddle.colors(), start_data);
        let sol = mvode::integrate(model, &start, opts.flow_time, opts.dt_flow, Direction::Forward)?;
        let cut = sol
            .states
            .iter()
            .position(|p| p.product_metric(target) < 1e-4)
            .unwrap_or(sol.states.len() - 1);
        Ok(sol.states[..=cut].to_vec())
    };
    let down_from = half(from)?;
    let down_to = half(to)?;
    // Both halves must actually reach their attractor's vicinity for the
    // splice to be meaningful.
    if down_from.last().unwrap().product_metric(from) > 0.05
        || down_to.last().unwrap().product_metric(to) > 0.05
    {
        return Ok(None);
    }
    let mut poly: Vec<EmpiricalVector> = vec![from.clone()];
    poly.extend(down_from.iter().rev().cloned());
    poly.push(saddle.clone());
    poly.extend(down_to.iter().cloned());
    poly.push(to.clone());
    Ok(Some(resample(&poly, n)))
}

/// Minimizes the action over paths from `from` to `to`.
pub fn minimize_action(
    model: &BlockModel,
    from: &EmpiricalVector,
    to: &EmpiricalVector,
    opts: &QpotOptions,
) -> Result<QpotResult> {
    if from.blocks() != model.block_count()
        || from.colors() != model.colors()
        || to.blocks() != model.block_count()
        || to.colors() != model.colors()
    {
        return Err(Error::ShapeMismatch("endpoint shape differs from the model".into()));
    }
    if opts.knots == 0 || opts.t_grid.is_empty() {
        return Err(Error::InvalidInput("need at least one knot and one duration".into()));
    }
    if inside_avoid(&opts.avoid, from) || inside_avoid(&opts.avoid, to) {
        return Err(Error::InvalidInput("an endpoint lies inside a forbidden ball".into()));
    }
    let n = opts.knots + 2;
    let mut starts: Vec<Vec<EmpiricalVector>> = vec![straight_start(from, to, n)];
    if !opts.avoid.is_empty() {
        let max_r = opts.avoid.iter().map(|(_, r)| *r).fold(0.0f64, f64::max);
        starts.extend(bowed_starts(from, to, n, (2.5 * max_r + 0.02).min(0.2)));
    }
    for saddle in &opts.saddles {
        if let Some(knots) = splice_start(model, from, to, saddle, n, opts)? {
            starts.push(knots);
        }
    }
    let mut best: Option<(f64, Vec<f64>, Vec<EmpiricalVector>, bool)> = None;
    for &t_total in &opts.t_grid {
        if !(t_total > 0.0) {
            return Err(Error::InvalidInput(format!("durations must be positive, got {t_total}")));
        }
        let times: Vec<f64> =
            (0..n).map(|i| t_total * i as f64 / (n - 1) as f64).collect();
        for start in &starts {
            let mut descent = Descent::new(model, times.clone(), start.clone(), &opts.avoid);
            let mut flat_streak = 0;
            let mut converged = false;
            for _ in 0..opts.max_sweeps {
                let improved = descent.sweep(opts.fd_step);
                let total = descent.total();
                if !total.is_finite() {
                    break;
                }
                if improved < opts.tol * (1.0 + total.abs()) {
                    flat_streak += 1;
                    if flat_streak >= 2 {
                        converged = true;
                        break;
                    }
                } else {
                    flat_streak = 0;
                }
            }
            let total = descent.total();
            if total.is_finite()
                && best.as_ref().map_or(true, |(b, _, _, _)| total < *b)
            {
                best = Some((total, descent.times, descent.knots, converged));
            }
        }
    }
    let (value, times, knots, converged) = best.ok_or_else(|| Error::NonConvergence {
        what: "quasipotential minimization".into(),
        detail: "no candidate path had finite cost".into(),
    })?;
    let duration = times[times.len() - 1] - times[0];
    let grid = PathGrid::new(times, knots)?;
    let rates = action::tilted_rates(model, &grid)?;
    Ok(QpotResult { value, grid, rates, duration, converged })
}

/// Pairwise connection costs between the catalog's stable compacts:
/// entry `(i, j)` is the minimized action from compact `i` to compact `j`,
/// avoiding the `r1`-balls of all other compacts when `avoid_others` is
/// set. Diagonal entries are zero. Pairs are minimized in parallel.
pub fn compact_cost_matrix(
    model: &BlockModel,
    catalog: &CompactCatalog,
    opts: &QpotOptions,
    avoid_others: bool,
) -> Result<Vec<Vec<Cost>>> {
    let compacts: Vec<EmpiricalVector> =
        catalog.compacts().into_iter().cloned().collect();
    let l = compacts.len();
    if l == 0 {
        return Err(Error::InvalidInput("catalog has no stable compacts".into()));
    }
    let saddles: Vec<EmpiricalVector> = catalog.saddles().into_iter().cloned().collect();
    let pairs: Vec<(usize, usize)> =
        (0..l).flat_map(|i| (0..l).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let results = par_map(pairs.len(), |p| {
        let (i, j) = pairs[p];
        let mut o = opts.clone();
        o.saddles = saddles.clone();
        if avoid_others {
            for (k, c) in compacts.iter().enumerate() {
                if k != i && k != j {
                    o.avoid.push((c.clone(), catalog.r1));
                }
            }
        }
        minimize_action(model, &compacts[i], &compacts[j], &o)
            .map(|res| res.value)
    });
    let mut matrix = vec![vec![Cost::Finite(0.0); l]; l];
    for (p, res) in results.into_iter().enumerate() {
        let (i, j) = pairs[p];
        matrix[i][j] = match res {
            Ok(v) => Cost::Finite(v),
            Err(Error::NonConvergence { .. }) => Cost::Infinite,
            Err(e) => return Err(e),
        };
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::action as path_action;
    use crate::fixtures;
    use crate::model::Category;

    fn diag_state(x: f64) -> EmpiricalVector {
        EmpiricalVector::new(1, 2, vec![1.0 - x, x, 1.0 - x, x]).unwrap()
    }

    fn quick_opts() -> QpotOptions {
        QpotOptions { knots: 20, t_grid: vec![8.0, 16.0, 32.0], ..QpotOptions::default() }
    }

    #[test]
    fn staying_put_at_an_equilibrium_is_free() {
        let m = fixtures::two_color_bistable();
        let (lo, _) = fixtures::bistable_stable_points();
        let k = diag_state(lo);
        let res = minimize_action(&m, &k, &k, &quick_opts()).unwrap();
        assert!(res.value < 1e-12, "value {}", res.value);
    }

    #[test]
    fn downhill_motion_costs_nothing() {
        let m = fixtures::two_color_bistable();
        let (lo, _) = fixtures::bistable_stable_points();
        let res = minimize_action(&m, &diag_state(0.3), &diag_state(lo), &quick_opts()).unwrap();
        assert!(res.value < 1e-3, "downhill cost {}", res.value);
    }

    #[test]
    fn uphill_barrier_matches_the_one_dimensional_reduction() {
        let m = fixtures::two_color_bistable();
        let (lo, _) = fixtures::bistable_stable_points();
        let cat = mvode::find_equilibria(&m, &mvode::EquilibriaOptions::default()).unwrap();
        let saddles: Vec<EmpiricalVector> = cat.saddles().into_iter().cloned().collect();
        let opts = QpotOptions { saddles, ..QpotOptions::default() };
        let res = minimize_action(&m, &diag_state(lo), &diag_state(0.5), &opts).unwrap();
        let want = 0.137915;
        assert!(
            (res.value - want).abs() < 0.03 * want,
            "barrier {} vs frozen oracle {want}",
            res.value
        );
        assert!(res.converged);
        // The reported rates realize the path: consistent velocities and a
        // matching primal cost.
        assert!(res.rates.velocity_residual(&m) < 1e-8);
        let primal = path_action(&m, &res.rates).expect_finite("tilted cost");
        assert!((primal - res.value).abs() < 1e-9, "primal {primal} vs value {}", res.value);
    }

    #[test]
    fn optimal_exit_path_stays_near_the_diagonal() {
        // Both categories share the dynamics, so the cheapest climb moves
        // them together.
        let m = fixtures::two_color_bistable();
        let (lo, _) = fixtures::bistable_stable_points();
        let cat = mvode::find_equilibria(&m, &mvode::EquilibriaOptions::default()).unwrap();
        let saddles: Vec<EmpiricalVector> = cat.saddles().into_iter().cloned().collect();
        let opts = QpotOptions { saddles, ..quick_opts() };
        let res = minimize_action(&m, &diag_state(lo), &diag_state(0.5), &opts).unwrap();
        for knot in res.grid.knots() {
            let c = knot.component(0, Category::Central)[1];
            let p = knot.component(0, Category::Peripheral)[1];
            assert!((c - p).abs() < 0.05, "knot off-diagonal: {c} vs {p}");
        }
    }

    #[test]
    fn forbidden_balls_force_a_detour() {
        let m = fixtures::two_color_bistable();
        let (lo, hi) = fixtures::bistable_stable_points();
        let plain = minimize_action(&m, &diag_state(lo), &diag_state(hi), &quick_opts()).unwrap();
        let mut opts = quick_opts();
        opts.avoid = vec![(diag_state(0.5), 0.04)];
        let detour = minimize_action(&m, &diag_state(lo), &diag_state(hi), &opts).unwrap();
        assert!(
            detour.value > plain.value + 1e-4,
            "detour {} not above direct {}",
            detour.value,
            plain.value
        );
        for knot in detour.grid.knots() {
            assert!(knot.product_metric(&diag_state(0.5)) > 0.04);
        }
    }

    #[test]
    fn endpoint_inside_a_forbidden_ball_is_rejected() {
        let m = fixtures::two_color_bistable();
        let mut opts = quick_opts();
        opts.avoid = vec![(diag_state(0.3), 0.1)];
        assert!(minimize_action(&m, &diag_state(0.3), &diag_state(0.6), &opts).is_err());
    }

    #[test]
    fn cost_matrix_is_symmetric_for_the_symmetric_fixture() {
        let m = fixtures::two_color_bistable();
        let cat = mvode::find_equilibria(&m, &mvode::EquilibriaOptions::default()).unwrap();
        let opts = QpotOptions { knots: 20, t_grid: vec![16.0, 32.0, 64.0], ..QpotOptions::default() };
        let mat = compact_cost_matrix(&m, &cat, &opts, true).unwrap();
        assert_eq!(mat.len(), 2);
        assert_eq!(mat[0][0], Cost::Finite(0.0));
        let a = mat[0][1].expect_finite("V(0 -> 1)");
        let b = mat[1][0].expect_finite("V(1 -> 0)");
        // The fixture is symmetric under color exchange.
        assert!((a - b).abs() < 0.01 * a.max(b), "asymmetry: {a} vs {b}");
        // Full transitions pay the barrier and then ride downhill for free.
        assert!((a - 0.137915).abs() < 0.05 * 0.137915, "transition cost {a}");
    }
}
