//! Path-space action functional: primal (rate-based) and dual (potential-
//! based) evaluation, the explicit transport construction joining two
//! states, time rescaling, and mass-flux bounds.
//!
//! A controlled path is a piecewise-linear [`PathGrid`] together with
//! per-segment controlled jump rates ([`RateMatrixPath`]). Its cost is
//!
//! ```text
//! S = sum_seg dt * sum_{j,iota} alpha_j p_j^iota
//!        sum_{(z,z') in E} mu(z) lambda(z,z') tau_star(l(z,z')/lambda - 1)
//! ```
//!
//! with `mu` and `lambda` frozen at the segment midpoint. The infimum of
//! that cost over all nonnegative rate fields reproducing the segment
//! velocity equals a dual supremum over per-color potentials, evaluated by
//! [`dual_action_density`]; the maximizing potential yields the optimal
//! tilted rates `l = lambda * exp(phi(z') - phi(z))`.

use crate::error::{Error, Result};
use crate::model::{BlockModel, Category, EmpiricalVector};
use crate::num::Cost;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// `tau(u) = e^u - u - 1`, the log-Laplace residual of a unit Poisson jump.
pub fn tau(u: f64) -> f64 {
    u.exp() - u - 1.0
}

/// Legendre transform of [`tau`]: `(u+1) ln(u+1) - u` for `u > -1`, `1` at
/// `u = -1`, infinite below.
pub fn tau_star(u: f64) -> f64 {
    if u > -1.0 {
        (u + 1.0) * (u + 1.0).ln() - u
    } else if u == -1.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// A piecewise-linear path through the product of simplices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathGrid {
    times: Vec<f64>,
    knots: Vec<EmpiricalVector>,
}

impl PathGrid {
    pub fn new(times: Vec<f64>, knots: Vec<EmpiricalVector>) -> Result<Self> {
        if times.len() != knots.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} times vs {} knots",
                times.len(),
                knots.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::InvalidInput("a path needs at least two knots".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("knot times must be strictly increasing".into()));
        }
        let (r, k) = (knots[0].blocks(), knots[0].colors());
        if knots.iter().any(|p| p.blocks() != r || p.colors() != k) {
            return Err(Error::ShapeMismatch("knots with mixed shapes".into()));
        }
        Ok(PathGrid { times, knots })
    }

    /// A two-knot straight segment traversed in time `t`.
    pub fn straight(from: EmpiricalVector, to: EmpiricalVector, t: f64) -> Result<Self> {
        PathGrid::new(vec![0.0, t], vec![from, to])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn knots(&self) -> &[EmpiricalVector] {
        &self.knots
    }

    pub fn segments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn dt(&self, seg: usize) -> f64 {
        self.times[seg + 1] - self.times[seg]
    }

    pub fn first(&self) -> &EmpiricalVector {
        &self.knots[0]
    }

    pub fn last(&self) -> &EmpiricalVector {
        self.knots.last().unwrap()
    }

    /// Segment midpoint state.
    pub fn midpoint(&self, seg: usize) -> EmpiricalVector {
        convex(&self.knots[seg], &self.knots[seg + 1], 0.5)
    }

    /// Per-coordinate segment velocity, flat layout.
    pub fn velocity(&self, seg: usize) -> Vec<f64> {
        let dt = self.dt(seg);
        self.knots[seg]
            .data()
            .iter()
            .zip(self.knots[seg + 1].data())
            .map(|(a, b)| (b - a) / dt)
            .collect()
    }

    /// Linear interpolation at an arbitrary time (clamped to the span).
    pub fn state_at(&self, t: f64) -> EmpiricalVector {
        if t <= self.times[0] {
            return self.knots[0].clone();
        }
        if t >= *self.times.last().unwrap() {
            return self.knots.last().unwrap().clone();
        }
        let seg = match self.times.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.knots[i].clone(),
            Err(i) => i - 1,
        };
        let s = (t - self.times[seg]) / self.dt(seg);
        convex(&self.knots[seg], &self.knots[seg + 1], s)
    }
}

impl From<&crate::mvode::OdeSolution> for PathGrid {
    fn from(sol: &crate::mvode::OdeSolution) -> Self {
        PathGrid { times: sol.times.clone(), knots: sol.states.clone() }
    }
}

fn convex(a: &EmpiricalVector, b: &EmpiricalVector, s: f64) -> EmpiricalVector {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| (1.0 - s) * x + s * y).collect();
    EmpiricalVector::from_raw_unchecked(a.blocks(), a.colors(), data)
}

/// A path plus piecewise-constant controlled rates, one row per segment in
/// the flat channel layout `(block * 2 + category) * |E| + edge`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateMatrixPath {
    pub grid: PathGrid,
    pub rates: Vec<Vec<f64>>,
}

impl RateMatrixPath {
    pub fn new(model: &BlockModel, grid: PathGrid, rates: Vec<Vec<f64>>) -> Result<Self> {
        let chans = model.channel_count();
        if rates.len() != grid.segments() {
            return Err(Error::ShapeMismatch(format!(
                "{} rate rows vs {} segments",
                rates.len(),
                grid.segments()
            )));
        }
        if rates.iter().any(|row| row.len() != chans) {
            return Err(Error::ShapeMismatch(format!("rate rows must have {chans} channels")));
        }
        if rates.iter().flatten().any(|&l| !(l >= 0.0)) {
            return Err(Error::InvalidInput("controlled rates must be nonnegative".into()));
        }
        Ok(RateMatrixPath { grid, rates })
    }

    /// Largest deviation, over segments and coordinates, between the rate
    /// flux at the segment midpoint and the segment velocity.
    pub fn velocity_residual(&self, model: &BlockModel) -> f64 {
        let mut worst = 0.0f64;
        for seg in 0..self.grid.segments() {
            let mid = self.grid.midpoint(seg);
            let flux = rate_flux(model, &mid, &self.rates[seg]);
            let v = self.grid.velocity(seg);
            for (f, vi) in flux.iter().zip(&v) {
                worst = worst.max((f - vi).abs());
            }
        }
        worst
    }
}

/// Flux of a controlled rate row at state `mu`: the tangent vector
/// `sum_E l(z,z') mu(z) (delta_{z'} - delta_z)`, per component.
pub fn rate_flux(model: &BlockModel, mu: &EmpiricalVector, rates: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mu.data().len()];
    for j in 0..model.block_count() {
        for cat in Category::ALL {
            let off = mu.offset(j, cat);
            let comp = mu.component(j, cat);
            for (e, &(z, zp)) in model.graph().edges().iter().enumerate() {
                let l = rates[model.channel_index(j, cat, e)];
                let f = comp[z] * l;
                out[off + z] -= f;
                out[off + zp] += f;
            }
        }
    }
    out
}

/// Controlled-path cost. Infinite when any rate is negative (guarded at
/// construction) or `tau_star` diverges; otherwise the midpoint-rule sum.
pub fn action(model: &BlockModel, path: &RateMatrixPath) -> Cost {
    let mut total = 0.0;
    for seg in 0..path.grid.segments() {
        let dt = path.grid.dt(seg);
        let mid = path.grid.midpoint(seg);
        let row = &path.rates[seg];
        let mut density = 0.0;
        for j in 0..model.block_count() {
            for cat in Category::ALL {
                let w = model.weight(j, cat);
                let comp = mid.component(j, cat);
                for (e, &(z, _)) in model.graph().edges().iter().enumerate() {
                    let mu_z = comp[z];
                    if mu_z == 0.0 {
                        continue;
                    }
                    let lam = model.rate(j, cat, e, &mid);
                    let l = row[model.channel_index(j, cat, e)];
                    let ts = tau_star(l / lam - 1.0);
                    if !ts.is_finite() {
                        return Cost::Infinite;
                    }
                    density += w * mu_z * lam * ts;
                }
            }
        }
        total += dt * density;
    }
    Cost::Finite(total)
}

/// The admissible rates themselves, frozen at segment midpoints: a
/// zero-cost control whenever the path follows the mean-field flow.
pub fn generating_rates(model: &BlockModel, grid: &PathGrid) -> RateMatrixPath {
    let chans = model.channel_count();
    let mut rates = Vec::with_capacity(grid.segments());
    for seg in 0..grid.segments() {
        let mid = grid.midpoint(seg);
        let mut row = vec![0.0; chans];
        for j in 0..model.block_count() {
            for cat in Category::ALL {
                for e in 0..model.graph().edges().len() {
                    row[model.channel_index(j, cat, e)] = model.rate(j, cat, e, &mid);
                }
            }
        }
        rates.push(row);
    }
    RateMatrixPath { grid: grid.clone(), rates }
}

// ---------------------------------------------------------------------------
// Transport construction
// ---------------------------------------------------------------------------

/// One scheduled mass movement: `mass` follows `path` (a color sequence),
/// one hop per sub-step.
#[derive(Clone, Debug)]
struct Flow {
    block: usize,
    category: Category,
    path: Vec<usize>,
    mass: f64,
}

fn bfs_path(model: &BlockModel, from: usize, to: usize) -> Vec<usize> {
    let graph = model.graph();
    let k = graph.colors();
    let mut prev = vec![usize::MAX; k];
    let mut queue = std::collections::VecDeque::from([from]);
    prev[from] = from;
    while let Some(z) = queue.pop_front() {
        if z == to {
            break;
        }
        for &e in graph.out_edges(z) {
            let (_, zp) = graph.edges()[e];
            if prev[zp] == usize::MAX {
                prev[zp] = z;
                queue.push_back(zp);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = prev[cur];
        path.push(cur);
    }
    path.reverse();
    path
}

/// The flow schedule between two states and its sub-step count.
fn transport_plan(model: &BlockModel, from: &EmpiricalVector, to: &EmpiricalVector) -> (Vec<Flow>, usize) {
    let k = model.colors();
    let mut flows = Vec::new();
    let mut m = 1;
    for j in 0..model.block_count() {
        for cat in Category::ALL {
            let a = from.component(j, cat);
            let b = to.component(j, cat);
            let delta: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
            let total_deficit: f64 = delta.iter().filter(|d| **d > 0.0).sum();
            if total_deficit <= 1e-15 {
                continue;
            }
            for s in 0..k {
                if delta[s] >= -1e-15 {
                    continue;
                }
                let surplus = -delta[s];
                for d in 0..k {
                    if delta[d] <= 1e-15 {
                        continue;
                    }
                    let mass = surplus * delta[d] / total_deficit;
                    if mass <= 0.0 {
                        continue;
                    }
                    let path = bfs_path(model, s, d);
                    m = m.max(path.len() - 1);
                    flows.push(Flow { block: j, category: cat, path, mass });
                }
            }
        }
    }
    (flows, m)
}

/// Joins `from` to `to` in time `dt` by shipping per-component surpluses to
/// deficits along shortest color-graph routes, one hop per sub-step; every
/// intermediate state stays inside the simplex product, the endpoints are
/// hit exactly, and the rates reproduce each sub-segment's velocity at its
/// midpoint. Channels carrying no mass are switched off (`l = 0`).
pub fn transport_segment(
    model: &BlockModel,
    from: &EmpiricalVector,
    to: &EmpiricalVector,
    dt: f64,
) -> Result<(Vec<EmpiricalVector>, Vec<Vec<f64>>)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("segment duration must be positive, got {dt}")));
    }
    let (r, k) = (from.blocks(), from.colors());
    let (flows, m) = transport_plan(model, from, to);
    let sub_dt = dt / m as f64;
    let chans = model.channel_count();
    let mut knots = vec![from.clone()];
    let mut rate_rows = Vec::with_capacity(m);
    for hop in 0..m {
        let cur = knots.last().unwrap().clone();
        let mut next = cur.data().to_vec();
        let mut edge_mass = vec![0.0f64; chans];
        for flow in &flows {
            if hop + 1 >= flow.path.len() {
                continue;
            }
            let (z, zp) = (flow.path[hop], flow.path[hop + 1]);
            let off = cur.offset(flow.block, flow.category);
            next[off + z] -= flow.mass;
            next[off + zp] += flow.mass;
            let e = model
                .graph()
                .edge_index(z, zp)
                .expect("BFS paths follow admissible edges");
            edge_mass[model.channel_index(flow.block, flow.category, e)] += flow.mass;
        }
        // Roundoff guard: exact arithmetic keeps these in [0, 1].
        for v in &mut next {
            if *v < 0.0 {
                debug_assert!(*v > -1e-12, "transport drove mass negative: {v}");
                *v = 0.0;
            }
        }
        let next = if hop + 1 == m {
            to.clone()
        } else {
            EmpiricalVector::from_raw_unchecked(r, k, next)
        };
        let mid = convex(&cur, &next, 0.5);
        let mut row = vec![0.0f64; chans];
        for j in 0..r {
            for cat in Category::ALL {
                let comp = mid.component(j, cat);
                for (e, &(z, _)) in model.graph().edges().iter().enumerate() {
                    let ch = model.channel_index(j, cat, e);
                    if edge_mass[ch] > 0.0 {
                        row[ch] = edge_mass[ch] / (sub_dt * comp[z]);
                    }
                }
            }
        }
        knots.push(next);
        rate_rows.push(row);
    }
    Ok((knots, rate_rows))
}

/// Transport construction along every segment of `grid`, concatenated.
pub fn transport_path(model: &BlockModel, grid: &PathGrid) -> Result<RateMatrixPath> {
    let mut times = vec![grid.times()[0]];
    let mut knots = vec![grid.knots()[0].clone()];
    let mut rates = Vec::new();
    for seg in 0..grid.segments() {
        let (sub_knots, sub_rates) =
            transport_segment(model, &grid.knots()[seg], &grid.knots()[seg + 1], grid.dt(seg))?;
        let m = sub_rates.len();
        let sub_dt = grid.dt(seg) / m as f64;
        for (i, knot) in sub_knots.into_iter().enumerate().skip(1) {
            times.push(grid.times()[seg] + i as f64 * sub_dt);
            knots.push(knot);
        }
        // Land exactly on the knot time.
        *times.last_mut().unwrap() = grid.times()[seg + 1];
        rates.extend(sub_rates);
    }
    Ok(RateMatrixPath { grid: PathGrid::new(times, knots)?, rates })
}

/// Straight-line transport between two states over time `t`.
pub fn constant_velocity_path(
    model: &BlockModel,
    from: &EmpiricalVector,
    to: &EmpiricalVector,
    t: f64,
) -> Result<RateMatrixPath> {
    transport_path(model, &PathGrid::straight(from.clone(), to.clone(), t)?)
}

/// A closed-form upper bound on the cost of [`transport_path`] over `grid`.
///
/// Per sub-step of duration `T'`, a carrying edge with flow `F` from color
/// `z` costs `F ln(l/lambda) - F + T' mu lambda` with `l = F/(T' mu(z))` and
/// `mu(z) >= F/2`; the `F ln F` terms cancel against the `-F ln mu` bound,
/// leaving `tv (ln 2 + |ln T'| + |ln c| + |ln C|)` per component and
/// sub-step, where `tv` is the component's total-variation gap across the
/// segment. Ambient (including switched-off channels): `tau_star(-1) = 1`
/// integrates to at most `C K T` overall.
pub fn transport_cost_bound(model: &BlockModel, grid: &PathGrid) -> f64 {
    let (c_lo, c_hi) = model.rate_bounds();
    let k = model.colors() as f64;
    let mut total = grid.duration() * c_hi * k;
    for seg in 0..grid.segments() {
        let (from, to) = (&grid.knots()[seg], &grid.knots()[seg + 1]);
        let (_, m) = transport_plan(model, from, to);
        let sub_dt = grid.dt(seg) / m as f64;
        let per_mass = std::f64::consts::LN_2 + sub_dt.ln().abs() + c_lo.ln().abs() + c_hi.ln().abs();
        for j in 0..model.block_count() {
            for cat in Category::ALL {
                let tv: f64 = from
                    .component(j, cat)
                    .iter()
                    .zip(to.component(j, cat))
                    .map(|(a, b)| (b - a).abs())
                    .sum::<f64>()
                    / 2.0;
                total += model.weight(j, cat) * m as f64 * tv * per_mass;
            }
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Dual (variational) evaluation
// ---------------------------------------------------------------------------

/// Result of maximizing the dual functional at one state/velocity pair.
#[derive(Clone, Debug)]
pub struct DualDensity {
    /// Weighted Lagrangian density `sum w(j,iota) * sup_phi {...}`.
    pub value: Cost,
    /// Unweighted per-component optima, indexed `block * 2 + category`.
    pub per_component: Vec<f64>,
    /// Maximizing potentials (length-K, first coordinate pinned to 0).
    pub potentials: Vec<Vec<f64>>,
}

/// Evaluates the instantaneous Lagrangian `L(mu, v)` as the dual supremum
///
/// ```text
/// sup_phi  <v - A*mu, phi> - sum_E mu(z) lambda tau(phi(z') - phi(z))
/// ```
///
/// per component (weighted by `alpha_j p_j^iota` in `value`). The optimal
/// tilted rates `lambda e^{dphi}` reproduce the velocity `v` exactly.
pub fn dual_action_density(model: &BlockModel, mu: &EmpiricalVector, velocity: &[f64]) -> DualDensity {
    let k = model.colors();
    let drift = crate::mvode::vector_field(model, mu);
    let mut per_component = Vec::with_capacity(2 * model.block_count());
    let mut potentials = Vec::with_capacity(2 * model.block_count());
    let mut value = 0.0;
    let mut infinite = false;
    for j in 0..model.block_count() {
        for cat in Category::ALL {
            let off = mu.offset(j, cat);
            // theta = v - A*mu for this component, mean-projected onto the
            // tangent space (sum zero) to absorb roundoff.
            let mut theta: Vec<f64> =
                (0..k).map(|z| velocity[off + z] - drift[off + z]).collect();
            let mean = theta.iter().sum::<f64>() / k as f64;
            for t in &mut theta {
                *t -= mean;
            }
            let comp = mu.component(j, cat);
            let lam: Vec<f64> = (0..model.graph().edges().len())
                .map(|e| model.rate(j, cat, e, mu))
                .collect();
            match maximize_component(model, comp, &lam, &theta) {
                Some((opt, phi)) => {
                    per_component.push(opt);
                    potentials.push(phi);
                    value += model.weight(j, cat) * opt;
                }
                None => {
                    infinite = true;
                    per_component.push(f64::INFINITY);
                    potentials.push(vec![0.0; k]);
                }
            }
        }
    }
    DualDensity {
        value: if infinite { Cost::Infinite } else { Cost::Finite(value) },
        per_component,
        potentials,
    }
}

/// Damped Newton ascent of the concave dual for one component. Returns the
/// optimum and the maximizer, or `None` when the supremum diverges.
fn maximize_component(
    model: &BlockModel,
    mu: &[f64],
    lam: &[f64],
    theta: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let k = mu.len();
    let edges = model.graph().edges();
    if theta.iter().all(|t| t.abs() < 1e-300) {
        return Some((0.0, vec![0.0; k]));
    }
    let eval = |phi: &[f64]| -> f64 {
        let mut g = 0.0;
        for (z, t) in theta.iter().enumerate() {
            g += t * phi[z];
        }
        for (e, &(z, zp)) in edges.iter().enumerate() {
            g -= mu[z] * lam[e] * tau(phi[zp] - phi[z]);
        }
        g
    };
    // Variables: phi(1..k); phi(0) pinned at 0.
    let dim = k - 1;
    let mut phi = vec![0.0; k];
    let mut g = eval(&phi);
    for _ in 0..200 {
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        for y in 1..k {
            grad[y - 1] = theta[y];
        }
        for (e, &(z, zp)) in edges.iter().enumerate() {
            let w = mu[z] * lam[e];
            if w == 0.0 {
                continue;
            }
            let ex = (phi[zp] - phi[z]).exp();
            let d = w * (ex - 1.0);
            if zp > 0 {
                grad[zp - 1] -= d;
            }
            if z > 0 {
                grad[z - 1] += d;
            }
            let h = w * ex;
            if zp > 0 {
                hess[(zp - 1, zp - 1)] -= h;
            }
            if z > 0 {
                hess[(z - 1, z - 1)] -= h;
            }
            if z > 0 && zp > 0 {
                hess[(z - 1, zp - 1)] += h;
                hess[(zp - 1, z - 1)] += h;
            }
        }
        let gnorm = grad.amax();
        if gnorm < 1e-12 {
            return Some((g, phi));
        }
        // Regularized Newton ascent direction; fall back to the gradient.
        let reg = 1e-12 * (1.0 + hess.amax());
        for i in 0..dim {
            hess[(i, i)] -= reg;
        }
        let dir = (-hess.clone()).lu().solve(&grad).unwrap_or_else(|| grad.clone());
        let mut step = 1.0;
        let mut advanced = false;
        for _ in 0..60 {
            let mut trial = phi.clone();
            for y in 1..k {
                trial[y] += step * dir[y - 1];
            }
            let gt = eval(&trial);
            if gt > g {
                phi = trial;
                g = gt;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            // Concave and smooth: no ascent along the Newton or gradient
            // direction means we are at the optimum up to roundoff.
            return Some((g, phi));
        }
        if phi.iter().any(|p| p.abs() > 200.0) || g > 1e12 {
            return None;
        }
    }
    Some((g, phi))
}

/// Dual action of a piecewise-linear path: midpoint-rule sum of
/// [`dual_action_density`] over segments.
pub fn path_action_dual(model: &BlockModel, grid: &PathGrid) -> Cost {
    let mut total = 0.0;
    for seg in 0..grid.segments() {
        let mid = grid.midpoint(seg);
        let dens = dual_action_density(model, &mid, &grid.velocity(seg));
        match dens.value {
            Cost::Finite(v) => total += grid.dt(seg) * v,
            Cost::Infinite => return Cost::Infinite,
        }
    }
    Cost::Finite(total)
}

/// Optimal tilted rates `lambda e^{phi(z') - phi(z)}` along a path,
/// velocity-consistent by dual stationarity.
pub fn tilted_rates(model: &BlockModel, grid: &PathGrid) -> Result<RateMatrixPath> {
    let chans = model.channel_count();
    let mut rates = Vec::with_capacity(grid.segments());
    for seg in 0..grid.segments() {
        let mid = grid.midpoint(seg);
        let dens = dual_action_density(model, &mid, &grid.velocity(seg));
        if dens.value == Cost::Infinite {
            return Err(Error::NonConvergence {
                what: "tilted rates".into(),
                detail: format!("dual supremum diverges on segment {seg}"),
            });
        }
        let mut row = vec![0.0; chans];
        for j in 0..model.block_count() {
            for cat in Category::ALL {
                let phi = &dens.potentials[j * 2 + cat.index()];
                for (e, &(z, zp)) in model.graph().edges().iter().enumerate() {
                    let lam = model.rate(j, cat, e, &mid);
                    row[model.channel_index(j, cat, e)] = lam * (phi[zp] - phi[z]).exp();
                }
            }
        }
        rates.push(row);
    }
    RateMatrixPath::new(model, grid.clone(), rates)
}

// ---------------------------------------------------------------------------
// Rescaling and mass-flux bounds
// ---------------------------------------------------------------------------

/// Time-compresses a controlled path by `beta >= 1`: times divide by
/// `beta`, rates multiply by `beta`; the geometric trace and endpoints are
/// unchanged and velocity consistency is preserved.
pub fn rescale_rate_path(path: &RateMatrixPath, beta: f64) -> Result<RateMatrixPath> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    let times = path.grid.times().iter().map(|t| t / beta).collect();
    let grid = PathGrid::new(times, path.grid.knots().to_vec())?;
    let rates = path
        .rates
        .iter()
        .map(|row| row.iter().map(|l| l * beta).collect())
        .collect();
    Ok(RateMatrixPath { grid, rates })
}

/// Total weighted mass flux `int sum w(j,iota) sum_E mu(z) l(z,z') dt`.
pub fn flux_volume(model: &BlockModel, path: &RateMatrixPath) -> f64 {
    let mut total = 0.0;
    for seg in 0..path.grid.segments() {
        let mid = path.grid.midpoint(seg);
        let row = &path.rates[seg];
        let mut density = 0.0;
        for j in 0..model.block_count() {
            for cat in Category::ALL {
                let w = model.weight(j, cat);
                let comp = mid.component(j, cat);
                for (e, &(z, _)) in model.graph().edges().iter().enumerate() {
                    density += w * comp[z] * row[model.channel_index(j, cat, e)];
                }
            }
        }
        total += path.grid.dt(seg) * density;
    }
    total
}

/// Lower bound on any controlled path's cost: from
/// `tau_star(u - 1) >= u - e + 1`,
///
/// ```text
/// S >= flux_volume - (e - 1) C |E| T.
/// ```
pub fn flux_lower_bound(model: &BlockModel, path: &RateMatrixPath) -> f64 {
    let (_, c_hi) = model.rate_bounds();
    let t = path.grid.duration();
    flux_volume(model, path)
        - (std::f64::consts::E - 1.0) * c_hi * model.graph().edges().len() as f64 * t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::ColorGraph;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng, r: usize, k: usize) -> EmpiricalVector {
        let mut data = Vec::with_capacity(2 * r * k);
        for _ in 0..2 * r {
            let mut comp: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = comp.iter().sum();
            comp.iter_mut().for_each(|v| *v /= s);
            data.extend(comp);
        }
        EmpiricalVector::new(r, k, data).unwrap()
    }

    #[test]
    fn tau_pair_are_legendre_duals() {
        assert!(tau(0.0).abs() < 1e-15);
        assert!((tau_star(0.0)).abs() < 1e-15);
        assert_eq!(tau_star(-1.0), 1.0);
        assert_eq!(tau_star(-1.5), f64::INFINITY);
        // tau_star(theta) == sup_u (theta u - tau(u)) via dense scan.
        for theta in [-0.9, -0.3, 0.0, 0.7, 2.5] {
            let sup = (-4000..4000)
                .map(|i| {
                    let u = i as f64 * 1e-3;
                    theta * u - tau(u)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((sup - tau_star(theta)).abs() < 1e-5, "theta = {theta}");
        }
    }

    #[test]
    fn straight_transport_is_velocity_consistent_and_exact() {
        let m = fixtures::two_color_bistable();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_state(&mut rng, 1, 2);
            let b = random_state(&mut rng, 1, 2);
            let p = constant_velocity_path(&m, &a, &b, 0.8).unwrap();
            assert!(p.velocity_residual(&m) < 1e-12);
            assert_eq!(p.grid.first().data(), a.data());
            assert_eq!(p.grid.last().data(), b.data());
            assert!(action(&m, &p).is_finite());
        }
    }

    #[test]
    fn multi_hop_transport_respects_the_ring() {
        // Directed 4-ring: moving mass from color 0 to color 2 takes 2 hops.
        let g = ColorGraph::new(4, vec![(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let m = fixtures::constant_rate_model(g, 1.0);
        let a = EmpiricalVector::new(1, 4, vec![0.7, 0.1, 0.1, 0.1, 0.25, 0.25, 0.25, 0.25])
            .unwrap();
        let b = EmpiricalVector::new(1, 4, vec![0.1, 0.1, 0.7, 0.1, 0.25, 0.25, 0.25, 0.25])
            .unwrap();
        let p = constant_velocity_path(&m, &a, &b, 1.0).unwrap();
        assert!(p.grid.segments() >= 2, "expected sub-steps for multi-hop routing");
        assert!(p.velocity_residual(&m) < 1e-12);
        for knot in p.grid.knots() {
            assert!(knot.data().iter().all(|&v| v >= 0.0));
        }
        assert_eq!(p.grid.last().data(), b.data());
        assert!(action(&m, &p).is_finite());
    }

    #[test]
    fn transport_cost_stays_under_its_bound() {
        let m = fixtures::two_color_bistable();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let a = random_state(&mut rng, 1, 2);
            let b = random_state(&mut rng, 1, 2);
            let t = 0.2 + rng.random::<f64>() * 3.0;
            let grid = PathGrid::straight(a, b, t).unwrap();
            let p = transport_path(&m, &grid).unwrap();
            let s = action(&m, &p).expect_finite("finite cost");
            let bound = transport_cost_bound(&m, &grid);
            assert!(s <= bound + 1e-9, "action {s} exceeds bound {bound}");
        }
    }

    #[test]
    fn dual_matches_the_two_color_closed_form() {
        let m = fixtures::two_color_bistable();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let mu = random_state(&mut rng, 1, 2);
            let v1 = (rng.random::<f64>() - 0.5) * 0.4;
            // Same velocity for both components; closed form checked per component.
            let velocity = vec![-v1, v1, -v1, v1];
            let dens = dual_action_density(&m, &mu, &velocity);
            let total = dens.value.expect_finite("finite cost");
            let mut want = 0.0;
            for (ci, cat) in Category::ALL.into_iter().enumerate() {
                let comp = mu.component(0, cat);
                let b = comp[0] * m.rate(0, cat, 0, &mu); // edge 0: 0 -> 1
                let d = comp[1] * m.rate(0, cat, 1, &mu); // edge 1: 1 -> 0
                let y = (v1 + (v1 * v1 + 4.0 * b * d).sqrt()) / (2.0 * b);
                let p = y.ln();
                let theta1 = v1 - (b - d);
                let g = theta1 * p - b * tau(p) - d * tau(-p);
                assert!(
                    (dens.per_component[ci] - g).abs() < 1e-9,
                    "component {ci}: got {}, want {g}",
                    dens.per_component[ci]
                );
                want += m.weight(0, cat) * g;
            }
            assert!((total - want).abs() < 1e-9);
        }
    }

    #[test]
    fn dual_vanishes_on_flow_velocities_and_is_positive_off_flow() {
        let m = fixtures::two_color_bistable();
        let mu = EmpiricalVector::new(1, 2, vec![0.3, 0.7, 0.4, 0.6]).unwrap();
        let drift = crate::mvode::vector_field(&m, &mu);
        let on = dual_action_density(&m, &mu, &drift);
        assert!(on.value.expect_finite("finite cost").abs() < 1e-12);
        let mut off_v = drift.clone();
        off_v[0] -= 0.1;
        off_v[1] += 0.1;
        let off = dual_action_density(&m, &mu, &off_v);
        assert!(off.value.expect_finite("finite cost") > 1e-4);
    }

    #[test]
    fn tilted_rates_reproduce_the_velocity() {
        let m = fixtures::two_color_bistable();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = random_state(&mut rng, 1, 2);
        let b = random_state(&mut rng, 1, 2);
        let grid = PathGrid::new(vec![0.0, 0.5, 1.3], vec![a.clone(), random_state(&mut rng, 1, 2), b])
            .unwrap();
        let tilted = tilted_rates(&m, &grid).unwrap();
        assert!(tilted.velocity_residual(&m) < 1e-8);
        // And the controlled cost of the tilted rates equals the dual value.
        let primal = action(&m, &tilted).expect_finite("finite cost");
        let dual = path_action_dual(&m, &grid).expect_finite("finite cost");
        assert!((primal - dual).abs() < 1e-8, "primal {primal} vs dual {dual}");
    }

    #[test]
    fn dual_never_exceeds_any_consistent_control() {
        // The dual is the infimum over velocity-consistent rates; transport
        // rates are one such control, so dual <= transport cost.
        let m = fixtures::two_color_bistable();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..10 {
            let a = random_state(&mut rng, 1, 2);
            let b = random_state(&mut rng, 1, 2);
            let p = constant_velocity_path(&m, &a, &b, 1.0).unwrap();
            let dual = path_action_dual(&m, &p.grid).expect_finite("finite cost");
            let primal = action(&m, &p).expect_finite("finite cost");
            assert!(dual <= primal + 1e-9, "dual {dual} > transport {primal}");
        }
    }

    #[test]
    fn rescaling_obeys_the_speedup_inequality() {
        let m = fixtures::two_color_bistable();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..10 {
            let a = random_state(&mut rng, 1, 2);
            let b = random_state(&mut rng, 1, 2);
            let p = constant_velocity_path(&m, &a, &b, 2.0).unwrap();
            let s = action(&m, &p).expect_finite("finite cost");
            for beta in [1.0, 2.0, 5.0, 10.0] {
                let fast = rescale_rate_path(&p, beta).unwrap();
                assert!((fast.grid.duration() - p.grid.duration() / beta).abs() < 1e-12);
                assert!(fast.velocity_residual(&m) < 1e-9);
                let s_fast = action(&m, &fast).expect_finite("finite cost");
                let allowance = beta.ln() * flux_volume(&m, &p);
                assert!(
                    s_fast <= s + allowance + 1e-9,
                    "beta {beta}: {s_fast} > {s} + {allowance}"
                );
            }
        }
    }

    #[test]
    fn cost_dominates_the_flux_lower_bound() {
        let m = fixtures::two_color_bistable();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..10 {
            let a = random_state(&mut rng, 1, 2);
            let b = random_state(&mut rng, 1, 2);
            let p = constant_velocity_path(&m, &a, &b, 1.5).unwrap();
            let s = action(&m, &p).expect_finite("finite cost");
            assert!(s >= flux_lower_bound(&m, &p) - 1e-9);
        }
    }

    #[test]
    fn generating_rates_cost_nothing_along_the_flow() {
        let m = fixtures::two_color_bistable();
        let init = EmpiricalVector::new(1, 2, vec![0.25, 0.75, 0.3, 0.7]).unwrap();
        let sol = crate::mvode::integrate(&m, &init, 3.0, 1e-3, crate::mvode::Direction::Forward)
            .unwrap();
        let grid = PathGrid::from(&sol);
        let gen = generating_rates(&m, &grid);
        // Velocity of the discrete path differs from the exact flow by
        // O(dt^2); tau_star is quadratic near zero, so the cost is tiny.
        let s = action(&m, &gen).expect_finite("finite cost");
        assert!(s >= 0.0);
        assert!(s < 1e-9, "flow path cost {s}");
        let dual = path_action_dual(&m, &grid).expect_finite("finite cost");
        assert!(dual < 1e-9, "dual flow cost {dual}");
    }

    #[test]
    fn state_interpolation_matches_knots() {
        let a = EmpiricalVector::new(1, 2, vec![0.2, 0.8, 0.4, 0.6]).unwrap();
        let b = EmpiricalVector::new(1, 2, vec![0.6, 0.4, 0.8, 0.2]).unwrap();
        let grid = PathGrid::straight(a.clone(), b.clone(), 2.0).unwrap();
        assert_eq!(grid.state_at(-1.0).data(), a.data());
        assert_eq!(grid.state_at(5.0).data(), b.data());
        let mid = grid.state_at(1.0);
        for (m, (x, y)) in mid.data().iter().zip(a.data().iter().zip(b.data())) {
            assert!((m - 0.5 * (x + y)).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_malformed_grids_and_rates() {
        let a = EmpiricalVector::uniform(1, 2);
        assert!(PathGrid::new(vec![0.0], vec![a.clone()]).is_err());
        assert!(PathGrid::new(vec![0.0, 0.0], vec![a.clone(), a.clone()]).is_err());
        let m = fixtures::two_color_bistable();
        let grid = PathGrid::straight(a.clone(), a.clone(), 0.0);
        assert!(grid.is_err(), "zero-duration segment: times must strictly increase");
        let grid = PathGrid::new(vec![0.0, 1.0], vec![a.clone(), a]).unwrap();
        assert!(RateMatrixPath::new(&m, grid.clone(), vec![vec![1.0; 3]]).is_err());
        assert!(RateMatrixPath::new(&m, grid.clone(), vec![vec![-1.0; 4]]).is_err());
        assert!(RateMatrixPath::new(&m, grid, vec![vec![1.0; 4]]).is_ok());
    }
}
