//! The McKean–Vlasov limit ODE, equilibrium search, and the compact catalog.
//!
//! Writing `A^{j,iota}_ev` for the jump generator of component `(j, iota)`
//! frozen at state `ev` (off-diagonal entries are the admissible edge rates,
//! diagonal entries the negated row sums), the limit dynamics are
//! `d/dt mu_j^iota = A^{j,iota*}_mu mu_j^iota` for every component
//! simultaneously. [`vector_field`] evaluates that adjoint action; the flow
//! preserves each probability simplex.
//!
//! [`find_equilibria`] locates the stable equilibria standing in for the
//! attracting compacts `K_1, ..., K_l`: relaxation from deterministic seeds,
//! damped-Newton refinement, deduplication, and spectral classification via
//! a finite-difference Jacobian in simplex coordinates.

use crate::error::{Error, Result};
use crate::model::{BlockModel, Category, EmpiricalVector};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Time direction of the flow; `Reversed` negates the field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Reversed,
}

/// Evaluates the mean-field drift `(A^* mu)` as a flat tangent vector of
/// length `2 r K`; every component's coordinates sum to zero by
/// construction.
pub fn vector_field(model: &BlockModel, ev: &EmpiricalVector) -> Vec<f64> {
    let k = model.colors();
    let mut out = vec![0.0; ev.data().len()];
    for j in 0..model.block_count() {
        for cat in Category::ALL {
            let off = ev.offset(j, cat);
            let comp = ev.component(j, cat);
            for (e, &(z, zp)) in model.graph().edges().iter().enumerate() {
                let flux = comp[z] * model.rate(j, cat, e, ev);
                out[off + z] -= flux;
                out[off + zp] += flux;
            }
        }
        debug_assert!(k >= 2);
    }
    out
}

/// A recorded flow: states at every accepted step, `times` strictly
/// increasing starting at 0.
#[derive(Clone, Debug)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<EmpiricalVector>,
}

impl OdeSolution {
    pub fn final_state(&self) -> &EmpiricalVector {
        self.states.last().expect("solution has at least the initial state")
    }
}

fn rk4_step(model: &BlockModel, state: &EmpiricalVector, dt: f64, sign: f64) -> EmpiricalVector {
    let n = state.data().len();
    let eval = |data: Vec<f64>| -> Vec<f64> {
        let probe = EmpiricalVector::from_raw_unchecked(state.blocks(), state.colors(), data);
        let mut f = vector_field(model, &probe);
        for v in &mut f {
            *v *= sign;
        }
        f
    };
    let x0 = state.data();
    let k1 = eval(x0.to_vec());
    let mut tmp = vec![0.0; n];
    for i in 0..n {
        tmp[i] = x0[i] + 0.5 * dt * k1[i];
    }
    let k2 = eval(tmp.clone());
    for i in 0..n {
        tmp[i] = x0[i] + 0.5 * dt * k2[i];
    }
    let k3 = eval(tmp.clone());
    for i in 0..n {
        tmp[i] = x0[i] + dt * k3[i];
    }
    let k4 = eval(tmp.clone());
    let mut next = vec![0.0; n];
    for i in 0..n {
        next[i] = x0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    // Project back to the product of simplices: clamp roundoff negatives and
    // renormalize each component.
    let k = state.colors();
    for c in 0..next.len() / k {
        let comp = &mut next[c * k..(c + 1) * k];
        for v in comp.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum: f64 = comp.iter().sum();
        if sum > 0.0 {
            for v in comp.iter_mut() {
                *v /= sum;
            }
        }
    }
    EmpiricalVector::from_raw_unchecked(state.blocks(), state.colors(), next)
}

fn validate_step(t_end: f64, dt: f64) -> Result<()> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidInput(format!("t_end must be positive, got {t_end}")));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

/// Fixed-step RK4 integration, recording every step. The final step is
/// shortened to land exactly on `t_end`.
pub fn integrate(
    model: &BlockModel,
    init: &EmpiricalVector,
    t_end: f64,
    dt: f64,
    direction: Direction,
) -> Result<OdeSolution> {
    validate_step(t_end, dt)?;
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Reversed => -1.0,
    };
    let mut times = vec![0.0];
    let mut states = vec![init.clone()];
    let mut t = 0.0;
    while t < t_end - 1e-12 * t_end.max(1.0) {
        let step = dt.min(t_end - t);
        let next = rk4_step(model, states.last().unwrap(), step, sign);
        t += step;
        times.push(t);
        states.push(next);
    }
    Ok(OdeSolution { times, states })
}

/// RK4 flow endpoint without recording intermediate states.
pub fn flow(
    model: &BlockModel,
    init: &EmpiricalVector,
    t_end: f64,
    dt: f64,
    direction: Direction,
) -> Result<EmpiricalVector> {
    validate_step(t_end, dt)?;
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Reversed => -1.0,
    };
    let mut state = init.clone();
    let mut t = 0.0;
    while t < t_end - 1e-12 * t_end.max(1.0) {
        let step = dt.min(t_end - t);
        state = rk4_step(model, &state, step, sign);
        t += step;
    }
    Ok(state)
}

/// One refined equilibrium.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Equilibrium {
    pub point: EmpiricalVector,
    /// Spectral abscissa strictly below `-1e-8`.
    pub stable: bool,
    /// Largest real part within `1e-8` of zero: too close to call.
    pub marginal: bool,
    /// Largest real part of the reduced Jacobian's spectrum.
    pub spectral_abscissa: f64,
    /// Max-norm of the vector field at the refined point.
    pub residual: f64,
}

/// Stable equilibria (the compacts `K_1..K_l`, in a deterministic order)
/// plus any unstable ones found, with the neighborhood radii used by
/// stopping times: `r1 < r0 < half` the minimal pairwise distance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompactCatalog {
    pub equilibria: Vec<Equilibrium>,
    pub r0: f64,
    pub r1: f64,
}

impl CompactCatalog {
    /// Indices into `equilibria` of the stable points, in catalog order.
    pub fn stable_indices(&self) -> Vec<usize> {
        (0..self.equilibria.len()).filter(|&i| self.equilibria[i].stable).collect()
    }

    /// The stable points themselves (the `K_i`).
    pub fn compacts(&self) -> Vec<&EmpiricalVector> {
        self.equilibria.iter().filter(|e| e.stable).map(|e| &e.point).collect()
    }

    pub fn saddles(&self) -> Vec<&EmpiricalVector> {
        self.equilibria.iter().filter(|e| !e.stable).map(|e| &e.point).collect()
    }
}

/// Options for [`find_equilibria`].
#[derive(Clone, Debug)]
pub struct EquilibriaOptions {
    /// Relaxation horizon before Newton refinement.
    pub relax_time: f64,
    /// RK4 step during relaxation.
    pub dt: f64,
    /// Newton stopping tolerance on the field's max-norm.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Candidates closer than this are duplicates.
    pub dedup_radius: f64,
    /// Finite-difference step for the reduced Jacobian.
    pub fd_step: f64,
    /// Extra starting points besides the deterministic seeds.
    pub extra_seeds: Vec<EmpiricalVector>,
    pub r0_override: Option<f64>,
    pub r1_override: Option<f64>,
}

impl Default for EquilibriaOptions {
    fn default() -> Self {
        EquilibriaOptions {
            relax_time: 300.0,
            dt: 1e-2,
            newton_tol: 1e-12,
            newton_max_iter: 80,
            dedup_radius: 1e-6,
            fd_step: 1e-6,
            extra_seeds: Vec::new(),
            r0_override: None,
            r1_override: None,
        }
    }
}

/// Reduced simplex coordinates: every component keeps its first `K-1`
/// colors; the last is `1 - sum`.
pub(crate) fn to_reduced(ev: &EmpiricalVector) -> Vec<f64> {
    let k = ev.colors();
    let mut y = Vec::with_capacity(ev.data().len() / k * (k - 1));
    for c in 0..ev.data().len() / k {
        y.extend_from_slice(&ev.data()[c * k..c * k + (k - 1)]);
    }
    y
}

pub(crate) fn from_reduced(r: usize, k: usize, y: &[f64]) -> EmpiricalVector {
    let comps = y.len() / (k - 1);
    let mut data = Vec::with_capacity(comps * k);
    for c in 0..comps {
        let slice = &y[c * (k - 1)..(c + 1) * (k - 1)];
        let sum: f64 = slice.iter().sum();
        data.extend_from_slice(slice);
        data.push(1.0 - sum);
    }
    EmpiricalVector::from_raw_unchecked(r, k, data)
}

fn reduced_field(model: &BlockModel, r: usize, k: usize, y: &[f64]) -> Vec<f64> {
    let ev = from_reduced(r, k, y);
    let f = vector_field(model, &ev);
    let comps = y.len() / (k - 1);
    let mut out = Vec::with_capacity(y.len());
    for c in 0..comps {
        out.extend_from_slice(&f[c * k..c * k + (k - 1)]);
    }
    out
}

/// Central-difference Jacobian of the reduced field.
pub(crate) fn reduced_jacobian(
    model: &BlockModel,
    ev: &EmpiricalVector,
    h: f64,
) -> DMatrix<f64> {
    let (r, k) = (ev.blocks(), ev.colors());
    let y0 = to_reduced(ev);
    let n = y0.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut y = y0.clone();
    for col in 0..n {
        y[col] = y0[col] + h;
        let fp = reduced_field(model, r, k, &y);
        y[col] = y0[col] - h;
        let fm = reduced_field(model, r, k, &y);
        y[col] = y0[col];
        for row in 0..n {
            jac[(row, col)] = (fp[row] - fm[row]) / (2.0 * h);
        }
    }
    jac
}

/// Largest real part of the reduced Jacobian's eigenvalues at `ev`.
pub fn spectral_abscissa(model: &BlockModel, ev: &EmpiricalVector, h: f64) -> f64 {
    let jac = reduced_jacobian(model, ev, h);
    jac.complex_eigenvalues().iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
}

fn newton_refine(
    model: &BlockModel,
    start: &EmpiricalVector,
    opts: &EquilibriaOptions,
) -> Option<EmpiricalVector> {
    let (r, k) = (start.blocks(), start.colors());
    let mut y = to_reduced(start);
    let norm = |f: &[f64]| f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut fy = reduced_field(model, r, k, &y);
    for _ in 0..opts.newton_max_iter {
        if norm(&fy) < opts.newton_tol {
            break;
        }
        let jac = reduced_jacobian(model, &from_reduced(r, k, &y), opts.fd_step);
        let rhs = DVector::from_iterator(fy.len(), fy.iter().map(|v| -v));
        let delta = jac.lu().solve(&rhs)?;
        // Damped update: halve until the residual drops.
        let mut scale = 1.0;
        let base = norm(&fy);
        let mut accepted = false;
        for _ in 0..25 {
            let trial: Vec<f64> =
                y.iter().zip(delta.iter()).map(|(yi, di)| yi + scale * di).collect();
            let ft = reduced_field(model, r, k, &trial);
            if norm(&ft) < base {
                y = trial;
                fy = ft;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm(&fy) >= opts.newton_tol.max(1e-10) {
        return None;
    }
    // Project onto the simplex product and insist the projected point still
    // solves the equation to the catalog tolerance.
    let ev = EmpiricalVector::new(r, k, from_reduced(r, k, &y).data().to_vec()).ok()?;
    let resid = norm(&vector_field(model, &ev));
    (resid < 1e-8).then_some(ev)
}

fn max_norm(f: &[f64]) -> f64 {
    f.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Convex combination of two states; stays inside the simplex product.
fn lerp(a: &EmpiricalVector, b: &EmpiricalVector, s: f64) -> EmpiricalVector {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (1.0 - s) * x + s * y)
        .collect();
    EmpiricalVector::from_raw_unchecked(a.blocks(), a.colors(), data)
}

/// Follows the flow from `start`, returning the visited state with the
/// smallest field norm. Near a basin boundary this hugs the saddle.
fn low_field_point(
    model: &BlockModel,
    start: &EmpiricalVector,
    opts: &EquilibriaOptions,
) -> Result<EmpiricalVector> {
    let chunk = 5.0f64.min(opts.relax_time);
    let mut state = start.clone();
    let mut best = state.clone();
    let mut best_norm = max_norm(&vector_field(model, &state));
    let mut t = 0.0;
    let mut rising = 0;
    while t < opts.relax_time && best_norm > 1e-9 {
        state = flow(model, &state, chunk, opts.dt, Direction::Forward)?;
        t += chunk;
        let n = max_norm(&vector_field(model, &state));
        if n < best_norm {
            best_norm = n;
            best = state.clone();
            rising = 0;
        } else {
            rising += 1;
            if rising >= 3 {
                break;
            }
        }
    }
    Ok(best)
}

/// Bisects the segment between two stable points for the basin boundary and
/// rides the flow toward the saddle sitting on it.
fn separatrix_candidate(
    model: &BlockModel,
    a: &EmpiricalVector,
    b: &EmpiricalVector,
    stable: &[EmpiricalVector],
    opts: &EquilibriaOptions,
) -> Result<Option<EmpiricalVector>> {
    let basin = |pt: &EmpiricalVector| -> Result<Option<usize>> {
        let end = flow(model, pt, opts.relax_time, opts.dt, Direction::Forward)?;
        Ok(stable.iter().position(|s| end.product_metric(s) < 1e-4))
    };
    let (Some(ia), Some(ib)) = (basin(a)?, basin(b)?) else {
        return Ok(None);
    };
    if ia == ib {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut probe = lerp(a, b, 0.5);
    for _ in 0..60 {
        let s = 0.5 * (lo + hi);
        probe = lerp(a, b, s);
        match basin(&probe)? {
            Some(i) if i == ia => lo = s,
            Some(i) if i == ib => hi = s,
            // Converged to neither attractor: already hovering by the saddle.
            _ => break,
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    low_field_point(model, &probe, opts).map(Some)
}

/// Relaxation + Newton search for equilibria.
///
/// Seeds: one corner per color (all components concentrated on that color),
/// the uniform vector, and any `extra_seeds`. Saddles between basins are
/// then hunted by bisecting segments between stable pairs to the basin
/// boundary. Stable points are sorted lexicographically for a deterministic
/// catalog order; unstable points follow, likewise sorted.
pub fn find_equilibria(model: &BlockModel, opts: &EquilibriaOptions) -> Result<CompactCatalog> {
    let (r, k) = (model.block_count(), model.colors());
    let mut seeds = Vec::new();
    for z in 0..k {
        let mut data = vec![0.0; 2 * r * k];
        for c in 0..2 * r {
            data[c * k + z] = 1.0;
        }
        seeds.push(EmpiricalVector::new(r, k, data)?);
    }
    seeds.push(EmpiricalVector::uniform(r, k));
    seeds.extend(opts.extra_seeds.iter().cloned());

    let mut found: Vec<EmpiricalVector> = Vec::new();
    for seed in &seeds {
        let relaxed = flow(model, seed, opts.relax_time, opts.dt, Direction::Forward)?;
        let Some(point) = newton_refine(model, &relaxed, opts) else {
            continue;
        };
        if found.iter().all(|p| p.product_metric(&point) > opts.dedup_radius) {
            found.push(point);
        }
    }

    let stable_pts: Vec<EmpiricalVector> = found
        .iter()
        .filter(|p| spectral_abscissa(model, p, opts.fd_step) < -1e-8)
        .cloned()
        .collect();
    for i in 0..stable_pts.len() {
        for j in i + 1..stable_pts.len() {
            let Some(cand) =
                separatrix_candidate(model, &stable_pts[i], &stable_pts[j], &stable_pts, opts)?
            else {
                continue;
            };
            let Some(point) = newton_refine(model, &cand, opts) else {
                continue;
            };
            if found.iter().all(|p| p.product_metric(&point) > opts.dedup_radius) {
                found.push(point);
            }
        }
    }

    let mut equilibria: Vec<Equilibrium> = found
        .into_iter()
        .map(|point| {
            let abscissa = spectral_abscissa(model, &point, opts.fd_step);
            let residual = vector_field(model, &point)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            Equilibrium {
                stable: abscissa < -1e-8,
                marginal: abscissa.abs() <= 1e-8,
                spectral_abscissa: abscissa,
                point,
                residual,
            }
        })
        .collect();
    let lex = |a: &EmpiricalVector, b: &EmpiricalVector| {
        a.data()
            .iter()
            .zip(b.data())
            .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    equilibria.sort_by(|a, b| b.stable.cmp(&a.stable).then_with(|| lex(&a.point, &b.point)));

    let stable: Vec<&EmpiricalVector> =
        equilibria.iter().filter(|e| e.stable).map(|e| &e.point).collect();
    let mut dmin = f64::INFINITY;
    for i in 0..stable.len() {
        for j in i + 1..stable.len() {
            dmin = dmin.min(stable[i].product_metric(stable[j]));
        }
    }
    let r0 = opts.r0_override.unwrap_or_else(|| {
        if dmin.is_finite() {
            (0.25 * dmin).min(0.1)
        } else {
            0.1
        }
    });
    let r1 = opts.r1_override.unwrap_or(r0 / 2.0);
    if dmin.is_finite() && !(2.0 * r0 < dmin) {
        return Err(Error::InvalidInput(format!(
            "r0 = {r0} too large: stable equilibria are separated by {dmin}"
        )));
    }
    if !(r1 < r0) {
        return Err(Error::InvalidInput(format!("need r1 < r0, got r1 = {r1}, r0 = {r0}")));
    }
    Ok(CompactCatalog { equilibria, r0, r1 })
}
