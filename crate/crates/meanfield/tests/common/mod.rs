//! Shared generators and brute-force oracles for the integration suites.
//!
//! Everything here is deliberately independent of the library's own
//! algorithms: the W-graph filter walks arrows by hand, the primal
//! minimizer is a plain Newton descent on flow coordinates, and the
//! grid oracle rebuilds the bistable rates from their formula. That
//! independence is the point — when a test compares the two routes,
//! neither side can inherit the other's bugs.
#![allow(dead_code)]

use std::collections::BTreeSet;

use meanfield::action::tau_star;
use meanfield::model::{
    BlockModel, BlockSpec, Category, ColorGraph, EdgeRateFn, EmpiricalVector, MeasureRef,
    ParametricRates, RateSpec, RateTerm,
};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Random instances
// ---------------------------------------------------------------------------

/// Strictly positive probability vector of length `k`: uniform weights with
/// a floor, normalized. The floor keeps every entry bounded away from the
/// simplex boundary so rate-per-occupancy products stay positive.
pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize, floor: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| floor + rng.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Random empirical vector for `model` with every component interior.
pub fn random_state(rng: &mut ChaCha8Rng, model: &BlockModel, floor: f64) -> EmpiricalVector {
    let k = model.colors();
    let mut data = Vec::with_capacity(model.block_count() * 2 * k);
    for _ in 0..model.block_count() * 2 {
        data.extend(random_simplex(rng, k, floor));
    }
    EmpiricalVector::new(model.block_count(), k, data).expect("components are normalized")
}

/// Random single-block model on the complete `k`-color graph with
/// polynomial rates: random base levels, one or two quadratic-or-linear
/// terms per edge, independent central and peripheral tables, and an
/// asymmetric category split. Coefficients may be negative (the rate floor
/// handles that); the declared bounds always dominate the worst case.
pub fn random_single_block_model(rng: &mut ChaCha8Rng, k: usize) -> BlockModel {
    let graph = ColorGraph::complete(k).expect("k >= 2");
    let table = |rng: &mut ChaCha8Rng| -> Vec<EdgeRateFn> {
        (0..graph.edge_count())
            .map(|_| {
                let n_terms = 1 + (rng.random::<f64>() < 0.5) as usize;
                let terms = (0..n_terms)
                    .map(|_| {
                        let n_factors = 1 + (rng.random::<f64>() < 0.5) as usize;
                        let factors = (0..n_factors)
                            .map(|_| {
                                let m = if rng.random::<f64>() < 0.5 {
                                    MeasureRef::OwnCentral
                                } else {
                                    MeasureRef::OwnPeripheral
                                };
                                (m, rng.random_range(0..k))
                            })
                            .collect();
                        RateTerm { coeff: rng.random_range(-0.3..0.6), factors }
                    })
                    .collect();
                EdgeRateFn { base: rng.random_range(0.2..0.8), terms }
            })
            .collect()
    };
    let central = vec![table(rng)];
    let peripheral = vec![table(rng)];
    let rates = ParametricRates { lower: 0.05, upper: 5.0, central, peripheral };
    let p_central = rng.random_range(0.2..0.8);
    let blocks = vec![BlockSpec { alpha: 1.0, p_central, p_peripheral: 1.0 - p_central }];
    BlockModel::new(graph, blocks, RateSpec::Parametric(rates)).expect("generated model is valid")
}

/// Random velocity in the tangent space: independent per component, each
/// summing to zero, entries of order `scale`.
pub fn random_velocity(rng: &mut ChaCha8Rng, model: &BlockModel, scale: f64) -> Vec<f64> {
    let k = model.colors();
    let mut v = Vec::with_capacity(model.block_count() * 2 * k);
    for _ in 0..model.block_count() * 2 {
        let raw: Vec<f64> = (0..k).map(|_| (rng.random::<f64>() - 0.5) * 2.0 * scale).collect();
        let mean = raw.iter().sum::<f64>() / k as f64;
        v.extend(raw.into_iter().map(|x| x - mean));
    }
    v
}

// ---------------------------------------------------------------------------
// Primal density by brute-force convex minimization
// ---------------------------------------------------------------------------

/// Minimizes the instantaneous primal cost over every rate decomposition
/// consistent with `velocity`, and returns the weighted total across
/// components.
///
/// Works in flow coordinates `m_e = mu(z_e) * q_e`: the cost is the
/// separable convex function `sum_e a_e tau*(m_e/a_e - 1)` with
/// `a_e = mu(z_e) * lambda_e(mu)`, and velocity consistency is the linear
/// system `B m = v` (signed color incidence). A minimum-norm correction of
/// the free flow gives a feasible interior start (adding a uniform
/// circulation, which is flux-free on a complete graph, restores
/// positivity), and damped Newton over an orthonormal basis of `ker B`
/// descends to the global optimum. Requires interior `mu` and a complete
/// color graph.
pub fn primal_density_oracle(model: &BlockModel, mu: &EmpiricalVector, velocity: &[f64]) -> f64 {
    let k = model.colors();
    let edges = model.graph().edges();
    let ne = edges.len();
    assert_eq!(ne, k * (k - 1), "oracle requires the complete color graph");
    let mut total = 0.0;
    for j in 0..model.block_count() {
        for cat in Category::ALL {
            let off = mu.offset(j, cat);
            let comp = mu.component(j, cat);
            let a: Vec<f64> = (0..ne)
                .map(|e| comp[edges[e].0] * model.rate(j, cat, e, mu))
                .collect();
            assert!(a.iter().all(|&x| x > 0.0), "interior state required");
            let v: Vec<f64> = (0..k).map(|z| velocity[off + z]).collect();
            total += model.weight(j, cat) * component_minimum(edges, &a, &v);
        }
    }
    total
}

/// One component of [`primal_density_oracle`]: `min sum a tau*(m/a - 1)`
/// over flows `m >= 0` with prescribed color balance.
fn component_minimum(edges: &[(usize, usize)], a: &[f64], v: &[f64]) -> f64 {
    let k = v.len();
    let ne = edges.len();
    // Signed incidence over the first k-1 colors (the last row is dependent).
    let mut b = DMatrix::<f64>::zeros(k - 1, ne);
    for (e, &(z, zp)) in edges.iter().enumerate() {
        if z < k - 1 {
            b[(z, e)] -= 1.0;
        }
        if zp < k - 1 {
            b[(zp, e)] += 1.0;
        }
    }
    // Feasible interior start: minimum-norm correction of the free flow,
    // then a uniform circulation to clear any nonpositive entries.
    let drift: Vec<f64> = {
        let mut d = vec![0.0; k];
        for (e, &(z, zp)) in edges.iter().enumerate() {
            d[z] -= a[e];
            d[zp] += a[e];
        }
        d
    };
    let resid = DVector::from_iterator(k - 1, (0..k - 1).map(|z| v[z] - drift[z]));
    let svd = b.clone().svd(true, true);
    let delta = svd.solve(&resid, 1e-12).expect("incidence system is consistent");
    let mut m: Vec<f64> = (0..ne).map(|e| a[e] + delta[e]).collect();
    let low = m.iter().cloned().fold(f64::INFINITY, f64::min);
    let margin = 1e-3 * a.iter().sum::<f64>();
    if low < margin {
        // On a complete graph every color has equal in- and out-degree, so a
        // constant added to all flows moves nothing.
        for me in &mut m {
            *me += margin - low;
        }
    }
    // Orthonormal kernel basis of B from the eigenvectors of B^T B with
    // vanishing eigenvalue (the thin SVD keeps too few right vectors).
    let gram = b.transpose() * &b;
    let eig = gram.symmetric_eigen();
    let mut kernel: Vec<DVector<f64>> = Vec::new();
    for i in 0..ne {
        if eig.eigenvalues[i].abs() < 1e-10 {
            kernel.push(eig.eigenvectors.column(i).into_owned());
        }
    }
    let dim = kernel.len();
    let cost = |m: &[f64]| -> f64 {
        m.iter().zip(a).map(|(&me, &ae)| ae * tau_star(me / ae - 1.0)).sum()
    };
    if dim == 0 {
        return cost(&m);
    }
    // Damped Newton in kernel coordinates; gradient is log(m/a), Hessian
    // diag(1/m), both reduced through the basis.
    for _ in 0..200 {
        let g = DVector::from_iterator(ne, m.iter().zip(a).map(|(&me, &ae)| (me / ae).ln()));
        let gr = DVector::from_iterator(dim, kernel.iter().map(|z| z.dot(&g)));
        if gr.amax() < 1e-11 {
            break;
        }
        let mut hr = DMatrix::<f64>::zeros(dim, dim);
        for p in 0..dim {
            for q in p..dim {
                let mut s = 0.0;
                for e in 0..ne {
                    s += kernel[p][e] * kernel[q][e] / m[e];
                }
                hr[(p, q)] = s;
                hr[(q, p)] = s;
            }
        }
        let step = hr
            .lu()
            .solve(&gr)
            .unwrap_or_else(|| gr.clone());
        let f0 = cost(&m);
        let mut s = 1.0;
        loop {
            let trial: Vec<f64> = (0..ne)
                .map(|e| {
                    let mut me = m[e];
                    for (p, z) in kernel.iter().enumerate() {
                        me -= s * step[p] * z[e];
                    }
                    me
                })
                .collect();
            if trial.iter().all(|&me| me > 0.0) && cost(&trial) <= f0 {
                m = trial;
                break;
            }
            s *= 0.5;
            if s < 1e-14 {
                break;
            }
        }
    }
    cost(&m)
}

// ---------------------------------------------------------------------------
// W-graphs by exhaustive filtering
// ---------------------------------------------------------------------------

/// Counts the W-graphs over `costs` with the given sink set and returns the
/// minimal total cost, by trying every arrow assignment and keeping the ones
/// from which every walk lands in a sink.
pub fn brute_force_w_graphs(costs: &[Vec<f64>], sinks: &BTreeSet<usize>) -> (u64, Option<f64>) {
    filter_assignments(costs, sinks, None)
}

/// Same exhaustive filter, restricted to W-graphs whose walk from `from`
/// visits `via` on the way to (or as) its sink.
pub fn brute_force_w_graphs_via(
    costs: &[Vec<f64>],
    sinks: &BTreeSet<usize>,
    from: usize,
    via: usize,
) -> (u64, Option<f64>) {
    filter_assignments(costs, sinks, Some((from, via)))
}

fn filter_assignments(
    costs: &[Vec<f64>],
    sinks: &BTreeSet<usize>,
    route: Option<(usize, usize)>,
) -> (u64, Option<f64>) {
    let n = costs.len();
    let free: Vec<usize> = (0..n).filter(|i| !sinks.contains(i)).collect();
    let mut count = 0u64;
    let mut best: Option<f64> = None;
    let mut choice = vec![0usize; free.len()];
    loop {
        // Current assignment: free[i] -> targets[i], skipping self-loops.
        let arrows: Vec<(usize, usize)> = free
            .iter()
            .zip(&choice)
            .map(|(&i, &c)| (i, if c >= i { c + 1 } else { c }))
            .collect();
        if walks_reach_sinks(n, &arrows, sinks)
            && route.is_none_or(|(f, v)| walk_visits(n, &arrows, sinks, f, v))
        {
            count += 1;
            let total: f64 = arrows.iter().map(|&(i, j)| costs[i][j]).sum();
            best = Some(match best {
                Some(b) => b.min(total),
                None => total,
            });
        }
        // Odometer over the (n-1)-ary digits.
        let mut pos = 0;
        loop {
            if pos == choice.len() {
                return (count, best);
            }
            choice[pos] += 1;
            if choice[pos] < n - 1 {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

fn walk_visits(
    n: usize,
    arrows: &[(usize, usize)],
    sinks: &BTreeSet<usize>,
    from: usize,
    via: usize,
) -> bool {
    let mut target = vec![usize::MAX; n];
    for &(i, j) in arrows {
        target[i] = j;
    }
    let mut at = from;
    let mut steps = 0;
    loop {
        if at == via {
            return true;
        }
        if sinks.contains(&at) || steps > n {
            return false;
        }
        at = target[at];
        steps += 1;
    }
}

fn walks_reach_sinks(n: usize, arrows: &[(usize, usize)], sinks: &BTreeSet<usize>) -> bool {
    let mut target = vec![usize::MAX; n];
    for &(i, j) in arrows {
        target[i] = j;
    }
    for &(start, _) in arrows {
        let mut seen = vec![false; n];
        let mut at = start;
        loop {
            if sinks.contains(&at) {
                break;
            }
            if seen[at] {
                return false; // walked into a cycle off the sink set
            }
            seen[at] = true;
            at = target[at];
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Grid value-iteration oracle for the bistable diagonal barrier
// ---------------------------------------------------------------------------

/// Quasipotential of the symmetric two-color mixture fixture from its low
/// stable point to the basin boundary at `x = 1/2`, by value iteration on a
/// uniform grid over the diagonal coordinate.
///
/// The reduction is rebuilt from scratch: with both categories equal at
/// `x`, color-1 mass grows through intensity `a(x) = (1-x)(0.1 + 1.5x^2)`
/// and shrinks through `b(x) = x(0.1 + 1.5(1-x)^2)`, and forcing the
/// diagonal to move at velocity `u` costs
/// `L(x,u) = sup_phi [phi u - a(e^phi - 1) - b(e^{-phi} - 1)]`, whose
/// maximizer is the closed-form root of a quadratic in `e^phi`. Edge costs
/// between neighboring grid points minimize `t * L(midpoint, dx/t)` over
/// the traversal time by golden-section search, and Bellman sweeps relax
/// both directions until the values are stationary.
pub fn dp_barrier_bistable(points: usize) -> f64 {
    let x_low = (1.0 - (11.0f64 / 15.0).sqrt()) / 2.0;
    let x_top = 0.5;
    let h = (x_top - x_low) / (points - 1) as f64;
    let lagrangian = |x: f64, u: f64| -> f64 {
        let a = (1.0 - x) * (0.1 + 1.5 * x * x);
        let b = x * (0.1 + 1.5 * (1.0 - x) * (1.0 - x));
        let y = (u + (u * u + 4.0 * a * b).sqrt()) / (2.0 * a);
        u * y.ln() - a * (y - 1.0) - b * (1.0 / y - 1.0)
    };
    let edge = |x_mid: f64, dx: f64| -> f64 {
        // Golden section over log traversal time.
        let (mut lo, mut hi) = ((1e-5f64).ln(), (1e5f64).ln());
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let f = |s: f64| {
            let t = s.exp();
            t * lagrangian(x_mid, dx / t)
        };
        let (mut p, mut q) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
        let (mut fp, mut fq) = (f(p), f(q));
        for _ in 0..120 {
            if fp <= fq {
                hi = q;
                q = p;
                fq = fp;
                p = hi - phi * (hi - lo);
                fp = f(p);
            } else {
                lo = p;
                p = q;
                fp = fq;
                q = lo + phi * (hi - lo);
                fq = f(q);
            }
        }
        fp.min(fq).max(0.0)
    };
    let up: Vec<f64> = (0..points - 1)
        .map(|i| edge(x_low + (i as f64 + 0.5) * h, h))
        .collect();
    let down: Vec<f64> = (0..points - 1)
        .map(|i| edge(x_low + (i as f64 + 0.5) * h, -h))
        .collect();
    let mut value = vec![f64::INFINITY; points];
    value[0] = 0.0;
    loop {
        let mut changed = false;
        for i in 0..points - 1 {
            let via_up = value[i] + up[i];
            if via_up < value[i + 1] - 1e-15 {
                value[i + 1] = via_up;
                changed = true;
            }
        }
        for i in (0..points - 1).rev() {
            let via_down = value[i + 1] + down[i];
            if via_down < value[i] - 1e-15 {
                value[i] = via_down;
                changed = true;
            }
        }
        if !changed {
            return value[points - 1];
        }
    }
}

// ---------------------------------------------------------------------------
// Two-sample chi-square
// ---------------------------------------------------------------------------

/// Two-sample chi-square on per-value histograms: pools the samples, merges
/// adjacent values until every pooled cell expects at least five counts in
/// each sample, and returns `(statistic, degrees of freedom, p-value)`.
pub fn two_sample_chi_square(xs: &[u64], ys: &[u64]) -> (f64, usize, f64) {
    assert_eq!(xs.len(), ys.len());
    let nx: f64 = xs.iter().sum::<u64>() as f64;
    let ny: f64 = ys.iter().sum::<u64>() as f64;
    let total = nx + ny;
    // Merge adjacent raw values so the pooled expectation clears the floor.
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    let floor = 5.0 * total / nx.min(ny); // pooled count ensuring e >= 5 in both
    for (&x, &y) in xs.iter().zip(ys) {
        acc.0 += x as f64;
        acc.1 += y as f64;
        if acc.0 + acc.1 >= floor {
            cells.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 + acc.1 > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => cells.push(acc),
        }
    }
    assert!(cells.len() >= 2, "need at least two cells after merging");
    let mut stat = 0.0;
    for &(cx, cy) in &cells {
        let pooled = cx + cy;
        let ex = pooled * nx / total;
        let ey = pooled * ny / total;
        stat += (cx - ex).powi(2) / ex + (cy - ey).powi(2) / ey;
    }
    let dof = cells.len() - 1;
    let p = 1.0 - ChiSquared::new(dof as f64).expect("dof >= 1").cdf(stat);
    (stat, dof, p)
}
