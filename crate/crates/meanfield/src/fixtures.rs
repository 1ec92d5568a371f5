//! Canonical example models used by the test suite, benches, and docs.
//!
//! Both fixtures are single-block two-color systems whose central and
//! peripheral rates coincide and depend on the *block mixture*
//! `m = p_central * mu_c + p_peripheral * mu_p`. With equal category
//! fractions every equilibrium has `mu_c = mu_p`, so the mean-field flow and
//! the minimizing transition paths reduce to one dimension, which is what
//! makes the dense 1-D oracles in the test suite exact references.

use crate::model::{
    BlockModel, BlockSpec, ColorGraph, EdgeRateFn, MeasureRef, ParametricRates, RateSpec, RateTerm,
};

/// `base + q * m(color)^2` expanded over the mixture with equal category
/// weights: `m(z) = (mu_c(z) + mu_p(z)) / 2`.
fn mixture_square(base: f64, q: f64, color: usize) -> EdgeRateFn {
    EdgeRateFn {
        base,
        terms: vec![
            RateTerm {
                coeff: q * 0.25,
                factors: vec![(MeasureRef::OwnCentral, color), (MeasureRef::OwnCentral, color)],
            },
            RateTerm {
                coeff: q * 0.5,
                factors: vec![(MeasureRef::OwnCentral, color), (MeasureRef::OwnPeripheral, color)],
            },
            RateTerm {
                coeff: q * 0.25,
                factors: vec![(MeasureRef::OwnPeripheral, color), (MeasureRef::OwnPeripheral, color)],
            },
        ],
    }
}

fn two_color_mixture_model(base_01: f64, base_10: f64, q: f64) -> BlockModel {
    let graph = ColorGraph::new(2, vec![(0, 1), (1, 0)]).expect("valid 2-color graph");
    let blocks = vec![BlockSpec { alpha: 1.0, p_central: 0.5, p_peripheral: 0.5 }];
    // Edge list is sorted: index 0 = (0,1), index 1 = (1,0).
    let per_edge = vec![mixture_square(base_01, q, 1), mixture_square(base_10, q, 0)];
    let rates = ParametricRates {
        lower: 0.1,
        upper: 4.0,
        central: vec![per_edge.clone()],
        peripheral: vec![per_edge],
    };
    BlockModel::new(graph, blocks, RateSpec::Parametric(rates)).expect("valid fixture")
}

/// Symmetric bistable fixture: `lambda_01 = 0.1 + 1.5 m(1)^2`,
/// `lambda_10 = 0.1 + 1.5 m(0)^2`.
///
/// On the diagonal the flow is `xdot = (2x-1)(1.5x(1-x) - 0.1)`: stable
/// equilibria at `x = (1 ± sqrt(11/15))/2 ≈ 0.0718255 / 0.9281745`, an
/// unstable one at `x = 1/2`, symmetric under color swap.
pub fn two_color_bistable() -> BlockModel {
    two_color_mixture_model(0.1, 0.1, 1.5)
}

/// Stable diagonal coordinates of [`two_color_bistable`]:
/// `x = (1 - sqrt(11/15))/2` and its mirror.
pub fn bistable_stable_points() -> (f64, f64) {
    let s = (11.0f64 / 15.0).sqrt();
    ((1.0 - s) / 2.0, (1.0 + s) / 2.0)
}

/// Tilted bistable fixture: `lambda_01 = 0.18 + 1.2 m(1)^2`,
/// `lambda_10 = 0.15 + 1.2 m(0)^2`.
///
/// Diagonal equilibria near 0.196881 (shallow), 0.442779 (saddle), and
/// 0.860340 (deep); the deep compact has stability level `s = 0` and the
/// shallow one `s ≈ 0.0495`.
pub fn two_color_tilted() -> BlockModel {
    two_color_mixture_model(0.18, 0.15, 1.2)
}

/// Single-block model with constant rate `lam` on every admissible edge of
/// the given graph; handy for closed-form oracles.
pub fn constant_rate_model(graph: ColorGraph, lam: f64) -> BlockModel {
    let ne = graph.edge_count();
    let per_edge = vec![EdgeRateFn::constant(lam); ne];
    let rates = ParametricRates {
        lower: (lam * 0.01).min(0.01),
        upper: lam.max(1.0) * 2.0,
        central: vec![per_edge.clone()],
        peripheral: vec![per_edge],
    };
    let blocks = vec![BlockSpec { alpha: 1.0, p_central: 0.5, p_peripheral: 0.5 }];
    BlockModel::new(graph, blocks, RateSpec::Parametric(rates)).expect("valid constant-rate model")
}

/// An 8-state connection-cost matrix with a three-tier metastable
/// hierarchy, used to exercise the graph machinery end to end. Diagonal
/// zero; entry `[i][j]` is the cost of moving from state `i` to state `j`.
pub fn eight_state_cost_matrix() -> Vec<Vec<f64>> {
    vec![
        vec![0.0, 2.0, 4.0, 6.0, 7.0, 6.0, 12.0, 8.0],
        vec![6.0, 0.0, 1.0, 8.0, 9.0, 11.0, 13.0, 15.0],
        vec![5.0, 7.0, 0.0, 10.0, 11.0, 8.0, 9.0, 11.0],
        vec![5.0, 10.0, 20.0, 0.0, 3.0, 4.0, 8.0, 9.0],
        vec![10.0, 11.0, 12.0, 7.0, 0.0, 18.0, 16.0, 21.0],
        vec![7.0, 11.0, 13.0, 9.0, 11.0, 0.0, 8.0, 6.0],
        vec![8.0, 9.0, 14.0, 8.0, 13.0, 4.0, 0.0, 10.0],
        vec![15.0, 12.0, 9.0, 7.0, 10.0, 11.0, 5.0, 0.0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Category, EmpiricalVector};

    #[test]
    fn bistable_rates_match_the_mixture_formula() {
        let m = two_color_bistable();
        let ev = EmpiricalVector::new(1, 2, vec![0.2, 0.8, 0.4, 0.6]).unwrap();
        let mix1: f64 = 0.5 * 0.8 + 0.5 * 0.6;
        let mix0 = 1.0 - mix1;
        let e01 = m.graph().edge_index(0, 1).unwrap();
        let e10 = m.graph().edge_index(1, 0).unwrap();
        for cat in Category::ALL {
            assert!((m.rate(0, cat, e01, &ev) - (0.1 + 1.5 * mix1 * mix1)).abs() < 1e-15);
            assert!((m.rate(0, cat, e10, &ev) - (0.1 + 1.5 * mix0 * mix0)).abs() < 1e-15);
        }
    }

    #[test]
    fn stable_points_satisfy_the_diagonal_fixed_point_equation() {
        let (lo, hi) = bistable_stable_points();
        for x in [lo, hi, 0.5] {
            let f = (2.0 * x - 1.0) * (1.5 * x * (1.0 - x) - 0.1);
            assert!(f.abs() < 1e-14, "f({x}) = {f}");
        }
    }
}
