//! Small numeric vocabulary shared across the crate.
//!
//! `Cost` is the crate's representation of `[0, +inf]`-valued quantities
//! (action values, quasipotentials, graph costs). Infinity is a variant, not
//! a float sentinel, so arithmetic and comparisons stay explicit.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;

/// Tolerance for probability-vector normalization checks.
pub const SIMPLEX_SUM_TOL: f64 = 1e-9;
/// Entries in `[-CLAMP_TOL, 0)` are treated as roundoff and clamped to zero.
pub const CLAMP_TOL: f64 = 1e-12;
/// Ties within this tolerance are reported as degenerate rather than broken
/// silently.
pub const TIE_TOL: f64 = 1e-12;

/// A value in `[0, +infinity]`.
///
/// `Infinite` marks unreachable transitions (no admissible path / no valid
/// graph), never a numeric overflow.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum Cost {
    Finite(f64),
    Infinite,
}

impl Cost {
    pub fn finite(self) -> Option<f64> {
        match self {
            Cost::Finite(v) => Some(v),
            Cost::Infinite => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    /// Unwraps a finite value; panics on `Infinite`. For contexts where
    /// finiteness has already been established.
    pub fn expect_finite(self, what: &str) -> f64 {
        match self {
            Cost::Finite(v) => v,
            Cost::Infinite => panic!("{what} is infinite"),
        }
    }

    pub fn min(self, other: Cost) -> Cost {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => Cost::Finite(a.min(b)),
            (Cost::Finite(a), Cost::Infinite) => Cost::Finite(a),
            (Cost::Infinite, b) => b,
        }
    }

    pub fn max(self, other: Cost) -> Cost {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => Cost::Finite(a.max(b)),
            _ => Cost::Infinite,
        }
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, rhs: Cost) -> Cost {
        match (self, rhs) {
            (Cost::Finite(a), Cost::Finite(b)) => Cost::Finite(a + b),
            _ => Cost::Infinite,
        }
    }
}

impl std::ops::Add<f64> for Cost {
    type Output = Cost;
    fn add(self, rhs: f64) -> Cost {
        self + Cost::Finite(rhs)
    }
}

impl std::ops::Sub<f64> for Cost {
    type Output = Cost;
    fn sub(self, rhs: f64) -> Cost {
        match self {
            Cost::Finite(a) => Cost::Finite(a - rhs),
            Cost::Infinite => Cost::Infinite,
        }
    }
}

impl PartialEq for Cost {
    fn eq(&self, other: &Cost) -> bool {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => a == b,
            (Cost::Infinite, Cost::Infinite) => true,
            _ => false,
        }
    }
}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Cost) -> Option<Ordering> {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => a.partial_cmp(b),
            (Cost::Finite(_), Cost::Infinite) => Some(Ordering::Less),
            (Cost::Infinite, Cost::Finite(_)) => Some(Ordering::Greater),
            (Cost::Infinite, Cost::Infinite) => Some(Ordering::Equal),
        }
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::Finite(v) => write!(f, "{v}"),
            Cost::Infinite => write!(f, "inf"),
        }
    }
}

/// Minimum of an iterator of costs; `Infinite` when empty or all-infinite.
pub fn cost_min<I: IntoIterator<Item = Cost>>(it: I) -> Cost {
    it.into_iter().fold(Cost::Infinite, Cost::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_dominates_ordering_and_addition() {
        assert!(Cost::Finite(1e300) < Cost::Infinite);
        assert_eq!(Cost::Finite(2.0) + Cost::Infinite, Cost::Infinite);
        assert_eq!(Cost::Finite(2.0) + Cost::Finite(3.0), Cost::Finite(5.0));
        assert_eq!(cost_min([Cost::Infinite, Cost::Finite(4.0)]), Cost::Finite(4.0));
        assert_eq!(cost_min(std::iter::empty::<Cost>()), Cost::Infinite);
    }
}
