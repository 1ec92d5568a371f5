//! Finite-state mean-field jump systems on block-structured graphs.
//!
//! The crate covers the full pipeline from finite-`N` stochastic simulation
//! to metastability analysis of the mean-field limit:
//!
//! * [`model`] — graphs, blocks, rate families, empirical vectors;
//! * [`sim`] — exact event-driven simulation of the `N`-node process,
//!   stopping times, hitting chains, and path log-likelihoods;
//! * [`mvode`] — the McKean–Vlasov limit ODE, equilibrium search, and the
//!   compact catalog;
//! * [`action`] — the large-deviations action functional: primal
//!   (rate-based) and dual (potential-based) forms, explicit
//!   constant-velocity transport paths with cost bounds, and time
//!   rescaling;
//! * [`qpot`] — quasipotential estimation by path minimization;
//! * [`fw`] — W-graph combinatorics: stability levels, exit and transition
//!   exponents, and the critical constant for convergence to the invariant
//!   measure;
//! * [`cycles`] — the cycle hierarchy with exit-rate and transition
//!   predictions;
//! * [`experiments`] — reproducible multi-replica studies (law of large
//!   numbers, exit-time scaling, occupation fractions, convergence probe);
//! * [`config`] / [`io`] — TOML model files and schema-versioned CSV/JSON
//!   artifacts.
//!
//! Replica sweeps and pair matrices run through [`parallel::par_map`],
//! which is backed by rayon under the default `parallel` feature and by a
//! plain loop without it; results are identical either way.

pub mod action;
pub mod config;
pub mod cycles;
pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod fw;
pub mod io;
pub mod model;
pub mod mvode;
pub mod num;
pub mod parallel;
pub mod qpot;
pub mod sim;

pub use error::{Error, Result};
pub use model::{BlockModel, Category, ColorGraph, EmpiricalVector};
pub use num::Cost;
