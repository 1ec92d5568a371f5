//! Distributional validation of the jump-process simulator: agreement with
//! closed-form laws at constant rates, exponential holding times, the
//! internal consistency of event records, and the equivalence of the
//! aggregated and per-node drivers.

mod common;

use common::{random_single_block_model, rng, two_sample_chi_square};
use meanfield::fixtures;
use meanfield::model::{Category, ColorGraph, EmpiricalVector};
use meanfield::parallel::par_map;
use meanfield::sim::{self, PopulationCounts};
use rand::Rng as _;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

/// Terminal color-1 totals across replicas, as a histogram over `0..=n`.
fn terminal_histogram<F>(n: u64, replicas: usize, run: F) -> Vec<u64>
where
    F: Fn(usize) -> PopulationCounts + Sync + Send,
{
    let totals = par_map(replicas, |i| {
        let counts = run(i);
        let mut color1 = 0;
        for j in 0..counts.blocks() {
            for cat in Category::ALL {
                color1 += counts.count(j, cat, 1);
            }
        }
        color1
    });
    let mut hist = vec![0u64; n as usize + 1];
    for t in totals {
        hist[t as usize] += 1;
    }
    hist
}

/// At constant rates every node is an independent two-state chain, so the
/// terminal color-1 count starting from all-zero is exactly binomial with
/// the closed-form flip probability. One-sample chi-square against that law.
#[test]
fn terminal_counts_match_the_binomial_law_at_constant_rates() {
    let lam = 0.8;
    let t_end = 0.7;
    let n = 40u64;
    let replicas = 5000usize;
    let model = fixtures::constant_rate_model(ColorGraph::complete(2).unwrap(), lam);
    let all_zero = EmpiricalVector::new(1, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    let init = PopulationCounts::from_target(&model, n, &all_zero).unwrap();
    let hist = terminal_histogram(n, replicas, |i| {
        sim::simulate(&model, &init, t_end, 0x00b1_u64 + i as u64)
            .unwrap()
            .final_counts()
    });
    // Symmetric two-state chain: P(flipped by t) = (1 - e^{-2 lambda t}) / 2.
    let p_flip = 0.5 * (1.0 - (-2.0 * lam * t_end).exp());
    let law = Binomial::new(p_flip, n).unwrap();
    // Merge adjacent outcomes until every cell expects at least five.
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (v, &obs) in hist.iter().enumerate() {
        acc.0 += obs as f64;
        acc.1 += replicas as f64 * law.pmf(v as u64);
        if acc.1 >= 5.0 {
            cells.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if let Some(last) = cells.last_mut() {
        last.0 += acc.0;
        last.1 += acc.1;
    }
    let stat: f64 = cells.iter().map(|&(o, e)| (o - e).powi(2) / e).sum();
    let dof = cells.len() - 1;
    let p = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
    assert!(
        p > 0.001,
        "binomial law rejected: chi2 = {stat:.2} on {dof} dof, p = {p:.5}"
    );
}

/// Constant rates make the population-wide event clock a Poisson process:
/// inter-event gaps, pushed through their own CDF, must be uniform.
#[test]
fn holding_times_are_exponential_at_constant_rates() {
    let lam = 0.6;
    let n = 25u64;
    let model = fixtures::constant_rate_model(ColorGraph::complete(3).unwrap(), lam);
    let uniform = EmpiricalVector::uniform(1, 3);
    let init = PopulationCounts::from_target(&model, n, &uniform).unwrap();
    // Each node fires on two outgoing edges at rate lam apiece.
    let total_rate = n as f64 * lam * 2.0;
    let mut gaps = Vec::new();
    for r in 0..60u64 {
        let traj = sim::simulate(&model, &init, 6.0, 0x901d_0u64.wrapping_add(r)).unwrap();
        let mut last = 0.0;
        for e in &traj.events {
            gaps.push(e.time - last);
            last = e.time;
        }
        // The stretch from the final event to the horizon is censored; skip it.
    }
    assert!(gaps.len() > 4000, "expected a dense event stream, got {}", gaps.len());
    let bins = 20usize;
    let mut hist = vec![0u64; bins];
    for g in &gaps {
        let u = 1.0 - (-total_rate * g).exp();
        let b = ((u * bins as f64) as usize).min(bins - 1);
        hist[b] += 1;
    }
    let expect = gaps.len() as f64 / bins as f64;
    let stat: f64 = hist.iter().map(|&o| (o as f64 - expect).powi(2) / expect).sum();
    let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);
    assert!(
        p > 0.001,
        "exponential holding times rejected: chi2 = {stat:.2}, p = {p:.5}"
    );
}

/// The event log is a complete account: replaying it by hand from the
/// initial counts reproduces the recorded terminal state, with event times
/// nondecreasing inside the horizon.
#[test]
fn event_records_replay_to_the_terminal_state() {
    let mut r = rng(0xeeee);
    for round in 0..12u64 {
        let k = 2 + (round % 2) as usize;
        let model = random_single_block_model(&mut r, k);
        let init = PopulationCounts::from_target(
            &model,
            30,
            &common::random_state(&mut r, &model, 0.02),
        )
        .unwrap();
        let traj = sim::simulate(&model, &init, 1.0, 0xabc0 + round).unwrap();
        let mut counts = init.counts().to_vec();
        let mut last = 0.0;
        for e in &traj.events {
            assert!(e.time >= last && e.time <= 1.0, "event time out of order");
            last = e.time;
            let base = (e.block * 2 + e.category.index()) * model.colors();
            assert!(counts[base + e.from] > 0, "event fired from an empty cell");
            counts[base + e.from] -= 1;
            counts[base + e.to] += 1;
        }
        assert_eq!(
            counts,
            traj.final_counts().counts().to_vec(),
            "replayed counts diverged from the recorded terminal state"
        );
    }
}

/// The O(channels)-per-event aggregated driver and the O(N) per-node
/// reference driver sample the same law: two-sample chi-square on terminal
/// color counts of a random nonlinear model.
#[test]
fn aggregated_and_per_node_drivers_agree_in_law() {
    let mut r = rng(0x5eed_cafe);
    let model = random_single_block_model(&mut r, 2);
    let n = 36u64;
    let t_end = 1.0;
    let replicas = 2500usize;
    let start = EmpiricalVector::new(1, 2, vec![0.75, 0.25, 0.75, 0.25]).unwrap();
    let init = PopulationCounts::from_target(&model, n, &start).unwrap();
    let agg = terminal_histogram(n, replicas, |i| {
        sim::simulate(&model, &init, t_end, 0x1000_0000 + i as u64)
            .unwrap()
            .final_counts()
    });
    let per_node = terminal_histogram(n, replicas, |i| {
        sim::simulate_per_node(&model, &init, t_end, 0x2000_0000 + i as u64)
            .unwrap()
            .final_counts()
    });
    let (stat, dof, p) = two_sample_chi_square(&agg, &per_node);
    assert!(
        p > 0.001,
        "drivers disagree in law: chi2 = {stat:.2} on {dof} dof, p = {p:.5}"
    );
}
