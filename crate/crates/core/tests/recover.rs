use std::collections::HashMap;

use dsem::benchmarks::{all, benchmark, PriorChoice};
use dsem::error::Error;
use dsem::recover::{
    aggregate, draw_parameters, sim_rng, simulate_dataset, Design, RecoveryMetrics, SimOutcome, SimStatus,
};
use dsem::{parse_model, Role};
use proptest::prelude::*;

fn params(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

#[test]
fn latent_variance_follows_total_variance() {
    let spec = parse_model("latent a; latent b; a =~ x1 + x2; b =~ y1 + y2; mu(b) ~ a;").unwrap();
    let p = params(&[
        ("loading(x2)", 1.0),
        ("loading(y2)", 1.0),
        ("resid_sd(x1)", 0.5),
        ("resid_sd(x2)", 0.5),
        ("resid_sd(y1)", 0.5),
        ("resid_sd(y2)", 0.5),
        ("mu(b).a", 1.0),
        ("sd(a)", 1.0),
        ("sd(b)", 1.0),
    ]);
    let rows = 100_000;
    let sim = simulate_dataset(&spec, &p, Design::Rows { rows }, &mut sim_rng(1, 0)).unwrap();
    let start = sim.layout.index_of("b[0]").unwrap();
    let b = &sim.truth[start..start + rows];
    // Var(b) = sd(b)^2 + beta^2 Var(a) = 2.
    assert!((variance(b) / 2.0 - 1.0).abs() < 0.03, "{}", variance(b));
    // Unit loadings: Var(y) = Var(latent) + resid_sd^2.
    let x = sim.data.column("x2").unwrap();
    assert!((variance(x) / 1.25 - 1.0).abs() < 0.03, "{}", variance(x));
    let y = sim.data.column("y1").unwrap();
    assert!((variance(y) / 2.25 - 1.0).abs() < 0.03, "{}", variance(y));
}

#[test]
fn runaway_sequential_variance_is_rejected() {
    let bench = benchmark("sequential").unwrap();
    let spec = bench.spec(PriorChoice::Generative).unwrap();
    let layout = bench.design(500).layout(&spec).unwrap();
    let mut p = draw_parameters(&layout, &mut sim_rng(2, 0)).unwrap();
    for (name, v) in p.iter_mut() {
        if name.starts_with("logsd(") && name.contains("square") {
            *v = 1.0;
        }
    }
    let err = simulate_dataset(&spec, &p, bench.design(500), &mut sim_rng(2, 1)).unwrap_err();
    assert!(matches!(err, Error::Rejected(ref m) if m.contains("overflowing variances")), "{err}");
}

#[test]
fn simulation_is_deterministic() {
    let bench = benchmark("case-study-synthetic").unwrap();
    let spec = bench.spec(PriorChoice::Generative).unwrap();
    let layout = bench.design(10).layout(&spec).unwrap();
    let p = draw_parameters(&layout, &mut sim_rng(3, 0)).unwrap();
    let a = simulate_dataset(&spec, &p, bench.design(10), &mut sim_rng(3, 1)).unwrap();
    let b = simulate_dataset(&spec, &p, bench.design(10), &mut sim_rng(3, 1)).unwrap();
    assert_eq!(a.data, b.data);
    assert_eq!(a.truth, b.truth);
    assert_eq!(a.data.rows(), 30);
    let n1 = a.data.column("n1").unwrap();
    assert!(n1.iter().all(|v| (1.0..=5.0).contains(v)));
    assert_eq!(n1[0], n1[2]);
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[test]
fn benchmark_specs_match_golden_checksum() {
    let mut text = String::new();
    for b in all() {
        for prior in [PriorChoice::Generative, PriorChoice::Weak] {
            let spec = b.spec(prior).unwrap();
            let printed = spec.to_string();
            assert_eq!(parse_model(&printed).unwrap(), spec, "{} does not round-trip", b.name);
            text += &printed;
        }
    }
    assert_eq!(fnv1a(text.as_bytes()), GOLDEN, "benchmark definitions changed: {:#x}", fnv1a(text.as_bytes()));
}

const GOLDEN: u64 = 0x3b3a_2813_1aa4_cf95;

fn outcome(index: usize, rhat: f64, bias: f64) -> SimOutcome {
    let draws = [0.9 + bias, 1.1 + bias, 1.0 + bias];
    SimOutcome {
        index,
        status: SimStatus::Fitted,
        resamples: 0,
        sampler_seed: index as u64,
        max_rhat: Some(rhat),
        min_ess_bulk_per_chain: Some(200.0),
        min_ess_tail_per_chain: Some(200.0),
        divergences: 0,
        seconds: 1.0,
        metrics: vec![RecoveryMetrics::compute("mu(b).a", Role::StructuralCoefficient, &draws, 1.0).unwrap()],
        roles: Vec::new(),
    }
}

#[test]
fn aggregation_excludes_unconverged_simulations() {
    let outcomes = vec![outcome(0, 1.01, 0.1), outcome(1, 1.2, 5.0), outcome(2, 1.04, -0.3)];
    let agg = aggregate(&outcomes);
    assert_eq!(agg, aggregate(&outcomes));
    assert_eq!(agg[0].n, 2);
    assert!((agg[0].median_abs_bias - 0.2).abs() < 1e-12);
}

proptest! {
    #[test]
    fn rmse_decomposes_into_variance_and_bias(
        draws in proptest::collection::vec(-10.0f64..10.0, 2..200),
        truth in -10.0f64..10.0,
    ) {
        let m = RecoveryMetrics::compute("x", Role::Loading, &draws, truth).unwrap();
        prop_assert!(m.decomposition_residual().abs() < 1e-10);
        prop_assert!(m.rmse >= m.bias.abs());
    }
}
