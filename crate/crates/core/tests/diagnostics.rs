use dsem::diagnostics::{ess_bulk, ess_per_second, ess_tail, rank_normalize, split_rhat};
use dsem::error::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn iid(chains: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..chains).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
}

fn ar1(chains: usize, n: usize, rho: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let innovation = (1.0 - rho * rho).sqrt();
    (0..chains)
        .map(|_| {
            let mut x: f64 = StandardNormal.sample(&mut rng);
            (0..n)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    x = rho * x + innovation * e;
                    x
                })
                .collect()
        })
        .collect()
}

#[test]
fn iid_draws_look_converged() {
    let v = iid(4, 1000, 3);
    let rhat = split_rhat(&v).unwrap();
    assert!((0.999..=1.01).contains(&rhat), "{rhat}");
    let bulk = ess_bulk(&v).unwrap();
    assert!((3200.0..=4800.0).contains(&bulk), "{bulk}");
    let tail = ess_tail(&v).unwrap();
    assert!((2400.0..=6000.0).contains(&tail), "{tail}");
}

#[test]
fn autocorrelated_draws_match_analytic_ess() {
    let rho = 0.9;
    let v = ar1(4, 5000, rho, 5);
    let expected = 20_000.0 * (1.0 - rho) / (1.0 + rho);
    let bulk = ess_bulk(&v).unwrap();
    assert!(bulk > expected / 1.5 && bulk < expected * 1.5, "{bulk} vs {expected}");
}

#[test]
fn offset_chains_are_flagged() {
    let mut v = iid(2, 1000, 7);
    for x in &mut v[1] {
        *x += 5.0;
    }
    assert!(split_rhat(&v).unwrap() > 1.5);
}

#[test]
fn constant_draws_are_degenerate() {
    let v = vec![vec![1.0; 100]; 4];
    assert!(matches!(split_rhat(&v), Err(Error::Degenerate(_))));
    assert!(matches!(ess_bulk(&v), Err(Error::Degenerate(_))));
}

#[test]
fn ess_per_second_is_linear() {
    assert_eq!(ess_per_second(2000.0, 10.0), 200.0);
    assert_eq!(ess_per_second(4000.0, 10.0), 2.0 * ess_per_second(2000.0, 10.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn chain_order_does_not_matter(seed in any::<u64>(), shift in 0usize..4) {
        let v = ar1(4, 200, 0.5, seed);
        let mut w = v.clone();
        w.rotate_left(shift);
        prop_assert!((split_rhat(&v).unwrap() - split_rhat(&w).unwrap()).abs() < 1e-12);
        prop_assert!((ess_bulk(&v).unwrap() - ess_bulk(&w).unwrap()).abs() < 1e-9);
        prop_assert!((ess_tail(&v).unwrap() - ess_tail(&w).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn rank_normalized_rhat_ignores_monotone_transforms(seed in any::<u64>()) {
        let v = ar1(4, 200, 0.3, seed);
        let w: Vec<Vec<f64>> = v.iter().map(|c| c.iter().map(|x| (0.7 * x).exp() + x * x * x).collect()).collect();
        let a = dsem::diagnostics::rank_normalized_rhat(&v).unwrap();
        let b = dsem::diagnostics::rank_normalized_rhat(&w).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((ess_bulk(&v).unwrap() - ess_bulk(&w).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn rank_normalized_values_are_centered(seed in any::<u64>()) {
        let v = iid(3, 101, seed);
        let z = rank_normalize(&v);
        let mean = z.iter().flatten().sum::<f64>() / 303.0;
        prop_assert!(mean.abs() < 1e-10);
    }

    #[test]
    fn rhat_and_ess_stay_in_range(seed in any::<u64>(), rho in 0.0f64..0.95) {
        // Split R-hat can dip below one by about 1 / (2n) for n draws per half-chain.
        let v = ar1(4, 2000, rho, seed);
        prop_assert!(split_rhat(&v).unwrap() >= 1.0 - 1e-3);
        let e = ess_bulk(&v).unwrap();
        prop_assert!(e > 0.0 && e <= 8000.0 * 1.5);
    }
}
