use dsem::benchmarks::{benchmark, PriorChoice};
use dsem::diagnostics::{ess_bulk, quantile_sorted};
use dsem::recover::{sim_rng, simulate_from_prior};
use dsem::sampler::{resume_with_new_seed, sample, SamplerConfig};
use dsem::{LogDensity, Model};
use statrs::distribution::{ContinuousCDF, Normal};

struct StdNormal(usize);

impl LogDensity for StdNormal {
    fn dim(&self) -> usize {
        self.0
    }

    fn log_density_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi = -xi;
        }
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Zero-mean Gaussian with a fixed precision matrix.
struct Correlated {
    precision: Vec<Vec<f64>>,
}

impl LogDensity for Correlated {
    fn dim(&self) -> usize {
        self.precision.len()
    }

    fn log_density_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for (i, row) in self.precision.iter().enumerate() {
            let px: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            g[i] = -px;
            lp -= 0.5 * x[i] * px;
        }
        lp
    }
}

fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().copied().chain((0..n).map(|j| if i == j { 1.0 } else { 0.0 })).collect())
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, p);
        let d = a[c][c];
        a[c].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                let pivot = a[c].clone();
                a[r].iter_mut().zip(&pivot).for_each(|(v, p)| *v -= f * p);
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

#[test]
fn standard_normal_moments() {
    let config = SamplerConfig { seed: 42, ..Default::default() };
    let draws = sample(&StdNormal(10), &config).unwrap();
    for k in 0..10 {
        let v: Vec<f64> = draws.param(k).into_iter().flatten().collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.05, "coordinate {k}: mean {mean}");
        assert!((sd - 1.0).abs() < 0.05, "coordinate {k}: sd {sd}");
    }
    assert_eq!(draws.divergences(), 0);
}

#[test]
fn standard_normal_quantiles_within_monte_carlo_error() {
    let config = SamplerConfig { seed: 9, ..Default::default() };
    let draws = sample(&StdNormal(4), &config).unwrap();
    let std = Normal::new(0.0, 1.0).unwrap();
    for k in 0..4 {
        let chains = draws.param(k);
        let ess = ess_bulk(&chains).unwrap();
        let mut v: Vec<f64> = chains.into_iter().flatten().collect();
        v.sort_by(f64::total_cmp);
        for p in [0.05, 0.25, 0.5, 0.75, 0.95] {
            let q = quantile_sorted(&v, p);
            // Standard error of the empirical CDF at the true quantile, on the probability scale.
            let se = (p * (1.0 - p) / ess).sqrt();
            let z = (std.cdf(q) - p) / se;
            assert!(z.abs() < 4.0, "coordinate {k}, p = {p}: z = {z}");
        }
    }
}

#[test]
fn correlated_gaussian_covariance() {
    let cov = vec![
        vec![1.0, 0.9, 0.0],
        vec![0.9, 1.0, 0.3],
        vec![0.0, 0.3, 4.0],
    ];
    let target = Correlated { precision: invert(&cov) };
    let config = SamplerConfig { seed: 3, samples: 2000, ..Default::default() };
    let draws = sample(&target, &config).unwrap();
    let rows: Vec<&Vec<f64>> = draws.chains.iter().flat_map(|c| &c.constrained).collect();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..3).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let mut err = 0.0;
    let mut norm = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let s = rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1.0);
            err += (s - cov[i][j]).powi(2);
            norm += cov[i][j].powi(2);
        }
    }
    let rel = (err / norm).sqrt();
    assert!(rel < 0.1, "relative Frobenius error {rel}");
}

#[test]
fn fresh_seed_gives_fresh_chains() {
    let config = SamplerConfig { chains: 2, warmup: 100, samples: 50, seed: 5, ..Default::default() };
    let first = sample(&StdNormal(3), &config).unwrap();
    let again = resume_with_new_seed(&first, &StdNormal(3), 5).unwrap();
    for (a, b) in again.chains.iter().zip(&first.chains) {
        assert_eq!(a.unconstrained, b.unconstrained);
        assert_eq!(a.stats, b.stats);
    }
    let other = resume_with_new_seed(&first, &StdNormal(3), 6).unwrap();
    assert_ne!(other.chains[0].initial, first.chains[0].initial);
    assert!(resume_with_new_seed(&first, &StdNormal(4), 6).is_err());
}

#[test]
fn benchmark_fits_rarely_diverge() {
    let config = SamplerConfig { chains: 2, warmup: 500, samples: 500, seed: 17, ..Default::default() };
    for name in ["two-factor", "mediation", "interaction", "sequential"] {
        let bench = benchmark(name).unwrap();
        let spec = bench.spec(PriorChoice::Generative).unwrap();
        let (sim, _) = simulate_from_prior(&spec, bench.design(200), 5, &mut sim_rng(17, 0)).unwrap();
        let model = Model::new(&spec, &sim.data).unwrap();
        let draws = sample(&model, &config).unwrap();
        let frac = draws.divergent_fraction();
        assert!(frac < 0.01, "{name}: {:.2}% divergent", 100.0 * frac);
    }
}
