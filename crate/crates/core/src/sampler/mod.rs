//! Adaptive No-U-Turn sampling with several independently seeded chains.
//!
//! ```
//! use dsem::density::LogDensity;
//! use dsem::sampler::{sample, SamplerConfig};
//!
//! struct StdNormal;
//! impl LogDensity for StdNormal {
//!     fn dim(&self) -> usize { 2 }
//!     fn log_density_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
//!         for (g, x) in g.iter_mut().zip(x) { *g = -x; }
//!         -0.5 * x.iter().map(|x| x * x).sum::<f64>()
//!     }
//! }
//!
//! let config = SamplerConfig { chains: 2, warmup: 200, samples: 200, ..SamplerConfig::default() };
//! let draws = sample(&StdNormal, &config).unwrap();
//! assert_eq!(draws.chains.len(), 2);
//! assert_eq!(draws.chains[0].constrained.len(), 200);
//! ```

mod adapt;
mod nuts;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::density::{LogDensity, Model};
use crate::error::{Error, Result};
use crate::layout::ParameterLayout;
use crate::spec::ModelSpec;

use adapt::{MetricAdapter, StepSizeAdapter};
use nuts::{Hamiltonian, Point};

const MAX_INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub target_accept: f64,
    pub max_depth: usize,
    pub seed: u64,
    pub init_radius: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { chains: 4, warmup: 1000, samples: 1000, target_accept: 0.8, max_depth: 10, seed: 1, init_radius: 2.0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.warmup == 0 || self.samples == 0 || self.max_depth == 0 {
            return Err(Error::Config("chains, warmup, samples and max depth must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!("target acceptance {} not in (0, 1)", self.target_accept)));
        }
        if !(self.init_radius >= 0.0 && self.init_radius.is_finite()) {
            return Err(Error::Config(format!("initialization radius {} must be finite and non-negative", self.init_radius)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub accept_stat: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub step_size: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    /// `[iteration][parameter]` on the sampler's scale.
    pub unconstrained: Vec<Vec<f64>>,
    /// `[iteration][parameter]` on the reported scale.
    pub constrained: Vec<Vec<f64>>,
    pub stats: Vec<IterationStats>,
    /// Final diagonal inverse mass matrix.
    pub inv_metric: Vec<f64>,
    pub initial: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub names: Vec<String>,
    pub config: SamplerConfig,
    pub chains: Vec<ChainDraws>,
}

impl Draws {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn iterations(&self) -> usize {
        self.chains.first().map_or(0, |c| c.constrained.len())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Constrained draws of parameter `k` as `[chain][iteration]`.
    pub fn param(&self, k: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.constrained.iter().map(|row| row[k]).collect()).collect()
    }

    pub fn param_by_name(&self, name: &str) -> Option<Vec<Vec<f64>>> {
        self.index_of(name).map(|k| self.param(k))
    }

    /// Posterior mean of every parameter over all chains.
    pub fn means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.dim()];
        let mut n = 0usize;
        for c in &self.chains {
            for row in &c.constrained {
                for (s, v) in sums.iter_mut().zip(row) {
                    *s += v;
                }
                n += 1;
            }
        }
        sums.iter().map(|s| s / n.max(1) as f64).collect()
    }

    pub fn divergences(&self) -> usize {
        self.chains.iter().flat_map(|c| &c.stats).filter(|s| s.divergent).count()
    }

    pub fn divergent_fraction(&self) -> f64 {
        let total: usize = self.chains.iter().map(|c| c.stats.len()).sum();
        self.divergences() as f64 / total.max(1) as f64
    }

    pub fn total_seconds(&self) -> f64 {
        self.chains.iter().map(|c| c.seconds).sum()
    }
}

/// Samples `target` with one independent NUTS chain per `config.chains`.
pub fn sample<D: LogDensity + ?Sized>(target: &D, config: &SamplerConfig) -> Result<Draws> {
    config.validate()?;
    let chains: Vec<Result<ChainDraws>> =
        (0..config.chains).into_par_iter().map(|c| run_chain(target, config, c)).collect();
    let chains = chains.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Draws { names: target.param_names(), config: *config, chains })
}

/// Compiles the model and samples its posterior.
pub fn run_chains(spec: &ModelSpec, layout: &ParameterLayout, data: &Dataset, config: &SamplerConfig) -> Result<Draws> {
    let model = Model::with_layout(spec, layout.clone(), data)?;
    sample(&model, config)
}

/// Runs fresh chains with the previous configuration and a new seed.
pub fn resume_with_new_seed<D: LogDensity + ?Sized>(previous: &Draws, target: &D, seed: u64) -> Result<Draws> {
    if previous.dim() != target.dim() {
        return Err(Error::Dimension { expected: previous.dim(), got: target.dim() });
    }
    let config = SamplerConfig { seed, ..previous.config };
    sample(target, &config)
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn initialize<D: LogDensity + ?Sized, R: Rng>(target: &D, radius: f64, rng: &mut R) -> Result<Point> {
    for _ in 0..MAX_INIT_ATTEMPTS {
        let q: Vec<f64> = (0..target.dim())
            .map(|_| if radius > 0.0 { rng.random_range(-radius..=radius) } else { 0.0 })
            .collect();
        let z = Point::new(target, q);
        if z.is_finite() {
            return Ok(z);
        }
    }
    Err(Error::Initialization(MAX_INIT_ATTEMPTS))
}

/// Doubles or halves `eps` until a single leapfrog step crosses an
/// acceptance probability of 0.8.
fn init_step_size<D: LogDensity + ?Sized, R: Rng>(ham: &Hamiltonian<'_, D>, z: &Point, mut eps: f64, rng: &mut R) -> f64 {
    let log_target = 0.8f64.ln();
    let delta = |eps: f64, rng: &mut R| {
        let mut zz = z.clone();
        ham.sample_momentum(&mut zz, rng);
        let h0 = ham.energy(&zz);
        ham.leapfrog(&mut zz, eps);
        h0 - ham.energy(&zz)
    };
    let direction = if delta(eps, rng) > log_target { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let d = delta(eps, rng);
        if (direction > 0.0 && !(d > log_target)) || (direction < 0.0 && !(d < log_target)) {
            break;
        }
        eps = if direction > 0.0 { 2.0 * eps } else { 0.5 * eps };
        if !(1e-12..=1e7).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-12, 1e7)
}

fn run_chain<D: LogDensity + ?Sized>(target: &D, config: &SamplerConfig, chain: usize) -> Result<ChainDraws> {
    let start = Instant::now();
    let dim = target.dim();
    let mut rng = chain_rng(config.seed, chain);
    let mut z = initialize(target, config.init_radius, &mut rng)?;
    let initial = z.q.clone();
    let mut inv_metric = vec![1.0; dim];

    let mut eps = {
        let ham = Hamiltonian { target, inv_metric: &inv_metric };
        init_step_size(&ham, &z, 1.0, &mut rng)
    };
    let mut step = StepSizeAdapter::new(config.target_accept);
    step.restart(eps);
    let mut metric = MetricAdapter::new(dim, config.warmup);

    for _ in 0..config.warmup {
        let t = {
            let ham = Hamiltonian { target, inv_metric: &inv_metric };
            ham.transition(&mut z, eps, config.max_depth, &mut rng)
        };
        eps = step.learn(t.accept_stat);
        if metric.learn(&mut inv_metric, &z.q) {
            let ham = Hamiltonian { target, inv_metric: &inv_metric };
            eps = init_step_size(&ham, &z, eps, &mut rng);
            step.restart(eps);
        }
    }
    eps = step.final_step_size();

    let ham = Hamiltonian { target, inv_metric: &inv_metric };
    let mut unconstrained = Vec::with_capacity(config.samples);
    let mut constrained = Vec::with_capacity(config.samples);
    let mut stats = Vec::with_capacity(config.samples);
    for _ in 0..config.samples {
        let t = ham.transition(&mut z, eps, config.max_depth, &mut rng);
        stats.push(IterationStats {
            accept_stat: t.accept_stat,
            tree_depth: t.depth,
            n_leapfrog: t.n_leapfrog,
            divergent: t.divergent,
            step_size: eps,
            energy: t.energy,
        });
        constrained.push(target.constrain(&z.q));
        unconstrained.push(z.q.clone());
    }
    Ok(ChainDraws { unconstrained, constrained, stats, inv_metric, initial, seconds: start.elapsed().as_secs_f64() })
}
