//! Simulation-based calibration.
//!
//! Each simulation draws true values from the prior, simulates data, fits the
//! model with the same prior and records where each true value falls among
//! `L` thinned posterior draws. When the sampler targets the right posterior
//! the ranks are uniform on `0..=L`, which is checked with the difference
//! between the rank ECDF and the uniform CDF and a simultaneous band.
//!
//! ```
//! use dsem::calibrate::ecdf_diff_band;
//!
//! let ranks: Vec<usize> = (0..100).map(|k| k % 100).collect();
//! let band = ecdf_diff_band(&ranks, 99, 0.95).unwrap();
//! assert!(band.within);
//! let all_zero = vec![0; 100];
//! assert!(!ecdf_diff_band(&all_zero, 99, 0.95).unwrap().within);
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::density::Model;
use crate::error::{Error, Result};
use crate::layout::Role;
use crate::recover::{draw_parameters, sim_rng, simulate_dataset, Design};
use crate::sampler::{sample, SamplerConfig};
use crate::spec::ModelSpec;

/// Thinned posterior draws per rank.
pub const DEFAULT_L: usize = 99;
/// Largest tolerated fraction of dropped simulations.
pub const MAX_DROPPED_FRACTION: f64 = 0.2;
/// Name of the joint log-likelihood quantity.
pub const LOGLIK: &str = "loglik";

const BAND_SETS: usize = 5000;
const BAND_SEED: u64 = 0x5bc_ba4d;

/// Picks exactly `l` evenly spaced draws with stride `floor(len / l)`.
pub fn thin_indices(len: usize, l: usize) -> Result<Vec<usize>> {
    if l == 0 || len < l {
        return Err(Error::InsufficientDraws { needed: l, have: len });
    }
    let stride = len / l;
    Ok((0..l).map(|k| k * stride).collect())
}

/// Number of draws strictly below `truth`, plus a uniform share of the ties.
pub fn rank_statistic<R: Rng + ?Sized>(draws: &[f64], truth: f64, l: usize, rng: &mut R) -> Result<usize> {
    let idx = thin_indices(draws.len(), l)?;
    let below = idx.iter().filter(|&&i| draws[i] < truth).count();
    let ties = idx.iter().filter(|&&i| draws[i] == truth).count();
    Ok(below + if ties > 0 { rng.random_range(0..=ties) } else { 0 })
}

/// Joint conditional log-likelihood of data and latent values at an
/// unconstrained draw.
pub fn loglik_quantity(model: &Model, point: &[f64]) -> Result<f64> {
    model.log_likelihood(point)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfBand {
    /// Fractional rank `(k + 1) / (L + 1)` for `k = 0..=L`.
    pub grid: Vec<f64>,
    /// Rank ECDF minus the uniform CDF at each grid point.
    pub diff: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub confidence: f64,
    pub within: bool,
}

/// Simultaneous band for `n` ranks on `0..=l`. The pointwise level is set so
/// that the simultaneous coverage over uniform rank sets matches
/// `confidence`, estimated on a fixed set of Monte Carlo replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct BandTable {
    pub n: usize,
    pub l: usize,
    pub confidence: f64,
    /// Counts `lo[k] ..= hi[k]` of ranks `<= k` are inside the band.
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

fn tail_probabilities(n: usize, l: usize) -> Result<Vec<Vec<f64>>> {
    (0..l)
        .map(|k| {
            let p = (k + 1) as f64 / (l + 1) as f64;
            let b = Binomial::new(p, n as u64).map_err(|e| Error::Distribution(e.to_string()))?;
            Ok((0..=n as u64)
                .map(|c| {
                    let lower = b.cdf(c);
                    let upper = if c == 0 { 1.0 } else { b.sf(c - 1) };
                    (2.0 * lower.min(upper)).min(1.0)
                })
                .collect())
        })
        .collect()
}

fn cumulative_counts(ranks: &[usize], l: usize) -> Vec<usize> {
    let mut hist = vec![0usize; l + 1];
    for &r in ranks {
        hist[r.min(l)] += 1;
    }
    let mut acc = 0;
    hist.iter()
        .map(|h| {
            acc += h;
            acc
        })
        .collect()
}

impl BandTable {
    pub fn new(n: usize, l: usize, confidence: f64) -> Result<Self> {
        if n < 20 {
            return Err(Error::InsufficientDraws { needed: 20, have: n });
        }
        if !(confidence > 0.0 && confidence < 1.0) || l == 0 {
            return Err(Error::Config(format!("confidence {confidence} must be in (0, 1) and L at least 1")));
        }
        let tails = tail_probabilities(n, l)?;
        let mut rng = ChaCha8Rng::seed_from_u64(BAND_SEED);
        let mut stats: Vec<f64> = (0..BAND_SETS)
            .map(|_| {
                let ranks: Vec<usize> = (0..n).map(|_| rng.random_range(0..=l)).collect();
                let counts = cumulative_counts(&ranks, l);
                (0..l).map(|k| tails[k][counts[k]]).fold(1.0, f64::min)
            })
            .collect();
        stats.sort_by(f64::total_cmp);
        let gamma = stats[((1.0 - confidence) * BAND_SETS as f64).floor() as usize];
        let (lo, hi) = tails
            .iter()
            .map(|t| {
                let lo = t.iter().position(|&p| p >= gamma).unwrap_or(0);
                let hi = t.iter().rposition(|&p| p >= gamma).unwrap_or(n);
                (lo, hi)
            })
            .unzip();
        Ok(Self { n, l, confidence, lo, hi })
    }

    pub fn evaluate(&self, ranks: &[usize]) -> Result<EcdfBand> {
        if ranks.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: ranks.len() });
        }
        if let Some(&r) = ranks.iter().find(|&&r| r > self.l) {
            return Err(Error::Data(format!("rank {r} exceeds L = {}", self.l)));
        }
        let counts = cumulative_counts(ranks, self.l);
        let nf = self.n as f64;
        let grid: Vec<f64> = (0..=self.l).map(|k| (k + 1) as f64 / (self.l + 1) as f64).collect();
        let diff: Vec<f64> = counts.iter().zip(&grid).map(|(&c, p)| c as f64 / nf - p).collect();
        let mut lower: Vec<f64> = self.lo.iter().zip(&grid).map(|(&c, p)| c as f64 / nf - p).collect();
        let mut upper: Vec<f64> = self.hi.iter().zip(&grid).map(|(&c, p)| c as f64 / nf - p).collect();
        lower.push(0.0);
        upper.push(0.0);
        let within = (0..self.l).all(|k| (self.lo[k]..=self.hi[k]).contains(&counts[k]));
        Ok(EcdfBand { grid, diff, lower, upper, confidence: self.confidence, within })
    }
}

/// ECDF difference of `ranks` on `0..=l` with its simultaneous band.
pub fn ecdf_diff_band(ranks: &[usize], l: usize, confidence: f64) -> Result<EcdfBand> {
    BandTable::new(ranks.len(), l, confidence)?.evaluate(ranks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityResult {
    pub name: String,
    /// `None` for the log-likelihood.
    pub role: Option<Role>,
    pub ranks: Vec<usize>,
    pub band: EcdfBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSim {
    pub index: usize,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcResult {
    pub l: usize,
    pub sims: usize,
    /// Indices of the simulations that contributed ranks.
    pub completed: Vec<usize>,
    pub dropped: Vec<DroppedSim>,
    pub quantities: Vec<QuantityResult>,
}

impl SbcResult {
    pub fn quantity(&self, name: &str) -> Option<&QuantityResult> {
        self.quantities.iter().find(|q| q.name == name)
    }

    pub fn fraction_within(&self) -> f64 {
        self.quantities.iter().filter(|q| q.band.within).count() as f64 / self.quantities.len().max(1) as f64
    }
}

/// What one simulation contributes: per-quantity true values and draws, or
/// the reason it was dropped.
#[derive(Debug, Clone, PartialEq)]
pub enum SimDraws {
    Ranked { truth: Vec<f64>, draws: Vec<Vec<f64>> },
    Dropped(String),
}

/// Runs `sims` simulations through `simulate` and ranks every quantity.
/// Each simulation gets its own RNG stream, so results do not depend on the
/// order in which workers finish.
pub fn sbc_generic<F>(names: &[(String, Option<Role>)], sims: usize, l: usize, seed: u64, simulate: F) -> Result<SbcResult>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Result<SimDraws> + Sync,
{
    let results: Vec<Result<(SimDraws, ChaCha8Rng)>> = (0..sims)
        .into_par_iter()
        .map(|i| {
            let mut rng = sim_rng(seed, i);
            let out = simulate(i, &mut rng)?;
            Ok((out, rng))
        })
        .collect();
    let mut completed = Vec::new();
    let mut dropped = Vec::new();
    let mut ranks: Vec<Vec<usize>> = vec![Vec::new(); names.len()];
    for (i, r) in results.into_iter().enumerate() {
        let (out, mut rng) = r?;
        match out {
            SimDraws::Dropped(cause) => dropped.push(DroppedSim { index: i, cause }),
            SimDraws::Ranked { truth, draws } => {
                if truth.len() != names.len() || draws.len() != names.len() {
                    return Err(Error::Dimension { expected: names.len(), got: truth.len().min(draws.len()) });
                }
                for (q, (t, d)) in truth.iter().zip(&draws).enumerate() {
                    ranks[q].push(rank_statistic(d, *t, l, &mut rng)?);
                }
                completed.push(i);
            }
        }
    }
    if dropped.len() as f64 > MAX_DROPPED_FRACTION * sims as f64 {
        return Err(Error::TooManyDropped { dropped: dropped.len(), total: sims });
    }
    let table = BandTable::new(completed.len(), l, 0.95)?;
    let quantities = names
        .iter()
        .zip(ranks)
        .map(|((name, role), ranks)| {
            Ok(QuantityResult { name: name.clone(), role: *role, band: table.evaluate(&ranks)?, ranks })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SbcResult { l, sims, completed, dropped, quantities })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcConfig {
    pub sims: usize,
    pub design: Design,
    pub sampler: SamplerConfig,
    pub seed: u64,
    pub l: usize,
    /// Include the joint log-likelihood as a quantity.
    pub loglik: bool,
}

/// Simulation-based calibration of `spec` with its own (proper) priors.
/// Quantities are the structural parameters and, optionally, the joint
/// log-likelihood; latent values and random intercepts are not ranked.
pub fn sbc_run(spec: &ModelSpec, config: &SbcConfig) -> Result<SbcResult> {
    config.sampler.validate()?;
    let layout = config.design.layout(spec)?;
    let params: Vec<(usize, String, Role)> = layout
        .entries()
        .iter()
        .filter(|e| !matches!(e.role, Role::LatentValue | Role::RandomIntercept))
        .map(|e| (e.index, e.name.clone(), e.role))
        .collect();
    let mut names: Vec<(String, Option<Role>)> = params.iter().map(|(_, n, r)| (n.clone(), Some(*r))).collect();
    if config.loglik {
        names.push((LOGLIK.to_string(), None));
    }
    // Proper priors are a precondition; fail early rather than per simulation.
    draw_parameters(&layout, &mut sim_rng(config.seed, usize::MAX))?;

    sbc_generic(&names, config.sims, config.l, config.seed, |_, rng| {
        let truth_params = draw_parameters(&layout, rng)?;
        let sim = match simulate_dataset(spec, &truth_params, config.design, rng) {
            Ok(s) => s,
            Err(Error::Rejected(cause)) => return Ok(SimDraws::Dropped(cause)),
            Err(e) => return Err(e),
        };
        let model = Model::new(spec, &sim.data)?;
        let sampler = SamplerConfig { seed: rng.random(), ..config.sampler };
        let draws = match sample(&model, &sampler) {
            Ok(d) => d,
            Err(e @ Error::Initialization(_)) => return Ok(SimDraws::Dropped(e.to_string())),
            Err(e) => return Err(e),
        };
        let constrained: Vec<&Vec<f64>> = draws.chains.iter().flat_map(|c| &c.constrained).collect();
        let unconstrained: Vec<&Vec<f64>> = draws.chains.iter().flat_map(|c| &c.unconstrained).collect();
        let idx = thin_indices(constrained.len(), config.l)?;
        let mut truth: Vec<f64> = params.iter().map(|(k, _, _)| sim.truth[*k]).collect();
        let mut out: Vec<Vec<f64>> =
            params.iter().map(|(k, _, _)| idx.iter().map(|&i| constrained[i][*k]).collect()).collect();
        if config.loglik {
            truth.push(model.log_likelihood_constrained(&sim.truth)?);
            out.push(idx.iter().map(|&i| loglik_quantity(&model, unconstrained[i])).collect::<Result<_>>()?);
        }
        Ok(SimDraws::Ranked { truth, draws: out })
    })
}

/// Calibration of the pipeline without data: the "posterior" is `l` fresh
/// prior draws, so ranks are exactly uniform. Useful as a null check of the
/// rank and band machinery on a real parameter layout.
pub fn sbc_prior_only(spec: &ModelSpec, design: Design, sims: usize, l: usize, seed: u64) -> Result<SbcResult> {
    let layout = design.layout(spec)?;
    let names: Vec<(String, Option<Role>)> = layout
        .entries()
        .iter()
        .filter(|e| !matches!(e.role, Role::LatentValue | Role::RandomIntercept))
        .map(|e| (e.name.clone(), Some(e.role)))
        .collect();
    sbc_generic(&names, sims, l, seed, |_, rng| {
        let truth = draw_parameters(&layout, rng)?;
        let fits = (0..l).map(|_| draw_parameters(&layout, rng)).collect::<Result<Vec<_>>>()?;
        Ok(SimDraws::Ranked {
            truth: names.iter().map(|(n, _)| truth[n]).collect(),
            draws: names.iter().map(|(n, _)| fits.iter().map(|f| f[n]).collect()).collect(),
        })
    })
}
