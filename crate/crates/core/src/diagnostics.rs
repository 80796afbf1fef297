//! Rank-normalized split-R̂, bulk and tail effective sample size.
//!
//! All functions take draws as `[chain][iteration]`. Chains are split in
//! half before anything is computed, so a chain that drifts is caught even
//! when only one chain is run.
//!
//! ```
//! use dsem::diagnostics::{ess_bulk, split_rhat};
//!
//! let a: Vec<f64> = (0..200).map(|k| ((k * 37) % 101) as f64).collect();
//! let b: Vec<f64> = (0..200).map(|k| ((k * 53) % 101) as f64).collect();
//! let chains = vec![a, b];
//! assert!(split_rhat(&chains).unwrap() < 1.05);
//! assert!(ess_bulk(&chains).unwrap() > 100.0);
//! ```

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::layout::{ParameterLayout, Role};
use crate::sampler::Draws;

/// Convergence gate on R̂.
pub const RHAT_THRESHOLD: f64 = 1.05;

/// Draws per chain, which must be at least 4.
fn check_shape(values: &[Vec<f64>]) -> Result<usize> {
    let n = values.iter().map(Vec::len).min().unwrap_or(0);
    if values.is_empty() || n < 4 {
        return Err(Error::InsufficientDraws { needed: 4, have: n });
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("draws".into()));
    }
    Ok(n)
}

/// Split halves need at least 4 draws for the autocorrelation sums.
fn check_ess_shape(values: &[Vec<f64>]) -> Result<()> {
    let n = values.iter().map(Vec::len).min().unwrap_or(0);
    if n < 8 {
        return Err(Error::InsufficientDraws { needed: 8, have: n });
    }
    Ok(())
}

fn is_constant(values: &[Vec<f64>]) -> bool {
    let first = values.iter().flatten().next().copied();
    values.iter().flatten().all(|&v| Some(v) == first)
}

/// Splits each chain into its first and second halves, dropping the middle
/// draw of odd-length chains.
pub fn split_chains(values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * values.len());
    for c in values {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Average ranks of the pooled draws, mapped through the inverse normal CDF
/// of `(r - 3/8) / (S + 1/4)`.
pub fn rank_normalize(values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let pooled: Vec<f64> = values.iter().flatten().copied().collect();
    let s = pooled.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let normal = Normal::standard();
    let z: Vec<f64> =
        ranks.iter().map(|r| normal.inverse_cdf((r - 0.375) / (s as f64 + 0.25))).collect();
    let mut out = Vec::with_capacity(values.len());
    let mut k = 0;
    for c in values {
        out.push(z[k..k + c.len()].to_vec());
        k += c.len();
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Classic potential scale reduction on chains of equal length.
fn rhat_basic(chains: &[Vec<f64>]) -> Option<f64> {
    let n = chains.iter().map(Vec::len).min()? as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let b = n * sample_var(&means);
    if !(w > 0.0) {
        return None;
    }
    Some(((w * (n - 1.0) / n + b / n) / w).sqrt())
}

fn median(values: &[Vec<f64>]) -> f64 {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// R̂ of the rank-normalized split chains, without the folded variant.
pub fn rank_normalized_rhat(values: &[Vec<f64>]) -> Result<f64> {
    check_shape(values)?;
    if is_constant(values) {
        return Err(Error::Degenerate("constant draws".into()));
    }
    rhat_basic(&rank_normalize(&split_chains(values)))
        .ok_or_else(|| Error::Degenerate("zero within-chain variance".into()))
}

/// Larger of the rank-normalized and folded rank-normalized split R̂.
pub fn split_rhat(values: &[Vec<f64>]) -> Result<f64> {
    let bulk = rank_normalized_rhat(values)?;
    let med = median(values);
    let folded: Vec<Vec<f64>> = values.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
    let tail = rhat_basic(&rank_normalize(&split_chains(&folded))).unwrap_or(bulk);
    Ok(bulk.max(tail))
}

struct Autocov<'a> {
    chains: &'a [Vec<f64>],
    means: Vec<f64>,
    n: usize,
}

impl Autocov<'_> {
    /// Biased autocovariance at `lag`, averaged over chains.
    fn at(&self, lag: usize) -> f64 {
        let n = self.n;
        let mut total = 0.0;
        for (c, &m) in self.chains.iter().zip(&self.means) {
            let mut s = 0.0;
            for i in 0..n - lag {
                s += (c[i] - m) * (c[i + lag] - m);
            }
            total += s / n as f64;
        }
        total / self.chains.len() as f64
    }
}

/// Multi-chain ESS with Geyer's initial monotone sequence truncation, on
/// chains used as given.
fn ess_chains(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min()?;
    if n < 4 {
        return None;
    }
    let chains: Vec<Vec<f64>> = chains.iter().map(|c| c[..n].to_vec()).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let ac = Autocov { chains: &chains, means: means.clone(), n };
    let nf = n as f64;
    let mean_var = ac.at(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if !(var_plus > 0.0) {
        return None;
    }
    let rho = |lag: usize| 1.0 - (mean_var - ac.at(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    let mut even = 1.0;
    rho_hat[0] = even;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut s = 1;
    while s + 5 < n && even + odd > 0.0 {
        even = rho(s + 1);
        odd = rho(s + 2);
        if even + odd >= 0.0 {
            rho_hat[s + 1] = even;
            rho_hat[s + 2] = odd;
        }
        s += 2;
    }
    let max_s = s;
    if even > 0.0 {
        rho_hat[max_s + 1] = even;
    }
    let mut t = 1;
    while t + 3 <= max_s {
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t] {
            rho_hat[t + 1] = (rho_hat[t - 1] + rho_hat[t]) / 2.0;
            rho_hat[t + 2] = rho_hat[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat[..max_s].iter().sum::<f64>() + rho_hat[max_s + 1];
    Some((total / tau).min(1.5 * total))
}

/// Effective sample size of the rank-normalized split chains.
pub fn ess_bulk(values: &[Vec<f64>]) -> Result<f64> {
    check_shape(values)?;
    if is_constant(values) {
        return Err(Error::Degenerate("constant draws".into()));
    }
    check_ess_shape(values)?;
    ess_chains(&rank_normalize(&split_chains(values))).ok_or_else(|| Error::Degenerate("zero variance".into()))
}

fn ess_quantile(split: &[Vec<f64>], p: f64) -> Option<f64> {
    let mut pooled: Vec<f64> = split.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let q = quantile_sorted(&pooled, p);
    let ind: Vec<Vec<f64>> =
        split.iter().map(|c| c.iter().map(|&v| if v <= q { 1.0 } else { 0.0 }).collect()).collect();
    if is_constant(&ind) {
        return None;
    }
    ess_chains(&ind)
}

/// Smaller of the ESS of the 5% and 95% quantile indicator sequences.
pub fn ess_tail(values: &[Vec<f64>]) -> Result<f64> {
    check_shape(values)?;
    if is_constant(values) {
        return Err(Error::Degenerate("constant draws".into()));
    }
    check_ess_shape(values)?;
    let split = split_chains(values);
    let lo = ess_quantile(&split, 0.05);
    let hi = ess_quantile(&split, 0.95);
    match (lo, hi) {
        (Some(a), Some(b)) => Ok(a.min(b)),
        _ => Err(Error::Degenerate("constant tail indicator".into())),
    }
}

pub fn ess_per_second(ess: f64, wall_seconds: f64) -> f64 {
    ess / wall_seconds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    /// `None` when the draws are degenerate.
    pub rhat: Option<f64>,
    pub ess_bulk: Option<f64>,
    pub ess_tail: Option<f64>,
    pub ess_per_second: Option<f64>,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

impl ParamDiagnostics {
    pub fn compute(name: &str, values: &[Vec<f64>], seconds: f64) -> Result<Self> {
        check_shape(values)?;
        let mut pooled: Vec<f64> = values.iter().flatten().copied().collect();
        pooled.sort_by(f64::total_cmp);
        let m = mean(&pooled);
        let sd = if pooled.len() > 1 { sample_var(&pooled).sqrt() } else { 0.0 };
        let rhat = split_rhat(values).ok();
        let ess_bulk = ess_bulk(values).ok();
        let ess_tail = ess_tail(values).ok();
        Ok(Self {
            name: name.to_string(),
            rhat,
            ess_bulk,
            ess_tail,
            ess_per_second: ess_bulk.filter(|_| seconds > 0.0).map(|e| ess_per_second(e, seconds)),
            mean: m,
            sd,
            q05: quantile_sorted(&pooled, 0.05),
            q50: quantile_sorted(&pooled, 0.5),
            q95: quantile_sorted(&pooled, 0.95),
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.rhat.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub parameters: Vec<ParamDiagnostics>,
    pub chains: usize,
    pub iterations: usize,
    pub max_rhat: Option<f64>,
    pub min_ess_bulk: Option<f64>,
    pub min_ess_tail: Option<f64>,
    pub divergences: usize,
    pub rhat_threshold: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl DiagnosticsReport {
    pub fn get(&self, name: &str) -> Option<&ParamDiagnostics> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Diagnoses every parameter in `draws`. Degenerate parameters are left out
/// of the run-level summaries and reported as warnings.
pub fn diagnose(draws: &Draws) -> Result<DiagnosticsReport> {
    let seconds = draws.total_seconds();
    let mut parameters = Vec::with_capacity(draws.dim());
    for (k, name) in draws.names.iter().enumerate() {
        parameters.push(ParamDiagnostics::compute(name, &draws.param(k), seconds)?);
    }
    Ok(summarize(parameters, draws.chains.len(), draws.iterations(), draws.divergences()))
}

pub fn summarize(parameters: Vec<ParamDiagnostics>, chains: usize, iterations: usize, divergences: usize) -> DiagnosticsReport {
    let fold = |f: fn(&ParamDiagnostics) -> Option<f64>, max: bool| {
        parameters.iter().filter_map(f).reduce(|a, b| if max { a.max(b) } else { a.min(b) })
    };
    let max_rhat = fold(|p| p.rhat, true);
    let min_ess_bulk = fold(|p| p.ess_bulk, false);
    let min_ess_tail = fold(|p| p.ess_tail, false);
    let warnings: Vec<String> = parameters
        .iter()
        .filter(|p| p.is_degenerate())
        .map(|p| format!("`{}` is degenerate and excluded from the summary", p.name))
        .collect();
    DiagnosticsReport {
        converged: max_rhat.is_some_and(|r| r <= RHAT_THRESHOLD),
        parameters,
        chains,
        iterations,
        max_rhat,
        min_ess_bulk,
        min_ess_tail,
        divergences,
        rhat_threshold: RHAT_THRESHOLD,
        warnings,
    }
}

/// Average ESS per second over parameters of each role, for the roles present.
pub fn ess_per_second_by_role(report: &DiagnosticsReport, layout: &ParameterLayout) -> Vec<(Role, f64)> {
    let mut out: Vec<(Role, f64, usize)> = Vec::new();
    for e in layout.entries() {
        let Some(v) = report.get(&e.name).and_then(|p| p.ess_per_second) else { continue };
        match out.iter_mut().find(|(r, _, _)| *r == e.role) {
            Some(slot) => {
                slot.1 += v;
                slot.2 += 1;
            }
            None => out.push((e.role, v, 1)),
        }
    }
    out.into_iter().map(|(r, s, n)| (r, s / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_drops_middle_of_odd_chain() {
        let s = split_chains(&[vec![1.0, 2.0, 3.0, 4.0, 5.0]]);
        assert_eq!(s, vec![vec![1.0, 2.0], vec![4.0, 5.0]]);
    }

    #[test]
    fn average_ranks_on_ties() {
        let z = rank_normalize(&[vec![1.0, 1.0, 2.0]]);
        assert_eq!(z[0][0], z[0][1]);
        assert!(z[0][2] > 0.0);
    }

    #[test]
    fn constant_is_degenerate() {
        let v = vec![vec![2.0; 10], vec![2.0; 10]];
        assert!(matches!(split_rhat(&v), Err(Error::Degenerate(_))));
        assert!(matches!(ess_bulk(&v), Err(Error::Degenerate(_))));
        let p = ParamDiagnostics::compute("c", &v, 1.0).unwrap();
        assert!(p.is_degenerate());
        let r = summarize(vec![p], 2, 10, 0);
        assert_eq!(r.warnings.len(), 1);
        assert!(!r.converged);
    }

    #[test]
    fn too_few_draws() {
        assert!(matches!(split_rhat(&[vec![1.0, 2.0, 3.0]]), Err(Error::InsufficientDraws { .. })));
    }

    #[test]
    fn ess_per_second_arithmetic() {
        assert_eq!(ess_per_second(2000.0, 10.0), 200.0);
    }
}
