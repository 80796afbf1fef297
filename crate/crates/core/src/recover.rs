//! Forward simulation, bias and RMSE, and parameter-recovery studies.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{BenchmarkConfig, PriorChoice};
use crate::data::{Dataset, GroupColumn};
use crate::density::Model;
use crate::diagnostics::{diagnose, DiagnosticsReport, RHAT_THRESHOLD};
use crate::error::{Error, Result};
use crate::layout::{layout_for_shape, ParameterLayout, Role};
use crate::sampler::{sample, Draws, SamplerConfig};
use crate::spec::{ItemIntercept, Loading, ModelSpec, Transform};

/// Number of observations, optionally arranged as repeated measurements
/// within groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Design {
    Rows { rows: usize },
    Grouped { groups: usize, per_group: usize },
}

impl Design {
    pub fn rows(&self) -> usize {
        match *self {
            Design::Rows { rows } => rows,
            Design::Grouped { groups, per_group } => groups * per_group,
        }
    }

    /// Group column for `spec`, with labels `g1, g2, ...` and rows ordered by group.
    pub fn group_column(&self, spec: &ModelSpec) -> Option<GroupColumn> {
        let name = spec.group_column()?.to_string();
        let (groups, per_group) = match *self {
            Design::Rows { rows } => (rows, 1),
            Design::Grouped { groups, per_group } => (groups, per_group),
        };
        Some(GroupColumn {
            name,
            labels: (1..=groups).map(|g| format!("g{g}")).collect(),
            ids: (0..groups).flat_map(|g| std::iter::repeat_n(g, per_group)).collect(),
        })
    }

    pub fn layout(&self, spec: &ModelSpec) -> Result<ParameterLayout> {
        layout_for_shape(spec, self.rows(), self.group_column(spec).as_ref())
    }
}

/// A simulated dataset together with every value that generated it.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub data: Dataset,
    pub layout: ParameterLayout,
    /// Constrained values in layout order, including random intercepts and latent values.
    pub truth: Vec<f64>,
}

fn is_structural(role: Role) -> bool {
    !matches!(role, Role::LatentValue | Role::RandomIntercept)
}

/// Draws every structural parameter of `layout` from its prior.
pub fn draw_parameters<R: Rng + ?Sized>(layout: &ParameterLayout, rng: &mut R) -> Result<HashMap<String, f64>> {
    let mut out = HashMap::new();
    for e in layout.entries().iter().filter(|e| is_structural(e.role)) {
        let prior = e.prior.ok_or_else(|| Error::Model(format!("`{}` has no proper prior to draw from", e.name)))?;
        out.insert(e.name.clone(), prior.sample(rng)?);
    }
    Ok(out)
}

fn term_value(t: &Transform, unit_value: &dyn Fn(usize) -> f64, spec: &ModelSpec) -> f64 {
    let idx = |n: &str| spec.latent_index(n).expect("validated spec");
    match t {
        Transform::Intercept => 1.0,
        Transform::Identity(a) => unit_value(idx(a)),
        Transform::Product(a, b) => unit_value(idx(a)) * unit_value(idx(b)),
        Transform::Square(a) => unit_value(idx(a)).powi(2),
    }
}

fn overflow(what: &str) -> Error {
    Error::Rejected(format!("overflowing variances: non-finite value of `{what}`"))
}

/// Generates a dataset by ancestral sampling: random intercepts, then latent
/// values in topological order, then items, with censoring applied last.
pub fn simulate_dataset<R: Rng + ?Sized>(
    spec: &ModelSpec,
    params: &HashMap<String, f64>,
    design: Design,
    rng: &mut R,
) -> Result<Simulation> {
    let group = design.group_column(spec);
    let layout = layout_for_shape(spec, design.rows(), group.as_ref())?;
    let rows = design.rows();
    let b = &layout.blocks;
    let mut truth = vec![f64::NAN; layout.dim()];
    for e in layout.entries().iter().filter(|e| is_structural(e.role)) {
        let v = *params.get(&e.name).ok_or_else(|| Error::Model(format!("no value given for `{}`", e.name)))?;
        if e.support.unconstrain(v).is_none() {
            return Err(Error::OutOfSupport { name: e.name.clone(), value: v });
        }
        truth[e.index] = v;
    }
    let normal = |rng: &mut R| -> f64 { rng.sample(StandardNormal) };

    for li in 0..spec.latents.len() {
        for slot in 0..2 {
            if let Some((h, start)) = b.random[li][slot] {
                for g in 0..layout.groups() {
                    truth[start + g] = truth[h] * normal(rng);
                }
            }
        }
    }

    let group_of = |r: usize| group.as_ref().map_or(0, |g| g.ids[r]);
    let order = spec.topological_order()?;
    for &li in &order {
        let l = &spec.latents[li];
        let (base, units) = b.latent_values[li];
        let group_level = l.level.is_some();
        for u in 0..units {
            let g = if group_level { u } else { group_of(u) };
            let parent = |pj: usize| -> f64 {
                let (pbase, _) = b.latent_values[pj];
                if spec.latents[pj].level.is_some() && !group_level {
                    truth[pbase + g]
                } else {
                    truth[pbase + u]
                }
            };
            let mut mu = l.mean_fixed.unwrap_or(0.0);
            for (t, &k) in l.mu_predictor.iter().zip(&b.coefficients[li][0]) {
                mu += truth[k] * term_value(&t.transform, &parent, spec);
            }
            if let Some((_, start)) = b.random[li][0] {
                mu += truth[start + g];
            }
            let sd = if let Some(v) = l.sd_fixed {
                v
            } else if let Some(k) = b.latent_sd[li] {
                truth[k]
            } else {
                let mut eta = 0.0;
                for (t, &k) in l.sigma_predictor.iter().zip(&b.coefficients[li][1]) {
                    eta += truth[k] * term_value(&t.transform, &parent, spec);
                }
                if let Some((_, start)) = b.random[li][1] {
                    eta += truth[start + g];
                }
                eta.exp()
            };
            let v = mu + sd * normal(rng);
            if !v.is_finite() {
                return Err(overflow(&l.name));
            }
            truth[base + u] = v;
        }
    }

    let mut columns = Vec::with_capacity(spec.items.len());
    for (k, item) in spec.items.iter().enumerate() {
        let li = spec.latent_index(&item.latent).expect("validated spec");
        let (base, units) = b.latent_values[li];
        let lambda = match (item.loading, b.loading[k]) {
            (Loading::Fixed(v), _) => v,
            (_, Some(i)) => truth[i],
            _ => unreachable!("free loading without slot"),
        };
        let nu = match (item.intercept, b.intercept[k]) {
            (ItemIntercept::Fixed(v), _) => v,
            (_, Some(i)) => truth[i],
            _ => unreachable!("free intercept without slot"),
        };
        let tau = truth[b.resid_sd[k]];
        let per_unit: Vec<f64> = (0..units)
            .map(|u| {
                let y = nu + lambda * truth[base + u] + tau * normal(rng);
                match item.censor {
                    Some((lo, hi)) => y.clamp(lo, hi),
                    None => y,
                }
            })
            .collect();
        if per_unit.iter().any(|y| !y.is_finite()) {
            return Err(overflow(&item.name));
        }
        let col = if spec.latents[li].level.is_some() {
            (0..rows).map(|r| per_unit[group_of(r)]).collect()
        } else {
            per_unit
        };
        columns.push((item.name.clone(), col));
    }
    let group_arg = group.as_ref().map(|g| (g.name.clone(), g.ids.iter().map(|&i| g.labels[i].clone()).collect()));
    let data = Dataset::new(columns, group_arg)?;
    Ok(Simulation { data, layout, truth })
}

/// Draws parameters from the priors in `spec` and simulates, retrying
/// rejected datasets with fresh draws up to `max_resamples` times.
/// Returns the simulation and the number of rejected attempts.
pub fn simulate_from_prior<R: Rng + ?Sized>(
    spec: &ModelSpec,
    design: Design,
    max_resamples: usize,
    rng: &mut R,
) -> Result<(Simulation, usize)> {
    let layout = design.layout(spec)?;
    let mut last = None;
    for attempt in 0..=max_resamples {
        let params = draw_parameters(&layout, rng)?;
        match simulate_dataset(spec, &params, design, rng) {
            Ok(sim) => return Ok((sim, attempt)),
            Err(e @ Error::Rejected(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

fn check_draws(draws: &[f64]) -> Result<()> {
    if draws.len() < 2 {
        return Err(Error::InsufficientDraws { needed: 2, have: draws.len() });
    }
    Ok(())
}

/// Mean draw minus the true value.
pub fn bias(draws: &[f64], truth: f64) -> Result<f64> {
    check_draws(draws)?;
    Ok(draws.iter().sum::<f64>() / draws.len() as f64 - truth)
}

/// Root mean squared deviation of the draws from the true value.
pub fn rmse(draws: &[f64], truth: f64) -> Result<f64> {
    check_draws(draws)?;
    Ok((draws.iter().map(|d| (d - truth) * (d - truth)).sum::<f64>() / draws.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    pub name: String,
    pub role: Role,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Standard deviation of the draws with divisor `S`, so that
    /// `rmse^2 = posterior_sd^2 + bias^2`.
    pub posterior_sd: f64,
    pub q025: f64,
    pub q975: f64,
}

impl RecoveryMetrics {
    pub fn compute(name: &str, role: Role, draws: &[f64], truth: f64) -> Result<Self> {
        let b = bias(draws, truth)?;
        let mean = b + truth;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / draws.len() as f64;
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            name: name.to_string(),
            role,
            truth,
            mean,
            bias: b,
            rmse: rmse(draws, truth)?,
            posterior_sd: var.sqrt(),
            q025: crate::diagnostics::quantile_sorted(&sorted, 0.025),
            q975: crate::diagnostics::quantile_sorted(&sorted, 0.975),
        })
    }

    /// `rmse^2 - sd^2 - bias^2`, zero up to rounding.
    pub fn decomposition_residual(&self) -> f64 {
        self.rmse * self.rmse - self.posterior_sd * self.posterior_sd - self.bias * self.bias
    }

    pub fn covers(&self) -> bool {
        self.q025 <= self.truth && self.truth <= self.q975
    }
}

/// Recovery metrics for every structural parameter of a fit.
pub fn recovery_metrics(layout: &ParameterLayout, draws: &Draws, truth: &[f64]) -> Result<Vec<RecoveryMetrics>> {
    let mut out = Vec::new();
    for e in layout.entries().iter().filter(|e| is_structural(e.role)) {
        let values: Vec<f64> = draws.param(e.index).into_iter().flatten().collect();
        out.push(RecoveryMetrics::compute(&e.name, e.role, &values, truth[e.index])?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub sims: usize,
    pub design: Design,
    /// Prior used for fitting; true values always come from the generative prior.
    pub fit_prior: PriorChoice,
    pub sampler: SamplerConfig,
    pub seed: u64,
    pub max_resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum SimStatus {
    Fitted,
    Dropped { cause: String },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSummary {
    pub role: Role,
    pub mean_rhat: f64,
    pub mean_ess_bulk: f64,
    pub mean_ess_tail: f64,
    pub mean_ess_per_second: f64,
    pub mean_abs_bias: f64,
    pub mean_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub index: usize,
    pub status: SimStatus,
    pub resamples: usize,
    pub sampler_seed: u64,
    pub max_rhat: Option<f64>,
    /// Smallest bulk and tail ESS divided by the number of chains.
    pub min_ess_bulk_per_chain: Option<f64>,
    pub min_ess_tail_per_chain: Option<f64>,
    pub divergences: usize,
    pub seconds: f64,
    pub metrics: Vec<RecoveryMetrics>,
    pub roles: Vec<RoleSummary>,
}

impl SimOutcome {
    /// Convergence gate deciding inclusion in recovery aggregates.
    pub fn converged(&self) -> bool {
        self.status == SimStatus::Fitted && self.max_rhat.is_some_and(|r| r <= RHAT_THRESHOLD)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamAggregate {
    pub name: String,
    pub role: Role,
    pub n: usize,
    pub median_abs_bias: f64,
    pub median_bias: f64,
    pub median_rmse: f64,
    pub coverage_95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub benchmark: String,
    pub config: StudyConfig,
    pub outcomes: Vec<SimOutcome>,
    pub fitted: usize,
    pub dropped: usize,
    pub failed: usize,
    pub converged: usize,
    pub aggregates: Vec<ParamAggregate>,
}

impl StudyReport {
    pub fn aggregate(&self, name: &str) -> Option<&ParamAggregate> {
        self.aggregates.iter().find(|a| a.name == name)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    crate::diagnostics::quantile_sorted(&v, 0.5)
}

/// Per-parameter medians over converged simulations. A pure function of the
/// outcomes, so re-running it reproduces the same exclusions.
pub fn aggregate(outcomes: &[SimOutcome]) -> Vec<ParamAggregate> {
    let kept: Vec<&SimOutcome> = outcomes.iter().filter(|o| o.converged()).collect();
    let Some(first) = kept.first() else { return Vec::new() };
    first
        .metrics
        .iter()
        .map(|m| {
            let rows: Vec<&RecoveryMetrics> =
                kept.iter().filter_map(|o| o.metrics.iter().find(|x| x.name == m.name)).collect();
            ParamAggregate {
                name: m.name.clone(),
                role: m.role,
                n: rows.len(),
                median_abs_bias: median(rows.iter().map(|r| r.bias.abs()).collect()),
                median_bias: median(rows.iter().map(|r| r.bias).collect()),
                median_rmse: median(rows.iter().map(|r| r.rmse).collect()),
                coverage_95: rows.iter().filter(|r| r.covers()).count() as f64 / rows.len() as f64,
            }
        })
        .collect()
}

fn role_summaries(layout: &ParameterLayout, report: &DiagnosticsReport, metrics: &[RecoveryMetrics]) -> Vec<RoleSummary> {
    let mut roles: Vec<Role> = Vec::new();
    for e in layout.entries() {
        if !roles.contains(&e.role) {
            roles.push(e.role);
        }
    }
    let avg = |v: Vec<f64>| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    roles
        .into_iter()
        .map(|role| {
            let diags: Vec<_> = layout
                .entries()
                .iter()
                .filter(|e| e.role == role)
                .filter_map(|e| report.parameters.get(e.index))
                .collect();
            let ms: Vec<_> = metrics.iter().filter(|m| m.role == role).collect();
            RoleSummary {
                role,
                mean_rhat: avg(diags.iter().filter_map(|d| d.rhat).collect()),
                mean_ess_bulk: avg(diags.iter().filter_map(|d| d.ess_bulk).collect()),
                mean_ess_tail: avg(diags.iter().filter_map(|d| d.ess_tail).collect()),
                mean_ess_per_second: avg(diags.iter().filter_map(|d| d.ess_per_second).collect()),
                mean_abs_bias: avg(ms.iter().map(|m| m.bias.abs()).collect()),
                mean_rmse: avg(ms.iter().map(|m| m.rmse).collect()),
            }
        })
        .collect()
}

/// RNG for simulation `index` of a study or calibration run seeded by `seed`.
pub fn sim_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Simulates from the generative prior and fits with the chosen prior.
pub fn run_simulation(bench: &BenchmarkConfig, config: &StudyConfig, index: usize) -> Result<SimOutcome> {
    let generative = bench.spec(PriorChoice::Generative)?;
    let fitting = bench.spec(config.fit_prior)?;
    let mut rng = sim_rng(config.seed, index);
    let sampler_seed: u64 = rng.random();
    let mut outcome = SimOutcome {
        index,
        status: SimStatus::Fitted,
        resamples: 0,
        sampler_seed,
        max_rhat: None,
        min_ess_bulk_per_chain: None,
        min_ess_tail_per_chain: None,
        divergences: 0,
        seconds: 0.0,
        metrics: Vec::new(),
        roles: Vec::new(),
    };
    let sim = match simulate_from_prior(&generative, config.design, config.max_resamples, &mut rng) {
        Ok((sim, resamples)) => {
            outcome.resamples = resamples;
            sim
        }
        Err(Error::Rejected(cause)) => {
            outcome.status = SimStatus::Dropped { cause };
            outcome.resamples = config.max_resamples;
            return Ok(outcome);
        }
        Err(e) => return Err(e),
    };
    let start = Instant::now();
    let model = Model::new(&fitting, &sim.data)?;
    let sampler = SamplerConfig { seed: sampler_seed, ..config.sampler };
    let draws = match sample(&model, &sampler) {
        Ok(d) => d,
        Err(e) => {
            outcome.status = SimStatus::Failed { error: e.to_string() };
            return Ok(outcome);
        }
    };
    outcome.seconds = start.elapsed().as_secs_f64();
    let report = diagnose(&draws)?;
    let chains = draws.chains.len() as f64;
    outcome.max_rhat = report.max_rhat;
    outcome.min_ess_bulk_per_chain = report.min_ess_bulk.map(|e| e / chains);
    outcome.min_ess_tail_per_chain = report.min_ess_tail.map(|e| e / chains);
    outcome.divergences = draws.divergences();
    outcome.metrics = recovery_metrics(model.layout(), &draws, &sim.truth)?;
    outcome.roles = role_summaries(model.layout(), &report, &outcome.metrics);
    Ok(outcome)
}

/// Runs `config.sims` independent simulations, in parallel on the current
/// rayon pool. Outcomes are ordered by simulation index.
pub fn run_recovery_study(bench: &BenchmarkConfig, config: &StudyConfig) -> Result<StudyReport> {
    config.sampler.validate()?;
    let outcomes: Vec<SimOutcome> = (0..config.sims)
        .into_par_iter()
        .map(|i| {
            run_simulation(bench, config, i).unwrap_or_else(|e| SimOutcome {
                index: i,
                status: SimStatus::Failed { error: e.to_string() },
                resamples: 0,
                sampler_seed: 0,
                max_rhat: None,
                min_ess_bulk_per_chain: None,
                min_ess_tail_per_chain: None,
                divergences: 0,
                seconds: 0.0,
                metrics: Vec::new(),
                roles: Vec::new(),
            })
        })
        .collect();
    let count = |f: fn(&SimOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count();
    Ok(StudyReport {
        benchmark: bench.name.to_string(),
        config: config.clone(),
        fitted: count(|o| o.status == SimStatus::Fitted),
        dropped: count(|o| matches!(o.status, SimStatus::Dropped { .. })),
        failed: count(|o| matches!(o.status, SimStatus::Failed { .. })),
        converged: count(SimOutcome::converged),
        aggregates: aggregate(&outcomes),
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::parse_model;

    #[test]
    fn bias_rmse_trivial_cases() {
        assert_eq!(bias(&[2.0, 2.0], 2.0).unwrap(), 0.0);
        assert_eq!(rmse(&[2.0, 2.0], 2.0).unwrap(), 0.0);
        assert_eq!(bias(&[-1.0, 1.0], 0.0).unwrap(), 0.0);
        assert_eq!(rmse(&[-1.0, 1.0], 0.0).unwrap(), 1.0);
        assert!(bias(&[1.0], 0.0).is_err());
    }

    #[test]
    fn decomposition_on_fixed_draws() {
        let d = [0.3, 1.7, -0.2, 0.9, 2.5];
        let m = RecoveryMetrics::compute("x", Role::Loading, &d, 0.4).unwrap();
        assert!(m.decomposition_residual().abs() < 1e-12);
    }

    #[test]
    fn grouped_design_shape() {
        let spec = parse_model("latent a per id; latent b; a =~ x; b =~ y; mu(b) ~ a;").unwrap();
        let design = Design::Grouped { groups: 4, per_group: 3 };
        let g = design.group_column(&spec).unwrap();
        assert_eq!(g.ids, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]);
        let params: HashMap<String, f64> =
            [("resid_sd(x)", 0.5), ("resid_sd(y)", 0.5), ("mu(b).a", 1.0), ("sd(a)", 1.0), ("sd(b)", 1.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
        let sim = simulate_dataset(&spec, &params, design, &mut sim_rng(1, 0)).unwrap();
        let x = sim.data.column("x").unwrap();
        assert_eq!(x[0], x[2]);
        assert_ne!(x[2], x[3]);
        assert_eq!(sim.layout.count_role(Role::LatentValue), 4 + 12);
    }

    #[test]
    fn missing_parameter_value() {
        let spec = parse_model("latent a; a =~ x;").unwrap();
        let params = HashMap::new();
        assert!(matches!(
            simulate_dataset(&spec, &params, Design::Rows { rows: 3 }, &mut sim_rng(1, 0)),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn overflow_rejected() {
        let spec = parse_model("latent a; latent b; a =~ x; b =~ y; logsd(b) ~ 1 + square(a);").unwrap();
        let params: HashMap<String, f64> = [
            ("resid_sd(x)", 0.5),
            ("resid_sd(y)", 0.5),
            ("logsd(b).1", 0.0),
            ("logsd(b).square(a)", 1e6),
            ("sd(a)", 1.0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let err = simulate_dataset(&spec, &params, Design::Rows { rows: 50 }, &mut sim_rng(1, 0)).unwrap_err();
        assert!(matches!(err, Error::Rejected(ref m) if m.contains("overflowing variances")), "{err:?}");
    }

    #[test]
    fn censoring_applied() {
        let spec = parse_model("latent a; a =~ x; censor x in [-0.1, 0.1];").unwrap();
        let params: HashMap<String, f64> =
            [("resid_sd(x)", 1.0), ("sd(a)", 1.0)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let sim = simulate_dataset(&spec, &params, Design::Rows { rows: 200 }, &mut sim_rng(3, 0)).unwrap();
        let x = sim.data.column("x").unwrap();
        assert!(x.iter().all(|v| (-0.1..=0.1).contains(v)));
        assert!(x.iter().filter(|v| **v == 0.1).count() > 50);
    }
}
