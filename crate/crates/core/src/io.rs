//! File formats: long-format draws CSV, plot-ready report tables and JSON.
//!
//! Draws are written one value per row as `chain,iter,name,value`. Sampler
//! statistics use reserved names ending in `__` so that a draws file alone is
//! enough to rebuild the diagnostics report.
//!
//! ```
//! use dsem::io::{read_draws_csv, write_draws_csv};
//! use dsem::sampler::{sample, SamplerConfig};
//! # use dsem::LogDensity;
//! # struct Normal;
//! # impl LogDensity for Normal {
//! #     fn dim(&self) -> usize { 1 }
//! #     fn log_density_grad(&self, x: &[f64], g: &mut [f64]) -> f64 { g[0] = -x[0]; -0.5 * x[0] * x[0] }
//! # }
//!
//! let config = SamplerConfig { chains: 2, warmup: 50, samples: 20, ..Default::default() };
//! let draws = sample(&Normal, &config).unwrap();
//! let mut buf = Vec::new();
//! write_draws_csv(&draws, &mut buf).unwrap();
//! let back = read_draws_csv(buf.as_slice()).unwrap();
//! assert_eq!(back.param(0), draws.param(0));
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;

use crate::calibrate::SbcResult;
use crate::error::{Error, Result};
use crate::recover::{SimStatus, StudyReport};
use crate::sampler::{ChainDraws, Draws, IterationStats, SamplerConfig};

const STAT_NAMES: [&str; 6] = ["accept_stat__", "treedepth__", "n_leapfrog__", "divergent__", "stepsize__", "energy__"];

fn stat_values(s: &IterationStats) -> [f64; 6] {
    [
        s.accept_stat,
        s.tree_depth as f64,
        s.n_leapfrog as f64,
        if s.divergent { 1.0 } else { 0.0 },
        s.step_size,
        s.energy,
    ]
}

pub fn write_draws_csv<W: Write>(draws: &Draws, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["chain", "iter", "name", "value"])?;
    for (c, chain) in draws.chains.iter().enumerate() {
        for (i, (row, stats)) in chain.constrained.iter().zip(&chain.stats).enumerate() {
            let (cs, is) = (c.to_string(), i.to_string());
            for (name, v) in draws.names.iter().zip(row) {
                w.write_record([cs.as_str(), is.as_str(), name.as_str(), &v.to_string()])?;
            }
            for (name, v) in STAT_NAMES.iter().zip(stat_values(stats)) {
                w.write_record([cs.as_str(), is.as_str(), name, &v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn schema(message: impl Into<String>) -> Error {
    Error::Data(format!("draws file: {}", message.into()))
}

/// Reads a draws file. Only constrained values and sampler statistics are
/// stored, so `unconstrained`, `initial` and `inv_metric` come back empty and
/// chain timings are zero.
pub fn read_draws_csv<R: Read>(reader: R) -> Result<Draws> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["chain", "iter", "name", "value"] {
        return Err(schema("expected header `chain,iter,name,value`"));
    }
    let mut names: Vec<String> = Vec::new();
    let mut name_index: BTreeMap<String, usize> = BTreeMap::new();
    // values[chain][iter][name index]; stats[chain][iter][stat index]
    let mut values: Vec<Vec<Vec<Option<f64>>>> = Vec::new();
    let mut stats: Vec<Vec<[Option<f64>; 6]>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let field = |k: usize| rec.get(k).ok_or_else(|| schema(format!("row {row} has {} fields", rec.len())));
        let chain: usize = field(0)?.parse().map_err(|_| schema(format!("row {row}: bad chain index")))?;
        let iter: usize = field(1)?.parse().map_err(|_| schema(format!("row {row}: bad iteration")))?;
        let name = field(2)?;
        let value: f64 = field(3)?.parse().map_err(|_| schema(format!("row {row}: bad value")))?;
        if chain >= values.len() {
            values.resize_with(chain + 1, Vec::new);
            stats.resize_with(chain + 1, Vec::new);
        }
        if iter >= values[chain].len() {
            values[chain].resize_with(iter + 1, Vec::new);
            stats[chain].resize(iter + 1, [None; 6]);
        }
        let slot = if let Some(s) = STAT_NAMES.iter().position(|s| *s == name) {
            &mut stats[chain][iter][s]
        } else {
            let k = *name_index.entry(name.to_string()).or_insert_with(|| {
                names.push(name.to_string());
                names.len() - 1
            });
            let cell = &mut values[chain][iter];
            if cell.len() <= k {
                cell.resize(k + 1, None);
            }
            &mut cell[k]
        };
        if slot.replace(value).is_some() {
            return Err(schema(format!("row {row}: duplicate entry for `{name}`")));
        }
    }
    if values.is_empty() {
        return Err(schema("no draws"));
    }
    let iterations = values[0].len();
    let mut chains = Vec::with_capacity(values.len());
    for (c, (vals, st)) in values.into_iter().zip(stats).enumerate() {
        if vals.len() != iterations {
            return Err(schema(format!("chain {c} has {} iterations, chain 0 has {iterations}", vals.len())));
        }
        let constrained = vals
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let mut row: Vec<Option<f64>> = row;
                row.resize(names.len(), None);
                row.into_iter()
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| schema(format!("chain {c} iteration {i} is missing parameters")))
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = st
            .into_iter()
            .map(|s| IterationStats {
                accept_stat: s[0].unwrap_or(f64::NAN),
                tree_depth: s[1].unwrap_or(0.0) as usize,
                n_leapfrog: s[2].unwrap_or(0.0) as usize,
                divergent: s[3].is_some_and(|d| d != 0.0),
                step_size: s[4].unwrap_or(f64::NAN),
                energy: s[5].unwrap_or(f64::NAN),
            })
            .collect();
        chains.push(ChainDraws {
            unconstrained: Vec::new(),
            constrained,
            stats,
            inv_metric: Vec::new(),
            initial: Vec::new(),
            seconds: 0.0,
        });
    }
    let config = SamplerConfig { chains: chains.len(), samples: iterations.max(1), ..SamplerConfig::default() };
    Ok(Draws { names, config, chains })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize, W: Write>(value: &T, mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// ECDF-difference curves and band envelopes, one row per quantity and grid point.
pub fn write_sbc_ecdf_csv<W: Write>(result: &SbcResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["quantity", "role", "rank", "fraction", "ecdf_diff", "lower", "upper", "within"])?;
    for q in &result.quantities {
        let role = q.role.map_or("loglik", |r| r.name());
        for k in 0..q.band.grid.len() {
            w.write_record([
                q.name.as_str(),
                role,
                &k.to_string(),
                &q.band.grid[k].to_string(),
                &q.band.diff[k].to_string(),
                &q.band.lower[k].to_string(),
                &q.band.upper[k].to_string(),
                &q.band.within.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn status_name(s: &SimStatus) -> &'static str {
    match s {
        SimStatus::Fitted => "fitted",
        SimStatus::Dropped { .. } => "dropped",
        SimStatus::Failed { .. } => "failed",
    }
}

/// Convergence table: one row per simulation and parameter type, with the
/// simulation-level gate.
pub fn write_study_convergence_csv<W: Write>(report: &StudyReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sim", "status", "role", "mean_rhat", "max_rhat", "converged", "divergences"])?;
    for o in &report.outcomes {
        let head = [o.index.to_string(), status_name(&o.status).to_string()];
        let tail = [opt(o.max_rhat), o.converged().to_string(), o.divergences.to_string()];
        if o.roles.is_empty() {
            w.write_record(head.iter().chain([String::new(), String::new()].iter()).chain(tail.iter()))?;
        }
        for r in &o.roles {
            w.write_record(
                head.iter().chain([r.role.name().to_string(), r.mean_rhat.to_string()].iter()).chain(tail.iter()),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Bias and RMSE per simulation and structural parameter.
pub fn write_study_recovery_csv<W: Write>(report: &StudyReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sim", "converged", "name", "role", "truth", "mean", "bias", "rmse", "posterior_sd", "q025", "q975"])?;
    for o in &report.outcomes {
        for m in &o.metrics {
            w.write_record([
                o.index.to_string(),
                o.converged().to_string(),
                m.name.clone(),
                m.role.name().to_string(),
                m.truth.to_string(),
                m.mean.to_string(),
                m.bias.to_string(),
                m.rmse.to_string(),
                m.posterior_sd.to_string(),
                m.q025.to_string(),
                m.q975.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sampling efficiency per simulation and parameter type.
pub fn write_study_efficiency_csv<W: Write>(report: &StudyReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sim", "role", "mean_ess_bulk", "mean_ess_tail", "mean_ess_per_second", "seconds"])?;
    for o in &report.outcomes {
        for r in &o.roles {
            w.write_record([
                o.index.to_string(),
                r.role.name().to_string(),
                r.mean_ess_bulk.to_string(),
                r.mean_ess_tail.to_string(),
                r.mean_ess_per_second.to_string(),
                o.seconds.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_draws() -> Draws {
        let stats = |d| IterationStats { accept_stat: 0.9, tree_depth: 2, n_leapfrog: 3, divergent: d, step_size: 0.5, energy: 1.25 };
        let chain = |o: f64| ChainDraws {
            unconstrained: Vec::new(),
            constrained: vec![vec![o, 0.1 + o], vec![o * 2.0, 1e-300], vec![-o, 3.0]],
            stats: vec![stats(false), stats(true), stats(false)],
            inv_metric: Vec::new(),
            initial: Vec::new(),
            seconds: 0.0,
        };
        Draws {
            names: vec!["a".into(), "mu(b).a".into()],
            config: SamplerConfig { chains: 2, samples: 3, ..Default::default() },
            chains: vec![chain(0.3), chain(-1.0 / 3.0)],
        }
    }

    #[test]
    fn draws_round_trip_exactly() {
        let d = toy_draws();
        let mut buf = Vec::new();
        write_draws_csv(&d, &mut buf).unwrap();
        let back = read_draws_csv(buf.as_slice()).unwrap();
        assert_eq!(back.names, d.names);
        assert_eq!(back.param(1), d.param(1));
        assert_eq!(back.divergences(), 2);
        assert_eq!(back.chains[0].stats, d.chains[0].stats);
    }

    #[test]
    fn rejects_bad_schema() {
        assert!(read_draws_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(read_draws_csv("chain,iter,name,value\n".as_bytes()).is_err());
        let missing = "chain,iter,name,value\n0,0,a,1\n0,0,b,2\n0,1,a,1\n";
        assert!(read_draws_csv(missing.as_bytes()).is_err());
        let dup = "chain,iter,name,value\n0,0,a,1\n0,0,a,2\n";
        assert!(read_draws_csv(dup.as_bytes()).is_err());
    }
}
