use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dsem::benchmarks::{benchmark, PriorChoice};
use dsem::calibrate::{sbc_prior_only, sbc_run, SbcConfig, SbcResult, DEFAULT_L};
use dsem::diagnostics::{diagnose, DiagnosticsReport};
use dsem::io::{
    read_draws_csv, write_draws_csv, write_json, write_sbc_ecdf_csv, write_study_convergence_csv,
    write_study_efficiency_csv, write_study_recovery_csv,
};
use dsem::recover::{run_recovery_study, sim_rng, simulate_dataset, simulate_from_prior, Design, StudyConfig};
use dsem::sampler::{sample, Draws, SamplerConfig};
use dsem::{parse_model, Dataset, Error, Model, ModelSpec};

/// Per-chain ESS required by the fit gate.
const MIN_ESS_PER_CHAIN: f64 = 100.0;

#[derive(Parser, Debug, Serialize)]
#[command(name = "dsem", version, about = "Fit and validate Gaussian distributional structural equation models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
enum Command {
    /// Fit a model to a data file and write draws, diagnostics and a manifest.
    Fit(FitArgs),
    /// Simulate a dataset from given parameter values or from the prior.
    Simulate(SimulateArgs),
    /// Run simulation-based calibration.
    Sbc(SbcArgs),
    /// Run a parameter-recovery study on a benchmark.
    Study(StudyArgs),
    /// Recompute the diagnostics report of a draws file.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct SamplerArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Worker threads (defaults to the available cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl SamplerArgs {
    fn config(&self) -> SamplerConfig {
        SamplerConfig {
            chains: self.chains,
            warmup: self.warmup,
            samples: self.samples,
            seed: self.seed,
            ..SamplerConfig::default()
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct ModelArgs {
    /// Model file.
    #[arg(long, conflicts_with = "benchmark", required_unless_present = "benchmark")]
    spec: Option<PathBuf>,
    /// Built-in benchmark model.
    #[arg(long)]
    benchmark: Option<String>,
    /// Prior set of the benchmark.
    #[arg(long, default_value = "generative", value_parser = parse_prior)]
    prior: PriorChoice,
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// JSON object mapping parameter names to constrained values.
    #[arg(long, conflicts_with = "from_prior", required_unless_present = "from_prior")]
    params: Option<PathBuf>,
    /// Draw parameters from the prior; for benchmarks, optionally name the prior set.
    #[arg(long, num_args = 0..=1, default_missing_value = "generative", value_parser = parse_prior)]
    from_prior: Option<PriorChoice>,
    /// Rows, or groups for grouped models.
    #[arg(long)]
    n: usize,
    /// Rows per group for grouped models.
    #[arg(long)]
    per_group: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SbcArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 100)]
    sims: usize,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long)]
    per_group: Option<usize>,
    /// Leave the joint log-likelihood out of the ranked quantities.
    #[arg(long)]
    no_loglik: bool,
    /// Rank prior draws against the truth without fitting.
    #[arg(long)]
    prior_only: bool,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct StudyArgs {
    #[arg(long)]
    benchmark: String,
    /// Prior used for fitting; true values come from the generative prior.
    #[arg(long, default_value = "weak", value_parser = parse_prior)]
    prior: PriorChoice,
    #[arg(long, default_value_t = 50)]
    sims: usize,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long)]
    per_group: Option<usize>,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct DiagnoseArgs {
    /// Draws file written by `fit`.
    #[arg(long)]
    draws: PathBuf,
    /// Output file (defaults to standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_prior(s: &str) -> std::result::Result<PriorChoice, String> {
    s.parse().map_err(|e: dsem::Error| e.to_string())
}

#[derive(Debug, Serialize, Deserialize)]
struct FileRecord {
    path: String,
    sha256: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Timings {
    total_seconds: f64,
    chain_seconds: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    tool_version: String,
    argv: Vec<String>,
    args: serde_json::Value,
    inputs: Vec<FileRecord>,
    benchmark: Option<String>,
    seed: u64,
    sampler: Option<SamplerConfig>,
    outputs: Vec<FileRecord>,
    timings: Timings,
}

impl RunManifest {
    fn new(command: &str, args: &impl Serialize, seed: u64) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            argv: std::env::args().collect(),
            args: serde_json::to_value(args)?,
            inputs: Vec::new(),
            benchmark: None,
            seed,
            sampler: None,
            outputs: Vec::new(),
            timings: Timings::default(),
        })
    }

    /// Hashes an input before it is used.
    fn input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(FileRecord { path: path.display().to_string(), sha256: sha256(&bytes) });
        Ok(bytes)
    }

    fn finish(mut self, dir: &Path, outputs: &[&str], start: Instant) -> Result<()> {
        for name in outputs {
            let bytes = fs::read(dir.join(name))?;
            self.outputs.push(FileRecord { path: name.to_string(), sha256: sha256(&bytes) });
        }
        self.timings.total_seconds = start.elapsed().as_secs_f64();
        write_file(&dir.join("manifest.json"), |w| Ok(write_json(&self, w)?))
    }
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_spec(manifest: &mut RunManifest, path: &Path) -> Result<ModelSpec> {
    let bytes = manifest.input(path)?;
    let src = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    parse_model(&src).with_context(|| format!("in {}", path.display()))
}

fn resolve_model(manifest: &mut RunManifest, model: &ModelArgs) -> Result<(ModelSpec, Option<usize>)> {
    match (&model.spec, &model.benchmark) {
        (Some(path), _) => Ok((read_spec(manifest, path)?, None)),
        (None, Some(name)) => {
            let bench = benchmark(name)?;
            manifest.benchmark = Some(name.clone());
            Ok((bench.spec(model.prior)?, bench.per_group))
        }
        (None, None) => bail!("either --spec or --benchmark is required"),
    }
}

fn design_for(spec: &ModelSpec, n: usize, per_group: Option<usize>, default_per_group: Option<usize>) -> Design {
    if spec.group_column().is_some() {
        Design::Grouped { groups: n, per_group: per_group.or(default_per_group).unwrap_or(1) }
    } else {
        Design::Rows { rows: n }
    }
}

fn init_workers(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn passes_gate(report: &DiagnosticsReport) -> bool {
    let chains = report.chains as f64;
    report.converged
        && report.min_ess_bulk.is_some_and(|e| e / chains >= MIN_ESS_PER_CHAIN)
        && report.min_ess_tail.is_some_and(|e| e / chains >= MIN_ESS_PER_CHAIN)
}

fn cmd_fit(args: &FitArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("fit", args, args.sampler.seed)?;
    let spec = read_spec(&mut manifest, &args.spec)?;
    let data_bytes = manifest.input(&args.data)?;
    let data = Dataset::from_csv(data_bytes.as_slice(), spec.group_column())
        .with_context(|| format!("in {}", args.data.display()))?;
    let config = args.sampler.config();
    manifest.sampler = Some(config);
    init_workers(args.sampler.workers)?;
    let model = Model::new(&spec, &data)?;
    let draws = sample(&model, &config)?;
    fs::create_dir_all(&args.out)?;
    write_file(&args.out.join("draws.csv"), |w| Ok(write_draws_csv(&draws, w)?))?;
    manifest.timings.chain_seconds = draws.chains.iter().map(|c| c.seconds).collect();
    let report = match diagnose(&draws) {
        Ok(report) => report,
        Err(e @ Error::InsufficientDraws { .. }) => {
            manifest.finish(&args.out, &["draws.csv"], start)?;
            eprintln!("diagnostic gate failed: {e} per chain");
            return Ok(ExitCode::from(2));
        }
        Err(e) => return Err(e.into()),
    };
    write_file(&args.out.join("diagnostics.json"), |w| Ok(write_json(&report, w)?))?;
    manifest.finish(&args.out, &["draws.csv", "diagnostics.json"], start)?;
    if passes_gate(&report) {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "diagnostic gate failed: max R-hat {:?}, min bulk ESS {:?}, min tail ESS {:?} over {} chains",
            report.max_rhat, report.min_ess_bulk, report.min_ess_tail, report.chains
        );
        Ok(ExitCode::from(2))
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("simulate", args, args.seed)?;
    let mut model = args.model.clone();
    if let (Some(prior), Some(_)) = (args.from_prior, &model.benchmark) {
        model.prior = prior;
    }
    let (spec, default_per_group) = resolve_model(&mut manifest, &model)?;
    let design = design_for(&spec, args.n, args.per_group, default_per_group);
    let mut rng = sim_rng(args.seed, 0);
    let sim = match &args.params {
        Some(path) => {
            let bytes = manifest.input(path)?;
            let params: HashMap<String, f64> =
                serde_json::from_slice(&bytes).with_context(|| format!("in {}", path.display()))?;
            simulate_dataset(&spec, &params, design, &mut rng)?
        }
        None => simulate_from_prior(&spec, design, 0, &mut rng)?.0,
    };
    fs::create_dir_all(&args.out)?;
    write_file(&args.out.join("data.csv"), |w| Ok(sim.data.write_csv(w)?))?;
    let truth: serde_json::Map<String, serde_json::Value> = sim
        .layout
        .entries()
        .iter()
        .map(|e| (e.name.clone(), serde_json::json!(sim.truth[e.index])))
        .collect();
    write_file(&args.out.join("truth.json"), |w| Ok(write_json(&truth, w)?))?;
    manifest.finish(&args.out, &["data.csv", "truth.json"], start)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sbc(args: &SbcArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("sbc", args, args.sampler.seed)?;
    let (spec, default_per_group) = resolve_model(&mut manifest, &args.model)?;
    let design = design_for(&spec, args.n, args.per_group, default_per_group);
    init_workers(args.sampler.workers)?;
    let result: SbcResult = if args.prior_only {
        sbc_prior_only(&spec, design, args.sims, DEFAULT_L, args.sampler.seed)?
    } else {
        let config = SbcConfig {
            sims: args.sims,
            design,
            sampler: args.sampler.config(),
            seed: args.sampler.seed,
            l: DEFAULT_L,
            loglik: !args.no_loglik,
        };
        manifest.sampler = Some(config.sampler);
        sbc_run(&spec, &config)?
    };
    fs::create_dir_all(&args.out)?;
    write_file(&args.out.join("sbc.json"), |w| Ok(write_json(&result, w)?))?;
    write_file(&args.out.join("sbc_ecdf.csv"), |w| Ok(write_sbc_ecdf_csv(&result, w)?))?;
    manifest.finish(&args.out, &["sbc.json", "sbc_ecdf.csv"], start)?;
    let outside: Vec<&str> =
        result.quantities.iter().filter(|q| !q.band.within).map(|q| q.name.as_str()).collect();
    println!(
        "{} of {} quantities within the 95% band; {} simulations dropped",
        result.quantities.len() - outside.len(),
        result.quantities.len(),
        result.dropped.len()
    );
    if !outside.is_empty() {
        println!("outside: {}", outside.join(", "));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_study(args: &StudyArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("study", args, args.sampler.seed)?;
    let bench = benchmark(&args.benchmark)?;
    manifest.benchmark = Some(bench.name.to_string());
    let spec = bench.spec(args.prior)?;
    let config = StudyConfig {
        sims: args.sims,
        design: design_for(&spec, args.n, args.per_group, bench.per_group),
        fit_prior: args.prior,
        sampler: args.sampler.config(),
        seed: args.sampler.seed,
        max_resamples: 5,
    };
    manifest.sampler = Some(config.sampler);
    init_workers(args.sampler.workers)?;
    let report = run_recovery_study(&bench, &config)?;
    fs::create_dir_all(&args.out)?;
    write_file(&args.out.join("study.json"), |w| Ok(write_json(&report, w)?))?;
    write_file(&args.out.join("convergence.csv"), |w| Ok(write_study_convergence_csv(&report, w)?))?;
    write_file(&args.out.join("recovery.csv"), |w| Ok(write_study_recovery_csv(&report, w)?))?;
    write_file(&args.out.join("efficiency.csv"), |w| Ok(write_study_efficiency_csv(&report, w)?))?;
    manifest.timings.chain_seconds = report.outcomes.iter().map(|o| o.seconds).collect();
    manifest.finish(&args.out, &["study.json", "convergence.csv", "recovery.csv", "efficiency.csv"], start)?;
    println!(
        "{} fitted, {} converged, {} dropped, {} failed",
        report.fitted, report.converged, report.dropped, report.failed
    );
    Ok(ExitCode::SUCCESS)
}

/// Chain timings from the manifest written next to the draws file, if any.
fn chain_seconds(draws_path: &Path) -> Option<Vec<f64>> {
    let path = draws_path.parent()?.join("manifest.json");
    let file = File::open(path).ok()?;
    let manifest: RunManifest = serde_json::from_reader(BufReader::new(file)).ok()?;
    (manifest.command == "fit").then_some(manifest.timings.chain_seconds)
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<ExitCode> {
    let file = File::open(&args.draws).with_context(|| format!("opening {}", args.draws.display()))?;
    let mut draws: Draws =
        read_draws_csv(BufReader::new(file)).with_context(|| format!("in {}", args.draws.display()))?;
    if draws.chains.len() < 2 {
        bail!("at least 2 chains are required for R-hat, found {}", draws.chains.len());
    }
    if let Some(seconds) = chain_seconds(&args.draws).filter(|s| s.len() == draws.chains.len()) {
        for (c, s) in draws.chains.iter_mut().zip(seconds) {
            c.seconds = s;
        }
    }
    let report = diagnose(&draws)?;
    match &args.out {
        Some(path) => write_file(path, |w| Ok(write_json(&report, w)?))?,
        None => write_json(&report, std::io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // Usage errors exit with 1; 2 is reserved for the fit diagnostic gate.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sbc(a) => cmd_sbc(a),
        Command::Study(a) => cmd_study(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
