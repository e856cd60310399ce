//! `fhawkes` command line.
//!
//! Every subcommand reads an optional TOML `--config` (a plain config or a
//! `manifest.toml` from an earlier run), applies flag overrides, and writes
//! its outputs plus a manifest echoing the resolved configuration to `--out`.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid configuration or
//! nonstationary model, 3 unparseable events file, 4 fewer than two
//! components for an independence test, 5 more than 10% of the replications
//! of some cell failed.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use toml::{Table, Value};

use super::config::{
    load_config, ExperimentConfig, FitConfig, IndependenceConfig, ModelConfig, RunManifest, SimulateConfig,
    SpectrumConfig, MANIFEST_FILE,
};
use super::experiment::run_experiment;
use crate::error::Error;
use crate::indeptest::{run_independence_test, WeightKernel};
use crate::model::{bartlett_spectral_matrix, make_parameterization, FamilyDescriptor};
use crate::simulate::{simulate_hawkes, EventLog, SimConfig};
use crate::whittle::fit;

#[derive(Debug, Parser)]
#[command(name = "fhawkes", version, about = "Frequency-domain inference for multivariate Hawkes processes")]
pub struct Cli {
    /// Base seed; overrides the seed of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (outputs do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "fhawkes-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one realization and write `events.csv`.
    Simulate(SimulateArgs),
    /// Fit a parametric family to an events file.
    Fit(FitArgs),
    /// Chi-square test of mutual independence of the components.
    TestIndependence(IndependenceArgs),
    /// Monte Carlo study of a preset.
    Experiment(ExperimentArgs),
    /// Tabulate the Bartlett spectral matrix of a model.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model preset (FH1 … FH5, FH6(a,b)).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub burn_in: Option<f64>,
    #[arg(long)]
    pub max_events: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<String>,
    /// Observation horizon; read from the manifest next to the events file when omitted.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// univariate-poisson, univariate-exponential, univariate-ml, bivariate-ml, bivariate-ml-fh6
    #[arg(long)]
    pub family: Option<String>,
    /// whittle or mle
    #[arg(long)]
    pub method: Option<String>,
    /// Number of Fourier frequencies: an integer, 2T, TlogT or <c>sqrtT.
    #[arg(long)]
    pub mt_rule: Option<String>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IndependenceArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<String>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub mt_rule: Option<String>,
    /// flat or epanechnikov
    #[arg(long)]
    pub kernel: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub mt_rules: Option<Vec<String>>,
    /// box or whittle
    #[arg(long)]
    pub mle_start: Option<String>,
    #[arg(long)]
    pub mle_restarts: Option<usize>,
    #[arg(long)]
    pub no_burn_in_gate: bool,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub omega_max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Lib(Error),
    TooFewComponents(usize),
    TooManyFailures(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::TooFewComponents(d) => write!(f, "need D ≥ 2 for an independence test, got D = {d}"),
            CliError::TooManyFailures(cells) => write!(f, "more than 10% of replications failed in: {cells}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Lib(Error::Config(_) | Error::NonStationary(_) | Error::Domain(_) | Error::Shape(_)) => 2,
            CliError::Lib(Error::Parse { .. }) => 3,
            CliError::Lib(_) => 1,
            CliError::TooFewComponents(_) => 4,
            CliError::TooManyFailures(_) => 5,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()).into());
        }
        // A second initialization (e.g. in tests) is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Simulate(a) => simulate_cmd(cli, a),
        Command::Fit(a) => fit_cmd(cli, a),
        Command::TestIndependence(a) => independence_cmd(cli, a),
        Command::Experiment(a) => experiment_cmd(cli, a),
        Command::Spectrum(a) => spectrum_cmd(cli, a),
    }
}

fn base_table(path: &Option<PathBuf>, command: &str) -> CliResult<Table> {
    match path {
        None => Ok(Table::new()),
        Some(p) => match load_config::<Value>(p, command)? {
            Value::Table(t) => Ok(t),
            _ => Err(Error::Config(format!("{} is not a TOML table", p.display())).into()),
        },
    }
}

fn set<V: Into<Value>>(t: &mut Table, key: &str, v: Option<V>) {
    if let Some(v) = v {
        t.insert(key.to_string(), v.into());
    }
}

fn set_preset(t: &mut Table, preset: &Option<String>) {
    if let Some(p) = preset {
        let mut m = Table::new();
        m.insert("preset".into(), Value::String(p.clone()));
        t.insert("model".into(), Value::Table(m));
    }
}

fn finish<C: serde::de::DeserializeOwned>(t: Table, command: &str) -> CliResult<C> {
    Value::Table(t).try_into().map_err(|e| CliError::Lib(Error::Config(format!("{command}: {e}"))))
}

fn int(v: usize) -> Value {
    Value::Integer(v as i64)
}

/// Seeds above `i64::MAX` cannot be stored in TOML.
fn seed_value(seed: Option<u64>) -> CliResult<Option<Value>> {
    seed.map(|s| {
        i64::try_from(s)
            .map(Value::Integer)
            .map_err(|_| CliError::Lib(Error::Config(format!("seed {s} exceeds {}", i64::MAX))))
    })
    .transpose()
}

/// Writes the outputs in order, then the manifest listing them.
fn write_outputs<C: Serialize>(
    out: &Path,
    command: &str,
    seed: u64,
    config: &C,
    files: &[(&str, String)],
    replication_seeds: Vec<u64>,
) -> CliResult<()> {
    fs::create_dir_all(out)?;
    let mut manifest = RunManifest::new(command, seed, config)?;
    manifest.replication_seeds = replication_seeds;
    for (name, body) in files {
        fs::write(out.join(name), body)?;
        manifest.outputs.push(name.to_string());
    }
    fs::write(out.join(MANIFEST_FILE), manifest.to_toml()?)?;
    Ok(())
}

fn read_events(path: &str, horizon: f64, dim: Option<usize>) -> CliResult<EventLog> {
    let f = fs::File::open(path).map_err(|e| Error::Config(format!("cannot open events file {path}: {e}")))?;
    Ok(EventLog::read_csv(BufReader::new(f), horizon, dim)?)
}

/// Horizon recorded by a `simulate` manifest next to the events file.
fn sidecar_horizon(events: &str) -> Option<f64> {
    let dir = Path::new(events).parent()?;
    let m = RunManifest::read(&dir.join(MANIFEST_FILE)).ok()?;
    if m.command != "simulate" {
        return None;
    }
    m.config.get("horizon")?.as_float()
}

fn resolve_horizon(given: Option<f64>, events: &str) -> CliResult<f64> {
    given.or_else(|| sidecar_horizon(events)).ok_or_else(|| {
        Error::Config(format!("horizon unknown: pass --horizon or keep the simulate manifest next to {events}")).into()
    })
}

fn simulate_cmd(cli: &Cli, a: &SimulateArgs) -> CliResult<()> {
    let mut t = base_table(&a.config, "simulate")?;
    set_preset(&mut t, &a.preset);
    set(&mut t, "horizon", a.horizon);
    set(&mut t, "burn_in", a.burn_in);
    set(&mut t, "max_events", a.max_events.map(int));
    set(&mut t, "seed", seed_value(cli.seed)?);
    let mut cfg: SimulateConfig = finish(t, "simulate")?;
    let model = cfg.model.build()?;
    let burn_in = cfg.burn_in.unwrap_or(cfg.horizon);
    cfg.burn_in = Some(burn_in);
    let mut sim = SimConfig::new(cfg.horizon, cfg.seed).with_burn_in(burn_in);
    if let Some(m) = cfg.max_events {
        sim.max_events = m;
    }
    sim.validate()?;
    let log = simulate_hawkes(&model, &sim)?;
    let mut csv = Vec::new();
    log.write_csv(&mut csv)?;
    let csv = String::from_utf8(csv).expect("csv is ascii");
    write_outputs(&cli.out, "simulate", cfg.seed, &cfg, &[("events.csv", csv)], Vec::new())?;
    println!("simulated {} events on [0, {}) into {}", log.len(), cfg.horizon, cli.out.display());
    Ok(())
}

fn fit_cmd(cli: &Cli, a: &FitArgs) -> CliResult<()> {
    let mut t = base_table(&a.config, "fit")?;
    set(&mut t, "events", a.events.clone());
    set(&mut t, "horizon", a.horizon);
    set(&mut t, "family", a.family.clone());
    set(&mut t, "method", a.method.clone());
    let mut opts = match t.remove("options") {
        Some(Value::Table(o)) => o,
        Some(_) => return Err(Error::Config("fit: `options` must be a table".into()).into()),
        None => Table::new(),
    };
    set(&mut opts, "mt_rule", a.mt_rule.clone());
    set(&mut opts, "restarts", a.restarts.map(int));
    set(&mut opts, "seed", seed_value(cli.seed)?);
    t.insert("options".into(), Value::Table(opts));
    let mut cfg: FitConfig = finish(t, "fit")?;
    let horizon = resolve_horizon(cfg.horizon, &cfg.events)?;
    cfg.horizon = Some(horizon);
    cfg.options.validate()?;
    let template = cfg.fixed.as_ref().map(ModelConfig::build).transpose()?;
    let par = make_parameterization(&FamilyDescriptor { kind: cfg.family, template })?;
    let log = read_events(&cfg.events, horizon, Some(par.template().dim()))?;
    let result = fit(&log, &par, cfg.method, &cfg.options)?;
    let report = result.to_toml()?;
    print!("{report}");
    write_outputs(&cli.out, "fit", cfg.options.seed, &cfg, &[("fit.toml", report)], Vec::new())
}

fn independence_cmd(cli: &Cli, a: &IndependenceArgs) -> CliResult<()> {
    let mut t = base_table(&a.config, "test-independence")?;
    set(&mut t, "events", a.events.clone());
    set(&mut t, "horizon", a.horizon);
    set(&mut t, "mt_rule", a.mt_rule.clone());
    set(&mut t, "kernel", a.kernel.clone());
    let mut cfg: IndependenceConfig = finish(t, "test-independence")?;
    let kernel: WeightKernel = cfg.kernel.parse()?;
    let horizon = resolve_horizon(cfg.horizon, &cfg.events)?;
    cfg.horizon = Some(horizon);
    let log = read_events(&cfg.events, horizon, None)?;
    if log.dim() < 2 {
        return Err(CliError::TooFewComponents(log.dim()));
    }
    let report = run_independence_test(&log, cfg.mt_rule, &kernel)?.to_toml()?;
    print!("{report}");
    write_outputs(&cli.out, "test-independence", cli.seed.unwrap_or(0), &cfg, &[("independence.toml", report)], Vec::new())
}

fn experiment_cmd(cli: &Cli, a: &ExperimentArgs) -> CliResult<()> {
    let mut t = base_table(&a.config, "experiment")?;
    set(&mut t, "preset", a.preset.clone());
    set(&mut t, "reps", a.reps.map(int));
    set(&mut t, "horizons", a.horizons.clone());
    set(&mut t, "methods", a.methods.clone());
    set(&mut t, "mt_rules", a.mt_rules.clone());
    set(&mut t, "mle_start", a.mle_start.clone());
    set(&mut t, "mle_restarts", a.mle_restarts.map(int));
    set(&mut t, "seed", seed_value(cli.seed)?);
    if a.no_burn_in_gate {
        t.insert("burn_in_gate".into(), Value::Boolean(false));
    }
    let cfg: ExperimentConfig = finish(t, "experiment")?;
    let cfg = cfg.resolve();
    cfg.validate()?;
    let outcome = run_experiment(&cfg)?;
    let summary = outcome.summary_table();
    print!("{summary}");
    let files = [
        ("summary.txt", summary),
        ("replications.csv", outcome.replications_csv()),
        ("failures.log", outcome.failure_log()),
    ];
    write_outputs(&cli.out, "experiment", cfg.seed, &cfg, &files, outcome.replication_seeds.clone())?;
    // Wall times differ between runs, so they stay out of the manifest.
    fs::write(cli.out.join("runtime.txt"), outcome.runtime_report())?;
    if outcome.too_many_failures() {
        let cells: Vec<String> = outcome
            .failure_counts()
            .into_iter()
            .filter(|&(_, f, n)| f as f64 > super::experiment::MAX_FAILURE_RATE * n as f64)
            .map(|(label, f, n)| format!("{label} ({f}/{n})"))
            .collect();
        return Err(CliError::TooManyFailures(cells.join(", ")));
    }
    Ok(())
}

fn spectrum_cmd(cli: &Cli, a: &SpectrumArgs) -> CliResult<()> {
    let mut t = base_table(&a.config, "spectrum")?;
    set_preset(&mut t, &a.preset);
    set(&mut t, "omega_max", a.omega_max);
    set(&mut t, "points", a.points.map(int));
    let cfg: SpectrumConfig = finish(t, "spectrum")?;
    let model = cfg.model.build()?;
    let mut csv = String::from("omega,i,j,re,im\n");
    for w in cfg.grid()? {
        let s = bartlett_spectral_matrix(&model, w)?;
        let d = model.dim();
        for i in 0..d {
            for j in 0..d {
                let z = s.values[(i, j)];
                csv.push_str(&format!("{w:?},{},{},{:?},{:?}\n", i + 1, j + 1, z.re, z.im));
            }
        }
    }
    write_outputs(&cli.out, "spectrum", cli.seed.unwrap_or(0), &cfg, &[("spectrum.csv", csv)], Vec::new())?;
    println!("wrote {}", cli.out.join("spectrum.csv").display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Lib(Error::NonStationary(1.2)).exit_code(), 2);
        assert_eq!(CliError::Lib(Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::Lib(Error::Parse { line: 4, msg: "x".into() }).exit_code(), 3);
        assert_eq!(CliError::TooFewComponents(1).exit_code(), 4);
        assert_eq!(CliError::TooManyFailures(String::new()).exit_code(), 5);
        assert_eq!(CliError::Lib(Error::Fit("x".into())).exit_code(), 1);
        assert!(CliError::TooFewComponents(1).to_string().contains("need D ≥ 2"));
        assert!(CliError::Lib(Error::NonStationary(1.2)).to_string().contains("nonstationary"));
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let c = Cli::try_parse_from(["fhawkes", "--seed", "3", "experiment", "--preset", "FH4", "--horizons", "100,200"])
            .unwrap();
        match c.command {
            Command::Experiment(a) => assert_eq!(a.horizons, Some(vec![100.0, 200.0])),
            _ => panic!(),
        }
    }
}
