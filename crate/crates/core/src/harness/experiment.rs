//! Monte Carlo runner. Replication `r` at horizon index `h` simulates from
//! the seed `derive_seed(seed, [h, r])` and every estimator sees the same
//! realization, so cells are paired. Results are gathered in replication
//! order, which makes every output independent of the number of threads.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, MleStart};
use super::{choose_burn_in, relative_error, BurnInCheck, Preset};
use crate::error::Result;
use crate::indeptest::{run_independence_test, WeightKernel};
use crate::model::{make_parameterization, FamilyDescriptor, HawkesModel, Parameterization};
use crate::simulate::{derive_seed, simulate_hawkes, EventLog, SimConfig};
use crate::spectral::MtRule;
use crate::stats;
use crate::whittle::{fit, FitOptions, FitResult, Method};

/// Share of failed replications above which a cell is reported as failing.
pub const MAX_FAILURE_RATE: f64 = 0.10;

/// One estimator applied to one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationRecord {
    pub horizon: f64,
    pub method: Method,
    /// `None` for likelihood fits, which do not use Fourier frequencies.
    pub mt_rule: Option<MtRule>,
    pub rep: usize,
    pub seed: u64,
    pub outcome: std::result::Result<EstimationOk, String>,
    /// Wall time of the fit alone.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationOk {
    pub theta_hat: Vec<f64>,
    pub rel_error: f64,
    pub converged: bool,
    pub evaluations: usize,
}

/// One independence test on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependenceRecord {
    pub a: f64,
    pub b: f64,
    pub horizon: f64,
    pub rep: usize,
    pub seed: u64,
    pub outcome: std::result::Result<(f64, f64), String>,
    pub seconds: f64,
}

/// Burn-in chosen for one (model, horizon).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurnInChoice {
    pub model: String,
    pub horizon: f64,
    pub burn_in: f64,
    pub checks: Vec<BurnInCheck>,
}

/// Column of a results table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub mt_rule: Option<MtRule>,
}

impl Cell {
    pub fn label(&self) -> String {
        match self.mt_rule {
            Some(r) => format!("{}[{r}]", self.method),
            None => self.method.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub preset: Preset,
    pub burn_in: Vec<BurnInChoice>,
    pub replication_seeds: Vec<u64>,
    pub estimation: Vec<EstimationRecord>,
    pub independence: Vec<IndependenceRecord>,
}

fn replication_seed(base: u64, h: usize, r: usize) -> u64 {
    derive_seed(base, &[h as u64, r as u64])
}

/// Estimation cells in table order: Whittle per rule, then likelihood.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    if cfg.methods.contains(&Method::Whittle) {
        out.extend(cfg.mt_rules.iter().map(|&r| Cell { method: Method::Whittle, mt_rule: Some(r) }));
    }
    if cfg.methods.contains(&Method::Mle) {
        out.push(Cell { method: Method::Mle, mt_rule: None });
    }
    out
}

fn burn_in_for(cfg: &ExperimentConfig, m: &HawkesModel, name: &str, horizon: f64, h: usize) -> Result<BurnInChoice> {
    let (burn_in, checks) = if cfg.burn_in_gate {
        let seed = derive_seed(cfg.seed, &[u64::MAX, h as u64]);
        choose_burn_in(m, horizon, cfg.burn_in_factor, cfg.gate_reps, seed, cfg.max_doublings)?
    } else {
        (cfg.burn_in_factor * horizon, Vec::new())
    };
    Ok(BurnInChoice { model: name.to_string(), horizon, burn_in, checks })
}

/// Runs the experiment described by `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let cfg = cfg.clone().resolve();
    cfg.validate()?;
    let preset: Preset = cfg.preset.parse()?;
    let replication_seeds: Vec<u64> = (0..cfg.horizons.len())
        .flat_map(|h| (0..cfg.reps).map(move |r| (h, r)))
        .map(|(h, r)| replication_seed(cfg.seed, h, r))
        .collect();
    let mut out = ExperimentOutcome {
        config: cfg.clone(),
        preset,
        burn_in: Vec::new(),
        replication_seeds,
        estimation: Vec::new(),
        independence: Vec::new(),
    };
    match preset {
        Preset::Fh6 { .. } => run_independence_study(&cfg, &mut out)?,
        _ => run_estimation_study(&cfg, preset, &mut out)?,
    }
    Ok(out)
}

fn run_estimation_study(cfg: &ExperimentConfig, preset: Preset, out: &mut ExperimentOutcome) -> Result<()> {
    let model = preset.model()?;
    let par = make_parameterization(&FamilyDescriptor::new(preset.family()))?;
    let theta0 = par.theta_of(&model)?;
    let cells = cells(cfg);
    for (h, &horizon) in cfg.horizons.iter().enumerate() {
        let choice = burn_in_for(cfg, &model, &preset.name(), horizon, h)?;
        let burn_in = choice.burn_in;
        out.burn_in.push(choice);
        let records: Vec<Vec<EstimationRecord>> = (0..cfg.reps)
            .into_par_iter()
            .map(|r| {
                let seed = replication_seed(cfg.seed, h, r);
                estimation_replication(cfg, &model, &par, &theta0, &cells, horizon, burn_in, r, seed)
            })
            .collect();
        out.estimation.extend(records.into_iter().flatten());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn estimation_replication(
    cfg: &ExperimentConfig,
    model: &HawkesModel,
    par: &Parameterization,
    theta0: &[f64],
    cells: &[Cell],
    horizon: f64,
    burn_in: f64,
    rep: usize,
    seed: u64,
) -> Vec<EstimationRecord> {
    let record = |cell: &Cell, outcome, seconds| EstimationRecord {
        horizon,
        method: cell.method,
        mt_rule: cell.mt_rule,
        rep,
        seed,
        outcome,
        seconds,
    };
    let log = match simulate_hawkes(model, &SimConfig::new(horizon, seed).with_burn_in(burn_in)) {
        Ok(l) => l,
        Err(e) => return cells.iter().map(|c| record(c, Err(format!("simulation: {e}")), 0.0)).collect(),
    };
    let base = FitOptions { seed: derive_seed(seed, &[2]), ..cfg.fit.clone() };
    let mut first_whittle: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        let opts = match cell.method {
            Method::Whittle => FitOptions { mt_rule: cell.mt_rule.expect("whittle cells carry a rule"), ..base.clone() },
            Method::Mle => {
                let initial = match cfg.mle_start {
                    MleStart::Box => base.initial.clone(),
                    MleStart::Whittle => first_whittle.clone(),
                };
                FitOptions { initial, restarts: cfg.mle_restarts.unwrap_or(base.restarts), ..base.clone() }
            }
        };
        let start = Instant::now();
        let result = fit_one(&log, par, cell.method, &opts, theta0);
        let seconds = start.elapsed().as_secs_f64();
        if let (Method::Whittle, Ok(ok), None) = (cell.method, &result, &first_whittle) {
            first_whittle = Some(ok.theta_hat.clone());
        }
        out.push(record(cell, result, seconds));
    }
    out
}

fn fit_one(
    log: &EventLog,
    par: &Parameterization,
    method: Method,
    opts: &FitOptions,
    theta0: &[f64],
) -> std::result::Result<EstimationOk, String> {
    let r: FitResult = fit(log, par, method, opts).map_err(|e| e.to_string())?;
    let rel_error = relative_error(&r.theta_hat, theta0).map_err(|e| e.to_string())?;
    Ok(EstimationOk { theta_hat: r.theta_hat, rel_error, converged: r.converged, evaluations: r.evaluations })
}

fn run_independence_study(cfg: &ExperimentConfig, out: &mut ExperimentOutcome) -> Result<()> {
    let kernel: WeightKernel = cfg.kernel.parse()?;
    for (h, &horizon) in cfg.horizons.iter().enumerate() {
        for &a in &cfg.grid {
            for &b in &cfg.grid {
                let model = super::fh6(a, b)?;
                let choice = burn_in_for(cfg, &model, &Preset::Fh6 { a, b }.name(), horizon, h)?;
                let burn_in = choice.burn_in;
                out.burn_in.push(choice);
                let records: Vec<IndependenceRecord> = (0..cfg.reps)
                    .into_par_iter()
                    .map(|r| {
                        let seed = replication_seed(cfg.seed, h, r);
                        let start = Instant::now();
                        let outcome = simulate_hawkes(&model, &SimConfig::new(horizon, seed).with_burn_in(burn_in))
                            .and_then(|log| run_independence_test(&log, cfg.independence_rule, &kernel))
                            .map(|rep| (rep.statistic, rep.p_value))
                            .map_err(|e| e.to_string());
                        IndependenceRecord {
                            a,
                            b,
                            horizon,
                            rep: r,
                            seed,
                            outcome,
                            seconds: start.elapsed().as_secs_f64(),
                        }
                    })
                    .collect();
                out.independence.extend(records);
            }
        }
    }
    Ok(())
}

/// Median and interquartile range.
fn median_iqr(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        None
    } else {
        Some((stats::median(v), stats::iqr(v)))
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

impl ExperimentOutcome {
    /// Relative errors of the successful fits of one cell.
    pub fn errors(&self, horizon: f64, cell: &Cell) -> Vec<f64> {
        self.cell_records(horizon, cell).filter_map(|r| r.outcome.as_ref().ok().map(|o| o.rel_error)).collect()
    }

    /// Wall times of the successful fits of one cell.
    pub fn seconds(&self, horizon: f64, cell: &Cell) -> Vec<f64> {
        self.cell_records(horizon, cell).filter(|r| r.outcome.is_ok()).map(|r| r.seconds).collect()
    }

    fn cell_records<'a>(&'a self, horizon: f64, cell: &'a Cell) -> impl Iterator<Item = &'a EstimationRecord> + 'a {
        self.estimation
            .iter()
            .filter(move |r| r.horizon == horizon && r.method == cell.method && r.mt_rule == cell.mt_rule)
    }

    /// Rejection rate at level `alpha` among successful tests of one grid point.
    pub fn rejection_rate(&self, horizon: f64, a: f64, b: f64) -> Option<f64> {
        let p: Vec<f64> = self
            .independence
            .iter()
            .filter(|r| r.horizon == horizon && r.a == a && r.b == b)
            .filter_map(|r| r.outcome.as_ref().ok().map(|o| o.1))
            .collect();
        if p.is_empty() {
            None
        } else {
            Some(p.iter().filter(|&&x| x < self.config.alpha).count() as f64 / p.len() as f64)
        }
    }

    /// `(label, failed, total)` for every table cell.
    pub fn failure_counts(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        for &t in &self.config.horizons {
            for c in cells(&self.config) {
                let all: Vec<_> = self.cell_records(t, &c).collect();
                if !all.is_empty() {
                    let failed = all.iter().filter(|r| r.outcome.is_err()).count();
                    out.push((format!("T={t} {}", c.label()), failed, all.len()));
                }
            }
            for &a in &self.config.grid {
                for &b in &self.config.grid {
                    let all: Vec<_> =
                        self.independence.iter().filter(|r| r.horizon == t && r.a == a && r.b == b).collect();
                    if !all.is_empty() {
                        let failed = all.iter().filter(|r| r.outcome.is_err()).count();
                        out.push((format!("T={t} a={a} b={b}"), failed, all.len()));
                    }
                }
            }
        }
        out
    }

    /// True when some cell lost more than [`MAX_FAILURE_RATE`] of its replications.
    pub fn too_many_failures(&self) -> bool {
        self.failure_counts().iter().any(|&(_, f, n)| f as f64 > MAX_FAILURE_RATE * n as f64)
    }

    /// The results table: median (IQR) of relative errors per estimator,
    /// or rejection percentages over the `(a, b)` grid.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let cfg = &self.config;
        if let Preset::Fh6 { .. } = self.preset {
            for &t in &cfg.horizons {
                let _ = writeln!(
                    s,
                    "# {}: percentage of rejections at alpha = {}, T = {t}, M_T = {}, kernel = {}, {} replications",
                    "FH6", cfg.alpha, cfg.independence_rule, cfg.kernel, cfg.reps
                );
                let _ = write!(s, "{:<8}", "a\\b");
                for b in &cfg.grid {
                    let _ = write!(s, "{:>10}", b);
                }
                s.push('\n');
                for &a in &cfg.grid {
                    let _ = write!(s, "{:<8}", a);
                    for &b in &cfg.grid {
                        let cell = match self.rejection_rate(t, a, b) {
                            Some(r) => format!("{:.1}", 100.0 * r),
                            None => "-".into(),
                        };
                        let _ = write!(s, "{cell:>10}");
                    }
                    s.push('\n');
                }
            }
        } else {
            let cols = cells(cfg);
            let _ = writeln!(
                s,
                "# {}: median (IQR) of relative errors over {} replications",
                self.preset.name(),
                cfg.reps
            );
            let _ = write!(s, "{:<16}", "");
            for c in &cols {
                let _ = write!(s, "{:>22}", c.label());
            }
            s.push('\n');
            for &t in &cfg.horizons {
                let _ = write!(s, "{:<16}", format!("{}. T={t}", self.preset.name()));
                for c in &cols {
                    let cell = match median_iqr(&self.errors(t, c)) {
                        Some((m, q)) => format!("{m:.4}({q:.4})"),
                        None => "-".into(),
                    };
                    let _ = write!(s, "{cell:>22}");
                }
                s.push('\n');
            }
        }
        for b in &self.burn_in {
            let gate = match b.checks.last() {
                None => "not checked".to_string(),
                Some(c) => format!(
                    "{} after {} check(s), last change {:.4}",
                    if c.passed { "passed" } else { "failed" },
                    b.checks.len(),
                    c.relative_change
                ),
            };
            let _ = writeln!(s, "# burn-in {} T={}: B={} ({gate})", b.model, b.horizon, b.burn_in);
        }
        let failures: Vec<_> = self.failure_counts().into_iter().filter(|f| f.1 > 0).collect();
        if !failures.is_empty() {
            s.push_str("# failed replications\n");
            for (label, f, n) in failures {
                let _ = writeln!(s, "#   {label}: {f}/{n}");
            }
        }
        s
    }

    /// One line per replication and estimator (or test).
    pub fn replications_csv(&self) -> String {
        let mut s = String::new();
        if self.independence.is_empty() {
            s.push_str("horizon,method,mt_rule,rep,seed,status,rel_error,converged,evaluations,theta_hat\n");
            for r in &self.estimation {
                let rule = r.mt_rule.map(|x| x.to_string()).unwrap_or_default();
                let _ = match &r.outcome {
                    Ok(o) => writeln!(
                        s,
                        "{},{},{rule},{},{},ok,{},{},{},{}",
                        r.horizon,
                        r.method,
                        r.rep,
                        r.seed,
                        fmt_f64(o.rel_error),
                        o.converged,
                        o.evaluations,
                        o.theta_hat.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";")
                    ),
                    Err(_) => writeln!(s, "{},{},{rule},{},{},failed,,,,", r.horizon, r.method, r.rep, r.seed),
                };
            }
        } else {
            s.push_str("horizon,a,b,rep,seed,status,statistic,p_value,reject\n");
            for r in &self.independence {
                let _ = match &r.outcome {
                    Ok((stat, p)) => writeln!(
                        s,
                        "{},{},{},{},{},ok,{},{},{}",
                        r.horizon,
                        r.a,
                        r.b,
                        r.rep,
                        r.seed,
                        fmt_f64(*stat),
                        fmt_f64(*p),
                        *p < self.config.alpha
                    ),
                    Err(_) => writeln!(s, "{},{},{},{},{},failed,,,", r.horizon, r.a, r.b, r.rep, r.seed),
                };
            }
        }
        s
    }

    /// Error messages of failed replications.
    pub fn failure_log(&self) -> String {
        let mut s = String::new();
        for r in &self.estimation {
            if let Err(e) = &r.outcome {
                let rule = r.mt_rule.map(|x| format!("[{x}]")).unwrap_or_default();
                let _ = writeln!(s, "T={} {}{rule} rep={} seed={}: {e}", r.horizon, r.method, r.rep, r.seed);
            }
        }
        for r in &self.independence {
            if let Err(e) = &r.outcome {
                let _ = writeln!(s, "T={} a={} b={} rep={} seed={}: {e}", r.horizon, r.a, r.b, r.rep, r.seed);
            }
        }
        s
    }

    /// Wall-clock times; not reproducible, hence kept apart from the
    /// deterministic outputs.
    pub fn runtime_report(&self) -> String {
        let mut s = String::from("# median wall time per fit or test, seconds\n");
        if self.independence.is_empty() {
            for &t in &self.config.horizons {
                for c in cells(&self.config) {
                    let secs = self.seconds(t, &c);
                    if !secs.is_empty() {
                        let _ = writeln!(s, "T={t} {}: {:.3}", c.label(), stats::median(&secs));
                    }
                }
            }
        } else {
            let secs: Vec<f64> = self.independence.iter().map(|r| r.seconds).collect();
            if !secs.is_empty() {
                let _ = writeln!(s, "independence test (simulation included): {:.3}", stats::median(&secs));
            }
        }
        s
    }
}

impl ExperimentConfig {
    /// Fills preset-dependent defaults (horizons).
    pub fn resolve(mut self) -> Self {
        if self.horizons.is_empty() {
            self.horizons = match self.preset.parse::<Preset>() {
                Ok(Preset::Fh6 { .. }) => vec![5000.0],
                _ => vec![1250.0, 2500.0],
            };
        }
        self
    }
}
