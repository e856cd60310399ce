//! Experiment presets, Monte Carlo orchestration, configuration files and
//! the command-line front end.

pub mod cli;
pub mod config;
pub mod experiment;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FamilyKind, HawkesModel, KernelSpec};
use crate::simulate::{derive_seed, simulate_hawkes, SimConfig};
use crate::stats;

/// Named data-generating processes of the simulation studies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    /// Univariate, `μ = 1`, `ν = 0.5`, `c = 1`, Mittag-Leffler `β` = 0.4, 0.5, 0.6, 0.9.
    Fh1,
    Fh2,
    Fh3,
    Fh4,
    /// Bivariate with `μ = (0.2, 0.1)` and cross-excitation.
    Fh5,
    /// Bivariate with cross interactions `(a, b)`; stationary iff `ab < 1/4`.
    Fh6 { a: f64, b: f64 },
}

impl Preset {
    pub fn name(&self) -> String {
        match self {
            Preset::Fh1 => "FH1".into(),
            Preset::Fh2 => "FH2".into(),
            Preset::Fh3 => "FH3".into(),
            Preset::Fh4 => "FH4".into(),
            Preset::Fh5 => "FH5".into(),
            Preset::Fh6 { a, b } => format!("FH6({a},{b})"),
        }
    }

    pub fn model(&self) -> Result<HawkesModel> {
        let ml = |beta: f64, c: f64| KernelSpec::mittag_leffler(beta, c);
        let univariate = |beta: f64| HawkesModel::univariate(1.0, 0.5, ml(beta, 1.0)?);
        match *self {
            Preset::Fh1 => univariate(0.4),
            Preset::Fh2 => univariate(0.5),
            Preset::Fh3 => univariate(0.6),
            Preset::Fh4 => univariate(0.9),
            Preset::Fh5 => HawkesModel::new(
                vec![0.2, 0.1],
                vec![vec![0.3, 1.0], vec![0.5, 0.2]],
                vec![vec![ml(0.75, 0.8)?, ml(0.85, 1.0)?], vec![ml(0.8, 0.9)?, ml(0.9, 1.1)?]],
            ),
            Preset::Fh6 { a, b } => fh6(a, b),
        }
    }

    /// Family used to estimate the preset.
    pub fn family(&self) -> FamilyKind {
        match self {
            Preset::Fh1 | Preset::Fh2 | Preset::Fh3 | Preset::Fh4 => FamilyKind::UnivariateMl,
            Preset::Fh5 => FamilyKind::BivariateMl,
            Preset::Fh6 { .. } => FamilyKind::BivariateMlFh6,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    /// Accepts `FH1` … `FH5`, `FH6` (independent components) and `FH6(a,b)`.
    fn from_str(s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_uppercase();
        match t.as_str() {
            "FH1" => return Ok(Preset::Fh1),
            "FH2" => return Ok(Preset::Fh2),
            "FH3" => return Ok(Preset::Fh3),
            "FH4" => return Ok(Preset::Fh4),
            "FH5" => return Ok(Preset::Fh5),
            "FH6" => return Ok(Preset::Fh6 { a: 0.0, b: 0.0 }),
            _ => {}
        }
        let bad = || Error::Config(format!("unknown preset '{s}' (expected FH1..FH6 or FH6(a,b))"));
        let inner = t.strip_prefix("FH6(").and_then(|r| r.strip_suffix(')')).ok_or_else(bad)?;
        let (a, b) = inner.split_once(',').ok_or_else(bad)?;
        let a: f64 = a.parse().map_err(|_| bad())?;
        let b: f64 = b.parse().map_err(|_| bad())?;
        Ok(Preset::Fh6 { a, b })
    }
}

/// The FH6 model: `μ = (½, ½)`, `ν = [[½, a], [b, ½]]`, exponential-limit
/// diagonal kernels and heavy-tailed cross kernels.
pub fn fh6(a: f64, b: f64) -> Result<HawkesModel> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::Config(format!("FH6 needs a, b ≥ 0, got ({a}, {b})")));
    }
    let ml = |beta: f64, c: f64| KernelSpec::mittag_leffler(beta, c);
    let m = HawkesModel::new(
        vec![0.5, 0.5],
        vec![vec![0.5, a], vec![b, 0.5]],
        vec![vec![ml(1.0, 1.0)?, ml(0.9, 1.1)?], vec![ml(0.8, 0.9)?, ml(1.0, 1.0)?]],
    )?;
    m.check_stationary()?;
    Ok(m)
}

/// `Σ_j |θ̂_j − θ_j| / |θ_j|`.
pub fn relative_error(theta_hat: &[f64], theta0: &[f64]) -> Result<f64> {
    if theta_hat.len() != theta0.len() {
        return Err(Error::Shape(format!(
            "estimate has {} components, truth has {}",
            theta_hat.len(),
            theta0.len()
        )));
    }
    if let Some(j) = theta0.iter().position(|&t| t == 0.0) {
        return Err(Error::Metric(format!("true component {} is zero; relative error undefined", j + 1)));
    }
    Ok(theta_hat.iter().zip(theta0).map(|(h, t)| (h - t).abs() / t.abs()).sum())
}

/// Effect of doubling the burn-in on the replication-mean event count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurnInCheck {
    pub horizon: f64,
    pub burn_in: f64,
    pub reps: usize,
    pub mean_count: f64,
    pub mean_count_doubled: f64,
    pub relative_change: f64,
    pub passed: bool,
}

/// Largest relative change in the mean count tolerated by the gate.
pub const BURN_IN_TOLERANCE: f64 = 0.005;

/// Compares mean counts with burn-in `B` and `2B` on common random numbers:
/// the immigrants on `(−B, T)` are shared, so the difference isolates the
/// contribution of older clusters.
pub fn burn_in_gate(m: &HawkesModel, horizon: f64, burn_in: f64, reps: usize, seed: u64) -> Result<BurnInCheck> {
    if reps == 0 {
        return Err(Error::Config("burn-in gate needs at least one replication".into()));
    }
    let counts: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let s = derive_seed(seed, &[r as u64]);
            let base = SimConfig::new(horizon, s).with_burn_in(burn_in);
            let short = simulate_hawkes(m, &base)?.len() as f64;
            let long = simulate_hawkes(m, &base.with_burn_in(2.0 * burn_in))?.len() as f64;
            Ok((short, long))
        })
        .collect::<Result<_>>()?;
    let mean_count = stats::mean(&counts.iter().map(|c| c.0).collect::<Vec<_>>());
    let mean_count_doubled = stats::mean(&counts.iter().map(|c| c.1).collect::<Vec<_>>());
    let relative_change = if mean_count > 0.0 { (mean_count_doubled - mean_count).abs() / mean_count } else { 0.0 };
    Ok(BurnInCheck {
        horizon,
        burn_in,
        reps,
        mean_count,
        mean_count_doubled,
        relative_change,
        passed: relative_change < BURN_IN_TOLERANCE,
    })
}

/// Starts at `B = factor · T` and doubles until the gate passes, at most
/// `max_doublings` times. Returns the chosen burn-in and every check made.
pub fn choose_burn_in(
    m: &HawkesModel,
    horizon: f64,
    factor: f64,
    reps: usize,
    seed: u64,
    max_doublings: usize,
) -> Result<(f64, Vec<BurnInCheck>)> {
    let mut burn_in = factor * horizon;
    let mut checks = Vec::new();
    for _ in 0..=max_doublings {
        let c = burn_in_gate(m, horizon, burn_in, reps, seed)?;
        checks.push(c);
        if c.passed {
            return Ok((burn_in, checks));
        }
        burn_in *= 2.0;
    }
    log::warn!("burn-in gate still failing at B = {}; using it anyway", burn_in / 2.0);
    Ok((burn_in / 2.0, checks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{average_intensity, make_parameterization, FamilyDescriptor};

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(&[1.0, 0.5], &[1.0, 0.5]).unwrap(), 0.0);
        let t0 = [1.0, 0.5, 0.9, 1.0];
        let twice: Vec<f64> = t0.iter().map(|x| 2.0 * x).collect();
        assert!((relative_error(&twice, &t0).unwrap() - 4.0).abs() < 1e-15);
        let e = relative_error(&[1.1, 0.45, 0.95, 1.2], &t0).unwrap();
        assert!((e - (0.1 + 0.1 + 0.05 / 0.9 + 0.2)).abs() < 1e-12);
        assert!((e - 0.4556).abs() < 1e-4);
        assert!(matches!(relative_error(&[1.0], &[0.0]), Err(Error::Metric(_))));
        assert!(matches!(relative_error(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn presets_match_their_definitions() {
        for (p, beta) in [(Preset::Fh1, 0.4), (Preset::Fh2, 0.5), (Preset::Fh3, 0.6), (Preset::Fh4, 0.9)] {
            let m = p.model().unwrap();
            assert_eq!(m.mu(), &[1.0]);
            assert_eq!(m.nu(0, 0), 0.5);
            assert_eq!(m.kernel(0, 0).ml_params().beta(), beta);
            assert_eq!(m.kernel(0, 0).rate(), 1.0);
            let par = make_parameterization(&FamilyDescriptor::new(p.family())).unwrap();
            assert_eq!(par.theta_of(&m).unwrap(), vec![1.0, 0.5, beta, 1.0]);
        }
        let l = average_intensity(&Preset::Fh5.model().unwrap()).unwrap();
        assert!((l[0] - 13.0 / 3.0).abs() < 1e-12 && (l[1] - 17.0 / 6.0).abs() < 1e-12);
        for (a, b) in [(0.0, 0.0), (0.1, 0.3), (0.3, 0.3)] {
            let l = average_intensity(&fh6(a, b).unwrap()).unwrap();
            let s = 1.0 / (0.25 - a * b);
            assert!((l[0] - s * (0.25 + a / 2.0)).abs() < 1e-12);
            assert!((l[1] - s * (0.25 + b / 2.0)).abs() < 1e-12);
        }
        assert!(matches!(fh6(0.5, 0.6), Err(Error::NonStationary(_))));
    }

    #[test]
    fn preset_names_parse() {
        for p in [Preset::Fh1, Preset::Fh4, Preset::Fh5, Preset::Fh6 { a: 0.1, b: 0.3 }] {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert_eq!("fh6".parse::<Preset>().unwrap(), Preset::Fh6 { a: 0.0, b: 0.0 });
        assert_eq!("FH6(0, 0.1)".parse::<Preset>().unwrap(), Preset::Fh6 { a: 0.0, b: 0.1 });
        assert!("FH7".parse::<Preset>().is_err());
        assert!("FH6(0.1)".parse::<Preset>().is_err());
    }

    #[test]
    fn burn_in_gate_passes_for_exponential_tails() {
        let m = HawkesModel::univariate(1.0, 0.5, KernelSpec::exponential(1.0).unwrap()).unwrap();
        let c = burn_in_gate(&m, 200.0, 200.0, 20, 3).unwrap();
        assert!(c.passed, "{c:?}");
        assert!(c.mean_count_doubled >= c.mean_count);
    }

    #[test]
    fn fh4_default_burn_in_passes_gate() {
        let m = Preset::Fh4.model().unwrap();
        let (b, checks) = choose_burn_in(&m, 1000.0, 1.0, 40, 9, 3).unwrap();
        assert_eq!(b, 1000.0, "{checks:?}");
    }
}
