//! TOML configuration of every command, and the run manifest that echoes a
//! resolved configuration so a run can be repeated exactly.
//!
//! A model is given either by preset name or explicitly:
//!
//! ```toml
//! [model]
//! preset = "FH4"
//!
//! # or
//! [model]
//! mu = [0.2, 0.1]
//! nu = [[0.3, 1.0], [0.5, 0.2]]
//! kernels = [
//!   [{ family = "mittag-leffler", beta = 0.75, c = 0.8 }, { family = "exponential", c = 1.0 }],
//!   [{ family = "mittag-leffler", beta = 0.8, c = 0.9 }, { family = "mittag-leffler", beta = 0.9, c = 1.1 }],
//! ]
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::Preset;
use crate::error::{Error, Result};
use crate::model::{FamilyKind, HawkesModel, KernelSpec};
use crate::spectral::MtRule;
use crate::whittle::{FitOptions, Method};

/// A model by preset name or by explicit `mu`, `nu`, `kernels`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernels: Option<Vec<Vec<KernelSpec>>>,
}

impl ModelConfig {
    pub fn preset(name: &str) -> Self {
        ModelConfig { preset: Some(name.to_string()), ..Default::default() }
    }

    /// Builds and checks the model; nonstationary models are rejected.
    pub fn build(&self) -> Result<HawkesModel> {
        let explicit = self.mu.is_some() || self.nu.is_some() || self.kernels.is_some();
        let m = match (&self.preset, explicit) {
            (Some(_), true) => {
                return Err(Error::Config("give either a model preset or mu/nu/kernels, not both".into()))
            }
            (Some(p), false) => p.parse::<Preset>()?.model()?,
            (None, _) => {
                let missing = |k: &str| Error::Config(format!("model is missing `{k}`"));
                let mu = self.mu.clone().ok_or_else(|| missing("mu"))?;
                let nu = self.nu.clone().ok_or_else(|| missing("nu"))?;
                let kernels = self.kernels.clone().ok_or_else(|| missing("kernels"))?;
                HawkesModel::new(mu, nu, kernels)?
            }
        };
        m.check_stationary()?;
        Ok(m)
    }
}

fn default_seed() -> u64 {
    0
}

/// `simulate`: one realization written as CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ModelConfig,
    pub horizon: f64,
    /// Defaults to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_events: Option<usize>,
}

/// `fit`: estimate a family from an event file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub events: String,
    /// Read from the sidecar manifest of the event file when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub family: FamilyKind,
    pub method: Method,
    /// Supplies the values of parameters the family keeps fixed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<ModelConfig>,
    #[serde(default)]
    pub options: FitOptions,
}

fn default_indep_rule() -> MtRule {
    MtRule::SqrtT(10.0)
}

fn default_kernel() -> String {
    "flat".into()
}

/// `test-independence`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndependenceConfig {
    pub events: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "default_indep_rule")]
    pub mt_rule: MtRule,
    #[serde(default = "default_kernel")]
    pub kernel: String,
}

fn default_omega_max() -> f64 {
    10.0
}

fn default_points() -> usize {
    201
}

/// `spectrum`: the Bartlett spectral matrix on a frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub model: ModelConfig,
    /// Explicit frequencies; otherwise `points` values evenly spaced on `[0, omega_max]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omegas: Option<Vec<f64>>,
    #[serde(default = "default_omega_max")]
    pub omega_max: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

impl SpectrumConfig {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if let Some(o) = &self.omegas {
            if o.is_empty() || o.iter().any(|w| !w.is_finite()) {
                return Err(Error::Config("omegas must be a nonempty list of finite values".into()));
            }
            return Ok(o.clone());
        }
        if self.points < 2 || !(self.omega_max > 0.0 && self.omega_max.is_finite()) {
            return Err(Error::Config("need points ≥ 2 and a positive omega_max".into()));
        }
        let n = self.points - 1;
        Ok((0..=n).map(|i| self.omega_max * i as f64 / n as f64).collect())
    }
}

/// Where the starting value of a likelihood fit comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MleStart {
    /// The family's fixed initial value, as for the Whittle fit.
    Box,
    /// The Whittle estimate of the same replication (first M_T rule).
    Whittle,
}

fn default_reps() -> usize {
    200
}

/// Empty means the preset's default, filled in by `resolve`.
fn default_horizons() -> Vec<f64> {
    Vec::new()
}

fn default_rules() -> Vec<MtRule> {
    vec![MtRule::TwoT, MtRule::TLogT]
}

fn default_methods() -> Vec<Method> {
    vec![Method::Whittle]
}

fn default_one() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_gate_reps() -> usize {
    20
}

fn default_doublings() -> usize {
    3
}

fn default_mle_start() -> MleStart {
    MleStart::Box
}

fn default_grid() -> Vec<f64> {
    vec![0.0, 0.1, 0.2, 0.3]
}

fn default_alpha() -> f64 {
    0.05
}

/// `experiment`: Monte Carlo study of one preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `FH1` … `FH5` (estimation) or `FH6` (independence test over `grid`).
    pub preset: String,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<f64>,
    /// Burn-in starts at `burn_in_factor · T`.
    #[serde(default = "default_one")]
    pub burn_in_factor: f64,
    /// Double the burn-in until it moves the mean count by < 0.5%.
    #[serde(default = "default_true")]
    pub burn_in_gate: bool,
    #[serde(default = "default_gate_reps")]
    pub gate_reps: usize,
    #[serde(default = "default_doublings")]
    pub max_doublings: usize,
    // estimation studies
    #[serde(default = "default_rules")]
    pub mt_rules: Vec<MtRule>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub fit: FitOptions,
    /// Restart count for likelihood fits; `fit.restarts` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mle_restarts: Option<usize>,
    #[serde(default = "default_mle_start")]
    pub mle_start: MleStart,
    // independence studies
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
    #[serde(default = "default_indep_rule")]
    pub independence_rule: MtRule,
    #[serde(default = "default_kernel")]
    pub kernel: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl ExperimentConfig {
    pub fn new(preset: &str) -> Self {
        let c: Self = toml::from_str(&format!("preset = {:?}", preset)).expect("defaults deserialize");
        c.resolve()
    }

    pub fn validate(&self) -> Result<()> {
        let preset: Preset = self.preset.parse()?;
        if self.reps == 0 {
            return Err(Error::Config("reps must be positive".into()));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Config("horizons must be a nonempty list of positive values".into()));
        }
        if !(self.burn_in_factor >= 0.0 && self.burn_in_factor.is_finite()) {
            return Err(Error::Config("burn_in_factor must be nonnegative".into()));
        }
        if self.burn_in_gate && self.gate_reps == 0 {
            return Err(Error::Config("gate_reps must be positive".into()));
        }
        if !matches!(preset, Preset::Fh6 { .. }) {
            if self.methods.is_empty() {
                return Err(Error::Config("methods must not be empty".into()));
            }
            if self.methods.contains(&Method::Whittle) && self.mt_rules.is_empty() {
                return Err(Error::Config("mt_rules must not be empty for Whittle fits".into()));
            }
            if self.mle_start == MleStart::Whittle && !self.methods.contains(&Method::Whittle) {
                return Err(Error::Config("mle_start = \"whittle\" needs the whittle method".into()));
            }
            self.fit.validate()?;
        } else {
            if self.grid.is_empty() || self.grid.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::Config("grid must be a nonempty list of nonnegative values".into()));
            }
            if !(self.alpha > 0.0 && self.alpha < 1.0) {
                return Err(Error::Config("alpha must lie in (0, 1)".into()));
            }
            self.kernel.parse::<crate::indeptest::WeightKernel>()?;
        }
        Ok(())
    }
}

/// Record written next to every output: re-running the command with the
/// manifest as its `--config` reproduces the outputs byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Seeds of the individual replications, in replication order, as hex
    /// strings since TOML integers are signed.
    #[serde(default, skip_serializing_if = "Vec::is_empty", with = "hex_seeds")]
    pub replication_seeds: Vec<u64>,
    /// Deterministic output files, relative to the manifest.
    pub outputs: Vec<String>,
    /// The fully resolved configuration.
    pub config: toml::Value,
}

mod hex_seeds {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seeds: &[u64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(seeds.iter().map(|x| format!("{x:#018x}")))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|h| {
                u64::from_str_radix(h.trim_start_matches("0x"), 16)
                    .map_err(|e| serde::de::Error::custom(format!("bad seed `{h}`: {e}")))
            })
            .collect()
    }
}

pub const MANIFEST_FILE: &str = "manifest.toml";

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Result<Self> {
        let config = toml::Value::try_from(config).map_err(|e| Error::Config(format!("cannot encode config: {e}")))?;
        Ok(RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            replication_seeds: Vec::new(),
            outputs: Vec::new(),
            config,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot encode manifest: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Reads a command configuration from a plain config file or from a run
/// manifest of the same command.
pub fn load_config<C: DeserializeOwned>(path: &Path, command: &str) -> Result<C> {
    let text = std::fs::read_to_string(path)?;
    let value: toml::Value = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let is_manifest = value.get("command").is_some() && value.get("config").is_some();
    let body = if is_manifest {
        let m: RunManifest =
            value.try_into().map_err(|e| Error::Config(format!("{}: bad manifest: {e}", path.display())))?;
        if m.command != command {
            return Err(Error::Config(format!(
                "{} is a manifest of `{}`, not `{command}`",
                path.display(),
                m.command
            )));
        }
        m.config
    } else {
        value
    };
    body.try_into().map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
