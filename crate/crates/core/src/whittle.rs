//! Whittle estimation from the Bartlett spectrum, the exact-likelihood
//! baseline and parametric-bootstrap uncertainty.
//!
//! The Whittle objective is
//! `l_W(θ) = T⁻¹ Σ_p [J^H Ψ_θ⁻¹ J + log det Ψ_θ](ω_p)` with
//! `Ψ_θ = B⁻¹ Diag(λ) B⁻ᴴ` and `B = I − ν⊙Ĝ`. Rather than factorising `Ψ_θ`
//! at every frequency, the fast evaluator uses the structure directly:
//! `J^H Ψ⁻¹ J = Σ_i |(B J)_i|² / λ_i` and
//! `log det Ψ = Σ_i log λ_i − 2 log |det B|`.
//! [`whittle_negloglik_reference`] computes the same quantity through a
//! Cholesky factorisation of `Ψ_θ` and serves as a cross-check.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlspecial::MlTable;
use crate::model::{Barrier, HawkesModel, KernelSpec, Parameterization, SpectralModel};
use crate::optim::{nelder_mead, SimplexOptions, SimplexResult};
use crate::quadrature::integrate;
use crate::simulate::{derive_seed, simulate_hawkes, EventLog, SimConfig};
use crate::spectral::{finite_fourier, spectral_empirical, FourierFrame, FourierGrid, MtRule};

/// Settings shared by the Whittle and likelihood fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub mt_rule: MtRule,
    /// Initial θ on the constrained scale; the family's default when absent.
    pub initial: Option<Vec<f64>>,
    /// Simplex iteration cap; `2000 · d` when absent.
    pub max_iter: Option<usize>,
    pub x_tol: f64,
    pub f_tol: f64,
    /// Additional simplex runs, each started from a jittered copy of the
    /// best point found so far.
    pub restarts: usize,
    /// Relative jitter applied on the constrained scale at a restart.
    pub jitter: f64,
    pub barrier: Barrier,
    /// Seed of the restart jitter.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            mt_rule: MtRule::TLogT,
            initial: None,
            max_iter: None,
            x_tol: 1e-6,
            f_tol: 1e-9,
            restarts: 3,
            jitter: 0.1,
            barrier: Barrier::default(),
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == Some(0) || !(self.x_tol > 0.0) || !(self.f_tol > 0.0) {
            return Err(Error::Config("max_iter and tolerances must be positive".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter < 1.0) {
            return Err(Error::Config(format!("jitter must be in [0, 1), got {}", self.jitter)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Whittle,
    Mle,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Whittle => "whittle",
            Method::Mle => "mle",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "whittle" => Ok(Method::Whittle),
            "mle" => Ok(Method::Mle),
            _ => Err(Error::Config(format!("unknown method `{s}` (whittle or mle)"))),
        }
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    pub family: String,
    pub names: Vec<String>,
    pub theta_hat: Vec<f64>,
    pub theta_unconstrained: Vec<f64>,
    /// Whittle objective, or the negative log-likelihood divided by `T`.
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub restart_index: usize,
    /// Number of Fourier frequencies (Whittle only).
    pub m_t: Option<usize>,
}

impl FitResult {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Numerical(format!("cannot serialise fit: {e}")))
    }
}

struct KernelFt {
    active: bool,
    beta: f64,
    scale: f64,
    rot: Complex64,
}

fn kernel_fts(sm: &SpectralModel) -> Vec<KernelFt> {
    sm.kernels
        .iter()
        .zip(&sm.nu)
        .map(|(k, &nu)| {
            let p = k.ml_params();
            let beta = p.beta();
            KernelFt {
                active: nu != 0.0,
                beta,
                scale: p.c().powf(-beta),
                rot: Complex64::from_polar(1.0, 0.5 * std::f64::consts::PI * beta),
            }
        })
        .collect()
}

fn det_small(b: &[Complex64], d: usize) -> Complex64 {
    match d {
        1 => b[0],
        2 => b[0] * b[3] - b[1] * b[2],
        _ => DMatrix::from_row_slice(d, d, b).lu().determinant(),
    }
}

/// Whittle objective plus the barrier, evaluated through the transfer
/// matrix structure.
pub fn whittle_negloglik_with(
    frame: &FourierFrame,
    par: &Parameterization,
    theta: &[f64],
    barrier: &Barrier,
) -> Result<f64> {
    let cand = par.candidate(theta, barrier)?;
    let sm = &cand.spectral;
    let d = sm.dim();
    if frame.dim() != d {
        return Err(Error::Shape(format!("frame has {} marks, family has {d}", frame.dim())));
    }
    let fts = kernel_fts(sm);
    let inv_lambda: Vec<f64> = sm.lambda.iter().map(|l| 1.0 / l).collect();
    let sum_log_lambda: f64 = sm.lambda.iter().map(|l| l.ln()).sum();
    let mut b = vec![Complex64::new(0.0, 0.0); d * d];
    let mut quad = 0.0;
    let mut log_det_b = 0.0;
    for (k, &om) in frame.grid().omega().iter().enumerate() {
        let ln_om = om.ln();
        for (idx, ft) in fts.iter().enumerate() {
            let delta = if idx / d == idx % d { 1.0 } else { 0.0 };
            b[idx] = if ft.active {
                let g = (Complex64::new(1.0, 0.0) + ft.rot * (ft.scale * (ft.beta * ln_om).exp())).inv();
                Complex64::new(delta, 0.0) - sm.nu[idx] * g
            } else {
                Complex64::new(delta, 0.0)
            };
        }
        let j = frame.column(k);
        for i in 0..d {
            let mut y = Complex64::new(0.0, 0.0);
            for l in 0..d {
                y += b[i * d + l] * j[l];
            }
            quad += y.norm_sqr() * inv_lambda[i];
        }
        let det = det_small(&b, d).norm();
        if !(det > 0.0 && det.is_finite()) {
            return Err(Error::Numerical(format!("spectral matrix is singular at omega={om}")));
        }
        log_det_b += det.ln();
    }
    let m = frame.grid().len() as f64;
    let value = (quad + m * sum_log_lambda - 2.0 * log_det_b) / frame.grid().horizon() + cand.penalty;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical("non-finite Whittle objective".into()))
    }
}

/// Whittle objective with the default barrier.
pub fn whittle_negloglik(frame: &FourierFrame, par: &Parameterization, theta: &[f64]) -> Result<f64> {
    whittle_negloglik_with(frame, par, theta, &Barrier::default())
}

fn cholesky(psi: DMatrix<Complex64>, omega: f64) -> Result<nalgebra::Cholesky<Complex64, nalgebra::Dyn>> {
    psi.cholesky()
        .ok_or_else(|| Error::Numerical(format!("spectral matrix not positive definite at omega={omega}")))
}

/// Whittle objective computed from a Cholesky factorisation of the
/// spectral matrix at every frequency.
pub fn whittle_negloglik_reference(
    frame: &FourierFrame,
    par: &Parameterization,
    theta: &[f64],
    barrier: &Barrier,
) -> Result<f64> {
    let cand = par.candidate(theta, barrier)?;
    let sm = cand.spectral;
    let quad = spectral_empirical(frame, |om| {
        let inv = cholesky(sm.matrix(om)?, om)?.inverse();
        Ok((&inv + inv.adjoint()) * Complex64::new(0.5, 0.0))
    })?;
    let mut log_det = 0.0;
    for &om in frame.grid().omega() {
        let l = cholesky(sm.matrix(om)?, om)?;
        log_det += 2.0 * l.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>();
    }
    Ok(quad + log_det / frame.grid().horizon() + cand.penalty)
}

const CONTRAST_TOL: f64 = 1e-8;

/// `(2π)⁻¹ ∫₀^{2πL} [log det Ψ_θ + tr(f₂ Ψ_θ⁻¹)] dx` for the true model `m_true`.
pub fn population_contrast(m_true: &HawkesModel, par: &Parameterization, theta: &[f64], band: f64) -> Result<f64> {
    if !(band > 0.0) {
        return Err(Error::Domain(format!("band limit must be positive, got {band}")));
    }
    let truth = m_true.spectral_model()?;
    let cand = par.candidate(theta, &Barrier::default())?;
    if cand.spectral_radius >= 1.0 {
        return Err(Error::NonStationary(cand.spectral_radius));
    }
    let psi = cand.spectral;
    let mut failure = None;
    let r = integrate(
        |x| match (|| -> Result<f64> {
            let chol = cholesky(psi.matrix(x)?, x)?;
            let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>();
            let tr = chol.solve(&truth.matrix(x)?).trace().re;
            Ok(log_det + tr)
        })() {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        0.0,
        2.0 * std::f64::consts::PI * band,
        CONTRAST_TOL,
        0.0,
        4000,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(r?.value / (2.0 * std::f64::consts::PI))
}

/// `(2π)⁻¹ ∫₀^{2πL} log det f₂(x) dx`, the lower bound of the contrast up to `L·D`.
pub fn log_det_band_integral(m: &HawkesModel, band: f64) -> Result<f64> {
    let sm = m.spectral_model()?;
    let r = integrate(
        |x| match sm.matrix(x).and_then(|f| cholesky(f, x)) {
            Ok(c) => 2.0 * c.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>(),
            Err(_) => f64::NAN,
        },
        0.0,
        2.0 * std::f64::consts::PI * band,
        CONTRAST_TOL,
        0.0,
        4000,
    )?;
    Ok(r.value / (2.0 * std::f64::consts::PI))
}

fn jittered(par: &Parameterization, free: &[f64], rel: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let theta = par.to_constrained(free);
    let moved: Vec<f64> = theta
        .iter()
        .zip(par.slots())
        .map(|(&v, slot)| {
            let v = v * (1.0 + rel * rng.gen_range(-1.0..=1.0));
            match slot {
                crate::model::Slot::Beta(..) => v.min(1.0),
                _ => v,
            }
        })
        .collect();
    par.to_unconstrained(&moved).unwrap_or_else(|_| free.to_vec())
}

/// Runs the simplex with restarts on an objective over constrained θ.
fn minimise<F>(par: &Parameterization, opts: &FitOptions, mut objective: F) -> Result<(SimplexResult, usize)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    opts.validate()?;
    let theta0 = opts.initial.clone().unwrap_or_else(|| par.default_initial());
    let x0 = par.to_unconstrained(&theta0)?;
    let simplex = SimplexOptions {
        max_iter: opts.max_iter.unwrap_or(2000 * par.dim()),
        x_tol: opts.x_tol,
        f_tol: opts.f_tol,
        ..SimplexOptions::default()
    };
    let mut f = |x: &[f64]| objective(&par.to_constrained(x)).unwrap_or(f64::INFINITY);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = nelder_mead(&mut f, &x0, &simplex);
    let mut best_index = 0;
    let mut iterations = best.iterations;
    let mut evaluations = best.evaluations;
    for r in 1..=opts.restarts {
        let start = jittered(par, &best.x, opts.jitter, &mut rng);
        let run = nelder_mead(&mut f, &start, &simplex);
        iterations += run.iterations;
        evaluations += run.evaluations;
        if run.fx < best.fx || (run.fx == best.fx && run.converged && !best.converged) {
            best = run;
            best_index = r;
        }
    }
    if !best.fx.is_finite() {
        return Err(Error::Fit("objective could not be evaluated at any simplex vertex".into()));
    }
    Ok((SimplexResult { iterations, evaluations, ..best }, best_index))
}

fn finish(method: Method, par: &Parameterization, run: SimplexResult, restart: usize, m_t: Option<usize>) -> FitResult {
    FitResult {
        method,
        family: par.kind().name().to_string(),
        names: par.names(),
        theta_hat: par.to_constrained(&run.x),
        theta_unconstrained: run.x,
        objective: run.fx,
        iterations: run.iterations,
        evaluations: run.evaluations,
        converged: run.converged,
        restart_index: restart,
        m_t,
    }
}

/// Whittle fit on a precomputed frame.
pub fn whittle_fit_frame(frame: &FourierFrame, par: &Parameterization, opts: &FitOptions) -> Result<FitResult> {
    let (run, restart) = minimise(par, opts, |theta| whittle_negloglik_with(frame, par, theta, &opts.barrier))?;
    Ok(finish(Method::Whittle, par, run, restart, Some(frame.grid().len())))
}

/// Whittle estimator of θ for the family `par`.
pub fn whittle_fit(log: &EventLog, par: &Parameterization, opts: &FitOptions) -> Result<FitResult> {
    if log.is_empty() {
        return Err(Error::Data("cannot fit an empty event log".into()));
    }
    let grid = FourierGrid::from_rule(log.horizon(), opts.mt_rule)?;
    let frame = finite_fourier(log, &grid)?;
    whittle_fit_frame(&frame, par, opts)
}

fn check_model_for_log(log: &EventLog, m: &HawkesModel) -> Result<()> {
    if log.dim() != m.dim() {
        return Err(Error::Shape(format!("log has {} marks, model has {}", log.dim(), m.dim())));
    }
    Ok(())
}

fn compensator<F: Fn(&KernelSpec, f64) -> f64>(log: &EventLog, m: &HawkesModel, cdf: F) -> f64 {
    let d = m.dim();
    let horizon = log.horizon();
    let mut total: f64 = m.mu().iter().sum::<f64>() * horizon;
    for (&t, &j) in log.times().iter().zip(log.marks()) {
        for i in 0..d {
            let nu = m.nu(i, j);
            if nu != 0.0 {
                total += nu * cdf(m.kernel(i, j), horizon - t);
            }
        }
    }
    total
}

fn log_term(value: f64, k: usize) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value.ln())
    } else {
        Err(Error::Domain(format!("conditional intensity {value} at event {k} is not positive")))
    }
}

/// Negative log-likelihood by direct `O(n²)` evaluation of the
/// conditional intensity.
pub fn hawkes_mle_negloglik_direct(log: &EventLog, m: &HawkesModel) -> Result<f64> {
    check_model_for_log(log, m)?;
    let times = log.times();
    let marks = log.marks();
    let mut ll = 0.0;
    for k in 0..times.len() {
        let i = marks[k];
        let mut lam = m.mu()[i];
        for l in 0..k {
            let j = marks[l];
            let nu = m.nu(i, j);
            if nu != 0.0 {
                lam += nu * m.kernel(i, j).density(times[k] - times[l]);
            }
        }
        ll += log_term(lam, k)?;
    }
    Ok(compensator(log, m, |k, x| k.cdf(x)) - ll)
}

/// Linear-time recursion valid when every kernel is exponential.
fn negloglik_exponential(log: &EventLog, m: &HawkesModel) -> Result<f64> {
    let d = m.dim();
    let rates: Vec<f64> = m.kernels_flat().iter().map(KernelSpec::rate).collect();
    let mut state = vec![0.0; d * d];
    let mut last = 0.0;
    let mut ll = 0.0;
    for (k, (&t, &mark)) in log.times().iter().zip(log.marks()).enumerate() {
        let dt = t - last;
        for (s, c) in state.iter_mut().zip(&rates) {
            *s *= (-c * dt).exp();
        }
        last = t;
        let i = mark;
        let mut lam = m.mu()[i];
        for j in 0..d {
            lam += m.nu(i, j) * rates[i * d + j] * state[i * d + j];
        }
        ll += log_term(lam, k)?;
        for i in 0..d {
            state[i * d + mark] += 1.0;
        }
    }
    Ok(compensator(log, m, |k, x| k.cdf(x)) - ll)
}

/// Negative log-likelihood of a Hawkes model on `[0, T)`; uses the
/// exponential recursion when every kernel is exponential.
pub fn hawkes_mle_negloglik(log: &EventLog, m: &HawkesModel) -> Result<f64> {
    check_model_for_log(log, m)?;
    if m.kernels_flat().iter().all(KernelSpec::is_exponential) {
        negloglik_exponential(log, m)
    } else {
        hawkes_mle_negloglik_direct(log, m)
    }
}

/// Node spacing in `ln t` of the likelihood tables; relative error ≈ 1e-7.
const MLE_TABLE_STEP: f64 = 0.05;

/// Most pairwise lags kept in memory by [`MleWorkspace`].
const MAX_STORED_PAIRS: usize = 40_000_000;

/// Precomputed log-lags that make repeated likelihood evaluations on one
/// log fast: Mittag-Leffler densities are read from interpolation tables
/// built once per distinct `β`.
pub struct MleWorkspace<'a> {
    log: &'a EventLog,
    /// `offsets[k * d + j]..offsets[k * d + j + 1]` indexes the log-lags
    /// from event `k` back to earlier events of mark `j`.
    offsets: Vec<usize>,
    ln_lags: Vec<f64>,
    /// Range of `ln x` over every lag and compensator argument.
    ln_span: (f64, f64),
}

impl<'a> MleWorkspace<'a> {
    pub fn new(log: &'a EventLog) -> Self {
        let n = log.len();
        let d = log.dim();
        let pairs = n.saturating_mul(n.saturating_sub(1)) / 2;
        if pairs > MAX_STORED_PAIRS {
            return Self { log, offsets: Vec::new(), ln_lags: Vec::new(), ln_span: (0.0, 0.0) };
        }
        let mut offsets = Vec::with_capacity(n * d + 1);
        let mut ln_lags = Vec::with_capacity(pairs);
        let times = log.times();
        let marks = log.marks();
        offsets.push(0);
        for k in 0..n {
            for j in 0..d {
                ln_lags.extend((0..k).filter(|&l| marks[l] == j).map(|l| (times[k] - times[l]).ln()));
                offsets.push(ln_lags.len());
            }
        }
        let horizon = log.horizon();
        let lo = ln_lags
            .iter()
            .copied()
            .chain(times.last().map(|t| (horizon - t).ln()))
            .fold(f64::INFINITY, f64::min);
        Self { log, offsets, ln_lags, ln_span: (lo.min(horizon.ln()), horizon.ln()) }
    }

    pub fn negloglik(&self, m: &HawkesModel) -> Result<f64> {
        check_model_for_log(self.log, m)?;
        if m.kernels_flat().iter().all(KernelSpec::is_exponential) {
            return negloglik_exponential(self.log, m);
        }
        if self.offsets.is_empty() && !self.log.is_empty() {
            return hawkes_mle_negloglik_direct(self.log, m);
        }
        let d = m.dim();
        // tables only span the scaled lags c·x actually queried
        let mut spans: HashMap<u64, (f64, f64)> = HashMap::new();
        for k in m.kernels_flat() {
            if k.is_exponential() {
                continue;
            }
            let ln_c = k.rate().ln();
            let e = spans.entry(k.ml_params().beta().to_bits()).or_insert((f64::INFINITY, f64::NEG_INFINITY));
            e.0 = e.0.min(ln_c + self.ln_span.0);
            e.1 = e.1.max(ln_c + self.ln_span.1);
        }
        let mut tables: HashMap<u64, MlTable> = HashMap::new();
        for (bits, (lo, hi)) in spans {
            tables.insert(bits, MlTable::with_grid(f64::from_bits(bits), lo, hi, MLE_TABLE_STEP)?);
        }
        let marks = self.log.marks();
        let mut ll = 0.0;
        for (k, &i) in marks.iter().enumerate() {
            let mut lam = m.mu()[i];
            for j in 0..d {
                let nu = m.nu(i, j);
                if nu == 0.0 {
                    continue;
                }
                let lags = &self.ln_lags[self.offsets[k * d + j]..self.offsets[k * d + j + 1]];
                let kernel = m.kernel(i, j);
                let c = kernel.rate();
                let s = if kernel.is_exponential() {
                    lags.iter().map(|l| (-c * l.exp()).exp()).sum::<f64>() * c
                } else {
                    tables[&kernel.ml_params().beta().to_bits()].density_sum_ln(lags, c)
                };
                lam += nu * s;
            }
            ll += log_term(lam, k)?;
        }
        let comp = compensator(self.log, m, |k, x| {
            if k.is_exponential() {
                k.cdf(x)
            } else {
                tables[&k.ml_params().beta().to_bits()].cdf(x, k.rate())
            }
        });
        Ok(comp - ll)
    }
}

/// Maximum-likelihood fit; the reported objective is the negative
/// log-likelihood divided by `T`.
pub fn mle_fit(log: &EventLog, par: &Parameterization, opts: &FitOptions) -> Result<FitResult> {
    if log.is_empty() {
        return Err(Error::Data("cannot fit an empty event log".into()));
    }
    let ws = MleWorkspace::new(log);
    let horizon = log.horizon();
    let (run, restart) = minimise(par, opts, |theta| {
        let cand = par.candidate(theta, &opts.barrier)?;
        let model = cand.model.ok_or_else(|| Error::Domain("non-positive background rate".into()))?;
        Ok(ws.negloglik(&model)? / horizon + cand.penalty)
    })?;
    Ok(finish(Method::Mle, par, run, restart, None))
}

/// Fits `log` with the chosen method.
pub fn fit(log: &EventLog, par: &Parameterization, method: Method, opts: &FitOptions) -> Result<FitResult> {
    match method {
        Method::Whittle => whittle_fit(log, par, opts),
        Method::Mle => mle_fit(log, par, opts),
    }
}

/// Parametric-bootstrap settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub reps: usize,
    pub seed: u64,
    pub method: Method,
}

/// Sample covariance of `√T (θ̂* − θ̂)` over bootstrap refits of logs
/// simulated from the fitted model.
pub fn fit_covariance_bootstrap(
    par: &Parameterization,
    theta_hat: &[f64],
    horizon: f64,
    opts: &FitOptions,
    boot: &BootstrapOptions,
) -> Result<DMatrix<f64>> {
    if boot.reps < 50 {
        return Err(Error::Config(format!("bootstrap needs at least 50 replications, got {}", boot.reps)));
    }
    let model = par.model(theta_hat)?;
    let start = FitOptions { initial: Some(theta_hat.to_vec()), ..opts.clone() };
    let fits: Vec<Option<Vec<f64>>> = (0..boot.reps)
        .into_par_iter()
        .map(|r| {
            let cfg = SimConfig::new(horizon, derive_seed(boot.seed, &[r as u64]));
            let log = simulate_hawkes(&model, &cfg).ok()?;
            let f = fit(&log, par, boot.method, &start).ok()?;
            f.converged.then_some(f.theta_hat)
        })
        .collect();
    let ok: Vec<&Vec<f64>> = fits.iter().flatten().collect();
    let failed = boot.reps - ok.len();
    if failed as f64 > 0.2 * boot.reps as f64 {
        return Err(Error::Covariance(format!("{failed} of {} bootstrap fits did not converge", boot.reps)));
    }
    let d = theta_hat.len();
    let scale = horizon.sqrt();
    let rows: Vec<DVector<f64>> = ok
        .iter()
        .map(|t| DVector::from_iterator(d, t.iter().zip(theta_hat).map(|(a, b)| scale * (a - b))))
        .collect();
    let n = rows.len() as f64;
    let mean = rows.iter().fold(DVector::zeros(d), |acc, r| acc + r) / n;
    let mut cov = DMatrix::zeros(d, d);
    for r in &rows {
        let c = r - &mean;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    for i in 0..d {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_parameterization, FamilyDescriptor, FamilyKind};

    fn par(kind: FamilyKind) -> Parameterization {
        make_parameterization(&FamilyDescriptor::new(kind)).unwrap()
    }

    fn fh4() -> HawkesModel {
        HawkesModel::univariate(1.0, 0.5, KernelSpec::mittag_leffler(0.9, 1.0).unwrap()).unwrap()
    }

    fn fh4_log(horizon: f64, seed: u64) -> EventLog {
        simulate_hawkes(&fh4(), &SimConfig::new(horizon, seed)).unwrap()
    }

    #[test]
    fn perfect_periodogram_collapses_quadratic_form() {
        let p = par(FamilyKind::UnivariateMl);
        let theta = vec![1.0, 0.5, 0.9, 1.0];
        let sm = p.candidate(&theta, &Barrier::default()).unwrap().spectral;
        let horizon = 50.0;
        let grid = FourierGrid::new(horizon, 60).unwrap();
        let values: Vec<Complex64> =
            grid.omega().iter().map(|&w| Complex64::new(sm.matrix(w).unwrap()[(0, 0)].re.sqrt(), 0.0)).collect();
        let psi_log_sum: f64 = grid.omega().iter().map(|&w| sm.matrix(w).unwrap()[(0, 0)].re.ln()).sum();
        let frame = FourierFrame::from_values(grid, 1, values).unwrap();
        let expect = 60.0 / horizon + psi_log_sum / horizon;
        assert!((whittle_negloglik(&frame, &p, &theta).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn poisson_whittle_minimiser_is_mean_periodogram() {
        let m = HawkesModel::univariate(2.0, 0.0, KernelSpec::exponential(1.0).unwrap()).unwrap();
        let log = simulate_hawkes(&m, &SimConfig::new(500.0, 1)).unwrap();
        let frame = finite_fourier(&log, &FourierGrid::new(500.0, 1000).unwrap()).unwrap();
        let a = (0..1000).map(|k| frame.get(0, k).norm_sqr()).sum::<f64>() / 1000.0;
        let p = par(FamilyKind::UnivariatePoisson);
        let fit = whittle_fit_frame(&frame, &p, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.theta_hat[0] - a).abs() < 1e-5 * a);
    }

    #[test]
    fn structured_and_factorised_objectives_agree() {
        let log = fh4_log(300.0, 4);
        let frame = finite_fourier(&log, &FourierGrid::new(300.0, 600).unwrap()).unwrap();
        let p = par(FamilyKind::UnivariateMl);
        for theta in [[1.0, 0.5, 0.9, 1.0], [0.7, 0.3, 0.6, 1.7], [1.3, 0.8, 1.0, 0.4]] {
            let a = whittle_negloglik(&frame, &p, &theta).unwrap();
            let b = whittle_negloglik_reference(&frame, &p, &theta, &Barrier::default()).unwrap();
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} {b}");
        }
        let bp = par(FamilyKind::BivariateMl);
        let m2 = bp.template().clone();
        let log2 = simulate_hawkes(&m2, &SimConfig::new(400.0, 2)).unwrap();
        let frame2 = finite_fourier(&log2, &FourierGrid::new(400.0, 500).unwrap()).unwrap();
        let theta = bp.theta_of(&m2).unwrap();
        let a = whittle_negloglik(&frame2, &bp, &theta).unwrap();
        let b = whittle_negloglik_reference(&frame2, &bp, &theta, &Barrier::default()).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} {b}");
    }

    #[test]
    fn objective_ignores_event_order_and_rejects_nonstationary() {
        let p = par(FamilyKind::UnivariateMl);
        let log = fh4_log(100.0, 8);
        let frame = finite_fourier(&log, &FourierGrid::new(100.0, 200).unwrap()).unwrap();
        assert!(matches!(whittle_negloglik(&frame, &p, &[1.0, 1.2, 0.9, 1.0]), Err(Error::NonStationary(_))));
        let v = whittle_negloglik(&frame, &p, &[1.0, 0.5, 0.9, 1.0]).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn contrast_equality_case_and_scalar_oracle() {
        let m = fh4();
        let p = par(FamilyKind::UnivariateMl);
        let theta = p.theta_of(&m).unwrap();
        for band in [0.5, 2.0] {
            let h = population_contrast(&m, &p, &theta, band).unwrap();
            let base = log_det_band_integral(&m, band).unwrap();
            assert!((h - base - band).abs() < 1e-7, "band {band}");
        }
        // Poisson truth with rate a, Poisson candidate with rate b
        let pp = par(FamilyKind::UnivariatePoisson);
        let truth = HawkesModel::univariate(1.5, 0.0, KernelSpec::exponential(1.0).unwrap()).unwrap();
        for b in [0.5, 1.5, 3.0] {
            let h = population_contrast(&truth, &pp, &[b], 1.3).unwrap();
            assert!((h - 1.3 * (b.ln() + 1.5 / b)).abs() < 1e-8);
        }
    }

    #[test]
    fn contrast_identifies_fh4() {
        let m = fh4();
        let p = par(FamilyKind::UnivariateMl);
        let theta0 = p.theta_of(&m).unwrap();
        let band = 1250f64.ln();
        let h0 = population_contrast(&m, &p, &theta0, band).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let theta: Vec<f64> = theta0.iter().map(|v| v * (1.0 + rng.gen_range(-0.1..0.1))).map(|v| v.min(1.0)).collect();
            assert!(population_contrast(&m, &p, &theta, band).unwrap() > h0);
        }
    }

    #[test]
    fn likelihood_examples() {
        let k = KernelSpec::exponential(1.0).unwrap();
        let m0 = HawkesModel::univariate(1.0, 0.0, k.clone()).unwrap();
        let empty = EventLog::empty(2.0, 1).unwrap();
        assert!((hawkes_mle_negloglik(&empty, &m0).unwrap() - 2.0).abs() < 1e-15);
        let m = HawkesModel::univariate(1.0, 0.5, k).unwrap();
        let one = EventLog::new(2.0, 1, vec![0.5], vec![0]).unwrap();
        let expect = 2.0 + 0.5 * (1.0 - (-1.5f64).exp());
        assert!((hawkes_mle_negloglik(&one, &m).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 2.38843).abs() < 1e-5);
    }

    #[test]
    fn exponential_recursion_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for case in 0..100 {
            let d = 1 + case % 2;
            let k = |rng: &mut ChaCha8Rng| KernelSpec::exponential(rng.gen_range(0.3..3.0)).unwrap();
            let mu: Vec<f64> = (0..d).map(|_| rng.gen_range(0.2..1.5)).collect();
            let nu: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.gen_range(0.0..0.4)).collect()).collect();
            let ks: Vec<Vec<KernelSpec>> = (0..d).map(|_| (0..d).map(|_| k(&mut rng)).collect()).collect();
            let m = HawkesModel::new(mu, nu, ks).unwrap();
            let log = simulate_hawkes(&m, &SimConfig::new(40.0, case as u64)).unwrap();
            let a = negloglik_exponential(&log, &m).unwrap();
            let b = hawkes_mle_negloglik_direct(&log, &m).unwrap();
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "case {case}: {a} vs {b}");
        }
    }

    #[test]
    fn workspace_matches_direct_ml_likelihood() {
        let log = fh4_log(150.0, 21);
        let ws = MleWorkspace::new(&log);
        for (beta, c, nu) in [(0.9, 1.0, 0.5), (0.55, 1.7, 0.3), (1.0, 0.8, 0.6)] {
            let m = HawkesModel::univariate(1.0, nu, KernelSpec::mittag_leffler(beta, c).unwrap()).unwrap();
            let a = ws.negloglik(&m).unwrap();
            let b = hawkes_mle_negloglik_direct(&log, &m).unwrap();
            // coarse likelihood tables are accurate to a few parts in 1e7
            assert!((a - b).abs() < 1e-6 * b.abs(), "beta {beta}: {a} vs {b}");
        }
        let bp = par(FamilyKind::BivariateMl);
        let m2 = bp.template().clone();
        let log2 = simulate_hawkes(&m2, &SimConfig::new(300.0, 2)).unwrap();
        let a = MleWorkspace::new(&log2).negloglik(&m2).unwrap();
        let b = hawkes_mle_negloglik_direct(&log2, &m2).unwrap();
        assert!((a - b).abs() < 1e-6 * b.abs(), "{a} vs {b}");
    }

    #[test]
    fn poisson_fits_recover_rate() {
        let m = HawkesModel::univariate(2.0, 0.0, KernelSpec::exponential(1.0).unwrap()).unwrap();
        let log = simulate_hawkes(&m, &SimConfig::new(2000.0, 17)).unwrap();
        let p = par(FamilyKind::UnivariatePoisson);
        let w = whittle_fit(&log, &p, &FitOptions { mt_rule: MtRule::TwoT, ..Default::default() }).unwrap();
        assert!((w.theta_hat[0] - 2.0).abs() < 3.0 * (2.0f64 / 2000.0).sqrt());
        let mle = mle_fit(&log, &p, &FitOptions::default()).unwrap();
        let closed = log.len() as f64 / 2000.0;
        assert!(mle.converged);
        assert!((mle.theta_hat[0] - closed).abs() < 1e-5 * closed);
    }

    #[test]
    fn fits_are_deterministic_and_serialise() {
        let log = fh4_log(200.0, 5);
        let p = par(FamilyKind::UnivariateMl);
        let opts = FitOptions { mt_rule: MtRule::TwoT, ..Default::default() };
        let a = whittle_fit(&log, &p, &opts).unwrap();
        let b = whittle_fit(&log, &p, &opts).unwrap();
        assert_eq!(a, b);
        let text = a.to_toml().unwrap();
        let back: FitResult = toml::from_str(&text).unwrap();
        assert_eq!(back, a);
        p.validate(&a.theta_hat).unwrap();
        assert!(a.objective.is_finite());
    }

    #[test]
    fn empty_log_is_rejected() {
        let p = par(FamilyKind::UnivariatePoisson);
        let log = EventLog::empty(10.0, 1).unwrap();
        assert!(matches!(whittle_fit(&log, &p, &FitOptions::default()), Err(Error::Data(_))));
    }

    #[test]
    fn poisson_bootstrap_variance() {
        let p = par(FamilyKind::UnivariatePoisson);
        let opts = FitOptions { mt_rule: MtRule::TwoT, restarts: 0, ..Default::default() };
        let boot = BootstrapOptions { reps: 200, seed: 4, method: Method::Mle };
        let cov = fit_covariance_bootstrap(&p, &[2.0], 500.0, &opts, &boot).unwrap();
        assert!((cov[(0, 0)] / 2.0 - 1.0).abs() < 0.25, "{}", cov[(0, 0)]);
        assert!(fit_covariance_bootstrap(&p, &[2.0], 500.0, &opts, &BootstrapOptions { reps: 10, ..boot }).is_err());
    }

    #[test]
    fn bootstrap_covariance_is_symmetric() {
        let p = par(FamilyKind::UnivariateExponential);
        let opts = FitOptions { mt_rule: MtRule::TwoT, restarts: 0, ..Default::default() };
        let boot = BootstrapOptions { reps: 50, seed: 1, method: Method::Whittle };
        let cov = fit_covariance_bootstrap(&p, &[1.0, 0.4, 1.0], 300.0, &opts, &boot).unwrap();
        assert_eq!(cov, cov.transpose());
        assert!(cov.clone().symmetric_eigenvalues().iter().all(|&e| e > -1e-9));
    }
}
