//! Hawkes model representation, stationarity, average intensity and the
//! Bartlett spectral density matrix.
//!
//! Indexing follows the conditional intensity convention: entry `(i, j)` of
//! `nu` and of the kernel matrix describes how an event of type `j` excites
//! type `i`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlspecial::{self, MlParams};

mod param;

pub use param::{
    make_parameterization, Barrier, Candidate, FamilyDescriptor, FamilyKind, Parameterization, Slot,
};

/// Largest supported dimension.
pub const MAX_DIM: usize = 8;

/// Excitation kernel: a probability density on `(0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum KernelSpec {
    /// `c e^{-cx}`
    Exponential { c: f64 },
    /// `c^β x^{β-1} E_{β,β}(-(cx)^β)`
    MittagLeffler { beta: f64, c: f64 },
}

impl KernelSpec {
    pub fn exponential(c: f64) -> Result<Self> {
        let k = KernelSpec::Exponential { c };
        k.validate()?;
        Ok(k)
    }

    pub fn mittag_leffler(beta: f64, c: f64) -> Result<Self> {
        let k = KernelSpec::MittagLeffler { beta, c };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Exponential { c } => {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::Domain(format!("exponential kernel rate must be positive, got {c}")));
                }
            }
            KernelSpec::MittagLeffler { beta, c } => {
                MlParams::new(beta, c)?;
            }
        }
        Ok(())
    }

    /// Mittag-Leffler parameters; the exponential kernel is the `β = 1` member.
    pub fn ml_params(&self) -> MlParams {
        match *self {
            KernelSpec::Exponential { c } => MlParams::new(1.0, c).expect("validated kernel"),
            KernelSpec::MittagLeffler { beta, c } => MlParams::new(beta, c).expect("validated kernel"),
        }
    }

    pub fn rate(&self) -> f64 {
        match *self {
            KernelSpec::Exponential { c } | KernelSpec::MittagLeffler { c, .. } => c,
        }
    }

    pub fn is_exponential(&self) -> bool {
        match *self {
            KernelSpec::Exponential { .. } => true,
            KernelSpec::MittagLeffler { beta, .. } => beta == 1.0,
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match *self {
            KernelSpec::Exponential { c } => {
                if x > 0.0 {
                    c * (-c * x).exp()
                } else {
                    0.0
                }
            }
            KernelSpec::MittagLeffler { .. } => mlspecial::ml_density(x, &self.ml_params()),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            KernelSpec::Exponential { c } => {
                if x > 0.0 {
                    -(-c * x).exp_m1()
                } else {
                    0.0
                }
            }
            KernelSpec::MittagLeffler { .. } => mlspecial::ml_cdf(x, &self.ml_params()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        mlspecial::ml_sample(&self.ml_params(), rng)
    }
}

/// Fourier transform `ĝ(ω) = ∫ e^{-iωx} g(x) dx` of a kernel.
pub fn kernel_ft(k: &KernelSpec, omega: f64) -> Complex64 {
    match *k {
        KernelSpec::Exponential { c } => Complex64::new(c, 0.0) / Complex64::new(c, omega),
        KernelSpec::MittagLeffler { .. } => mlspecial::ml_fourier(omega, &k.ml_params()),
    }
}

/// A multivariate linear Hawkes model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesModel {
    mu: Vec<f64>,
    /// row-major `D × D`
    nu: Vec<f64>,
    /// row-major `D × D`
    kernels: Vec<KernelSpec>,
}

impl HawkesModel {
    /// Builds a model; `nu` and `kernels` are given row by row.
    pub fn new(mu: Vec<f64>, nu: Vec<Vec<f64>>, kernels: Vec<Vec<KernelSpec>>) -> Result<Self> {
        let d = mu.len();
        if d == 0 || d > MAX_DIM {
            return Err(Error::Shape(format!("dimension must be in 1..={MAX_DIM}, got {d}")));
        }
        if nu.len() != d || nu.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("interaction matrix must be D x D".into()));
        }
        if kernels.len() != d || kernels.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("kernel matrix must be D x D".into()));
        }
        Self::from_flat(mu, nu.concat(), kernels.concat())
    }

    pub(crate) fn from_flat(mu: Vec<f64>, nu: Vec<f64>, kernels: Vec<KernelSpec>) -> Result<Self> {
        let d = mu.len();
        if d == 0 || d > MAX_DIM || nu.len() != d * d || kernels.len() != d * d {
            return Err(Error::Shape("inconsistent model dimensions".into()));
        }
        if let Some(m) = mu.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::Domain(format!("background rates must be positive, got {m}")));
        }
        if let Some(v) = nu.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("interactions must be nonnegative, got {v}")));
        }
        for k in &kernels {
            k.validate()?;
        }
        Ok(HawkesModel { mu, nu, kernels })
    }

    /// Univariate model with a single kernel.
    pub fn univariate(mu: f64, nu: f64, kernel: KernelSpec) -> Result<Self> {
        Self::from_flat(vec![mu], vec![nu], vec![kernel])
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn nu(&self, i: usize, j: usize) -> f64 {
        self.nu[i * self.dim() + j]
    }

    pub fn nu_flat(&self) -> &[f64] {
        &self.nu
    }

    pub fn kernel(&self, i: usize, j: usize) -> &KernelSpec {
        &self.kernels[i * self.dim() + j]
    }

    pub fn kernels_flat(&self) -> &[KernelSpec] {
        &self.kernels
    }

    pub fn nu_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.nu)
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius_of(&self.nu_matrix())
    }

    /// Errors unless `ρ(ν) < 1`.
    pub fn check_stationary(&self) -> Result<()> {
        let rho = self.spectral_radius();
        if rho < 1.0 {
            Ok(())
        } else {
            Err(Error::NonStationary(rho))
        }
    }

    /// Second-order description of the stationary law.
    pub fn spectral_model(&self) -> Result<SpectralModel> {
        Ok(SpectralModel {
            lambda: average_intensity(self)?,
            nu: self.nu.clone(),
            kernels: self.kernels.clone(),
        })
    }
}

/// Largest eigenvalue modulus of a square matrix given row by row.
pub fn spectral_radius(nu: &[Vec<f64>]) -> Result<f64> {
    let d = nu.len();
    if d == 0 || nu.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("spectral radius needs a non-empty square matrix".into()));
    }
    Ok(spectral_radius_of(&DMatrix::from_row_slice(d, d, &nu.concat())))
}

pub(crate) fn spectral_radius_of(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        1 => m[(0, 0)].abs(),
        2 => {
            let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
            let half_tr = 0.5 * (a + d);
            let disc = 0.25 * (a - d) * (a - d) + b * c;
            if disc >= 0.0 {
                let s = disc.sqrt();
                (half_tr + s).abs().max((half_tr - s).abs())
            } else {
                (half_tr * half_tr - disc).sqrt()
            }
        }
        _ => m
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
    }
}

/// Average intensity `λ = (I - ν)⁻¹ μ`.
pub fn average_intensity(m: &HawkesModel) -> Result<Vec<f64>> {
    m.check_stationary()?;
    let d = m.dim();
    let a = DMatrix::<f64>::identity(d, d) - m.nu_matrix();
    let rhs = nalgebra::DVector::from_column_slice(m.mu());
    let lambda = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("I - nu is singular".into()))?;
    Ok(lambda.iter().copied().collect())
}

/// Average intensity plus the interaction and kernel matrices: everything
/// the second-order structure depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    pub lambda: Vec<f64>,
    /// row-major `D × D`
    pub nu: Vec<f64>,
    /// row-major `D × D`
    pub kernels: Vec<KernelSpec>,
}

impl SpectralModel {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// `I - ν ⊙ Ĝ(ω)`.
    pub fn transfer(&self, omega: f64) -> DMatrix<Complex64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            let k = i * d + j;
            Complex64::new(delta, 0.0) - self.nu[k] * kernel_ft(&self.kernels[k], omega)
        })
    }

    /// `f₂(ω) = (I - ν⊙Ĝ)⁻¹ Diag(λ) [(I - ν⊙Ĝ)⁻¹]ᴴ`.
    pub fn matrix(&self, omega: f64) -> Result<DMatrix<Complex64>> {
        let inv = self
            .transfer(omega)
            .try_inverse()
            .ok_or_else(|| Error::Numerical(format!("I - nu*G(omega) is singular at omega={omega}")))?;
        let d = self.dim();
        let scaled = DMatrix::from_fn(d, d, |i, j| inv[(i, j)] * self.lambda[j]);
        let f = &scaled * inv.adjoint();
        // enforce exact Hermitian symmetry
        Ok((&f + f.adjoint()) * Complex64::new(0.5, 0.0))
    }
}

/// Spectral density matrix at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMatrix {
    pub omega: f64,
    pub values: DMatrix<Complex64>,
}

/// Bartlett spectral density matrix of a stationary model.
pub fn bartlett_spectral_matrix(m: &HawkesModel, omega: f64) -> Result<SpectralMatrix> {
    let values = m.spectral_model()?.matrix(omega)?;
    Ok(SpectralMatrix { omega, values })
}
