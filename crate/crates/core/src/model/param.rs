//! Parametric families `θ ↦ Ψ_θ` and the unconstrained reparameterization
//! used by the optimizers.
//!
//! Positive quantities (background rates, inverse intensities, kernel rates)
//! go through `exp`, interactions through softplus and tail exponents through
//! a logistic map that snaps to the exponential boundary `β = 1` within
//! `1e-6`. Stationarity is not built into the map; it is enforced by a
//! smooth barrier on the spectral radius (see [`Barrier`]).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{spectral_radius_of, HawkesModel, KernelSpec, SpectralModel};
use crate::error::{Error, Result};

const BETA_SNAP: f64 = 1e-6;

/// Supported parametric families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// θ = (μ); ν = 0.
    UnivariatePoisson,
    /// θ = (μ, ν, c).
    UnivariateExponential,
    /// θ = (μ, ν, β, c).
    UnivariateMl,
    /// θ = (λ₁⁻¹, λ₂⁻¹, ν₁₁, ν₂₁, ν₁₂, ν₂₂, β₁₁, β₂₁, β₁₂, β₂₂, c₁₁, c₂₁, c₁₂, c₂₂).
    BivariateMl,
    /// θ = (a, b): cross interactions of the FH6 family, everything else fixed.
    BivariateMlFh6,
}

impl FamilyKind {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::UnivariatePoisson => "univariate-poisson",
            FamilyKind::UnivariateExponential => "univariate-exponential",
            FamilyKind::UnivariateMl => "univariate-ml",
            FamilyKind::BivariateMl => "bivariate-ml",
            FamilyKind::BivariateMlFh6 => "bivariate-ml-fh6",
        }
    }

    pub fn all() -> [FamilyKind; 5] {
        [
            FamilyKind::UnivariatePoisson,
            FamilyKind::UnivariateExponential,
            FamilyKind::UnivariateMl,
            FamilyKind::BivariateMl,
            FamilyKind::BivariateMlFh6,
        ]
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "univariate-poisson" | "poisson" => Ok(FamilyKind::UnivariatePoisson),
            "univariate-exponential" => Ok(FamilyKind::UnivariateExponential),
            "univariate-ml" => Ok(FamilyKind::UnivariateMl),
            "bivariate-ml" => Ok(FamilyKind::BivariateMl),
            "bivariate-ml-fh6" | "bivariate-ml-symmetric-fh6" => Ok(FamilyKind::BivariateMlFh6),
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }
}

/// A family together with the model supplying its fixed entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyDescriptor {
    pub kind: FamilyKind,
    /// Source of the fixed values; `None` uses the family default
    /// (the FH6 constants for [`FamilyKind::BivariateMlFh6`]).
    pub template: Option<HawkesModel>,
}

impl FamilyDescriptor {
    pub fn new(kind: FamilyKind) -> Self {
        FamilyDescriptor { kind, template: None }
    }
}

/// One free coordinate of θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Mu(usize),
    InvLambda(usize),
    Nu(usize, usize),
    Beta(usize, usize),
    Rate(usize, usize),
}

impl Slot {
    fn name(&self) -> String {
        match *self {
            Slot::Mu(i) => format!("mu{}", i + 1),
            Slot::InvLambda(i) => format!("inv_lambda{}", i + 1),
            Slot::Nu(i, j) => format!("nu{}{}", i + 1, j + 1),
            Slot::Beta(i, j) => format!("beta{}{}", i + 1, j + 1),
            Slot::Rate(i, j) => format!("c{}{}", i + 1, j + 1),
        }
    }

    fn to_constrained(self, x: f64) -> f64 {
        match self {
            Slot::Mu(_) | Slot::InvLambda(_) | Slot::Rate(..) => x.exp(),
            Slot::Nu(..) => softplus(x),
            Slot::Beta(..) => {
                let s = logistic(x);
                if s >= 1.0 - BETA_SNAP {
                    1.0
                } else {
                    s
                }
            }
        }
    }

    fn to_unconstrained(self, v: f64) -> f64 {
        match self {
            Slot::Mu(_) | Slot::InvLambda(_) | Slot::Rate(..) => v.ln(),
            Slot::Nu(..) => softplus_inv(v.max(1e-300)),
            Slot::Beta(..) => {
                let v = v.min(1.0 - 0.5 * BETA_SNAP);
                (v / (1.0 - v)).ln()
            }
        }
    }

    fn check(self, v: f64) -> Result<()> {
        let ok = match self {
            Slot::Mu(_) | Slot::InvLambda(_) | Slot::Rate(..) => v > 0.0 && v.is_finite(),
            Slot::Nu(..) => v >= 0.0 && v.is_finite(),
            Slot::Beta(..) => v > 0.0 && v <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("{} = {v} is outside its parameter range", self.name())))
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(v: f64) -> f64 {
    if v > 30.0 {
        v + (-(-v).exp()).ln_1p()
    } else {
        v.exp_m1().ln()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Smooth stationarity barrier `κ · max(0, ρ(ν) - (1 - ε))²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Barrier {
    pub kappa: f64,
    pub eps: f64,
}

impl Default for Barrier {
    fn default() -> Self {
        Barrier { kappa: 1e6, eps: 1e-3 }
    }
}

/// Everything an objective needs at one parameter value.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub spectral: SpectralModel,
    /// Present when the background rates are all positive.
    pub model: Option<HawkesModel>,
    pub penalty: f64,
    pub spectral_radius: f64,
}

/// Bijection between unconstrained vectors and a parametric family.
#[derive(Debug, Clone)]
pub struct Parameterization {
    kind: FamilyKind,
    template: HawkesModel,
    slots: Vec<Slot>,
    /// plausible box used for the default initial value
    bounds: Vec<(f64, f64)>,
}

fn default_template(kind: FamilyKind) -> HawkesModel {
    let ml = |b: f64, c: f64| KernelSpec::MittagLeffler { beta: b, c };
    match kind {
        FamilyKind::UnivariatePoisson => {
            HawkesModel::univariate(1.0, 0.0, KernelSpec::Exponential { c: 1.0 }).expect("valid template")
        }
        FamilyKind::UnivariateExponential => {
            HawkesModel::univariate(1.0, 0.5, KernelSpec::Exponential { c: 1.0 }).expect("valid template")
        }
        FamilyKind::UnivariateMl => HawkesModel::univariate(1.0, 0.5, ml(0.9, 1.0)).expect("valid template"),
        FamilyKind::BivariateMl => HawkesModel::new(
            vec![0.2, 0.1],
            vec![vec![0.3, 1.0], vec![0.5, 0.2]],
            vec![vec![ml(0.75, 0.8), ml(0.85, 1.0)], vec![ml(0.8, 0.9), ml(0.9, 1.1)]],
        )
        .expect("valid template"),
        FamilyKind::BivariateMlFh6 => HawkesModel::new(
            vec![0.5, 0.5],
            vec![vec![0.5, 0.0], vec![0.0, 0.5]],
            vec![
                vec![ml(1.0, 1.0), ml(0.9, 1.1)],
                vec![ml(0.8, 0.9), ml(1.0, 1.0)],
            ],
        )
        .expect("valid template"),
    }
}

/// Builds the parameterization for a family descriptor.
pub fn make_parameterization(desc: &FamilyDescriptor) -> Result<Parameterization> {
    let kind = desc.kind;
    let template = desc.template.clone().unwrap_or_else(|| default_template(kind));
    let want_dim = match kind {
        FamilyKind::UnivariatePoisson | FamilyKind::UnivariateExponential | FamilyKind::UnivariateMl => 1,
        FamilyKind::BivariateMl | FamilyKind::BivariateMlFh6 => 2,
    };
    if template.dim() != want_dim {
        return Err(Error::Config(format!(
            "family {kind} needs a {want_dim}-dimensional template, got {}",
            template.dim()
        )));
    }
    // Plausible boxes; their midpoints are the fixed initial values.
    let (slots, bounds): (Vec<Slot>, Vec<(f64, f64)>) = match kind {
        FamilyKind::UnivariatePoisson => (vec![Slot::Mu(0)], vec![(0.1, 4.0)]),
        FamilyKind::UnivariateExponential => (
            vec![Slot::Mu(0), Slot::Nu(0, 0), Slot::Rate(0, 0)],
            vec![(0.2, 2.0), (0.1, 0.9), (0.2, 2.0)],
        ),
        FamilyKind::UnivariateMl => (
            vec![Slot::Mu(0), Slot::Nu(0, 0), Slot::Beta(0, 0), Slot::Rate(0, 0)],
            vec![(0.2, 2.0), (0.1, 0.9), (0.3, 1.0), (0.2, 2.0)],
        ),
        FamilyKind::BivariateMl => {
            let mut slots = vec![Slot::InvLambda(0), Slot::InvLambda(1)];
            let mut bounds = vec![(0.05, 1.0); 2];
            let cols = [(0, 0), (1, 0), (0, 1), (1, 1)];
            slots.extend(cols.iter().map(|&(i, j)| Slot::Nu(i, j)));
            bounds.extend([(0.0, 0.6); 4]);
            slots.extend(cols.iter().map(|&(i, j)| Slot::Beta(i, j)));
            bounds.extend([(0.5, 1.0); 4]);
            slots.extend(cols.iter().map(|&(i, j)| Slot::Rate(i, j)));
            bounds.extend([(0.5, 1.5); 4]);
            (slots, bounds)
        }
        FamilyKind::BivariateMlFh6 => (vec![Slot::Nu(0, 1), Slot::Nu(1, 0)], vec![(0.0, 0.4); 2]),
    };
    Ok(Parameterization { kind, template, slots, bounds })
}

impl Parameterization {
    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn names(&self) -> Vec<String> {
        self.slots.iter().map(Slot::name).collect()
    }

    pub fn template(&self) -> &HawkesModel {
        &self.template
    }

    /// Midpoint of the family's plausible box.
    pub fn default_initial(&self) -> Vec<f64> {
        self.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    pub fn validate(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Shape(format!(
                "family {} has {} parameters, got {}",
                self.kind,
                self.dim(),
                theta.len()
            )));
        }
        for (slot, &v) in self.slots.iter().zip(theta) {
            slot.check(v)?;
        }
        Ok(())
    }

    pub fn to_constrained(&self, free: &[f64]) -> Vec<f64> {
        self.slots.iter().zip(free).map(|(s, &x)| s.to_constrained(x)).collect()
    }

    pub fn to_unconstrained(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.validate(theta)?;
        Ok(self.slots.iter().zip(theta).map(|(s, &v)| s.to_unconstrained(v)).collect())
    }

    /// Constrained parameter vector of a model in this family.
    pub fn theta_of(&self, m: &HawkesModel) -> Result<Vec<f64>> {
        if m.dim() != self.template.dim() {
            return Err(Error::Shape("model dimension does not match the family".into()));
        }
        let lambda = if self.slots.iter().any(|s| matches!(s, Slot::InvLambda(_))) {
            Some(super::average_intensity(m)?)
        } else {
            None
        };
        Ok(self
            .slots
            .iter()
            .map(|s| match *s {
                Slot::Mu(i) => m.mu()[i],
                Slot::InvLambda(i) => 1.0 / lambda.as_ref().expect("computed above")[i],
                Slot::Nu(i, j) => m.nu(i, j),
                Slot::Beta(i, j) => m.kernel(i, j).ml_params().beta(),
                Slot::Rate(i, j) => m.kernel(i, j).rate(),
            })
            .collect())
    }

    /// Evaluates θ into spectral ingredients, an optional model and the
    /// barrier penalty.
    pub fn candidate(&self, theta: &[f64], barrier: &Barrier) -> Result<Candidate> {
        self.validate(theta)?;
        let d = self.template.dim();
        let mut mu = self.template.mu().to_vec();
        let mut nu = self.template.nu_flat().to_vec();
        let mut kernels = self.template.kernels_flat().to_vec();
        let mut inv_lambda: Option<Vec<f64>> = None;
        for (slot, &v) in self.slots.iter().zip(theta) {
            match *slot {
                Slot::Mu(i) => mu[i] = v,
                Slot::InvLambda(i) => inv_lambda.get_or_insert_with(|| vec![f64::NAN; d])[i] = v,
                Slot::Nu(i, j) => nu[i * d + j] = v,
                Slot::Beta(i, j) => {
                    let c = kernels[i * d + j].rate();
                    kernels[i * d + j] = KernelSpec::MittagLeffler { beta: v, c };
                }
                Slot::Rate(i, j) => {
                    kernels[i * d + j] = match kernels[i * d + j] {
                        KernelSpec::Exponential { .. } => KernelSpec::Exponential { c: v },
                        KernelSpec::MittagLeffler { beta, .. } => KernelSpec::MittagLeffler { beta, c: v },
                    };
                }
            }
        }
        let nu_mat = DMatrix::from_row_slice(d, d, &nu);
        let rho = spectral_radius_of(&nu_mat);
        let mut penalty = barrier.kappa * (rho - (1.0 - barrier.eps)).max(0.0).powi(2);
        let lambda = match inv_lambda {
            Some(inv) => {
                let lambda: Vec<f64> = inv.iter().map(|x| 1.0 / x).collect();
                // background rates implied by the intensities
                let implied = (DMatrix::identity(d, d) - &nu_mat) * DVector::from_column_slice(&lambda);
                for (i, m) in implied.iter().enumerate() {
                    mu[i] = *m;
                    penalty += barrier.kappa * (1e-8 - m).max(0.0).powi(2);
                }
                lambda
            }
            None => {
                if rho >= 1.0 {
                    return Err(Error::NonStationary(rho));
                }
                let lu = (DMatrix::identity(d, d) - &nu_mat).lu();
                let sol = lu
                    .solve(&DVector::from_column_slice(&mu))
                    .ok_or_else(|| Error::Numerical("I - nu is singular".into()))?;
                sol.iter().copied().collect()
            }
        };
        if lambda.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::Numerical("non-positive average intensity".into()));
        }
        let model = if mu.iter().all(|m| *m > 0.0) {
            Some(HawkesModel::from_flat(mu, nu.clone(), kernels.clone())?)
        } else {
            None
        };
        Ok(Candidate { spectral: SpectralModel { lambda, nu, kernels }, model, penalty, spectral_radius: rho })
    }

    /// The model at θ; fails when θ implies non-positive background rates.
    pub fn model(&self, theta: &[f64]) -> Result<HawkesModel> {
        self.candidate(theta, &Barrier::default())?
            .model
            .ok_or_else(|| Error::Domain("parameter implies a non-positive background rate".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn par(kind: FamilyKind) -> Parameterization {
        make_parameterization(&FamilyDescriptor::new(kind)).unwrap()
    }

    #[test]
    fn dimensions() {
        assert_eq!(par(FamilyKind::UnivariateMl).dim(), 4);
        assert_eq!(par(FamilyKind::BivariateMl).dim(), 14);
        assert_eq!(par(FamilyKind::UnivariatePoisson).dim(), 1);
        assert_eq!(par(FamilyKind::BivariateMlFh6).dim(), 2);
        assert!("trivariate".parse::<FamilyKind>().is_err());
    }

    #[test]
    fn fh4_round_trip() {
        let p = par(FamilyKind::UnivariateMl);
        let theta = [1.0, 0.5, 0.9, 1.0];
        let back = p.to_constrained(&p.to_unconstrained(&theta).unwrap());
        for (a, b) in theta.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn fh5_theta_layout() {
        let p = par(FamilyKind::BivariateMl);
        let theta = p.theta_of(p.template()).unwrap();
        let want = [
            3.0 / 13.0,
            6.0 / 17.0,
            0.3,
            0.5,
            1.0,
            0.2,
            0.75,
            0.8,
            0.85,
            0.9,
            0.8,
            0.9,
            1.0,
            1.1,
        ];
        for (a, b) in theta.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        let cand = p.candidate(&theta, &Barrier::default()).unwrap();
        let m = cand.model.unwrap();
        assert!((m.mu()[0] - 0.2).abs() < 1e-12 && (m.mu()[1] - 0.1).abs() < 1e-12);
        assert_eq!(cand.penalty, 0.0);
    }

    #[test]
    fn beta_snaps_to_exponential() {
        let p = par(FamilyKind::UnivariateMl);
        let t = p.to_constrained(&[0.0, 0.0, 20.0, 0.0]);
        assert_eq!(t[2], 1.0);
        let u = p.to_unconstrained(&[1.0, 0.5, 1.0, 1.0]).unwrap();
        assert_eq!(p.to_constrained(&u)[2], 1.0);
    }

    #[test]
    fn barrier_activates_near_criticality() {
        let p = par(FamilyKind::UnivariateMl);
        let inside = p.candidate(&[1.0, 0.5, 0.9, 1.0], &Barrier::default()).unwrap();
        assert_eq!(inside.penalty, 0.0);
        let edge = p.candidate(&[1.0, 0.9995, 0.9, 1.0], &Barrier::default()).unwrap();
        assert!(edge.penalty > 0.0);
        assert!(p.candidate(&[1.0, 1.2, 0.9, 1.0], &Barrier::default()).is_err());
    }

    #[test]
    fn negative_implied_background_is_penalized() {
        let p = par(FamilyKind::BivariateMl);
        let mut theta = p.theta_of(p.template()).unwrap();
        // tiny λ₁ with heavy excitation from mark 2 forces μ₁ < 0
        theta[0] = 10.0;
        let cand = p.candidate(&theta, &Barrier::default()).unwrap();
        assert!(cand.model.is_none());
        assert!(cand.penalty > 0.0);
    }

    proptest! {
        #[test]
        fn transform_is_bijective(xs in proptest::collection::vec(-6.0f64..6.0, 14)) {
            let p = par(FamilyKind::BivariateMl);
            let theta = p.to_constrained(&xs);
            p.validate(&theta).unwrap();
            let back = p.to_unconstrained(&theta).unwrap();
            let again = p.to_constrained(&back);
            for (a, b) in theta.iter().zip(&again) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
        }
    }
}
