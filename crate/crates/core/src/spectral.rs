//! Finite Fourier transform of event data on the Fourier grid
//! `omega_p = 2 pi p / T`, periodogram cross-products and the spectral
//! empirical process.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::EventLog;

/// Frequencies evaluated per work unit. Phases are re-anchored with a
/// fresh trigonometric evaluation at the start of every block.
const BLOCK: usize = 512;

/// Rule choosing the number of Fourier frequencies from the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MtRule {
    Fixed(usize),
    /// `floor(2T)`
    TwoT,
    /// `floor(T log T)`
    TLogT,
    /// `floor(k sqrt(T))`
    SqrtT(f64),
}

impl MtRule {
    pub fn count(&self, horizon: f64) -> usize {
        match *self {
            MtRule::Fixed(n) => n,
            MtRule::TwoT => (2.0 * horizon).floor() as usize,
            MtRule::TLogT => (horizon * horizon.ln()).floor() as usize,
            MtRule::SqrtT(k) => (k * horizon.sqrt()).floor() as usize,
        }
    }
}

impl fmt::Display for MtRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MtRule::Fixed(n) => write!(f, "{n}"),
            MtRule::TwoT => write!(f, "2T"),
            MtRule::TLogT => write!(f, "TlogT"),
            MtRule::SqrtT(k) => write!(f, "{k}sqrtT"),
        }
    }
}

impl FromStr for MtRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().replace(['_', ' ', '*'], "").to_ascii_lowercase();
        match t.as_str() {
            "2t" => return Ok(MtRule::TwoT),
            "tlogt" => return Ok(MtRule::TLogT),
            _ => {}
        }
        if let Some(k) = t.strip_suffix("sqrtt") {
            let k = if k.is_empty() { 1.0 } else { k.parse().map_err(|_| Error::Config(format!("bad M_T rule `{s}`")))? };
            if !(k > 0.0) {
                return Err(Error::Config(format!("bad M_T rule `{s}`")));
            }
            return Ok(MtRule::SqrtT(k));
        }
        match t.parse::<usize>() {
            Ok(n) if n > 0 => Ok(MtRule::Fixed(n)),
            _ => Err(Error::Config(format!("unknown M_T rule `{s}` (use an integer, 2T, TlogT or <k>sqrtT)"))),
        }
    }
}

impl TryFrom<String> for MtRule {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MtRule> for String {
    fn from(r: MtRule) -> String {
        r.to_string()
    }
}

/// Fourier frequencies `2 pi p / T`, `p = 1..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierGrid {
    horizon: f64,
    omega: Vec<f64>,
}

impl FourierGrid {
    pub fn new(horizon: f64, count: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        if count == 0 {
            return Err(Error::Domain("need at least one Fourier frequency".into()));
        }
        let step = 2.0 * std::f64::consts::PI / horizon;
        Ok(Self { horizon, omega: (1..=count).map(|p| step * p as f64).collect() })
    }

    pub fn from_rule(horizon: f64, rule: MtRule) -> Result<Self> {
        Self::new(horizon, rule.count(horizon))
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }
}

/// `J_T^j(omega_p)` for every mark and grid frequency.
#[derive(Debug, Clone)]
pub struct FourierFrame {
    grid: FourierGrid,
    dim: usize,
    // frequency-major: values[k * dim + j]
    values: Vec<Complex64>,
}

impl FourierFrame {
    pub fn grid(&self) -> &FourierGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Transform vector at the `k`-th grid frequency (0-based).
    pub fn column(&self, k: usize) -> &[Complex64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn get(&self, mark: usize, k: usize) -> Complex64 {
        self.values[k * self.dim + mark]
    }

    /// Builds a frame from explicit values, frequency-major.
    pub fn from_values(grid: FourierGrid, dim: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() * dim {
            return Err(Error::Shape(format!("expected {} values, got {}", grid.len() * dim, values.len())));
        }
        Ok(Self { grid, dim, values })
    }

    /// Writes `p,omega,mark,re,im` rows (1-based `p` and mark).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "p,omega,mark,re,im")?;
        for (k, &om) in self.grid.omega.iter().enumerate() {
            for (j, z) in self.column(k).iter().enumerate() {
                writeln!(w, "{},{:.12e},{},{:.12e},{:.12e}", k + 1, om, j + 1, z.re, z.im)?;
            }
        }
        Ok(())
    }
}

/// Finite Fourier transform `J^j(omega) = T^{-1/2} sum_{t in mark j} e^{-i omega t}`.
pub fn finite_fourier(log: &EventLog, grid: &FourierGrid) -> Result<FourierFrame> {
    if log.horizon() != grid.horizon() {
        return Err(Error::Shape(format!(
            "log horizon {} differs from grid horizon {}",
            log.horizon(),
            grid.horizon()
        )));
    }
    let d = log.dim();
    let m = grid.len();
    let scale = grid.horizon().sqrt().recip();
    let base = 2.0 * std::f64::consts::PI / grid.horizon();
    let steps: Vec<Complex64> = log.times().iter().map(|&t| Complex64::from_polar(1.0, -base * t)).collect();
    let mut values = vec![Complex64::new(0.0, 0.0); m * d];
    values.par_chunks_mut(BLOCK * d).enumerate().for_each(|(b, out)| {
        let p0 = b * BLOCK + 1;
        let len = out.len() / d;
        for ((&t, &mark), &step) in log.times().iter().zip(log.marks()).zip(&steps) {
            let mut z = Complex64::from_polar(1.0, -base * p0 as f64 * t);
            for k in 0..len {
                out[k * d + mark] += z;
                z *= step;
            }
        }
        for v in out.iter_mut() {
            *v *= scale;
        }
    });
    Ok(FourierFrame { grid: grid.clone(), dim: d, values })
}

/// Checks that `phi` is Hermitian to a relative tolerance.
pub(crate) fn check_hermitian(phi: &DMatrix<Complex64>, tol: f64) -> Result<()> {
    let n = phi.nrows();
    if phi.ncols() != n {
        return Err(Error::Shape("weight matrix is not square".into()));
    }
    let scale = phi.iter().map(|z| z.norm()).fold(1.0, f64::max);
    for i in 0..n {
        for j in 0..=i {
            if (phi[(i, j)] - phi[(j, i)].conj()).norm() > tol * scale {
                return Err(Error::Contract(format!("weight matrix not Hermitian at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// `J^H phi J` for one transform vector.
pub(crate) fn quadratic_form(phi: &DMatrix<Complex64>, j: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (a, ja) in j.iter().enumerate() {
        let mut row = Complex64::new(0.0, 0.0);
        for (b, jb) in j.iter().enumerate() {
            row += phi[(a, b)] * jb;
        }
        acc += ja.conj() * row;
    }
    acc
}

/// Spectral empirical process `A_T(phi) = T^{-1} sum_p J^H phi(omega_p) J`.
pub fn spectral_empirical<F>(frame: &FourierFrame, phi: F) -> Result<f64>
where
    F: Fn(f64) -> Result<DMatrix<Complex64>>,
{
    let d = frame.dim;
    let mut total = Complex64::new(0.0, 0.0);
    let mut magnitude = 0.0;
    for (k, &om) in frame.grid.omega.iter().enumerate() {
        let w = phi(om)?;
        if w.nrows() != d {
            return Err(Error::Shape(format!("weight is {}x{}, frame has {d} marks", w.nrows(), w.ncols())));
        }
        check_hermitian(&w, 1e-10)?;
        let q = quadratic_form(&w, frame.column(k));
        magnitude += q.norm();
        total += q;
    }
    if total.im.abs() > 1e-10 * magnitude.max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!("quadratic form has imaginary part {:e}", total.im)));
    }
    Ok(total.re / frame.grid.horizon)
}

/// `J^u(omega_k) conj(J^v(omega_k))` at the `k`-th grid frequency (0-based).
pub fn periodogram_cross(frame: &FourierFrame, k: usize, u: usize, v: usize) -> Result<Complex64> {
    if k >= frame.grid.len() || u >= frame.dim || v >= frame.dim {
        return Err(Error::Shape(format!("index ({k}, {u}, {v}) out of range")));
    }
    Ok(frame.get(u, k) * frame.get(v, k).conj())
}
