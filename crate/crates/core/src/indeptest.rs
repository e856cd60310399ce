//! Frequency-zero test of independence between the components of a
//! multivariate point process.
//!
//! The cross-spectrum at zero is estimated by a weighted regression of the
//! real periodogram cross-products on `(1, ω²)` over the lowest `M_T` Fourier
//! frequencies. Under independence (diagonal interactions) the standardized
//! squared off-diagonal intercepts are asymptotically chi-square.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlspecial::regularized_upper_gamma;
use crate::quadrature;
use crate::simulate::EventLog;
use crate::spectral::{finite_fourier, FourierFrame, FourierGrid, MtRule};

/// Symmetric, nonnegative, bounded weight function on `[-1, 1]`.
#[derive(Clone, Copy)]
pub enum WeightKernel {
    /// `K ≡ 1`; the regression reduces to ordinary least squares.
    Flat,
    /// `K(x) = 0.75 (1 − x²)`.
    Epanechnikov,
    Custom { name: &'static str, k: fn(f64) -> f64 },
}

impl fmt::Debug for WeightKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for WeightKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flat" => Ok(WeightKernel::Flat),
            "epanechnikov" => Ok(WeightKernel::Epanechnikov),
            other => Err(Error::Config(format!("unknown weight kernel '{other}' (expected flat or epanechnikov)"))),
        }
    }
}

impl WeightKernel {
    pub fn name(&self) -> &'static str {
        match self {
            WeightKernel::Flat => "flat",
            WeightKernel::Epanechnikov => "epanechnikov",
            WeightKernel::Custom { name, .. } => name,
        }
    }

    /// `K(x)`, zero outside `[-1, 1]`.
    pub fn eval(&self, x: f64) -> f64 {
        if !(-1.0..=1.0).contains(&x) {
            return 0.0;
        }
        match self {
            WeightKernel::Flat => 1.0,
            WeightKernel::Epanechnikov => 0.75 * (1.0 - x * x),
            WeightKernel::Custom { k, .. } => k(x),
        }
    }

    /// `K_δ(ω) = K(ω / 2πδ) / 2πδ`.
    pub fn scaled(&self, delta: f64, omega: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * delta;
        self.eval(omega / w) / w
    }

    /// Checks symmetry, nonnegativity and boundedness on a grid, and that
    /// `∫₀¹ K > 0`.
    pub fn validate(&self) -> Result<()> {
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            let (a, b) = (self.eval(x), self.eval(-x));
            if !a.is_finite() || a < 0.0 {
                return Err(Error::Kernel(format!("{self}: K({x}) = {a} is not a finite nonnegative value")));
            }
            if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                return Err(Error::Kernel(format!("{self}: K is not symmetric at x = {x}")));
            }
        }
        if self.moment(0)? <= 0.0 {
            return Err(Error::Kernel(format!("{self}: ∫₀¹ K must be positive")));
        }
        Ok(())
    }

    /// `H_{2l} = ∫₀¹ K(x) x^{2l} dx`.
    fn moment(&self, l: i32) -> Result<f64> {
        Ok(quadrature::integrate(|x| self.eval(x) * x.powi(2 * l), 0.0, 1.0, 1e-14, 1e-13, 2000)?.value)
    }
}

/// `c_K = ∫₀¹ ((H₄ − H₂x²) K(x) / (H₄H₀ − H₂²))² dx`.
pub fn kernel_constant(k: &WeightKernel) -> Result<f64> {
    k.validate()?;
    let (h0, h2, h4) = (k.moment(0)?, k.moment(1)?, k.moment(2)?);
    let det = h4 * h0 - h2 * h2;
    if det <= 1e-12 * h4 * h0 {
        return Err(Error::Kernel(format!("{k}: H₄H₀ − H₂² = {det:e} is not positive")));
    }
    let integrand = |x: f64| {
        let g = (h4 - h2 * x * x) * k.eval(x) / det;
        g * g
    };
    Ok(quadrature::integrate(integrand, 0.0, 1.0, 1e-10, 1e-12, 2000)?.value)
}

/// Weighted least-squares intercepts of `Re J^u(ω_p) conj(J^v(ω_p))` on
/// `(1, ω_p²)` over the first `m_t` frequencies of the frame, with weights
/// `K_δ(ω_p)`, `δ = m_t / T`. Computed for `u ≤ v` and mirrored.
pub fn intercept_estimates(frame: &FourierFrame, m_t: usize, k: &WeightKernel) -> Result<DMatrix<f64>> {
    let grid = frame.grid();
    if m_t > grid.len() {
        return Err(Error::Shape(format!("M_T = {m_t} exceeds the {} frequencies in the frame", grid.len())));
    }
    if m_t < 3 {
        return Err(Error::Shape(format!("intercept regression needs M_T ≥ 3, got {m_t}")));
    }
    let delta = m_t as f64 / grid.horizon();
    let omega = &grid.omega()[..m_t];
    let w: Vec<f64> = omega.iter().map(|&o| k.scaled(delta, o)).collect();
    let (mut s0, mut s2, mut s4) = (0.0, 0.0, 0.0);
    for (&wp, &o) in w.iter().zip(omega) {
        let o2 = o * o;
        s0 += wp;
        s2 += wp * o2;
        s4 += wp * o2 * o2;
    }
    let det = s0 * s4 - s2 * s2;
    if !(det > 1e-14 * s0 * s4) {
        return Err(Error::Numerical("singular weighted design in the intercept regression".into()));
    }
    let d = frame.dim();
    let mut out = DMatrix::zeros(d, d);
    for u in 0..d {
        for v in u..d {
            let (mut y0, mut y2) = (0.0, 0.0);
            for (p, (&wp, &o)) in w.iter().zip(omega).enumerate() {
                let y = (frame.get(u, p) * frame.get(v, p).conj()).re;
                y0 += wp * y;
                y2 += wp * o * o * y;
            }
            let phi = (s4 * y0 - s2 * y2) / det;
            out[(u, v)] = phi;
            out[(v, u)] = phi;
        }
    }
    Ok(out)
}

/// `M_T (2 / c_K) Σ_{u<v} φ̂_uv² / (φ̂_uu φ̂_vv)` with plug-in diagonals.
pub fn independence_statistic(phi: &DMatrix<f64>, m_t: usize, c_k: f64) -> Result<f64> {
    let diag: Vec<f64> = (0..phi.nrows()).map(|u| phi[(u, u)]).collect();
    independence_statistic_with_diagonal(phi, &diag, m_t, c_k)
}

/// As [`independence_statistic`] with known `f_uu(0)` in the denominators.
pub fn independence_statistic_with_diagonal(phi: &DMatrix<f64>, diag: &[f64], m_t: usize, c_k: f64) -> Result<f64> {
    let d = phi.nrows();
    if phi.ncols() != d || diag.len() != d {
        return Err(Error::Shape("intercept matrix must be square and match the diagonal".into()));
    }
    if !(c_k > 0.0) {
        return Err(Error::Kernel(format!("kernel constant must be positive, got {c_k}")));
    }
    if let Some(u) = diag.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::Data(format!(
            "non-positive zero-frequency spectrum estimate for mark {} ({}); too few events or frequencies",
            u + 1,
            diag[u]
        )));
    }
    let mut sum = 0.0;
    for u in 0..d {
        for v in u + 1..d {
            sum += phi[(u, v)].powi(2) / (diag[u] * diag[v]);
        }
    }
    Ok(m_t as f64 * 2.0 / c_k * sum)
}

/// Upper tail of the chi-square distribution with `k` degrees of freedom.
pub fn chi_square_sf(x: f64, k: usize) -> f64 {
    assert!(k >= 1, "chi-square needs at least one degree of freedom");
    regularized_upper_gamma(k as f64 / 2.0, x.max(0.0) / 2.0)
}

/// Outcome of one independence test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub kernel: String,
    pub m_t: usize,
    pub delta_t: f64,
    pub c_k: f64,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Rows of the symmetric intercept matrix.
    pub phi_hat: Vec<Vec<f64>>,
}

impl IndependenceReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize report: {e}")))
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Runs the full test on a log: Fourier transform, intercepts, statistic, p-value.
pub fn run_independence_test(log: &EventLog, rule: MtRule, k: &WeightKernel) -> Result<IndependenceReport> {
    let d = log.dim();
    if d < 2 {
        return Err(Error::Shape(format!("need D ≥ 2 for an independence test, got D = {d}")));
    }
    let grid = FourierGrid::from_rule(log.horizon(), rule)?;
    let frame = finite_fourier(log, &grid)?;
    test_frame(&frame, grid.len(), k)
}

/// The test on a precomputed frame, using its first `m_t` frequencies.
pub fn test_frame(frame: &FourierFrame, m_t: usize, k: &WeightKernel) -> Result<IndependenceReport> {
    let d = frame.dim();
    if d < 2 {
        return Err(Error::Shape(format!("need D ≥ 2 for an independence test, got D = {d}")));
    }
    let c_k = kernel_constant(k)?;
    let phi = intercept_estimates(frame, m_t, k)?;
    let statistic = independence_statistic(&phi, m_t, c_k)?;
    let df = d * (d - 1) / 2;
    Ok(IndependenceReport {
        kernel: k.name().to_string(),
        m_t,
        delta_t: m_t as f64 / frame.grid().horizon(),
        c_k,
        statistic,
        df,
        p_value: chi_square_sf(statistic, df),
        phi_hat: phi.row_iter().map(|r| r.iter().copied().collect()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{bartlett_spectral_matrix, HawkesModel, KernelSpec};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame_from(horizon: f64, cols: &[Vec<Complex64>]) -> FourierFrame {
        let m = cols[0].len();
        let d = cols.len();
        let grid = FourierGrid::new(horizon, m).unwrap();
        let values = (0..m).flat_map(|p| cols.iter().map(move |c| c[p])).collect();
        FourierFrame::from_values(grid, d, values).unwrap()
    }

    fn omegas(horizon: f64, m: usize) -> Vec<f64> {
        FourierGrid::new(horizon, m).unwrap().omega().to_vec()
    }

    #[test]
    fn kernels_are_valid() {
        for k in [WeightKernel::Flat, WeightKernel::Epanechnikov] {
            k.validate().unwrap();
            for i in 0..50 {
                let x = i as f64 / 49.0;
                assert_eq!(k.eval(x), k.eval(-x));
            }
            assert_eq!(k.eval(1.5), 0.0);
        }
        let skew = WeightKernel::Custom { name: "skew", k: |x| 1.0 + 0.5 * x };
        assert!(matches!(skew.validate(), Err(Error::Kernel(_))));
        let zero = WeightKernel::Custom { name: "zero", k: |_| 0.0 };
        assert!(matches!(kernel_constant(&zero), Err(Error::Kernel(_))));
        assert_eq!("Flat".parse::<WeightKernel>().unwrap().name(), "flat");
        assert!("gauss".parse::<WeightKernel>().is_err());
    }

    #[test]
    fn flat_kernel_constant_is_nine_quarters() {
        assert!((kernel_constant(&WeightKernel::Flat).unwrap() - 2.25).abs() < 1e-10);
        let doubled = WeightKernel::Custom { name: "two", k: |_| 2.0 };
        assert!((kernel_constant(&doubled).unwrap() - 2.25).abs() < 1e-10);
    }

    #[test]
    fn epanechnikov_constant_matches_simpson() {
        // composite Simpson as an independent rule
        let k = |x: f64| 0.75 * (1.0 - x * x);
        let simpson = |f: &dyn Fn(f64) -> f64| {
            let n = 20_000;
            let h = 1.0 / n as f64;
            let mut s = f(0.0) + f(1.0);
            for i in 1..n {
                s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let h0 = simpson(&|x| k(x));
        let h2 = simpson(&|x| k(x) * x * x);
        let h4 = simpson(&|x| k(x) * x.powi(4));
        let det = h4 * h0 - h2 * h2;
        let oracle = simpson(&|x| ((h4 - h2 * x * x) * k(x) / det).powi(2));
        let got = kernel_constant(&WeightKernel::Epanechnikov).unwrap();
        assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
    }

    #[test]
    fn exact_fits_recover_intercept() {
        let horizon = 200.0;
        let m = 40;
        let constant = vec![Complex64::new(3.0f64.sqrt(), 0.0); m];
        let f = frame_from(horizon, &[constant]);
        for k in [WeightKernel::Flat, WeightKernel::Epanechnikov] {
            assert!((intercept_estimates(&f, m, &k).unwrap()[(0, 0)] - 3.0).abs() < 1e-12);
        }
        let quad: Vec<Complex64> =
            omegas(horizon, m).iter().map(|o| Complex64::new((2.0 + 3.0 * o * o).sqrt(), 0.0)).collect();
        let f = frame_from(horizon, &[quad]);
        for k in [WeightKernel::Flat, WeightKernel::Epanechnikov] {
            assert!((intercept_estimates(&f, m, &k).unwrap()[(0, 0)] - 2.0).abs() < 1e-10);
        }
        assert!(intercept_estimates(&f, 2, &WeightKernel::Flat).is_err());
        assert!(intercept_estimates(&f, m + 1, &WeightKernel::Flat).is_err());
    }

    #[test]
    fn flat_kernel_is_ordinary_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let horizon = 300.0;
        let m = 60;
        let cols: Vec<Vec<Complex64>> = (0..3)
            .map(|_| (0..m).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect())
            .collect();
        let f = frame_from(horizon, &cols);
        let phi = intercept_estimates(&f, m, &WeightKernel::Flat).unwrap();
        let om = omegas(horizon, m);
        let x = DMatrix::from_fn(m, 2, |p, j| if j == 0 { 1.0 } else { om[p] * om[p] });
        for u in 0..3 {
            for v in 0..3 {
                let y = nalgebra::DVector::from_fn(m, |p, _| (cols[u][p] * cols[v][p].conj()).re);
                let beta = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
                assert!((phi[(u, v)] - beta[0]).abs() < 1e-12, "({u},{v})");
            }
        }
    }

    #[test]
    fn statistic_examples() {
        let phi = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 3.0]);
        let s = independence_statistic(&phi, 100, 2.25).unwrap();
        assert!((s - 100.0 * (8.0 / 9.0) * (0.01 / 6.0)).abs() < 1e-12);
        assert!((s - 0.148_148).abs() < 1e-5);
        assert!((independence_statistic(&(&phi * 7.5), 100, 2.25).unwrap() - s).abs() < 1e-12);
        let diag = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 4.0]);
        assert_eq!(independence_statistic(&diag, 50, 2.25).unwrap(), 0.0);
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.1, 3.0]);
        assert!(matches!(independence_statistic(&bad, 100, 2.25), Err(Error::Data(_))));
        let known = independence_statistic_with_diagonal(&phi, &[1.0, 1.0], 100, 2.25).unwrap();
        assert!((known - 100.0 * (2.0 / 2.25) * 0.01).abs() < 1e-12);
    }

    #[test]
    fn chi_square_tail() {
        assert_eq!(chi_square_sf(0.0, 1), 1.0);
        assert!((chi_square_sf(3.841459, 1) - 0.05).abs() < 1e-6);
        assert!((chi_square_sf(5.991465, 2) - 0.05).abs() < 1e-6);
        assert!((chi_square_sf(4.0, 2) - (-2.0f64).exp()).abs() < 1e-12);
        let mut last = 1.0;
        for i in 1..100 {
            let v = chi_square_sf(i as f64 * 0.3, 3);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn chi_square_one_df_matches_density_quadrature() {
        let x: f64 = 3.841459;
        let density = |t: f64| (-t / 2.0).exp() / (2.0 * std::f64::consts::PI * t).sqrt();
        // substitute t = s² to remove the endpoint singularity
        let cdf = quadrature::integrate(|s| 2.0 * s * density(s * s), 0.0, x.sqrt(), 1e-14, 1e-13, 200)
            .unwrap()
            .value;
        assert!((chi_square_sf(x, 1) - (1.0 - cdf)).abs() < 1e-10);
    }

    fn fh6(a: f64, b: f64) -> HawkesModel {
        let ml = |beta, c| KernelSpec::mittag_leffler(beta, c).unwrap();
        HawkesModel::new(
            vec![0.5, 0.5],
            vec![vec![0.5, a], vec![b, 0.5]],
            vec![vec![ml(1.0, 1.0), ml(0.9, 1.1)], vec![ml(0.8, 0.9), ml(1.0, 1.0)]],
        )
        .unwrap()
    }

    #[test]
    fn fh6_zero_frequency_cross_spectrum() {
        let grid = [0.0, 0.1, 0.2, 0.3];
        for &b in &grid {
            let mut last = -1.0;
            for &a in &grid {
                let f = bartlett_spectral_matrix(&fh6(a, b), 0.0).unwrap().values;
                let closed = (a * b / 2.0 + (a + b) / 8.0) / (0.25 - a * b).powi(3);
                assert!((f[(0, 1)].re - closed).abs() < 1e-10 * closed.max(1.0), "a={a} b={b}");
                assert!(f[(0, 1)].im.abs() < 1e-12);
                assert!((f[(1, 0)] - f[(0, 1)]).norm() < 1e-12);
                assert!(f[(0, 1)].re > last);
                last = f[(0, 1)].re;
            }
        }
        let f = bartlett_spectral_matrix(&fh6(0.0, 0.0), 0.0).unwrap().values;
        assert_eq!(f[(0, 1)].norm(), 0.0);
    }

    #[test]
    fn diagonal_solution_of_second_order_equation() {
        // (I − ν)⁻¹ Λ (I − ν)⁻ᵀ = D with diagonal Λ ≤ D is solved by
        // ν = I − Λ^{1/2} D^{−1/2}
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let d = rng.gen_range(2..=4);
            let dd: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..5.0)).collect();
            let ll: Vec<f64> = dd.iter().map(|&x| x * rng.gen_range(0.01..1.0)).collect();
            let nu = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 - (ll[i] / dd[i]).sqrt() } else { 0.0 });
            assert!(nu.iter().all(|&x| x >= 0.0));
            assert!(nu.diagonal().iter().all(|&x| x < 1.0));
            let inv = (DMatrix::identity(d, d) - &nu).try_inverse().unwrap();
            let lhs = &inv * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(ll.clone())) * inv.transpose();
            for i in 0..d {
                for j in 0..d {
                    let want = if i == j { dd[i] } else { 0.0 };
                    assert!((lhs[(i, j)] - want).abs() < 1e-10 * dd[i].max(1.0));
                }
            }
        }
    }

    #[test]
    fn report_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cols: Vec<Vec<Complex64>> =
            (0..2).map(|_| (0..30).map(|_| Complex64::new(rng.gen(), rng.gen())).collect()).collect();
        let f = frame_from(100.0, &cols);
        let r = test_frame(&f, 30, &WeightKernel::Flat).unwrap();
        assert_eq!(r.df, 1);
        assert!((0.0..=1.0).contains(&r.p_value));
        assert!((r.delta_t - 0.3).abs() < 1e-15);
        let back: IndependenceReport = toml::from_str(&r.to_toml().unwrap()).unwrap();
        assert_eq!(back, r);
        let uni = frame_from(100.0, &cols[..1]);
        assert!(matches!(test_frame(&uni, 30, &WeightKernel::Flat), Err(Error::Shape(_))));
    }
}
