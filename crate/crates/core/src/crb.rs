//! Fisher information and Cramér-Rao bounds for `(h, θ)`.
//!
//! The exact FIM is assembled from the block model with the full `C⁻¹`; the
//! asymptotic bounds replace every Toeplitz quadratic form by its symbol
//! evaluated at the training frequency and the trace term by an integral over
//! the unit circle.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use std::f64::consts::TAU;

use crate::error::{invalid, Error, Result};
use crate::estimator::{check_domain, colored_noise_weight, covariance};
use crate::linalg::{dot, product_adjoint, trace_zazb};
use crate::model::{build_b_theta, build_h_theta, compute_alpha, SystemParams};
use crate::quadrature::mean_over_circle_checked;

/// `|θ|^L` above this makes the infinite-tap symbols a poor model of `H_θ`.
pub const TRUNCATION_WARN: f64 = 1e-3;

/// Hermitian positive semi-definite Fisher information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    entries: DMatrix<Complex64>,
}

impl FisherMatrix {
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(invalid("Fisher matrix must be square and non-empty"));
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("Fisher matrix rows must all have the matrix dimension"));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[(i, j)]
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    /// Largest `|Γ_ij − Γ_ji*|`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.entries + self.entries.adjoint()).map(|v| v * 0.5);
        SymmetricEigen::new(herm).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn inverse(&self) -> Result<DMatrix<Complex64>> {
        self.entries.clone().try_inverse().ok_or(Error::Singular("Fisher information matrix"))
    }

    /// Diagonal of `Γ⁻¹`: one bound per parameter.
    pub fn crb_diagonal(&self) -> Result<Vec<f64>> {
        let inv = self.inverse()?;
        let diag: Vec<f64> = (0..self.dim()).map(|i| inv[(i, i)].re).collect();
        if diag.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Singular("Fisher information matrix"));
        }
        Ok(diag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CrbResult {
    pub crb_h: f64,
    pub crb_theta: f64,
}

/// `CRB_h = Γ₂₂/|Γ|`, `CRB_θ = Γ₁₁/|Γ|` for a 2×2 FIM.
pub fn crb_exact(fim: &FisherMatrix) -> Result<CrbResult> {
    if fim.dim() != 2 {
        return Err(invalid(format!("crb_exact needs a 2x2 FIM, got {}x{}", fim.dim(), fim.dim())));
    }
    let (g11, g22) = (fim.get(0, 0).re, fim.get(1, 1).re);
    let det = g11 * g22 - (fim.get(0, 1) * fim.get(1, 0)).re;
    if !(det > 1e-14 * (g11 * g22).abs()) || !det.is_finite() {
        return Err(Error::Singular("Fisher information matrix"));
    }
    Ok(CrbResult { crb_h: g22 / det, crb_theta: g11 / det })
}

/// Exact FIM of `(h, θ)` for training `x`, with `α` from `params`.
pub fn fim_exact(h: Complex64, theta: Complex64, x: &[Complex64], params: &SystemParams) -> Result<FisherMatrix> {
    fim_exact_with_alpha(h, theta, x, compute_alpha(params)?, params)
}

pub fn fim_exact_with_alpha(
    h: Complex64,
    theta: Complex64,
    x: &[Complex64],
    alpha: f64,
    params: &SystemParams,
) -> Result<FisherMatrix> {
    let n = x.len();
    if n == 0 {
        return Err(invalid("training sequence is empty"));
    }
    let l = params.l.min(n);
    let chol = covariance(theta, alpha, params, n, l)?.cholesky()?;
    let h_op = build_h_theta(theta, l, n);
    let b_op = build_b_theta(theta, l, n);
    let hx = h_op.matvec(x);
    let bx = b_op.matvec(x);
    let c_hx = chol.solve(&hx);
    let c_bx = chol.solve(&bx);
    let kappa = colored_noise_weight(alpha, params);

    let g11 = dot(&hx, &c_hx).re;
    let g12 = h * dot(&c_hx, &bx);
    let z = chol.inverse_dense();
    let hb = product_adjoint(&h_op, &b_op);
    let bh = product_adjoint(&b_op, &h_op);
    let trace = trace_zazb(&z, &hb, &bh, l).re;
    let g22 = h.norm_sqr() * dot(&bx, &c_bx).re + kappa * kappa * trace;
    FisherMatrix::from_rows(&[
        vec![Complex64::new(g11, 0.0), g12],
        vec![g12.conj(), Complex64::new(g22, 0.0)],
    ])
}

/// `t(λ) = 1/(1−θe^{jλ})` and its `θ`-derivative `g(λ) = e^{jλ}/(1−θe^{jλ})²`.
pub fn symbol_t_g(theta: Complex64, lambda: f64) -> (Complex64, Complex64) {
    let e = Complex64::from_polar(1.0, lambda);
    let w = Complex64::new(1.0, 0.0) - theta * e;
    let t = w.inv();
    (t, e * t * t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSymbols {
    /// In `[0, 2π)`.
    pub lambda: f64,
    pub t: Complex64,
    pub g: Complex64,
    /// `Re(t*·g)`.
    pub p: f64,
    /// Closed-form trace coefficient `1/(P_s(1−|θ|²))`.
    pub a: f64,
}

pub fn spectral_symbols(theta: Complex64, lambda: f64, p_s: f64) -> Result<SpectralSymbols> {
    check_domain(theta)?;
    let lambda = lambda.rem_euclid(TAU);
    let (t, g) = symbol_t_g(theta, lambda);
    Ok(SpectralSymbols { lambda, t, g, p: (t.conj() * g).re, a: 1.0 / (p_s * (1.0 - theta.norm_sqr())) })
}

/// `|θ|^L`, the tail the asymptotic symbols ignore.
pub fn truncation_residual(theta: Complex64, l: usize) -> f64 {
    theta.norm().powi(l as i32)
}

pub fn truncation_warning(theta: Complex64, l: usize) -> Option<String> {
    let r = truncation_residual(theta, l);
    (r > TRUNCATION_WARN).then(|| format!("|theta|^L = {r:.2e} exceeds {TRUNCATION_WARN:e}; asymptotic bounds assume a negligible tail"))
}

/// Both evaluations of the RSI trace integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceIntegral {
    pub quadrature: f64,
    pub closed_form: f64,
    /// False when `α² < 10`, where the closed form is not expected to hold.
    pub high_gain: bool,
}

/// `(1/2π)∫ dλ / (u(α²+u)²)` with `u = |1−θe^{jλ}|²`, and its high-gain
/// approximation `α⁻⁴/(1−|θ|²)`.
pub fn rsi_trace_integral(theta: Complex64, alpha: f64) -> Result<TraceIntegral> {
    trace_integral(theta, alpha * alpha, 1.0).map(|mut ti| {
        ti.high_gain = alpha * alpha >= 10.0;
        ti
    })
}

/// `(1/2π)∫ dλ / (u(κ+σ_d²u)²)` and `κ⁻²/(1−|θ|²)`.
pub(crate) fn trace_integral(theta: Complex64, kappa: f64, var_nd: f64) -> Result<TraceIntegral> {
    check_domain(theta)?;
    let quadrature = mean_over_circle_checked(|lambda| {
        let u = (Complex64::new(1.0, 0.0) - theta * Complex64::from_polar(1.0, lambda)).norm_sqr();
        1.0 / (u * (kappa + var_nd * u).powi(2))
    })?;
    let closed_form = 1.0 / (kappa * kappa * (1.0 - theta.norm_sqr()));
    Ok(TraceIntegral { quadrature, closed_form, high_gain: kappa >= 10.0 * var_nd })
}

/// Which value of the trace integral feeds the coefficient `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    #[default]
    ClosedForm,
    Quadrature,
}

/// Channel point and noise levels for the asymptotic bounds.
///
/// `S(λ) = κ|t|² + σ_d²` with `κ = α²σ_rd²σ_r²`, and `A = κ²·I/P_s` where `I` is
/// the trace integral; with the closed form `A = 1/(P_s(1−|θ|²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticSetup {
    pub h: Complex64,
    pub theta: Complex64,
    pub p_s: f64,
    pub kappa: f64,
    pub var_nd: f64,
    a: f64,
}

impl AsymptoticSetup {
    /// Unit noise variances, closed-form `A`.
    pub fn new(h: Complex64, theta: Complex64, alpha: f64, p_s: f64) -> Result<Self> {
        Self::general(h, theta, p_s, alpha * alpha, 1.0, TraceMode::ClosedForm)
    }

    pub fn from_params(h: Complex64, theta: Complex64, params: &SystemParams, mode: TraceMode) -> Result<Self> {
        let alpha = compute_alpha(params)?;
        Self::general(h, theta, params.p_s, colored_noise_weight(alpha, params), params.var_nd, mode)
    }

    pub fn general(h: Complex64, theta: Complex64, p_s: f64, kappa: f64, var_nd: f64, mode: TraceMode) -> Result<Self> {
        if !(p_s > 0.0) || !(kappa > 0.0) || !(var_nd > 0.0) {
            return Err(invalid("P_s, κ and σ_d² must be positive"));
        }
        check_domain(theta)?;
        let integral = match mode {
            TraceMode::ClosedForm => 1.0 / (kappa * kappa * (1.0 - theta.norm_sqr())),
            TraceMode::Quadrature => trace_integral(theta, kappa, var_nd)?.quadrature,
        };
        Ok(Self { h, theta, p_s, kappa, var_nd, a: kappa * kappa * integral / p_s })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    fn parts(&self, lambda: f64) -> (f64, f64, f64, f64) {
        let (t, g) = symbol_t_g(self.theta, lambda);
        let t2 = t.norm_sqr();
        let s = self.kappa * t2 + self.var_nd;
        let h2 = self.h.norm_sqr();
        let p = (t.conj() * g).re;
        let denom = h2 * t2 * g.norm_sqr() + self.a * t2 * s - h2 * p * p;
        (t2, g.norm_sqr(), s, denom)
    }

    /// `F(λ)`: `CRB_θ·‖x‖²` for a sinusoid at `λ`.
    pub fn f_theta(&self, lambda: f64) -> f64 {
        let (t2, _, s, denom) = self.parts(lambda);
        t2 * s / denom
    }

    /// `CRB_h·‖x‖²` for a sinusoid at `λ`.
    pub fn f_h(&self, lambda: f64) -> f64 {
        let (_, g2, s, denom) = self.parts(lambda);
        (self.h.norm_sqr() * g2 * s + self.a * s * s) / denom
    }

    pub fn crb(&self, lambda: f64, x_norm_sq: f64) -> CrbResult {
        CrbResult { crb_h: self.f_h(lambda) / x_norm_sq, crb_theta: self.f_theta(lambda) / x_norm_sq }
    }

    /// Asymptotic bounds for arbitrary training, weighting the symbols by the
    /// periodogram of `x` on the `N`-point frequency grid.
    pub fn crb_for_training(&self, x: &[Complex64]) -> Result<CrbResult> {
        if x.is_empty() {
            return Err(invalid("training sequence is empty"));
        }
        self.crb_for_periodogram(&periodogram(x))
    }

    /// As [`Self::crb_for_training`], from the periodogram `|X(2πk/N)|²/N`.
    /// The weights sum to `‖x‖²`.
    pub fn crb_for_periodogram(&self, weights: &[f64]) -> Result<CrbResult> {
        let n = weights.len();
        if n == 0 {
            return Err(invalid("training sequence is empty"));
        }
        let energy: f64 = weights.iter().sum();
        let (mut g11, mut g22, mut g12) = (0.0, 0.0, 0.0);
        for (k, &w) in weights.iter().enumerate() {
            let (t, g) = symbol_t_g(self.theta, TAU * k as f64 / n as f64);
            let s = self.kappa * t.norm_sqr() + self.var_nd;
            g11 += w * t.norm_sqr() / s;
            g22 += w * g.norm_sqr() / s;
            g12 += w * (t.conj() * g).re / s;
        }
        let h2 = self.h.norm_sqr();
        let g22 = h2 * g22 + energy * self.a;
        let det = g11 * g22 - h2 * g12 * g12;
        if !(det > 0.0) {
            return Err(Error::Singular("asymptotic Fisher information"));
        }
        Ok(CrbResult { crb_h: g22 / det, crb_theta: g11 / det })
    }
}

/// `|Σ_m x_m e^{jλm}|²/N` at `λ = 2πk/N`.
pub fn periodogram(x: &[Complex64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let lambda = TAU * k as f64 / n as f64;
            let coeff: Complex64 = x.iter().enumerate().map(|(m, v)| v * Complex64::from_polar(1.0, lambda * m as f64)).sum();
            coeff.norm_sqr() / n as f64
        })
        .collect()
}

/// `F(λ)/‖x‖²` with unit noise variances and closed-form `A`.
pub fn crb_theta_asymptotic(h: Complex64, theta: Complex64, alpha: f64, p_s: f64, lambda: f64, x_norm_sq: f64) -> Result<f64> {
    Ok(AsymptoticSetup::new(h, theta, alpha, p_s)?.f_theta(lambda) / x_norm_sq)
}

pub fn crb_h_asymptotic(h: Complex64, theta: Complex64, alpha: f64, p_s: f64, lambda: f64, x_norm_sq: f64) -> Result<f64> {
    Ok(AsymptoticSetup::new(h, theta, alpha, p_s)?.f_h(lambda) / x_norm_sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::BandedToeplitz;
    use crate::model::geometric_taps;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sinusoid(lambda: f64, n: usize, p_s: f64) -> Vec<Complex64> {
        (0..n).map(|k| Complex64::from_polar(p_s.sqrt(), -lambda * k as f64)).collect()
    }

    fn random_x(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()
    }

    #[test]
    fn fim_theta_zero_single_tap() {
        let params = SystemParams { l: 1, ..Default::default() };
        let alpha = compute_alpha(&params).unwrap();
        let x = random_x(&mut ChaCha8Rng::seed_from_u64(1), 16);
        let fim = fim_exact(c(0.4, 0.2), c(0.0, 0.0), &x, &params).unwrap();
        let energy: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let expected = energy / (alpha * alpha + 1.0);
        assert!((fim.get(0, 0).re - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn fim_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = SystemParams { l: 4, var_rd: 1.3, var_nd: 0.7, ..Default::default() };
        let alpha = compute_alpha(&params).unwrap();
        let (h, theta, n) = (c(0.3, -0.8), c(0.25, 0.35), 12);
        let x = random_x(&mut rng, n);
        let fim = fim_exact(h, theta, &x, &params).unwrap();

        let to_na = |t: &BandedToeplitz| DMatrix::from_fn(n, n, |i, j| t.get(i, j));
        let hm = to_na(&build_h_theta(theta, 4, n));
        let bm = to_na(&build_b_theta(theta, 4, n));
        let kappa = colored_noise_weight(alpha, &params);
        let cm = (&hm * hm.adjoint()).map(|v| v * kappa) + DMatrix::identity(n, n).map(|v: Complex64| v * params.var_nd);
        let ci = cm.try_inverse().unwrap();
        let xv = nalgebra::DVector::from_vec(x.clone());
        let hx = &hm * &xv;
        let bx = &bm * &xv;
        let g11 = (hx.adjoint() * &ci * &hx)[(0, 0)].re;
        let g12 = h * (hx.adjoint() * &ci * &bx)[(0, 0)];
        let tr = (&ci * &hm * bm.adjoint() * &ci * &bm * hm.adjoint()).trace().re;
        let g22 = h.norm_sqr() * (bx.adjoint() * &ci * &bx)[(0, 0)].re + kappa * kappa * tr;
        assert!((fim.get(0, 0).re - g11).abs() < 1e-10 * g11);
        assert!((fim.get(0, 1) - g12).norm() < 1e-10 * g12.norm());
        assert!((fim.get(1, 1).re - g22).abs() < 1e-10 * g22);
        assert_eq!(fim.get(1, 0), fim.get(0, 1).conj());
        assert!(fim.min_eigenvalue() > 0.0);
    }

    #[test]
    fn crb_hand_inversions() {
        let diag = FisherMatrix::from_rows(&[vec![c(4.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(0.5, 0.0)]]).unwrap();
        let r = crb_exact(&diag).unwrap();
        assert!((r.crb_h - 0.25).abs() < 1e-15 && (r.crb_theta - 2.0).abs() < 1e-15);
        let m = FisherMatrix::from_rows(&[vec![c(2.0, 0.0), c(1.0, 0.0)], vec![c(1.0, 0.0), c(2.0, 0.0)]]).unwrap();
        let r = crb_exact(&m).unwrap();
        assert!((r.crb_h - 2.0 / 3.0).abs() < 1e-15 && (r.crb_theta - 2.0 / 3.0).abs() < 1e-15);
        let singular = FisherMatrix::from_rows(&[vec![c(1.0, 0.0), c(1.0, 0.0)], vec![c(1.0, 0.0), c(1.0, 0.0)]]).unwrap();
        assert!(matches!(crb_exact(&singular), Err(Error::Singular(_))));
    }

    #[test]
    fn crb_trace_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = DMatrix::from_fn(2, 3, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let fim = FisherMatrix::new(&a * a.adjoint()).unwrap();
            let r = crb_exact(&fim).unwrap();
            let inv = fim.entries().clone().try_inverse().unwrap();
            let tr = inv.trace().re;
            assert!((r.crb_h + r.crb_theta - tr).abs() < 1e-9 * tr);
        }
    }

    #[test]
    fn symbols_by_hand() {
        let s = spectral_symbols(c(0.0, 0.0), 0.7, 1.0).unwrap();
        assert!((s.t - c(1.0, 0.0)).norm() < 1e-15);
        assert!((s.g.norm() - 1.0).abs() < 1e-15);
        assert!((s.p - 0.7f64.cos()).abs() < 1e-15);
        let s = spectral_symbols(c(0.5, 0.0), 0.0, 1.0).unwrap();
        assert!((s.t - c(2.0, 0.0)).norm() < 1e-14);
        assert!((s.g - c(4.0, 0.0)).norm() < 1e-14);
        assert!((s.p - 8.0).abs() < 1e-13);
        assert!((spectral_symbols(c(0.0, 0.0), -1.0, 1.0).unwrap().lambda - (TAU - 1.0)).abs() < 1e-15);
        assert!(spectral_symbols(c(1.0, 0.0), 0.0, 1.0).is_err());
    }

    #[test]
    fn g_is_theta_derivative_of_t() {
        let (theta, lambda, eps) = (c(0.3, -0.4), 1.1, 1e-6);
        let (_, g) = symbol_t_g(theta, lambda);
        let fd = (symbol_t_g(theta + eps, lambda).0 - symbol_t_g(theta - eps, lambda).0) / (2.0 * eps);
        assert!((g - fd).norm() < 1e-8 * g.norm());
    }

    #[test]
    fn t_is_geometric_series_limit() {
        let (theta, lambda) = (c(0.6, 0.2), 2.3);
        let (t, _) = symbol_t_g(theta, lambda);
        for k in [5, 20, 60] {
            let partial: Complex64 =
                geometric_taps(theta, k).iter().enumerate().map(|(i, v)| v * Complex64::from_polar(1.0, lambda * i as f64)).sum();
            assert!((partial - t).norm() <= theta.norm().powi(k as i32) / (1.0 - theta.norm()) + 1e-14);
        }
    }

    #[test]
    fn trace_integral_limits() {
        let ti = rsi_trace_integral(c(0.0, 0.0), 5.0).unwrap();
        assert!((ti.quadrature - 1.0 / 26.0f64.powi(2)).abs() < 1e-15);
        assert!((ti.closed_form - 1.0 / 625.0).abs() < 1e-15);
        let alpha = 1000f64.sqrt();
        for r in [0.1, 0.3, 0.5] {
            let ti = rsi_trace_integral(Complex64::from_polar(r, 0.9), alpha).unwrap();
            assert!(ti.high_gain);
            assert!((ti.closed_form - ti.quadrature).abs() < 0.05 * ti.quadrature);
        }
        assert!(!rsi_trace_integral(c(0.1, 0.0), 2.0).unwrap().high_gain);
    }

    #[test]
    fn asymptotic_bounds_scale_and_stay_positive() {
        let (h, theta, alpha, p_s) = (c(2.0, 1.0), c(0.2, -0.1), 3.0, 10.0);
        let base = crb_theta_asymptotic(h, theta, alpha, p_s, 0.4, 100.0).unwrap();
        let scaled = crb_theta_asymptotic(h, theta, alpha, p_s, 0.4, 300.0).unwrap();
        assert!((base / scaled - 3.0).abs() < 1e-12);
        let base_h = crb_h_asymptotic(h, theta, alpha, p_s, 0.4, 100.0).unwrap();
        assert!((base_h / crb_h_asymptotic(h, theta, alpha, p_s, 0.4, 200.0).unwrap() - 2.0).abs() < 1e-12);
        for k in 0..64 {
            let lambda = TAU * k as f64 / 64.0;
            assert!(crb_h_asymptotic(h, theta, alpha, p_s, lambda, 1.0).unwrap() > 0.0);
            assert!(crb_theta_asymptotic(h, theta, alpha, p_s, lambda, 1.0).unwrap() > 0.0);
        }
    }

    #[test]
    fn periodogram_bound_reduces_to_sinusoid_bound() {
        let setup = AsymptoticSetup::new(c(1.5, 0.5), c(0.3, 0.2), 3.0, 10.0).unwrap();
        let n = 64;
        let lambda = TAU * 5.0 / n as f64;
        let x = sinusoid(lambda, n, 10.0);
        let general = setup.crb_for_training(&x).unwrap();
        let direct = setup.crb(lambda, 10.0 * n as f64);
        assert!((general.crb_theta - direct.crb_theta).abs() < 1e-9 * direct.crb_theta);
        assert!((general.crb_h - direct.crb_h).abs() < 1e-9 * direct.crb_h);
    }

    #[test]
    fn sinusoid_is_asymptotic_eigenvector() {
        let (theta, lambda) = (c(0.5, 0.3), 1.3);
        let (t, _) = symbol_t_g(theta, lambda);
        let mut prev = f64::INFINITY;
        for n in [128, 512, 2048] {
            let x = sinusoid(lambda, n, 1.0);
            let hop = build_h_theta(theta, 40, n);
            let hx = hop.matvec(&x);
            let quad = dot(&x, &hx) / n as f64;
            let gram = dot(&hx, &hx).re / n as f64;
            let err = (quad - t).norm() + (gram - t.norm_sqr()).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 2e-3);
    }

    #[test]
    fn truncation_warning_threshold() {
        assert!(truncation_warning(c(0.5, 0.0), 3).is_some());
        assert!(truncation_warning(c(0.1, 0.0), 4).is_none());
    }
}
