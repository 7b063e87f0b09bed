//! `M` full-duplex AF relays in series over a fixed source-destination span.
//!
//! Relay `i` forwards `α_i·H_{θ_i}(h_i·t_{i−1} + n_{r,i})`, so the destination
//! sees `z_M·H⁽¹⁾x + Σ c_i·H⁽ⁱ⁾n_{r,i} + n_d` with `H⁽ⁱ⁾ = Π_{n≥i} H_{θ_n}`,
//! `z_M = h_{M+1}·Π α_i h_i` and `c_i = α_i·h_{M+1}·Π_{n>i} α_n h_n`.
//! Relays are indexed from zero in code.
//!
//! Each hop has power gain `10^{K_m/10}` with `K_m = K + 10γ·log₁₀(M+1)` dB,
//! and every transmitter (source included) uses `P_r`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crb::{symbol_t_g, FisherMatrix};
use crate::error::{invalid, Error, Result};
use crate::estimator::{check_domain, colored_noise_weight};
use crate::freq_selective::{convolution_columns, gls_fit};
use crate::linalg::{convolve, dot, trace_z_a_bh, BandedToeplitz, HermitianBand};
use crate::model::{
    compute_alpha, geometric_tap_derivatives, geometric_taps, ReceivedBlock, SystemParams, TrainingSequence,
};
use crate::optim::{minimize, BfgsOptions};
use crate::quadrature::{mean_over_circle_checked, mean_over_circle_complex, DEFAULT_POINTS};
use crate::rng::{complex_normal, complex_normal_vec, trial_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiRelayParams {
    pub relays: usize,
    /// End-to-end path gain in dB (negative).
    pub k_db: f64,
    pub gamma: f64,
    pub p_r: f64,
    pub var_rr: f64,
    pub var_nr: f64,
    pub var_nd: f64,
    pub n: usize,
    /// Taps per relay loop.
    pub l: usize,
}

impl Default for MultiRelayParams {
    /// One relay, K = −60 dB, γ = 3.71, P_r = 30 dB, σ_rr² = −10 dB, N = 140, L = 3.
    fn default() -> Self {
        Self { relays: 1, k_db: -60.0, gamma: 3.71, p_r: 1000.0, var_rr: 0.1, var_nr: 1.0, var_nd: 1.0, n: 140, l: 3 }
    }
}

impl MultiRelayParams {
    pub fn with_relays(mut self, m: usize) -> Self {
        self.relays = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.relays == 0 {
            return Err(invalid("at least one relay is required"));
        }
        if !(self.gamma > 0.0) {
            return Err(invalid(format!("path-loss exponent must be positive, got {}", self.gamma)));
        }
        if self.l == 0 || self.relays * (self.l - 1) >= self.n {
            return Err(invalid(format!("need M(L−1) < N, got M={} L={} N={}", self.relays, self.l, self.n)));
        }
        if !(self.var_nr > 0.0) || !(self.var_nd > 0.0) || !(self.var_rr >= 0.0) {
            return Err(invalid("noise variances must be positive and σ_rr² non-negative"));
        }
        self.single_relay_params().validate()?;
        let alpha = self.alpha()?;
        if alpha * alpha * self.var_rr >= 1.0 {
            return Err(Error::Unstable(alpha * alpha * self.var_rr));
        }
        Ok(())
    }

    /// Per-hop gain in dB, `K + 10γ·log₁₀(M+1)`.
    pub fn k_m_db(&self) -> f64 {
        self.k_db + 10.0 * self.gamma * ((self.relays + 1) as f64).log10()
    }

    /// Per-hop variance `σ_h²`.
    pub fn hop_gain(&self) -> f64 {
        10f64.powf(self.k_m_db() / 10.0)
    }

    pub fn k1(&self) -> f64 {
        self.var_rr + 1.0 / self.p_r
    }

    /// The single-relay system every hop looks like: received power
    /// `P_r·σ_h²` and unit-delay loop.
    pub fn single_relay_params(&self) -> SystemParams {
        let gain = self.hop_gain();
        SystemParams {
            p_s: self.p_r * gain,
            p_r: self.p_r,
            var_sr: gain,
            var_rd: gain,
            var_rr: self.var_rr,
            var_nr: self.var_nr,
            var_nd: self.var_nd,
            n: self.n,
            l: self.l,
            m: 1,
            ..SystemParams::default()
        }
    }

    /// Common relay scaling `α_i`.
    pub fn alpha(&self) -> Result<f64> {
        compute_alpha(&self.single_relay_params())
    }

    /// Taps of the compound channel `H⁽¹⁾`.
    pub fn compound_len(&self) -> usize {
        self.relays * (self.l - 1) + 1
    }

    /// `E|c_i|²·σ_r²` with `|h_n|²` replaced by `σ_h²`.
    pub fn expected_noise_weights(&self) -> Result<Vec<f64>> {
        let alpha = self.alpha()?;
        let single = self.single_relay_params();
        let hop = alpha * alpha * self.hop_gain();
        Ok((0..self.relays)
            .map(|i| {
                let mut k = colored_noise_weight(alpha, &single);
                for _ in i + 1..self.relays {
                    k *= hop;
                }
                k
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRelayRealization {
    /// `h_1 … h_{M+1}`; the last entry is the final hop to the destination.
    pub h: Vec<Complex64>,
    pub h_rr: Vec<Complex64>,
    pub alpha: Vec<f64>,
}

impl MultiRelayRealization {
    pub fn relays(&self) -> usize {
        self.h_rr.len()
    }

    pub fn thetas(&self) -> Vec<Complex64> {
        self.h_rr.iter().zip(&self.alpha).map(|(h, a)| h * a).collect()
    }

    pub fn z_m(&self) -> Complex64 {
        let m = self.relays();
        let mut z = self.h[0] * self.h[m] * self.alpha[0];
        for i in 1..m {
            z *= self.h[i] * self.alpha[i];
        }
        z
    }

    /// Noise-path gains `c_i`.
    pub fn noise_gains(&self) -> Vec<Complex64> {
        let m = self.relays();
        (0..m)
            .map(|i| {
                let mut c = self.h[m] * self.alpha[i];
                for n in i + 1..m {
                    c *= self.h[n] * self.alpha[n];
                }
                c
            })
            .collect()
    }

    /// Channel with every `|h_i|² = σ_h²` (real, positive) and the given RSI
    /// loops `θ_i`.
    pub fn nominal(mp: &MultiRelayParams, thetas: &[Complex64]) -> Result<Self> {
        if thetas.len() != mp.relays {
            return Err(invalid(format!("expected {} RSI loops, got {}", mp.relays, thetas.len())));
        }
        let alpha = mp.alpha()?;
        let hop = Complex64::new(mp.hop_gain().sqrt(), 0.0);
        Ok(Self {
            h: vec![hop; mp.relays + 1],
            h_rr: thetas.iter().map(|t| t / alpha).collect(),
            alpha: vec![alpha; mp.relays],
        })
    }
}

/// Draws the `M+1` hops, then each RSI channel with rejection of unstable
/// loops, in that order.
pub fn draw_multi<R: Rng + ?Sized>(mp: &MultiRelayParams, rng: &mut R) -> Result<MultiRelayRealization> {
    mp.validate()?;
    let alpha = mp.alpha()?;
    let gain = mp.hop_gain();
    let h: Vec<Complex64> = (0..=mp.relays).map(|_| complex_normal(rng, gain)).collect();
    let mut h_rr = Vec::with_capacity(mp.relays);
    for _ in 0..mp.relays {
        let mut rejected = 0;
        loop {
            let v = complex_normal(rng, mp.var_rr);
            if (v * alpha).norm_sqr() < 1.0 {
                h_rr.push(v);
                break;
            }
            rejected += 1;
            if rejected > 10_000 {
                return Err(Error::Unstable((v * alpha).norm_sqr()));
            }
        }
    }
    Ok(MultiRelayRealization { h, h_rr, alpha: vec![alpha; mp.relays] })
}

/// Taps of `Π H_{θ_i}` by sequential convolution of the `l`-tap loops.
pub fn compound_taps(thetas: &[Complex64], l: usize) -> Vec<Complex64> {
    let mut taps = vec![Complex64::new(1.0, 0.0)];
    for (i, &theta) in thetas.iter().enumerate() {
        let geo = geometric_taps(theta, l);
        taps = if i == 0 { geo } else { convolve(&taps, &geo) };
    }
    taps
}

/// Same taps from the symbol `Π t_{θ_i}(λ)` by inverse-transform quadrature.
pub fn compound_taps_quadrature(thetas: &[Complex64], l: usize) -> Vec<Complex64> {
    let len = thetas.len() * (l.max(1) - 1) + 1;
    let symbol = |lambda: f64| {
        thetas
            .iter()
            .map(|&theta| {
                geometric_taps(theta, l)
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v * Complex64::from_polar(1.0, lambda * k as f64))
                    .sum::<Complex64>()
            })
            .product::<Complex64>()
    };
    (0..len)
        .map(|k| mean_over_circle_complex(|lam| symbol(lam) * Complex64::from_polar(1.0, -(k as f64) * lam), DEFAULT_POINTS))
        .collect()
}

/// `∂/∂θ_j` of the taps of `Π_{n≥i} H_{θ_n}`.
fn compound_tap_derivative(thetas: &[Complex64], l: usize, i: usize, j: usize) -> Vec<Complex64> {
    let mut taps = vec![Complex64::new(1.0, 0.0)];
    for (n, &theta) in thetas.iter().enumerate().skip(i) {
        let factor = if n == j { geometric_tap_derivatives(theta, l) } else { geometric_taps(theta, l) };
        taps = convolve(&taps, &factor);
    }
    taps
}

/// Derivative of the taps of `Π_{n≥i} H_{θ_n}` along the equal shift of all
/// `θ_n` that moves `h₂⁽¹⁾ = Σθ_n` by one.
fn equal_shift_derivative(thetas: &[Complex64], l: usize, i: usize) -> Vec<Complex64> {
    let m = thetas.len() as f64;
    let mut acc = vec![Complex64::new(0.0, 0.0); (thetas.len() - i) * (l - 1) + 1];
    for j in i..thetas.len() {
        for (a, v) in acc.iter_mut().zip(compound_tap_derivative(thetas, l, i, j)) {
            *a += v / m;
        }
    }
    acc
}

fn check_realization(mp: &MultiRelayParams, real: &MultiRelayRealization) -> Result<()> {
    mp.validate()?;
    if real.relays() != mp.relays || real.h.len() != mp.relays + 1 || real.alpha.len() != mp.relays {
        return Err(invalid(format!("realization has {} relays, parameters {}", real.relays(), mp.relays)));
    }
    for theta in real.thetas() {
        if theta.norm_sqr() >= 1.0 {
            return Err(Error::Unstable(theta.norm_sqr()));
        }
    }
    Ok(())
}

/// Simulates one block through the relay chain with exact banded products.
///
/// At `M = 1` this draws and computes exactly what the single-relay
/// simulator does.
pub fn simulate_multi<R: Rng + ?Sized>(
    mp: &MultiRelayParams,
    real: &MultiRelayRealization,
    x: &TrainingSequence,
    rng: &mut R,
) -> Result<ReceivedBlock> {
    check_realization(mp, real)?;
    let n = mp.n;
    if x.len() != n {
        return Err(invalid(format!("training length {} != N = {n}", x.len())));
    }
    let total = n + mp.compound_len();
    let mut xp = x.as_slice().to_vec();
    xp.resize(total, Complex64::new(0.0, 0.0));
    let nr: Vec<Vec<Complex64>> = (0..mp.relays).map(|_| complex_normal_vec(rng, total, mp.var_nr)).collect();
    let nd = complex_normal_vec(rng, total, mp.var_nd);
    let (z, c, thetas) = (real.z_m(), real.noise_gains(), real.thetas());
    let mut v: Vec<Complex64> = xp.iter().zip(&nr[0]).map(|(&xi, &ni)| z * xi + c[0] * ni).collect();
    v = BandedToeplitz::lower(&geometric_taps(thetas[0], mp.l), total).matvec(&v);
    for i in 1..mp.relays {
        for (vi, ni) in v.iter_mut().zip(&nr[i]) {
            *vi += c[i] * ni;
        }
        v = BandedToeplitz::lower(&geometric_taps(thetas[i], mp.l), total).matvec(&v);
    }
    for (vi, ni) in v.iter_mut().zip(nd) {
        *vi += ni;
    }
    v.truncate(n);
    Ok(ReceivedBlock::new(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiCrb {
    pub crb_h2: f64,
    pub crb_zm: f64,
}

impl MultiCrb {
    pub fn sum(&self) -> f64 {
        self.crb_h2 + self.crb_zm
    }
}

/// Which covariance derivative enters the information of `h₂⁽¹⁾`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceTerm {
    /// Only the first relay's path, `κ_1·g⁽¹⁾·t⁽¹⁾*` (the `|c_1|⁴`-weighted form).
    #[default]
    FirstRelay,
    /// `Σ_i κ_i·g⁽ⁱ⁾·t⁽ⁱ⁾*`, the derivative of the whole covariance; this is
    /// the form the exact FIM converges to for `M ≥ 2`.
    Full,
}

/// Symbols of the compound channel at `λ`: `t⁽ⁱ⁾`, equal-shift `g⁽ⁱ⁾`, for every `i`.
fn compound_symbols(thetas: &[Complex64], lambda: f64) -> (Vec<Complex64>, Vec<Complex64>) {
    let m = thetas.len();
    let per: Vec<(Complex64, Complex64)> = thetas.iter().map(|&th| symbol_t_g(th, lambda)).collect();
    let mut t = vec![Complex64::new(0.0, 0.0); m];
    let mut g = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..m {
        let prod: Complex64 = per[i..].iter().map(|p| p.0).product();
        t[i] = prod;
        // ∂t_n/∂θ_n = e^{jλ}t_n², so ∂t⁽ⁱ⁾/∂θ_n = t⁽ⁱ⁾·g_n/t_n
        g[i] = per[i..].iter().map(|p| prod * p.1 / p.0).sum::<Complex64>() / m as f64;
    }
    (t, g)
}

/// Asymptotic CRBs of `h₂⁽¹⁾` and `z_M` for a sinusoid at `λ` with energy
/// `x_norm_sq` and per-symbol power `P_r`; the covariance term is integrated
/// numerically.
pub fn crb_multi(mp: &MultiRelayParams, real: &MultiRelayRealization, lambda: f64, x_norm_sq: f64) -> Result<MultiCrb> {
    crb_multi_with(mp, real, lambda, x_norm_sq, CovarianceTerm::default())
}

pub fn crb_multi_with(
    mp: &MultiRelayParams,
    real: &MultiRelayRealization,
    lambda: f64,
    x_norm_sq: f64,
    term: CovarianceTerm,
) -> Result<MultiCrb> {
    check_realization(mp, real)?;
    if !(x_norm_sq > 0.0) {
        return Err(invalid("training energy must be positive"));
    }
    let thetas = real.thetas();
    let kappas: Vec<f64> = real.noise_gains().iter().map(|c| c.norm_sqr() * mp.var_nr).collect();
    let spectrum = |t: &[Complex64]| kappas.iter().zip(t).map(|(k, ti)| k * ti.norm_sqr()).sum::<f64>() + mp.var_nd;
    let integral = mean_over_circle_checked(|lam| {
        let (t, g) = compound_symbols(&thetas, lam);
        let s = spectrum(&t);
        let used = match term {
            CovarianceTerm::Full => kappas.len(),
            CovarianceTerm::FirstRelay => 1,
        };
        let cross: Complex64 =
            kappas.iter().zip(g.iter().zip(&t)).take(used).map(|(k, (gi, ti))| gi * ti.conj() * *k).sum();
        cross.norm_sqr() / (s * s)
    })?;
    let a = integral / mp.p_r;
    let (t, g) = compound_symbols(&thetas, lambda);
    let s = spectrum(&t);
    let (t2, g2) = (t[0].norm_sqr(), g[0].norm_sqr());
    let p = (t[0].conj() * g[0]).re;
    let z2 = real.z_m().norm_sqr();
    let denom = z2 * t2 * g2 + a * t2 * s - z2 * p * p;
    if !(denom > 0.0) {
        return Err(Error::Singular("multi-relay asymptotic information"));
    }
    Ok(MultiCrb { crb_h2: t2 * s / denom / x_norm_sq, crb_zm: (z2 * g2 * s + a * s * s) / denom / x_norm_sq })
}

/// Small-`θ`, high-power forms `(Σ|c_i|²σ_r² + σ_d²)/(|z_M|²‖x‖²)` and
/// `(Σ|c_i|²σ_r² + σ_d²)/‖x‖²`. With `real = None` every `|h_i|²` is
/// replaced by `σ_h²`.
pub fn crb_multi_approx(mp: &MultiRelayParams, real: Option<&MultiRelayRealization>, x_norm_sq: f64) -> Result<MultiCrb> {
    mp.validate()?;
    if !(x_norm_sq > 0.0) {
        return Err(invalid("training energy must be positive"));
    }
    let (noise, z2) = match real {
        Some(r) => {
            check_realization(mp, r)?;
            (r.noise_gains().iter().map(|c| c.norm_sqr() * mp.var_nr).sum::<f64>(), r.z_m().norm_sqr())
        }
        None => {
            let alpha = mp.alpha()?;
            let gain = mp.hop_gain();
            let z2 = gain * (alpha * alpha * gain).powi(mp.relays as i32);
            (mp.expected_noise_weights()?.iter().sum::<f64>(), z2)
        }
    };
    let s = noise + mp.var_nd;
    Ok(MultiCrb { crb_h2: s / (z2 * x_norm_sq), crb_zm: s / x_norm_sq })
}

/// Exact FIM of `(z_M, h₂⁽¹⁾)` for training `x`, with `h₂⁽¹⁾` moved by the
/// equal shift of all `θ_i`. Dense, so intended for moderate `N`.
pub fn fim_multi_exact(mp: &MultiRelayParams, real: &MultiRelayRealization, x: &[Complex64]) -> Result<FisherMatrix> {
    check_realization(mp, real)?;
    let n = x.len();
    let thetas = real.thetas();
    let m = thetas.len();
    let toeplitz = |taps: &[Complex64]| DMatrix::from_fn(n, n, |r, c| if r >= c && r - c < taps.len() { taps[r - c] } else { Complex64::new(0.0, 0.0) });
    let t_ops: Vec<DMatrix<Complex64>> = (0..m).map(|i| toeplitz(&compound_taps(&thetas[i..], mp.l))).collect();
    let g_ops: Vec<DMatrix<Complex64>> = (0..m).map(|i| toeplitz(&equal_shift_derivative(&thetas, mp.l, i))).collect();
    let kappas: Vec<f64> = real.noise_gains().iter().map(|c| c.norm_sqr() * mp.var_nr).collect();
    let mut cov = DMatrix::<Complex64>::identity(n, n) * Complex64::new(mp.var_nd, 0.0);
    let mut dcov = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..m {
        let k = Complex64::new(kappas[i], 0.0);
        cov += &t_ops[i] * t_ops[i].adjoint() * k;
        dcov += &g_ops[i] * t_ops[i].adjoint() * k;
    }
    let cinv = cov.cholesky().ok_or(Error::Singular("multi-relay covariance"))?.inverse();
    let xv = nalgebra::DVector::from_column_slice(x);
    let a = &t_ops[0] * &xv;
    let b = &g_ops[0] * &xv * real.z_m();
    let ca = &cinv * &a;
    let cb = &cinv * &b;
    let trace = (&cinv * dcov.adjoint() * &cinv * &dcov).trace();
    let g11 = a.dotc(&ca);
    let g12 = a.dotc(&cb);
    let g22 = b.dotc(&cb) + trace;
    FisherMatrix::new(DMatrix::from_row_slice(2, 2, &[g11, g12, g12.conj(), g22]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiCrbRow {
    pub relays: usize,
    pub full: MultiCrb,
    pub approx: MultiCrb,
}

/// `crb_multi` at the nominal channel (all loops `θ`) next to the
/// expectation-mode closed form, for each relay count.
pub fn crb_vs_m(
    template: &MultiRelayParams,
    relays: &[usize],
    theta: Complex64,
    lambda: f64,
    x_norm_sq: f64,
) -> Result<Vec<MultiCrbRow>> {
    crb_vs_m_with(template, relays, theta, lambda, x_norm_sq, CovarianceTerm::default())
}

pub fn crb_vs_m_with(
    template: &MultiRelayParams,
    relays: &[usize],
    theta: Complex64,
    lambda: f64,
    x_norm_sq: f64,
    term: CovarianceTerm,
) -> Result<Vec<MultiCrbRow>> {
    relays
        .iter()
        .map(|&m| {
            let mp = template.with_relays(m);
            let real = MultiRelayRealization::nominal(&mp, &vec![theta; m])?;
            Ok(MultiCrbRow {
                relays: m,
                full: crb_multi_with(&mp, &real, lambda, x_norm_sq, term)?,
                approx: crb_multi_approx(&mp, None, x_norm_sq)?,
            })
        })
        .collect()
}

/// Relay count in `1..=m_max` minimizing the closed-form `crb_h2 + crb_zm`;
/// ties go to the smaller count.
pub fn optimal_m(template: &MultiRelayParams, m_max: usize, x_norm_sq: f64) -> Result<usize> {
    if m_max == 0 {
        return Err(invalid("M_max must be at least 1"));
    }
    let mut best = (1, f64::INFINITY);
    for m in 1..=m_max {
        let v = crb_multi_approx(&template.with_relays(m), None, x_norm_sq)?.sum();
        if v < best.1 {
            best = (m, v);
        }
    }
    Ok(best.0)
}

/// Data for the multi-relay likelihood `y ~ CN(Xξ, Σκ_i T⁽ⁱ⁾T⁽ⁱ⁾ᴴ + σ_d²I)`.
#[derive(Debug, Clone)]
pub struct MultiContext {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub l: usize,
    /// `κ_i`, one per relay.
    pub kappas: Vec<f64>,
    pub var_nd: f64,
}

impl MultiContext {
    pub fn new(x: &TrainingSequence, y: &[Complex64], mp: &MultiRelayParams) -> Result<Self> {
        mp.validate()?;
        if x.len() != mp.n || y.len() != mp.n {
            return Err(invalid(format!("block lengths x={} y={} do not match N={}", x.len(), y.len(), mp.n)));
        }
        Ok(Self { x: x.as_slice().to_vec(), y: y.to_vec(), l: mp.l, kappas: mp.expected_noise_weights()?, var_nd: mp.var_nd })
    }

    fn lf(&self) -> usize {
        self.kappas.len() * (self.l - 1) + 1
    }
}

struct MultiEvaluation {
    t_ops: Vec<BandedToeplitz>,
    chol: crate::linalg::BandCholesky,
    xi: Vec<Complex64>,
    whitened_residual: Vec<Complex64>,
    f: f64,
}

fn evaluate(thetas: &[Complex64], ctx: &MultiContext) -> Result<MultiEvaluation> {
    for &theta in thetas {
        check_domain(theta)?;
    }
    let n = ctx.x.len();
    let mut c = HermitianBand::scaled_identity(n, ctx.var_nd);
    let t_ops: Vec<BandedToeplitz> = (0..thetas.len())
        .map(|i| {
            let taps: Vec<Complex64> = compound_taps(&thetas[i..], ctx.l).into_iter().take(n).collect();
            BandedToeplitz::lower(&taps, n)
        })
        .collect();
    for (op, &k) in t_ops.iter().zip(&ctx.kappas) {
        c.add_gram(op.first_col(), k);
    }
    let chol = c.cholesky()?;
    let fit = gls_fit(&chol, &convolution_columns(&ctx.x, ctx.lf()), &ctx.y)?;
    Ok(MultiEvaluation { t_ops, chol, xi: fit.xi, whitened_residual: fit.whitened_residual, f: fit.f })
}

/// Profiled objective `log|C(θ)| + min_ξ ‖y − Xξ‖²_{C⁻¹}`.
pub fn multi_objective(thetas: &[Complex64], ctx: &MultiContext) -> Result<f64> {
    Ok(evaluate(thetas, ctx)?.f)
}

/// `(∂f/∂Re θ_j, ∂f/∂Im θ_j)` for each relay, interleaved.
pub fn multi_gradient(thetas: &[Complex64], ctx: &MultiContext) -> Result<Vec<f64>> {
    let ev = evaluate(thetas, ctx)?;
    Ok(gradient_from(thetas, &ev, ctx))
}

fn gradient_from(thetas: &[Complex64], ev: &MultiEvaluation, ctx: &MultiContext) -> Vec<f64> {
    let n = ctx.x.len();
    let z = ev.chol.selected_inverse();
    let v = &ev.whitened_residual;
    let adj: Vec<Vec<Complex64>> = ev.t_ops.iter().map(|op| op.matvec_adjoint(v)).collect();
    let mut out = Vec::with_capacity(2 * thetas.len());
    for j in 0..thetas.len() {
        let mut d = Complex64::new(0.0, 0.0);
        for (i, a) in adj.iter().enumerate().take(j + 1) {
            let taps: Vec<Complex64> = compound_tap_derivative(thetas, ctx.l, i, j).into_iter().take(n).collect();
            let g_op = BandedToeplitz::lower(&taps, n);
            d += (trace_z_a_bh(&z, &g_op, &ev.t_ops[i]) - dot(&g_op.matvec_adjoint(v), a)) * ctx.kappas[i];
        }
        out.push(2.0 * d.re);
        out.push(-2.0 * d.im);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiEstimate {
    pub z_hat: Complex64,
    /// Normalized compound taps `[1, h₂⁽¹⁾, …]`.
    pub h_sup: Vec<Complex64>,
    pub thetas_hat: Vec<Complex64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

pub fn estimate_multi_with(ctx: &MultiContext, init: Option<&[Complex64]>, opts: &BfgsOptions) -> Result<MultiEstimate> {
    let m = ctx.kappas.len();
    if m == 0 || ctx.lf() >= ctx.x.len() || ctx.y.len() != ctx.x.len() {
        return Err(invalid("need at least one relay, M(L−1) < N and matching lengths"));
    }
    let start: Vec<Complex64> = init.map(|v| v.to_vec()).unwrap_or_else(|| vec![Complex64::new(0.0, 0.0); m]);
    if start.len() != m {
        return Err(invalid(format!("expected {m} initial loops, got {}", start.len())));
    }
    let unpack = |z: &[f64]| -> Vec<Complex64> { z.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect() };
    let f = |z: &[f64]| {
        let thetas = unpack(z);
        if thetas.iter().any(|t| t.norm() >= 1.0) {
            return None;
        }
        let ev = evaluate(&thetas, ctx).ok()?;
        let g = gradient_from(&thetas, &ev, ctx);
        Some((ev.f, g))
    };
    let x0: Vec<f64> = start.iter().flat_map(|t| [t.re, t.im]).collect();
    let out = minimize(f, &x0, opts).ok_or(Error::Domain(start.iter().map(|t| t.norm()).fold(0.0, f64::max)))?;
    let thetas_hat = unpack(&out.x);
    let xi = evaluate(&thetas_hat, ctx)?.xi;
    let z_hat = xi[0];
    if z_hat.norm_sqr() == 0.0 {
        return Err(Error::Singular("leading compound tap"));
    }
    Ok(MultiEstimate {
        z_hat,
        h_sup: xi.iter().map(|v| v / z_hat).collect(),
        thetas_hat,
        iterations: out.iterations,
        converged: out.converged,
        objective_trace: out.trace,
    })
}

/// Maximum-likelihood estimate of `z_M` and the compound taps.
pub fn ml_estimate_multi(y: &[Complex64], x: &TrainingSequence, mp: &MultiRelayParams) -> Result<MultiEstimate> {
    estimate_multi_with(&MultiContext::new(x, y, mp)?, None, &BfgsOptions::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiMsePoint {
    pub relays: usize,
    pub trials: usize,
    pub mse_zm: f64,
    pub mse_h2: f64,
}

/// Monte-Carlo MSE of `ẑ_M` and `ĥ₂⁽¹⁾` with ±1 training at power `P_r`.
pub fn mse_vs_m(template: &MultiRelayParams, relays: &[usize], trials: usize, seed: u64) -> Result<Vec<MultiMsePoint>> {
    relays
        .iter()
        .map(|&m| {
            let mp = template.with_relays(m);
            mp.validate()?;
            let errs: Vec<(f64, f64)> = (0..trials as u64)
                .into_par_iter()
                .map(|trial| {
                    let mut rng = trial_rng(seed, trial);
                    let real = draw_multi(&mp, &mut rng)?;
                    let x = TrainingSequence::bernoulli(mp.n, mp.p_r, &mut rng);
                    let y = simulate_multi(&mp, &real, &x, &mut rng)?;
                    let est = ml_estimate_multi(&y.y, &x, &mp)?;
                    let h2: Complex64 = real.thetas().iter().sum();
                    Ok(((est.z_hat - real.z_m()).norm_sqr(), (est.h_sup[1] - h2).norm_sqr()))
                })
                .collect::<Result<_>>()?;
            let k = trials as f64;
            Ok(MultiMsePoint {
                relays: m,
                trials,
                mse_zm: errs.iter().map(|e| e.0).sum::<f64>() / k,
                mse_h2: errs.iter().map(|e| e.1).sum::<f64>() / k,
            })
        })
        .collect()
}
