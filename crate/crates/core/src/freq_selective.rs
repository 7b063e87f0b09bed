//! Frequency-selective links: multipath `h_sr`, `h_rd` around the RSI loop.
//!
//! The end-to-end operator `α_f·H_rd·H_θ·H_sr` is a product of lower banded
//! Toeplitz matrices and therefore lower banded Toeplitz itself, with
//! `L_f = L1 + L2 + L − 2` taps. The estimator treats those taps as free
//! parameters `ξ`. The relay-destination spectrum is written `p_rd(λ)` here
//! to keep it apart from `p(λ) = Re(t*g)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crb::FisherMatrix;
use crate::error::{invalid, Error, Result};
use crate::estimator::{check_domain, colored_noise_weight};
use crate::linalg::{convolve, dot, trace_z_a_bh, BandCholesky, BandedToeplitz, HermitianBand};
use crate::model::{geometric_tap_derivatives, geometric_taps, ReceivedBlock, SystemParams, TrainingSequence};
use crate::optim::{minimize, BfgsOptions};
use crate::quadrature::{mean_over_circle_complex, DEFAULT_POINTS};
use crate::rng::{complex_normal, complex_normal_vec, trial_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqSelParams {
    /// `var_sr` and `var_rd` of the base are ignored in favor of the tap vectors.
    pub base: SystemParams,
    pub var_sr_taps: Vec<f64>,
    pub var_rd_taps: Vec<f64>,
}

impl FreqSelParams {
    pub fn new(base: SystemParams, var_sr_taps: Vec<f64>, var_rd_taps: Vec<f64>) -> Result<Self> {
        let fp = Self { base, var_sr_taps, var_rd_taps };
        fp.validate()?;
        Ok(fp)
    }

    pub fn l1(&self) -> usize {
        self.var_sr_taps.len()
    }

    pub fn l2(&self) -> usize {
        self.var_rd_taps.len()
    }

    pub fn lf(&self) -> usize {
        self.l1() + self.l2() + self.base.l - 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.l1() == 0 || self.l2() == 0 {
            return Err(invalid("L1 and L2 must be at least 1"));
        }
        if self.var_sr_taps.iter().chain(&self.var_rd_taps).any(|v| !(*v > 0.0)) {
            return Err(invalid("tap variances must be positive"));
        }
        let mut flat = self.flat_params();
        flat.var_sr = 1.0;
        flat.validate()?;
        if self.lf() >= self.base.n {
            return Err(invalid(format!("L_f = {} must be below N = {}", self.lf(), self.base.n)));
        }
        Ok(())
    }

    /// Base parameters with the summed tap variances.
    fn flat_params(&self) -> SystemParams {
        SystemParams { var_sr: self.var_sr_taps.iter().sum(), var_rd: self.var_rd_taps.iter().sum(), ..self.base }
    }

    /// Weight of the colored term in the estimator's covariance model.
    pub fn noise_weight(&self) -> Result<f64> {
        Ok(colored_noise_weight(alpha_f(self)?, &self.flat_params()))
    }
}

/// `α_f² = P_r / (P_s·Σσ_sr,i² + P_r·σ_rr² + σ_r²)`.
pub fn alpha_f(fp: &FreqSelParams) -> Result<f64> {
    let b = &fp.base;
    let den = b.p_s * fp.var_sr_taps.iter().sum::<f64>() + b.p_r * b.var_rr + b.var_nr;
    if !(b.p_r > 0.0) || !(den > 0.0) {
        return Err(invalid("alpha_f needs positive P_r and denominator"));
    }
    Ok((b.p_r / den).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqSelRealization {
    pub h_sr: Vec<Complex64>,
    pub h_rd: Vec<Complex64>,
    pub h_rr: Complex64,
    pub alpha_f: f64,
}

impl FreqSelRealization {
    pub fn theta(&self) -> Complex64 {
        self.h_rr * self.alpha_f
    }
}

/// Draws the tap vectors, then `h_rr` until `|α_f·h_rr| < 1`.
pub fn draw_realization_fs<R: Rng + ?Sized>(fp: &FreqSelParams, rng: &mut R) -> Result<FreqSelRealization> {
    let alpha_f = alpha_f(fp)?;
    let h_sr = fp.var_sr_taps.iter().map(|&v| complex_normal(rng, v)).collect();
    let h_rd = fp.var_rd_taps.iter().map(|&v| complex_normal(rng, v)).collect();
    for _ in 0..10_000 {
        let h_rr = complex_normal(rng, fp.base.var_rr);
        if (h_rr * alpha_f).norm_sqr() < 1.0 {
            return Ok(FreqSelRealization { h_sr, h_rd, h_rr, alpha_f });
        }
    }
    Err(Error::Unstable(f64::NAN))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallTaps {
    pub h_f: Vec<Complex64>,
    pub alpha_f: f64,
}

fn relay_path(fp: &FreqSelParams, real: &FreqSelRealization) -> Vec<Complex64> {
    convolve(&real.h_rd, &geometric_taps(real.theta(), fp.base.l))
}

/// `α_f·(h_rd ⊛ [θᵏ]_{k<L} ⊛ h_sr)`.
pub fn overall_taps_convolution(fp: &FreqSelParams, real: &FreqSelRealization) -> OverallTaps {
    let h_f = convolve(&relay_path(fp, real), &real.h_sr).into_iter().map(|v| v * real.alpha_f).collect();
    OverallTaps { h_f, alpha_f: real.alpha_f }
}

/// `h_f[k] = α_f·(1/2π)∫ p_rd(λ)·t_L(λ)·q(λ)·e^{−jkλ} dλ` by the trapezoid rule,
/// with `t_L` the `L`-term RSI symbol.
pub fn overall_taps(fp: &FreqSelParams, real: &FreqSelRealization) -> Result<OverallTaps> {
    if real.theta().norm() >= 1.0 {
        return Err(Error::Unstable(real.theta().norm_sqr()));
    }
    let t_taps = geometric_taps(real.theta(), fp.base.l);
    let symbol = |taps: &[Complex64], lambda: f64| -> Complex64 {
        taps.iter().enumerate().map(|(k, v)| v * Complex64::from_polar(1.0, lambda * k as f64)).sum()
    };
    let h_f = (0..fp.lf())
        .map(|k| {
            let v = mean_over_circle_complex(
                |lambda| {
                    symbol(&real.h_rd, lambda)
                        * symbol(&t_taps, lambda)
                        * symbol(&real.h_sr, lambda)
                        * Complex64::from_polar(1.0, -lambda * k as f64)
                },
                DEFAULT_POINTS,
            );
            v * real.alpha_f
        })
        .collect::<Vec<_>>();
    if h_f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Quadrature(f64::NAN));
    }
    Ok(OverallTaps { h_f, alpha_f: real.alpha_f })
}

/// `y = α_f·H_rd·H_θ·H_sr·x + α_f·H_rd·H_θ·n_r + n_d` with exact operator
/// products, generated over `N + L_f` samples and truncated to `N`.
pub fn simulate_block_fs<R: Rng + ?Sized>(
    fp: &FreqSelParams,
    real: &FreqSelRealization,
    x: &TrainingSequence,
    rng: &mut R,
) -> Result<ReceivedBlock> {
    let n = fp.base.n;
    if x.len() != n {
        return Err(invalid(format!("training length {} != N = {n}", x.len())));
    }
    if real.theta().norm_sqr() >= 1.0 {
        return Err(Error::Unstable(real.theta().norm_sqr()));
    }
    let noise_taps: Vec<Complex64> = relay_path(fp, real).into_iter().map(|v| v * real.alpha_f).collect();
    let signal_taps = overall_taps_convolution(fp, real).h_f;
    let total = n + signal_taps.len();
    let mut xp = x.as_slice().to_vec();
    xp.resize(total, Complex64::new(0.0, 0.0));
    let nr = complex_normal_vec(rng, total, fp.base.var_nr);
    let nd = complex_normal_vec(rng, total, fp.base.var_nd);
    let signal = BandedToeplitz::lower(&signal_taps, total).matvec(&xp);
    let relay_noise = BandedToeplitz::lower(&noise_taps, total).matvec(&nr);
    let mut y: Vec<Complex64> = signal.iter().zip(&relay_noise).zip(&nd).map(|((s, r), d)| s + r + d).collect();
    y.truncate(n);
    Ok(ReceivedBlock::new(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapEstimate {
    /// Estimated overall taps `ξ`, leading tap first.
    pub xi: Vec<Complex64>,
    pub theta_hat: Complex64,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

/// Data and covariance scale for the tap likelihood
/// `y ~ CN(T(ξ)x, κ·H_θH_θᴴ + σ_d²I)`.
#[derive(Debug, Clone)]
pub struct TapContext {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub lf: usize,
    /// RSI taps in `H_θ`.
    pub l: usize,
    pub kappa: f64,
    pub var_nd: f64,
}

impl TapContext {
    pub fn new(x: &TrainingSequence, y: &[Complex64], fp: &FreqSelParams) -> Result<Self> {
        if x.len() != fp.base.n || y.len() != fp.base.n {
            return Err(invalid(format!("block lengths x={} y={} do not match N={}", x.len(), y.len(), fp.base.n)));
        }
        Ok(Self {
            x: x.as_slice().to_vec(),
            y: y.to_vec(),
            lf: fp.lf(),
            l: fp.base.l,
            kappa: fp.noise_weight()?,
            var_nd: fp.base.var_nd,
        })
    }

    fn n(&self) -> usize {
        self.x.len()
    }
}

struct TapEvaluation {
    h_op: BandedToeplitz,
    chol: crate::linalg::BandCholesky,
    xi: Vec<Complex64>,
    whitened_residual: Vec<Complex64>,
    f: f64,
}

/// Convolution matrix columns `[x shifted by k]` for `k < lf`.
pub(crate) fn convolution_columns(x: &[Complex64], lf: usize) -> Vec<Vec<Complex64>> {
    let n = x.len();
    (0..lf).map(|k| (0..n).map(|i| if i >= k { x[i - k] } else { Complex64::new(0.0, 0.0) }).collect()).collect()
}

pub(crate) struct GlsFit {
    pub(crate) xi: Vec<Complex64>,
    pub(crate) whitened_residual: Vec<Complex64>,
    /// `log|C| + ‖y − Xξ̂‖²_{C⁻¹}`.
    pub(crate) f: f64,
}

/// Generalized least squares `(XᴴC⁻¹X)⁻¹XᴴC⁻¹y` given the factor of `C`.
pub(crate) fn gls_fit(chol: &BandCholesky, cols: &[Vec<Complex64>], y: &[Complex64]) -> Result<GlsFit> {
    let lf = cols.len();
    let solved: Vec<Vec<Complex64>> = cols.iter().map(|col| chol.solve(col)).collect();
    let gram = DMatrix::from_fn(lf, lf, |i, j| dot(&solved[i], &cols[j]));
    let rhs = DVector::from_fn(lf, |i, _| dot(&solved[i], y));
    let xi: Vec<Complex64> = gram
        .cholesky()
        .ok_or(Error::Singular("training Gram matrix XᴴC⁻¹X"))?
        .solve(&rhs)
        .iter()
        .copied()
        .collect();
    let mut residual = y.to_vec();
    for (col, &coef) in cols.iter().zip(&xi) {
        for (r, v) in residual.iter_mut().zip(col) {
            *r -= coef * v;
        }
    }
    let whitened_residual = chol.solve(&residual);
    let f = chol.log_det() + dot(&residual, &whitened_residual).re;
    Ok(GlsFit { xi, whitened_residual, f })
}

fn evaluate(theta: Complex64, ctx: &TapContext) -> Result<TapEvaluation> {
    check_domain(theta)?;
    let n = ctx.n();
    let h_op = BandedToeplitz::lower(&geometric_taps(theta, ctx.l.min(n)), n);
    let mut c = HermitianBand::scaled_identity(n, ctx.var_nd);
    c.add_gram(h_op.first_col(), ctx.kappa);
    let chol = c.cholesky()?;
    let fit = gls_fit(&chol, &convolution_columns(&ctx.x, ctx.lf), &ctx.y)?;
    Ok(TapEvaluation { h_op, chol, xi: fit.xi, whitened_residual: fit.whitened_residual, f: fit.f })
}

/// Profiled objective `log|C(θ)| + min_ξ ‖y − T(ξ)x‖²_{C⁻¹}`.
pub fn tap_objective(theta: Complex64, ctx: &TapContext) -> Result<f64> {
    Ok(evaluate(theta, ctx)?.f)
}

/// `(∂f/∂θ_x, ∂f/∂θ_y)`; the mean does not depend on `θ`, so only the
/// covariance terms remain.
pub fn tap_gradient(theta: Complex64, ctx: &TapContext) -> Result<(f64, f64)> {
    let ev = evaluate(theta, ctx)?;
    Ok(gradient_from(theta, &ev, ctx))
}

fn gradient_from(theta: Complex64, ev: &TapEvaluation, ctx: &TapContext) -> (f64, f64) {
    let n = ctx.n();
    let b_op = BandedToeplitz::lower(&geometric_tap_derivatives(theta, ctx.l.min(n)), n);
    let tau = trace_z_a_bh(&ev.chol.selected_inverse(), &b_op, &ev.h_op);
    let v = &ev.whitened_residual;
    let q = dot(&b_op.matvec_adjoint(v), &ev.h_op.matvec_adjoint(v));
    let d = (tau - q) * ctx.kappa;
    (2.0 * d.re, -2.0 * d.im)
}

/// Least-squares fit of an `lf`-tap channel, ignoring noise color.
pub fn least_squares_taps(x: &[Complex64], y: &[Complex64], lf: usize) -> Result<Vec<Complex64>> {
    let n = x.len();
    let a = DMatrix::from_fn(n, lf, |i, k| if i >= k { x[i - k] } else { Complex64::new(0.0, 0.0) });
    let b = DVector::from_column_slice(y);
    let ah = a.adjoint();
    let sol = (&ah * &a).cholesky().ok_or(Error::Singular("training convolution matrix"))?.solve(&(&ah * b));
    Ok(sol.iter().copied().collect())
}

/// BFGS over `(θ_x, θ_y)` from `init` (zero when `None`) with the taps profiled.
pub fn estimate_taps_with(ctx: &TapContext, init: Option<Complex64>, opts: &BfgsOptions) -> Result<TapEstimate> {
    if ctx.lf == 0 || ctx.lf >= ctx.n() || ctx.y.len() != ctx.n() {
        return Err(invalid(format!("need 1 <= L_f < N and matching lengths, got L_f={} N={}", ctx.lf, ctx.n())));
    }
    let theta0 = init.unwrap_or_default();
    check_domain(theta0)?;
    let f = |z: &[f64]| {
        let theta = Complex64::new(z[0], z[1]);
        if theta.norm() >= 1.0 {
            return None;
        }
        let ev = evaluate(theta, ctx).ok()?;
        let (gx, gy) = gradient_from(theta, &ev, ctx);
        Some((ev.f, vec![gx, gy]))
    };
    let out = minimize(f, &[theta0.re, theta0.im], opts).ok_or(Error::Domain(theta0.norm()))?;
    let theta_hat = Complex64::new(out.x[0], out.x[1]);
    Ok(TapEstimate {
        xi: evaluate(theta_hat, ctx)?.xi,
        theta_hat,
        iterations: out.iterations,
        converged: out.converged,
        objective_trace: out.trace,
    })
}

/// Maximum-likelihood estimate of the `L_f` overall taps.
pub fn ml_estimate_taps(y: &[Complex64], x: &TrainingSequence, fp: &FreqSelParams) -> Result<TapEstimate> {
    estimate_taps_with(&TapContext::new(x, y, fp)?, None, &BfgsOptions::default())
}

/// Exact covariance of the block given the realization,
/// `α_f²σ_r²·T(h_rd ⊛ θ)T(h_rd ⊛ θ)ᴴ + σ_d²I`.
pub fn exact_covariance(fp: &FreqSelParams, real: &FreqSelRealization, n: usize) -> Result<HermitianBand> {
    if real.theta().norm() >= 1.0 {
        return Err(Error::Unstable(real.theta().norm_sqr()));
    }
    let mut c = HermitianBand::scaled_identity(n, fp.base.var_nd);
    let path: Vec<Complex64> = relay_path(fp, real).into_iter().take(n).collect();
    c.add_gram(&path, real.alpha_f * real.alpha_f * fp.base.var_nr);
    Ok(c)
}

/// FIM of the overall taps `ξ` given the realization: `Γ = XᴴC_f⁻¹X` with
/// `X` the convolution matrix of `x`, since `C_f` does not depend on `ξ`.
pub fn fim_freq(real: &FreqSelRealization, x: &[Complex64], fp: &FreqSelParams) -> Result<FisherMatrix> {
    let n = x.len();
    let lf = fp.lf();
    if lf >= n {
        return Err(invalid(format!("L_f = {lf} must be below N = {n}")));
    }
    let chol = exact_covariance(fp, real, n)?.cholesky()?;
    let cols = convolution_columns(x, lf);
    let solved: Vec<Vec<Complex64>> = cols.iter().map(|col| chol.solve(col)).collect();
    FisherMatrix::new(DMatrix::from_fn(lf, lf, |i, j| dot(&cols[i], &solved[j])))
}

/// One row of the training-length sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsePoint {
    pub n: usize,
    pub trials: usize,
    pub mse: f64,
    pub mean_iterations: f64,
}

/// Tap MSE against the exact overall channel for each `N`, with ±1 training.
///
/// Trial `k` draws its channel from stream `k` at every `N`, so the sweep is
/// paired across training lengths.
pub fn mse_vs_n(fp: &FreqSelParams, ns: &[usize], trials: usize, seed: u64) -> Result<Vec<MsePoint>> {
    ns.iter()
        .map(|&n| {
            let fpn = FreqSelParams { base: SystemParams { n, ..fp.base }, ..fp.clone() };
            fpn.validate()?;
            let runs: Vec<(f64, usize)> = (0..trials as u64)
                .into_par_iter()
                .map(|trial| {
                    let mut rng = trial_rng(seed, trial);
                    let real = draw_realization_fs(&fpn, &mut rng)?;
                    let exact = overall_taps_convolution(&fpn, &real).h_f;
                    let x = TrainingSequence::bernoulli(n, fpn.base.p_s, &mut rng);
                    let y = simulate_block_fs(&fpn, &real, &x, &mut rng)?;
                    let est = ml_estimate_taps(&y.y, &x, &fpn)?;
                    let err: f64 = est.xi.iter().zip(&exact).map(|(a, b)| (a - b).norm_sqr()).sum();
                    Ok((err, est.iterations))
                })
                .collect::<Result<_>>()?;
            Ok(MsePoint {
                n,
                trials,
                mse: runs.iter().map(|r| r.0).sum::<f64>() / trials as f64,
                mean_iterations: runs.iter().map(|r| r.1 as f64).sum::<f64>() / trials as f64,
            })
        })
        .collect()
}
