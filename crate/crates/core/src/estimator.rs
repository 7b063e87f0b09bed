//! Profiled maximum-likelihood estimation of `(h, θ)` from one block.
//!
//! Marginalizing `d` leaves `y ~ CN(h·H_θx, C)` with
//! `C = α²σ_rd²σ_r²·H_θH_θᴴ + σ_d²I`. For fixed `θ` the minimizer over `h` is
//! a weighted least-squares fit, so the search runs over `(θ_x, θ_y)` only.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, trace_z_a_bh, BandCholesky, BandedToeplitz, HermitianBand};
use crate::model::{build_b_theta, build_h_theta, geometric_taps, ReceivedBlock, SystemParams, TrainingSequence};
use crate::optim::{minimize, BfgsOptions};
use crate::rng::uniform_disk;

/// Radius of the uniform-disk random initializer.
pub const RANDOM_INIT_RADIUS: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct LikelihoodContext {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub params: SystemParams,
    pub alpha: f64,
}

impl LikelihoodContext {
    pub fn new(x: &TrainingSequence, y: &ReceivedBlock, params: &SystemParams, alpha: f64) -> Result<Self> {
        if x.len() != params.n || y.len() != params.n {
            return Err(invalid(format!(
                "block lengths x={} y={} do not match N={}",
                x.len(),
                y.len(),
                params.n
            )));
        }
        Ok(Self { x: x.as_slice().to_vec(), y: y.y.clone(), params: *params, alpha })
    }

    fn n(&self) -> usize {
        self.x.len()
    }

    /// Scale of the colored relay-noise term in `C`.
    pub fn noise_weight(&self) -> f64 {
        colored_noise_weight(self.alpha, &self.params)
    }
}

pub(crate) fn colored_noise_weight(alpha: f64, params: &SystemParams) -> f64 {
    alpha * alpha * params.var_rd * params.var_nr
}

pub(crate) fn check_domain(theta: Complex64) -> Result<()> {
    if theta.norm() >= 1.0 || !theta.norm().is_finite() {
        return Err(Error::Domain(theta.norm()));
    }
    Ok(())
}

/// Marginal covariance `α²σ_rd²σ_r²·H_θH_θᴴ + σ_d²I` as a banded Hermitian matrix.
pub fn covariance(theta: Complex64, alpha: f64, params: &SystemParams, n: usize, l: usize) -> Result<HermitianBand> {
    check_domain(theta)?;
    Ok(covariance_unchecked(theta, alpha, params, n, l))
}

fn covariance_unchecked(theta: Complex64, alpha: f64, params: &SystemParams, n: usize, l: usize) -> HermitianBand {
    let mut c = HermitianBand::scaled_identity(n, params.var_nd);
    c.add_gram(build_h_theta(theta, l, n).first_col(), colored_noise_weight(alpha, params));
    c
}

/// Everything the objective and gradient share at one tap vector.
pub(crate) struct Evaluation {
    pub(crate) h_op: BandedToeplitz,
    pub(crate) chol: BandCholesky,
    pub(crate) h_hat: Complex64,
    pub(crate) residual: Vec<Complex64>,
    pub(crate) whitened_residual: Vec<Complex64>,
    pub(crate) f: f64,
}

/// Profiled objective for `y ~ CN(h·T(u)x, κ·T(u)T(u)ᴴ + σ_d²I)` with the
/// leading tap of `u` fixed to one.
pub(crate) fn evaluate_taps(u: &[Complex64], x: &[Complex64], y: &[Complex64], kappa: f64, var_nd: f64) -> Result<Evaluation> {
    let n = x.len();
    let h_op = BandedToeplitz::lower(u, n);
    let mut c = HermitianBand::scaled_identity(n, var_nd);
    c.add_gram(h_op.first_col(), kappa);
    let chol = c.cholesky()?;
    let hx = h_op.matvec(x);
    let w = chol.solve(&hx);
    let gram = dot(&hx, &w).re;
    if !(gram > 0.0) {
        return Err(Error::Singular("normal equation xᴴHᴴC⁻¹Hx"));
    }
    let h_hat = dot(&w, y) / gram;
    let residual: Vec<Complex64> = y.iter().zip(&hx).map(|(yi, hi)| yi - h_hat * hi).collect();
    let whitened_residual = chol.solve(&residual);
    let f = chol.log_det() + dot(&residual, &whitened_residual).re;
    Ok(Evaluation { h_op, chol, h_hat, residual, whitened_residual, f })
}

fn evaluate(theta: Complex64, ctx: &LikelihoodContext) -> Result<Evaluation> {
    let taps = geometric_taps(theta, ctx.params.l.min(ctx.n()));
    evaluate_taps(&taps, &ctx.x, &ctx.y, ctx.noise_weight(), ctx.params.var_nd)
}

/// `(xᴴH_θᴴC⁻¹H_θx)⁻¹·xᴴH_θᴴC⁻¹y`.
pub fn profile_h(theta: Complex64, ctx: &LikelihoodContext) -> Result<Complex64> {
    Ok(evaluate(theta, ctx)?.h_hat)
}

/// `log|C| + (y−μ)ᴴC⁻¹(y−μ)` for an arbitrary `h` (not profiled).
pub fn objective_at(h: Complex64, theta: Complex64, ctx: &LikelihoodContext) -> Result<f64> {
    check_domain(theta)?;
    let n = ctx.n();
    let l = ctx.params.l;
    let chol = covariance_unchecked(theta, ctx.alpha, &ctx.params, n, l).cholesky()?;
    let hx = build_h_theta(theta, l, n).matvec(&ctx.x);
    let e: Vec<Complex64> = ctx.y.iter().zip(&hx).map(|(yi, hi)| yi - h * hi).collect();
    Ok(chol.log_det() + dot(&e, &chol.solve(&e)).re)
}

/// Profiled objective `f(θ) = min_h objective_at(h, θ)`.
pub fn objective(theta: Complex64, ctx: &LikelihoodContext) -> Result<f64> {
    check_domain(theta)?;
    Ok(evaluate(theta, ctx)?.f)
}

fn gradient_from(theta: Complex64, ev: &Evaluation, ctx: &LikelihoodContext) -> (f64, f64) {
    let n = ctx.n();
    let kappa = ctx.noise_weight();
    let b_op = build_b_theta(theta, ctx.params.l, n);
    let z = ev.chol.selected_inverse();
    // τ = tr(C⁻¹BHᴴ); tr(C⁻¹HBᴴ) = τ*
    let tau = trace_z_a_bh(&z, &b_op, &ev.h_op);
    let v = &ev.whitened_residual;
    // q = vᴴBHᴴv
    let q = dot(&b_op.matvec_adjoint(v), &ev.h_op.matvec_adjoint(v));
    // s = vᴴ·ĥ·Bx
    let s = ev.h_hat * dot(v, &b_op.matvec(&ctx.x));
    let gx = 2.0 * kappa * tau.re - 2.0 * s.re - 2.0 * kappa * q.re;
    let gy = -2.0 * kappa * tau.im + 2.0 * s.im + 2.0 * kappa * q.im;
    (gx, gy)
}

/// `(∂f/∂θ_x, ∂f/∂θ_y)` with `h` held at its profiled value.
pub fn gradient(theta: Complex64, ctx: &LikelihoodContext) -> Result<(f64, f64)> {
    check_domain(theta)?;
    let ev = evaluate(theta, ctx)?;
    Ok(gradient_from(theta, &ev, ctx))
}

/// Residual at the profiled `h`, `y − ĥ·H_θx`.
pub fn profiled_residual(theta: Complex64, ctx: &LikelihoodContext) -> Result<Vec<Complex64>> {
    Ok(evaluate(theta, ctx)?.residual)
}

/// Linear MMSE initializers from the first two received samples.
///
/// `ĥ₀` uses `y[0] = h·x[0] + …`; `θ̂₀` uses `y[1] − ĥ₀x[1] ≈ hθ·x[0]`.
pub fn mmse_init(y: &[Complex64], x: &[Complex64], params: &SystemParams, alpha: f64) -> Result<(Complex64, Complex64)> {
    if y.len() < 2 || x.len() < 2 {
        return Err(invalid("MMSE initialization needs at least two samples"));
    }
    let a2 = alpha * alpha;
    let (ssr, srd, srr) = (params.var_sr, params.var_rd, params.var_rr);
    let (sr, sd) = (params.var_nr, params.var_nd);
    let prior = a2 * ssr * srd;
    let colored = a2 * srd * sr + sd;
    let den = prior * x[0].norm_sqr() + colored;
    let h0 = prior * x[0].conj() * y[0] / den;
    let var_h0 = prior * colored / den;

    let y1 = y[1] - h0 * x[1];
    let num = h0.conj() * a2 * srr * x[0].conj() * y1;
    let den = h0.norm_sqr() * a2 * srr * x[0].norm_sqr()
        + var_h0 * x[1].norm_sqr()
        + var_h0 * a2 * srr * x[0].norm_sqr()
        + a2 * a2 * ssr * srd * srd * sr
        + a2 * srd * sr
        + sd;
    let mut theta0 = num / den;
    let r = theta0.norm();
    if r >= 0.99 {
        theta0 *= 0.99 / r;
    }
    Ok((h0, theta0))
}

pub fn random_init<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    uniform_disk(rng, RANDOM_INIT_RADIUS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub h_hat: Complex64,
    pub theta_hat: Complex64,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    pub projected: bool,
}

/// BFGS over `(θ_x, θ_y)` from `init` (MMSE initializer when `None`).
pub fn bfgs_estimate(ctx: &LikelihoodContext, init: Option<Complex64>) -> Result<EstimateResult> {
    bfgs_estimate_with(ctx, init, &BfgsOptions::default())
}

pub fn bfgs_estimate_with(ctx: &LikelihoodContext, init: Option<Complex64>, opts: &BfgsOptions) -> Result<EstimateResult> {
    let theta0 = match init {
        Some(t) => t,
        None => mmse_init(&ctx.y, &ctx.x, &ctx.params, ctx.alpha)?.1,
    };
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
    let mut theta_hat = Complex64::new(out.x[0], out.x[1]);
    let projected = theta_hat.norm() > 1.0;
    if projected {
        theta_hat /= theta_hat.norm();
    }
    let h_hat = evaluate(theta_hat, ctx)?.h_hat;
    Ok(EstimateResult {
        h_hat,
        theta_hat,
        iterations: out.iterations,
        converged: out.converged,
        objective_trace: out.trace,
        projected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{compute_alpha, simulate_block, ChannelRealization};
    use crate::rng::{complex_normal, trial_rng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn setup(n: usize, l: usize, seed: u64) -> (LikelihoodContext, ChannelRealization) {
        let params = SystemParams { n, l, ..Default::default() }.with_ps_db(15.0);
        let alpha = compute_alpha(&params).unwrap();
        let mut rng = trial_rng(seed, 0);
        let real = ChannelRealization::new(c(0.8, -0.3), c(0.6, 0.5), c(0.06, 0.05), alpha);
        let x = TrainingSequence::bernoulli(n, params.p_s, &mut rng);
        let y = simulate_block(&params, &real, &x, &mut rng).unwrap();
        (LikelihoodContext::new(&x, &y, &params, alpha).unwrap(), real)
    }

    #[test]
    fn covariance_at_zero_theta_is_scaled_identity() {
        let p = SystemParams::default();
        let alpha = compute_alpha(&p).unwrap();
        let cov = covariance(c(0.0, 0.0), alpha, &p, 10, 3).unwrap();
        let s = alpha * alpha * p.var_nr + p.var_nd;
        for i in 0..10 {
            for j in 0..10 {
                let e = if i == j { s } else { 0.0 };
                assert!((cov.get(i, j) - c(e, 0.0)).norm() < 1e-12);
            }
        }
        assert!(covariance(c(1.0, 0.0), alpha, &p, 10, 3).is_err());
    }

    #[test]
    fn profile_recovers_h_without_noise() {
        let (mut ctx, real) = setup(32, 4, 1);
        let hx = build_h_theta(real.theta(), 4, 32).matvec(&ctx.x);
        ctx.y = hx.iter().map(|v| real.h() * v).collect();
        let h = profile_h(real.theta(), &ctx).unwrap();
        assert!((h - real.h()).norm() < 1e-12);
        let scale = c(-1.5, 0.4);
        ctx.y.iter_mut().for_each(|v| *v *= scale);
        assert!((profile_h(real.theta(), &ctx).unwrap() - real.h() * scale).norm() < 1e-11);
    }

    #[test]
    fn profiled_h_is_minimal() {
        let (ctx, _) = setup(48, 3, 2);
        let mut rng = trial_rng(77, 0);
        for _ in 0..5 {
            let theta = uniform_disk(&mut rng, 0.8);
            let h = profile_h(theta, &ctx).unwrap();
            let best = objective_at(h, theta, &ctx).unwrap();
            assert!((best - objective(theta, &ctx).unwrap()).abs() < 1e-9 * best.abs());
            for _ in 0..100 {
                let probe = h + complex_normal(&mut rng, 0.01);
                assert!(objective_at(probe, theta, &ctx).unwrap() >= best - 1e-9);
            }
        }
    }

    #[test]
    fn objective_at_zero_theta_closed_form() {
        let (ctx, _) = setup(40, 3, 3);
        let s = ctx.noise_weight() + ctx.params.var_nd;
        let xx: f64 = ctx.x.iter().map(|v| v.norm_sqr()).sum();
        let hls = dot(&ctx.x, &ctx.y) / xx;
        let rss: f64 = ctx.y.iter().zip(&ctx.x).map(|(y, x)| (y - hls * x).norm_sqr()).sum();
        let expect = 40.0 * s.ln() + rss / s;
        assert!((objective(c(0.0, 0.0), &ctx).unwrap() - expect).abs() < 1e-9 * expect.abs());
        assert!(objective(c(0.0, 1.0), &ctx).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (ctx, _) = setup(40, 4, 4);
        let mut rng = trial_rng(5, 0);
        for _ in 0..10 {
            let theta = uniform_disk(&mut rng, 0.7);
            let (gx, gy) = gradient(theta, &ctx).unwrap();
            let h = 1e-6;
            let fx = (objective(theta + h, &ctx).unwrap() - objective(theta - h, &ctx).unwrap()) / (2.0 * h);
            let fy = (objective(theta + c(0.0, h), &ctx).unwrap() - objective(theta - c(0.0, h), &ctx).unwrap()) / (2.0 * h);
            assert!((gx - fx).abs() < 1e-5 * fx.abs().max(1.0), "{gx} vs {fx}");
            assert!((gy - fy).abs() < 1e-5 * fy.abs().max(1.0), "{gy} vs {fy}");
        }
    }

    #[test]
    fn single_tap_has_zero_gradient() {
        let (ctx, _) = setup(20, 1, 6);
        let (gx, gy) = gradient(c(0.3, 0.2), &ctx).unwrap();
        assert_eq!((gx, gy), (0.0, 0.0));
    }

    #[test]
    fn mmse_init_shrinks_toward_zero() {
        let (ctx, _) = setup(20, 3, 7);
        let (h0, theta0) = mmse_init(&ctx.y, &ctx.x, &ctx.params, ctx.alpha).unwrap();
        assert!(h0.norm() <= (ctx.y[0] / ctx.x[0]).norm());
        assert!(theta0.norm() < 1.0);
    }

    #[test]
    fn mmse_init_diffuse_noiseless_limit() {
        let params = SystemParams { var_nr: 1e-12, var_nd: 1e-12, var_sr: 1e6, var_rd: 1e6, ..Default::default() };
        let x = [c(2.0, 1.0), c(1.0, -1.0)];
        let h = c(0.3, -0.7);
        let y = [h * x[0], h * x[1]];
        let (h0, _) = mmse_init(&y, &x, &params, 2.0).unwrap();
        assert!((h0 - h).norm() < 1e-9);
    }

    #[test]
    fn estimate_near_noiseless_converges_at_truth() {
        let params = SystemParams { var_nr: 1e-10, var_nd: 1e-10, n: 32, l: 4, ..Default::default() };
        let alpha = compute_alpha(&params).unwrap();
        let real = ChannelRealization::new(c(0.8, -0.3), c(0.6, 0.5), c(0.06, 0.05), alpha);
        let mut rng = trial_rng(8, 0);
        let x = TrainingSequence::bernoulli(32, params.p_s, &mut rng);
        let y = simulate_block(&params, &real, &x, &mut rng).unwrap();
        let ctx = LikelihoodContext::new(&x, &y, &params, alpha).unwrap();
        let est = bfgs_estimate(&ctx, Some(real.theta())).unwrap();
        assert!(est.converged);
        // log|C| still has slope at the truth, so one correction step may follow
        assert!(est.iterations <= 2, "{} {:?}", est.iterations, est.objective_trace);
        // noise std is 1e-5, so errors sit well below that
        assert!((est.theta_hat - real.theta()).norm() < 1e-5);
        assert!((est.h_hat - real.h()).norm() < 1e-5);
    }

    #[test]
    fn estimate_trace_is_non_increasing() {
        let (ctx, real) = setup(140, 3, 9);
        let est = bfgs_estimate(&ctx, None).unwrap();
        assert!(est.converged);
        assert!(est.theta_hat.norm() <= 1.0);
        assert!(est.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!((est.theta_hat - real.theta()).norm() < 0.1);
    }
}
