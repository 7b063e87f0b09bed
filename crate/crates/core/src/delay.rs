//! Unsynchronized relay: fractional processing delay `τ₀`.
//!
//! With raised-cosine shaping `p(t)` the sampled loop has taps
//! `g[k] = Σ_l θˡ p(kT_s − lτ₀)` for `k ≥ 0`, and the block follows
//! `y = h·H[g]x + d·H[g]n_r + n_d`. Anticausal samples of the pulse are
//! dropped, and `p` is cut to `|t| ≤ span·T_s`; the largest dropped sample is
//! below `1/(4πβ²span³)`.
//!
//! At `τ₀ = m·T_s` the Nyquist zeros make `g` the sparse pattern of the
//! synchronized model exactly.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crb::FisherMatrix;
use crate::error::{invalid, Error, Result};
use crate::estimator::{check_domain, colored_noise_weight, evaluate_taps, mmse_init, Evaluation};
use crate::linalg::{dot, trace_z_a_bh, BandedToeplitz, HermitianBand};
use crate::model::{compute_alpha, ChannelRealization, ReceivedBlock, SystemParams, TrainingSequence};
use crate::optim::{minimize, BfgsOptions};
use crate::rng::complex_normal_vec;

pub const DEFAULT_BETA: f64 = 0.22;
pub const DEFAULT_SPAN: f64 = 8.0;
const TAU_GRID: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayParams {
    pub base: SystemParams,
    /// True delay in seconds, used by the simulator.
    pub tau0: f64,
    pub t_s: f64,
    pub beta: f64,
    /// Pulse half-width in symbols.
    pub span: f64,
    /// Upper end of the `τ₀` search interval.
    pub tau_max: f64,
    /// Whether relay noise passes the fractional-delay taps (otherwise the
    /// synchronized `θᵏ` taps).
    pub noise_through_taps: bool,
}

impl Default for DelayParams {
    fn default() -> Self {
        Self {
            base: SystemParams::default(),
            tau0: 1.0,
            t_s: 1.0,
            beta: DEFAULT_BETA,
            span: DEFAULT_SPAN,
            tau_max: 2.0,
            noise_through_taps: true,
        }
    }
}

impl DelayParams {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.tau0 > 0.0) || !(self.t_s > 0.0) || !(self.tau_max > 0.0) {
            return Err(invalid("τ₀, T_s and τ_max must be positive"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid(format!("roll-off must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.span >= 1.0) {
            return Err(invalid(format!("pulse span must be at least one symbol, got {}", self.span)));
        }
        Ok(())
    }

    pub fn pulse(&self, t: f64) -> f64 {
        raised_cosine(t, self.beta, self.t_s, self.span)
    }

    pub fn pulse_derivative(&self, t: f64) -> f64 {
        raised_cosine_derivative(t, self.beta, self.t_s, self.span)
    }

    /// Tap count covering every `|kT_s − lτ₀| ≤ span·T_s`, capped at `N`.
    pub fn tap_len(&self, tau0: f64) -> usize {
        let reach = ((self.base.l - 1) as f64 * tau0 + self.span * self.t_s) / self.t_s;
        ((reach.floor() as usize) + 1).min(self.base.n)
    }
}

/// `sin(πx)/(πx)` and its derivative, exact zeros at nonzero integers.
fn sinc_and_derivative(x: f64) -> (f64, f64) {
    if x.abs() < 1e-4 {
        let px = PI * x;
        return (1.0 - px * px / 6.0, -PI * PI * x / 3.0);
    }
    if x == x.round() {
        let sign = if (x.round() as i64) % 2 == 0 { 1.0 } else { -1.0 };
        return (0.0, sign / x);
    }
    let s = (PI * x).sin() / (PI * x);
    (s, ((PI * x).cos() - s) / x)
}

/// `cos(πu/2)/(1 − u²)` and its `u`-derivative, with the removable points
/// `u = ±1` expanded to second order.
fn rolloff_and_derivative(u: f64) -> (f64, f64) {
    let eps = u.abs() - 1.0;
    if eps.abs() < 1e-4 {
        let c2 = 0.25 - PI * PI / 24.0;
        let r = PI / 4.0 * (1.0 - eps / 2.0 + c2 * eps * eps);
        let dr = PI / 4.0 * (-0.5 + 2.0 * c2 * eps);
        return (r, dr * u.signum());
    }
    let den = 1.0 - u * u;
    let (s, c) = (PI * u / 2.0).sin_cos();
    (c / den, (-(PI / 2.0) * s * den + 2.0 * u * c) / (den * den))
}

/// Raised-cosine pulse, zero beyond `span` symbols.
pub fn raised_cosine(t: f64, beta: f64, t_s: f64, span: f64) -> f64 {
    if t.abs() > span * t_s {
        return 0.0;
    }
    let x = t / t_s;
    let (s, _) = sinc_and_derivative(x);
    if beta == 0.0 {
        return s;
    }
    s * rolloff_and_derivative(2.0 * beta * x).0
}

/// `dp/dt` of [`raised_cosine`].
pub fn raised_cosine_derivative(t: f64, beta: f64, t_s: f64, span: f64) -> f64 {
    if t.abs() > span * t_s {
        return 0.0;
    }
    let x = t / t_s;
    let (s, ds) = sinc_and_derivative(x);
    if beta == 0.0 {
        return ds / t_s;
    }
    let (r, dr) = rolloff_and_derivative(2.0 * beta * x);
    (ds * r + s * dr * 2.0 * beta) / t_s
}

/// Continuous raised-cosine spectrum `P_c(ω)`, `∫p(t)e^{−jωt}dt`.
pub fn raised_cosine_spectrum(omega: f64, beta: f64, t_s: f64) -> f64 {
    let f = (omega / (2.0 * PI)).abs() * t_s;
    let lo = (1.0 - beta) / 2.0;
    let hi = (1.0 + beta) / 2.0;
    if f <= lo {
        t_s
    } else if f > hi {
        0.0
    } else {
        t_s / 2.0 * (1.0 + (PI / beta * (f - lo)).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayTaps {
    pub g: Vec<Complex64>,
    /// `∂g/∂θ`.
    pub b: Vec<Complex64>,
    /// `∂g/∂τ₀`.
    pub q: Vec<Complex64>,
}

/// `g`, `b`, `q` over the common length [`DelayParams::tap_len`].
pub fn delay_taps(theta: Complex64, tau0: f64, dp: &DelayParams) -> Result<DelayTaps> {
    check_domain(theta)?;
    if !(tau0 > 0.0) {
        return Err(invalid(format!("τ₀ must be positive, got {tau0}")));
    }
    let len = dp.tap_len(tau0);
    let zero = Complex64::new(0.0, 0.0);
    let (mut g, mut b, mut q) = (vec![zero; len], vec![zero; len], vec![zero; len]);
    // θ^l by repeated multiplication, as in the synchronized taps
    let mut pow = Complex64::new(1.0, 0.0);
    let mut prev = zero;
    for l in 0..dp.base.l {
        for k in 0..len {
            let t = k as f64 * dp.t_s - l as f64 * tau0;
            let p = dp.pulse(t);
            if p != 0.0 {
                g[k] += pow * p;
            }
            if l > 0 {
                b[k] += prev * (l as f64 * p);
                q[k] -= pow * (l as f64 * dp.pulse_derivative(t));
            }
        }
        prev = pow;
        pow *= theta;
    }
    Ok(DelayTaps { g, b, q })
}

fn trim(v: &[Complex64]) -> Vec<Complex64> {
    let end = v.iter().rposition(|z| z.norm_sqr() != 0.0).map_or(1, |i| i + 1);
    v[..end].to_vec()
}

fn padded(v: &[Complex64], len: usize) -> Vec<Complex64> {
    let mut out = v.to_vec();
    out.resize(len, Complex64::new(0.0, 0.0));
    out
}

/// `t_{τ₀}(λ) = Σ_k g[k]e^{jλk}` by Poisson summation over the full
/// (untruncated, two-sided) pulse.
pub fn dtft_symbol(theta: Complex64, tau0: f64, lambda: f64, dp: &DelayParams) -> Result<Complex64> {
    check_domain(theta)?;
    let mut acc = Complex64::new(0.0, 0.0);
    for m in -1..=1 {
        let shifted = lambda - 2.0 * PI * m as f64;
        let weight = raised_cosine_spectrum(shifted / dp.t_s, dp.beta, dp.t_s) / dp.t_s;
        if weight == 0.0 {
            continue;
        }
        let mut pow = Complex64::new(1.0, 0.0);
        let mut sum = Complex64::new(0.0, 0.0);
        for l in 0..dp.base.l {
            sum += pow * Complex64::from_polar(1.0, shifted * l as f64 * tau0 / dp.t_s);
            pow *= theta;
        }
        acc += sum * weight;
    }
    Ok(acc)
}

/// Simulates one block of the fractional-delay model.
///
/// At integer `τ₀` with relay noise through the taps this is the
/// synchronized simulator exactly.
pub fn simulate_delay<R: Rng + ?Sized>(
    dp: &DelayParams,
    real: &ChannelRealization,
    x: &TrainingSequence,
    rng: &mut R,
) -> Result<ReceivedBlock> {
    dp.validate()?;
    let n = dp.base.n;
    if x.len() != n {
        return Err(invalid(format!("training length {} != N = {n}", x.len())));
    }
    let theta = real.theta();
    if theta.norm_sqr() >= 1.0 {
        return Err(Error::Unstable(theta.norm_sqr()));
    }
    let taps = trim(&delay_taps(theta, dp.tau0, dp)?.g);
    let total = n + taps.len();
    let hop = BandedToeplitz::lower(&taps, total);
    let mut xp = x.as_slice().to_vec();
    xp.resize(total, Complex64::new(0.0, 0.0));
    let nr = complex_normal_vec(rng, total, dp.base.var_nr);
    let nd = complex_normal_vec(rng, total, dp.base.var_nd);
    let (h, d) = (real.h(), real.d());
    let mut y = if dp.noise_through_taps {
        let drive: Vec<Complex64> = xp.iter().zip(&nr).map(|(&xi, &ni)| h * xi + d * ni).collect();
        hop.matvec(&drive)
    } else {
        let sync = BandedToeplitz::lower(&crate::model::geometric_taps(theta, dp.base.l), total);
        let sx: Vec<Complex64> = xp.iter().map(|&xi| h * xi).collect();
        let sn: Vec<Complex64> = nr.iter().map(|&ni| d * ni).collect();
        hop.matvec(&sx).iter().zip(sync.matvec(&sn)).map(|(a, b)| a + b).collect()
    };
    for (yi, ni) in y.iter_mut().zip(nd) {
        *yi += ni;
    }
    y.truncate(n);
    Ok(ReceivedBlock::new(y))
}

#[derive(Debug, Clone)]
pub struct DelayContext {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub params: DelayParams,
    pub alpha: f64,
}

impl DelayContext {
    pub fn new(x: &TrainingSequence, y: &ReceivedBlock, dp: &DelayParams) -> Result<Self> {
        dp.validate()?;
        if x.len() != dp.base.n || y.len() != dp.base.n {
            return Err(invalid(format!("block lengths x={} y={} do not match N={}", x.len(), y.len(), dp.base.n)));
        }
        Ok(Self { x: x.as_slice().to_vec(), y: y.y.clone(), params: *dp, alpha: compute_alpha(&dp.base)? })
    }

    fn kappa(&self) -> f64 {
        colored_noise_weight(self.alpha, &self.params.base)
    }
}

fn evaluate(theta: Complex64, tau0: f64, ctx: &DelayContext) -> Result<(DelayTaps, Evaluation)> {
    let taps = delay_taps(theta, tau0, &ctx.params)?;
    let ev = evaluate_taps(&trim(&taps.g), &ctx.x, &ctx.y, ctx.kappa(), ctx.params.base.var_nd)?;
    Ok((taps, ev))
}

/// Profiled objective `f(θ, τ₀) = min_h {log|C| + ‖y − hH[g]x‖²_{C⁻¹}}`.
pub fn delay_objective(theta: Complex64, tau0: f64, ctx: &DelayContext) -> Result<f64> {
    Ok(evaluate(theta, tau0, ctx)?.1.f)
}

/// `(∂f/∂θ_x, ∂f/∂θ_y, ∂f/∂τ₀)` with `h` at its profiled value.
pub fn delay_gradient(theta: Complex64, tau0: f64, ctx: &DelayContext) -> Result<[f64; 3]> {
    let (taps, ev) = evaluate(theta, tau0, ctx)?;
    gradient_from(&taps, &ev, ctx)
}

fn gradient_from(taps: &DelayTaps, ev: &Evaluation, ctx: &DelayContext) -> Result<[f64; 3]> {
    let n = ctx.x.len();
    let kappa = ctx.kappa();
    // the selected inverse must cover the widest operator
    let len = taps.g.len();
    let g_op = BandedToeplitz::lower(&padded(&trim(&taps.g), len), n);
    let mut c = HermitianBand::scaled_identity(n, ctx.params.base.var_nd);
    c.add_gram(g_op.first_col(), kappa);
    let z = c.cholesky()?.selected_inverse();
    let v = &ev.whitened_residual;
    let gv = g_op.matvec_adjoint(v);
    // D = κ·tr(Z·S·Gᴴ) − κ·vᴴSGᴴv − ĥ·vᴴSx for S = ∂H[g]
    let d = |s: &[Complex64]| {
        let s_op = BandedToeplitz::lower(s, n);
        (trace_z_a_bh(&z, &s_op, &g_op) - dot(&s_op.matvec_adjoint(v), &gv)) * kappa
            - ev.h_hat * dot(v, &s_op.matvec(&ctx.x))
    };
    let d_theta = d(&taps.b);
    let d_tau = d(&taps.q);
    Ok([2.0 * d_theta.re, -2.0 * d_theta.im, 2.0 * d_tau.re])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayEstimate {
    pub h_hat: Complex64,
    pub theta_hat: Complex64,
    pub tau0_hat: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

/// BFGS over `(θ_x, θ_y, τ₀)` from `(θ, τ₀)`, with `τ₀` kept in `(0, τ_max]`.
pub fn estimate_delay_with(ctx: &DelayContext, init: (Complex64, f64), opts: &BfgsOptions) -> Result<DelayEstimate> {
    let tau_max = ctx.params.tau_max;
    let f = |z: &[f64]| {
        let theta = Complex64::new(z[0], z[1]);
        if theta.norm() >= 1.0 || !(z[2] > 0.0) || z[2] > tau_max {
            return None;
        }
        let (taps, ev) = evaluate(theta, z[2], ctx).ok()?;
        let g = gradient_from(&taps, &ev, ctx).ok()?;
        Some((ev.f, g.to_vec()))
    };
    let (theta0, tau0) = init;
    let out = minimize(f, &[theta0.re, theta0.im, tau0], opts).ok_or(Error::Domain(theta0.norm()))?;
    let theta_hat = Complex64::new(out.x[0], out.x[1]);
    let tau0_hat = out.x[2];
    Ok(DelayEstimate {
        h_hat: evaluate(theta_hat, tau0_hat, ctx)?.1.h_hat,
        theta_hat,
        tau0_hat,
        iterations: out.iterations,
        converged: out.converged,
        objective_trace: out.trace,
    })
}

/// Joint ML: the synchronized MMSE start for `θ`, a coarse grid over
/// `(0, τ_max]` for `τ₀`, then BFGS on all three coordinates.
pub fn joint_ml(y: &ReceivedBlock, x: &TrainingSequence, dp: &DelayParams) -> Result<DelayEstimate> {
    let ctx = DelayContext::new(x, y, dp)?;
    let (_, theta0) = mmse_init(&ctx.y, &ctx.x, &dp.base, ctx.alpha)?;
    let mut best = (f64::INFINITY, dp.tau_max);
    for k in 1..=TAU_GRID {
        let tau = dp.tau_max * k as f64 / TAU_GRID as f64;
        if let Ok(f) = delay_objective(theta0, tau, &ctx) {
            if f < best.0 {
                best = (f, tau);
            }
        }
    }
    estimate_delay_with(&ctx, (theta0, best.1), &BfgsOptions::default())
}

/// FIM of `(h, θ, τ₀)`; score `(∂/∂h*, ∂/∂θ*, ∂/∂τ₀)`, so the real `τ₀`
/// carries `2·Re` mean terms. Dense.
pub fn fim_delay(h: Complex64, theta: Complex64, tau0: f64, x: &[Complex64], dp: &DelayParams) -> Result<FisherMatrix> {
    dp.validate()?;
    let n = x.len();
    let alpha = compute_alpha(&dp.base)?;
    let kappa = Complex64::new(colored_noise_weight(alpha, &dp.base), 0.0);
    let taps = delay_taps(theta, tau0, dp)?;
    let toeplitz = |t: &[Complex64]| DMatrix::from_fn(n, n, |r, c| if r >= c && r - c < t.len() { t[r - c] } else { Complex64::new(0.0, 0.0) });
    let (g, b, q) = (toeplitz(&taps.g), toeplitz(&taps.b), toeplitz(&taps.q));
    let cov = &g * g.adjoint() * kappa + DMatrix::<Complex64>::identity(n, n) * Complex64::new(dp.base.var_nd, 0.0);
    let cinv = cov.cholesky().ok_or(Error::Singular("delay-model covariance"))?.inverse();
    let xv = DVector::from_column_slice(x);
    let mu = [&g * &xv, &b * &xv * h, &q * &xv * h];
    // ∂C/∂θ* and ∂C/∂τ₀
    let c_theta = &g * b.adjoint() * kappa;
    let c_tau = (&q * g.adjoint() + &g * q.adjoint()) * kappa;
    let w: Vec<DVector<Complex64>> = mu.iter().map(|m| &cinv * m).collect();
    let tr = |a: &DMatrix<Complex64>, b: &DMatrix<Complex64>| (&cinv * a * &cinv * b).trace();
    let g11 = mu[0].dotc(&w[0]);
    let g12 = mu[0].dotc(&w[1]);
    let g13 = mu[0].dotc(&w[2]);
    let g22 = mu[1].dotc(&w[1]) + tr(&c_theta, &c_theta.adjoint());
    let g23 = mu[1].dotc(&w[2]) + tr(&c_theta, &c_tau);
    let g33 = mu[2].dotc(&w[2]) * 2.0 + tr(&c_tau, &c_tau);
    FisherMatrix::new(DMatrix::from_row_slice(
        3,
        3,
        &[g11, g12, g13, g12.conj(), g22, g23, g13.conj(), g23.conj(), Complex64::new(g33.re, 0.0)],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crb::fim_exact_with_alpha;
    use crate::estimator::{objective, LikelihoodContext};
    use crate::model::{draw_realization, geometric_tap_derivatives, geometric_taps, simulate_block};
    use crate::rng::trial_rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn pulse_nyquist_and_limits() {
        assert_eq!(raised_cosine(0.0, 0.22, 1.0, 8.0), 1.0);
        for k in 1..8 {
            assert_eq!(raised_cosine(k as f64, 0.22, 1.0, 8.0), 0.0);
            assert_eq!(raised_cosine(-(k as f64), 0.5, 1.0, 8.0), 0.0);
        }
        let x = 0.37;
        assert!((raised_cosine(x, 0.0, 1.0, 8.0) - (PI * x).sin() / (PI * x)).abs() < 1e-15);
        // removable point t = T_s/(2β)
        let t0 = 1.0 / (2.0 * 0.25);
        let near = raised_cosine(t0 + 1e-7, 0.25, 1.0, 8.0);
        assert!((raised_cosine(t0, 0.25, 1.0, 8.0) - near).abs() < 1e-6);
        assert_eq!(raised_cosine(8.5, 0.22, 1.0, 8.0), 0.0);
    }

    #[test]
    fn pulse_derivative_matches_finite_differences() {
        let h = 1e-6;
        for beta in [0.0, 0.22, 0.5, 1.0] {
            for &t in &[0.0, 0.13, -0.71, 1.4, 2.0, 2.5, -3.3, 5.9] {
                let fd = (raised_cosine(t + h, beta, 1.0, 8.0) - raised_cosine(t - h, beta, 1.0, 8.0)) / (2.0 * h);
                let an = raised_cosine_derivative(t, beta, 1.0, 8.0);
                assert!((an - fd).abs() < 1e-6, "β={beta} t={t}: {an} {fd}");
            }
        }
        // across the removable point of β = 0.25
        let fd = (raised_cosine(2.0 + h, 0.25, 1.0, 8.0) - raised_cosine(2.0 - h, 0.25, 1.0, 8.0)) / (2.0 * h);
        assert!((raised_cosine_derivative(2.0, 0.25, 1.0, 8.0) - fd).abs() < 1e-6);
    }

    #[test]
    fn integer_delay_taps_are_synchronized_taps() {
        let dp = DelayParams { base: SystemParams { l: 4, ..Default::default() }, ..Default::default() };
        let th = c(0.4, -0.3);
        let taps = delay_taps(th, 1.0, &dp).unwrap();
        assert_eq!(trim(&taps.g), geometric_taps(th, 4));
        assert_eq!(trim(&taps.b), geometric_tap_derivatives(th, 4));
        let zero = delay_taps(c(0.0, 0.0), 0.7, &dp).unwrap();
        assert_eq!(trim(&zero.g), vec![c(1.0, 0.0)]);
        let two = delay_taps(th, 2.0, &dp).unwrap();
        assert_eq!(trim(&two.g), crate::model::delayed_taps(th, 4, 2));
    }

    #[test]
    fn tap_derivatives_match_finite_differences() {
        let dp = DelayParams::default();
        let h = 1e-6;
        for (th, tau) in [(c(0.3, 0.2), 0.7), (c(-0.5, 0.1), 1.3), (c(0.1, -0.6), 1.9)] {
            let t = delay_taps(th, tau, &dp).unwrap();
            let gp = delay_taps(th + h, tau, &dp).unwrap().g;
            let gm = delay_taps(th - h, tau, &dp).unwrap().g;
            let tp = delay_taps(th, tau + h, &dp).unwrap().g;
            let tm = delay_taps(th, tau - h, &dp).unwrap().g;
            for k in 0..t.g.len().min(tp.len()).min(tm.len()) {
                let fb = (gp[k] - gm[k]) / (2.0 * h);
                let fq = (tp[k] - tm[k]) / (2.0 * h);
                assert!((t.b[k] - fb).norm() < 1e-5 * (1.0 + fb.norm()));
                assert!((t.q[k] - fq).norm() < 1e-5 * (1.0 + fq.norm()), "k={k}: {} {}", t.q[k], fq);
            }
        }
    }

    #[test]
    fn dtft_symbol_matches_direct_sum() {
        let dp = DelayParams::default();
        let long = 4096.0;
        for (th, tau, lam) in [(c(0.3, 0.2), 0.7, 0.4), (c(-0.5, 0.1), 1.3, 2.9), (c(0.0, 0.0), 0.5, -1.0)] {
            let sym = dtft_symbol(th, tau, lam, &dp).unwrap();
            let mut direct = c(0.0, 0.0);
            let mut pow = c(1.0, 0.0);
            for l in 0..dp.base.l {
                for k in -4096i64..=4096 {
                    let p = raised_cosine(k as f64 - l as f64 * tau, dp.beta, 1.0, long);
                    direct += pow * p * Complex64::from_polar(1.0, lam * k as f64);
                }
                pow *= th;
            }
            assert!((sym - direct).norm() < 1e-6, "{sym} {direct}");
        }
        let th = c(0.4, 0.3);
        let t_sync: Complex64 = geometric_taps(th, dp.base.l).iter().enumerate().map(|(k, v)| v * Complex64::from_polar(1.0, 0.8 * k as f64)).sum();
        assert!((dtft_symbol(th, 1.0, 0.8, &dp).unwrap() - t_sync).norm() < 1e-12);
    }

    fn sample(dp: &DelayParams, seed: u64) -> (DelayContext, ChannelRealization) {
        let mut rng = trial_rng(seed, 0);
        let real = draw_realization(&dp.base, &mut rng).unwrap().realization;
        let x = TrainingSequence::bernoulli(dp.base.n, dp.base.p_s, &mut rng);
        let y = simulate_delay(dp, &real, &x, &mut rng).unwrap();
        (DelayContext::new(&x, &y, dp).unwrap(), real)
    }

    #[test]
    fn simulation_and_objective_reduce_at_one_symbol() {
        let dp = DelayParams { base: SystemParams { n: 50, ..Default::default() }, ..Default::default() };
        let mut r1 = trial_rng(4, 2);
        let mut r2 = trial_rng(4, 2);
        let real = draw_realization(&dp.base, &mut r1).unwrap().realization;
        let _ = draw_realization(&dp.base, &mut r2).unwrap();
        let x = TrainingSequence::bernoulli(50, dp.base.p_s, &mut r1);
        let _ = TrainingSequence::bernoulli(50, dp.base.p_s, &mut r2);
        let yd = simulate_delay(&dp, &real, &x, &mut r1).unwrap();
        let ys = simulate_block(&dp.base, &real, &x, &mut r2).unwrap();
        assert_eq!(yd.y, ys.y);
        let ctx = DelayContext::new(&x, &yd, &dp).unwrap();
        let core = LikelihoodContext::new(&x, &ys, &dp.base, ctx.alpha).unwrap();
        for th in [c(0.2, 0.1), c(-0.3, 0.5)] {
            assert_eq!(delay_objective(th, 1.0, &ctx).unwrap().to_bits(), objective(th, &core).unwrap().to_bits());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let dp = DelayParams { base: SystemParams { n: 60, ..Default::default() }, tau0: 0.8, ..Default::default() };
        let (ctx, _) = sample(&dp, 5);
        let h = 1e-6;
        // the pulse cut kinks f wherever kT_s − lτ₀ = span·T_s, e.g. τ₀ = 0.5
        for (th, tau) in [(c(0.2, 0.1), 0.8), (c(-0.4, 0.3), 1.35), (c(0.1, -0.5), 0.55)] {
            let g = delay_gradient(th, tau, &ctx).unwrap();
            let f = |t: Complex64, s: f64| delay_objective(t, s, &ctx).unwrap();
            let fd = [
                (f(th + h, tau) - f(th - h, tau)) / (2.0 * h),
                (f(th + c(0.0, h), tau) - f(th - c(0.0, h), tau)) / (2.0 * h),
                (f(th, tau + h) - f(th, tau - h)) / (2.0 * h),
            ];
            for i in 0..3 {
                assert!((g[i] - fd[i]).abs() < 1e-5 * (1.0 + fd[i].abs()), "{i}: {} {}", g[i], fd[i]);
            }
        }
    }

    #[test]
    fn noiseless_recovery_from_truth() {
        let base = SystemParams { n: 80, var_nr: 1e-14, var_nd: 1e-14, ..Default::default() };
        let dp = DelayParams { base, tau0: 0.6, ..Default::default() };
        let (ctx, real) = sample(&dp, 7);
        let est = estimate_delay_with(&ctx, (real.theta(), 0.6), &BfgsOptions::default()).unwrap();
        // noise std is 1e-7
        assert!((est.theta_hat - real.theta()).norm() < 1e-5);
        assert!((est.tau0_hat - 0.6).abs() < 1e-5);
        assert!((est.h_hat - real.h()).norm() < 1e-5 * real.h().norm());
    }

    #[test]
    fn joint_ml_finds_the_delay() {
        let base = SystemParams { p_s: 1000.0, ..Default::default() };
        let dp = DelayParams { base, tau0: 0.65, ..Default::default() };
        let mut rng = trial_rng(8, 0);
        let real = ChannelRealization::new(c(0.9, 0.3), c(0.7, -0.6), c(0.12, 0.2), compute_alpha(&base).unwrap());
        let x = TrainingSequence::bernoulli(base.n, base.p_s, &mut rng);
        let y = simulate_delay(&dp, &real, &x, &mut rng).unwrap();
        let est = joint_ml(&y, &x, &dp).unwrap();
        assert!((est.tau0_hat - 0.65).abs() < 0.05, "{}", est.tau0_hat);
        assert!((est.theta_hat - real.theta()).norm() < 0.05);
    }

    #[test]
    fn fim_is_hermitian_and_reduces_at_one_symbol() {
        let dp = DelayParams { base: SystemParams { n: 32, ..Default::default() }, ..Default::default() };
        let alpha = compute_alpha(&dp.base).unwrap();
        let (h, th) = (c(1.2, -0.4), c(0.3, 0.2));
        let x = TrainingSequence::bernoulli(32, dp.base.p_s, &mut trial_rng(1, 9));
        let fim = fim_delay(h, th, 1.0, x.as_slice(), &dp).unwrap();
        assert!(fim.hermitian_defect() < 1e-9 * fim.get(0, 0).norm());
        assert!(fim.min_eigenvalue() > 0.0);
        let core = fim_exact_with_alpha(h, th, x.as_slice(), alpha, &dp.base).unwrap();
        for r in 0..2 {
            for s in 0..2 {
                let (a, b) = (fim.get(r, s), core.get(r, s));
                assert!((a - b).norm() < 1e-9 * b.norm().max(core.get(r, r).re), "{r}{s}: {a} {b}");
            }
        }
    }
}
