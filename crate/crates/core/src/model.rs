//! System parameters, channel draws and block simulation for one relay.
//!
//! The end-to-end training block is `y = h·H_θ·x + d·H_θ·n_r + n_d` with
//! `h = α·h_sr·h_rd`, `θ = α·h_rr`, `d = α·h_rd`, and `H_θ` the lower banded
//! Toeplitz matrix with first column `[1, θ, …, θ^{L−1}, 0, …]`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::BandedToeplitz;
use crate::rng::{complex_normal, complex_normal_vec};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

/// Powers and variances are linear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Source transmit power, path loss included.
    pub p_s: f64,
    /// Relay transmit power budget.
    pub p_r: f64,
    pub var_sr: f64,
    pub var_rd: f64,
    pub var_rr: f64,
    pub var_nr: f64,
    pub var_nd: f64,
    /// Block (training) length.
    pub n: usize,
    /// Effective channel length in taps.
    pub l: usize,
    /// Relay processing delay in symbols.
    pub m: usize,
    pub energy_fraction: f64,
}

impl Default for SystemParams {
    /// N = 140, P_r = 30 dB, σ_rr² = −10 dB, P_s = 10 dB, unit link and noise variances, L = 3.
    fn default() -> Self {
        Self {
            p_s: 10.0,
            p_r: 1000.0,
            var_sr: 1.0,
            var_rd: 1.0,
            var_rr: 0.1,
            var_nr: 1.0,
            var_nd: 1.0,
            n: 140,
            l: 3,
            m: 1,
            energy_fraction: 0.99,
        }
    }
}

impl SystemParams {
    pub fn with_ps_db(mut self, db: f64) -> Self {
        self.p_s = db_to_linear(db);
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_taps(mut self, l: usize) -> Self {
        self.l = l;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("p_s", self.p_s),
            ("p_r", self.p_r),
            ("var_sr", self.var_sr),
            ("var_rd", self.var_rd),
            ("var_nr", self.var_nr),
            ("var_nd", self.var_nd),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.var_rr >= 0.0) {
            return Err(invalid(format!("var_rr must be non-negative, got {}", self.var_rr)));
        }
        if self.l < 1 || self.n <= self.l {
            return Err(invalid(format!("need N > L >= 1, got N={} L={}", self.n, self.l)));
        }
        if self.m < 1 {
            return Err(invalid("relay delay m must be at least 1"));
        }
        if !(self.energy_fraction > 0.0 && self.energy_fraction < 1.0) {
            return Err(invalid("energy_fraction must lie in (0, 1)"));
        }
        let alpha = compute_alpha(self)?;
        if alpha * alpha * self.var_rr >= 1.0 {
            return Err(Error::Unstable(alpha * alpha * self.var_rr));
        }
        Ok(())
    }
}

/// `α² = P_r / (P_s + P_r·σ_rr² + σ_r²)`.
///
/// Because `α² < 1/σ_rr²` the long-term loop gain `α²σ_rr²` stays below one.
pub fn compute_alpha(params: &SystemParams) -> Result<f64> {
    if !(params.p_r > 0.0) {
        return Err(invalid(format!("P_r must be positive, got {}", params.p_r)));
    }
    let den = params.p_s + params.p_r * params.var_rr + params.var_nr;
    if !(den > 0.0) {
        return Err(invalid("alpha denominator must be positive"));
    }
    Ok((params.p_r / den).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub h_sr: Complex64,
    pub h_rd: Complex64,
    pub h_rr: Complex64,
    pub alpha: f64,
}

impl ChannelRealization {
    pub fn new(h_sr: Complex64, h_rd: Complex64, h_rr: Complex64, alpha: f64) -> Self {
        Self { h_sr, h_rd, h_rr, alpha }
    }

    /// Compound source-destination gain `α·h_sr·h_rd`.
    pub fn h(&self) -> Complex64 {
        self.h_sr * self.h_rd * self.alpha
    }

    pub fn theta(&self) -> Complex64 {
        self.h_rr * self.alpha
    }

    pub fn d(&self) -> Complex64 {
        self.h_rd * self.alpha
    }

    pub fn is_stable(&self) -> bool {
        self.theta().norm_sqr() < 1.0
    }
}

/// A realization plus the number of unstable draws discarded before it.
#[derive(Debug, Clone, Copy)]
pub struct Draw {
    pub realization: ChannelRealization,
    pub rejected: usize,
}

/// Draws `h_sr`, `h_rd`, `h_rr` from their zero-mean complex Gaussians,
/// redrawing `h_rr` while `α²|h_rr|² ≥ 1`.
pub fn draw_realization<R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> Result<Draw> {
    let alpha = compute_alpha(params)?;
    let h_sr = complex_normal(rng, params.var_sr);
    let h_rd = complex_normal(rng, params.var_rd);
    let mut rejected = 0;
    loop {
        let h_rr = complex_normal(rng, params.var_rr);
        let real = ChannelRealization::new(h_sr, h_rd, h_rr, alpha);
        if real.is_stable() {
            return Ok(Draw { realization: real, rejected });
        }
        rejected += 1;
        if rejected > 10_000 {
            return Err(Error::Unstable(real.theta().norm_sqr()));
        }
    }
}

/// Average relay transmit power `α²(P_s|h_sr|² + σ_r²)/(1 − α²|h_rr|²)`.
pub fn relay_average_power(params: &SystemParams, real: &ChannelRealization) -> Result<f64> {
    let loop_gain = real.alpha * real.alpha * real.h_rr.norm_sqr();
    if loop_gain >= 1.0 {
        return Err(Error::Unstable(loop_gain));
    }
    let a2 = real.alpha * real.alpha;
    Ok(a2 * (params.p_s * real.h_sr.norm_sqr() + params.var_nr) / (1.0 - loop_gain))
}

/// Smallest `L ≥ 1` whose first `L` taps of `θᵏ` hold `energy_fraction` of the energy.
pub fn effective_length(theta_mag: f64, energy_fraction: f64) -> usize {
    if theta_mag <= 0.0 {
        return 1;
    }
    assert!(theta_mag < 1.0, "effective_length needs |theta| < 1");
    let fraction = energy_fraction.clamp(0.0, 1.0 - 1e-15);
    let r2 = theta_mag * theta_mag;
    let guess = ((1.0 - fraction).ln() / r2.ln()).ceil().max(1.0) as usize;
    let captured = |l: usize| 1.0 - r2.powi(l as i32);
    let mut l = guess.saturating_sub(1).max(1);
    while captured(l) < fraction {
        l += 1;
    }
    l
}

pub fn geometric_taps(theta: Complex64, l: usize) -> Vec<Complex64> {
    let mut taps = Vec::with_capacity(l);
    let mut p = Complex64::new(1.0, 0.0);
    for _ in 0..l {
        taps.push(p);
        p *= theta;
    }
    taps
}

/// `dθᵏ/dθ = kθ^{k−1}`.
pub fn geometric_tap_derivatives(theta: Complex64, l: usize) -> Vec<Complex64> {
    let mut taps = vec![Complex64::new(0.0, 0.0); l];
    let mut p = Complex64::new(1.0, 0.0);
    for (k, t) in taps.iter_mut().enumerate().skip(1) {
        *t = p * k as f64;
        p *= theta;
    }
    taps
}

pub fn build_h_theta(theta: Complex64, l: usize, n: usize) -> BandedToeplitz {
    BandedToeplitz::lower(&geometric_taps(theta, l), n)
}

/// `B_θ = ∂H_θ/∂θ`, first column `[0, 1, 2θ, …, (L−1)θ^{L−2}]`.
pub fn build_b_theta(theta: Complex64, l: usize, n: usize) -> BandedToeplitz {
    BandedToeplitz::lower(&geometric_tap_derivatives(theta, l), n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSequence {
    x: Vec<Complex64>,
    p_s: f64,
}

impl TrainingSequence {
    /// Requires `‖x‖² = N·P_s` to 1e−9 relative.
    pub fn new(x: Vec<Complex64>, p_s: f64) -> Result<Self> {
        let energy: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let target = x.len() as f64 * p_s;
        if x.is_empty() || (energy - target).abs() > 1e-9 * target {
            return Err(invalid(format!("training energy {energy} differs from N*P_s = {target}")));
        }
        Ok(Self { x, p_s })
    }

    /// Rescales `x` onto the power budget.
    pub fn normalized(x: Vec<Complex64>, p_s: f64) -> Result<Self> {
        let energy: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        if !(energy > 0.0) {
            return Err(invalid("training sequence must be nonzero"));
        }
        let s = (x.len() as f64 * p_s / energy).sqrt();
        Ok(Self { x: x.into_iter().map(|v| v * s).collect(), p_s })
    }

    /// Independent equiprobable `±√P_s` symbols.
    pub fn bernoulli<R: Rng + ?Sized>(n: usize, p_s: f64, rng: &mut R) -> Self {
        let a = p_s.sqrt();
        let x = (0..n).map(|_| Complex64::new(if rng.random::<bool>() { a } else { -a }, 0.0)).collect();
        Self { x, p_s }
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.x
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn power(&self) -> f64 {
        self.p_s
    }

    pub fn energy(&self) -> f64 {
        self.x.iter().map(|v| v.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceivedBlock {
    pub y: Vec<Complex64>,
    pub seed: Option<u64>,
    pub trial: Option<u64>,
}

impl ReceivedBlock {
    pub fn new(y: Vec<Complex64>) -> Self {
        Self { y, seed: None, trial: None }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Relay-loop taps with delay `m`: `θᵏ` at index `k·m`.
pub fn delayed_taps(theta: Complex64, l: usize, m: usize) -> Vec<Complex64> {
    let m = m.max(1);
    let mut taps = vec![Complex64::new(0.0, 0.0); (l - 1) * m + 1];
    for (k, v) in geometric_taps(theta, l).into_iter().enumerate() {
        taps[k * m] = v;
    }
    taps
}

/// Simulates one training block.
///
/// The transmission is `x` followed by an idle guard; `N + span` samples are
/// generated and the trailing `span` discarded, where `span` is the tap span.
pub fn simulate_block<R: Rng + ?Sized>(
    params: &SystemParams,
    real: &ChannelRealization,
    x: &TrainingSequence,
    rng: &mut R,
) -> Result<ReceivedBlock> {
    let n = params.n;
    if x.len() != n {
        return Err(invalid(format!("training length {} != N = {n}", x.len())));
    }
    TrainingSequence::new(x.as_slice().to_vec(), x.power())?;
    let theta = real.theta();
    if theta.norm_sqr() >= 1.0 {
        return Err(Error::Unstable(theta.norm_sqr()));
    }
    let taps = delayed_taps(theta, params.l, params.m);
    let total = n + taps.len();
    let hop = BandedToeplitz::lower(&taps, total);
    let mut xp = x.as_slice().to_vec();
    xp.resize(total, Complex64::new(0.0, 0.0));
    let nr = complex_normal_vec(rng, total, params.var_nr);
    let nd = complex_normal_vec(rng, total, params.var_nd);
    let (h, d) = (real.h(), real.d());
    let drive: Vec<Complex64> = xp.iter().zip(&nr).map(|(&xi, &ni)| h * xi + d * ni).collect();
    let mut y = hop.matvec(&drive);
    for (yi, ni) in y.iter_mut().zip(nd) {
        *yi += ni;
    }
    y.truncate(n);
    Ok(ReceivedBlock::new(y))
}
