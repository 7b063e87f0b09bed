//! Detection of data blocks through the estimated ISI channel
//! `[h, hθ, …, hθ^{L−1}]`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{invalid, Result};
use crate::estimator::{bfgs_estimate, covariance, LikelihoodContext};
use crate::linalg::{BandCholesky, BandedToeplitz};
use crate::model::{compute_alpha, draw_realization, geometric_taps, simulate_block, SystemParams, TrainingSequence};
use crate::rng::trial_rng;

/// Largest supported tap count; the trellis has `M^{L−1}` states.
pub const MAX_TAPS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constellation {
    #[default]
    Bpsk,
    Qpsk,
}

impl Constellation {
    /// Unit-energy points; QPSK is Gray-labelled by `(Re < 0, Im < 0)`.
    pub fn points(self) -> Vec<Complex64> {
        match self {
            Self::Bpsk => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            Self::Qpsk => vec![
                Complex64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2),
                Complex64::new(-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
                Complex64::new(FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
                Complex64::new(-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
            ],
        }
    }

    pub fn size(self) -> usize {
        self.points().len()
    }

    pub fn bits_per_symbol(self) -> u32 {
        match self {
            Self::Bpsk => 1,
            Self::Qpsk => 2,
        }
    }

    /// Index of the point with the largest `Re(p*·v)`; exact nearest-neighbor
    /// for constant-modulus alphabets.
    pub fn decide(self, v: Complex64) -> usize {
        match self {
            Self::Bpsk => usize::from(v.re < 0.0),
            Self::Qpsk => usize::from(v.re < 0.0) | (usize::from(v.im < 0.0) << 1),
        }
    }
}

/// Bit errors between two symbol-index sequences.
pub fn bit_errors(a: &[usize], b: &[usize]) -> u64 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones() as u64).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsiChannel {
    taps: Vec<Complex64>,
    constellation: Constellation,
}

impl IsiChannel {
    pub fn new(taps: Vec<Complex64>, constellation: Constellation) -> Result<Self> {
        if taps.is_empty() || taps.len() > MAX_TAPS {
            return Err(invalid(format!("tap count {} outside 1..={MAX_TAPS}", taps.len())));
        }
        Ok(Self { taps, constellation })
    }

    /// Taps `gain·h·θ^k`, `k < L`; `gain` carries the symbol amplitude.
    pub fn from_h_theta(h: Complex64, theta: Complex64, l: usize, gain: f64, constellation: Constellation) -> Result<Self> {
        Self::new(geometric_taps(theta, l).into_iter().map(|t| t * h * gain).collect(), constellation)
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    pub fn constellation(&self) -> Constellation {
        self.constellation
    }

    /// Noiseless output for symbol indices, starting from an idle channel.
    pub fn output(&self, symbols: &[usize]) -> Vec<Complex64> {
        let points = self.constellation.points();
        let s: Vec<Complex64> = symbols.iter().map(|&i| points[i]).collect();
        BandedToeplitz::lower(&self.taps, s.len().max(1)).matvec(&s)
    }
}

/// Noise model behind the Viterbi branch metric.
#[derive(Debug, Clone, Copy)]
pub enum NoiseCovMode<'a> {
    /// Euclidean distance on the raw samples.
    White,
    /// Euclidean distance after whitening by the banded Cholesky factor of
    /// `C`, evaluated per survivor.
    Whitened(&'a BandCholesky),
}

/// Maximum-likelihood sequence detection over the `M^{L−1}`-state trellis.
///
/// The block starts from an idle channel. With [`NoiseCovMode::Whitened`],
/// each survivor carries its own whitened-residual history.
pub fn viterbi_detect(y: &[Complex64], chan: &IsiChannel, mode: NoiseCovMode<'_>) -> Result<Vec<usize>> {
    let n = y.len();
    if let NoiseCovMode::Whitened(chol) = mode {
        if chol.n() != n {
            return Err(invalid(format!("whitening factor size {} != block length {n}", chol.n())));
        }
    }
    let points = chan.constellation.points();
    let m = points.len();
    let mem = chan.taps.len() - 1;
    let states = m.pow(mem as u32);
    let hist = match mode {
        NoiseCovMode::White => 0,
        NoiseCovMode::Whitened(chol) => chol.bandwidth(),
    };

    let mut metric = vec![f64::INFINITY; states];
    metric[0] = 0.0;
    // whitened residuals per survivor, most recent first
    let mut memory: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); hist]; states];
    let mut back: Vec<Vec<(u32, u8)>> = Vec::with_capacity(n);

    let mut next_metric = vec![f64::INFINITY; states];
    let mut next_memory = memory.clone();
    for (t, &yt) in y.iter().enumerate() {
        next_metric.iter_mut().for_each(|v| *v = f64::INFINITY);
        let mut choice = vec![(0u32, 0u8); states];
        for s in 0..states {
            if !metric[s].is_finite() {
                continue;
            }
            let mut isi = Complex64::new(0.0, 0.0);
            let mut digits = s;
            for k in 1..=mem {
                if k <= t {
                    isi += chan.taps[k] * points[digits % m];
                }
                digits /= m;
            }
            for (a, &pa) in points.iter().enumerate() {
                let e = yt - chan.taps[0] * pa - isi;
                let (w, branch) = match mode {
                    NoiseCovMode::White => (e, e.norm_sqr()),
                    NoiseCovMode::Whitened(chol) => {
                        let mut acc = e;
                        for d in 1..=hist.min(t) {
                            acc -= chol.factor_entry(t, t - d) * memory[s][d - 1];
                        }
                        let w = acc / chol.factor_entry(t, t).re;
                        (w, w.norm_sqr())
                    }
                };
                let ns = if mem == 0 { 0 } else { (s * m + a) % states };
                let cand = metric[s] + branch;
                if cand < next_metric[ns] {
                    next_metric[ns] = cand;
                    choice[ns] = (s as u32, a as u8);
                    if hist > 0 {
                        let mem_ns = &mut next_memory[ns];
                        mem_ns[1..].copy_from_slice(&memory[s][..hist - 1]);
                        mem_ns[0] = w;
                    }
                }
            }
        }
        std::mem::swap(&mut metric, &mut next_metric);
        std::mem::swap(&mut memory, &mut next_memory);
        back.push(choice);
    }

    let mut state = (0..states).min_by(|&a, &b| metric[a].total_cmp(&metric[b])).unwrap_or(0);
    let mut out = vec![0usize; n];
    for t in (0..n).rev() {
        let (prev, a) = back[t][state];
        out[t] = a as usize;
        state = prev as usize;
    }
    Ok(out)
}

/// Per-symbol decisions on `h*·y[n]`, treating ISI as noise.
pub fn mf_detect(y: &[Complex64], h: Complex64, constellation: Constellation) -> Vec<usize> {
    y.iter().map(|v| constellation.decide(h.conj() * v)).collect()
}

/// `R⁻¹y` with `C(θ) = RRᴴ`.
pub fn whiten(y: &[Complex64], theta: Complex64, alpha: f64, params: &SystemParams) -> Result<Vec<Complex64>> {
    let chol = covariance(theta, alpha, params, y.len(), params.l.min(y.len()))?.cholesky()?;
    Ok(chol.solve_lower(y))
}

/// Matched filter on the whitened block `z = R⁻¹y`: per-symbol decisions on
/// `h*·z[n]`, the strongest tap of the whitened channel `R⁻¹·hH_θ` being
/// `h/R[n,n]`.
pub fn whitened_mf_detect(y: &[Complex64], h: Complex64, chol: &BandCholesky, constellation: Constellation) -> Result<Vec<usize>> {
    if chol.n() != y.len() {
        return Err(invalid(format!("whitening factor size {} != block length {}", chol.n(), y.len())));
    }
    Ok(mf_detect(&chol.solve_lower(y), h, constellation))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    Viterbi,
    ViterbiUnwhitened,
    Mf,
    WhitenedMf,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::Viterbi, Detector::ViterbiUnwhitened, Detector::WhitenedMf, Detector::Mf];

    pub fn name(self) -> &'static str {
        match self {
            Self::Viterbi => "viterbi",
            Self::ViterbiUnwhitened => "viterbi_unwhitened",
            Self::Mf => "mf",
            Self::WhitenedMf => "whitened_mf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsiMode {
    Genie,
    #[default]
    Estimated,
}

/// Wilson score interval for `errors` successes in `trials`, two-sided at `z`.
pub fn wilson_interval(errors: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// 97.5% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerEstimate {
    pub detector: Detector,
    pub bit_errors: u64,
    pub bits: u64,
    pub ber: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerConfig {
    pub detectors: Vec<Detector>,
    pub blocks: u64,
    pub csi: CsiMode,
    pub constellation: Constellation,
    pub seed: u64,
}

/// Monte-Carlo BER: each block draws a channel, optionally estimates it from
/// a ±1 training block, then detects an independent data block with every
/// requested detector (paired comparison).
pub fn ber_experiment(params: &SystemParams, config: &BerConfig) -> Result<Vec<BerEstimate>> {
    if config.blocks == 0 {
        return Err(invalid("BER experiment needs at least one block"));
    }
    params.validate()?;
    let alpha = compute_alpha(params)?;
    let per_block: Vec<Vec<u64>> = (0..config.blocks)
        .into_par_iter()
        .map(|trial| ber_block(params, config, alpha, trial))
        .collect::<Result<_>>()?;
    let bits = config.blocks * params.n as u64 * config.constellation.bits_per_symbol() as u64;
    Ok(config
        .detectors
        .iter()
        .enumerate()
        .map(|(i, &detector)| {
            let errors: u64 = per_block.iter().map(|b| b[i]).sum();
            let (ci_low, ci_high) = wilson_interval(errors, bits, Z_95);
            BerEstimate { detector, bit_errors: errors, bits, ber: errors as f64 / bits as f64, ci_low, ci_high }
        })
        .collect())
}

fn ber_block(params: &SystemParams, config: &BerConfig, alpha: f64, trial: u64) -> Result<Vec<u64>> {
    use rand::Rng;
    let mut rng = trial_rng(config.seed, trial);
    let real = draw_realization(params, &mut rng)?.realization;
    let (h, theta) = match config.csi {
        CsiMode::Genie => (real.h(), real.theta()),
        CsiMode::Estimated => {
            let x = TrainingSequence::bernoulli(params.n, params.p_s, &mut rng);
            let y = simulate_block(params, &real, &x, &mut rng)?;
            let ctx = LikelihoodContext::new(&x, &y, params, alpha)?;
            let est = bfgs_estimate(&ctx, None)?;
            let theta = if est.theta_hat.norm() >= 0.999 { est.theta_hat * (0.999 / est.theta_hat.norm()) } else { est.theta_hat };
            (est.h_hat, theta)
        }
    };
    let constellation = config.constellation;
    let m = constellation.size();
    let symbols: Vec<usize> = (0..params.n).map(|_| rng.random_range(0..m)).collect();
    let points = constellation.points();
    let amp = params.p_s.sqrt();
    let data = TrainingSequence::new(symbols.iter().map(|&i| points[i] * amp).collect(), params.p_s)?;
    let y = simulate_block(params, &real, &data, &mut rng)?.y;

    let l = params.l.min(params.n);
    let chan = IsiChannel::from_h_theta(h, theta, l, amp, constellation)?;
    let chol = covariance(theta, alpha, params, params.n, l)?.cholesky()?;
    config
        .detectors
        .iter()
        .map(|d| {
            let decided = match d {
                Detector::Viterbi => viterbi_detect(&y, &chan, NoiseCovMode::Whitened(&chol))?,
                Detector::ViterbiUnwhitened => viterbi_detect(&y, &chan, NoiseCovMode::White)?,
                Detector::Mf => mf_detect(&y, h, constellation),
                Detector::WhitenedMf => whitened_mf_detect(&y, h, &chol, constellation)?,
            };
            Ok(bit_errors(&symbols, &decided))
        })
        .collect()
}
