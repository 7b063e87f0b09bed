//! Seeded experiment runner behind the `fdrelay` binary.
//!
//! A TOML config names one experiment and one sweep axis; the runner returns a
//! [`Table`] that is written as CSV. Powers in configs are in dB and are
//! converted here; everything below this module is linear.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crb::{fim_exact_with_alpha, AsymptoticSetup, TraceMode};
use crate::delay::{fim_delay, joint_ml, simulate_delay, DelayParams, DEFAULT_BETA, DEFAULT_SPAN};
use crate::design::{adaptive_sinusoid, approximate_design, make_sinusoid, optimize_exact_with};
use crate::equalization::{ber_experiment, BerConfig, Constellation, CsiMode, Detector};
use crate::error::{Error, Result};
use crate::estimator::{bfgs_estimate_with, random_init, LikelihoodContext};
use crate::freq_selective::{mse_vs_n, FreqSelParams};
use crate::model::{
    compute_alpha, db_to_linear, draw_realization, effective_length, simulate_block, ChannelRealization, SystemParams,
    TrainingSequence,
};
use crate::multi_relay::{crb_vs_m_with, mse_vs_m, optimal_m, CovarianceTerm, MultiRelayParams};
use crate::optim::BfgsOptions;
use crate::rng::trial_rng;

/// Seed used when neither the config nor `FDRELAY_SEED` sets one.
pub const DEFAULT_SEED: u64 = 1;
pub const SEED_ENV: &str = "FDRELAY_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// MSE of `ĥ`, `θ̂` against exact and asymptotic CRBs vs `P_s`.
    Fig1,
    /// BFGS iterations, MMSE vs random initialization, vs `P_s`.
    Fig2,
    /// Mean objective per iteration for one fixed channel.
    Fig3,
    /// Asymptotic `CRB_θ` for designed and random training vs `P_s`.
    Fig4,
    /// Exact vs asymptotic CRB and estimator MSE vs `N`.
    Fig5,
    /// Detector BER vs `P_s`.
    Fig6,
    /// Frequency-selective tap MSE vs `N`.
    Fig7,
    /// Multi-relay CRBs and MSEs vs `M`.
    Fig8,
    /// Fractional-delay MSE and CRB vs `P_s`.
    Delay,
    /// Per-block MSE when each block's training is designed from the
    /// previous block's estimate.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Sweep {
    PsDb(Vec<f64>),
    N(Vec<usize>),
    M(Vec<usize>),
}

impl Sweep {
    fn name(&self) -> &'static str {
        match self {
            Self::PsDb(_) => "ps_db",
            Self::N(_) => "n",
            Self::M(_) => "m",
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Self::PsDb(v) => v.is_empty(),
            Self::N(v) | Self::M(v) => v.is_empty(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub ps_db: f64,
    pub pr_db: f64,
    pub var_rr_db: f64,
    pub var_sr: f64,
    pub var_rd: f64,
    pub var_nr: f64,
    pub var_nd: f64,
    pub n: usize,
    pub l: usize,
    pub energy_fraction: f64,
    /// Pick `L` per realization from `|θ|` (capped at `N/2`) instead of `l`.
    pub adaptive_taps: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            ps_db: 10.0,
            pr_db: 30.0,
            var_rr_db: -10.0,
            var_sr: 1.0,
            var_rd: 1.0,
            var_nr: 1.0,
            var_nd: 1.0,
            n: 140,
            l: 3,
            energy_fraction: 0.99,
            adaptive_taps: false,
        }
    }
}

impl SystemConfig {
    pub fn params(&self) -> SystemParams {
        SystemParams {
            p_s: db_to_linear(self.ps_db),
            p_r: db_to_linear(self.pr_db),
            var_sr: self.var_sr,
            var_rd: self.var_rd,
            var_rr: db_to_linear(self.var_rr_db),
            var_nr: self.var_nr,
            var_nd: self.var_nd,
            n: self.n,
            l: self.l,
            m: 1,
            energy_fraction: self.energy_fraction,
        }
    }
}

/// Fixed channel for the single-channel experiments, as `[re, im]` pairs.
/// Without `h` the gain is `α` (so `|h|² = α²`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<[f64; 2]>,
    pub theta: [f64; 2],
}

impl ChannelConfig {
    pub fn theta(&self) -> Complex64 {
        Complex64::new(self.theta[0], self.theta[1])
    }

    pub fn h(&self, alpha: f64) -> Complex64 {
        self.h.map_or(Complex64::new(alpha, 0.0), |[re, im]| Complex64::new(re, im))
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { h: None, theta: [0.3, 0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreqSelConfig {
    pub var_sr_taps: Vec<f64>,
    pub var_rd_taps: Vec<f64>,
}

impl Default for FreqSelConfig {
    fn default() -> Self {
        Self { var_sr_taps: vec![0.5, 0.5], var_rd_taps: vec![0.5, 0.5] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiRelayConfig {
    pub k_db: f64,
    pub gamma: f64,
    /// Training frequency for the asymptotic bounds.
    pub lambda: f64,
    pub term: CovarianceTerm,
    pub m_max: usize,
}

impl Default for MultiRelayConfig {
    fn default() -> Self {
        Self { k_db: -60.0, gamma: 3.71, lambda: std::f64::consts::FRAC_PI_2, term: CovarianceTerm::FirstRelay, m_max: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayConfig {
    /// True delay in symbols.
    pub tau0: f64,
    pub beta: f64,
    pub span: f64,
    pub tau_max: f64,
    pub noise_through_taps: bool,
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self { tau0: 0.6, beta: DEFAULT_BETA, span: DEFAULT_SPAN, tau_max: 2.0, noise_through_taps: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub trials: usize,
    pub output: PathBuf,
    /// Blocks per channel for the adaptive experiment.
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default)]
    pub trace_mode: TraceMode,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub freq_selective: FreqSelConfig,
    #[serde(default)]
    pub multi_relay: MultiRelayConfig,
    #[serde(default)]
    pub delay: DelayConfig,
    pub sweep: Sweep,
}

fn default_blocks() -> usize {
    4
}

fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_error("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(&path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { field, message } => config_error(&format!("{}: {field}", path.display()), message),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_error("config", e.to_string()))
    }

    /// Config seed, else `FDRELAY_SEED`, else [`DEFAULT_SEED`].
    pub fn resolved_seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        seed_from_env()
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(config_error("trials", "must be at least 1"));
        }
        if self.sweep.is_empty() {
            return Err(config_error("sweep", "axis has no values"));
        }
        let expected = match self.experiment {
            ExperimentKind::Fig5 | ExperimentKind::Fig7 => "n",
            ExperimentKind::Fig8 => "m",
            _ => "ps_db",
        };
        if self.sweep.name() != expected {
            return Err(config_error(
                "sweep",
                format!("{:?} sweeps {expected}, not {}", self.experiment, self.sweep.name()),
            ));
        }
        if self.blocks == 0 {
            return Err(config_error("blocks", "must be at least 1"));
        }
        self.system.params().validate().map_err(|e| config_error("system", e.to_string()))?;
        if self.channel.theta().norm() >= 1.0 {
            return Err(config_error("channel.theta", "must lie inside the unit disk"));
        }
        Ok(())
    }
}

pub fn seed_from_env() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| config_error(SEED_ENV, format!("not an unsigned integer: {v:?}"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

/// Header plus rows of already formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        self.rows.iter().map(|r| r[i].parse().ok()).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for row in &self.rows {
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn cells(values: &[&dyn Display]) -> Vec<String> {
    values.iter().map(|v| v.to_string()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// Taps for one realization: `effective_length(|θ|)` within `[2, N/2]`; a
/// single tap would leave `θ` out of the model.
pub fn realization_taps(params: &SystemParams, theta: Complex64) -> usize {
    effective_length(theta.norm(), params.energy_fraction).clamp(2, (params.n / 2).max(2))
}

/// Realization with the given compound `h`, `θ` and `d = α`.
pub fn fixed_realization(h: Complex64, theta: Complex64, alpha: f64) -> ChannelRealization {
    ChannelRealization::new(h / alpha, Complex64::new(1.0, 0.0), theta / alpha, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationPoint {
    pub ps_db: f64,
    pub mse_h: f64,
    pub mse_theta: f64,
    pub crb_h: f64,
    pub crb_theta: f64,
    pub crb_h_asym: f64,
    pub crb_theta_asym: f64,
    /// Mean of `|ĥ−h|²/CRB_h` over realizations.
    pub eff_h: f64,
    /// Mean of `|θ̂−θ|²/CRB_θ` over realizations.
    pub eff_theta: f64,
    pub iter_mmse_mean: f64,
    pub iter_mmse_median: f64,
    pub iter_random_mean: f64,
    pub iter_random_median: f64,
}

struct TrialOutcome {
    err_h: f64,
    err_theta: f64,
    crb_h: f64,
    crb_theta: f64,
    crb_h_asym: f64,
    crb_theta_asym: f64,
    iter_mmse: f64,
    iter_random: f64,
}

/// Channels redrawn per trial with ±1 training. Trial `k` uses stream `k` at
/// every `P_s`, so points are paired. Random-init runs are skipped unless
/// `with_random`.
pub fn estimation_sweep(
    base: &SystemParams,
    adaptive_taps: bool,
    ps_db: &[f64],
    trials: usize,
    seed: u64,
    with_random: bool,
) -> Result<Vec<EstimationPoint>> {
    let opts = BfgsOptions::default();
    ps_db
        .iter()
        .map(|&db| {
            let params = base.with_ps_db(db);
            params.validate()?;
            let alpha = compute_alpha(&params)?;
            let runs: Vec<TrialOutcome> = (0..trials as u64)
                .into_par_iter()
                .map(|trial| {
                    let mut rng = trial_rng(seed, trial);
                    let real = draw_realization(&params, &mut rng)?.realization;
                    let l = if adaptive_taps { realization_taps(&params, real.theta()) } else { params.l };
                    let p = params.with_taps(l);
                    let x = TrainingSequence::bernoulli(p.n, p.p_s, &mut rng);
                    let y = simulate_block(&p, &real, &x, &mut rng)?;
                    let ctx = LikelihoodContext::new(&x, &y, &p, alpha)?;
                    let est = bfgs_estimate_with(&ctx, None, &opts)?;
                    let iter_random = if with_random {
                        bfgs_estimate_with(&ctx, Some(random_init(&mut rng)), &opts)?.iterations as f64
                    } else {
                        f64::NAN
                    };
                    let exact = fim_exact_with_alpha(real.h(), real.theta(), x.as_slice(), alpha, &p)?.crb_diagonal()?;
                    let asym = AsymptoticSetup::from_params(real.h(), real.theta(), &p, TraceMode::ClosedForm)?
                        .crb_for_training(x.as_slice())?;
                    Ok(TrialOutcome {
                        err_h: (est.h_hat - real.h()).norm_sqr(),
                        err_theta: (est.theta_hat - real.theta()).norm_sqr(),
                        crb_h: exact[0],
                        crb_theta: exact[1],
                        crb_h_asym: asym.crb_h,
                        crb_theta_asym: asym.crb_theta,
                        iter_mmse: est.iterations as f64,
                        iter_random,
                    })
                })
                .collect::<Result<_>>()?;
            let col = |f: fn(&TrialOutcome) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
            let (it_m, it_r) = (col(|r| r.iter_mmse), col(|r| r.iter_random));
            Ok(EstimationPoint {
                ps_db: db,
                mse_h: mean(&col(|r| r.err_h)),
                mse_theta: mean(&col(|r| r.err_theta)),
                crb_h: mean(&col(|r| r.crb_h)),
                crb_theta: mean(&col(|r| r.crb_theta)),
                crb_h_asym: mean(&col(|r| r.crb_h_asym)),
                crb_theta_asym: mean(&col(|r| r.crb_theta_asym)),
                eff_h: mean(&col(|r| r.err_h / r.crb_h)),
                eff_theta: mean(&col(|r| r.err_theta / r.crb_theta)),
                iter_mmse_mean: mean(&it_m),
                iter_mmse_median: median(&it_m),
                iter_random_mean: mean(&it_r),
                iter_random_median: median(&it_r),
            })
        })
        .collect()
}

/// Mean objective after each BFGS iteration over noise draws at a fixed
/// channel, MMSE and random start. Shorter traces are held at their last value.
pub fn objective_traces(
    params: &SystemParams,
    h: Complex64,
    theta: Complex64,
    trials: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    let alpha = compute_alpha(params)?;
    let real = fixed_realization(h, theta, alpha);
    let opts = BfgsOptions::default();
    let runs: Vec<(Vec<f64>, Vec<f64>)> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let x = TrainingSequence::bernoulli(params.n, params.p_s, &mut rng);
            let y = simulate_block(params, &real, &x, &mut rng)?;
            let ctx = LikelihoodContext::new(&x, &y, params, alpha)?;
            let a = bfgs_estimate_with(&ctx, None, &opts)?.objective_trace;
            let b = bfgs_estimate_with(&ctx, Some(random_init(&mut rng)), &opts)?.objective_trace;
            Ok((a, b))
        })
        .collect::<Result<_>>()?;
    type Pick = fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>;
    let average = |pick: Pick| {
        let len = runs.iter().map(|r| pick(r).len()).max().unwrap_or(0);
        (0..len)
            .map(|i| mean(&runs.iter().map(|r| *pick(r).get(i).or(pick(r).last()).unwrap()).collect::<Vec<_>>()))
            .collect::<Vec<f64>>()
    };
    Ok((average(|r| &r.0), average(|r| &r.1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingPoint {
    pub ps_db: f64,
    pub crb_exact_design: f64,
    pub crb_approx_design: f64,
    pub crb_bernoulli: f64,
}

/// Asymptotic `CRB_θ` with `‖x‖² = N·P_s` for the exact and approximate
/// sinusoid designs and the mean over `trials` random ±1 sequences.
/// `h = None` sets `h = α` at each `P_s`.
pub fn training_comparison(
    base: &SystemParams,
    h: Option<Complex64>,
    theta: Complex64,
    ps_db: &[f64],
    trials: usize,
    seed: u64,
    mode: TraceMode,
) -> Result<Vec<TrainingPoint>> {
    ps_db
        .iter()
        .map(|&db| {
            let params = base.with_ps_db(db);
            let alpha = compute_alpha(&params)?;
            let setup = AsymptoticSetup::from_params(h.unwrap_or(Complex64::new(alpha, 0.0)), theta, &params, mode)?;
            let energy = params.n as f64 * params.p_s;
            let exact = optimize_exact_with(&setup)?;
            let approx = approximate_design(&setup);
            let random: Vec<f64> = (0..trials as u64)
                .into_par_iter()
                .map(|trial| {
                    let x = TrainingSequence::bernoulli(params.n, params.p_s, &mut trial_rng(seed, trial));
                    Ok(setup.crb_for_training(x.as_slice())?.crb_theta)
                })
                .collect::<Result<_>>()?;
            Ok(TrainingPoint {
                ps_db: db,
                crb_exact_design: setup.f_theta(exact.lambda_star) / energy,
                crb_approx_design: setup.f_theta(approx.lambda_star) / energy,
                crb_bernoulli: mean(&random),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthPoint {
    pub n: usize,
    pub lambda: f64,
    pub crb_h_exact: f64,
    pub crb_theta_exact: f64,
    pub crb_h_asym: f64,
    pub crb_theta_asym: f64,
    pub mse_h: f64,
    pub mse_theta: f64,
}

/// Bounds and estimator MSE for the approximate-design sinusoid at each `N`,
/// fixed channel. `trials = 0` skips the Monte-Carlo part.
pub fn length_sweep(
    base: &SystemParams,
    h: Complex64,
    theta: Complex64,
    ns: &[usize],
    trials: usize,
    seed: u64,
    mode: TraceMode,
) -> Result<Vec<LengthPoint>> {
    let alpha = compute_alpha(base)?;
    let setup = AsymptoticSetup::from_params(h, theta, base, mode)?;
    let lambda = approximate_design(&setup).lambda_star;
    let real = fixed_realization(h, theta, alpha);
    let opts = BfgsOptions::default();
    ns.iter()
        .map(|&n| {
            let params = base.with_n(n);
            params.validate()?;
            let x = make_sinusoid(lambda, n, params.p_s)?;
            let exact = fim_exact_with_alpha(h, theta, x.as_slice(), alpha, &params)?.crb_diagonal()?;
            let asym = setup.crb(lambda, x.energy());
            let errs: Vec<(f64, f64)> = (0..trials as u64)
                .into_par_iter()
                .map(|trial| {
                    let mut rng = trial_rng(seed, trial);
                    let y = simulate_block(&params, &real, &x, &mut rng)?;
                    let est = bfgs_estimate_with(&LikelihoodContext::new(&x, &y, &params, alpha)?, None, &opts)?;
                    Ok(((est.h_hat - h).norm_sqr(), (est.theta_hat - theta).norm_sqr()))
                })
                .collect::<Result<_>>()?;
            let (mse_h, mse_theta) = if errs.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (mean(&errs.iter().map(|e| e.0).collect::<Vec<_>>()), mean(&errs.iter().map(|e| e.1).collect::<Vec<_>>()))
            };
            Ok(LengthPoint {
                n,
                lambda,
                crb_h_exact: exact[0],
                crb_theta_exact: exact[1],
                crb_h_asym: asym.crb_h,
                crb_theta_asym: asym.crb_theta,
                mse_h,
                mse_theta,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayPoint {
    pub ps_db: f64,
    pub mse_h: f64,
    pub mse_theta: f64,
    pub mse_tau0: f64,
    pub crb_h: f64,
    pub crb_theta: f64,
    pub crb_tau0: f64,
}

/// Joint ML of `(h, θ, τ₀)` at a fixed channel with ±1 training.
pub fn delay_sweep(
    template: &DelayParams,
    h: Complex64,
    theta: Complex64,
    ps_db: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<DelayPoint>> {
    ps_db
        .iter()
        .map(|&db| {
            let dp = DelayParams { base: template.base.with_ps_db(db), ..*template };
            dp.validate()?;
            let real = fixed_realization(h, theta, compute_alpha(&dp.base)?);
            let crb_x = TrainingSequence::bernoulli(dp.base.n, dp.base.p_s, &mut trial_rng(seed, u64::MAX));
            let crb = fim_delay(h, theta, dp.tau0, crb_x.as_slice(), &dp)?.crb_diagonal()?;
            let errs: Vec<[f64; 3]> = (0..trials as u64)
                .into_par_iter()
                .map(|trial| {
                    let mut rng = trial_rng(seed, trial);
                    let x = TrainingSequence::bernoulli(dp.base.n, dp.base.p_s, &mut rng);
                    let y = simulate_delay(&dp, &real, &x, &mut rng)?;
                    let est = joint_ml(&y, &x, &dp)?;
                    Ok([
                        (est.h_hat - h).norm_sqr(),
                        (est.theta_hat - theta).norm_sqr(),
                        (est.tau0_hat - dp.tau0).powi(2),
                    ])
                })
                .collect::<Result<_>>()?;
            let m = |i: usize| mean(&errs.iter().map(|e| e[i]).collect::<Vec<_>>());
            Ok(DelayPoint { ps_db: db, mse_h: m(0), mse_theta: m(1), mse_tau0: m(2), crb_h: crb[0], crb_theta: crb[1], crb_tau0: crb[2] })
        })
        .collect()
}

/// Per-block `(mse_h, mse_θ)`: block 0 uses ±1 training, block `b` a
/// sinusoid designed from block `b−1`'s estimates. Channels redrawn per trial.
pub fn adaptive_training(params: &SystemParams, blocks: usize, trials: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    params.validate()?;
    let alpha = compute_alpha(params)?;
    let opts = BfgsOptions::default();
    let runs: Vec<Vec<(f64, f64)>> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let real = draw_realization(params, &mut rng)?.realization;
            let mut x = TrainingSequence::bernoulli(params.n, params.p_s, &mut rng);
            let mut errs = Vec::with_capacity(blocks);
            for _ in 0..blocks {
                let y = simulate_block(params, &real, &x, &mut rng)?;
                let est = bfgs_estimate_with(&LikelihoodContext::new(&x, &y, params, alpha)?, None, &opts)?;
                errs.push(((est.h_hat - real.h()).norm_sqr(), (est.theta_hat - real.theta()).norm_sqr()));
                x = adaptive_sinusoid(est.h_hat, est.theta_hat, params, TraceMode::ClosedForm, false)?.0;
            }
            Ok(errs)
        })
        .collect::<Result<_>>()?;
    Ok((0..blocks)
        .map(|b| {
            let k = runs.len() as f64;
            (runs.iter().map(|r| r[b].0).sum::<f64>() / k, runs.iter().map(|r| r[b].1).sum::<f64>() / k)
        })
        .collect())
}

fn multi_template(cfg: &ExperimentConfig) -> MultiRelayParams {
    let s = cfg.system.params();
    MultiRelayParams {
        relays: 1,
        k_db: cfg.multi_relay.k_db,
        gamma: cfg.multi_relay.gamma,
        p_r: s.p_r,
        var_rr: s.var_rr,
        var_nr: s.var_nr,
        var_nd: s.var_nd,
        n: s.n,
        l: s.l,
    }
}

/// Runs the configured experiment with the resolved seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Table> {
    cfg.validate()?;
    let seed = cfg.resolved_seed()?;
    let base = cfg.system.params();
    let alpha = compute_alpha(&base)?;
    let theta = cfg.channel.theta();
    let h_fixed = cfg.channel.h(alpha);
    let trials = cfg.trials;
    match (&cfg.sweep, cfg.experiment) {
        (Sweep::PsDb(ps), ExperimentKind::Fig1) => {
            let mut t = Table::new(&[
                "Ps_db", "mse_h", "crb_h", "mse_theta", "crb_theta", "crb_h_asym", "crb_theta_asym", "eff_h", "eff_theta",
                "mean_iterations",
            ]);
            for p in estimation_sweep(&base, cfg.system.adaptive_taps, ps, trials, seed, false)? {
                t.push(cells(&[
                    &p.ps_db, &p.mse_h, &p.crb_h, &p.mse_theta, &p.crb_theta, &p.crb_h_asym, &p.crb_theta_asym, &p.eff_h,
                    &p.eff_theta, &p.iter_mmse_mean,
                ]));
            }
            Ok(t)
        }
        (Sweep::PsDb(ps), ExperimentKind::Fig2) => {
            let mut t = Table::new(&["Ps_db", "iter_mmse_mean", "iter_mmse_median", "iter_random_mean", "iter_random_median"]);
            for p in estimation_sweep(&base, cfg.system.adaptive_taps, ps, trials, seed, true)? {
                t.push(cells(&[&p.ps_db, &p.iter_mmse_mean, &p.iter_mmse_median, &p.iter_random_mean, &p.iter_random_median]));
            }
            Ok(t)
        }
        (Sweep::PsDb(ps), ExperimentKind::Fig3) => {
            let mut t = Table::new(&["Ps_db", "iteration", "f_mmse", "f_random"]);
            for &db in ps {
                let params = base.with_ps_db(db);
                let h = cfg.channel.h(compute_alpha(&params)?);
                let (a, b) = objective_traces(&params, h, theta, trials, seed)?;
                for i in 0..a.len().max(b.len()) {
                    let fa = *a.get(i).or(a.last()).unwrap();
                    let fb = *b.get(i).or(b.last()).unwrap();
                    t.push(cells(&[&db, &i, &fa, &fb]));
                }
            }
            Ok(t)
        }
        (Sweep::PsDb(ps), ExperimentKind::Fig4) => {
            let mut t = Table::new(&["Ps_db", "crb_theta_exact_design", "crb_theta_approx_design", "crb_theta_bernoulli"]);
            let h = cfg.channel.h.map(|[re, im]| Complex64::new(re, im));
            for p in training_comparison(&base, h, theta, ps, trials, seed, cfg.trace_mode)? {
                t.push(cells(&[&p.ps_db, &p.crb_exact_design, &p.crb_approx_design, &p.crb_bernoulli]));
            }
            Ok(t)
        }
        (Sweep::N(ns), ExperimentKind::Fig5) => {
            let mut t = Table::new(&[
                "n", "lambda", "crb_h_exact", "crb_h_asym", "crb_theta_exact", "crb_theta_asym", "mse_h", "mse_theta",
            ]);
            for p in length_sweep(&base, h_fixed, theta, ns, trials, seed, cfg.trace_mode)? {
                t.push(cells(&[
                    &p.n, &p.lambda, &p.crb_h_exact, &p.crb_h_asym, &p.crb_theta_exact, &p.crb_theta_asym, &p.mse_h,
                    &p.mse_theta,
                ]));
            }
            Ok(t)
        }
        (Sweep::PsDb(ps), ExperimentKind::Fig6) => {
            let mut t = Table::new(&["Ps_db", "detector", "bit_errors", "bits", "ber", "ci_low", "ci_high"]);
            for &db in ps {
                let bc = BerConfig {
                    detectors: vec![Detector::Viterbi, Detector::WhitenedMf, Detector::Mf],
                    blocks: trials as u64,
                    csi: CsiMode::Estimated,
                    constellation: Constellation::Bpsk,
                    seed,
                };
                for b in ber_experiment(&base.with_ps_db(db), &bc)? {
                    t.push(cells(&[&db, &b.detector.name(), &b.bit_errors, &b.bits, &b.ber, &b.ci_low, &b.ci_high]));
                }
            }
            Ok(t)
        }
        (Sweep::N(ns), ExperimentKind::Fig7) => {
            let fs = &cfg.freq_selective;
            let fp = FreqSelParams::new(base, fs.var_sr_taps.clone(), fs.var_rd_taps.clone())?;
            let mut t = Table::new(&["n", "mse", "mean_iterations"]);
            for p in mse_vs_n(&fp, ns, trials, seed)? {
                t.push(cells(&[&p.n, &p.mse, &p.mean_iterations]));
            }
            Ok(t)
        }
        (Sweep::M(ms), ExperimentKind::Fig8) => {
            let mr = &cfg.multi_relay;
            let template = multi_template(cfg);
            let energy = template.n as f64 * template.p_r;
            let rows = crb_vs_m_with(&template, ms, theta, mr.lambda, energy, mr.term)?;
            let mse = mse_vs_m(&template, ms, trials, seed)?;
            let best = optimal_m(&template, mr.m_max, energy)?;
            let mut t = Table::new(&[
                "m", "crb_zm", "crb_h2", "crb_zm_approx", "crb_h2_approx", "mse_zm", "mse_h2", "optimal_m",
            ]);
            for (r, e) in rows.iter().zip(&mse) {
                t.push(cells(&[
                    &r.relays, &r.full.crb_zm, &r.full.crb_h2, &r.approx.crb_zm, &r.approx.crb_h2, &e.mse_zm, &e.mse_h2,
                    &best,
                ]));
            }
            Ok(t)
        }
        (Sweep::PsDb(ps), ExperimentKind::Delay) => {
            let d = &cfg.delay;
            let dp = DelayParams {
                base,
                tau0: d.tau0,
                t_s: 1.0,
                beta: d.beta,
                span: d.span,
                tau_max: d.tau_max,
                noise_through_taps: d.noise_through_taps,
            };
            let mut t = Table::new(&["Ps_db", "mse_h", "crb_h", "mse_theta", "crb_theta", "mse_tau0", "crb_tau0"]);
            for &db in ps {
                let h = cfg.channel.h(compute_alpha(&base.with_ps_db(db))?);
                for p in delay_sweep(&dp, h, theta, &[db], trials, seed)? {
                    t.push(cells(&[&p.ps_db, &p.mse_h, &p.crb_h, &p.mse_theta, &p.crb_theta, &p.mse_tau0, &p.crb_tau0]));
                }
            }
            Ok(t)
        }
        (Sweep::PsDb(ps), ExperimentKind::Adaptive) => {
            let mut t = Table::new(&["Ps_db", "block", "mse_h", "mse_theta"]);
            for &db in ps {
                for (b, (mh, mt)) in adaptive_training(&base.with_ps_db(db), cfg.blocks, trials, seed)?.iter().enumerate() {
                    t.push(cells(&[&db, &b, mh, mt]));
                }
            }
            Ok(t)
        }
        (sweep, kind) => Err(config_error("sweep", format!("{kind:?} cannot sweep {}", sweep.name()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1: &str = r#"
experiment = "fig1"
seed = 5
trials = 3
output = "out/fig1.csv"

[system]
n = 40

[sweep]
ps_db = [10.0, 20.0]
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(FIG1).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Fig1);
        assert_eq!(cfg.system.n, 40);
        assert_eq!(cfg.system.pr_db, 30.0);
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_bad_configs_with_field_names() {
        let two_axes = FIG1.replace("ps_db = [10.0, 20.0]", "ps_db = [10.0]\nn = [40]");
        assert!(ExperimentConfig::from_toml(&two_axes).is_err());
        let wrong_axis = FIG1.replace("ps_db = [10.0, 20.0]", "n = [40]");
        match ExperimentConfig::from_toml(&wrong_axis) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "sweep"),
            other => panic!("{other:?}"),
        }
        let typo = FIG1.replace("n = 40", "nn = 40");
        let msg = ExperimentConfig::from_toml(&typo).unwrap_err().to_string();
        assert!(msg.contains("nn") && msg.contains("line"), "{msg}");
        assert!(ExperimentConfig::from_toml(&FIG1.replace("trials = 3", "trials = 0")).is_err());
    }

    #[test]
    fn identical_seed_gives_identical_csv() {
        let cfg = ExperimentConfig::from_toml(FIG1).unwrap();
        let render = |c: &ExperimentConfig| {
            let mut buf = Vec::new();
            run_experiment(c).unwrap().write_csv(&mut buf).unwrap();
            buf
        };
        let a = render(&cfg);
        assert_eq!(a, render(&cfg));
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("Ps_db,mse_h,crb_h,mse_theta,crb_theta"));
        assert_eq!(text.lines().count(), 3);
        let other = ExperimentConfig { seed: Some(6), ..cfg };
        assert_ne!(render(&other), render(&ExperimentConfig::from_toml(FIG1).unwrap()));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn realization_taps_are_capped() {
        let p = SystemParams { n: 20, ..Default::default() };
        assert_eq!(realization_taps(&p, Complex64::new(0.0, 0.0)), 2);
        assert_eq!(realization_taps(&p, Complex64::new(0.5, 0.0)), 4);
        assert_eq!(realization_taps(&p, Complex64::new(0.999, 0.0)), 10);
    }
}
