use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde_json::{json, Value};

use fdrelay::crb::{fim_exact_with_alpha, AsymptoticSetup, TraceMode};
use fdrelay::delay::{fim_delay, joint_ml, simulate_delay, DelayParams};
use fdrelay::design::{approximate_design, cycles_to_lambda, make_sinusoid, optimize_exact_with, optimize_sum_with};
use fdrelay::equalization::{ber_experiment, BerConfig, Constellation, CsiMode, Detector};
use fdrelay::estimator::{bfgs_estimate, LikelihoodContext};
use fdrelay::experiment::{fixed_realization, run_experiment, seed_from_env, ExperimentConfig};
use fdrelay::freq_selective::{draw_realization_fs, ml_estimate_taps, overall_taps_convolution, simulate_block_fs, FreqSelParams};
use fdrelay::model::{compute_alpha, db_to_linear, draw_realization, simulate_block, ReceivedBlock, SystemParams, TrainingSequence};
use fdrelay::multi_relay::{crb_multi_approx, crb_multi_with, optimal_m, CovarianceTerm, MultiRelayParams, MultiRelayRealization};
use fdrelay::rng::trial_rng;
use fdrelay::{Error, Result};

#[derive(Parser)]
#[command(name = "fdrelay", version, about = "Channel estimation and bounds for full-duplex AF relays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its CSV.
    Run {
        config: PathBuf,
        /// Overrides the config's output path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// ML estimate of (h, θ) from a stored or freshly simulated block.
    Estimate(EstimateArgs),
    /// Exact and asymptotic CRBs for one channel and training sequence.
    Crb(CrbArgs),
    /// Optimal sinusoid frequency.
    DesignTraining(DesignArgs),
    /// Monte-Carlo BER of the detectors.
    Ber(BerArgs),
    /// Tap estimate for one frequency-selective block.
    FreqSelective(FreqArgs),
    /// Multi-relay CRBs and the best relay count.
    MultiRelay(MultiArgs),
    /// Joint (h, θ, τ₀) estimate for one block with a fractional relay delay.
    Delay(DelayArgs),
}

#[derive(Args, Clone)]
struct SystemArgs {
    #[arg(long, default_value_t = 10.0)]
    ps_db: f64,
    #[arg(long, default_value_t = 30.0)]
    pr_db: f64,
    #[arg(long, default_value_t = -10.0)]
    var_rr_db: f64,
    #[arg(long, default_value_t = 1.0)]
    var_nr: f64,
    #[arg(long, default_value_t = 1.0)]
    var_nd: f64,
    #[arg(long, default_value_t = 140)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    l: usize,
    /// Defaults to $FDRELAY_SEED, then 1.
    #[arg(long)]
    seed: Option<u64>,
}

impl SystemArgs {
    fn params(&self) -> SystemParams {
        SystemParams {
            p_s: db_to_linear(self.ps_db),
            p_r: db_to_linear(self.pr_db),
            var_rr: db_to_linear(self.var_rr_db),
            var_nr: self.var_nr,
            var_nd: self.var_nd,
            n: self.n,
            l: self.l,
            ..SystemParams::default()
        }
    }

    fn seed(&self) -> Result<u64> {
        self.seed.map_or_else(seed_from_env, Ok)
    }
}

/// `re,im` or `mag@phase` (radians).
fn parse_complex(s: &str) -> std::result::Result<Complex64, String> {
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    if let Some((m, p)) = s.split_once('@') {
        return Ok(Complex64::from_polar(num(m)?, num(p)?));
    }
    match s.split_once(',') {
        Some((re, im)) => Ok(Complex64::new(num(re)?, num(im)?)),
        None => Ok(Complex64::new(num(s)?, 0.0)),
    }
}

fn c2(z: Complex64) -> Value {
    json!([z.re, z.im])
}

#[derive(Args, Clone)]
struct FrequencyArgs {
    /// Training frequency in radians.
    #[arg(long, conflicts_with = "lambda_cycles")]
    lambda: Option<f64>,
    /// Training frequency in cycles per symbol.
    #[arg(long)]
    lambda_cycles: Option<f64>,
}

impl FrequencyArgs {
    fn get(&self) -> Option<f64> {
        self.lambda.or(self.lambda_cycles.map(cycles_to_lambda))
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// CSV with columns x_re,x_im,y_re,y_im; simulated from the seed when absent.
    #[arg(long)]
    block: Option<PathBuf>,
    /// Writes the simulated block in the `--block` format.
    #[arg(long, conflicts_with = "block")]
    save_block: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainingKind {
    Bernoulli,
    Sinusoid,
}

#[derive(Args)]
struct CrbArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Compound gain h; defaults to α.
    #[arg(long, value_parser = parse_complex)]
    h: Option<Complex64>,
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    theta: Complex64,
    #[arg(long, value_enum, default_value = "sinusoid")]
    training: TrainingKind,
    #[command(flatten)]
    frequency: FrequencyArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Approx,
    Exact,
    Sum,
}

#[derive(Args)]
struct DesignArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long, value_parser = parse_complex)]
    h: Option<Complex64>,
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    theta: Complex64,
    #[arg(long, value_enum, default_value = "approx")]
    method: Method,
    #[arg(long)]
    quadrature: bool,
}

#[derive(Args)]
struct BerArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long, default_value_t = 1000)]
    blocks: u64,
    #[arg(long)]
    genie: bool,
    #[arg(long)]
    qpsk: bool,
}

#[derive(Args)]
struct FreqArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.5")]
    var_sr_taps: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.5")]
    var_rd_taps: Vec<f64>,
}

#[derive(Args)]
struct MultiArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long, default_value_t = 1)]
    relays: usize,
    #[arg(long, default_value_t = -60.0, allow_hyphen_values = true)]
    k_db: f64,
    #[arg(long, default_value_t = 3.71)]
    gamma: f64,
    /// Loop gain of every relay at the nominal channel.
    #[arg(long, value_parser = parse_complex, default_value = "0.01,0")]
    theta: Complex64,
    #[command(flatten)]
    frequency: FrequencyArgs,
    #[arg(long)]
    full_term: bool,
    #[arg(long, default_value_t = 6)]
    m_max: usize,
}

#[derive(Args)]
struct DelayArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// True delay in symbols.
    #[arg(long, default_value_t = 0.6)]
    tau0: f64,
    #[arg(long, value_parser = parse_complex)]
    h: Option<Complex64>,
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true, default_value = "0.3,0.1")]
    theta: Complex64,
    #[arg(long, default_value_t = fdrelay::delay::DEFAULT_BETA)]
    beta: f64,
}

fn read_block(path: &PathBuf) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Config { field: path.display().to_string(), message: e.to_string() })?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config { field: path.display().to_string(), message: e.to_string() })?;
        if v.len() != 4 {
            return Err(Error::Config { field: path.display().to_string(), message: "expected 4 columns".into() });
        }
        x.push(Complex64::new(v[0], v[1]));
        y.push(Complex64::new(v[2], v[3]));
    }
    Ok((x, y))
}

fn write_block(path: &PathBuf, x: &[Complex64], y: &[Complex64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x_re", "x_im", "y_re", "y_im"])?;
    for (a, b) in x.iter().zip(y) {
        w.write_record([a.re, a.im, b.re, b.im].map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn estimate(a: &EstimateArgs) -> Result<Value> {
    let (x, y, params) = match &a.block {
        Some(path) => {
            let (x, y) = read_block(path)?;
            let p_s = x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len().max(1) as f64;
            let params = SystemParams { n: x.len(), p_s, ..a.system.params() };
            (TrainingSequence::new(x, p_s)?, ReceivedBlock::new(y), params)
        }
        None => {
            let params = a.system.params();
            let mut rng = trial_rng(a.system.seed()?, 0);
            let real = draw_realization(&params, &mut rng)?.realization;
            let x = TrainingSequence::bernoulli(params.n, params.p_s, &mut rng);
            let y = simulate_block(&params, &real, &x, &mut rng)?;
            if let Some(path) = &a.save_block {
                write_block(path, x.as_slice(), &y.y)?;
            }
            (x, y, params)
        }
    };
    let ctx = LikelihoodContext::new(&x, &y, &params, compute_alpha(&params)?)?;
    let est = bfgs_estimate(&ctx, None)?;
    Ok(json!({
        "h_hat": c2(est.h_hat),
        "theta_hat": c2(est.theta_hat),
        "iterations": est.iterations,
        "converged": est.converged,
        "projected": est.projected,
    }))
}

fn crb(a: &CrbArgs) -> Result<Value> {
    let params = a.system.params();
    params.validate()?;
    let alpha = compute_alpha(&params)?;
    let h = a.h.unwrap_or(Complex64::new(alpha, 0.0));
    let setup = AsymptoticSetup::from_params(h, a.theta, &params, TraceMode::ClosedForm)?;
    let (x, lambda) = match a.training {
        TrainingKind::Bernoulli => (TrainingSequence::bernoulli(params.n, params.p_s, &mut trial_rng(a.system.seed()?, 0)), None),
        TrainingKind::Sinusoid => {
            let lambda = a.frequency.get().unwrap_or_else(|| approximate_design(&setup).lambda_star);
            (make_sinusoid(lambda, params.n, params.p_s)?, Some(lambda))
        }
    };
    let fim = fim_exact_with_alpha(h, a.theta, x.as_slice(), alpha, &params)?;
    // with one tap θ is not in the model and only h has a bound
    let (crb_h, crb_theta) = if params.l == 1 {
        (1.0 / fim.get(0, 0).re, None)
    } else {
        let d = fim.crb_diagonal()?;
        (d[0], Some(d[1]))
    };
    let asym = match lambda {
        Some(l) => setup.crb(l, x.energy()),
        None => setup.crb_for_training(x.as_slice())?,
    };
    Ok(json!({
        "alpha": alpha,
        "lambda": lambda,
        "x_norm_sq": x.energy(),
        "crb_h": crb_h,
        "crb_theta": crb_theta,
        "crb_h_asym": asym.crb_h,
        "crb_theta_asym": asym.crb_theta,
    }))
}

fn design(a: &DesignArgs) -> Result<Value> {
    let params = a.system.params();
    let alpha = compute_alpha(&params)?;
    let mode = if a.quadrature { TraceMode::Quadrature } else { TraceMode::ClosedForm };
    let setup = AsymptoticSetup::from_params(a.h.unwrap_or(Complex64::new(alpha, 0.0)), a.theta, &params, mode)?;
    let d = match a.method {
        Method::Approx => approximate_design(&setup),
        Method::Exact => optimize_exact_with(&setup)?,
        Method::Sum => optimize_sum_with(&setup)?,
    };
    Ok(json!({
        "lambda": d.lambda_star,
        "lambda_cycles": d.lambda_star / std::f64::consts::TAU,
        "z": d.z_star,
        "crb_theta": d.crb_at_optimum / (params.n as f64 * params.p_s),
        "method": d.method,
    }))
}

fn ber(a: &BerArgs) -> Result<Value> {
    let cfg = BerConfig {
        detectors: vec![Detector::Viterbi, Detector::WhitenedMf, Detector::Mf],
        blocks: a.blocks,
        csi: if a.genie { CsiMode::Genie } else { CsiMode::Estimated },
        constellation: if a.qpsk { Constellation::Qpsk } else { Constellation::Bpsk },
        seed: a.system.seed()?,
    };
    Ok(serde_json::to_value(ber_experiment(&a.system.params(), &cfg)?).expect("BER rows serialize"))
}

fn freq_selective(a: &FreqArgs) -> Result<Value> {
    let fp = FreqSelParams::new(a.system.params(), a.var_sr_taps.clone(), a.var_rd_taps.clone())?;
    let mut rng = trial_rng(a.system.seed()?, 0);
    let real = draw_realization_fs(&fp, &mut rng)?;
    let exact = overall_taps_convolution(&fp, &real).h_f;
    let x = TrainingSequence::bernoulli(fp.base.n, fp.base.p_s, &mut rng);
    let y = simulate_block_fs(&fp, &real, &x, &mut rng)?;
    let est = ml_estimate_taps(&y.y, &x, &fp)?;
    let err: f64 = est.xi.iter().zip(&exact).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(json!({
        "taps_hat": est.xi.iter().copied().map(c2).collect::<Vec<_>>(),
        "taps_exact": exact.iter().copied().map(c2).collect::<Vec<_>>(),
        "theta_hat": c2(est.theta_hat),
        "squared_error": err,
        "iterations": est.iterations,
    }))
}

fn multi_relay(a: &MultiArgs) -> Result<Value> {
    let s = a.system.params();
    let mp = MultiRelayParams {
        relays: a.relays,
        k_db: a.k_db,
        gamma: a.gamma,
        p_r: s.p_r,
        var_rr: s.var_rr,
        var_nr: s.var_nr,
        var_nd: s.var_nd,
        n: s.n,
        l: s.l,
    };
    mp.validate()?;
    let lambda = a.frequency.get().unwrap_or(std::f64::consts::FRAC_PI_2);
    let energy = mp.n as f64 * mp.p_r;
    let real = MultiRelayRealization::nominal(&mp, &vec![a.theta; a.relays])?;
    let term = if a.full_term { CovarianceTerm::Full } else { CovarianceTerm::FirstRelay };
    let full = crb_multi_with(&mp, &real, lambda, energy, term)?;
    let approx = crb_multi_approx(&mp, None, energy)?;
    Ok(json!({
        "relays": a.relays,
        "lambda": lambda,
        "crb_zm": full.crb_zm,
        "crb_h2": full.crb_h2,
        "crb_zm_approx": approx.crb_zm,
        "crb_h2_approx": approx.crb_h2,
        "optimal_m": optimal_m(&mp, a.m_max, energy)?,
    }))
}

fn delay(a: &DelayArgs) -> Result<Value> {
    let base = a.system.params();
    let dp = DelayParams { base, tau0: a.tau0, beta: a.beta, ..DelayParams::default() };
    dp.validate()?;
    let alpha = compute_alpha(&base)?;
    let h = a.h.unwrap_or(Complex64::new(alpha, 0.0));
    let real = fixed_realization(h, a.theta, alpha);
    let mut rng = trial_rng(a.system.seed()?, 0);
    let x = TrainingSequence::bernoulli(base.n, base.p_s, &mut rng);
    let y = simulate_delay(&dp, &real, &x, &mut rng)?;
    let est = joint_ml(&y, &x, &dp)?;
    let crb = fim_delay(h, a.theta, a.tau0, x.as_slice(), &dp)?.crb_diagonal()?;
    Ok(json!({
        "h_hat": c2(est.h_hat),
        "theta_hat": c2(est.theta_hat),
        "tau0_hat": est.tau0_hat,
        "iterations": est.iterations,
        "crb_h": crb[0],
        "crb_theta": crb[1],
        "crb_tau0": crb[2],
    }))
}

fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::Run { config, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let path = output.unwrap_or_else(|| cfg.output.clone());
            let table = run_experiment(&cfg)?;
            table.write_to(&path)?;
            Ok(json!({ "output": path, "rows": table.rows.len(), "seed": cfg.resolved_seed()? }))
        }
        Command::Estimate(a) => estimate(&a),
        Command::Crb(a) => crb(&a),
        Command::DesignTraining(a) => design(&a),
        Command::Ber(a) => ber(&a),
        Command::FreqSelective(a) => freq_selective(&a),
        Command::MultiRelay(a) => multi_relay(&a),
        Command::Delay(a) => delay(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fdrelay: {e}");
            // bad configs and environment are usage errors, like bad flags
            ExitCode::from(if matches!(e, Error::Config { .. }) { 2 } else { 1 })
        }
    }
}
