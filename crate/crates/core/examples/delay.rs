//! Joint estimate of the channel, the RSI loop and a fractional relay delay.

use fdrelay::delay::{fim_delay, joint_ml, simulate_delay, DelayParams};
use fdrelay::model::{compute_alpha, ChannelRealization, SystemParams, TrainingSequence};
use fdrelay::rng::trial_rng;
use num_complex::Complex64;

fn main() -> fdrelay::Result<()> {
    let dp = DelayParams { base: SystemParams::default().with_ps_db(25.0), tau0: 0.6, ..DelayParams::default() };
    let alpha = compute_alpha(&dp.base)?;
    let theta = Complex64::new(0.3, 0.1);
    let real = ChannelRealization::new(Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0), theta / alpha, alpha);
    let mut rng = trial_rng(5, 0);
    let x = TrainingSequence::bernoulli(dp.base.n, dp.base.p_s, &mut rng);
    let y = simulate_delay(&dp, &real, &x, &mut rng)?;

    let est = joint_ml(&y, &x, &dp)?;
    let bounds = fim_delay(real.h(), theta, dp.tau0, x.as_slice(), &dp)?.crb_diagonal()?;
    println!("h     {:.4} -> {:.4}  (crb {:.2e})", real.h(), est.h_hat, bounds[0]);
    println!("theta {:.4} -> {:.4}  (crb {:.2e})", theta, est.theta_hat, bounds[1]);
    println!("tau0  {:.4} -> {:.4}  (crb {:.2e})", dp.tau0, est.tau0_hat, bounds[2]);
    Ok(())
}
