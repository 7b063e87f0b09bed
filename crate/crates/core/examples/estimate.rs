//! Simulates one training block and runs the ML estimator from the MMSE start.

use fdrelay::estimator::{bfgs_estimate, LikelihoodContext};
use fdrelay::model::{compute_alpha, draw_realization, simulate_block, SystemParams, TrainingSequence};
use fdrelay::rng::trial_rng;

fn main() -> fdrelay::Result<()> {
    let params = SystemParams::default().with_ps_db(20.0);
    let alpha = compute_alpha(&params)?;
    let mut rng = trial_rng(7, 0);
    let real = draw_realization(&params, &mut rng)?.realization;
    let x = TrainingSequence::bernoulli(params.n, params.p_s, &mut rng);
    let y = simulate_block(&params, &real, &x, &mut rng)?;

    let ctx = LikelihoodContext::new(&x, &y, &params, alpha)?;
    let est = bfgs_estimate(&ctx, None)?;
    println!("alpha      = {alpha:.4}");
    println!("h          = {:.4}   h_hat     = {:.4}", real.h(), est.h_hat);
    println!("theta      = {:.4}   theta_hat = {:.4}", real.theta(), est.theta_hat);
    println!("iterations = {} (converged: {})", est.iterations, est.converged);
    Ok(())
}
