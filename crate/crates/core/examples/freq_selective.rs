//! Overall tap estimation over frequency-selective hops.

use fdrelay::freq_selective::{draw_realization_fs, ml_estimate_taps, overall_taps, simulate_block_fs, FreqSelParams};
use fdrelay::model::{SystemParams, TrainingSequence};
use fdrelay::rng::trial_rng;

fn main() -> fdrelay::Result<()> {
    let base = SystemParams::default().with_ps_db(20.0).with_n(256);
    let fp = FreqSelParams::new(base, vec![0.5, 0.5], vec![0.5, 0.5])?;
    let mut rng = trial_rng(11, 0);
    let real = draw_realization_fs(&fp, &mut rng)?;
    let x = TrainingSequence::bernoulli(base.n, base.p_s, &mut rng);
    let y = simulate_block_fs(&fp, &real, &x, &mut rng)?;

    let truth = overall_taps(&fp, &real)?;
    let est = ml_estimate_taps(&y.y, &x, &fp)?;
    for (k, (a, b)) in truth.h_f.iter().zip(&est.xi).enumerate() {
        println!("tap {k}: true {a:.4}  est {b:.4}");
    }
    println!("theta {:.4} -> {:.4} in {} iterations", real.theta(), est.theta_hat, est.iterations);
    Ok(())
}
