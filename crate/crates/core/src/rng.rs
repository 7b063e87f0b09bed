//! Seeded random streams.
//!
//! Trial `k` of a run with master seed `s` draws from ChaCha8 seeded with `s`
//! on stream `k`, so results do not depend on how trials are scheduled.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type TrialRng = ChaCha8Rng;

pub fn trial_rng(seed: u64, trial: u64) -> TrialRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Circularly-symmetric complex Gaussian with `E|z|² = var`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

pub fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, var: f64) -> Vec<Complex64> {
    (0..n).map(|_| complex_normal(rng, var)).collect()
}

/// Uniform draw on the disk of the given radius.
pub fn uniform_disk<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Complex64 {
    let r = radius * rng.random::<f64>().sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    Complex64::from_polar(r, phi)
}
