//! Monte-Carlo Fisher information from the covariance of the score.
//!
//! The model is a circular Gaussian `y ~ CN(μ(φ), C(φ))` built from dense
//! matrices. The score is a central difference of the exact log-density, so
//! the oracle shares nothing with the analytic FIM code beyond `μ` and `C`.

#![allow(dead_code)]

use fdrelay::rng::{complex_normal_vec, trial_rng};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rayon::prelude::*;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

const CHUNK: usize = 2000;

/// Parameters are `complex` complex values stored as (re, im) pairs, then
/// `real` real values. The FIM is over the conjugate Wirtinger score for the
/// complex ones and the ordinary derivative for the real ones.
pub struct GaussianModel<F> {
    pub complex: usize,
    pub real: usize,
    pub mean_cov: F,
}

struct Point {
    mean: CVec,
    chol: Cholesky<Complex64, Dyn>,
    log_det: f64,
}

impl Point {
    fn new(mean: CVec, cov: CMat) -> Self {
        let chol = Cholesky::new(cov).expect("covariance must be positive definite");
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
        Self { mean, chol, log_det }
    }

    /// `log p(y)` without the `−N log π` constant.
    fn log_density(&self, y: &CVec) -> f64 {
        let r = y - &self.mean;
        let z = self.chol.l_dirty().solve_lower_triangular(&r).expect("triangular solve");
        -self.log_det - z.norm_squared()
    }
}

impl<F> GaussianModel<F>
where
    F: Fn(&[f64]) -> (CVec, CMat) + Sync,
{
    /// `E[s sᴴ]` at `point` from `samples` draws of `y`.
    pub fn fim(&self, point: &[f64], samples: usize, seed: u64) -> CMat {
        let dim = 2 * self.complex + self.real;
        assert_eq!(point.len(), dim);
        let (mu, cov) = (self.mean_cov)(point);
        let n = mu.len();
        let sampler = Cholesky::new(cov).expect("covariance must be positive definite").l();
        let steps: Vec<f64> = point.iter().map(|v| 1e-6 * v.abs().max(1.0)).collect();
        let probes: Vec<(Point, Point)> = (0..dim)
            .map(|k| {
                let shifted = |sign: f64| {
                    let mut p = point.to_vec();
                    p[k] += sign * steps[k];
                    let (m, c) = (self.mean_cov)(&p);
                    Point::new(m, c)
                };
                (shifted(1.0), shifted(-1.0))
            })
            .collect();

        let params = self.complex + self.real;
        let chunks = samples.div_ceil(CHUNK);
        let total = (0..chunks as u64)
            .into_par_iter()
            .map(|chunk| {
                let mut rng = trial_rng(seed, chunk);
                let mut acc = CMat::zeros(params, params);
                let count = CHUNK.min(samples - chunk as usize * CHUNK);
                for _ in 0..count {
                    let w = CVec::from_vec(complex_normal_vec(&mut rng, n, 1.0));
                    let y = &mu + &sampler * w;
                    let d: Vec<f64> = probes
                        .iter()
                        .zip(&steps)
                        .map(|((up, down), h)| (up.log_density(&y) - down.log_density(&y)) / (2.0 * h))
                        .collect();
                    let s = CVec::from_fn(params, |i, _| {
                        if i < self.complex {
                            Complex64::new(d[2 * i], d[2 * i + 1]) * 0.5
                        } else {
                            Complex64::new(d[2 * self.complex + i - self.complex], 0.0)
                        }
                    });
                    acc += &s * s.adjoint();
                }
                acc
            })
            .reduce(|| CMat::zeros(params, params), |a, b| a + b);
        total / Complex64::new(samples as f64, 0.0)
    }
}

/// Dense lower-triangular Toeplitz matrix with the given first column.
pub fn lower_toeplitz(taps: &[Complex64], n: usize) -> CMat {
    CMat::from_fn(n, n, |r, c| if r >= c && r - c < taps.len() { taps[r - c] } else { Complex64::new(0.0, 0.0) })
}

/// `‖L⁻¹(Γ̂ − Γ)L⁻ᴴ‖_F` with `Γ = LLᴴ`: the Monte-Carlo error measured in
/// the units of the analytic information, so scale differences between
/// parameters do not matter.
pub fn whitened_gap(analytic: &CMat, monte_carlo: &CMat) -> f64 {
    let l = Cholesky::new(analytic.clone()).expect("analytic FIM must be positive definite").l();
    let diff = monte_carlo - analytic;
    let left = l.solve_lower_triangular(&diff).unwrap();
    let both = l.solve_lower_triangular(&left.adjoint()).unwrap();
    both.norm()
}

/// Largest relative error over the diagonal.
pub fn diagonal_gap(analytic: &CMat, monte_carlo: &CMat) -> f64 {
    (0..analytic.nrows())
        .map(|i| (monte_carlo[(i, i)].re / analytic[(i, i)].re - 1.0).abs())
        .fold(0.0, f64::max)
}
