//! Periodic integration over `[0, 2π)`.

use std::f64::consts::TAU;

use crate::error::{Error, Result};

pub const DEFAULT_POINTS: usize = 4096;
pub const RICHARDSON_TOL: f64 = 1e-8;

/// `(1/2π)∫₀^{2π} f(λ) dλ` by the composite trapezoid rule on `points` nodes.
///
/// For smooth periodic integrands this converges geometrically.
pub fn mean_over_circle<F: Fn(f64) -> f64>(f: F, points: usize) -> f64 {
    let h = TAU / points as f64;
    (0..points).map(|k| f(k as f64 * h)).sum::<f64>() / points as f64
}

pub fn mean_over_circle_complex<F: Fn(f64) -> num_complex::Complex64>(f: F, points: usize) -> num_complex::Complex64 {
    let h = TAU / points as f64;
    (0..points).map(|k| f(k as f64 * h)).sum::<num_complex::Complex64>() / points as f64
}

/// Trapezoid mean on [`DEFAULT_POINTS`], doubled until the relative change
/// drops below [`RICHARDSON_TOL`] (at most four doublings).
pub fn mean_over_circle_checked<F: Fn(f64) -> f64>(f: F) -> Result<f64> {
    let mut points = DEFAULT_POINTS;
    let mut prev = mean_over_circle(&f, points);
    let mut change = f64::INFINITY;
    for _ in 0..4 {
        points *= 2;
        let next = mean_over_circle(&f, points);
        change = (next - prev).abs() / next.abs().max(f64::MIN_POSITIVE);
        if change < RICHARDSON_TOL {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Quadrature(change))
}
