//! Training sequences that minimize the asymptotic CRB of `θ`.
//!
//! A sinusoid at frequency `λ` sees the channel symbols only at `λ`, and the
//! bound depends on `λ` through `z = |1−θe^{jλ}|²` and the branch of `λ` that
//! produces it. The exact design searches both branches for stationary points
//! of `G(z)`; the approximate design takes the left endpoint, `λ = −∠θ`.

use num_complex::Complex64;
use std::f64::consts::TAU;

use crate::crb::{AsymptoticSetup, TraceMode};
use crate::error::{invalid, Error, Result};
use crate::model::{SystemParams, TrainingSequence};

/// Points on which `G′` is scanned for sign changes.
pub const SCAN_POINTS: usize = 4096;
const BISECTION_STEPS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMethod {
    Exact,
    Approximate,
    Grid,
}

/// Which `λ` solves `|1−θe^{jλ}|² = z`: `sin(λ+∠θ) ≥ 0` or `≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DesignResult {
    pub lambda_star: f64,
    pub z_star: f64,
    /// Objective at the optimum for unit training energy (`CRB·‖x‖²`).
    pub crb_at_optimum: f64,
    pub method: DesignMethod,
    pub candidates: Vec<(f64, f64)>,
}

pub fn valid_interval(theta: Complex64) -> (f64, f64) {
    let r = theta.norm();
    ((1.0 - r).powi(2), (1.0 + r).powi(2))
}

/// `|1−θe^{jλ}|²`.
pub fn z_of_lambda(theta: Complex64, lambda: f64) -> f64 {
    (Complex64::new(1.0, 0.0) - theta * Complex64::from_polar(1.0, lambda)).norm_sqr()
}

/// The `λ ∈ [0, 2π)` on the given branch with `|1−θe^{jλ}|² = z`.
pub fn lambda_of_z(theta: Complex64, z: f64, branch: Branch) -> f64 {
    let r = theta.norm();
    if r == 0.0 {
        return 0.0;
    }
    let cos_psi = ((1.0 + r * r - z) / (2.0 * r)).clamp(-1.0, 1.0);
    let psi = cos_psi.acos();
    let psi = match branch {
        Branch::Upper => psi,
        Branch::Lower => -psi,
    };
    (psi - theta.arg()).rem_euclid(TAU)
}

fn check_z(theta: Complex64, z: f64) -> Result<()> {
    let (lo, hi) = valid_interval(theta);
    let slack = 1e-12 * hi;
    if !(z >= lo - slack && z <= hi + slack) {
        return Err(Error::Domain(z));
    }
    Ok(())
}

/// `G(z)` on one branch, written directly in `z`:
/// `(κ+σ_d²z) / (|h|²/z + A(κ+σ_d²z) − |h|²c²/z²)` with `c = Re(e^{jλ}) − θ_x`.
pub fn eval_g_branch(setup: &AsymptoticSetup, z: f64, branch: Branch) -> Result<f64> {
    let theta = setup.theta;
    check_z(theta, z)?;
    let r = theta.norm();
    let cos_re = if r == 0.0 {
        1.0
    } else {
        let cos_psi = ((1.0 + r * r - z) / (2.0 * r)).clamp(-1.0, 1.0);
        let sin_psi = (1.0 - cos_psi * cos_psi).sqrt();
        let sin_psi = if branch == Branch::Upper { sin_psi } else { -sin_psi };
        cos_psi * theta.re / r + sin_psi * theta.im / r
    };
    let c = cos_re - theta.re;
    let h2 = setup.h.norm_sqr();
    let s = setup.kappa + setup.var_nd * z;
    Ok(s / (h2 / z + setup.a() * s - h2 * c * c / (z * z)))
}

/// `G(z)` on the upper branch with unit noise variances.
pub fn eval_g(z: f64, h: Complex64, theta: Complex64, alpha: f64, p_s: f64) -> Result<f64> {
    eval_g_branch(&AsymptoticSetup::new(h, theta, alpha, p_s)?, z, Branch::Upper)
}

/// `λ = −∠θ` modulo `2π`. Accuracy degrades as `|θ|` grows past about 0.5.
pub fn optimize_approx(theta: Complex64) -> f64 {
    if theta.norm() == 0.0 {
        return 0.0;
    }
    (-theta.arg()).rem_euclid(TAU)
}

pub fn optimize_exact(h: Complex64, theta: Complex64, alpha: f64, p_s: f64) -> Result<DesignResult> {
    optimize_exact_with(&AsymptoticSetup::new(h, theta, alpha, p_s)?)
}

/// Minimizes `G` over the valid interval on both branches.
///
/// Stationary points come from sign changes of a central-difference `G′` on
/// [`SCAN_POINTS`] interior points, refined by bisection; both endpoints are
/// always candidates.
pub fn optimize_exact_with(setup: &AsymptoticSetup) -> Result<DesignResult> {
    let theta = setup.theta;
    if theta.norm() == 0.0 {
        return Ok(DesignResult {
            lambda_star: 0.0,
            z_star: 1.0,
            crb_at_optimum: setup.f_theta(0.0),
            method: DesignMethod::Exact,
            candidates: vec![(1.0, setup.f_theta(0.0))],
        });
    }
    let (lo, hi) = valid_interval(theta);
    let width = hi - lo;
    let delta = 1e-7 * width;
    let mut candidates = Vec::new();
    let mut best: Option<(f64, f64, f64)> = None;
    for branch in [Branch::Upper, Branch::Lower] {
        let g = |z: f64| eval_g_branch(setup, z, branch);
        let deriv = |z: f64| -> Result<f64> { Ok((g(z + delta)? - g(z - delta)?) / (2.0 * delta)) };
        let mut zs = vec![lo, hi];
        let grid: Vec<f64> = (1..SCAN_POINTS).map(|i| lo + width * i as f64 / SCAN_POINTS as f64).collect();
        let mut prev = (grid[0], deriv(grid[0])?);
        for &z in &grid[1..] {
            let d = deriv(z)?;
            if prev.1.signum() != d.signum() {
                zs.push(bisect(&deriv, prev.0, z, prev.1)?);
            }
            prev = (z, d);
        }
        for z in zs {
            let value = g(z)?;
            candidates.push((z, value));
            let lambda = lambda_of_z(theta, z, branch);
            let better = match best {
                None => true,
                Some((bv, bl, _)) => value < bv || (value == bv && lambda < bl),
            };
            if better {
                best = Some((value, lambda, z));
            }
        }
    }
    let (value, lambda_star, z_star) = best.ok_or(Error::Singular("empty candidate set"))?;
    Ok(DesignResult { lambda_star, z_star, crb_at_optimum: value, method: DesignMethod::Exact, candidates })
}

fn bisect(deriv: &impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, da: f64) -> Result<f64> {
    let sa = da.signum();
    for _ in 0..BISECTION_STEPS {
        let m = 0.5 * (a + b);
        if deriv(m)?.signum() == sa {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

pub fn optimize_sum(h: Complex64, theta: Complex64, alpha: f64, p_s: f64) -> Result<DesignResult> {
    optimize_sum_with(&AsymptoticSetup::new(h, theta, alpha, p_s)?)
}

/// Grid minimization of `CRB_θ(λ) + CRB_h(λ)` followed by golden-section
/// refinement around the best grid cell. The grid contains `0` and `−∠θ`.
pub fn optimize_sum_with(setup: &AsymptoticSetup) -> Result<DesignResult> {
    let obj = |lambda: f64| setup.f_theta(lambda) + setup.f_h(lambda);
    let step = TAU / SCAN_POINTS as f64;
    let mut lambdas: Vec<f64> = (0..SCAN_POINTS).map(|i| i as f64 * step).collect();
    lambdas.push(optimize_approx(setup.theta));
    let candidates: Vec<(f64, f64)> = lambdas.iter().map(|&l| (z_of_lambda(setup.theta, l), obj(l))).collect();
    let (mut lambda_star, mut value) = lambdas
        .iter()
        .zip(&candidates)
        .map(|(&l, &(_, v))| (l, v))
        .fold((0.0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
    let refined = golden_section(&obj, lambda_star - step, lambda_star + step);
    if obj(refined) < value {
        lambda_star = refined.rem_euclid(TAU);
        value = obj(lambda_star);
    }
    Ok(DesignResult {
        lambda_star,
        z_star: z_of_lambda(setup.theta, lambda_star),
        crb_at_optimum: value,
        method: DesignMethod::Grid,
        candidates,
    })
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    for _ in 0..100 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    0.5 * (a + b)
}

/// Approximate-design result in the same shape as the exact one.
pub fn approximate_design(setup: &AsymptoticSetup) -> DesignResult {
    let lambda_star = optimize_approx(setup.theta);
    let (lo, _) = valid_interval(setup.theta);
    let value = setup.f_theta(lambda_star);
    DesignResult { lambda_star, z_star: lo, crb_at_optimum: value, method: DesignMethod::Approximate, candidates: vec![(lo, value)] }
}

/// `x[k] = √P_s·e^{−jλk}`, the asymptotic eigenvector of every lower
/// Toeplitz channel operator with symbol evaluated at `λ`.
pub fn make_sinusoid(lambda: f64, n: usize, p_s: f64) -> Result<TrainingSequence> {
    if n == 0 {
        return Err(invalid("sinusoid length must be at least 1"));
    }
    if !(p_s > 0.0) {
        return Err(invalid("P_s must be positive"));
    }
    let x = (0..n).map(|k| Complex64::from_polar(p_s.sqrt(), -lambda * k as f64)).collect();
    TrainingSequence::new(x, p_s)
}

/// Frequency in cycles per symbol (`λ/2π`) to radians.
pub fn cycles_to_lambda(cycles: f64) -> f64 {
    (TAU * cycles).rem_euclid(TAU)
}

/// Designs a sinusoid from channel estimates of the previous block.
pub fn adaptive_sinusoid(
    h_hat: Complex64,
    theta_hat: Complex64,
    params: &SystemParams,
    mode: TraceMode,
    exact: bool,
) -> Result<(TrainingSequence, DesignResult)> {
    // keep the design inside the stable region when the estimate lands on it
    let theta = if theta_hat.norm() >= 0.99 { theta_hat * (0.99 / theta_hat.norm()) } else { theta_hat };
    let setup = AsymptoticSetup::from_params(h_hat, theta, params, mode)?;
    let design = if exact { optimize_exact_with(&setup)? } else { approximate_design(&setup) };
    Ok((make_sinusoid(design.lambda_star, params.n, params.p_s)?, design))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use std::f64::consts::PI;
    use crate::model::build_h_theta;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_point(rng: &mut ChaCha8Rng) -> AsymptoticSetup {
        let theta = Complex64::from_polar(0.05 + 0.5 * rng.random::<f64>(), TAU * rng.random::<f64>());
        let h = Complex64::from_polar(0.5 + 3.0 * rng.random::<f64>(), TAU * rng.random::<f64>());
        AsymptoticSetup::new(h, theta, 1.0 + 9.0 * rng.random::<f64>(), 1.0 + 100.0 * rng.random::<f64>()).unwrap()
    }

    #[test]
    fn g_matches_f_on_both_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let setup = random_point(&mut rng);
            let (lo, hi) = valid_interval(setup.theta);
            let z = lo + (hi - lo) * rng.random::<f64>();
            for branch in [Branch::Upper, Branch::Lower] {
                let lambda = lambda_of_z(setup.theta, z, branch);
                assert!((z_of_lambda(setup.theta, lambda) - z).abs() < 1e-10);
                let g = eval_g_branch(&setup, z, branch).unwrap();
                let f = setup.f_theta(lambda);
                assert!((g - f).abs() < 1e-8 * f, "{g} {f}");
                assert!(g > 0.0);
            }
        }
    }

    #[test]
    fn real_theta_left_endpoint_is_lambda_zero() {
        let theta = c(0.4, 0.0);
        assert!((z_of_lambda(theta, 0.0) - valid_interval(theta).0).abs() < 1e-15);
        assert_eq!(optimize_approx(theta), 0.0);
    }

    #[test]
    fn g_rejects_points_outside_interval() {
        assert!(matches!(eval_g(0.2, c(1.0, 0.0), c(0.3, 0.0), 3.0, 10.0), Err(Error::Domain(_))));
        assert!(matches!(eval_g(1.8, c(1.0, 0.0), c(0.3, 0.0), 3.0, 10.0), Err(Error::Domain(_))));
    }

    #[test]
    fn approximate_rule() {
        let lambda = optimize_approx(Complex64::from_polar(0.3, PI / 4.0));
        assert!((lambda - 7.0 * PI / 4.0).abs() < 1e-12);
        let setup_a = AsymptoticSetup::new(c(1.0, 0.0), c(0.2, 0.1), 3.0, 10.0).unwrap();
        let setup_b = AsymptoticSetup::new(c(-5.0, 2.0), c(0.2, 0.1), 3.0, 10.0).unwrap();
        assert_eq!(approximate_design(&setup_a).lambda_star, approximate_design(&setup_b).lambda_star);
    }

    #[test]
    fn exact_design_beats_dense_lambda_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let points = 100_000;
        for _ in 0..6 {
            let setup = random_point(&mut rng);
            let d = optimize_exact_with(&setup).unwrap();
            let (lo, hi) = valid_interval(setup.theta);
            assert!(d.z_star >= lo - 1e-12 && d.z_star <= hi + 1e-12);
            let grid_min = (0..points).map(|i| setup.f_theta(TAU * i as f64 / points as f64)).fold(f64::INFINITY, f64::min);
            assert!(d.crb_at_optimum <= grid_min * (1.0 + 1e-9));
            assert!((setup.f_theta(d.lambda_star) - d.crb_at_optimum).abs() < 1e-8 * d.crb_at_optimum);
            for branch in [Branch::Upper, Branch::Lower] {
                assert!(d.crb_at_optimum <= eval_g_branch(&setup, lo, branch).unwrap());
                assert!(d.crb_at_optimum <= eval_g_branch(&setup, hi, branch).unwrap());
            }
        }
    }

    #[test]
    fn zero_theta_design_is_degenerate() {
        let d = optimize_exact(c(1.0, 0.0), c(0.0, 0.0), 3.0, 10.0).unwrap();
        assert_eq!((d.lambda_star, d.z_star), (0.0, 1.0));
    }

    #[test]
    fn sum_design_is_grid_minimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let setup = random_point(&mut rng);
            let d = optimize_sum_with(&setup).unwrap();
            let obj = |l: f64| setup.f_theta(l) + setup.f_h(l);
            assert!(d.crb_at_optimum <= obj(0.0) && d.crb_at_optimum <= obj(optimize_approx(setup.theta)));
            let grid_min = (0..20_000).map(|i| obj(TAU * i as f64 / 20_000.0)).fold(f64::INFINITY, f64::min);
            assert!(d.crb_at_optimum <= grid_min * (1.0 + 1e-9));
        }
    }

    #[test]
    fn sinusoid_shape() {
        let x = make_sinusoid(0.0, 8, 4.0).unwrap();
        assert!(x.as_slice().iter().all(|v| (*v - c(2.0, 0.0)).norm() < 1e-15));
        let x = make_sinusoid(1.234, 140, 10.0).unwrap();
        assert!((x.energy() - 1400.0).abs() < 1e-9);
        assert!(make_sinusoid(0.5, 0, 1.0).is_err());
    }

    #[test]
    fn sinusoid_is_eigenvector_at_n_1024() {
        let (theta, lambda, n) = (c(0.3, -0.2), 2.0, 1024);
        let x = make_sinusoid(lambda, n, 1.0).unwrap();
        let hx = build_h_theta(theta, 40, n).matvec(x.as_slice());
        let t = crate::crb::symbol_t_g(theta, lambda).0;
        assert!((dot(x.as_slice(), &hx) / n as f64 - t).norm() < 1e-2 * t.norm());
    }

    #[test]
    fn cycles_map_to_radians() {
        assert!((cycles_to_lambda(0.25) - PI / 2.0).abs() < 1e-15);
        assert!((cycles_to_lambda(-0.25) - 3.0 * PI / 2.0).abs() < 1e-15);
    }
}
