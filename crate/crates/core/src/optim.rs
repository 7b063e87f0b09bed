//! BFGS with Armijo backtracking over a box-free real vector.
//!
//! The objective closure returns `None` outside its domain; the line search
//! treats that like a failed Armijo test and halves the step.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
    pub armijo: f64,
    pub contraction: f64,
    pub max_backtracks: usize,
    pub curvature_eps: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            grad_tol: 1e-6,
            f_tol: 1e-10,
            armijo: 1e-4,
            contraction: 0.5,
            max_backtracks: 60,
            curvature_eps: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start point and after every accepted step.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Minimizes `f` from `x0`. Returns `None` when `x0` is outside the domain.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> Option<BfgsOutcome>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    let mut hinv = identity(n);
    let mut trace = vec![fx];
    let mut iterations = 0;
    let mut converged = inf_norm(&g) < opts.grad_tol;

    while !converged && iterations < opts.max_iter {
        let mut d: Vec<f64> = matvec(&hinv, &g).into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hinv = identity(n);
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            if let Some((ft, gt)) = f(&trial) {
                if ft <= fx + opts.armijo * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= opts.contraction;
        }
        let Some((xn, fnew, gn)) = accepted else {
            break;
        };
        iterations += 1;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let df = (fx - fnew).abs();
        x = xn;
        fx = fnew;
        g = gn;
        trace.push(fx);
        let sv = dot(&s, &v);
        if sv > opts.curvature_eps {
            update_inverse_hessian(&mut hinv, &s, &v, sv);
        }
        converged = inf_norm(&g) < opts.grad_tol || df < opts.f_tol;
    }

    Some(BfgsOutcome { x, f: fx, iterations, converged, trace })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// `H ← (I − ρ s vᵀ) H (I − ρ v sᵀ) + ρ s sᵀ` with `ρ = 1/(sᵀv)`.
fn update_inverse_hessian(h: &mut [Vec<f64>], s: &[f64], v: &[f64], sv: f64) {
    let n = s.len();
    let rho = 1.0 / sv;
    let hv = matvec(h, v);
    let vhv = dot(v, &hv);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += rho * rho * (sv + vhv) * s[i] * s[j] - rho * (hv[i] * s[j] + s[i] * hv[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Some((v, g))
        };
        let opts = BfgsOptions { max_iter: 500, f_tol: 0.0, ..Default::default() };
        let out = minimize(f, &[-1.2, 1.0], &opts).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-5 && (out.x[1] - 1.0).abs() < 1e-5);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_converges_quickly() {
        let f = |x: &[f64]| Some((x[0] * x[0] + 4.0 * x[1] * x[1], vec![2.0 * x[0], 8.0 * x[1]]));
        let out = minimize(f, &[1.0, 1.0], &BfgsOptions::default()).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 10);
    }

    #[test]
    fn respects_domain() {
        // minimum of (x−2)² on x < 1 is approached from inside and never crossed
        let f = |x: &[f64]| if x[0] < 1.0 { Some(((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)])) } else { None };
        let out = minimize(f, &[0.0], &BfgsOptions::default()).unwrap();
        assert!(out.x[0] < 1.0);
        assert!(minimize(f, &[1.5], &BfgsOptions::default()).is_none());
    }

    #[test]
    fn inverse_hessian_update_satisfies_secant() {
        let mut h = identity(2);
        let s = [0.3, -0.1];
        let v = [0.5, 0.2];
        update_inverse_hessian(&mut h, &s, &v, dot(&s, &v));
        let hv = matvec(&h, &v);
        assert!((hv[0] - s[0]).abs() < 1e-14 && (hv[1] - s[1]).abs() < 1e-14);
    }
}
