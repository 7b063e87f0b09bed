//! Optimal sinusoid frequency from the exact and the approximate criterion.

use fdrelay::crb::{AsymptoticSetup, TraceMode};
use fdrelay::design::{approximate_design, make_sinusoid, optimize_exact_with};
use fdrelay::model::{compute_alpha, SystemParams};
use num_complex::Complex64;

fn main() -> fdrelay::Result<()> {
    let params = SystemParams::default().with_ps_db(20.0);
    let alpha = compute_alpha(&params)?;
    let theta = Complex64::from_polar(0.3, std::f64::consts::FRAC_PI_4);
    let setup = AsymptoticSetup::from_params(Complex64::new(alpha, 0.0), theta, &params, TraceMode::ClosedForm)?;

    let exact = optimize_exact_with(&setup)?;
    let approx = approximate_design(&setup);
    println!("exact  lambda* = {:.4}  crb*|x|^2 = {:.4e}", exact.lambda_star, exact.crb_at_optimum);
    println!("approx lambda* = {:.4}  crb*|x|^2 = {:.4e}", approx.lambda_star, approx.crb_at_optimum);

    let x = make_sinusoid(exact.lambda_star, params.n, params.p_s)?;
    let head: Vec<String> = x.as_slice()[..4].iter().map(|v| format!("{v:.3}")).collect();
    println!("first samples: {}", head.join(", "));
    Ok(())
}
