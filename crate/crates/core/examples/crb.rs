//! Exact and asymptotic CRBs for a sinusoidal training sequence.

use fdrelay::crb::{crb_exact, fim_exact, AsymptoticSetup, TraceMode};
use fdrelay::design::{approximate_design, make_sinusoid};
use fdrelay::model::{compute_alpha, SystemParams};
use num_complex::Complex64;

fn main() -> fdrelay::Result<()> {
    let theta = Complex64::new(0.3, 0.0);
    for n in [128, 512, 2048] {
        let params = SystemParams::default().with_n(n).with_taps(12);
        let alpha = compute_alpha(&params)?;
        let h = Complex64::new(alpha, 0.0);
        let setup = AsymptoticSetup::from_params(h, theta, &params, TraceMode::Quadrature)?;
        let lambda = approximate_design(&setup).lambda_star;
        let x = make_sinusoid(lambda, n, params.p_s)?;

        let exact = crb_exact(&fim_exact(h, theta, x.as_slice(), &params)?)?;
        let asym = setup.crb(lambda, x.energy());
        println!(
            "N = {n:5}  crb_h {:.3e} / {:.3e}  crb_theta {:.3e} / {:.3e}",
            exact.crb_h, asym.crb_h, exact.crb_theta, asym.crb_theta
        );
    }
    Ok(())
}
