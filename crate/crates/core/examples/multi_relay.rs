//! CRBs against the number of cascaded relays, and the count that minimizes them.

use fdrelay::multi_relay::{crb_vs_m, optimal_m, MultiRelayParams};
use num_complex::Complex64;

fn main() -> fdrelay::Result<()> {
    let template = MultiRelayParams::default();
    let theta = Complex64::new(0.0076, 0.0064);
    let lambda = std::f64::consts::FRAC_PI_2;
    let energy = template.n as f64;
    for row in crb_vs_m(&template, &[1, 2, 3, 4], theta, lambda, energy)? {
        println!(
            "M = {}  crb_zm {:.3e} (approx {:.3e})  crb_h2 {:.3e}",
            row.relays, row.full.crb_zm, row.approx.crb_zm, row.full.crb_h2
        );
    }
    println!("optimal M = {}", optimal_m(&template, 6, energy)?);
    Ok(())
}
