//! BER of the trellis and matched-filter detectors with estimated CSI.

use fdrelay::equalization::{ber_experiment, BerConfig, Constellation, CsiMode, Detector};
use fdrelay::model::SystemParams;

fn main() -> fdrelay::Result<()> {
    let config = BerConfig {
        detectors: vec![Detector::Viterbi, Detector::WhitenedMf, Detector::Mf],
        blocks: 400,
        csi: CsiMode::Estimated,
        constellation: Constellation::Bpsk,
        seed: 3,
    };
    for ps_db in [5.0, 15.0] {
        let params = SystemParams::default().with_ps_db(ps_db);
        for est in ber_experiment(&params, &config)? {
            println!(
                "Ps = {ps_db:4.1} dB  {:12}  ber {:.4e}  [{:.2e}, {:.2e}]",
                est.detector.name(),
                est.ber,
                est.ci_low,
                est.ci_high
            );
        }
    }
    Ok(())
}
