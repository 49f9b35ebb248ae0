//! Pulsed Hanbury Brown-Twiss histograms for a single emitter with and
//! without background, and for a Poissonian source.
//!
//! cargo run --release --example antibunching

use starksim::analysis::estimate_g2_zero;
use starksim::config::ExperimentConfig;
use starksim::emitter_cavity::{effective_lifetime, purcell_factor, EffectiveEmitter};
use starksim::experiment_sim::{simulate_g2_histogram, SourceKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::default();
    let tau = effective_lifetime(&cfg.emitter.params(), purcell_factor(&cfg.cavity.params()));
    let emitter = EffectiveEmitter::new(tau, 6.7, 0.0, cfg.emitter.saturation_excitation_prob)?;
    let protocol = cfg.protocol.protocol();
    let detector = cfg.detector.model();
    let base = cfg.g2.options();
    let cases = [
        (
            "single emitter, 5.1% background",
            base.background_fraction,
            SourceKind::SingleEmitter,
        ),
        ("single emitter, no background", 0.0, SourceKind::SingleEmitter),
        ("Poissonian source", 0.0, SourceKind::Poissonian),
    ];
    for (k, (label, f, source)) in cases.into_iter().enumerate() {
        let mut opts = base;
        opts.background_fraction = f;
        opts.source = source;
        let h = simulate_g2_histogram(&emitter, &protocol, &detector, &opts, cfg.run.seed + k as u64)?;
        let g = estimate_g2_zero(&h)?;
        println!("{label}: g2(0) = {:.3} +/- {:.3}", g.g2_zero, g.standard_error);
        let row: Vec<String> = h.lags().map(|l| format!("{l}:{}", h.at(l))).collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
