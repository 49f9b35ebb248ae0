//! Fluorescence decay under the pulsed protocol and the lifetime fit.
//!
//! cargo run --release --example decay_lifetime

use starksim::analysis::{fit_exponential_decay, fit_exponential_decay_on_floor};
use starksim::config::ExperimentConfig;
use starksim::emitter_cavity::{effective_lifetime, purcell_factor, EffectiveEmitter};
use starksim::experiment_sim::simulate_decay_histogram;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::default();
    let tau = effective_lifetime(&cfg.emitter.params(), purcell_factor(&cfg.cavity.params()));
    let emitter = EffectiveEmitter::new(tau, 6.7, 0.0, cfg.emitter.saturation_excitation_prob)?;
    let detector = cfg.detector.model();
    let n = cfg.decay.n_pulses;
    let h = simulate_decay_histogram(&emitter, &cfg.protocol.protocol(), &detector, n, 1.0, cfg.run.seed)?;
    println!("{} detections in {} bins over {n} pulses", h.total(), h.counts.len());
    for (t, c) in h.centers().iter().zip(&h.counts).step_by(10) {
        println!("  {t:>5.1} us {c:>6}");
    }

    let floor = detector.dark_rate_hz * 1e-6 * h.bin_width * n as f64;
    let known = fit_exponential_decay_on_floor(&h, 0.0, floor)?;
    println!(
        "dark floor {floor:.1}/bin: tau = {:.2} +/- {:.2} us (configured {tau:.2})",
        known.value("tau"),
        known.stderr("tau")
    );
    let free = fit_exponential_decay(&h, 0.0)?;
    println!(
        "free floor: tau = {:.2} +/- {:.2} us, background {:.1} +/- {:.1}",
        free.value("tau"),
        free.stderr("tau"),
        free.value("background"),
        free.stderr("background")
    );
    Ok(())
}
