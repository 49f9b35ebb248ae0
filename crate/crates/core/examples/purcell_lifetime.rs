//! Cavity enhancement of the emitter: Purcell factor, reflection dip and the
//! effective lifetime and linewidth the simulator uses.
//!
//! cargo run --example purcell_lifetime

use starksim::config::ExperimentConfig;
use starksim::emitter_cavity::{
    cavity_reflection, effective_lifetime, lifetime_limited_fwhm_mhz, purcell_factor, EmitterParams,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::default();
    let cavity = cfg.cavity.params();
    let f = purcell_factor(&cavity);
    println!(
        "Q = {}, V = {} (lambda/n)^3 -> Purcell factor {f:.0}",
        cavity.quality_factor, cavity.mode_volume
    );
    println!("cavity linewidth {:.3} GHz", cavity.linewidth_ghz());
    for df in [0.0, 1.0, 2.0, 5.0, 20.0] {
        let r = cavity_reflection(&cavity, cavity.center_frequency_ghz + df);
        println!("  detuning {df:>5.1} GHz: reflection {r:.3}");
    }

    let measured = cfg.emitter.params();
    let tau = effective_lifetime(&measured, f);
    println!(
        "measured enhancement {:?}: tau = {tau:.2} us",
        measured.enhancement_factor
    );
    let ideal = EmitterParams {
        enhancement_factor: None,
        ..measured
    };
    println!(
        "ideal coupling with branching {}: tau = {:.2} us",
        ideal.branching_ratio,
        effective_lifetime(&ideal, f)
    );
    println!(
        "lifetime-limited fwhm at {tau:.1} us: {:.2} kHz",
        1e3 * lifetime_limited_fwhm_mhz(tau)
    );
    Ok(())
}
