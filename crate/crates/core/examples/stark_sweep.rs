//! Voltage series of one ion: per-voltage line fits and the Stark
//! coefficient from a weighted straight line through the centers.
//!
//! cargo run --release --example stark_sweep

use starksim::config::ExperimentConfig;
use starksim::pipeline::Pipeline;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::default();
    let seed = cfg.run.seed;
    let ion = cfg.stark.sweep_ion.clone();
    let p = Pipeline::new(cfg)?;
    let sweep = p.stark_sweep(&ion, seed)?;
    println!("ion {ion}, {:.4} V/cm per V", p.field_per_volt());
    println!(
        "{:>7} {:>10} {:>18} {:>16}",
        "V", "E (V/cm)", "center (MHz)", "fwhm (MHz)"
    );
    for r in &sweep.rows {
        println!(
            "{:>7.1} {:>10.1} {:>10.3} +/- {:<5.3} {:>7.3} +/- {:.3}",
            r.voltage_v, r.field_v_per_cm, r.peak_mhz, r.peak_err_mhz, r.fwhm_mhz, r.fwhm_err_mhz
        );
    }
    let l = &sweep.line;
    println!(
        "slope {:.3} +/- {:.3} kHz/(V/cm), intercept {:.3} MHz, reduced chi2 {:.2}",
        l.value("slope"),
        l.stderr("slope"),
        l.value("intercept"),
        l.reduced_chi_square
    );

    let m = p.max_shift(seed)?;
    println!(
        "ion {} at {} V: shift {:.2} +/- {:.2} MHz = {:.1} +/- {:.1} zero-field linewidths",
        p.config.stark.max_shift_ion, m.voltage_v, m.shift_mhz, m.shift_err_mhz, m.ratio, m.ratio_err
    );
    Ok(())
}
