//! Stark coefficients of every ion in the registry, split into red- and
//! blue-shifting classes.
//!
//! cargo run --release --example ensemble_coefficients

use starksim::config::ExperimentConfig;
use starksim::pipeline::Pipeline;
use starksim::stark_model::OrientationClass;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::default();
    let seed = cfg.run.seed;
    let p = Pipeline::new(cfg)?;
    let mut fitted = Vec::new();
    for id in p.all_ion_ids() {
        let truth = p.sim_ion(&id)?.ion.stark_coefficient_khz_per_v_cm;
        let sweep = p.stark_sweep(&id, seed)?;
        let s = sweep.line.value("slope");
        let class = match OrientationClass::of(s) {
            OrientationClass::Plus => "blue",
            OrientationClass::Minus => "red",
        };
        println!(
            "ion {id}: s = {s:>8.3} +/- {:.3} kHz/(V/cm) (configured {truth:>7.3}), {class} shift",
            sweep.line.stderr("slope")
        );
        fitted.push(s.abs());
    }
    let first6 = &fitted[..6.min(fitted.len())];
    let n = first6.len() as f64;
    let mean = first6.iter().sum::<f64>() / n;
    let sd = (first6.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    println!("ions 1-6: mean |s| {mean:.2}, sample sd {sd:.2} kHz/(V/cm)");
    Ok(())
}
