//! PLE survey of the ion registry at zero field, with peak search and
//! Lorentzian fits of each line.
//!
//! cargo run --release --example ple_scan

use starksim::config::ExperimentConfig;
use starksim::pipeline::{peak_report, Pipeline};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::default();
    let seed = cfg.run.seed;
    // The solve calibrates ions registered by their maximum shift.
    let p = Pipeline::new(cfg)?;
    let scan = p.survey(&p.all_ion_ids(), 0.0, seed)?;
    let counts = scan.counts();
    let floor = counts.iter().copied().fold(f64::INFINITY, f64::min);
    println!(
        "{} points, counts from {floor} to {}",
        counts.len(),
        counts.iter().copied().fold(0.0, f64::max)
    );
    for row in peak_report(&scan)? {
        println!(
            "{:<18} {:>10.3} +/- {:<8.3} {}",
            row.quantity, row.value, row.stderr, row.units
        );
    }
    Ok(())
}
