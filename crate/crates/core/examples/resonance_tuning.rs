//! Voltages that bring pairs of registry ions onto the same frequency.
//!
//! cargo run --release --example resonance_tuning

use starksim::config::ExperimentConfig;
use starksim::pipeline::Pipeline;
use starksim::stark_model::{resonance_voltage, StarkError};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = Pipeline::new(ExperimentConfig::default())?;
    let k = p.field_per_volt();
    let v_max = p.config.run.max_voltage_v;
    let ids = p.all_ion_ids();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            let ion_a = p.sim_ion(a)?.ion;
            let ion_b = p.sim_ion(b)?.ion;
            match resonance_voltage(&ion_a, &ion_b, k, v_max) {
                Ok(v) => {
                    let f = ion_a.frequency_at(p.calibration.field(v));
                    println!("ions {a} and {b}: {v:>8.2} V, common line at {f:>8.2} MHz");
                }
                Err(StarkError::OutOfRange { required_v }) => {
                    println!("ions {a} and {b}: needs {required_v:.0} V, beyond {v_max} V");
                }
                Err(e) => println!("ions {a} and {b}: {e}"),
            }
        }
    }
    Ok(())
}
