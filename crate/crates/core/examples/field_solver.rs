//! Solve the reference electrode layout and print the field at the probe for
//! a few voltages, plus the parallel-plate check.
//!
//! cargo run --release --example field_solver

use starksim::config::ExperimentConfig;
use starksim::electrostatics::{
    solve_potential_with, uniform_field_oracle, DielectricMap, ElectrodeLayout, FieldCalibration, Point, SolverOptions,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::default();
    let layout = cfg.layout.layout(cfg.run.max_voltage_v);
    let s = &cfg.solver;
    let grid = solve_potential_with(
        &layout,
        &cfg.dielectric.map(),
        s.spacing_um,
        s.tolerance_v,
        &s.options(),
    )?;
    let (nx, ny) = grid.shape();
    println!("mesh {nx} x {ny} nodes, {} multigrid cycles", grid.iterations());

    let cal = FieldCalibration::from_grid(&grid, &layout)?;
    println!("probe field per volt: {:.4} V/cm", cal.per_volt.parallel_v_per_cm);
    for v in [0.0, 100.0, 200.0, 333.0] {
        println!("{v:>6.1} V -> {:>10.2} V/cm", cal.field(v).parallel_v_per_cm);
    }

    for x in [-40.0, -20.0, 0.0, 20.0, 40.0] {
        let f = grid.field_at(Point::new(x, 0.0))?;
        println!(
            "x = {x:>5.1} um: E_par {:>9.1} V/cm, E_perp {:>9.1} V/cm",
            f.parallel_v_per_cm, f.perpendicular_v_per_cm
        );
    }

    let plates = ElectrodeLayout::parallel_plate(100.0, 60.0, [333.0, 0.0]);
    let g = solve_potential_with(&plates, &DielectricMap::default(), 2.5, 1e-9, &SolverOptions::default())?;
    let e = g.field_at(Point::new(0.0, 0.0))?.parallel_v_per_cm;
    println!(
        "parallel plates: {e:.3} V/cm, analytic {:.3} V/cm",
        uniform_field_oracle(333.0, 100.0)
    );
    Ok(())
}
