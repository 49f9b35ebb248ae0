//! Linear Stark shifts: the empirical coefficient model, the tensor form it
//! reduces to, and the four site orientations for a field normal to b.
//!
//! cargo run --example stark_shift

use nalgebra::Vector3;
use starksim::electrostatics::FieldVector;
use starksim::stark_model::{
    orientation_shifts, site_images, stark_shift_empirical, stark_shift_full, IonModel, Orientations, StarkTensors,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ion = IonModel::new("1", 0.0, 19.8, 6.7).with_broadening(0.02);
    ion.validate()?;
    for e in [0.0, 5_000.0, 10_000.0, 21_066.0] {
        let r = stark_shift_empirical(&ion, FieldVector::along_d2(e));
        println!(
            "E = {e:>8.0} V/cm: shift {:>8.3} MHz, fwhm {:.3} MHz",
            r.shift_mhz, r.fwhm_mhz
        );
    }

    // A pure dipole term along D2 gives the same shift as the coefficient.
    let tensors = StarkTensors::dipole_only(Vector3::new(0.0, -19.8e-3, 0.0));
    let full = stark_shift_full(&tensors, &Vector3::new(0.0, 10_000.0, 0.0));
    println!("tensor form at 10 kV/cm: {full:.3} MHz");

    let field = FieldVector::along_d2(10_000.0);
    let perp = orientation_shifts(19.8, field, &Orientations::PerpendicularToB);
    println!("field normal to b, four orientations: {perp:?}");
    let axis = Vector3::new(0.3, 0.8, 0.52).normalize();
    let projected = orientation_shifts(19.8, field, &Orientations::Projections(site_images(axis)));
    println!("projected polar axis {:?}: {projected:?}", axis.as_slice());
    Ok(())
}
