//! Field → optical frequency shift for a single ion.
//!
//! Shifts are in MHz and positive means blue. Stark coefficients are in
//! kHz/(V·cm⁻¹), so `s · E` with `E` in V/cm lands in kHz and is divided by
//! 1000. The tensor form works in the crystal frame `(D₁, D₂, b)`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::electrostatics::FieldVector;

const KHZ_PER_MHZ: f64 = 1000.0;
/// Field-dependent broadening is quoted per kV/cm.
const V_PER_CM_PER_KV_PER_CM: f64 = 1000.0;

#[derive(Debug, Error, PartialEq)]
pub enum StarkError {
    #[error("invalid ion model: {0}")]
    InvalidIon(String),
    #[error("invalid Stark tensors: {0}")]
    InvalidTensors(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(
        "ions share a Stark coefficient but differ in zero-field frequency; no voltage brings them into resonance"
    )]
    NoSolution,
    #[error("resonance needs {required_v} V, beyond the allowed maximum")]
    OutOfRange { required_v: f64 },
}

/// Terms of the quadratic Stark expansion, pre-divided by Planck's constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarkTensors {
    /// Dipole-moment difference, MHz per (V/cm).
    pub delta_mu: Vector3<f64>,
    pub local_field_correction: Matrix3<f64>,
    /// Polarizability difference, MHz per (V/cm)².
    pub delta_alpha: Matrix3<f64>,
}

impl StarkTensors {
    pub fn new(
        delta_mu: Vector3<f64>,
        local_field_correction: Matrix3<f64>,
        delta_alpha: Matrix3<f64>,
    ) -> Result<Self, StarkError> {
        let t = Self {
            delta_mu,
            local_field_correction,
            delta_alpha,
        };
        t.validate()?;
        Ok(t)
    }

    /// Pure linear response along `delta_mu`, no local-field correction.
    pub fn dipole_only(delta_mu: Vector3<f64>) -> Self {
        Self {
            delta_mu,
            local_field_correction: Matrix3::identity(),
            delta_alpha: Matrix3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<(), StarkError> {
        let finite = self.delta_mu.iter().all(|v| v.is_finite())
            && self.local_field_correction.iter().all(|v| v.is_finite())
            && self.delta_alpha.iter().all(|v| v.is_finite());
        if !finite {
            return Err(StarkError::InvalidTensors("non-finite entry".into()));
        }
        let asym = (self.delta_alpha - self.delta_alpha.transpose()).abs().max();
        let scale = self.delta_alpha.abs().max().max(f64::MIN_POSITIVE);
        if asym > 1e-12 * scale {
            return Err(StarkError::InvalidTensors("delta_alpha must be symmetric".into()));
        }
        Ok(())
    }
}

/// `hΔν = −Δµ·(L E) − ½ (L E)·Δα·(L E)`, returned as Δν in MHz.
pub fn stark_shift_full(tensors: &StarkTensors, field_v_per_cm: &Vector3<f64>) -> f64 {
    let local = tensors.local_field_correction * field_v_per_cm;
    -tensors.delta_mu.dot(&local) - 0.5 * local.dot(&(tensors.delta_alpha * local))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrientationClass {
    Plus,
    Minus,
}

impl OrientationClass {
    pub fn of(stark_coefficient: f64) -> Self {
        if stark_coefficient < 0.0 {
            Self::Minus
        } else {
            Self::Plus
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Self::Plus => 1.0,
            Self::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonModel {
    pub ion_id: String,
    /// Offset from the scan center, MHz.
    pub zero_field_frequency_mhz: f64,
    /// Signed, kHz/(V·cm⁻¹).
    pub stark_coefficient_khz_per_v_cm: f64,
    pub orientation_class: OrientationClass,
    pub zero_field_fwhm_mhz: f64,
    /// Linewidth growth, MHz per kV/cm of |E_parallel|.
    pub broadening_mhz_per_kv_cm: f64,
    pub tensors: Option<StarkTensors>,
}

impl IonModel {
    /// Orientation class follows the coefficient's sign; no broadening.
    pub fn new(
        ion_id: impl Into<String>,
        zero_field_frequency_mhz: f64,
        stark_coefficient_khz_per_v_cm: f64,
        zero_field_fwhm_mhz: f64,
    ) -> Self {
        Self {
            ion_id: ion_id.into(),
            zero_field_frequency_mhz,
            stark_coefficient_khz_per_v_cm,
            orientation_class: OrientationClass::of(stark_coefficient_khz_per_v_cm),
            zero_field_fwhm_mhz,
            broadening_mhz_per_kv_cm: 0.0,
            tensors: None,
        }
    }

    pub fn with_broadening(mut self, mhz_per_kv_cm: f64) -> Self {
        self.broadening_mhz_per_kv_cm = mhz_per_kv_cm;
        self
    }

    pub fn validate(&self) -> Result<(), StarkError> {
        let bad = |m: &str| Err(StarkError::InvalidIon(format!("ion {}: {m}", self.ion_id)));
        if !(self.zero_field_fwhm_mhz > 0.0 && self.zero_field_fwhm_mhz.is_finite()) {
            return bad("zero_field_fwhm must be positive");
        }
        if !(self.broadening_mhz_per_kv_cm >= 0.0 && self.broadening_mhz_per_kv_cm.is_finite()) {
            return bad("broadening coefficient must be non-negative");
        }
        if !self.zero_field_frequency_mhz.is_finite() || !self.stark_coefficient_khz_per_v_cm.is_finite() {
            return bad("frequency and Stark coefficient must be finite");
        }
        if self.stark_coefficient_khz_per_v_cm != 0.0
            && OrientationClass::of(self.stark_coefficient_khz_per_v_cm) != self.orientation_class
        {
            return bad("orientation class disagrees with the sign of the Stark coefficient");
        }
        if let Some(t) = &self.tensors {
            t.validate()?;
        }
        Ok(())
    }

    /// Absolute line position under `field`, MHz from the scan center.
    pub fn frequency_at(&self, field: FieldVector) -> f64 {
        self.zero_field_frequency_mhz + stark_shift_empirical(self, field).shift_mhz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftResult {
    pub shift_mhz: f64,
    pub fwhm_mhz: f64,
}

/// `Δν = s · E_parallel`, with the linewidth growing linearly in |E_parallel|.
pub fn stark_shift_empirical(ion: &IonModel, field: FieldVector) -> ShiftResult {
    let e = field.parallel_v_per_cm;
    ShiftResult {
        shift_mhz: ion.stark_coefficient_khz_per_v_cm * e / KHZ_PER_MHZ,
        fwhm_mhz: ion.zero_field_fwhm_mhz + ion.broadening_mhz_per_kv_cm * e.abs() / V_PER_CM_PER_KV_PER_CM,
    }
}

/// Coefficient that produces `shift_mhz` at `field_v_per_cm`, kHz/(V·cm⁻¹).
pub fn coefficient_for_shift(shift_mhz: f64, field_v_per_cm: f64) -> Result<f64, StarkError> {
    if field_v_per_cm == 0.0 || !field_v_per_cm.is_finite() {
        return Err(StarkError::InvalidArgument(
            "calibration field must be finite and nonzero".into(),
        ));
    }
    Ok(shift_mhz * KHZ_PER_MHZ / field_v_per_cm)
}

/// Which orientations of the site respond to the field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Orientations {
    /// Field perpendicular to b: the four sites collapse to ±|s|E, each twice.
    PerpendicularToB,
    /// Unit projection axes in the crystal frame, one per site.
    Projections([Vector3<f64>; 4]),
}

/// The four symmetry images of a polar axis under the site group: identity,
/// two-fold rotation about b, inversion and the mirror normal to b.
pub fn site_images(axis: Vector3<f64>) -> [Vector3<f64>; 4] {
    let [x, y, z] = [axis.x, axis.y, axis.z];
    [
        Vector3::new(x, y, z),
        Vector3::new(-x, -y, z),
        Vector3::new(-x, -y, -z),
        Vector3::new(x, y, -z),
    ]
}

/// Shifts of the four orientation classes, sorted ascending, MHz.
pub fn orientation_shifts(magnitude_khz_per_v_cm: f64, field: FieldVector, orientations: &Orientations) -> [f64; 4] {
    let s = magnitude_khz_per_v_cm.abs();
    let mut out = match orientations {
        Orientations::PerpendicularToB => {
            let d = s * field.parallel_v_per_cm / KHZ_PER_MHZ;
            [d, d, -d, -d]
        }
        Orientations::Projections(axes) => {
            let e = field.crystal_frame();
            axes.map(|n| s * n.dot(&e) / KHZ_PER_MHZ)
        }
    };
    out.sort_by(f64::total_cmp);
    out
}

/// Applied voltage that puts two ions on the same frequency when both see
/// `volts_to_field_v_per_cm · V`.
pub fn resonance_voltage(
    ion_a: &IonModel,
    ion_b: &IonModel,
    volts_to_field_v_per_cm: f64,
    v_max: f64,
) -> Result<f64, StarkError> {
    if !(volts_to_field_v_per_cm > 0.0 && volts_to_field_v_per_cm.is_finite()) {
        return Err(StarkError::InvalidArgument("volts_to_field must be positive".into()));
    }
    if !(v_max > 0.0) {
        return Err(StarkError::InvalidArgument("v_max must be positive".into()));
    }
    let df = ion_b.zero_field_frequency_mhz - ion_a.zero_field_frequency_mhz;
    let ds = ion_a.stark_coefficient_khz_per_v_cm - ion_b.stark_coefficient_khz_per_v_cm;
    if df == 0.0 {
        return Ok(0.0);
    }
    if ds == 0.0 {
        return Err(StarkError::NoSolution);
    }
    let v = df * KHZ_PER_MHZ / (ds * volts_to_field_v_per_cm);
    if v.abs() > v_max {
        return Err(StarkError::OutOfRange { required_v: v });
    }
    Ok(v)
}
