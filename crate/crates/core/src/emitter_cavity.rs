//! Cavity reflection, Purcell enhancement and the emitter parameters the
//! photon simulator consumes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EmitterError {
    #[error("invalid cavity: {0}")]
    InvalidCavity(String),
    #[error("invalid emitter: {0}")]
    InvalidEmitter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    pub center_frequency_ghz: f64,
    pub quality_factor: f64,
    /// In cubic wavelengths, (λ/n)³.
    pub mode_volume: f64,
    pub refractive_index: f64,
    pub dip_depth: f64,
}

impl CavityParams {
    pub fn validate(&self) -> Result<(), EmitterError> {
        let bad = |m: &str| Err(EmitterError::InvalidCavity(m.into()));
        if !(self.quality_factor > 0.0 && self.quality_factor.is_finite()) {
            return bad("quality_factor must be positive");
        }
        if !(self.mode_volume > 0.0 && self.mode_volume.is_finite()) {
            return bad("mode_volume must be positive");
        }
        if !(0.0..=1.0).contains(&self.dip_depth) {
            return bad("dip_depth must lie in [0, 1]");
        }
        if !(self.center_frequency_ghz > 0.0) || !(self.refractive_index >= 1.0) {
            return bad("center frequency must be positive and refractive index ≥ 1");
        }
        Ok(())
    }

    /// Full width of the resonance, GHz.
    pub fn linewidth_ghz(&self) -> f64 {
        self.center_frequency_ghz / self.quality_factor
    }
}

/// `F = 3Q / (4π² V)` with `V` in (λ/n)³.
pub fn purcell_factor(cavity: &CavityParams) -> f64 {
    3.0 * cavity.quality_factor / (4.0 * PI * PI * cavity.mode_volume)
}

/// Lorentzian dip: `1 − depth / (1 + (2(f − f_c)/Δf_c)²)`.
pub fn cavity_reflection(cavity: &CavityParams, frequency_ghz: f64) -> f64 {
    let x = 2.0 * (frequency_ghz - cavity.center_frequency_ghz) / cavity.linewidth_ghz();
    1.0 - cavity.dip_depth / (1.0 + x * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterParams {
    pub bulk_lifetime_ms: f64,
    pub branching_ratio: f64,
    /// Measured `τ_bulk / τ_cavity`; takes precedence over the Purcell path.
    pub enhancement_factor: Option<f64>,
}

impl EmitterParams {
    pub fn validate(&self) -> Result<(), EmitterError> {
        let bad = |m: &str| Err(EmitterError::InvalidEmitter(m.into()));
        if !(self.bulk_lifetime_ms > 0.0 && self.bulk_lifetime_ms.is_finite()) {
            return bad("bulk_lifetime must be positive");
        }
        if !(self.branching_ratio > 0.0 && self.branching_ratio <= 1.0) {
            return bad("branching_ratio must lie in (0, 1]");
        }
        if let Some(chi) = self.enhancement_factor {
            if !(chi >= 1.0 && chi.is_finite()) {
                return bad("enhancement_factor must be ≥ 1");
            }
        }
        Ok(())
    }
}

/// Cavity-modified lifetime in µs.
pub fn effective_lifetime(emitter: &EmitterParams, purcell: f64) -> f64 {
    let bulk_us = emitter.bulk_lifetime_ms * 1000.0;
    match emitter.enhancement_factor {
        Some(chi) => bulk_us / chi,
        None => bulk_us / (1.0 + emitter.branching_ratio * purcell.max(0.0)),
    }
}

/// Lifetime-limited FWHM in MHz for a lifetime in µs: `1 / (2πτ)`.
pub fn lifetime_limited_fwhm_mhz(lifetime_us: f64) -> f64 {
    1.0 / (2.0 * PI * lifetime_us)
}

/// What the simulator needs to know about one emitting ion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveEmitter {
    lifetime_us: f64,
    fwhm_mhz: f64,
    frequency_mhz: f64,
    saturation_excitation_prob: f64,
}

impl EffectiveEmitter {
    pub fn new(
        lifetime_us: f64,
        fwhm_mhz: f64,
        frequency_mhz: f64,
        saturation_excitation_prob: f64,
    ) -> Result<Self, EmitterError> {
        let bad = |m: String| Err(EmitterError::InvalidEmitter(m));
        if !(lifetime_us > 0.0 && lifetime_us.is_finite()) {
            return bad("lifetime must be positive".into());
        }
        if !(0.0..=1.0).contains(&saturation_excitation_prob) {
            return bad("saturation excitation probability must lie in [0, 1]".into());
        }
        if !frequency_mhz.is_finite() {
            return bad("frequency must be finite".into());
        }
        let limit = lifetime_limited_fwhm_mhz(lifetime_us);
        if !(fwhm_mhz >= limit && fwhm_mhz.is_finite()) {
            return bad(format!("fwhm {fwhm_mhz} MHz is below the lifetime limit {limit} MHz"));
        }
        Ok(Self {
            lifetime_us,
            fwhm_mhz,
            frequency_mhz,
            saturation_excitation_prob,
        })
    }

    pub fn lifetime_us(&self) -> f64 {
        self.lifetime_us
    }

    pub fn fwhm_mhz(&self) -> f64 {
        self.fwhm_mhz
    }

    pub fn frequency_mhz(&self) -> f64 {
        self.frequency_mhz
    }

    pub fn saturation_excitation_prob(&self) -> f64 {
        self.saturation_excitation_prob
    }

    /// Same emitter moved to another line position and width.
    pub fn retuned(&self, frequency_mhz: f64, fwhm_mhz: f64) -> Result<Self, EmitterError> {
        Self::new(
            self.lifetime_us,
            fwhm_mhz,
            frequency_mhz,
            self.saturation_excitation_prob,
        )
    }
}

/// Per-pulse excitation probability for a laser detuned from the line.
pub fn excitation_probability(effective: &EffectiveEmitter, detuning_mhz: f64) -> f64 {
    let x = 2.0 * detuning_mhz / effective.fwhm_mhz;
    effective.saturation_excitation_prob / (1.0 + x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cavity(q: f64, v: f64) -> CavityParams {
        CavityParams {
            center_frequency_ghz: 195_115.0,
            quality_factor: q,
            mode_volume: v,
            refractive_index: 3.48,
            dip_depth: 1.0,
        }
    }

    #[test]
    fn purcell_values() {
        assert_relative_eq!(purcell_factor(&cavity(4.0 * PI * PI / 3.0, 1.0)), 1.0, epsilon = 1e-12);
        let f = purcell_factor(&cavity(5.1e4, 1.0));
        assert_relative_eq!(f, 3.0 * 5.1e4 / (4.0 * PI * PI), epsilon = 1e-9);
        assert!((f - 3875.0).abs() < 1.0);
        assert_relative_eq!(purcell_factor(&cavity(5.1e4, 2.0)), f / 2.0);
    }

    #[test]
    fn lifetime_paths() {
        let override_path = EmitterParams {
            bulk_lifetime_ms: 11.4,
            branching_ratio: 0.2,
            enhancement_factor: Some(278.0),
        };
        assert!((effective_lifetime(&override_path, 0.0) - 41.0).abs() < 0.05);
        let formula = EmitterParams {
            enhancement_factor: None,
            ..override_path
        };
        assert_eq!(effective_lifetime(&formula, 0.0), 11_400.0);
        assert_relative_eq!(effective_lifetime(&formula, 1384.0), 11_400.0 / 277.8, epsilon = 1e-9);
        assert!((effective_lifetime(&formula, 1384.0) - 41.0).abs() < 0.05);
    }

    #[test]
    fn reflection_dip() {
        let c = cavity(5.1e4, 1.0);
        assert_eq!(cavity_reflection(&c, c.center_frequency_ghz), 0.0);
        assert!(cavity_reflection(&c, c.center_frequency_ghz + 1e6) > 0.999_999);
        assert!((c.linewidth_ghz() - 3.826).abs() < 1e-3);
        let half = cavity_reflection(&c, c.center_frequency_ghz + c.linewidth_ghz() / 2.0);
        assert_relative_eq!(half, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn excitation_lineshape() {
        let e = EffectiveEmitter::new(41.0, 6.7, 0.0, 0.5).unwrap();
        assert_eq!(excitation_probability(&e, 0.0), 0.5);
        assert_relative_eq!(excitation_probability(&e, 3.35), 0.25, epsilon = 1e-12);
        let ratio = excitation_probability(&e, 5.0) / 0.5;
        assert_relative_eq!(ratio, 1.0 / (1.0 + (10.0f64 / 6.7).powi(2)), epsilon = 1e-12);
        assert!((ratio - 0.310).abs() < 1e-3);
    }

    #[test]
    fn construction_checks() {
        assert!(EffectiveEmitter::new(41.0, 1e-4, 0.0, 0.5).is_err());
        assert!(EffectiveEmitter::new(41.0, lifetime_limited_fwhm_mhz(41.0), 0.0, 0.5).is_ok());
        assert!(EffectiveEmitter::new(0.0, 6.7, 0.0, 0.5).is_err());
        assert!(EffectiveEmitter::new(41.0, 6.7, 0.0, 1.5).is_err());
        assert!(cavity(5.1e4, 0.0).validate().is_err());
        let mut c = cavity(5.1e4, 1.0);
        c.dip_depth = 1.2;
        assert!(c.validate().is_err());
        let bad = EmitterParams {
            bulk_lifetime_ms: 11.4,
            branching_ratio: 0.2,
            enhancement_factor: Some(0.5),
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn lifetime_decreases_with_purcell(a in 0.0..1e4f64, b in 0.0..1e4f64, beta in 0.01..1.0f64) {
            let e = EmitterParams { bulk_lifetime_ms: 11.4, branching_ratio: beta, enhancement_factor: None };
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(effective_lifetime(&e, hi) <= effective_lifetime(&e, lo));
        }

        #[test]
        fn reflection_symmetric_with_min_at_center(d in 0.0..50.0f64, q in 1e3..1e6f64, depth in 0.0..1.0f64) {
            let mut c = cavity(q, 1.0);
            c.dip_depth = depth;
            let f0 = c.center_frequency_ghz;
            let (up, down) = (cavity_reflection(&c, f0 + d), cavity_reflection(&c, f0 - d));
            prop_assert!((up - down).abs() < 1e-12);
            prop_assert!(cavity_reflection(&c, f0) <= up);
        }

        #[test]
        fn excitation_bounded_and_even(d in -1e3..1e3f64, fwhm in 0.1..50.0f64, p in 0.0..1.0f64) {
            let e = EffectiveEmitter::new(41.0, fwhm, 0.0, p).unwrap();
            let v = excitation_probability(&e, d);
            prop_assert!((0.0..=p).contains(&v));
            prop_assert_eq!(v, excitation_probability(&e, -d));
        }

        #[test]
        fn constructed_emitters_respect_lifetime_limit(tau in 0.01..1e4f64, fwhm in 0.0..10.0f64) {
            if let Ok(e) = EffectiveEmitter::new(tau, fwhm, 0.0, 0.5) {
                prop_assert!(e.fwhm_mhz() >= lifetime_limited_fwhm_mhz(e.lifetime_us()));
            }
        }
    }
}
