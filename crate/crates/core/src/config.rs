//! Experiment configuration and run manifests.
//!
//! The configuration is TOML with the unit in every key name. Unknown keys are
//! rejected. The digest is the SHA-256 of the canonical re-serialization, and a
//! copy of that canonical text is stored next to every run's outputs.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::electrostatics::{
    DielectricMap, DomainExtent, ElectrodeLayout, Point, Relaxation, SolverMethod, SolverOptions,
};
use crate::emitter_cavity::{CavityParams, EffectiveEmitter, EmitterParams};
use crate::experiment_sim::{DetectorModel, G2Options, PleProtocol, SourceKind};
use crate::stark_model::{IonModel, OrientationClass};

pub const DEFAULT_SEED: u64 = 0xE53_1536;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub electrode_width_um: f64,
    pub gap_um: f64,
    /// Probe (cavity center) relative to the gap center on the surface.
    #[serde(default)]
    pub probe_x_um: f64,
    #[serde(default)]
    pub probe_y_um: f64,
    /// Outer boundary half-extents; default 2.5 electrode spans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_half_width_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_half_height_um: Option<f64>,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            electrode_width_um: 200.0,
            gap_um: 100.0,
            probe_x_um: 0.0,
            probe_y_um: 0.0,
            domain_half_width_um: None,
            domain_half_height_um: None,
        }
    }
}

impl LayoutConfig {
    /// Layout with `voltage_v` on the left electrode and the right one grounded.
    pub fn layout(&self, voltage_v: f64) -> ElectrodeLayout {
        let mut l = ElectrodeLayout::coplanar(self.electrode_width_um, self.gap_um, [voltage_v, 0.0])
            .with_probe(Point::new(self.probe_x_um, self.probe_y_um));
        let d = l.domain_extent;
        let hw = self.domain_half_width_um.unwrap_or(d.x_max_um);
        let hh = self.domain_half_height_um.unwrap_or(d.y_max_um);
        l.domain_extent = DomainExtent {
            x_min_um: -hw,
            x_max_um: hw,
            y_min_um: -hh,
            y_max_um: hh,
        };
        l
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DielectricConfig {
    pub relative_permittivity_above: f64,
    pub relative_permittivity_below: f64,
}

impl Default for DielectricConfig {
    fn default() -> Self {
        let d = DielectricMap::default();
        Self {
            relative_permittivity_above: d.relative_permittivity_above,
            relative_permittivity_below: d.relative_permittivity_below,
        }
    }
}

impl DielectricConfig {
    pub fn map(&self) -> DielectricMap {
        DielectricMap {
            relative_permittivity_above: self.relative_permittivity_above,
            relative_permittivity_below: self.relative_permittivity_below,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Multigrid,
    Sor,
    AdaptiveSor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub spacing_um: f64,
    pub tolerance_v: f64,
    pub method: SolverKind,
    pub sor_omega: f64,
    pub max_iterations: usize,
    pub grading: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            spacing_um: 0.625,
            tolerance_v: 1e-7,
            method: SolverKind::Multigrid,
            sor_omega: 1.9,
            max_iterations: 500,
            grading: 1.08,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        let method = match self.method {
            SolverKind::Multigrid => SolverMethod::default(),
            SolverKind::Sor => SolverMethod::Sor(Relaxation::Fixed(self.sor_omega)),
            SolverKind::AdaptiveSor => SolverMethod::Sor(Relaxation::Adaptive),
        };
        SolverOptions {
            method,
            max_iterations: self.max_iterations,
            grading: self.grading,
            ..SolverOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IonConfig {
    pub id: String,
    pub zero_field_frequency_mhz: f64,
    /// Signed coefficient. Leave unset and give `max_shift_mhz` to calibrate
    /// the coefficient against the solved field at the maximum voltage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stark_coefficient_khz_per_v_cm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_shift_mhz: Option<f64>,
    pub zero_field_fwhm_mhz: f64,
    #[serde(default)]
    pub broadening_mhz_per_kv_cm: f64,
}

impl IonConfig {
    /// Ion model given the field per volt at the probe (V/cm per V).
    pub fn model(&self, field_per_volt: f64, max_voltage_v: f64) -> Result<IonModel, ConfigError> {
        let s = match (self.stark_coefficient_khz_per_v_cm, self.max_shift_mhz) {
            (Some(s), None) => s,
            (None, Some(shift)) => crate::stark_model::coefficient_for_shift(shift, field_per_volt * max_voltage_v)
                .map_err(|e| invalid(&format!("ions.{}.max_shift_mhz", self.id), e.to_string()))?,
            _ => {
                return Err(invalid(
                    &format!("ions.{}", self.id),
                    "give exactly one of stark_coefficient_khz_per_v_cm and max_shift_mhz",
                ))
            }
        };
        let ion = IonModel {
            ion_id: self.id.clone(),
            zero_field_frequency_mhz: self.zero_field_frequency_mhz,
            stark_coefficient_khz_per_v_cm: s,
            orientation_class: OrientationClass::of(s),
            zero_field_fwhm_mhz: self.zero_field_fwhm_mhz,
            broadening_mhz_per_kv_cm: self.broadening_mhz_per_kv_cm,
            tensors: None,
        };
        ion.validate()
            .map_err(|e| invalid(&format!("ions.{}", self.id), e.to_string()))?;
        Ok(ion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityConfig {
    pub center_frequency_ghz: f64,
    pub quality_factor: f64,
    pub mode_volume_cubic_wavelengths: f64,
    pub refractive_index: f64,
    pub dip_depth: f64,
}

impl Default for CavityConfig {
    fn default() -> Self {
        Self {
            center_frequency_ghz: 195_115.0,
            quality_factor: 5.1e4,
            mode_volume_cubic_wavelengths: 1.0,
            refractive_index: 3.48,
            dip_depth: 0.9,
        }
    }
}

impl CavityConfig {
    pub fn params(&self) -> CavityParams {
        CavityParams {
            center_frequency_ghz: self.center_frequency_ghz,
            quality_factor: self.quality_factor,
            mode_volume: self.mode_volume_cubic_wavelengths,
            refractive_index: self.refractive_index,
            dip_depth: self.dip_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterConfig {
    pub bulk_lifetime_ms: f64,
    pub branching_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enhancement_factor: Option<f64>,
    pub saturation_excitation_prob: f64,
}

impl Default for EmitterConfig {
    fn default() -> Self {
        Self {
            bulk_lifetime_ms: 11.4,
            branching_ratio: 0.2,
            enhancement_factor: Some(278.0),
            saturation_excitation_prob: 0.5,
        }
    }
}

impl EmitterConfig {
    pub fn params(&self) -> EmitterParams {
        EmitterParams {
            bulk_lifetime_ms: self.bulk_lifetime_ms,
            branching_ratio: self.branching_ratio,
            enhancement_factor: self.enhancement_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub pulse_length_us: f64,
    pub repetition_rate_khz: f64,
    pub window_delay_us: f64,
    pub window_length_us: f64,
    pub integration_time_per_point_s: f64,
    pub scan_pitch_mhz: f64,
    pub scan_min_mhz: f64,
    pub scan_max_mhz: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let p = PleProtocol::default();
        Self {
            pulse_length_us: p.pulse_length_us,
            repetition_rate_khz: p.repetition_rate_khz,
            window_delay_us: p.window_delay_us,
            window_length_us: p.window_length_us,
            integration_time_per_point_s: p.integration_time_per_point_s,
            scan_pitch_mhz: p.scan_pitch_mhz,
            scan_min_mhz: -500.0,
            scan_max_mhz: 500.0,
        }
    }
}

impl ProtocolConfig {
    pub fn protocol(&self) -> PleProtocol {
        PleProtocol {
            pulse_length_us: self.pulse_length_us,
            repetition_rate_khz: self.repetition_rate_khz,
            window_delay_us: self.window_delay_us,
            window_length_us: self.window_length_us,
            integration_time_per_point_s: self.integration_time_per_point_s,
            scan_pitch_mhz: self.scan_pitch_mhz,
            scan_range_mhz: (self.scan_min_mhz, self.scan_max_mhz),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub total_efficiency: f64,
    pub dark_rate_hz: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let d = DetectorModel::default();
        Self {
            total_efficiency: d.total_efficiency,
            dark_rate_hz: d.dark_rate_hz,
        }
    }
}

impl DetectorConfig {
    pub fn model(&self) -> DetectorModel {
        DetectorModel {
            total_efficiency: self.total_efficiency,
            dark_rate_hz: self.dark_rate_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub max_voltage_v: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            output_dir: PathBuf::from("out"),
            max_voltage_v: 333.0,
        }
    }
}

/// Voltage sweeps. Each scan window follows the expected line and uses its
/// own pitch and integration time; the rest of the protocol is shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarkConfig {
    pub voltages_v: Vec<f64>,
    pub scan_pitch_mhz: f64,
    pub scan_half_width_mhz: f64,
    pub integration_time_per_point_s: f64,
    /// Ion swept for the single-ion voltage series.
    pub sweep_ion: String,
    /// Ion whose maximum-voltage shift is compared with its linewidth.
    pub max_shift_ion: String,
}

impl Default for StarkConfig {
    fn default() -> Self {
        Self {
            voltages_v: (0..12).map(|k| 30.0 * k as f64).collect(),
            scan_pitch_mhz: 1.0,
            scan_half_width_mhz: 30.0,
            integration_time_per_point_s: 20.0,
            sweep_ion: "1".into(),
            max_shift_ion: "2".into(),
        }
    }
}

impl StarkConfig {
    pub fn protocol(&self, base: &PleProtocol) -> PleProtocol {
        PleProtocol {
            scan_pitch_mhz: self.scan_pitch_mhz,
            scan_range_mhz: (-self.scan_half_width_mhz, self.scan_half_width_mhz),
            integration_time_per_point_s: self.integration_time_per_point_s,
            ..*base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    pub n_pulses: u64,
    pub bin_width_us: f64,
    pub fit_start_us: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            n_pulses: 10_000_000,
            bin_width_us: 1.0,
            fit_start_us: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct G2Config {
    pub n_pulses: u64,
    pub max_lag: usize,
    pub background_fraction: f64,
    pub source: SourceKind,
}

impl Default for G2Config {
    fn default() -> Self {
        Self {
            n_pulses: 1_000_000_000,
            max_lag: 10,
            background_fraction: 1.0 - 0.949,
            source: SourceKind::SingleEmitter,
        }
    }
}

impl G2Config {
    pub fn options(&self) -> G2Options {
        G2Options {
            background_fraction: self.background_fraction,
            source: self.source,
            n_pulses: self.n_pulses,
            max_lag: self.max_lag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub layout: LayoutConfig,
    #[serde(default)]
    pub dielectric: DielectricConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub cavity: CavityConfig,
    #[serde(default)]
    pub emitter: EmitterConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub stark: StarkConfig,
    #[serde(default)]
    pub decay: DecayConfig,
    #[serde(default)]
    pub g2: G2Config,
    #[serde(default)]
    pub ions: Vec<IonConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_toml_str(REFERENCE_CONFIG).expect("bundled configuration parses")
    }
}

/// The device and protocol of the reference measurement, with a seven-ion
/// registry. Ion 2 is calibrated to its maximum shift at 333 V.
pub const REFERENCE_CONFIG: &str = include_str!("../configs/reference.toml");

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Canonical TOML text; the digest is computed over exactly these bytes.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Lowercase hex SHA-256 of [`Self::canonical_toml`].
    pub fn digest(&self) -> String {
        digest_of(&self.canonical_toml())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let layout = self.layout.layout(self.run.max_voltage_v);
        layout.validate().map_err(|e| invalid("layout", e.to_string()))?;
        self.dielectric
            .map()
            .validate()
            .map_err(|e| invalid("dielectric", e.to_string()))?;
        let s = &self.solver;
        if !(s.spacing_um > 0.0 && s.spacing_um <= self.layout.gap_um / 20.0) {
            return Err(invalid("solver.spacing_um", "must be positive and at most gap/20"));
        }
        if !(s.tolerance_v > 0.0) {
            return Err(invalid("solver.tolerance_v", "must be positive"));
        }
        if !(s.sor_omega > 0.0 && s.sor_omega < 2.0) {
            return Err(invalid("solver.sor_omega", "must lie in (0, 2)"));
        }
        if !(1.0..=1.5).contains(&s.grading) {
            return Err(invalid("solver.grading", "must lie in [1, 1.5]"));
        }
        self.cavity
            .params()
            .validate()
            .map_err(|e| invalid("cavity", e.to_string()))?;
        self.emitter
            .params()
            .validate()
            .map_err(|e| invalid("emitter", e.to_string()))?;
        if !(0.0..=1.0).contains(&self.emitter.saturation_excitation_prob) {
            return Err(invalid("emitter.saturation_excitation_prob", "must lie in [0, 1]"));
        }
        let protocol = self.protocol.protocol();
        protocol.validate().map_err(|e| invalid("protocol", e.to_string()))?;
        self.stark
            .protocol(&protocol)
            .validate()
            .map_err(|e| invalid("stark", e.to_string()))?;
        self.detector
            .model()
            .validate()
            .map_err(|e| invalid("detector", e.to_string()))?;
        if !(self.run.max_voltage_v > 0.0) {
            return Err(invalid("run.max_voltage_v", "must be positive"));
        }
        if let Some(v) = self
            .stark
            .voltages_v
            .iter()
            .find(|v| !(v.abs() <= self.run.max_voltage_v))
        {
            return Err(invalid("stark.voltages_v", format!("{v} V exceeds run.max_voltage_v")));
        }
        if self.decay.n_pulses == 0 || !(self.decay.bin_width_us > 0.0) {
            return Err(invalid("decay", "n_pulses and bin_width_us must be positive"));
        }
        if self.g2.n_pulses == 0 || self.g2.max_lag == 0 {
            return Err(invalid("g2", "n_pulses and max_lag must be positive"));
        }
        if !(0.0..1.0).contains(&self.g2.background_fraction) {
            return Err(invalid("g2.background_fraction", "must lie in [0, 1)"));
        }
        let mut seen = HashSet::new();
        for ion in &self.ions {
            if !seen.insert(ion.id.as_str()) {
                return Err(invalid("ions", format!("duplicate ion id {}", ion.id)));
            }
            ion.model(1.0, 1.0)?;
        }
        Ok(())
    }

    pub fn ion(&self, id: &str) -> Result<&IonConfig, ConfigError> {
        self.ions
            .iter()
            .find(|i| i.id == id)
            .ok_or_else(|| invalid("ions", format!("no ion with id {id}")))
    }

    /// Cavity-coupled emitter at zero detuning with the ion's zero-field line.
    pub fn effective_emitter(&self, zero_field_fwhm_mhz: f64) -> Result<EffectiveEmitter, ConfigError> {
        let purcell = crate::emitter_cavity::purcell_factor(&self.cavity.params());
        let tau = crate::emitter_cavity::effective_lifetime(&self.emitter.params(), purcell);
        EffectiveEmitter::new(tau, zero_field_fwhm_mhz, 0.0, self.emitter.saturation_excitation_prob)
            .map_err(|e| invalid("emitter", e.to_string()))
    }
}

pub fn digest_of(text: &str) -> String {
    let hash = Sha256::digest(text.as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

/// Provenance written next to every set of outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub master_seed: u64,
    pub config_digest: String,
    pub artifact_version: String,
    pub command: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, master_seed: u64, command: impl Into<String>) -> Self {
        Self {
            master_seed,
            config_digest: config.digest(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    /// Writes `manifest.json` and the canonical `config.toml` into `dir`.
    pub fn write(&self, config: &ExperimentConfig, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), config.canonical_toml())?;
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), json + "\n")
    }

    pub fn read(dir: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.run.seed, DEFAULT_SEED);
        assert_eq!(cfg.ions.len(), 7);
        let again = ExperimentConfig::from_toml_str(&cfg.canonical_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.digest(), again.digest());
        assert_eq!(cfg.digest().len(), 64);
    }

    #[test]
    fn unknown_keys_rejected_with_location() {
        let text = format!("{REFERENCE_CONFIG}\n[detector2]\nfoo = 1\n");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        let bad = REFERENCE_CONFIG.replace("dark_rate_hz", "dark_rate");
        let msg = ExperimentConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn duplicate_ions_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.ions.push(cfg.ions[0].clone());
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn coarse_spacing_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.solver.spacing_um = 10.0;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("solver.spacing_um"));
    }

    #[test]
    fn calibrated_ion_coefficient() {
        let cfg = ExperimentConfig::default();
        let ion = cfg.ion("2").unwrap().model(60.0, 333.0).unwrap();
        assert!((ion.stark_coefficient_khz_per_v_cm * 60.0 * 333.0 / 1000.0 - 182.9).abs() < 1e-9);
    }

    #[test]
    fn manifest_written_with_recomputable_digest() {
        let cfg = ExperimentConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new(&cfg, 7, "test");
        m.write(&cfg, dir.path()).unwrap();
        let stored = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
        assert_eq!(digest_of(&stored), RunManifest::read(dir.path()).unwrap().config_digest);
    }

    #[test]
    fn lifetime_from_defaults() {
        let e = ExperimentConfig::default().effective_emitter(6.7).unwrap();
        assert!((e.lifetime_us() - 41.0).abs() < 0.05);
    }
}
