//! Seeded Monte Carlo of the pulsed photon-counting experiments.
//!
//! Every pulse is independent: an ion is excited at most once per pulse with
//! the detuning-dependent probability, emits after an exponential delay
//! measured from the end of the pulse, and is counted only if the photon lands
//! inside the gated window and survives the collection efficiency. Emission
//! times are continuous; binning happens only when a histogram is built.
//!
//! Randomness is reproducible per work unit. Scan point `k` of a run with
//! master seed `m` draws from a ChaCha8 stream seeded with [`mix_seed`]`(m, k)`,
//! so serial and parallel runs give identical output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::electrostatics::{FieldCalibration, FieldError, FieldVector};
use crate::emitter_cavity::{excitation_probability, EffectiveEmitter, EmitterError};
use crate::stark_model::{stark_shift_empirical, IonModel};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),
    #[error("invalid detector: {0}")]
    InvalidDetector(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("voltage {voltage_v} V exceeds the allowed maximum {max_v} V")]
    VoltageOutOfRange { voltage_v: f64, max_v: f64 },
    #[error(transparent)]
    Emitter(#[from] EmitterError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// SplitMix64 finalizer applied to `master + φ·(index + 1)`, with φ the 64-bit
/// golden-ratio increment. Gives each work unit an independent seed.
pub fn mix_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng_for(master_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(master_seed, index))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PleProtocol {
    pub pulse_length_us: f64,
    pub repetition_rate_khz: f64,
    /// Gap between the end of the pulse and the start of the window.
    pub window_delay_us: f64,
    pub window_length_us: f64,
    pub integration_time_per_point_s: f64,
    pub scan_pitch_mhz: f64,
    /// Scan span relative to the scan center, MHz.
    pub scan_range_mhz: (f64, f64),
}

impl Default for PleProtocol {
    fn default() -> Self {
        Self {
            pulse_length_us: 10.0,
            repetition_rate_khz: 10.0,
            window_delay_us: 1.0,
            window_length_us: 85.0,
            integration_time_per_point_s: 5.0,
            scan_pitch_mhz: 5.0,
            scan_range_mhz: (-50.0, 50.0),
        }
    }
}

impl PleProtocol {
    pub fn period_us(&self) -> f64 {
        1000.0 / self.repetition_rate_khz
    }

    pub fn pulses_per_point(&self) -> u64 {
        (self.integration_time_per_point_s * self.repetition_rate_khz * 1000.0).round() as u64
    }

    /// Probability that an exponential emission with lifetime `tau_us`, timed
    /// from the end of the pulse, falls inside the window.
    pub fn window_probability(&self, tau_us: f64) -> f64 {
        let open = self.window_delay_us;
        let close = open + self.window_length_us;
        (-open / tau_us).exp() - (-close / tau_us).exp()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidProtocol(m.into()));
        let positive = [
            ("pulse_length_us", self.pulse_length_us),
            ("repetition_rate_khz", self.repetition_rate_khz),
            ("window_delay_us", self.window_delay_us),
            ("window_length_us", self.window_length_us),
            ("integration_time_per_point_s", self.integration_time_per_point_s),
            ("scan_pitch_mhz", self.scan_pitch_mhz),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::InvalidProtocol(format!("{name} must be positive, got {v}")));
            }
        }
        if self.pulse_length_us + self.window_delay_us + self.window_length_us > self.period_us() * (1.0 + 1e-12) {
            return bad("pulse, delay and window do not fit in one repetition period");
        }
        let (lo, hi) = self.scan_range_mhz;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad("scan_range must be an ordered finite pair");
        }
        if self.pulses_per_point() == 0 {
            return bad("integration time shorter than one pulse period");
        }
        Ok(())
    }

    /// Scan frequencies `lo + k·pitch` up to `hi`, shifted by `center`.
    pub fn scan_frequencies(&self, center_mhz: f64) -> Vec<f64> {
        let (lo, hi) = self.scan_range_mhz;
        let n = ((hi - lo) / self.scan_pitch_mhz + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|k| center_mhz + lo + k as f64 * self.scan_pitch_mhz)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// Excitation, transmission and detector efficiency combined.
    pub total_efficiency: f64,
    pub dark_rate_hz: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            total_efficiency: 0.01,
            dark_rate_hz: 2.0,
        }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.total_efficiency) {
            return Err(SimError::InvalidDetector("total_efficiency must lie in [0, 1]".into()));
        }
        if !(self.dark_rate_hz >= 0.0 && self.dark_rate_hz.is_finite()) {
            return Err(SimError::InvalidDetector("dark_rate must be non-negative".into()));
        }
        Ok(())
    }

    /// Expected dark counts in `n_pulses` windows.
    pub fn dark_mean(&self, protocol: &PleProtocol, n_pulses: u64) -> f64 {
        self.dark_rate_hz * protocol.window_length_us * 1e-6 * n_pulses as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Signal,
    Dark,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonRecord {
    pub pulse_index: u64,
    /// Measured from the opening of the window.
    pub time_in_window_us: f64,
    pub origin: Origin,
}

/// Signal detections of one emitter driven at `detuning_mhz`, appended to `out`.
fn signal_records<R: Rng>(
    emitter: &EffectiveEmitter,
    detuning_mhz: f64,
    n_pulses: u64,
    protocol: &PleProtocol,
    detector: &DetectorModel,
    rng: &mut R,
    out: &mut Vec<PhotonRecord>,
) {
    let p = excitation_probability(emitter, detuning_mhz);
    if p <= 0.0 || detector.total_efficiency <= 0.0 || n_pulses == 0 {
        return;
    }
    let skip = Geometric::new(p).expect("excitation probability in (0, 1]");
    let delay = Exp::new(1.0 / emitter.lifetime_us()).expect("positive lifetime");
    let (open, len) = (protocol.window_delay_us, protocol.window_length_us);
    let mut pulse = 0u64;
    loop {
        pulse = match pulse.checked_add(skip.sample(rng)) {
            Some(k) if k < n_pulses => k,
            _ => break,
        };
        let t = delay.sample(rng) - open;
        if (0.0..len).contains(&t) && rng.random::<f64>() < detector.total_efficiency {
            out.push(PhotonRecord {
                pulse_index: pulse,
                time_in_window_us: t,
                origin: Origin::Signal,
            });
        }
        pulse += 1;
    }
}

/// Homogeneous dark counts over `n_pulses` windows.
fn dark_records<R: Rng>(
    n_pulses: u64,
    protocol: &PleProtocol,
    detector: &DetectorModel,
    rng: &mut R,
    out: &mut Vec<PhotonRecord>,
) {
    let n = poisson(detector.dark_mean(protocol, n_pulses), rng);
    for _ in 0..n {
        out.push(PhotonRecord {
            pulse_index: rng.random_range(0..n_pulses),
            time_in_window_us: rng.random::<f64>() * protocol.window_length_us,
            origin: Origin::Dark,
        });
    }
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

/// Full detection record for emitters at the given detunings, sorted by pulse
/// and time.
pub fn simulate_photon_records(
    emitters: &[(EffectiveEmitter, f64)],
    protocol: &PleProtocol,
    detector: &DetectorModel,
    n_pulses: u64,
    seed: u64,
) -> Result<Vec<PhotonRecord>, SimError> {
    protocol.validate()?;
    detector.validate()?;
    let mut rng = rng_for(seed, 0);
    let mut out = Vec::new();
    for (e, detuning) in emitters {
        signal_records(e, *detuning, n_pulses, protocol, detector, &mut rng, &mut out);
    }
    dark_records(n_pulses, protocol, detector, &mut rng, &mut out);
    out.sort_by(|a, b| {
        a.pulse_index
            .cmp(&b.pulse_index)
            .then(a.time_in_window_us.total_cmp(&b.time_in_window_us))
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub frequency_offset_mhz: f64,
    pub counts: u64,
    pub integration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub points: Vec<ScanPoint>,
    pub master_seed: u64,
    pub config_digest: String,
}

impl ScanResult {
    pub fn with_digest(mut self, digest: impl Into<String>) -> Self {
        self.config_digest = digest.into();
        self
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.frequency_offset_mhz).collect()
    }

    pub fn counts(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.counts as f64).collect()
    }
}

/// An ion as the simulator sees it: the Stark model sets line position and
/// width, the effective emitter supplies lifetime and saturation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimIon {
    pub ion: IonModel,
    pub emitter: EffectiveEmitter,
}

impl SimIon {
    pub fn new(ion: IonModel, emitter: EffectiveEmitter) -> Self {
        Self { ion, emitter }
    }

    /// Emitter retuned to its shifted, broadened line under `field`.
    pub fn under_field(&self, field: FieldVector) -> Result<EffectiveEmitter, SimError> {
        let r = stark_shift_empirical(&self.ion, field);
        Ok(self
            .emitter
            .retuned(self.ion.zero_field_frequency_mhz + r.shift_mhz, r.fwhm_mhz)?)
    }
}

/// PLE scan over `protocol.scan_range_mhz` around zero offset.
pub fn simulate_ple_scan(
    ions: &[SimIon],
    protocol: &PleProtocol,
    detector: &DetectorModel,
    field: FieldVector,
    seed: u64,
) -> Result<ScanResult, SimError> {
    simulate_ple_scan_centered(ions, protocol, detector, field, 0.0, seed)
}

/// PLE scan with the scan range shifted by `center_mhz`.
pub fn simulate_ple_scan_centered(
    ions: &[SimIon],
    protocol: &PleProtocol,
    detector: &DetectorModel,
    field: FieldVector,
    center_mhz: f64,
    seed: u64,
) -> Result<ScanResult, SimError> {
    protocol.validate()?;
    detector.validate()?;
    let tuned = ions
        .iter()
        .map(|i| i.under_field(field))
        .collect::<Result<Vec<_>, _>>()?;
    let n_pulses = protocol.pulses_per_point();
    let points = protocol
        .scan_frequencies(center_mhz)
        .into_par_iter()
        .enumerate()
        .map(|(k, f)| {
            let mut rng = rng_for(seed, k as u64);
            let mut records = Vec::new();
            for e in &tuned {
                signal_records(
                    e,
                    f - e.frequency_mhz(),
                    n_pulses,
                    protocol,
                    detector,
                    &mut rng,
                    &mut records,
                );
            }
            dark_records(n_pulses, protocol, detector, &mut rng, &mut records);
            ScanPoint {
                frequency_offset_mhz: f,
                counts: records.len() as u64,
                integration_s: protocol.integration_time_per_point_s,
            }
        })
        .collect();
    Ok(ScanResult {
        points,
        master_seed: seed,
        config_digest: String::new(),
    })
}

/// Fixed-width histogram starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins of `bin_width` covering `[0, span]`; the last bin may be partial.
    pub fn covering(span: f64, bin_width: f64) -> Self {
        let n = ((span / bin_width) - 1e-9).ceil().max(1.0) as usize;
        Self {
            bin_width,
            counts: vec![0; n],
        }
    }

    pub fn add(&mut self, x: f64) {
        let k = ((x / self.bin_width).floor().max(0.0) as usize).min(self.counts.len() - 1);
        self.counts[k] += 1;
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|k| (k as f64 + 0.5) * self.bin_width)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Decay histogram of window times, laser on resonance with the emitter.
pub fn simulate_decay_histogram(
    effective: &EffectiveEmitter,
    protocol: &PleProtocol,
    detector: &DetectorModel,
    n_pulses: u64,
    bin_width_us: f64,
    seed: u64,
) -> Result<Histogram, SimError> {
    if !(bin_width_us > 0.0) || n_pulses == 0 {
        return Err(SimError::InvalidArgument(
            "bin width and pulse count must be positive".into(),
        ));
    }
    let records = simulate_photon_records(&[(*effective, 0.0)], protocol, detector, n_pulses, seed)?;
    let mut h = Histogram::covering(protocol.window_length_us, bin_width_us);
    for r in &records {
        h.add(r.time_in_window_us);
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// At most one signal photon per pulse.
    SingleEmitter,
    /// Poisson-distributed signal photons with the same mean.
    Poissonian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Options {
    /// Share of detections coming from Poissonian background.
    pub background_fraction: f64,
    pub source: SourceKind,
    pub n_pulses: u64,
    pub max_lag: usize,
}

impl Default for G2Options {
    fn default() -> Self {
        Self {
            background_fraction: 0.0,
            source: SourceKind::SingleEmitter,
            n_pulses: 1_000_000_000,
            max_lag: 10,
        }
    }
}

/// Coincidences between the two arms of the beam splitter, by pulse lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Histogram {
    pub max_lag: usize,
    /// Index `k + max_lag` holds lag `k`.
    pub coincidences: Vec<u64>,
}

impl G2Histogram {
    pub fn lags(&self) -> impl Iterator<Item = i64> + '_ {
        let m = self.max_lag as i64;
        -m..=m
    }

    pub fn at(&self, lag: i64) -> u64 {
        self.coincidences[(lag + self.max_lag as i64) as usize]
    }

    /// Mean over `1 ≤ |k| ≤ max_lag`.
    pub fn side_mean(&self) -> f64 {
        let side: u64 = self.coincidences.iter().sum::<u64>() - self.at(0);
        side as f64 / (2 * self.max_lag) as f64
    }

    /// Coincidences divided by the side-lag mean; NaN when that mean is zero.
    pub fn normalized(&self) -> Vec<f64> {
        let m = self.side_mean();
        self.coincidences
            .iter()
            .map(|&c| if m > 0.0 { c as f64 / m } else { f64::NAN })
            .collect()
    }
}

/// Pulses in `0..n` that succeed with probability `p`, by geometric skipping.
fn bernoulli_pulses<R: Rng>(n: u64, p: f64, rng: &mut R, mut f: impl FnMut(u64)) {
    if p <= 0.0 {
        return;
    }
    let skip = Geometric::new(p.min(1.0)).expect("probability in (0, 1]");
    let mut pulse = 0u64;
    loop {
        pulse = match pulse.checked_add(skip.sample(rng)) {
            Some(k) if k < n => k,
            _ => break,
        };
        f(pulse);
        pulse += 1;
    }
}

/// Hanbury Brown–Twiss record under the pulsed protocol with the laser on
/// resonance. Per pulse the signal detection probability is
/// `q = p_exc · P(window) · η`; background adds Poisson(`b`) detections per
/// pulse with `b = q·f/(1−f)`, so background makes up the fraction `f` of all
/// detections and the single-emitter `g²(0)` is `1 − (1−f)²`. The detector's
/// dark counts are part of that background and are not added separately.
pub fn simulate_g2_histogram(
    effective: &EffectiveEmitter,
    protocol: &PleProtocol,
    detector: &DetectorModel,
    options: &G2Options,
    seed: u64,
) -> Result<G2Histogram, SimError> {
    protocol.validate()?;
    detector.validate()?;
    let f = options.background_fraction;
    if !(0.0..1.0).contains(&f) {
        return Err(SimError::InvalidArgument(
            "background_fraction must lie in [0, 1)".into(),
        ));
    }
    if options.max_lag == 0 || options.n_pulses == 0 {
        return Err(SimError::InvalidArgument(
            "max_lag and n_pulses must be positive".into(),
        ));
    }
    let n = options.n_pulses;
    let q = effective.saturation_excitation_prob()
        * protocol.window_probability(effective.lifetime_us())
        * detector.total_efficiency;
    let b = q * f / (1.0 - f);

    let mut rng = rng_for(seed, 0);
    // Pulse indices of detections, one entry per photon.
    let mut photons: Vec<u64> = Vec::new();
    match options.source {
        SourceKind::SingleEmitter => bernoulli_pulses(n, q, &mut rng, |k| photons.push(k)),
        SourceKind::Poissonian => {
            for _ in 0..poisson(q * n as f64, &mut rng) {
                photons.push(rng.random_range(0..n));
            }
        }
    }
    for _ in 0..poisson(b * n as f64, &mut rng) {
        photons.push(rng.random_range(0..n));
    }
    photons.sort_unstable();

    let (mut arm_a, mut arm_b) = (Vec::new(), Vec::new());
    for k in photons {
        if rng.random::<bool>() {
            arm_a.push(k);
        } else {
            arm_b.push(k);
        }
    }
    Ok(correlate(&arm_a, &arm_b, options.max_lag))
}

/// `C(k)`: pairs with a click in arm A at pulse `i` and in arm B at `i + k`.
/// Both inputs must be sorted.
pub fn correlate(arm_a: &[u64], arm_b: &[u64], max_lag: usize) -> G2Histogram {
    let m = max_lag as u64;
    let mut c = vec![0u64; 2 * max_lag + 1];
    for &i in arm_a {
        let lo = arm_b.partition_point(|&j| j + m < i);
        for &j in arm_b[lo..].iter().take_while(|&&j| j <= i + m) {
            c[(j as i64 - i as i64 + max_lag as i64) as usize] += 1;
        }
    }
    G2Histogram {
        max_lag,
        coincidences: c,
    }
}

/// One voltage of a Stark sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct StarkScanPoint {
    pub voltage_v: f64,
    pub field: FieldVector,
    /// Line position the scan window was centered on, MHz.
    pub expected_peak_mhz: f64,
    pub scan: ScanResult,
}

/// PLE scans of one ion at each voltage. The field comes from a single
/// calibration solve scaled linearly; each scan window is centered on the
/// expected line position, snapped to the pitch grid.
pub fn simulate_stark_scan(
    ion: &SimIon,
    voltages_v: &[f64],
    calibration: &FieldCalibration,
    protocol: &PleProtocol,
    detector: &DetectorModel,
    max_voltage_v: f64,
    seed: u64,
) -> Result<Vec<StarkScanPoint>, SimError> {
    for &v in voltages_v {
        if !v.is_finite() || v.abs() > max_voltage_v {
            return Err(SimError::VoltageOutOfRange {
                voltage_v: v,
                max_v: max_voltage_v,
            });
        }
    }
    voltages_v
        .par_iter()
        .enumerate()
        .map(|(k, &v)| {
            let field = calibration.field(v);
            let expected = ion.ion.frequency_at(field);
            let center = (expected / protocol.scan_pitch_mhz).round() * protocol.scan_pitch_mhz;
            let scan = simulate_ple_scan_centered(
                std::slice::from_ref(ion),
                protocol,
                detector,
                field,
                center,
                mix_seed(seed, k as u64),
            )?;
            Ok(StarkScanPoint {
                voltage_v: v,
                field,
                expected_peak_mhz: expected,
                scan,
            })
        })
        .collect()
}
