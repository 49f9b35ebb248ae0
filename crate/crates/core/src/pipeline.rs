//! End-to-end runs: field calibration, simulation, fitting and the files each
//! figure dataset consists of. The command layer is a thin wrapper over this.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{
    estimate_g2_zero, find_peaks, fit_exponential_decay, fit_exponential_decay_on_floor, fit_linear_weighted,
    fit_lorentzian, fit_scan_lorentzian, FitError, FitResult,
};
use crate::config::{ConfigError, ExperimentConfig, RunManifest};
use crate::electrostatics::{FieldCalibration, FieldError};
use crate::experiment_sim::{
    mix_seed, simulate_decay_histogram, simulate_g2_histogram, simulate_ple_scan, simulate_stark_scan, G2Histogram,
    Histogram, ScanResult, SimError, SimIon, StarkScanPoint,
};
use crate::io::{self, IoError, ReportRow, StarkRow};
use crate::stark_model::StarkError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("field solver: {0}")]
    Solver(#[from] FieldError),
    #[error("simulation: {0}")]
    Simulation(#[from] SimError),
    #[error("fit: {0}")]
    Fit(#[from] FitError),
    #[error(transparent)]
    Stark(#[from] StarkError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(IoError::Io(e))
    }
}

/// Significance of a PLE peak above the median background, in Poisson σ.
pub const PEAK_THRESHOLD_SIGMA: f64 = 5.0;

/// Seed index of the extra zero/maximum-voltage pair of scans.
const MAX_SHIFT_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// PLE survey of the ion registry at zero field.
    Fig2,
    /// Fluorescence decay.
    Fig3b,
    /// Pulsed autocorrelation.
    Fig3c,
    /// PLE spectra of the sweep ion over the voltage series.
    Fig4a,
    /// Stark coefficients of every ion in the registry.
    Fig4b,
}

impl Figure {
    pub const ALL: [Figure; 5] = [Self::Fig2, Self::Fig3b, Self::Fig3c, Self::Fig4a, Self::Fig4b];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fig2 => "fig2",
            Self::Fig3b => "fig3b",
            Self::Fig3c => "fig3c",
            Self::Fig4a => "fig4a",
            Self::Fig4b => "fig4b",
        }
    }
}

impl std::str::FromStr for Figure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown figure {s}; expected one of fig2, fig3b, fig3c, fig4a, fig4b"))
    }
}

/// A voltage series of one ion with its per-voltage line fits and the
/// straight line through the fitted centers.
#[derive(Debug, Clone)]
pub struct StarkSweep {
    pub ion_id: String,
    pub points: Vec<StarkScanPoint>,
    pub rows: Vec<StarkRow>,
    pub line: FitResult,
}

/// Fitted shift between zero field and the maximum voltage, compared with
/// the fitted zero-field linewidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxShift {
    pub voltage_v: f64,
    pub shift_mhz: f64,
    pub shift_err_mhz: f64,
    pub zero_field_fwhm_mhz: f64,
    pub zero_field_fwhm_err_mhz: f64,
    pub ratio: f64,
    pub ratio_err: f64,
}

/// Configuration plus the solved field per volt at the probe.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub calibration: FieldCalibration,
}

impl Pipeline {
    /// Solves the layout once at the maximum voltage.
    pub fn new(config: ExperimentConfig) -> Result<Self, PipelineError> {
        let calibration = solve_calibration(&config)?;
        Ok(Self { config, calibration })
    }

    pub fn with_calibration(config: ExperimentConfig, calibration: FieldCalibration) -> Self {
        Self { config, calibration }
    }

    /// V/cm per volt along the gap axis.
    pub fn field_per_volt(&self) -> f64 {
        self.calibration.per_volt.parallel_v_per_cm
    }

    pub fn sim_ion(&self, id: &str) -> Result<SimIon, PipelineError> {
        let cfg = self.config.ion(id)?;
        let ion = cfg.model(self.field_per_volt(), self.config.run.max_voltage_v)?;
        let emitter = self.config.effective_emitter(cfg.zero_field_fwhm_mhz)?;
        Ok(SimIon::new(ion, emitter))
    }

    fn ion_index(&self, id: &str) -> Result<u64, PipelineError> {
        self.config.ion(id)?;
        Ok(self.config.ions.iter().position(|i| i.id == id).unwrap_or(0) as u64)
    }

    /// Full-range PLE scan of the given ions at `voltage_v`.
    pub fn survey(&self, ion_ids: &[String], voltage_v: f64, seed: u64) -> Result<ScanResult, PipelineError> {
        check_voltage(voltage_v, self.config.run.max_voltage_v)?;
        let ions = ion_ids
            .iter()
            .map(|id| self.sim_ion(id))
            .collect::<Result<Vec<_>, _>>()?;
        let scan = simulate_ple_scan(
            &ions,
            &self.config.protocol.protocol(),
            &self.config.detector.model(),
            self.calibration.field(voltage_v),
            seed,
        )?;
        Ok(scan.with_digest(self.config.digest()))
    }

    pub fn all_ion_ids(&self) -> Vec<String> {
        self.config.ions.iter().map(|i| i.id.clone()).collect()
    }

    /// Decay histogram of the sweep ion on resonance.
    pub fn decay(&self, seed: u64) -> Result<Histogram, PipelineError> {
        let ion = self.sim_ion(&self.config.stark.sweep_ion)?;
        let d = &self.config.decay;
        Ok(simulate_decay_histogram(
            &ion.emitter,
            &self.config.protocol.protocol(),
            &self.config.detector.model(),
            d.n_pulses,
            d.bin_width_us,
            seed,
        )?)
    }

    /// Dark counts expected per histogram bin over the configured pulses.
    pub fn decay_floor_per_bin(&self, bin_width_us: f64) -> f64 {
        self.config.detector.dark_rate_hz * 1e-6 * bin_width_us * self.config.decay.n_pulses as f64
    }

    /// τ on the known dark floor, the lifetime enhancement it implies, and
    /// for comparison τ with the floor left free.
    pub fn decay_report(&self, histogram: &Histogram) -> Result<Vec<ReportRow>, PipelineError> {
        let start = self.config.decay.fit_start_us;
        let fit = fit_exponential_decay_on_floor(histogram, start, self.decay_floor_per_bin(histogram.bin_width))?;
        let tau = fit.value("tau");
        let tau_se = fit.stderr("tau");
        let bulk_us = self.config.emitter.bulk_lifetime_ms * 1000.0;
        let mut rows = ReportRow::from_fit("", &fit);
        rows.push(ReportRow::new(
            "enhancement",
            bulk_us / tau,
            bulk_us / tau * tau_se / tau,
            "",
        ));
        if let Ok(free) = fit_exponential_decay(histogram, start) {
            rows.extend(ReportRow::from_fit("free_floor_", &free));
        }
        Ok(rows)
    }

    pub fn g2(&self, seed: u64) -> Result<G2Histogram, PipelineError> {
        let ion = self.sim_ion(&self.config.stark.sweep_ion)?;
        Ok(simulate_g2_histogram(
            &ion.emitter,
            &self.config.protocol.protocol(),
            &self.config.detector.model(),
            &self.config.g2.options(),
            seed,
        )?)
    }

    /// Voltage series of one ion with the configured sweep protocol.
    pub fn stark_sweep(&self, id: &str, seed: u64) -> Result<StarkSweep, PipelineError> {
        let ion = self.sim_ion(id)?;
        let stark = &self.config.stark;
        let points = simulate_stark_scan(
            &ion,
            &stark.voltages_v,
            &self.calibration,
            &stark.protocol(&self.config.protocol.protocol()),
            &self.config.detector.model(),
            self.config.run.max_voltage_v,
            mix_seed(seed, self.ion_index(id)?),
        )?;
        let rows = points
            .iter()
            .map(|p| {
                let fit = fit_scan_lorentzian(&p.scan)?;
                Ok(StarkRow {
                    voltage_v: p.voltage_v,
                    field_v_per_cm: p.field.parallel_v_per_cm,
                    peak_mhz: fit.value("center"),
                    peak_err_mhz: fit.stderr("center"),
                    fwhm_mhz: fit.value("fwhm"),
                    fwhm_err_mhz: fit.stderr("fwhm"),
                })
            })
            .collect::<Result<Vec<_>, FitError>>()?;
        let line = stark_line(&rows)?;
        Ok(StarkSweep {
            ion_id: id.to_string(),
            points,
            rows,
            line,
        })
    }

    /// Zero-field and maximum-voltage scans of the configured max-shift ion.
    pub fn max_shift(&self, seed: u64) -> Result<MaxShift, PipelineError> {
        let ion = self.sim_ion(&self.config.stark.max_shift_ion)?;
        let v = self.config.run.max_voltage_v;
        let pts = simulate_stark_scan(
            &ion,
            &[0.0, v],
            &self.calibration,
            &self.config.stark.protocol(&self.config.protocol.protocol()),
            &self.config.detector.model(),
            v,
            mix_seed(seed, MAX_SHIFT_STREAM),
        )?;
        let zero = fit_scan_lorentzian(&pts[0].scan)?;
        let full = fit_scan_lorentzian(&pts[1].scan)?;
        let shift = full.value("center") - zero.value("center");
        let shift_err = full.stderr("center").hypot(zero.stderr("center"));
        let fwhm = zero.value("fwhm");
        let fwhm_err = zero.stderr("fwhm");
        let ratio = shift / fwhm;
        Ok(MaxShift {
            voltage_v: v,
            shift_mhz: shift,
            shift_err_mhz: shift_err,
            zero_field_fwhm_mhz: fwhm,
            zero_field_fwhm_err_mhz: fwhm_err,
            ratio,
            ratio_err: ratio.abs() * ((shift_err / shift).powi(2) + (fwhm_err / fwhm).powi(2)).sqrt(),
        })
    }

    /// Writes the dataset of `figure` into `out_dir` and returns the paths
    /// written, manifest and config copy last.
    pub fn reproduce(&self, figure: Figure, seed: u64, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
        let mut written = Vec::new();
        let mut put = |name: &str, f: &dyn Fn(&mut dyn std::io::Write) -> Result<(), IoError>| {
            let path = out_dir.join(name);
            io::write_file(&path, f)?;
            written.push(path);
            Ok::<(), PipelineError>(())
        };
        match figure {
            Figure::Fig2 => {
                let scan = self.survey(&self.all_ion_ids(), 0.0, seed)?;
                let report = peak_report(&scan)?;
                put("ple_scan.csv", &|w| io::write_ple_scan(&scan, w))?;
                put("fit_report.csv", &|w| io::write_fit_report(&report, w))?;
            }
            Figure::Fig3b => {
                let h = self.decay(seed)?;
                let report = self.decay_report(&h)?;
                put("decay.csv", &|w| io::write_decay(&h, w))?;
                put("fit_report.csv", &|w| io::write_fit_report(&report, w))?;
            }
            Figure::Fig3c => {
                let h = self.g2(seed)?;
                let report = g2_report(&h)?;
                put("g2.csv", &|w| io::write_g2(&h, w))?;
                put("fit_report.csv", &|w| io::write_fit_report(&report, w))?;
            }
            Figure::Fig4a => {
                let sweep = self.stark_sweep(&self.config.stark.sweep_ion, seed)?;
                for (k, p) in sweep.points.iter().enumerate() {
                    put(&format!("ple_scan_{k:02}.csv"), &|w| io::write_ple_scan(&p.scan, w))?;
                }
                let report = sweep_report(&sweep);
                put("stark_scan.csv", &|w| io::write_stark_scan(&sweep.rows, w))?;
                put("fit_report.csv", &|w| io::write_fit_report(&report, w))?;
            }
            Figure::Fig4b => {
                let mut report = Vec::new();
                let mut slopes = Vec::new();
                for id in self.all_ion_ids() {
                    let sweep = self.stark_sweep(&id, seed)?;
                    put(&format!("stark_scan_{id}.csv"), &|w| {
                        io::write_stark_scan(&sweep.rows, w)
                    })?;
                    slopes.push(sweep.line.value("slope"));
                    report.extend(sweep_report(&sweep));
                }
                report.extend(class_report(&slopes));
                let m = self.max_shift(seed)?;
                let id = &self.config.stark.max_shift_ion;
                report.extend([
                    ReportRow::new(format!("ion_{id}_max_shift"), m.shift_mhz, m.shift_err_mhz, "MHz"),
                    ReportRow::new(
                        format!("ion_{id}_zero_field_fwhm"),
                        m.zero_field_fwhm_mhz,
                        m.zero_field_fwhm_err_mhz,
                        "MHz",
                    ),
                    ReportRow::new(format!("ion_{id}_shift_to_fwhm"), m.ratio, m.ratio_err, ""),
                ]);
                put("fit_report.csv", &|w| io::write_fit_report(&report, w))?;
            }
        }
        let manifest = RunManifest::new(&self.config, seed, format!("reproduce {}", figure.name()));
        manifest.write(&self.config, out_dir)?;
        written.push(out_dir.join("manifest.json"));
        written.push(out_dir.join("config.toml"));
        Ok(written)
    }
}

/// Field per volt at the probe from one solve at the maximum voltage.
pub fn solve_calibration(config: &ExperimentConfig) -> Result<FieldCalibration, PipelineError> {
    let layout = config.layout.layout(config.run.max_voltage_v);
    Ok(FieldCalibration::solve(
        &layout,
        &config.dielectric.map(),
        config.solver.spacing_um,
        config.solver.tolerance_v,
        &config.solver.options(),
    )?)
}

fn check_voltage(voltage_v: f64, max_v: f64) -> Result<(), SimError> {
    if voltage_v.is_finite() && voltage_v.abs() <= max_v {
        Ok(())
    } else {
        Err(SimError::VoltageOutOfRange { voltage_v, max_v })
    }
}

/// Weighted line through fitted centers against field.
pub fn stark_line(rows: &[StarkRow]) -> Result<FitResult, FitError> {
    let pts: Vec<_> = rows
        .iter()
        .map(|r| (r.field_v_per_cm, r.peak_mhz, r.peak_err_mhz))
        .collect();
    fit_linear_weighted(&pts)
}

fn sweep_report(sweep: &StarkSweep) -> Vec<ReportRow> {
    ReportRow::from_fit(&format!("ion_{}_", sweep.ion_id), &sweep.line)
}

/// Counts of red- and blue-shifting ions and the spread of |s|.
fn class_report(slopes: &[f64]) -> Vec<ReportRow> {
    let n = slopes.len() as f64;
    let blue = slopes.iter().filter(|s| **s > 0.0).count();
    let abs: Vec<f64> = slopes.iter().map(|s| s.abs()).collect();
    let mean = abs.iter().sum::<f64>() / n;
    let sd = if slopes.len() > 1 {
        (abs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    vec![
        ReportRow::new("blue_shift_ions", blue as f64, 0.0, ""),
        ReportRow::new("red_shift_ions", (slopes.len() - blue) as f64, 0.0, ""),
        ReportRow::new("abs_slope_mean", mean, sd / n.sqrt(), "kHz/(V/cm)"),
        ReportRow::new("abs_slope_sd", sd, 0.0, "kHz/(V/cm)"),
    ]
}

/// Lorentzian fit of every significant peak over a window of ±max(20 MHz,
/// 4 pitches). A candidate whose window fit fails is reported at its grid
/// position with the error of a uniform distribution over one pitch.
pub fn peak_report(scan: &ScanResult) -> Result<Vec<ReportRow>, FitError> {
    let peaks = find_peaks(scan, PEAK_THRESHOLD_SIGMA);
    let pitch = scan
        .points
        .windows(2)
        .map(|w| w[1].frequency_offset_mhz - w[0].frequency_offset_mhz)
        .next()
        .unwrap_or(0.0);
    let half = (4.0 * pitch).max(20.0);
    let mut rows = vec![ReportRow::new("peak_count", peaks.len() as f64, 0.0, "")];
    for (k, p) in peaks.iter().enumerate() {
        let window: Vec<(f64, f64)> = scan
            .points
            .iter()
            .filter(|s| (s.frequency_offset_mhz - p.center_mhz).abs() <= half)
            .map(|s| (s.frequency_offset_mhz, s.counts as f64))
            .collect();
        let name = format!("peak_{}_", k + 1);
        match fit_lorentzian(&window, None) {
            Ok(fit) if (fit.value("center") - p.center_mhz).abs() <= half => {
                for q in ["center", "fwhm", "amplitude"] {
                    let par = fit.get(q).expect("Lorentzian parameter");
                    rows.push(ReportRow::new(
                        format!("{name}{q}"),
                        par.value,
                        par.standard_error,
                        par.units.clone(),
                    ));
                }
            }
            _ => rows.push(ReportRow::new(
                format!("{name}center"),
                p.center_mhz,
                pitch / 12f64.sqrt(),
                "MHz",
            )),
        }
    }
    Ok(rows)
}

pub fn g2_report(histogram: &G2Histogram) -> Result<Vec<ReportRow>, FitError> {
    let g = estimate_g2_zero(histogram)?;
    Ok(vec![
        ReportRow::new("g2_zero", g.g2_zero, g.standard_error, ""),
        ReportRow::new("side_lag_mean", histogram.side_mean(), 0.0, "coincidences"),
    ])
}

pub fn stark_report(rows: &[StarkRow]) -> Result<Vec<ReportRow>, FitError> {
    Ok(ReportRow::from_fit("", &stark_line(rows)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::electrostatics::FieldVector;

    fn quick() -> Pipeline {
        let mut cfg = ExperimentConfig::default();
        cfg.decay.n_pulses = 200_000;
        cfg.g2.n_pulses = 2_000_000;
        cfg.stark.voltages_v = vec![0.0, 100.0, 200.0, 300.0];
        cfg.stark.integration_time_per_point_s = 5.0;
        let cal = FieldCalibration {
            per_volt: FieldVector::along_d2(63.26),
        };
        Pipeline::with_calibration(cfg, cal)
    }

    #[test]
    fn figure_names_parse() {
        for f in Figure::ALL {
            assert_eq!(f.name().parse::<Figure>().unwrap(), f);
        }
        assert!("fig5".parse::<Figure>().is_err());
    }

    #[test]
    fn calibrated_ion_hits_its_target_shift() {
        let p = quick();
        let ion = p.sim_ion("2").unwrap();
        let shift = ion.ion.stark_coefficient_khz_per_v_cm * 63.26 * 333.0 / 1000.0;
        assert!((shift - 182.9).abs() < 1e-9);
    }

    #[test]
    fn sweep_recovers_slope() {
        let s = quick().stark_sweep("1", 5).unwrap();
        assert_eq!(s.rows.len(), 4);
        let slope = s.line.value("slope");
        assert!((slope - 19.8).abs() < 5.0 * s.line.stderr("slope"), "{slope}");
    }

    #[test]
    fn survey_finds_the_registry() {
        let p = quick();
        let scan = p.survey(&p.all_ion_ids(), 0.0, 3).unwrap();
        let report = peak_report(&scan).unwrap();
        assert_eq!(report[0].quantity, "peak_count");
        assert_eq!(report[0].value, p.config.ions.len() as f64);
    }

    #[test]
    fn survey_rejects_excess_voltage() {
        let p = quick();
        assert!(matches!(
            p.survey(&[], 400.0, 1),
            Err(PipelineError::Simulation(SimError::VoltageOutOfRange { .. }))
        ));
    }

    #[test]
    fn class_counts() {
        let r = class_report(&[19.8, -20.0, 10.0]);
        assert_eq!(r[0].value, 2.0);
        assert_eq!(r[1].value, 1.0);
    }
}
