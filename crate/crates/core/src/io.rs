//! CSV files exchanged between the simulators, the fitters and the command
//! layer. Comma separated, `\n` line endings, one header row. Floats are
//! written in the shortest form that parses back to the same `f64`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::analysis::FitResult;
use crate::experiment_sim::{G2Histogram, Histogram, ScanPoint, ScanResult};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("unexpected header {found:?}, expected {expected:?}")]
    Header { found: String, expected: String },
    #[error("{0}")]
    Content(String),
}

pub const PLE_HEADER: &[&str] = &["frequency_offset_mhz", "counts", "integration_s"];
pub const DECAY_HEADER: &[&str] = &["time_us", "counts"];
pub const G2_HEADER: &[&str] = &["lag_pulses", "coincidences", "normalized"];
pub const STARK_HEADER: &[&str] = &[
    "voltage_v",
    "field_v_per_cm",
    "peak_mhz",
    "peak_err_mhz",
    "fwhm_mhz",
    "fwhm_err_mhz",
];
pub const FIT_REPORT_HEADER: &[&str] = &["quantity", "value", "stderr", "units"];

/// Shortest decimal representation that round-trips to the same `f64`,
/// switching to exponent notation for very small or large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn writer<W: Write>(out: W, header: &[&str]) -> Result<csv::Writer<W>, IoError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

fn reader<R: Read>(input: R, header: &[&str]) -> Result<csv::Reader<R>, IoError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let found = r.headers()?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(IoError::Header {
            found: found.iter().collect::<Vec<_>>().join(","),
            expected: header.join(","),
        });
    }
    Ok(r)
}

/// Which of the known formats a header row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvKind {
    PleScan,
    Decay,
    G2,
    StarkScan,
    FitReport,
}

pub fn detect_kind(path: &Path) -> Result<CsvKind, IoError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let h: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let table = [
        (PLE_HEADER, CsvKind::PleScan),
        (DECAY_HEADER, CsvKind::Decay),
        (G2_HEADER, CsvKind::G2),
        (STARK_HEADER, CsvKind::StarkScan),
        (FIT_REPORT_HEADER, CsvKind::FitReport),
    ];
    table
        .iter()
        .find(|(hdr, _)| h.iter().map(String::as_str).eq(hdr.iter().copied()))
        .map(|(_, k)| *k)
        .ok_or_else(|| IoError::Content(format!("unrecognized CSV header {}", h.join(","))))
}

pub fn write_ple_scan<W: Write>(scan: &ScanResult, out: W) -> Result<(), IoError> {
    let mut w = writer(out, PLE_HEADER)?;
    for p in &scan.points {
        w.write_record([
            fmt_f64(p.frequency_offset_mhz),
            p.counts.to_string(),
            fmt_f64(p.integration_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct PleRow {
    frequency_offset_mhz: f64,
    counts: u64,
    integration_s: f64,
}

/// Scan points only; seed and digest live in the manifest.
pub fn read_ple_scan<R: Read>(input: R) -> Result<ScanResult, IoError> {
    let mut r = reader(input, PLE_HEADER)?;
    let points = r
        .deserialize::<PleRow>()
        .map(|row| {
            row.map(|p| ScanPoint {
                frequency_offset_mhz: p.frequency_offset_mhz,
                counts: p.counts,
                integration_s: p.integration_s,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScanResult {
        points,
        master_seed: 0,
        config_digest: String::new(),
    })
}

/// One row per bin, timed at the bin center.
pub fn write_decay<W: Write>(h: &Histogram, out: W) -> Result<(), IoError> {
    let mut w = writer(out, DECAY_HEADER)?;
    for (t, c) in h.centers().iter().zip(&h.counts) {
        w.write_record([fmt_f64(*t), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct DecayRow {
    time_us: f64,
    counts: u64,
}

pub fn read_decay<R: Read>(input: R) -> Result<Histogram, IoError> {
    let mut r = reader(input, DECAY_HEADER)?;
    let rows = r.deserialize::<DecayRow>().collect::<Result<Vec<_>, _>>()?;
    let first = rows
        .first()
        .ok_or_else(|| IoError::Content("decay file has no bins".into()))?;
    Ok(Histogram {
        bin_width: 2.0 * first.time_us,
        counts: rows.iter().map(|r| r.counts).collect(),
    })
}

pub fn write_g2<W: Write>(h: &G2Histogram, out: W) -> Result<(), IoError> {
    let mut w = writer(out, G2_HEADER)?;
    for ((lag, c), n) in h.lags().zip(&h.coincidences).zip(h.normalized()) {
        w.write_record([lag.to_string(), c.to_string(), fmt_f64(n)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct G2Row {
    lag_pulses: i64,
    coincidences: u64,
}

pub fn read_g2<R: Read>(input: R) -> Result<G2Histogram, IoError> {
    let mut r = reader(input, G2_HEADER)?;
    let rows = r.deserialize::<G2Row>().collect::<Result<Vec<_>, _>>()?;
    let max_lag = rows.last().map_or(0, |r| r.lag_pulses);
    let symmetric = max_lag > 0
        && rows.len() as i64 == 2 * max_lag + 1
        && rows.iter().enumerate().all(|(k, r)| r.lag_pulses == k as i64 - max_lag);
    if !symmetric {
        return Err(IoError::Content(
            "g2 lags must run from -max_lag to max_lag in steps of one".into(),
        ));
    }
    Ok(G2Histogram {
        max_lag: max_lag as usize,
        coincidences: rows.iter().map(|r| r.coincidences).collect(),
    })
}

/// One fitted line of a voltage sweep.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct StarkRow {
    pub voltage_v: f64,
    pub field_v_per_cm: f64,
    pub peak_mhz: f64,
    pub peak_err_mhz: f64,
    pub fwhm_mhz: f64,
    pub fwhm_err_mhz: f64,
}

pub fn write_stark_scan<W: Write>(rows: &[StarkRow], out: W) -> Result<(), IoError> {
    let mut w = writer(out, STARK_HEADER)?;
    for r in rows {
        w.write_record([
            fmt_f64(r.voltage_v),
            fmt_f64(r.field_v_per_cm),
            fmt_f64(r.peak_mhz),
            fmt_f64(r.peak_err_mhz),
            fmt_f64(r.fwhm_mhz),
            fmt_f64(r.fwhm_err_mhz),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stark_scan<R: Read>(input: R) -> Result<Vec<StarkRow>, IoError> {
    let mut r = reader(input, STARK_HEADER)?;
    Ok(r.deserialize::<StarkRow>().collect::<Result<Vec<_>, _>>()?)
}

/// One reported quantity.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReportRow {
    pub quantity: String,
    pub value: f64,
    pub stderr: f64,
    pub units: String,
}

impl ReportRow {
    pub fn new(quantity: impl Into<String>, value: f64, stderr: f64, units: impl Into<String>) -> Self {
        Self {
            quantity: quantity.into(),
            value,
            stderr,
            units: units.into(),
        }
    }

    /// Every parameter of a fit, prefixed, plus its reduced χ².
    pub fn from_fit(prefix: &str, fit: &FitResult) -> Vec<Self> {
        let mut rows: Vec<Self> = fit
            .parameters
            .iter()
            .map(|p| {
                Self::new(
                    format!("{prefix}{}", p.name),
                    p.value,
                    p.standard_error,
                    p.units.clone(),
                )
            })
            .collect();
        rows.push(Self::new(
            format!("{prefix}reduced_chi_square"),
            fit.reduced_chi_square,
            0.0,
            "",
        ));
        rows
    }
}

pub fn write_fit_report<W: Write>(rows: &[ReportRow], out: W) -> Result<(), IoError> {
    let mut w = writer(out, FIT_REPORT_HEADER)?;
    for r in rows {
        w.write_record([r.quantity.clone(), fmt_f64(r.value), fmt_f64(r.stderr), r.units.clone()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fit_report<R: Read>(input: R) -> Result<Vec<ReportRow>, IoError> {
    let mut r = reader(input, FIT_REPORT_HEADER)?;
    Ok(r.deserialize::<ReportRow>().collect::<Result<Vec<_>, _>>()?)
}

/// Creates `path` and hands a buffered writer to `f`.
pub fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<(), IoError>) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(File::create(path)?);
    f(&mut out)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-12, 6.02e23, 19.8, -1.6768808563938364e-8, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(-1.5e-8), "-1.5e-8");
        assert_eq!(fmt_f64(333.0), "333");
    }

    #[test]
    fn ple_round_trip() {
        let scan = ScanResult {
            points: vec![
                ScanPoint {
                    frequency_offset_mhz: -5.0,
                    counts: 3,
                    integration_s: 5.0,
                },
                ScanPoint {
                    frequency_offset_mhz: 0.1 + 0.2,
                    counts: 12,
                    integration_s: 5.0,
                },
            ],
            master_seed: 0,
            config_digest: String::new(),
        };
        let mut buf = Vec::new();
        write_ple_scan(&scan, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("frequency_offset_mhz,counts,integration_s\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_ple_scan(&buf[..]).unwrap(), scan);
    }

    #[test]
    fn decay_and_g2_round_trip() {
        let h = Histogram {
            bin_width: 2.0,
            counts: vec![5, 4, 3],
        };
        let mut buf = Vec::new();
        write_decay(&h, &mut buf).unwrap();
        assert_eq!(read_decay(&buf[..]).unwrap(), h);
        let g = G2Histogram {
            max_lag: 2,
            coincidences: vec![4, 5, 0, 6, 5],
        };
        let mut buf = Vec::new();
        write_g2(&g, &mut buf).unwrap();
        assert_eq!(read_g2(&buf[..]).unwrap(), g);
    }

    #[test]
    fn stark_and_report_round_trip() {
        let rows = vec![StarkRow {
            voltage_v: 30.0,
            field_v_per_cm: 1897.8,
            peak_mhz: 37.6,
            peak_err_mhz: 0.1,
            fwhm_mhz: 6.8,
            fwhm_err_mhz: 0.2,
        }];
        let mut buf = Vec::new();
        write_stark_scan(&rows, &mut buf).unwrap();
        assert_eq!(read_stark_scan(&buf[..]).unwrap(), rows);
        let report = vec![ReportRow::new("slope", 19.8, 0.5, "kHz/(V/cm)")];
        let mut buf = Vec::new();
        write_fit_report(&report, &mut buf).unwrap();
        assert_eq!(read_fit_report(&buf[..]).unwrap(), report);
    }

    #[test]
    fn wrong_header_rejected() {
        let text = "time_us,counts\n1,2\n";
        assert!(matches!(read_ple_scan(text.as_bytes()), Err(IoError::Header { .. })));
    }
}
