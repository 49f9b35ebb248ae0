//! Command-line surface.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | file I/O or unreadable input |
//! | 2 | configuration invalid |
//! | 3 | field solver failed to converge |
//! | 4 | simulation failed |
//! | 5 | fit failed |
//! | 6 | no voltage brings the two ions into resonance |
//! | 7 | the resonance voltage exceeds the maximum voltage |
//! | 64 | usage error |
//!
//! Diagnostics go to stderr. Stdout carries the paths of written files, or
//! the report of `field` and `resonance`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{fit_exponential_decay, FitError};
use crate::config::{ConfigError, ExperimentConfig, RunManifest};
use crate::electrostatics::{solve_potential_with, FieldCalibration, FieldError};
use crate::experiment_sim::SimError;
use crate::io::{self, CsvKind, IoError, ReportRow};
use crate::pipeline::{self, Figure, Pipeline, PipelineError};
use crate::stark_model::{resonance_voltage, StarkError};

pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_SIMULATION: i32 = 4;
pub const EXIT_FIT: i32 = 5;
pub const EXIT_NO_SOLUTION: i32 = 6;
pub const EXIT_OUT_OF_RANGE: i32 = 7;
pub const EXIT_USAGE: i32 = 64;

/// Caps the worker threads of every parallel section.
pub const THREADS_ENV: &str = "STARKSIM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "starksim", version, about = "Stark tuning of cavity-coupled single ions")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment configuration (TOML). The bundled reference device is used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; defaults to `run.seed` of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; defaults to `run.output_dir` of the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the electrode layout and print the field at the probe point.
    Field {
        /// Applied voltage; defaults to `run.max_voltage_v`.
        #[arg(long, allow_hyphen_values = true)]
        voltage: Option<f64>,
        /// Also write the potential grid to `<out>/potential_grid.csv`.
        #[arg(long)]
        dump_grid: bool,
    },
    /// Simulate a PLE scan over the configured range.
    Ple {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        voltage: f64,
        /// Ion to include; repeat for several. All registry ions when absent.
        #[arg(long = "ion")]
        ions: Vec<String>,
    },
    /// Simulate and fit a fluorescence decay histogram.
    Decay,
    /// Simulate and evaluate a pulsed autocorrelation histogram.
    G2,
    /// Voltage series of one ion and its Stark coefficient.
    Stark {
        /// Defaults to `stark.sweep_ion`.
        #[arg(long)]
        ion: Option<String>,
    },
    /// Fit a CSV written by another subcommand.
    Fit { input: PathBuf },
    /// Voltage that brings two ions into resonance.
    Resonance {
        #[arg(long)]
        ion_a: String,
        #[arg(long)]
        ion_b: String,
    },
    /// Write the dataset of one figure.
    Reproduce { figure: Figure },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("no voltage brings ions {0} and {1} into resonance")]
    NoSolution(String, String),
    #[error("resonance needs {required_v:.3} V, beyond the maximum of {max_v} V")]
    OutOfRange { required_v: f64, max_v: f64 },
}

macro_rules! into_pipeline {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::Pipeline(e.into())
            }
        }
    )*};
}

into_pipeline!(
    ConfigError,
    FieldError,
    SimError,
    FitError,
    IoError,
    StarkError,
    std::io::Error
);

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::NoSolution(..) => EXIT_NO_SOLUTION,
            Self::OutOfRange { .. } => EXIT_OUT_OF_RANGE,
            Self::Pipeline(p) => match p {
                PipelineError::Config(_) => EXIT_CONFIG,
                PipelineError::Solver(FieldError::NotConverged { .. }) => EXIT_SOLVER,
                PipelineError::Solver(FieldError::Io(_)) => EXIT_IO,
                PipelineError::Solver(_) => EXIT_CONFIG,
                PipelineError::Simulation(_) => EXIT_SIMULATION,
                PipelineError::Fit(_) => EXIT_FIT,
                PipelineError::Stark(StarkError::NoSolution) => EXIT_NO_SOLUTION,
                PipelineError::Stark(StarkError::OutOfRange { .. }) => EXIT_OUT_OF_RANGE,
                PipelineError::Stark(_) => EXIT_CONFIG,
                PipelineError::Io(_) => EXIT_IO,
            },
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Stdout and stderr are the given writers.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    let threads = match thread_count(std::env::var(THREADS_ENV).ok().as_deref()) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error: cannot start worker threads: {e}");
            return EXIT_IO;
        }
    };
    let mut report = Vec::new();
    let result = pool.install(|| execute(&cli, &mut report));
    let _ = stdout.write_all(&report);
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

/// Entry point of the binary.
pub fn main_exit_code() -> i32 {
    run(
        std::env::args_os(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    )
}

/// Worker count from the environment value; 0 lets the pool decide.
pub fn thread_count(value: Option<&str>) -> Result<usize, CliError> {
    match value.map(str::trim) {
        None | Some("") => Ok(0),
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, ConfigError> {
    match &common.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    }
}

fn command_line(cli: &Cli) -> String {
    let name = match &cli.command {
        Command::Field { .. } => "field",
        Command::Ple { .. } => "ple",
        Command::Decay => "decay",
        Command::G2 => "g2",
        Command::Stark { .. } => "stark",
        Command::Fit { .. } => "fit",
        Command::Resonance { .. } => "resonance",
        Command::Reproduce { figure } => return format!("reproduce {}", figure.name()),
    };
    name.to_string()
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(&cli.common)?;
    let seed = cli.common.seed.unwrap_or(config.run.seed);
    let out = cli.common.out.clone().unwrap_or_else(|| config.run.output_dir.clone());
    let mut written = Vec::new();
    match &cli.command {
        Command::Field { voltage, dump_grid } => {
            let v = voltage.unwrap_or(config.run.max_voltage_v);
            cmd_field(&config, v, dump_grid.then_some(out.as_path()), stdout, &mut written)?;
        }
        Command::Ple { voltage, ions } => {
            let p = Pipeline::new(config.clone())?;
            let ids = if ions.is_empty() { p.all_ion_ids() } else { ions.clone() };
            let scan = p.survey(&ids, *voltage, seed)?;
            let report = pipeline::peak_report(&scan)?;
            save(&out, "ple_scan.csv", &mut written, |w| io::write_ple_scan(&scan, w))?;
            save(&out, "fit_report.csv", &mut written, |w| {
                io::write_fit_report(&report, w)
            })?;
        }
        Command::Decay => {
            let p = Pipeline::new(config.clone())?;
            let h = p.decay(seed)?;
            let report = p.decay_report(&h)?;
            save(&out, "decay.csv", &mut written, |w| io::write_decay(&h, w))?;
            save(&out, "fit_report.csv", &mut written, |w| {
                io::write_fit_report(&report, w)
            })?;
        }
        Command::G2 => {
            let p = Pipeline::new(config.clone())?;
            let h = p.g2(seed)?;
            let report = pipeline::g2_report(&h)?;
            save(&out, "g2.csv", &mut written, |w| io::write_g2(&h, w))?;
            save(&out, "fit_report.csv", &mut written, |w| {
                io::write_fit_report(&report, w)
            })?;
        }
        Command::Stark { ion } => {
            let p = Pipeline::new(config.clone())?;
            let id = ion.clone().unwrap_or_else(|| config.stark.sweep_ion.clone());
            let sweep = p.stark_sweep(&id, seed)?;
            let report = ReportRow::from_fit("", &sweep.line);
            save(&out, "stark_scan.csv", &mut written, |w| {
                io::write_stark_scan(&sweep.rows, w)
            })?;
            save(&out, "fit_report.csv", &mut written, |w| {
                io::write_fit_report(&report, w)
            })?;
        }
        Command::Fit { input } => {
            let report = cmd_fit(&config, input)?;
            save(&out, "fit_report.csv", &mut written, |w| {
                io::write_fit_report(&report, w)
            })?;
        }
        Command::Resonance { ion_a, ion_b } => {
            return cmd_resonance(&config, ion_a, ion_b, stdout);
        }
        Command::Reproduce { figure } => {
            let p = Pipeline::new(config.clone())?;
            written = p.reproduce(*figure, seed, &out)?;
        }
    }
    if !written.is_empty() {
        if !matches!(cli.command, Command::Reproduce { .. }) {
            RunManifest::new(&config, seed, command_line(cli)).write(&config, &out)?;
            written.push(out.join("manifest.json"));
            written.push(out.join("config.toml"));
        }
        for path in &written {
            writeln!(stdout, "{}", path.display())?;
        }
    }
    Ok(())
}

fn save(
    dir: &Path,
    name: &str,
    written: &mut Vec<PathBuf>,
    f: impl FnOnce(&mut dyn Write) -> Result<(), IoError>,
) -> Result<(), IoError> {
    let path = dir.join(name);
    io::write_file(&path, f)?;
    written.push(path);
    Ok(())
}

fn cmd_field(
    config: &ExperimentConfig,
    voltage_v: f64,
    dump_dir: Option<&Path>,
    stdout: &mut dyn Write,
    written: &mut Vec<PathBuf>,
) -> Result<(), CliError> {
    let layout = config.layout.layout(voltage_v);
    let s = &config.solver;
    let grid = solve_potential_with(
        &layout,
        &config.dielectric.map(),
        s.spacing_um,
        s.tolerance_v,
        &s.options(),
    )?;
    let field = grid.field_at(layout.probe_point)?;
    let per_volt = if voltage_v != 0.0 {
        FieldCalibration::from_grid(&grid, &layout)?.per_volt.parallel_v_per_cm
    } else {
        pipeline::solve_calibration(config)?.per_volt.parallel_v_per_cm
    };
    if let Some(dir) = dump_dir {
        let path = dir.join("potential_grid.csv");
        io::write_file(&path, |w| {
            grid.write_csv(w).map_err(|e| IoError::Content(e.to_string()))
        })?;
        written.push(path);
    }
    let p = layout.probe_point;
    writeln!(stdout, "probe_um {} {}", io::fmt_f64(p.x_um), io::fmt_f64(p.y_um))?;
    writeln!(stdout, "voltage_v {}", io::fmt_f64(voltage_v))?;
    writeln!(
        stdout,
        "field_parallel_v_per_cm {}",
        io::fmt_f64(field.parallel_v_per_cm)
    )?;
    writeln!(
        stdout,
        "field_perpendicular_v_per_cm {}",
        io::fmt_f64(field.perpendicular_v_per_cm)
    )?;
    writeln!(stdout, "field_magnitude_v_per_cm {}", io::fmt_f64(field.magnitude()))?;
    writeln!(stdout, "v_per_cm_per_volt {}", io::fmt_f64(per_volt))?;
    writeln!(stdout, "solver_iterations {}", grid.iterations())?;
    Ok(())
}

fn cmd_fit(config: &ExperimentConfig, input: &Path) -> Result<Vec<ReportRow>, CliError> {
    let kind = io::detect_kind(input)?;
    let file = std::fs::File::open(input)?;
    let rows = match kind {
        CsvKind::PleScan => pipeline::peak_report(&io::read_ple_scan(file)?)?,
        CsvKind::Decay => {
            let h = io::read_decay(file)?;
            if config.detector.dark_rate_hz > 0.0 {
                let calibration = FieldCalibration {
                    per_volt: Default::default(),
                };
                Pipeline::with_calibration(config.clone(), calibration).decay_report(&h)?
            } else {
                ReportRow::from_fit("", &fit_exponential_decay(&h, config.decay.fit_start_us)?)
            }
        }
        CsvKind::G2 => pipeline::g2_report(&io::read_g2(file)?)?,
        CsvKind::StarkScan => pipeline::stark_report(&io::read_stark_scan(file)?)?,
        CsvKind::FitReport => {
            return Err(CliError::Usage(format!("{} is already a fit report", input.display())));
        }
    };
    Ok(rows)
}

fn cmd_resonance(config: &ExperimentConfig, ion_a: &str, ion_b: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    let p = Pipeline::new(config.clone())?;
    let a = p.sim_ion(ion_a)?.ion;
    let b = p.sim_ion(ion_b)?.ion;
    let k = p.field_per_volt();
    let max_v = config.run.max_voltage_v;
    let v = match resonance_voltage(&a, &b, k, max_v) {
        Ok(v) => v,
        Err(StarkError::NoSolution) => return Err(CliError::NoSolution(ion_a.into(), ion_b.into())),
        Err(StarkError::OutOfRange { required_v }) => {
            writeln!(stdout, "required_voltage_v {}", io::fmt_f64(required_v))?;
            writeln!(stdout, "max_voltage_v {}", io::fmt_f64(max_v))?;
            writeln!(stdout, "feasible false")?;
            return Err(CliError::OutOfRange { required_v, max_v });
        }
        Err(e) => return Err(e.into()),
    };
    let field = p.calibration.field(v);
    let residual = a.frequency_at(field) - b.frequency_at(field);
    writeln!(stdout, "required_voltage_v {}", io::fmt_f64(v))?;
    writeln!(stdout, "field_v_per_cm {}", io::fmt_f64(field.parallel_v_per_cm))?;
    writeln!(stdout, "residual_detuning_mhz {}", io::fmt_f64(residual))?;
    writeln!(stdout, "max_voltage_v {}", io::fmt_f64(max_v))?;
    writeln!(stdout, "feasible true")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("starksim").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run_args(&["nonsense"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["reproduce", "fig9"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["resonance", "--ion-a", "1"]).0, EXIT_USAGE);
        let (code, out, _) = run_args(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("reproduce"));
    }

    #[test]
    fn thread_env_parsing() {
        assert_eq!(thread_count(None).unwrap(), 0);
        assert_eq!(thread_count(Some("4")).unwrap(), 4);
        assert!(thread_count(Some("0")).is_err());
        assert!(thread_count(Some("many")).is_err());
    }

    #[test]
    fn malformed_config_exits_2_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[layout]\ngap_um = \"wide\"\n").unwrap();
        let (code, _, err) = run_args(&["--config", path.to_str().unwrap(), "decay"]);
        assert_eq!(code, EXIT_CONFIG);
        assert!(err.contains("line 2"), "{err}");
        std::fs::write(&path, "[layout]\ngap_mm = 0.1\n").unwrap();
        assert_eq!(run_args(&["--config", path.to_str().unwrap(), "decay"]).0, EXIT_CONFIG);
    }

    #[test]
    fn exit_code_mapping() {
        let e: CliError = FieldError::NotConverged {
            iterations: 1,
            last_update: 1.0,
        }
        .into();
        assert_eq!(e.exit_code(), EXIT_SOLVER);
        let e: CliError = SimError::InvalidArgument("x".into()).into();
        assert_eq!(e.exit_code(), EXIT_SIMULATION);
        let e: CliError = FitError::SingularDesign.into();
        assert_eq!(e.exit_code(), EXIT_FIT);
        assert_eq!(
            CliError::NoSolution("1".into(), "2".into()).exit_code(),
            EXIT_NO_SOLUTION
        );
        assert_eq!(
            CliError::OutOfRange {
                required_v: 500.0,
                max_v: 333.0
            }
            .exit_code(),
            EXIT_OUT_OF_RANGE
        );
    }
}
