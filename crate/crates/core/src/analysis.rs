//! Peak finding, weighted least-squares fits and g²(0) estimation.
//!
//! Counting data are fitted with Gaussian least squares using Poisson weights,
//! variance `max(counts, 1)`. The minimizer is a Levenberg–Marquardt loop with
//! Marquardt's diagonal scaling; standard errors come from `(JᵀWJ)⁻¹` at the
//! optimum without rescaling by χ², since the weights are already absolute.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment_sim::{G2Histogram, Histogram, ScanResult};

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("no convergence after {iterations} iterations; last parameters {parameters:?}")]
    NotConverged { iterations: usize, parameters: Vec<f64> },
    #[error("singular design: all abscissae are identical")]
    SingularDesign,
    #[error("g² normalization undefined: {0}")]
    UndefinedNormalization(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
    pub standard_error: f64,
    pub units: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: Vec<Parameter>,
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub reduced_chi_square: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Value of a named parameter; panics on an unknown name.
    pub fn value(&self, name: &str) -> f64 {
        self.get(name).unwrap_or_else(|| panic!("no parameter {name}")).value
    }

    pub fn stderr(&self, name: &str) -> f64 {
        self.get(name)
            .unwrap_or_else(|| panic!("no parameter {name}"))
            .standard_error
    }
}

/// A model `f(x; p)` with an analytic Jacobian.
pub trait Model {
    fn names(&self) -> &'static [&'static str];
    fn units(&self) -> &'static [&'static str];
    fn eval(&self, x: f64, p: &[f64]) -> f64;
    /// `∂f/∂p_k` written into `out`.
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]);
}

/// `A / (1 + (2(f − f₀)/Γ)²) + c`, parameters `[A, f₀, Γ, c]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Lorentzian;

impl Model for Lorentzian {
    fn names(&self) -> &'static [&'static str] {
        &["amplitude", "center", "fwhm", "offset"]
    }

    fn units(&self) -> &'static [&'static str] {
        &["counts", "MHz", "MHz", "counts"]
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let u = 2.0 * (x - p[1]) / p[2];
        p[0] / (1.0 + u * u) + p[3]
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let (a, gamma) = (p[0], p[2]);
        let u = 2.0 * (x - p[1]) / gamma;
        let d = 1.0 / (1.0 + u * u);
        out[0] = d;
        out[1] = 4.0 * a * u * d * d / gamma;
        out[2] = 2.0 * a * u * u * d * d / gamma;
        out[3] = 1.0;
    }
}

/// `A·exp(−t/τ) + B`, parameters `[A, τ, B]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exponential;

impl Model for Exponential {
    fn names(&self) -> &'static [&'static str] {
        &["amplitude", "tau", "background"]
    }

    fn units(&self) -> &'static [&'static str] {
        &["counts", "us", "counts"]
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * (-x / p[1]).exp() + p[2]
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let e = (-x / p[1]).exp();
        out[0] = e;
        out[1] = p[0] * e * x / (p[1] * p[1]);
        out[2] = 1.0;
    }
}

/// `A·exp(−t/τ) + floor` with the floor known in advance, parameters `[A, τ]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExponentialOnFloor {
    pub floor: f64,
}

impl Model for ExponentialOnFloor {
    fn names(&self) -> &'static [&'static str] {
        &["amplitude", "tau"]
    }

    fn units(&self) -> &'static [&'static str] {
        &["counts", "us"]
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * (-x / p[1]).exp() + self.floor
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let e = (-x / p[1]).exp();
        out[0] = e;
        out[1] = p[0] * e * x / (p[1] * p[1]);
    }
}

/// Abscissae, ordinates and inverse-variance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
}

impl WeightedData {
    /// Counting data with variance `max(count, 1)`.
    pub fn poisson(x: Vec<f64>, counts: Vec<f64>) -> Self {
        let w = counts.iter().map(|&c| 1.0 / c.max(1.0)).collect();
        Self { x, y: counts, w }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// `χ²(p) = Σ w (y − f)²`.
pub fn objective<M: Model>(model: &M, data: &WeightedData, p: &[f64]) -> f64 {
    (0..data.len())
        .map(|i| {
            let r = data.y[i] - model.eval(data.x[i], p);
            data.w[i] * r * r
        })
        .sum()
}

/// `∇χ² = −2 Σ w (y − f) ∇f`.
pub fn objective_gradient<M: Model>(model: &M, data: &WeightedData, p: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; p.len()];
    let mut row = vec![0.0; p.len()];
    for i in 0..data.len() {
        let r = data.y[i] - model.eval(data.x[i], p);
        model.gradient(data.x[i], p, &mut row);
        for (gk, jk) in g.iter_mut().zip(&row) {
            *gk -= 2.0 * data.w[i] * r * jk;
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub max_iterations: usize,
    /// Converged when an accepted step lowers χ² by less than this fraction.
    pub relative_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 10.0,
            max_iterations: 200,
            relative_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub parameters: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub chi_square: f64,
    pub iterations: usize,
}

/// Normal equations `JᵀWJ` and `JᵀW r` at `p`.
fn normal_equations<M: Model>(model: &M, data: &WeightedData, p: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let n = p.len();
    let mut jtj = DMatrix::zeros(n, n);
    let mut jtr = DVector::zeros(n);
    let mut row = vec![0.0; n];
    for i in 0..data.len() {
        let r = data.y[i] - model.eval(data.x[i], p);
        model.gradient(data.x[i], p, &mut row);
        let w = data.w[i];
        for a in 0..n {
            jtr[a] += w * row[a] * r;
            for b in 0..=a {
                jtj[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            jtj[(b, a)] = jtj[(a, b)];
        }
    }
    (jtj, jtr)
}

/// Damped Gauss–Newton minimization of `χ²`.
pub fn levenberg_marquardt<M: Model>(
    model: &M,
    data: &WeightedData,
    initial: &[f64],
    options: &LmOptions,
) -> Result<LmOutcome, FitError> {
    let n = initial.len();
    if data.len() <= n {
        return Err(FitError::InsufficientData(format!(
            "{} points for {n} parameters",
            data.len()
        )));
    }
    let mut p = initial.to_vec();
    let mut chi2 = objective(model, data, &p);
    let mut lambda = options.initial_damping;
    let scale = data.y.iter().zip(&data.w).map(|(y, w)| w * y * y).sum::<f64>();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let (jtj, jtr) = normal_equations(model, data, &p);
        loop {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(f64::MIN_POSITIVE);
            }
            let step = a.lu().solve(&jtr);
            let trial: Option<Vec<f64>> = step.map(|s| p.iter().zip(s.iter()).map(|(v, d)| v + d).collect());
            let accepted = trial.and_then(|t| {
                let c = objective(model, data, &t);
                (c.is_finite() && c <= chi2).then_some((t, c))
            });
            match accepted {
                Some((t, c)) => {
                    let decrease = chi2 - c;
                    p = t;
                    chi2 = c;
                    lambda = (lambda / options.damping_down).max(1e-12);
                    if decrease <= options.relative_tolerance * chi2 || chi2 <= 1e-28 * scale {
                        converged = true;
                    }
                    break;
                }
                None => {
                    lambda *= options.damping_up;
                    if lambda > 1e16 {
                        // No step lowers χ² any further: a minimum to working precision.
                        converged = true;
                        break;
                    }
                }
            }
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(FitError::NotConverged {
            iterations,
            parameters: p,
        });
    }
    let (jtj, _) = normal_equations(model, data, &p);
    let covariance = jtj
        .try_inverse()
        .ok_or_else(|| FitError::Degenerate("normal matrix is singular at the optimum".into()))?;
    Ok(LmOutcome {
        parameters: p,
        covariance,
        chi_square: chi2,
        iterations,
    })
}

fn result_from<M: Model>(model: &M, outcome: &LmOutcome, n_points: usize) -> FitResult {
    let dof = n_points - outcome.parameters.len();
    let parameters = model
        .names()
        .iter()
        .zip(model.units())
        .enumerate()
        .map(|(k, (name, units))| Parameter {
            name: name.to_string(),
            value: outcome.parameters[k],
            standard_error: outcome.covariance[(k, k)].max(0.0).sqrt(),
            units: units.to_string(),
        })
        .collect();
    FitResult {
        parameters,
        chi_square: outcome.chi_square,
        degrees_of_freedom: dof,
        reduced_chi_square: outcome.chi_square / dof as f64,
        converged: true,
        iterations: outcome.iterations,
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn has_spread(y: &[f64]) -> bool {
    y.iter().any(|&v| v != y[0])
}

/// Starting point `[A, f₀, Γ, c]` from the highest point, the median level
/// and the half-maximum crossings around the peak.
pub fn lorentzian_guess(x: &[f64], y: &[f64]) -> [f64; 4] {
    let c = median(y);
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty data");
    let half = c + 0.5 * (ymax - c);
    let mut lo = imax;
    while lo > 0 && y[lo] > half {
        lo -= 1;
    }
    let mut hi = imax;
    while hi + 1 < y.len() && y[hi] > half {
        hi += 1;
    }
    let pitch = if x.len() > 1 {
        (x[x.len() - 1] - x[0]).abs() / (x.len() - 1) as f64
    } else {
        1.0
    };
    let width = (x[hi] - x[lo]).abs().max(pitch);
    [ymax - c, x[imax], width, c]
}

/// Lorentzian line fit to counting data `(frequency MHz, counts)`.
pub fn fit_lorentzian(points: &[(f64, f64)], initial: Option<[f64; 4]>) -> Result<FitResult, FitError> {
    if points.len() < 8 {
        return Err(FitError::InsufficientData(format!(
            "Lorentzian fit needs at least 8 points, got {}",
            points.len()
        )));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    if !has_spread(&y) {
        return Err(FitError::Degenerate("counts have zero variance".into()));
    }
    let guess = initial.unwrap_or_else(|| lorentzian_guess(&x, &y));
    let span = x.iter().copied().fold(f64::NEG_INFINITY, f64::max) - x.iter().copied().fold(f64::INFINITY, f64::min);
    if span <= guess[2].abs() {
        return Err(FitError::InsufficientData("scan does not span one line width".into()));
    }
    let data = WeightedData::poisson(x, y);
    let outcome = levenberg_marquardt(&Lorentzian, &data, &guess, &LmOptions::default())?;
    let mut result = result_from(&Lorentzian, &outcome, data.len());
    // The model is even in Γ.
    result.parameters[2].value = result.parameters[2].value.abs();
    Ok(result)
}

/// Lorentzian fit to a PLE scan.
pub fn fit_scan_lorentzian(scan: &ScanResult) -> Result<FitResult, FitError> {
    let pts: Vec<(f64, f64)> = scan
        .points
        .iter()
        .map(|p| (p.frequency_offset_mhz, p.counts as f64))
        .collect();
    fit_lorentzian(&pts, None)
}

/// Starting point `[A, τ, B]`: tail level, head excess and the 1/e crossing.
pub fn exponential_guess(t: &[f64], y: &[f64]) -> [f64; 3] {
    let n = y.len();
    let tail = (n / 10).max(1);
    let b = y[n - tail..].iter().sum::<f64>() / tail as f64;
    let head = (n / 20).max(1);
    let a = (y[..head].iter().sum::<f64>() / head as f64 - b).max(1.0);
    let target = b + a / std::f64::consts::E;
    let k = y.iter().position(|&v| v < target).unwrap_or(n - 1);
    let tau = (t[k] - t[0]).max((t[n - 1] - t[0]) / 10.0);
    [a * (t[0] / tau).exp(), tau, b]
}

/// Exponential decay plus flat background, using bins whose centers are at or
/// after `fit_start_us`.
pub fn fit_exponential_decay(histogram: &Histogram, fit_start_us: f64) -> Result<FitResult, FitError> {
    let (t, y): (Vec<f64>, Vec<f64>) = histogram
        .centers()
        .into_iter()
        .zip(&histogram.counts)
        .filter(|(t, _)| *t >= fit_start_us)
        .map(|(t, &c)| (t, c as f64))
        .unzip();
    fit_exponential_points(&t, &y)
}

/// Exponential decay on a background floor known in advance, e.g. from the
/// detector's calibrated dark rate. Only amplitude and τ are fitted.
pub fn fit_exponential_decay_on_floor(
    histogram: &Histogram,
    fit_start_us: f64,
    floor_per_bin: f64,
) -> Result<FitResult, FitError> {
    let (t, y): (Vec<f64>, Vec<f64>) = histogram
        .centers()
        .into_iter()
        .zip(&histogram.counts)
        .filter(|(t, _)| *t >= fit_start_us)
        .map(|(t, &c)| (t, c as f64))
        .unzip();
    check_decay_data(&t, &y)?;
    let [a, tau, _] = exponential_guess(&t, &y);
    let model = ExponentialOnFloor { floor: floor_per_bin };
    let data = WeightedData::poisson(t, y);
    let outcome = levenberg_marquardt(&model, &data, &[a, tau], &LmOptions::default())?;
    Ok(result_from(&model, &outcome, data.len()))
}

fn check_decay_data(t: &[f64], y: &[f64]) -> Result<(), FitError> {
    if t.len() < 5 {
        return Err(FitError::InsufficientData(format!(
            "decay fit needs at least 5 bins, got {}",
            t.len()
        )));
    }
    if !has_spread(y) {
        return Err(FitError::Degenerate("counts have zero variance".into()));
    }
    Ok(())
}

/// Exponential fit to arbitrary `(time µs, counts)` data.
pub fn fit_exponential_points(t: &[f64], y: &[f64]) -> Result<FitResult, FitError> {
    check_decay_data(t, y)?;
    let guess = exponential_guess(t, y);
    let data = WeightedData::poisson(t.to_vec(), y.to_vec());
    let outcome = levenberg_marquardt(&Exponential, &data, &guess, &LmOptions::default())?;
    Ok(result_from(&Exponential, &outcome, data.len()))
}

/// Inverse-variance weighted straight line through `(field V/cm, shift MHz,
/// shift error MHz)`. The slope is reported in kHz/(V·cm⁻¹). When every error
/// is zero the points are weighted equally and the covariance is scaled by the
/// residual variance.
pub fn fit_linear_weighted(points: &[(f64, f64, f64)]) -> Result<FitResult, FitError> {
    if points.len() < 3 {
        return Err(FitError::InsufficientData(format!(
            "linear fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let all_zero = points.iter().all(|p| p.2 == 0.0);
    if !all_zero && points.iter().any(|p| !(p.2 > 0.0 && p.2.is_finite())) {
        return Err(FitError::InsufficientData("shift errors must be positive".into()));
    }
    if !points.iter().any(|p| p.0 != points[0].0) {
        return Err(FitError::SingularDesign);
    }
    let w: Vec<f64> = points
        .iter()
        .map(|p| if all_zero { 1.0 } else { 1.0 / (p.2 * p.2) })
        .collect();
    let sw: f64 = w.iter().sum();
    let xm = points.iter().zip(&w).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let ym = points.iter().zip(&w).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxx: f64 = points.iter().zip(&w).map(|(p, w)| w * (p.0 - xm).powi(2)).sum();
    let sxy: f64 = points.iter().zip(&w).map(|(p, w)| w * (p.0 - xm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let chi2: f64 = points
        .iter()
        .zip(&w)
        .map(|(p, w)| w * (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let dof = points.len() - 2;
    let scale = if all_zero { chi2 / dof as f64 } else { 1.0 };
    let var_slope = scale / sxx;
    let var_intercept = scale * (1.0 / sw + xm * xm / sxx);
    Ok(FitResult {
        parameters: vec![
            Parameter {
                name: "slope".into(),
                value: slope * 1000.0,
                standard_error: var_slope.sqrt() * 1000.0,
                units: "kHz/(V/cm)".into(),
            },
            Parameter {
                name: "intercept".into(),
                value: intercept,
                standard_error: var_intercept.sqrt(),
                units: "MHz".into(),
            },
        ],
        chi_square: chi2,
        degrees_of_freedom: dof,
        reduced_chi_square: chi2 / dof as f64,
        converged: true,
        iterations: 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakCandidate {
    pub center_mhz: f64,
    pub height: f64,
    pub prominence: f64,
}

/// Interior local maxima whose prominence exceeds `threshold_sigma·√m`, with
/// `m` the median count floored at one. A flat-topped maximum is reported at
/// its lowest frequency. Prominence is the smaller of the topographic
/// prominence and the height above the median.
pub fn find_peaks(scan: &ScanResult, threshold_sigma: f64) -> Vec<PeakCandidate> {
    let x = scan.frequencies();
    let y = scan.counts();
    let n = y.len();
    let background = median(&y);
    let threshold = threshold_sigma * background.max(1.0).sqrt();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if y[i] <= y[i - 1] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < n && y[j + 1] == y[i] {
            j += 1;
        }
        if j + 1 < n && y[j + 1] < y[i] {
            let h = y[i];
            let left_base = y[..i].iter().rev().take_while(|&&v| v <= h).fold(h, |m, &v| m.min(v));
            let right_base = y[j + 1..].iter().take_while(|&&v| v <= h).fold(h, |m, &v| m.min(v));
            let prominence = (h - left_base.max(right_base)).min(h - background);
            if prominence > threshold {
                out.push(PeakCandidate {
                    center_mhz: x[i],
                    height: h,
                    prominence,
                });
            }
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Estimate {
    pub g2_zero: f64,
    pub standard_error: f64,
}

/// `C(0)` over the mean of the side lags. Poisson errors on `C(0)` and on the
/// summed side lags are propagated; an empty zero-lag bin is given the error
/// of a single count.
pub fn estimate_g2_zero(histogram: &G2Histogram) -> Result<G2Estimate, FitError> {
    let nonzero = histogram.lags().filter(|&k| k != 0 && histogram.at(k) > 0).count();
    if nonzero < 3 {
        return Err(FitError::UndefinedNormalization(format!(
            "{nonzero} side lags hold coincidences, at least 3 needed"
        )));
    }
    let mean = histogram.side_mean();
    let side_total = mean * (2 * histogram.max_lag) as f64;
    let c0 = histogram.at(0) as f64;
    let g = c0 / mean;
    let se = if c0 > 0.0 {
        g * (1.0 / c0 + 1.0 / side_total).sqrt()
    } else {
        1.0 / mean
    };
    Ok(G2Estimate {
        g2_zero: g,
        standard_error: se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment_sim::ScanPoint;
    use proptest::prelude::*;

    fn lorentz_points(p: [f64; 4]) -> Vec<(f64, f64)> {
        (0..=40)
            .map(|k| {
                let f = -100.0 + 5.0 * k as f64;
                (f, Lorentzian.eval(f, &p))
            })
            .collect()
    }

    fn scan_of(counts: &[u64]) -> ScanResult {
        ScanResult {
            points: counts
                .iter()
                .enumerate()
                .map(|(k, &c)| ScanPoint {
                    frequency_offset_mhz: 5.0 * k as f64,
                    counts: c,
                    integration_s: 5.0,
                })
                .collect(),
            master_seed: 0,
            config_digest: String::new(),
        }
    }

    #[test]
    fn noiseless_lorentzian() {
        let truth = [100.0, 0.0, 6.7, 0.0];
        let r = fit_lorentzian(&lorentz_points(truth), None).unwrap();
        assert!((r.value("amplitude") - 100.0).abs() < 1e-6 * 100.0);
        assert!(r.value("center").abs() < 1e-6);
        assert!((r.value("fwhm") - 6.7).abs() < 1e-6 * 6.7);
        assert!(r.value("offset").abs() < 1e-6);
    }

    #[test]
    fn noiseless_exponential() {
        let t: Vec<f64> = (0..85).map(|k| k as f64 + 0.5).collect();
        let y: Vec<f64> = t.iter().map(|&t| Exponential.eval(t, &[1000.0, 41.0, 3.0])).collect();
        let r = fit_exponential_points(&t, &y).unwrap();
        assert!((r.value("tau") - 41.0).abs() < 41.0e-6);
        assert!((r.value("amplitude") - 1000.0).abs() < 1e-3);
    }

    #[test]
    fn noiseless_exponential_on_known_floor() {
        let mut h = Histogram::covering(85.0, 1.0);
        for (k, c) in h.counts.iter_mut().enumerate() {
            *c = (Exponential.eval(k as f64 + 0.5, &[1000.0, 41.0, 20.0])).round() as u64;
        }
        let r = fit_exponential_decay_on_floor(&h, 0.0, 20.0).unwrap();
        assert!((r.value("tau") - 41.0).abs() < 0.1);
        assert_eq!(r.parameters.len(), 2);
    }

    #[test]
    fn flat_data_rejected() {
        let pts: Vec<(f64, f64)> = (0..20).map(|k| (k as f64, 7.0)).collect();
        assert!(matches!(fit_lorentzian(&pts, None), Err(FitError::Degenerate(_))));
        assert!(matches!(
            fit_lorentzian(&pts[..5], None),
            Err(FitError::InsufficientData(_))
        ));
    }

    #[test]
    fn exact_line() {
        let pts: Vec<(f64, f64, f64)> = (0..6)
            .map(|k| {
                let e = 1000.0 * k as f64;
                (e, 0.0198 * e + 3.0, 0.0)
            })
            .collect();
        let r = fit_linear_weighted(&pts).unwrap();
        assert!((r.value("slope") - 19.8).abs() < 1e-9);
        assert!((r.value("intercept") - 3.0).abs() < 1e-9);
        assert!(r.stderr("slope") < 1e-9);
    }

    #[test]
    fn linear_fit_errors() {
        assert_eq!(
            fit_linear_weighted(&[(1.0, 1.0, 0.1); 4]),
            Err(FitError::SingularDesign)
        );
        assert!(fit_linear_weighted(&[(1.0, 1.0, 0.1), (2.0, 1.0, 0.1)]).is_err());
        assert!(fit_linear_weighted(&[(1.0, 1.0, 0.1), (2.0, 1.0, 0.0), (3.0, 1.0, 0.1)]).is_err());
    }

    #[test]
    fn equal_errors_match_ordinary_least_squares() {
        let pts = [
            (0.0, 0.1, 0.3),
            (1.0, 1.2, 0.3),
            (2.0, 1.9, 0.3),
            (3.0, 3.2, 0.3),
            (4.0, 3.9, 0.3),
        ];
        let r = fit_linear_weighted(&pts).unwrap();
        // OLS slope: Σ(x − x̄)(y − ȳ) / Σ(x − x̄)² with x̄ = 2, ȳ = 2.06.
        let slope = (-2.0 * -1.96 + -1.0 * -0.86 + 0.0 + 1.0 * 1.14 + 2.0 * 1.84) / 10.0;
        assert!((r.value("slope") / 1000.0 - slope).abs() < 1e-12);
        assert!((r.stderr("slope") / 1000.0 - 0.3 / 10f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn peaks_on_toy_scans() {
        assert!(find_peaks(&scan_of(&[0; 30]), 5.0).is_empty());
        let mut c = vec![9u64; 41];
        c[20] = 180;
        c[19] = 60;
        c[21] = 60;
        let p = find_peaks(&scan_of(&c), 5.0);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].center_mhz, 100.0);
        assert_eq!(p[0].prominence, 171.0);
        // Plateau: lowest frequency wins.
        let mut c = vec![9u64; 20];
        c[5] = 100;
        c[6] = 100;
        let p = find_peaks(&scan_of(&c), 5.0);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].center_mhz, 25.0);
    }

    #[test]
    fn g2_estimates() {
        let h = G2Histogram {
            max_lag: 3,
            coincidences: vec![10, 10, 10, 0, 10, 10, 10],
        };
        let e = estimate_g2_zero(&h).unwrap();
        assert_eq!(e.g2_zero, 0.0);
        assert!(e.standard_error.is_finite() && e.standard_error > 0.0);
        let flat = G2Histogram {
            max_lag: 3,
            coincidences: vec![7; 7],
        };
        assert_eq!(estimate_g2_zero(&flat).unwrap().g2_zero, 1.0);
        let sparse = G2Histogram {
            max_lag: 3,
            coincidences: vec![0, 0, 1, 5, 1, 0, 0],
        };
        assert!(matches!(
            estimate_g2_zero(&sparse),
            Err(FitError::UndefinedNormalization(_))
        ));
    }

    fn gradient_check<M: Model>(model: &M, data: &WeightedData, p: &[f64]) -> f64 {
        let g = objective_gradient(model, data, p);
        let mut worst: f64 = 0.0;
        for k in 0..p.len() {
            let h = 1e-6 * p[k].abs().max(1e-3);
            let (mut up, mut dn) = (p.to_vec(), p.to_vec());
            up[k] += h;
            dn[k] -= h;
            let fd = (objective(model, data, &up) - objective(model, data, &dn)) / (2.0 * h);
            let scale = g[k]
                .abs()
                .max(fd.abs())
                .max(1e-8 * objective(model, data, p) / p[k].abs().max(1e-3));
            worst = worst.max((g[k] - fd).abs() / scale);
        }
        worst
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn lorentzian_gradient_matches_differences(
            a in 10.0..500.0f64, f0 in -20.0..20.0f64, w in 3.0..15.0f64, c in 0.0..20.0f64,
            da in 0.8..1.2f64, df in -3.0..3.0f64, dw in 0.8..1.2f64,
        ) {
            let pts = lorentz_points([a, f0, w, c]);
            let data = WeightedData::poisson(pts.iter().map(|p| p.0).collect(), pts.iter().map(|p| p.1.round()).collect());
            let err = gradient_check(&Lorentzian, &data, &[a * da, f0 + df, w * dw, c + 1.0]);
            prop_assert!(err < 1e-4, "{err}");
        }

        #[test]
        fn exponential_gradient_matches_differences(
            a in 100.0..5000.0f64, tau in 10.0..80.0f64, b in 0.0..30.0f64, d in 0.8..1.2f64,
        ) {
            let t: Vec<f64> = (0..85).map(|k| k as f64 + 0.5).collect();
            let y: Vec<f64> = t.iter().map(|&t| Exponential.eval(t, &[a, tau, b]).round()).collect();
            let data = WeightedData::poisson(t, y);
            let err = gradient_check(&Exponential, &data, &[a * d, tau / d, b + 0.5]);
            prop_assert!(err < 1e-4, "{err}");
        }

        #[test]
        fn count_scaling_leaves_shape_unchanged(k in 1.5..20.0f64) {
            let truth = [80.0, 3.0, 7.0, 10.0];
            let pts = lorentz_points(truth);
            let scaled: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x, y * k)).collect();
            let a = fit_lorentzian(&pts, None).unwrap();
            let b = fit_lorentzian(&scaled, None).unwrap();
            prop_assert!((a.value("center") - b.value("center")).abs() < 1e-6);
            prop_assert!((a.value("fwhm") - b.value("fwhm")).abs() < 1e-6);
            prop_assert!((b.value("amplitude") / a.value("amplitude") - k).abs() < 1e-6 * k);
        }

        #[test]
        fn g2_scale_invariant(c in proptest::collection::vec(1u64..1000, 7), m in 2u64..50) {
            let h = G2Histogram { max_lag: 3, coincidences: c.clone() };
            let s = G2Histogram { max_lag: 3, coincidences: c.iter().map(|v| v * m).collect() };
            let (a, b) = (estimate_g2_zero(&h).unwrap(), estimate_g2_zero(&s).unwrap());
            prop_assert!((a.g2_zero - b.g2_zero).abs() < 1e-12 * a.g2_zero.max(1.0));
        }
    }
}
