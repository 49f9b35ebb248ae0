//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero when any fails.

use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use starksim::analysis::{
    estimate_g2_zero, fit_exponential_decay, fit_exponential_decay_on_floor, fit_exponential_points, fit_lorentzian,
    objective, objective_gradient, Exponential, Lorentzian, Model, WeightedData,
};
use starksim::config::ExperimentConfig;
use starksim::electrostatics::{
    solve_potential_with, uniform_field_oracle, DielectricMap, ElectrodeLayout, FieldVector, Point, SolverOptions,
};
use starksim::emitter_cavity::{effective_lifetime, purcell_factor, EffectiveEmitter};
use starksim::experiment_sim::{
    mix_seed, simulate_decay_histogram, simulate_g2_histogram, simulate_ple_scan, DetectorModel, PleProtocol,
    SourceKind,
};
use starksim::pipeline::{Figure, Pipeline};
use starksim::stark_model::{orientation_shifts, site_images, Orientations};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn reference() -> ExperimentConfig {
    ExperimentConfig::default()
}

fn emitter(cfg: &ExperimentConfig) -> EffectiveEmitter {
    let tau = effective_lifetime(&cfg.emitter.params(), purcell_factor(&cfg.cavity.params()));
    EffectiveEmitter::new(tau, 6.7, 0.0, cfg.emitter.saturation_excitation_prob).unwrap()
}

fn lifetime_chain() -> Outcome {
    let cfg = reference();
    let e = emitter(&cfg);
    let protocol = cfg.protocol.protocol();
    let detector = cfg.detector.model();
    let n_pulses = 10_000_000;
    let floor = detector.dark_rate_hz * 1e-6 * 1.0 * n_pulses as f64;
    let (mut known, mut free, mut slowest) = (0, 0, 0.0f64);
    for k in 0..20 {
        let t = Instant::now();
        let h = simulate_decay_histogram(&e, &protocol, &detector, n_pulses, 1.0, mix_seed(cfg.run.seed, k)).unwrap();
        slowest = slowest.max(t.elapsed().as_secs_f64());
        let fit = fit_exponential_decay_on_floor(&h, 0.0, floor).unwrap();
        known += usize::from((fit.value("tau") - 41.0).abs() <= 1.4);
        if let Ok(f) = fit_exponential_decay(&h, 0.0) {
            free += usize::from((f.value("tau") - 41.0).abs() <= 1.4);
        }
    }
    outcome(
        known >= 19 && slowest < 60.0,
        format!(
            "tau = {:.3} us configured; {known}/20 seeds within 41.0 +/- 1.4 us on the dark floor \
             (free floor: {free}/20); slowest simulation {slowest:.2} s",
            e.lifetime_us()
        ),
    )
}

fn antibunching() -> Outcome {
    let cfg = reference();
    let e = emitter(&cfg);
    let protocol = cfg.protocol.protocol();
    let detector = cfg.detector.model();
    let seed = cfg.run.seed;
    let mut opts = cfg.g2.options();
    opts.background_fraction = 1.0 - 0.949;
    let mixed = estimate_g2_zero(&simulate_g2_histogram(&e, &protocol, &detector, &opts, seed).unwrap()).unwrap();
    opts.background_fraction = 0.0;
    let pure_hist = simulate_g2_histogram(&e, &protocol, &detector, &opts, seed + 1).unwrap();
    let pure = estimate_g2_zero(&pure_hist).unwrap();
    opts.source = SourceKind::Poissonian;
    let poisson = estimate_g2_zero(&simulate_g2_histogram(&e, &protocol, &detector, &opts, seed + 2).unwrap()).unwrap();
    let ok_mixed = (0.06..=0.14).contains(&mixed.g2_zero);
    let ok_pure = pure.g2_zero == 0.0 && pure_hist.at(0) == 0;
    let ok_poisson = (poisson.g2_zero - 1.0).abs() <= 3.0 * poisson.standard_error;
    outcome(
        ok_mixed && ok_pure && ok_poisson,
        format!(
            "signal fraction 0.949: g2(0) = {:.4} +/- {:.4}; pure emitter: {}; Poissonian: {:.4} +/- {:.4}",
            mixed.g2_zero, mixed.standard_error, pure.g2_zero, poisson.g2_zero, poisson.standard_error
        ),
    )
}

fn stark_linearity(p: &Pipeline) -> Outcome {
    let sweep = p.stark_sweep("1", p.config.run.seed).unwrap();
    let slope = sweep.line.value("slope");
    let se = sweep.line.stderr("slope");
    let chi = sweep.line.reduced_chi_square;
    let n = sweep.rows.len();
    let pull = (slope - 19.8) / se;
    outcome(
        n >= 6 && pull.abs() <= 3.0 && (0.3..=3.0).contains(&chi),
        format!(
            "{n} voltages: slope {slope:.4} +/- {se:.4} kHz/(V/cm), {pull:+.2} SE from 19.8; reduced chi2 {chi:.3}"
        ),
    )
}

/// A single run lands inside the ratio band about 95% of the time (the band
/// is about 2 SE of the simulated linewidth fit), so the ensemble mean over
/// 20 independent seeds is compared with the band.
fn maximum_shift_ratio(p: &Pipeline) -> Outcome {
    let runs: Vec<_> = (0..20)
        .map(|k| p.max_shift(mix_seed(p.config.run.seed, k)).unwrap())
        .collect();
    let n = runs.len() as f64;
    let ratio = runs.iter().map(|m| m.ratio).sum::<f64>() / n;
    let shift = runs.iter().map(|m| m.shift_mhz).sum::<f64>() / n;
    let ratio_band = runs.iter().filter(|m| (m.ratio - 27.3).abs() <= 1.2).count();
    let shift_band = runs.iter().filter(|m| (m.shift_mhz - 182.9).abs() <= 0.8).count();
    let configured = p.max_shift(p.config.run.seed).unwrap();
    outcome(
        (ratio - 27.3).abs() <= 1.2 && shift_band == runs.len(),
        format!(
            "s = {:.4} kHz/(V/cm); mean shift/fwhm {ratio:.3} ({ratio_band}/20 runs in 27.3 +/- 1.2); \
             mean shift {shift:.3} MHz ({shift_band}/20 within 182.9 +/- 0.8); configured seed alone: {:.3}",
            p.sim_ion("2").unwrap().ion.stark_coefficient_khz_per_v_cm,
            configured.ratio
        ),
    )
}

fn small_coplanar(rng: &mut ChaCha8Rng) -> ElectrodeLayout {
    let w = rng.random_range(10.0..30.0);
    let gap = rng.random_range(10.0..30.0);
    let v = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
    ElectrodeLayout::coplanar(w, gap, v).with_probe(Point::new(rng.random_range(-0.3..0.3) * gap, 0.0))
}

fn field_solver() -> Outcome {
    let opts = SolverOptions::default();
    // Parallel plates: the dielectric interface is along the field.
    let plates = ElectrodeLayout::parallel_plate(100.0, 60.0, [333.0, 0.0]);
    let grid = solve_potential_with(&plates, &DielectricMap::default(), 2.5, 1e-9, &opts).unwrap();
    let oracle = uniform_field_oracle(333.0, 100.0);
    let plate_err = (grid.field_at(Point::new(0.0, 0.0)).unwrap().parallel_v_per_cm - oracle).abs() / oracle;

    let cfg = reference();
    let s = &cfg.solver;
    let d = cfg.dielectric.map();
    let probe = cfg.layout.layout(1.0).probe_point;
    let solve = |v: f64, h: f64| {
        solve_potential_with(&cfg.layout.layout(v), &d, h, s.tolerance_v, &s.options())
            .unwrap()
            .field_at(probe)
            .unwrap()
            .parallel_v_per_cm
    };
    let e1 = solve(166.5, s.spacing_um);
    let e2 = solve(333.0, s.spacing_um);
    // Both solves stop once a cycle moves no node by more than the tolerance.
    let doubling_err = (e2 - 2.0 * e1).abs();
    let doubling_ok = doubling_err <= 1e-6 * e2.abs();
    let coarse = solve(333.0, 2.0 * s.spacing_um);
    let fine = solve(333.0, 0.5 * s.spacing_um);
    let step_coarse = (e2 - coarse).abs() / e2;
    let step_fine = (fine - e2).abs() / fine;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut violations = 0;
    for _ in 0..100 {
        let layout = small_coplanar(&mut rng);
        let dielectric = DielectricMap {
            relative_permittivity_above: 1.0,
            relative_permittivity_below: rng.random_range(1.0..12.0),
        };
        let h = layout.gap_um / 20.0;
        let g = solve_potential_with(&layout, &dielectric, h, 1e-9, &opts).unwrap();
        let [a, b] = layout.electrode_potentials_v;
        let lo = a.min(b).min(0.0) - 1e-9;
        let hi = a.max(b).max(0.0) + 1e-9;
        violations += usize::from(g.values().iter().any(|v| !(lo..=hi).contains(v)));
    }
    outcome(
        plate_err < 1e-3 && doubling_ok && step_coarse < 5e-3 && step_fine < 5e-3 && violations == 0,
        format!(
            "parallel plate error {:.2e}; doubling residual {doubling_err:.2e} V/cm; refinement change {:.3}% \
             ({} -> {} um), {:.3}% ({} -> {} um); maximum principle violated on {violations}/100 layouts",
            plate_err,
            100.0 * step_coarse,
            2.0 * s.spacing_um,
            s.spacing_um,
            100.0 * step_fine,
            s.spacing_um,
            0.5 * s.spacing_um
        ),
    )
}

fn degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xDE6);
    let mut bad = 0;
    for _ in 0..1000 {
        let e = rng.random_range(1.0..5e4);
        let s = rng.random_range(1.0..40.0);
        let field = FieldVector::along_d2(e);
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        for o in [
            Orientations::PerpendicularToB,
            Orientations::Projections(site_images(axis)),
        ] {
            let v = orientation_shifts(s, field, &o);
            let symmetric = (0..4).all(|k| (v[k] + v[3 - k]).abs() <= 1e-12 * v[3].abs());
            let mut distinct: Vec<f64> = Vec::new();
            for x in v {
                if !distinct.iter().any(|d| (d - x).abs() <= 1e-12 * v[3].abs()) {
                    distinct.push(x);
                }
            }
            let two_classes = distinct.len() == 2 && distinct[0] < 0.0 && distinct[1] > 0.0;
            let zero_projection = v[3].abs() <= 1e-12 * s * e;
            if !(symmetric && (two_classes || zero_projection)) {
                bad += 1;
            }
        }
    }
    outcome(
        bad == 0,
        format!("{bad} of 2000 shift sets break the +/- pairing (1000 fields, empirical and projected site models)"),
    )
}

fn gradient_error<M: Model>(m: &M, data: &WeightedData, p: &[f64]) -> f64 {
    let g = objective_gradient(m, data, p);
    let fd: Vec<f64> = (0..p.len())
        .map(|k| {
            let h = 1e-6 * p[k].abs().max(1e-3);
            let mut a = p.to_vec();
            let mut b = p.to_vec();
            a[k] += h;
            b[k] -= h;
            (objective(m, data, &a) - objective(m, data, &b)) / (2.0 * h)
        })
        .collect();
    let diff = g.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = fd.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm
}

fn fit_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF17);
    let (mut worst_grad, mut worst_fit) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let truth = [
            rng.random_range(50.0..500.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(4.0..12.0),
            rng.random_range(1.0..20.0),
        ];
        let x: Vec<f64> = (0..81).map(|k| -60.0 + 1.5 * k as f64).collect();
        let y: Vec<f64> = x.iter().map(|&f| Lorentzian.eval(f, &truth)).collect();
        let noisy: Vec<f64> = y.iter().map(|v| (v + rng.random_range(-3.0..3.0)).max(0.0)).collect();
        let at = truth.map(|v| v * rng.random_range(0.9..1.1));
        worst_grad = worst_grad.max(gradient_error(
            &Lorentzian,
            &WeightedData::poisson(x.clone(), noisy),
            &at,
        ));
        let pts: Vec<(f64, f64)> = x.iter().copied().zip(y).collect();
        let fit = fit_lorentzian(&pts, None).unwrap();
        for (k, name) in ["amplitude", "center", "fwhm", "offset"].iter().enumerate() {
            let scale = if k == 1 { truth[2] } else { truth[k].abs() };
            worst_fit = worst_fit.max((fit.value(name) - truth[k]).abs() / scale);
        }

        let truth = [
            rng.random_range(100.0..2000.0),
            rng.random_range(10.0..60.0),
            rng.random_range(0.5..30.0),
        ];
        let t: Vec<f64> = (0..85).map(|k| k as f64 + 0.5).collect();
        let y: Vec<f64> = t.iter().map(|&s| Exponential.eval(s, &truth)).collect();
        let noisy: Vec<f64> = y.iter().map(|v| (v + rng.random_range(-2.0..2.0)).max(0.0)).collect();
        let at = truth.map(|v| v * rng.random_range(0.9..1.1));
        worst_grad = worst_grad.max(gradient_error(
            &Exponential,
            &WeightedData::poisson(t.clone(), noisy),
            &at,
        ));
        let fit = fit_exponential_points(&t, &y).unwrap();
        for (k, name) in ["amplitude", "tau", "background"].iter().enumerate() {
            worst_fit = worst_fit.max((fit.value(name) - truth[k]).abs() / truth[k]);
        }
    }
    outcome(
        worst_grad < 1e-4 && worst_fit < 1e-6,
        format!(
            "worst gradient mismatch {worst_grad:.2e}; worst noiseless parameter error {worst_fit:.2e} (200 instances)"
        ),
    )
}

fn determinism() -> Outcome {
    let cfg = reference();
    let seed = cfg.run.seed;
    let root = tempfile::tempdir().unwrap();
    let run = |threads: usize, name: &str| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let dir = root.path().join(name);
        pool.install(|| {
            Pipeline::new(cfg.clone())
                .unwrap()
                .reproduce(Figure::Fig4b, seed, &dir)
                .unwrap()
        });
        let mut files: Vec<_> = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        files
            .iter()
            .map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(p).unwrap()))
            .collect::<Vec<_>>()
    };
    let n = std::thread::available_parallelism().map_or(4, |n| n.get()).max(4);
    let a = run(n, "a");
    let b = run(n, "b");
    let single = run(1, "single");
    outcome(
        a.len() >= 8 && a == b && a == single,
        format!(
            "{} CSV files; repeat run identical: {}; 1 vs {n} workers identical: {}",
            a.len(),
            a == b,
            a == single
        ),
    )
}

fn background_statistics() -> Outcome {
    let cfg = reference();
    let protocol = PleProtocol {
        scan_range_mhz: (0.0, 4995.0),
        ..cfg.protocol.protocol()
    };
    let detector = DetectorModel {
        dark_rate_hz: 2.0,
        ..cfg.detector.model()
    };
    let scan = simulate_ple_scan(&[], &protocol, &detector, FieldVector::ZERO, cfg.run.seed).unwrap();
    let c = scan.counts();
    let n = c.len() as f64;
    let mean = c.iter().sum::<f64>() / n;
    let var = c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let expected = 2.0 * 85e-6 * 50_000.0;
    let dispersion = var / mean;
    let mean_sigma = (expected / n).sqrt();
    let disp_sigma = (2.0 / (n - 1.0)).sqrt();
    outcome(
        c.len() == 1000 && (mean - expected).abs() <= 3.0 * mean_sigma && (dispersion - 1.0).abs() <= 3.0 * disp_sigma,
        format!(
            "{} points: mean {mean:.4} vs {expected} +/- {:.4} (3 sigma); index of dispersion {dispersion:.4} vs 1 +/- {:.4}",
            c.len(),
            3.0 * mean_sigma,
            3.0 * disp_sigma
        ),
    )
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let t0 = Instant::now();
    let pipeline = Pipeline::new(reference()).expect("reference configuration solves");
    println!(
        "field calibration: {:.4} V/cm per V at the probe",
        pipeline.field_per_volt()
    );
    let criteria: Vec<(&str, Criterion)> = vec![
        ("1 lifetime chain", Box::new(lifetime_chain)),
        ("2 antibunching", Box::new(antibunching)),
        ("3 stark linearity", Box::new(|| stark_linearity(&pipeline))),
        ("4 maximum-shift ratio", Box::new(|| maximum_shift_ratio(&pipeline))),
        ("5 field solver", Box::new(field_solver)),
        ("6 degeneracy", Box::new(degeneracy)),
        ("7 fit correctness", Box::new(fit_correctness)),
        ("8 determinism", Box::new(determinism)),
        ("9 background statistics", Box::new(background_statistics)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let t = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "[{}] {name}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1} s",
        criteria.len() - failed,
        criteria.len(),
        t0.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
