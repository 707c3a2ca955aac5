//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use eprlab::config::ExperimentConfig;
use eprlab::criteria::{classify, duan_sum_optimized, Regime, VarianceMeasurement};
use eprlab::fit::{extract_variances, fit_pattern};
use eprlab::io;
use eprlab::oracle::{amplitude_image_oracle, amplitude_interference_oracle, QuadratureSettings};
use eprlab::patterns::{
    image_blur_sigma, interference_blur_sigma, predicted_image, predicted_interference, PatternKind,
};
use eprlab::pipeline::{reproduce, rows, run_row, scan_seed, IdealCurves, RowSpec};
use eprlab::state::DoubleGaussianState;
use eprlab::synth::{mc_ghost_image, symmetric_positions, synthesize, wigner_sample};
use eprlab::{median, seed};
use eprlab_validation::*;
use rand::Rng;

const REPRODUCE_SEEDS: usize = 10;
const PRODUCT_BAND: f64 = 0.25;
const REGIME_MIN_HITS: usize = 9;
const RUNTIME_LIMIT_S: f64 = 60.0;
const PROPAGATION_TOLERANCE: f64 = 0.002;
const DUALITY_POINTS: usize = 4096;
const GRID_SIGMAS: f64 = 6.0;
const DUALITY_TOLERANCE: f64 = 1e-6;
const NORM_TOLERANCE: f64 = 1e-6;
const NORM_POINTS: usize = 64;
const RANDOM_MEASUREMENTS: usize = 10_000;
const DUAN_TOLERANCE: f64 = 1e-12;
const SWEEP_FACTORS: [f64; 3] = [0.5, 1.0, 2.0];
const SWEEP_LIMIT: f64 = 0.05;
const IDEAL_LIMIT: f64 = 0.02;
const MC_PAIRS: usize = 1_000_000;
const P_VALUE_BAND: (f64, f64) = (0.01, 0.99);
const MIN_EXPECTED: f64 = 5.0;
const STANDARD_ERRORS: f64 = 3.0;
const PULL_SEEDS: usize = 100;
const PULL_SD_BAND: (f64, f64) = (0.7, 1.3);
const BLUR_TOLERANCE_MM: f64 = 1e-3;

fn main() -> ExitCode {
    let config = ExperimentConfig::default();
    let mut report = Report::new();
    let started = Instant::now();
    round_trip(&config, &mut report);
    error_propagation(&mut report);
    fourier_duality(&config, &mut report);
    criterion_algebra(&config, &mut report);
    predictor_cross_validation(&config, &mut report);
    monte_carlo(&config, &mut report);
    estimator_calibration(&config, &mut report);
    determinism(&config, &mut report);
    println!("{} in {:.1} s", report.summary(), started.elapsed().as_secs_f64());
    report.exit_code()
}

fn round_trip(config: &ExperimentConfig, report: &mut Report) {
    let t = Instant::now();
    let summary = match reproduce(config, REPRODUCE_SEEDS, true, true) {
        Ok(s) => s,
        Err(e) => return report.record("1 round trip", false, e.to_string()),
    };
    let elapsed = t.elapsed().as_secs_f64();
    let expected = [(0.186, Regime::EprParadox), (0.478, Regime::Entangled)];
    let mut pass = elapsed < RUNTIME_LIMIT_S;
    let mut detail = Vec::new();
    for (row, (target, regime)) in summary.rows.iter().zip(expected) {
        let hits = summary
            .outcomes
            .iter()
            .filter(|o| o.label == row.label && o.report.regime == regime)
            .count();
        let ok = (row.median_product - target).abs() <= PRODUCT_BAND * target && hits >= REGIME_MIN_HITS;
        pass &= ok;
        detail.push(format!(
            "{} median {:.4} (target {target} ± {:.0}%), {regime} {hits}/{REPRODUCE_SEEDS}",
            row.label,
            row.median_product,
            PRODUCT_BAND * 100.0
        ));
    }
    detail.push(format!("{elapsed:.1} s (limit {RUNTIME_LIMIT_S} s)"));
    report.record("1 round trip", pass, detail.join("; "));
}

fn error_propagation(report: &mut Report) {
    let cases = [(0.230, 0.021, 0.807, 0.163, 0.041), (0.332, 0.026, 1.439, 0.214, 0.080)];
    let mut pass = true;
    let mut detail = Vec::new();
    for (vx, ex, vp, ep, printed) in cases {
        let m = VarianceMeasurement::new(vx, ex, vp, ep).expect("valid measurement");
        let err = classify(&m).product_err;
        pass &= (err - printed).abs() <= PROPAGATION_TOLERANCE;
        detail.push(format!("±{err:.4} vs ±{printed}"));
    }
    report.record(
        "2 error propagation",
        pass,
        format!("{} (tolerance {PROPAGATION_TOLERANCE})", detail.join(", ")),
    );
}

fn fourier_duality(config: &ExperimentConfig, report: &mut Report) {
    let specs = rows(config, true).expect("default rows");
    let mut worst: f64 = 0.0;
    for row in &specs {
        let s = &row.state;
        let half = GRID_SIGMAS * s.sigma_plus().max(s.sigma_minus());
        worst = worst.max(fourier_duality_error(s, DUALITY_POINTS, half));
    }
    report.record(
        "3a Fourier duality",
        worst <= DUALITY_TOLERANCE,
        format!("relative L2 {worst:.2e} on {DUALITY_POINTS}² points over ±{GRID_SIGMAS}σ (limit {DUALITY_TOLERANCE:e})"),
    );

    let s2 = specs[0].state.with_dimension(2).expect("dimension 2");
    let (sm, sp) = (s2.sigma_minus(), s2.sigma_plus());
    let pos = norm_4d(
        |r| s2.position_wavefunction(&[r[0], r[1]], &[r[2], r[3]]).expect("dimension 2"),
        NORM_POINTS,
        GRID_SIGMAS * sp.max(sm),
    );
    let mom = norm_4d(
        |p| s2.momentum_wavefunction(&[p[0], p[1]], &[p[2], p[3]]).expect("dimension 2"),
        NORM_POINTS,
        GRID_SIGMAS / sp.min(sm),
    );
    let dev = (pos - 1.0).abs().max((mom - 1.0).abs());
    report.record(
        "3b 2D normalization",
        dev <= NORM_TOLERANCE,
        format!("position {pos:.12}, momentum {mom:.12} (limit 1 ± {NORM_TOLERANCE:e})"),
    );
}

fn criterion_algebra(config: &ExperimentConfig, report: &mut Report) {
    let mut rng = seed::rng(config.seed, 4);
    let mut worst: f64 = 0.0;
    for _ in 0..RANDOM_MEASUREMENTS {
        let vx = 10f64.powf(rng.random_range(-4.0..2.0));
        let vp = 10f64.powf(rng.random_range(-4.0..2.0));
        let m = VarianceMeasurement::new(vx, vx * rng.random_range(0.0..0.5), vp, vp * rng.random_range(0.0..0.5))
            .expect("valid measurement");
        let exact = 2.0 * m.product().sqrt();
        worst = worst.max((duan_sum_optimized(&m) - exact).abs() / exact);
    }
    let mut equal_ok = true;
    for _ in 0..RANDOM_MEASUREMENTS {
        let sigma = 10f64.powf(rng.random_range(-3.0..3.0));
        let s = DoubleGaussianState::new(sigma, sigma, 1).expect("valid state");
        equal_ok &= s.marginal_variances().criterion_product() == 1.0;
    }
    report.record(
        "4 criterion algebra",
        worst <= DUAN_TOLERANCE && equal_ok,
        format!(
            "max |duan − 2√P|/2√P {worst:.2e} over {RANDOM_MEASUREMENTS} draws (limit {DUAN_TOLERANCE:e}); σ₊=σ₋ product exactly 1: {equal_ok}"
        ),
    );
}

/// Largest peak-normalized sup gap between the convolution model and the
/// amplitude oracles for one state, per arm.
fn oracle_gaps(config: &ExperimentConfig, state: &DoubleGaussianState) -> (f64, f64) {
    let a = &config.apertures;
    let settings = QuadratureSettings::default();
    let image_grid = config.grids.image.grid().expect("grid");
    let fringe_grid = config.grids.interference.grid().expect("grid");
    let image = predicted_image(state, &a.object, &config.optics, &a.image_detector, &image_grid).expect("prediction");
    let image_oracle =
        amplitude_image_oracle(state, &a.object, &a.image_detector, &image_grid, &settings).expect("oracle");
    let fringes = predicted_interference(state, &a.object, &config.optics, &a.fiber, &fringe_grid, &config.transform)
        .expect("prediction");
    let fringe_oracle = amplitude_interference_oracle(state, &a.object, &config.optics, &a.fiber, &fringe_grid, &settings)
        .expect("oracle");
    (
        image.sup_distance(&image_oracle).expect("same grid"),
        fringes.sup_distance(&fringe_oracle).expect("same grid"),
    )
}

fn predictor_cross_validation(config: &ExperimentConfig, report: &mut Report) {
    let base = config.state.build().expect("state").marginal_variances();
    let mut worst = (0.0f64, 0.0f64);
    let mut cells = Vec::new();
    for fx in SWEEP_FACTORS {
        for fp in SWEEP_FACTORS {
            let s = DoubleGaussianState::from_variances(base.var_x_minus * fx, base.var_p_plus * fp, 1).expect("state");
            let (gi, gf) = oracle_gaps(config, &s);
            worst = (worst.0.max(gi), worst.1.max(gf));
            cells.push(format!("{:.2}/{:.2}", gi, gf));
        }
    }
    report.record(
        "5a oracle sweep",
        worst.0 <= SWEEP_LIMIT && worst.1 <= SWEEP_LIMIT,
        format!(
            "max sup gap image {:.3}, interference {:.3} over 3×3 variance factors {SWEEP_FACTORS:?} (limit {SWEEP_LIMIT}); cells image/interference [{}]",
            worst.0,
            worst.1,
            cells.join(" ")
        ),
    );

    let ideal = DoubleGaussianState::new(1e-3, 1e3, 1).expect("state");
    let (gi, gf) = oracle_gaps(config, &ideal);
    report.record(
        "5b oracle ideal limit",
        gi <= IDEAL_LIMIT && gf <= IDEAL_LIMIT,
        format!("sup gap image {gi:.4}, interference {gf:.4} at σ₋=1e-3, σ₊=1e3 mm (limit {IDEAL_LIMIT})"),
    );
}

fn monte_carlo(config: &ExperimentConfig, report: &mut Report) {
    let state = config.state.build().expect("state");
    let a = &config.apertures;
    let m = config.optics.magnification_imaging_arm;
    let width = match a.image_detector {
        eprlab::optics::Aperture::RectSlit { width_mm } => width_mm,
        other => panic!("rectangular image detector expected, got {other:?}"),
    };
    // Adjacent windows touch but do not overlap, so bins are independent.
    let positions = symmetric_positions(3.0, width);
    let scan = mc_ghost_image(&state, &a.object, &a.image_detector, m, &positions, MC_PAIRS, seed::derive(config.seed, &[6]))
        .expect("monte carlo");
    let observed = scan.counts_f64();
    let total: f64 = observed.iter().sum();

    let grid = config.grids.image.grid().expect("grid");
    let predicted = predicted_image(&state, &a.object, &config.optics, &a.image_detector, &grid).expect("prediction");
    let shape: Vec<f64> = positions.iter().map(|&x| predicted.value_at(x).expect("in grid")).collect();
    let norm: f64 = shape.iter().sum();
    let expected: Vec<f64> = shape.iter().map(|v| total * v / norm).collect();
    let (stat, dof) = pearson(&observed, &expected, MIN_EXPECTED, 1);
    let p = chi_square_p_value(stat, dof);
    report.record(
        "6a Monte Carlo vs convolution model",
        (P_VALUE_BAND.0..=P_VALUE_BAND.1).contains(&p),
        format!("χ² {stat:.1} on {dof} dof, p = {p:.3e} (band {P_VALUE_BAND:?}), n = {MC_PAIRS}"),
    );

    let exact: Vec<f64> = positions
        .iter()
        .map(|&x| {
            let (lo, hi) = ((x - width / 2.0) / m, (x + width / 2.0) / m);
            MC_PAIRS as f64 * incoherent_bin_probability(&state, &a.object, lo.min(hi), lo.max(hi))
        })
        .collect();
    let (stat, dof) = pearson(&observed, &exact, MIN_EXPECTED, 0);
    let p = chi_square_p_value(stat, dof);
    report.record(
        "6b Monte Carlo vs incoherent quadrature",
        (P_VALUE_BAND.0..=P_VALUE_BAND.1).contains(&p),
        format!("χ² {stat:.1} on {dof} dof, p = {p:.3} (band {P_VALUE_BAND:?})"),
    );

    let samples = wigner_sample(&state, MC_PAIRS, seed::derive(config.seed, &[7])).expect("samples");
    let v = state.marginal_variances();
    let checks: [(&str, f64, fn(&eprlab::synth::PhasePoint) -> f64); 4] = [
        ("x1−x2", v.var_x_minus, |s| s.x1 - s.x2),
        ("x1+x2", v.var_x_plus, |s| s.x1 + s.x2),
        ("p1+p2", v.var_p_plus, |s| s.p1 + s.p2),
        ("p1−p2", v.var_p_minus, |s| s.p1 - s.p2),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, truth, f) in checks {
        let xs: Vec<f64> = samples.iter().map(f).collect();
        let var = sample_variance(&xs);
        let se = truth * (2.0 / (MC_PAIRS as f64 - 1.0)).sqrt();
        let z = (var - truth) / se;
        pass &= z.abs() <= STANDARD_ERRORS;
        detail.push(format!("{name} {z:+.2}σ"));
    }
    report.record(
        "6c Wigner covariances",
        pass,
        format!("{} (limit {STANDARD_ERRORS} standard errors, n = {MC_PAIRS})", detail.join(", ")),
    );
}

fn estimator_calibration(config: &ExperimentConfig, report: &mut Report) {
    let ideals = IdealCurves::new(config).expect("ideal curves");
    let row: RowSpec = rows(config, true).expect("rows")[0].clone();
    let v = row.state.marginal_variances();
    let outcomes: Vec<_> = (0..PULL_SEEDS)
        .map(|k| run_row(config, &ideals, &row, k, true))
        .collect::<Result<_, _>>()
        .expect("fits");
    let pulls_x: Vec<f64> = outcomes
        .iter()
        .map(|o| (o.report.var_x_minus_mm2 - v.var_x_minus) / o.report.var_x_minus_err_mm2)
        .collect();
    let pulls_p: Vec<f64> = outcomes
        .iter()
        .map(|o| (o.report.var_p_plus_per_mm2 - v.var_p_plus) / o.report.var_p_plus_err_per_mm2)
        .collect();
    let (sx, sp) = (sample_variance(&pulls_x).sqrt(), sample_variance(&pulls_p).sqrt());
    let within = |s: f64| (PULL_SD_BAND.0..=PULL_SD_BAND.1).contains(&s);
    report.record(
        "7a pull distribution",
        within(sx) && within(sp),
        format!(
            "pull sd var_x {sx:.3} (median {:+.2}), var_p {sp:.3} (median {:+.2}) over {PULL_SEEDS} seeds (band {PULL_SD_BAND:?})",
            median(&mut pulls_x.clone()),
            median(&mut pulls_p.clone())
        ),
    );

    let exact = run_row(config, &ideals, &row, 0, false).expect("noise-free fit");
    let di = (exact.image_fit.blur_sigma_mm.value - image_blur_sigma(&row.state, &config.optics)).abs();
    let df = (exact.interference_fit.blur_sigma_mm.value - interference_blur_sigma(&row.state, &config.optics)).abs();
    report.record(
        "7b noise-free blur",
        di <= BLUR_TOLERANCE_MM && df <= BLUR_TOLERANCE_MM,
        format!("|Δblur| image {di:.2e} mm, interference {df:.2e} mm (limit {BLUR_TOLERANCE_MM:e} mm)"),
    );
}

/// Writes every artifact kind the pipeline produces into `dir`.
fn write_artifacts(config: &ExperimentConfig, dir: &Path) {
    let a = &config.apertures;
    let specs = rows(config, true).expect("rows");
    let ideals = IdealCurves::new(config).expect("ideal curves");
    let row = &specs[0];
    let image = predicted_image(&row.state, &a.object, &config.optics, &a.image_detector, &config.grids.image.grid().unwrap())
        .expect("prediction");
    let fringes = predicted_interference(
        &row.state,
        &a.object,
        &config.optics,
        &a.fiber,
        &config.grids.interference.grid().unwrap(),
        &config.transform,
    )
    .expect("prediction");
    io::write_curve(&image, &dir.join("predict_image.csv")).unwrap();
    io::write_curve(&fringes, &dir.join("predict_interference.csv")).unwrap();

    let mut fits = Vec::new();
    for (arm, curve, budget, ideal, det) in [
        (PatternKind::Image, &image, row.image_budget, &ideals.image, &a.image_detector),
        (PatternKind::Interference, &fringes, row.interference_budget, &ideals.interference, &a.fiber),
    ] {
        let positions = config.scans.positions(arm, false);
        let scan = synthesize(
            curve,
            &budget,
            &positions,
            config.budgets.duration(arm, false),
            scan_seed(config.seed, 0, 0, arm),
        )
        .expect("synthesize");
        io::write_scan(&scan, &dir.join(format!("scan_{}.csv", arm.as_str()))).unwrap();
        fits.push(fit_pattern(&scan, ideal, det, None).expect("fit"));
    }
    let extraction = extract_variances(&fits[0], &fits[1], &config.optics, &Default::default()).expect("extract");
    let criteria = classify(&extraction.measurement("row1").expect("measurement"));
    let mut fit_report = BTreeMap::new();
    fit_report.insert("image", serde_json::to_value(&fits[0]).unwrap());
    fit_report.insert("interference", serde_json::to_value(&fits[1]).unwrap());
    fit_report.insert("extraction", serde_json::to_value(extraction).unwrap());
    io::write_json(&fit_report, &dir.join("fit.json")).unwrap();
    io::write_json(&criteria, &dir.join("criteria.json")).unwrap();
    io::write_json(&reproduce(config, 3, true, true).expect("reproduce"), &dir.join("reproduce.json")).unwrap();
    config.save(&dir.join("config.json")).unwrap();
}

fn directory_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism(config: &ExperimentConfig, report: &mut Report) {
    let run = |threads: usize| {
        let dir = tempfile::tempdir().unwrap();
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| write_artifacts(config, dir.path()));
        directory_bytes(dir.path())
    };
    let first = run(1);
    let second = run(1);
    let parallel = run(4);
    let differing: Vec<&String> = first
        .iter()
        .filter(|(name, bytes)| second.get(*name) != Some(bytes) || parallel.get(*name) != Some(bytes))
        .map(|(name, _)| name)
        .collect();
    let pass = differing.is_empty() && first.len() == second.len() && first.len() == parallel.len();
    report.record(
        "8 determinism",
        pass,
        format!(
            "{} artifacts compared across two runs and 1 vs 4 threads; differing: {:?}",
            first.len(),
            differing
        ),
    );
}
