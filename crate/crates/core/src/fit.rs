//! Weighted least-squares fits of the convolution model
//! `B + A·[ideal ⊛ G(s) ⊛ detector](X − X₀)` to coincidence scans, and
//! extraction of the collective variances from the fitted blurs.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria::{CriteriaError, VarianceMeasurement};
use crate::numeric::median;
use crate::optics::{Aperture, OpticsConfig};
use crate::patterns::{PatternCurve, PatternError};
use crate::synth::CoincidenceScan;

pub const MIN_POINTS: usize = 8;
pub const MAX_ITERATIONS: usize = 200;
pub const COST_TOLERANCE: f64 = 1e-10;
/// Largest accepted step, in units of `1/√(JᵀWJ)ₖₖ`, at convergence.
const STEP_TOLERANCE: f64 = 1e-8;

const AMPLITUDE: usize = 0;
const BACKGROUND: usize = 1;
const CENTER: usize = 2;
const BLUR: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("scan has {0} points, at least {MIN_POINTS} are required")]
    TooFewPoints(usize),
    #[error("positions and values differ in length")]
    Length,
    #[error("scan position {0} mm lies outside the model curve")]
    OutsideModel(f64),
    #[error("data must be finite and non-negative")]
    InvalidData,
    #[error(transparent)]
    Pattern(#[from] PatternError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// One standard deviation.
    pub err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    /// The data carry no shape information (e.g. constant counts).
    Degenerate,
    /// The optimizer pushed the blur beyond what the model grid can hold.
    BlurUnbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub amplitude: Estimate,
    pub background: Estimate,
    pub center_mm: Estimate,
    pub blur_sigma_mm: Estimate,
    pub chi2_per_dof: f64,
    pub converged: bool,
    pub status: FitStatus,
    pub iterations: usize,
    /// Parameter order: amplitude, background, center, blur.
    pub covariance: [[f64; 4]; 4],
}

impl FitResult {
    fn params(&self) -> Vector4<f64> {
        Vector4::new(
            self.amplitude.value,
            self.background.value,
            self.center_mm.value,
            self.blur_sigma_mm.value,
        )
    }
}

/// Peak-normalized model curves keyed by blur.
struct Model<'a> {
    ideal: &'a PatternCurve,
    detector: &'a Aperture,
    cache: RefCell<HashMap<u64, Option<Rc<PatternCurve>>>>,
}

impl<'a> Model<'a> {
    fn new(ideal: &'a PatternCurve, detector: &'a Aperture) -> Self {
        Self {
            ideal,
            detector,
            cache: RefCell::new(HashMap::new()),
        }
    }

    /// `None` when the blur kernel does not fit on the model grid.
    fn shape(&self, sigma: f64) -> Result<Option<Rc<PatternCurve>>, PatternError> {
        let key = sigma.to_bits();
        if let Some(c) = self.cache.borrow().get(&key) {
            return Ok(c.clone());
        }
        let curve = match self.ideal.blurred(sigma, self.detector) {
            Ok(c) => Some(Rc::new(c.normalized_max())),
            Err(PatternError::KernelTooWide { .. }) => None,
            Err(e) => return Err(e),
        };
        let mut cache = self.cache.borrow_mut();
        if cache.len() > 64 {
            cache.clear();
        }
        cache.insert(key, curve.clone());
        Ok(curve)
    }

    /// Shape sampled at `x − x0`; `None` if any point leaves the model grid.
    fn sampled(&self, positions: &[f64], x0: f64, sigma: f64) -> Result<Option<Vec<f64>>, PatternError> {
        let Some(shape) = self.shape(sigma.abs())? else {
            return Ok(None);
        };
        Ok(positions.iter().map(|&x| shape.value_at(x - x0)).collect())
    }

    fn predict(&self, positions: &[f64], p: &Vector4<f64>) -> Result<Option<Vec<f64>>, PatternError> {
        Ok(self
            .sampled(positions, p[CENTER], p[BLUR])?
            .map(|g| g.iter().map(|v| p[BACKGROUND] + p[AMPLITUDE] * v).collect()))
    }
}

struct Problem<'a> {
    positions: &'a [f64],
    data: &'a [f64],
    weights: Vec<f64>,
    model: Model<'a>,
    /// Finite-difference steps; absolute so the fit commutes with shifts.
    center_step: f64,
    blur_floor: f64,
}

impl Problem<'_> {
    fn cost(&self, p: &Vector4<f64>) -> Result<f64, PatternError> {
        Ok(match self.model.predict(self.positions, p)? {
            Some(m) => m
                .iter()
                .zip(self.data)
                .zip(&self.weights)
                .map(|((m, y), w)| w * (y - m) * (y - m))
                .sum(),
            None => f64::INFINITY,
        })
    }

    /// Weighted Jacobian columns `√w·∂m/∂θ` by central differences.
    fn jacobian(&self, p: &Vector4<f64>) -> Result<Option<Vec<Vector4<f64>>>, PatternError> {
        let steps = [
            1e-6 * p[AMPLITUDE].abs().max(1.0),
            1e-6 * p[BACKGROUND].abs().max(1.0),
            self.center_step,
            1e-4 * p[BLUR].abs().max(self.blur_floor),
        ];
        let mut rows = vec![Vector4::zeros(); self.positions.len()];
        for (k, &h) in steps.iter().enumerate() {
            let mut up = *p;
            let mut down = *p;
            up[k] += h;
            down[k] -= h;
            let (Some(mu), Some(md)) = (self.model.predict(self.positions, &up)?, self.model.predict(self.positions, &down)?) else {
                return Ok(None);
            };
            for (i, row) in rows.iter_mut().enumerate() {
                row[k] = self.weights[i].sqrt() * (mu[i] - md[i]) / (2.0 * h);
            }
        }
        Ok(Some(rows))
    }

    fn normal_equations(&self, p: &Vector4<f64>) -> Result<Option<(Matrix4<f64>, Vector4<f64>)>, PatternError> {
        let Some(rows) = self.jacobian(p)? else {
            return Ok(None);
        };
        let Some(m) = self.model.predict(self.positions, p)? else {
            return Ok(None);
        };
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for (i, row) in rows.iter().enumerate() {
            let r = self.weights[i].sqrt() * (self.data[i] - m[i]);
            jtj += row * row.transpose();
            jtr += row * r;
        }
        Ok(Some((jtj, jtr)))
    }

    /// Weighted linear least squares for `(A, B)` at fixed shape.
    fn linear_amplitudes(&self, x0: f64, sigma: f64) -> Result<Option<(f64, f64, f64)>, PatternError> {
        let Some(g) = self.model.sampled(self.positions, x0, sigma)? else {
            return Ok(None);
        };
        let (mut sgg, mut sg, mut s1, mut sgy, mut sy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ((g, y), w) in g.iter().zip(self.data).zip(&self.weights) {
            sgg += w * g * g;
            sg += w * g;
            s1 += w;
            sgy += w * g * y;
            sy += w * y;
        }
        let det = sgg * s1 - sg * sg;
        if det.abs() <= 1e-14 * sgg * s1 {
            return Ok(None);
        }
        let a = (sgy * s1 - sg * sy) / det;
        let b = (sgg * sy - sg * sgy) / det;
        let p = Vector4::new(a, b, x0, sigma);
        Ok(Some((a, b, self.cost(&p)?)))
    }
}

fn initial_guess(problem: &Problem) -> Result<Vector4<f64>, FitError> {
    let data = problem.data;
    let n = data.len();
    let mut edges: Vec<f64> = data[..3].iter().chain(&data[n - 3..]).copied().collect();
    let background = median(&mut edges);
    let max = data.iter().copied().fold(f64::MIN, f64::max);
    let min = data.iter().copied().fold(f64::MAX, f64::min);
    let amplitude = max - min;

    let centroid = |pos: &[f64], val: &[f64], floor: f64| -> (f64, f64) {
        let w: Vec<f64> = val.iter().map(|v| (v - floor).max(0.0)).collect();
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return (0.0, 0.0);
        }
        let mean = pos.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / total;
        let var = pos.iter().zip(&w).map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / total;
        (mean, var)
    };
    let (data_mean, data_var) = centroid(problem.positions, data, background);
    let reference = problem
        .model
        .sampled(problem.positions, 0.0, 0.0)?
        .ok_or(FitError::OutsideModel(problem.positions[0]))?;
    let (ref_mean, ref_var) = centroid(problem.positions, &reference, 0.0);
    let center = data_mean - ref_mean;
    let grid = problem.model.ideal.grid();
    let blur_max = grid.span() / 12.0;
    let moment_blur = (data_var - ref_var).max(0.0).sqrt().clamp(problem.blur_floor, blur_max);

    // Coarse scan over blur with the linear parameters solved exactly.
    let mut best = (moment_blur, f64::INFINITY, amplitude, background);
    let lo = problem.blur_floor.ln();
    let hi = blur_max.ln();
    let candidates = (0..=40)
        .map(|i| (lo + (hi - lo) * i as f64 / 40.0).exp())
        .chain(std::iter::once(moment_blur));
    for s in candidates {
        if let Some((a, b, cost)) = problem.linear_amplitudes(center, s)? {
            if cost < best.1 && a > 0.0 {
                best = (s, cost, a, b);
            }
        }
    }
    Ok(Vector4::new(best.2, best.3, center, best.0))
}

fn covariance(jtj: &Matrix4<f64>) -> Option<Matrix4<f64>> {
    jtj.try_inverse()
}

fn finish(
    problem: &Problem,
    p: Vector4<f64>,
    status: FitStatus,
    iterations: usize,
) -> Result<FitResult, FitError> {
    let mut p = p;
    p[BLUR] = p[BLUR].abs();
    let dof = (problem.positions.len() - 4) as f64;
    let cost = problem.cost(&p)?;
    let cov = match problem.normal_equations(&p)? {
        Some((jtj, _)) => covariance(&jtj),
        None => None,
    }
    .unwrap_or_else(|| Matrix4::from_element(f64::NAN));
    let est = |k: usize| Estimate {
        value: p[k],
        err: cov[(k, k)].max(0.0).sqrt(),
    };
    let mut covariance = [[0.0; 4]; 4];
    for (i, row) in covariance.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = cov[(i, j)];
        }
    }
    Ok(FitResult {
        amplitude: est(AMPLITUDE),
        background: est(BACKGROUND),
        center_mm: est(CENTER),
        blur_sigma_mm: est(BLUR),
        chi2_per_dof: if cost.is_finite() { cost / dof } else { f64::INFINITY },
        converged: status == FitStatus::Converged,
        status,
        iterations,
        covariance,
    })
}

/// Damped Gauss–Newton on the weighted residuals.
fn levenberg_marquardt(problem: &Problem, start: Vector4<f64>) -> Result<(Vector4<f64>, Option<FitStatus>, usize), FitError> {
    let mut p = start;
    let mut cost = problem.cost(&p)?;
    let mut lambda = 1e-3;
    for iteration in 1..=MAX_ITERATIONS {
        let Some((jtj, jtr)) = problem.normal_equations(&p)? else {
            return Ok((p, Some(FitStatus::BlurUnbounded), iteration));
        };
        let diag = Matrix4::from_diagonal(&jtj.diagonal().map(|d| d.max(1e-12 * jtj.diagonal().max())));
        loop {
            let Some(step) = (jtj + diag * lambda).cholesky().map(|c| c.solve(&jtr)) else {
                // Degenerate Jacobian: hand over to the simplex.
                return Ok((p, None, iteration));
            };
            let trial = p + step;
            let trial_cost = problem.cost(&trial)?;
            if trial_cost <= cost {
                let change = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                let scaled_step = (0..4).map(|k| step[k].abs() * jtj[(k, k)].sqrt()).fold(0.0, f64::max);
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                if change < COST_TOLERANCE && scaled_step < STEP_TOLERANCE {
                    return Ok((p, Some(FitStatus::Converged), iteration));
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                // No descent direction left: a minimum to working precision.
                return Ok((p, Some(FitStatus::Converged), iteration));
            }
        }
    }
    Ok((p, Some(FitStatus::MaxIterations), MAX_ITERATIONS))
}

/// Nelder–Mead on the weighted cost.
fn nelder_mead(problem: &Problem, start: Vector4<f64>) -> Result<(Vector4<f64>, FitStatus, usize), FitError> {
    let scales = [
        0.1 * start[AMPLITUDE].abs().max(1.0),
        0.1 * start[BACKGROUND].abs().max(1.0),
        0.1 * start[BLUR].abs().max(problem.blur_floor),
        0.1 * start[BLUR].abs().max(problem.blur_floor),
    ];
    let mut simplex: Vec<(Vector4<f64>, f64)> = Vec::with_capacity(5);
    simplex.push((start, problem.cost(&start)?));
    for (k, s) in scales.iter().enumerate() {
        let mut v = start;
        v[k] += s;
        simplex.push((v, problem.cost(&v)?));
    }
    for iteration in 1..=20 * MAX_ITERATIONS {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[4].1);
        if (worst - best).abs() <= COST_TOLERANCE * best.abs().max(f64::MIN_POSITIVE) {
            return Ok((simplex[0].0, FitStatus::Converged, iteration));
        }
        let centroid = simplex[..4].iter().map(|s| s.0).sum::<Vector4<f64>>() / 4.0;
        let at = |t: f64| centroid + (simplex[4].0 - centroid) * t;
        let reflected = at(-1.0);
        let fr = problem.cost(&reflected)?;
        if fr < simplex[0].1 {
            let expanded = at(-2.0);
            let fe = problem.cost(&expanded)?;
            simplex[4] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[3].1 {
            simplex[4] = (reflected, fr);
        } else {
            let contracted = if fr < simplex[4].1 { at(-0.5) } else { at(0.5) };
            let fc = problem.cost(&contracted)?;
            if fc < simplex[4].1.min(fr) {
                simplex[4] = (contracted, fc);
            } else {
                let anchor = simplex[0].0;
                for s in simplex.iter_mut().skip(1) {
                    s.0 = anchor + (s.0 - anchor) * 0.5;
                    s.1 = problem.cost(&s.0)?;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok((simplex[0].0, FitStatus::MaxIterations, 20 * MAX_ITERATIONS))
}

/// Fits `values` (counts or expected counts) at `positions`.
pub fn fit_samples(
    positions: &[f64],
    values: &[f64],
    ideal: &PatternCurve,
    detector: &Aperture,
    init: Option<&FitResult>,
) -> Result<FitResult, FitError> {
    if positions.len() != values.len() {
        return Err(FitError::Length);
    }
    if positions.len() < MIN_POINTS {
        return Err(FitError::TooFewPoints(positions.len()));
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || positions.iter().any(|x| !x.is_finite()) {
        return Err(FitError::InvalidData);
    }
    if let Some(&x) = positions.iter().find(|&&x| !ideal.grid().contains(x)) {
        return Err(FitError::OutsideModel(x));
    }
    let step = ideal.grid().step();
    let problem = Problem {
        positions,
        data: values,
        weights: values.iter().map(|&n| 1.0 / n.max(1.0)).collect(),
        model: Model::new(ideal, detector),
        center_step: 1e-2 * step,
        blur_floor: step,
    };
    let max = values.iter().copied().fold(f64::MIN, f64::max);
    let min = values.iter().copied().fold(f64::MAX, f64::min);
    if max - min <= 0.0 {
        let flat = Vector4::new(0.0, min, 0.0, 0.0);
        return finish(&problem, flat, FitStatus::Degenerate, 0);
    }
    let start = match init {
        Some(r) => r.params(),
        None => initial_guess(&problem)?,
    };
    let (p, status, iterations) = match levenberg_marquardt(&problem, start)? {
        (p, Some(status), it) => (p, status, it),
        (p, None, it) => {
            let (q, status, more) = nelder_mead(&problem, p)?;
            (q, status, it + more)
        }
    };
    let status = if problem.cost(&p)?.is_infinite() {
        FitStatus::BlurUnbounded
    } else {
        status
    };
    finish(&problem, p, status, iterations)
}

/// Fits a coincidence scan with the convolution model built from `ideal`.
pub fn fit_pattern(
    scan: &CoincidenceScan,
    ideal: &PatternCurve,
    detector: &Aperture,
    init: Option<&FitResult>,
) -> Result<FitResult, FitError> {
    fit_samples(scan.positions(), &scan.counts_f64(), ideal, detector, init)
}

/// Detector resolutions removed in quadrature from the fitted blurs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorWidths {
    /// Equivalent Gaussian sigma of the image-arm detector, mm.
    pub image_mm: f64,
    /// Equivalent Gaussian sigma of the fibre acceptance, mm in the focal plane.
    pub fiber_mm: f64,
}

impl DetectorWidths {
    /// `width/√12` for the slit and `waist/2` for the fibre.
    pub fn equivalent(image_detector: &Aperture, fiber: &Aperture) -> Self {
        let sigma = |a: &Aperture| {
            let s = a.equivalent_sigma();
            if s.is_finite() {
                s
            } else {
                0.0
            }
        };
        Self {
            image_mm: sigma(image_detector),
            fiber_mm: sigma(fiber),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("{0} fit did not converge")]
    NotConverged(&'static str),
    #[error(transparent)]
    Criteria(#[from] CriteriaError),
}

/// Variances recovered from a pair of fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub var_x_minus_mm2: f64,
    pub var_x_minus_err_mm2: f64,
    pub var_p_plus_per_mm2: f64,
    pub var_p_plus_err_per_mm2: f64,
    /// Detector resolution exceeded the fitted image blur.
    pub image_clamped: bool,
    /// Fibre resolution exceeded the fitted fringe blur.
    pub interference_clamped: bool,
}

impl Extraction {
    /// Fails when a variance was clamped to zero.
    pub fn measurement(&self, label: &str) -> Result<VarianceMeasurement, CriteriaError> {
        Ok(VarianceMeasurement::new(
            self.var_x_minus_mm2,
            self.var_x_minus_err_mm2,
            self.var_p_plus_per_mm2,
            self.var_p_plus_err_per_mm2,
        )?
        .with_label(label))
    }
}

/// `(Δx₋)² = max(0, s_img² − r_img²)/M²`,
/// `(Δp₊)² = (2π/λf₂)²·max(0, s_int² − r_fib²)`, errors to first order.
pub fn extract_variances(
    image_fit: &FitResult,
    interference_fit: &FitResult,
    optics: &OpticsConfig,
    widths: &DetectorWidths,
) -> Result<Extraction, ExtractError> {
    if !image_fit.converged {
        return Err(ExtractError::NotConverged("image"));
    }
    if !interference_fit.converged {
        return Err(ExtractError::NotConverged("interference"));
    }
    let m2 = optics.magnification_imaging_arm.powi(2);
    let k = 2.0 * std::f64::consts::PI / (optics.lambda_mm() * optics.f2_mm);
    let subtract = |fit: &FitResult, res: f64| {
        let s = fit.blur_sigma_mm;
        let excess = s.value * s.value - res * res;
        let err = 2.0 * s.value * s.err;
        if excess <= 0.0 {
            (0.0, err, true)
        } else {
            (excess, err, false)
        }
    };
    let (vx, ex, image_clamped) = subtract(image_fit, widths.image_mm);
    let (vp, ep, interference_clamped) = subtract(interference_fit, widths.fiber_mm);
    Ok(Extraction {
        var_x_minus_mm2: vx / m2,
        var_x_minus_err_mm2: ex / m2,
        var_p_plus_per_mm2: k * k * vp,
        var_p_plus_err_per_mm2: k * k * ep,
        image_clamped,
        interference_clamped,
    })
}
