//! Coincidence-pattern prediction.
//!
//! The ideal patterns are the object's intensity transmission (imaging arm)
//! and the squared modulus of its Fourier transform mapped onto the Fourier
//! lens' focal plane (interference arm). Finite correlations and detector
//! size are modeled by convolving the ideal curve with a Gaussian and with
//! the detector acceptance, which is also the model [`crate::fit`] fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{convolve_same, cubic_interpolate, simpson_fourier};
use crate::optics::{focal_plane_position, focal_plane_wavenumber, Aperture, OpticsConfig};
use crate::state::DoubleGaussianState;

/// Minimum number of grid points across the aperture's smallest feature.
pub const MIN_POINTS_ACROSS_FEATURE: usize = 16;

/// Gaussian kernels are truncated at this many standard deviations.
const KERNEL_SIGMAS: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatternError {
    #[error("grid is too coarse: {points} points across a {feature_mm} mm feature (need {MIN_POINTS_ACROSS_FEATURE})")]
    GridTooCoarse { points: usize, feature_mm: f64 },
    #[error("grid spans ±{half_span_mm} mm but the aperture needs ±{needed_mm} mm")]
    GridTooNarrow { half_span_mm: f64, needed_mm: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("transform window ±{window_mm} mm is narrower than the required ±{needed_mm} mm")]
    TransformWindow { window_mm: f64, needed_mm: f64 },
    #[error("transform sampling step {step_mm} mm aliases wavenumber {max_wavenumber} rad/mm")]
    Aliasing { step_mm: f64, max_wavenumber: f64 },
    #[error("an open aperture has no finite transform")]
    UnboundedAperture,
    #[error("blur sigma {sigma_mm} mm is negative or not finite")]
    InvalidBlur { sigma_mm: f64 },
    #[error("kernel of half-width {half_width_mm} mm does not fit in a grid spanning {span_mm} mm")]
    KernelTooWide { half_width_mm: f64, span_mm: f64 },
    #[error("quadrature did not converge: doubling the nodes changed the curve by {change:e}")]
    NotConverged { change: f64 },
    #[error("curves are defined on different grids")]
    GridMismatch,
    #[error("state must be one-dimensional")]
    StateDimension,
}

/// Uniformly spaced sample positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    start: f64,
    step: f64,
    len: usize,
}

impl UniformGrid {
    pub fn new(start: f64, step: f64, len: usize) -> Result<Self, PatternError> {
        if !(start.is_finite() && step.is_finite() && step > 0.0) {
            return Err(PatternError::InvalidGrid(format!("start {start}, step {step}")));
        }
        if len < 2 {
            return Err(PatternError::InvalidGrid(format!("{len} points")));
        }
        Ok(Self { start, step, len })
    }

    /// `points` samples from `−half_width` to `+half_width` inclusive.
    pub fn symmetric(half_width: f64, points: usize) -> Result<Self, PatternError> {
        if !(half_width.is_finite() && half_width > 0.0) || points < 2 {
            return Err(PatternError::InvalidGrid(format!("±{half_width} with {points} points")));
        }
        Self::new(-half_width, 2.0 * half_width / (points - 1) as f64, points)
    }

    /// Default imaging-arm grid: ±8 mm, 4096 intervals.
    pub fn default_image() -> Self {
        Self::symmetric(8.0, 4097).expect("valid constant grid")
    }

    /// Default focal-plane grid: ±0.1 mm, 4096 intervals.
    pub fn default_interference() -> Self {
        Self::symmetric(0.1, 4097).expect("valid constant grid")
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn end(&self) -> f64 {
        self.position(self.len - 1)
    }

    pub fn span(&self) -> f64 {
        self.step * (self.len - 1) as f64
    }

    pub fn position(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn positions(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.len).map(|i| self.position(i))
    }

    pub fn contains(&self, x: f64) -> bool {
        let tol = 1e-9 * self.step;
        x >= self.start - tol && x <= self.end() + tol
    }

    /// Index of the sample nearest to `x`, if inside the grid.
    pub fn nearest_index(&self, x: f64) -> Option<usize> {
        self.contains(x)
            .then(|| (((x - self.start) / self.step).round() as usize).min(self.len - 1))
    }

    /// Same extent, twice the density.
    pub fn refined(&self) -> Self {
        Self {
            start: self.start,
            step: self.step / 2.0,
            len: 2 * self.len - 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Image,
    Interference,
}

impl PatternKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternKind::Image => "image",
            PatternKind::Interference => "interference",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Max,
    Area,
    Raw,
}

/// Nonnegative samples of a coincidence pattern on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternCurve {
    grid: UniformGrid,
    values: Vec<f64>,
    kind: PatternKind,
    normalization: Normalization,
}

impl PatternCurve {
    /// Negative inputs are clamped to zero; they only arise from rounding.
    pub fn new(grid: UniformGrid, values: Vec<f64>, kind: PatternKind, normalization: Normalization) -> Result<Self, PatternError> {
        if values.len() != grid.len() {
            return Err(PatternError::InvalidGrid(format!(
                "{} values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PatternError::InvalidGrid("non-finite value".into()));
        }
        let values = values.into_iter().map(|v| v.max(0.0)).collect();
        Ok(Self {
            grid,
            values,
            kind,
            normalization,
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn positions(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.grid.positions()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Riemann area `Σ v·Δx`.
    pub fn area(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.step
    }

    /// Rescaled so the maximum is exactly one. An all-zero curve is returned as is.
    pub fn normalized_max(mut self) -> Self {
        let m = self.max();
        if m > 0.0 {
            for v in &mut self.values {
                *v /= m;
            }
        }
        self.normalization = Normalization::Max;
        self
    }

    pub fn normalized_area(mut self) -> Self {
        let a = self.area();
        if a > 0.0 {
            for v in &mut self.values {
                *v /= a;
            }
        }
        self.normalization = Normalization::Area;
        self
    }

    /// Cubic interpolation; `None` outside the grid.
    pub fn value_at(&self, x: f64) -> Option<f64> {
        cubic_interpolate(&self.values, self.grid.start, self.grid.step, x).map(|v| v.max(0.0))
    }

    /// Largest pointwise difference to a curve on the same grid.
    pub fn sup_distance(&self, other: &PatternCurve) -> Result<f64, PatternError> {
        if self.grid != other.grid {
            return Err(PatternError::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Largest difference after sampling `other` on this grid.
    pub fn sup_distance_interpolated(&self, other: &PatternCurve) -> f64 {
        self.positions()
            .zip(&self.values)
            .filter_map(|(x, v)| other.value_at(x).map(|w| (v - w).abs()))
            .fold(0.0, f64::max)
    }

    fn center_index(&self) -> usize {
        self.grid.nearest_index(0.0).unwrap_or(self.grid.len / 2)
    }

    /// `1 − C(0)/max C` for an image with a central obstruction.
    pub fn dip_depth(&self) -> f64 {
        let m = self.max();
        if m == 0.0 {
            return 0.0;
        }
        1.0 - self.values[self.center_index()] / m
    }

    /// Position of the first local minimum right of the centre; `None` if
    /// the curve decreases to the grid edge.
    pub fn first_minimum(&self) -> Option<f64> {
        let v = &self.values;
        let mut i = self.center_index();
        while i + 1 < v.len() && v[i + 1] <= v[i] {
            i += 1;
        }
        (i + 1 < v.len()).then(|| self.grid.position(i))
    }

    /// `(C(0) − C(x))/(C(0) + C(x))`.
    pub fn contrast_at(&self, x: f64) -> Option<f64> {
        let peak = self.values[self.center_index()];
        let other = self.value_at(x)?;
        Some(if peak + other == 0.0 { 0.0 } else { (peak - other) / (peak + other) })
    }

    /// Contrast between the centre and the first local minimum beside it;
    /// zero when there is none.
    pub fn visibility(&self) -> f64 {
        self.first_minimum().and_then(|x| self.contrast_at(x)).unwrap_or(0.0)
    }

    /// Convolution with a unit-area Gaussian of standard deviation `sigma`,
    /// then with the detector acceptance `|T|²` at unit area. Area-preserving
    /// for curves that vanish at the grid edges; the normalization tag
    /// becomes `Raw`.
    pub fn blurred(&self, sigma: f64, detector: &Aperture) -> Result<PatternCurve, PatternError> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(PatternError::InvalidBlur { sigma_mm: sigma });
        }
        let mut values = self.values.clone();
        if let Some(kernel) = gaussian_kernel(sigma, &self.grid)? {
            values = convolve_same(&values, &kernel);
        }
        if let Some(kernel) = acceptance_kernel(detector, &self.grid)? {
            values = convolve_same(&values, &kernel);
        }
        PatternCurve::new(self.grid, values, self.kind, Normalization::Raw)
    }
}

/// Rejects kernels whose significant support (±6σ for Gaussians) is wider
/// than the grid.
fn check_kernel_fits(half_width: f64, grid: &UniformGrid) -> Result<(), PatternError> {
    if 2.0 * half_width > grid.span() {
        Err(PatternError::KernelTooWide {
            half_width_mm: half_width,
            span_mm: grid.span(),
        })
    } else {
        Ok(())
    }
}

/// Sampled unit-sum Gaussian, or `None` when narrower than the grid can show.
fn gaussian_kernel(sigma: f64, grid: &UniformGrid) -> Result<Option<Vec<f64>>, PatternError> {
    if sigma < 1e-3 * grid.step {
        return Ok(None);
    }
    check_kernel_fits(6.0 * sigma, grid)?;
    let reach = KERNEL_SIGMAS * sigma;
    let half = ((reach / grid.step).ceil() as usize).min(grid.len - 1);
    let mut k: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let x = (i as f64 - half as f64) * grid.step;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    normalize_sum(&mut k);
    Ok(Some(k))
}

fn normalize_sum(k: &mut [f64]) {
    let total: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= total;
    }
}

/// Unit-sum sampled detector acceptance `|T(x)|²`; `None` for a point detector.
fn acceptance_kernel(detector: &Aperture, grid: &UniformGrid) -> Result<Option<Vec<f64>>, PatternError> {
    let step = grid.step;
    let mut k = match *detector {
        Aperture::Open => return Ok(None),
        Aperture::RectSlit { width_mm } => {
            check_kernel_fits(width_mm / 2.0, grid)?;
            let half_w = width_mm / 2.0;
            let half = (half_w / step + 0.5).ceil() as usize;
            // Fraction of each sample cell covered by the slit.
            (0..=2 * half)
                .map(|i| {
                    let c = (i as f64 - half as f64) * step;
                    let lo = (c - step / 2.0).max(-half_w);
                    let hi = (c + step / 2.0).min(half_w);
                    ((hi - lo) / step).max(0.0)
                })
                .collect::<Vec<_>>()
        }
        Aperture::GaussianPinhole { waist_mm } => {
            if waist_mm < 2e-3 * step {
                return Ok(None);
            }
            check_kernel_fits(3.0 * waist_mm, grid)?;
            let reach = KERNEL_SIGMAS * waist_mm / 2.0;
            let half = ((reach / step).ceil() as usize).min(grid.len - 1);
            (0..=2 * half)
                .map(|i| detector.transmission((i as f64 - half as f64) * step).powi(2))
                .collect()
        }
        Aperture::DoubleSlitEffective { mode_waist_mm, .. } => {
            let reach = 6.0 * mode_waist_mm;
            check_kernel_fits(reach, grid)?;
            let half = ((reach / step).ceil() as usize).min(grid.len - 1);
            (0..=2 * half)
                .map(|i| detector.transmission((i as f64 - half as f64) * step).powi(2))
                .collect()
        }
    };
    let total: f64 = k.iter().sum();
    if total <= 0.0 {
        return Err(PatternError::InvalidGrid("detector acceptance vanishes on the grid".into()));
    }
    normalize_sum(&mut k);
    Ok(Some(k))
}

fn check_feature_resolution(aperture: &Aperture, grid: &UniformGrid) -> Result<(), PatternError> {
    if let Some(feature) = aperture.feature_width() {
        let points = (feature / grid.step).floor() as usize;
        if points < MIN_POINTS_ACROSS_FEATURE {
            return Err(PatternError::GridTooCoarse {
                points,
                feature_mm: feature,
            });
        }
    }
    Ok(())
}

fn check_spans(aperture: &Aperture, grid: &UniformGrid, magnification: f64) -> Result<(), PatternError> {
    let needed = match *aperture {
        Aperture::DoubleSlitEffective { bar_width_mm, .. } => bar_width_mm / 2.0,
        Aperture::RectSlit { width_mm } => width_mm / 2.0,
        Aperture::GaussianPinhole { waist_mm } => waist_mm,
        Aperture::Open => 0.0,
    } * magnification;
    let half_span = grid.start.abs().min(grid.end().abs());
    if grid.start > -needed || grid.end() < needed {
        return Err(PatternError::GridTooNarrow {
            half_span_mm: half_span,
            needed_mm: needed,
        });
    }
    Ok(())
}

/// Ideal ghost image `|Γ(x)|²`, peak-normalized.
pub fn ideal_ghost_image(aperture: &Aperture, grid: &UniformGrid) -> Result<PatternCurve, PatternError> {
    ideal_ghost_image_magnified(aperture, grid, 1.0)
}

/// Ideal ghost image seen through an imaging arm of magnification `m`:
/// `|Γ(x/m)|²`.
pub fn ideal_ghost_image_magnified(aperture: &Aperture, grid: &UniformGrid, m: f64) -> Result<PatternCurve, PatternError> {
    let m = m.abs();
    check_spans(aperture, grid, m)?;
    let scaled = UniformGrid {
        step: grid.step / m,
        ..*grid
    };
    check_feature_resolution(aperture, &scaled)?;
    let values = grid.positions().map(|x| aperture.transmission(x / m).powi(2)).collect();
    Ok(PatternCurve::new(*grid, values, PatternKind::Image, Normalization::Raw)?.normalized_max())
}

/// Numerical Fourier transform settings for the interference patterns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSettings {
    /// Half-width of the integration window in units of the aperture extent.
    pub window_extents: f64,
    /// Simpson panels on each smooth piece of the aperture.
    pub panels: usize,
}

impl Default for TransformSettings {
    fn default() -> Self {
        Self {
            window_extents: 6.0,
            panels: 4096,
        }
    }
}

/// Minimum window, in aperture extents, for the transform guard.
pub const MIN_WINDOW_EXTENTS: f64 = 6.0;

fn transform_window(aperture: &Aperture, settings: &TransformSettings) -> Result<f64, PatternError> {
    let extent = aperture.extent().ok_or(PatternError::UnboundedAperture)?;
    if aperture.is_hard_edged() {
        // Finite support: the window only has to cover it.
        return Ok(extent.max(settings.window_extents * extent));
    }
    if settings.window_extents < MIN_WINDOW_EXTENTS {
        return Err(PatternError::TransformWindow {
            window_mm: settings.window_extents * extent,
            needed_mm: MIN_WINDOW_EXTENTS * extent,
        });
    }
    Ok(settings.window_extents * extent)
}

fn check_aliasing(intervals: &[(f64, f64)], panels: usize, max_k: f64) -> Result<(), PatternError> {
    for &(a, b) in intervals {
        let step = (b - a) / panels as f64;
        // At least eight nodes per period of the fastest phase.
        if max_k * step > std::f64::consts::PI / 4.0 {
            return Err(PatternError::Aliasing {
                step_mm: step,
                max_wavenumber: max_k,
            });
        }
    }
    Ok(())
}

/// `Γ̄(k) = ∫ Γ(x) e^{−ikx} dx` at each wavenumber.
fn aperture_transform(
    aperture: &Aperture,
    wavenumbers: &[f64],
    settings: &TransformSettings,
) -> Result<Vec<f64>, PatternError> {
    let window = transform_window(aperture, settings)?;
    let intervals = aperture.smooth_intervals(window);
    let max_k = wavenumbers.iter().fold(0.0f64, |m, k| m.max(k.abs()));
    check_aliasing(&intervals, settings.panels, max_k)?;
    Ok(wavenumbers
        .par_iter()
        .map(|&k| {
            intervals
                .iter()
                .map(|&(a, b)| simpson_fourier(|x| aperture.transmission(x), k, a, b, settings.panels))
                .sum::<num_complex::Complex64>()
                .norm_sqr()
        })
        .collect())
}

/// Ideal ghost-interference pattern `|Γ̄(2πX/λf₂)|²` on focal-plane
/// positions `X` (mm), peak-normalized.
pub fn ideal_ghost_interference(
    aperture: &Aperture,
    optics: &OpticsConfig,
    grid: &UniformGrid,
    settings: &TransformSettings,
) -> Result<PatternCurve, PatternError> {
    let wavenumbers: Vec<f64> = grid
        .positions()
        .map(|x| focal_plane_wavenumber(x, optics.lambda_nm, optics.f2_mm))
        .collect();
    let values = aperture_transform(aperture, &wavenumbers, settings)?;
    Ok(PatternCurve::new(*grid, values, PatternKind::Interference, Normalization::Raw)?.normalized_max())
}

/// Ideal curve convolved with a Gaussian and the detector, peak-normalized.
pub fn blurred_pattern(ideal: &PatternCurve, blur_sigma: f64, detector: &Aperture) -> Result<PatternCurve, PatternError> {
    Ok(ideal.blurred(blur_sigma, detector)?.normalized_max())
}

/// Gaussian blur of the image: the position-difference spread seen through
/// the imaging arm.
pub fn image_blur_sigma(state: &DoubleGaussianState, optics: &OpticsConfig) -> f64 {
    optics.magnification_imaging_arm.abs() * state.marginal_variances().var_x_minus.sqrt()
}

/// Gaussian blur of the fringes: the momentum-sum spread mapped to the focal plane.
pub fn interference_blur_sigma(state: &DoubleGaussianState, optics: &OpticsConfig) -> f64 {
    focal_plane_position(state.marginal_variances().var_p_plus.sqrt(), optics.lambda_nm, optics.f2_mm)
}

/// Convolution-model ghost image for a finite-correlation state.
pub fn predicted_image(
    state: &DoubleGaussianState,
    aperture: &Aperture,
    optics: &OpticsConfig,
    detector: &Aperture,
    grid: &UniformGrid,
) -> Result<PatternCurve, PatternError> {
    let ideal = ideal_ghost_image_magnified(aperture, grid, optics.magnification_imaging_arm)?;
    blurred_pattern(&ideal, image_blur_sigma(state, optics), detector)
}

/// Convolution-model ghost interference for a finite-correlation state.
pub fn predicted_interference(
    state: &DoubleGaussianState,
    aperture: &Aperture,
    optics: &OpticsConfig,
    detector: &Aperture,
    grid: &UniformGrid,
    settings: &TransformSettings,
) -> Result<PatternCurve, PatternError> {
    let ideal = ideal_ghost_interference(aperture, optics, grid, settings)?;
    blurred_pattern(&ideal, interference_blur_sigma(state, optics), detector)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn slit() -> Aperture {
        Aperture::double_slit(1.04, 1.1).unwrap()
    }

    fn image() -> PatternCurve {
        ideal_ghost_image(&slit(), &UniformGrid::default_image()).unwrap()
    }

    fn interference() -> PatternCurve {
        ideal_ghost_interference(
            &slit(),
            &OpticsConfig::default(),
            &UniformGrid::default_interference(),
            &TransformSettings::default(),
        )
        .unwrap()
    }

    fn assert_even(c: &PatternCurve, tol: f64) {
        let v = c.values();
        let n = v.len();
        for i in 0..n / 2 {
            assert!((v[i] - v[n - 1 - i]).abs() <= tol, "asymmetry at {i}: {} vs {}", v[i], v[n - 1 - i]);
        }
    }

    #[test]
    fn grid_helpers() {
        let g = UniformGrid::symmetric(1.0, 5).unwrap();
        assert_eq!(g.positions().collect::<Vec<_>>(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(g.nearest_index(0.26), Some(3));
        assert_eq!(g.nearest_index(1.5), None);
        assert_eq!(g.refined().len(), 9);
        assert!(UniformGrid::new(0.0, 0.0, 10).is_err());
        assert!(UniformGrid::symmetric(1.0, 1).is_err());
    }

    #[test]
    fn ideal_image_shape() {
        let c = image();
        assert_eq!(c.value_at(0.0), Some(0.0));
        assert_eq!(c.max(), 1.0);
        // Peaks sit on the bar edges: e^{−2(ω_b/2)²/ω₀²} before normalization.
        let edge_raw = (-2.0 * 0.52f64.powi(2) / 1.21).exp();
        assert!((edge_raw - 0.639_580_907_752_940_1).abs() < 1e-12);
        let mid = c.grid().len() / 2;
        let i_edge = (0..mid).rev().find(|&i| c.values()[i] > 0.0).unwrap();
        let x_edge = c.grid().position(i_edge);
        assert!((x_edge + 0.52).abs() <= c.grid().step());
        assert_even(&c, 0.0);
    }

    #[test]
    fn ideal_image_guards() {
        let coarse = UniformGrid::symmetric(8.0, 101).unwrap();
        assert!(matches!(ideal_ghost_image(&slit(), &coarse), Err(PatternError::GridTooCoarse { .. })));
        let narrow = UniformGrid::symmetric(0.3, 401).unwrap();
        assert!(matches!(ideal_ghost_image(&slit(), &narrow), Err(PatternError::GridTooNarrow { .. })));
    }

    #[test]
    fn ideal_interference_shape() {
        let c = interference();
        let centre = c.grid().nearest_index(0.0).unwrap();
        assert_eq!(c.values()[centre], 1.0);
        assert_even(&c, 1e-9);
        assert!(c.visibility() > 0.99, "{}", c.visibility());
    }

    #[test]
    fn fringe_period_scale() {
        // Distance between the central maximum and the next maximum.
        let c = interference();
        let v = c.values();
        let centre = c.grid().nearest_index(0.0).unwrap();
        let mut i = centre + 1;
        while v[i + 1] < v[i] {
            i += 1;
        }
        while v[i + 1] > v[i] {
            i += 1;
        }
        let period_um = (c.grid().position(i) - c.grid().position(centre)) * 1e3;
        assert!((5.0..=40.0).contains(&period_um), "{period_um}");
    }

    #[test]
    fn interference_guards() {
        let optics = OpticsConfig::default();
        let grid = UniformGrid::default_interference();
        let narrow = TransformSettings {
            window_extents: 3.0,
            ..TransformSettings::default()
        };
        assert!(matches!(
            ideal_ghost_interference(&slit(), &optics, &grid, &narrow),
            Err(PatternError::TransformWindow { .. })
        ));
        let sparse = TransformSettings {
            panels: 16,
            ..TransformSettings::default()
        };
        assert!(matches!(
            ideal_ghost_interference(&slit(), &optics, &grid, &sparse),
            Err(PatternError::Aliasing { .. })
        ));
        assert!(matches!(
            ideal_ghost_interference(&Aperture::Open, &optics, &grid, &TransformSettings::default()),
            Err(PatternError::UnboundedAperture)
        ));
    }

    #[test]
    fn rect_slit_transform_is_sinc() {
        let w = 0.5;
        let optics = OpticsConfig::default();
        let grid = UniformGrid::symmetric(0.1, 401).unwrap();
        let c = ideal_ghost_interference(&Aperture::rect_slit(w).unwrap(), &optics, &grid, &TransformSettings::default()).unwrap();
        for (x, v) in c.positions().zip(c.values()) {
            let k = focal_plane_wavenumber(x, optics.lambda_nm, optics.f2_mm);
            let s = if k == 0.0 { 1.0 } else { (k * w / 2.0).sin() / (k * w / 2.0) };
            assert!((v - s * s).abs() < 1e-9, "x={x}: {v} vs {}", s * s);
        }
    }

    #[test]
    fn blur_identity_and_area() {
        let c = image();
        let same = blurred_pattern(&c, 0.0, &Aperture::Open).unwrap();
        assert_eq!(same.values(), c.values());
        let raw = c.blurred(0.23f64.sqrt(), &Aperture::rect_slit(0.4).unwrap()).unwrap();
        assert!((raw.area() - c.area()).abs() <= 1e-9 * c.area());
    }

    #[test]
    fn blur_fills_the_dip() {
        let b = blurred_pattern(&image(), 0.23f64.sqrt(), &Aperture::Open).unwrap();
        let ratio = b.value_at(0.0).unwrap() / b.max();
        assert!(ratio > 0.0 && ratio < 1.0, "{ratio}");
    }

    #[test]
    fn blur_guards() {
        let c = image();
        assert!(matches!(c.blurred(-1.0, &Aperture::Open), Err(PatternError::InvalidBlur { .. })));
        assert!(matches!(c.blurred(5.0, &Aperture::Open), Err(PatternError::KernelTooWide { .. })));
    }

    #[test]
    fn predicted_image_limits_and_degradation() {
        let optics = OpticsConfig::default();
        let grid = UniformGrid::default_image();
        let tiny = DoubleGaussianState::from_variances(1e-12, 1e-6, 1).unwrap();
        let ideal = image();
        let p = predicted_image(&tiny, &slit(), &optics, &Aperture::Open, &grid).unwrap();
        assert!(p.sup_distance(&ideal).unwrap() < 1e-9);

        let det = Aperture::rect_slit(0.4).unwrap();
        let row1 = DoubleGaussianState::from_variances(0.230, 0.807, 1).unwrap();
        let row2 = DoubleGaussianState::from_variances(0.332, 1.439, 1).unwrap();
        let d1 = predicted_image(&row1, &slit(), &optics, &det, &grid).unwrap().dip_depth();
        let d2 = predicted_image(&row2, &slit(), &optics, &det, &grid).unwrap().dip_depth();
        assert!(d2 < d1, "{d2} !< {d1}");
    }

    #[test]
    fn predicted_interference_visibility() {
        let optics = OpticsConfig::default();
        let grid = UniformGrid::default_interference();
        let settings = TransformSettings::default();
        let sharp = DoubleGaussianState::from_variances(1e-6, 1e-10, 1).unwrap();
        let ideal = predicted_interference(&sharp, &slit(), &optics, &Aperture::Open, &grid, &settings).unwrap();
        assert!(ideal.visibility() > 0.999);

        let fiber = Aperture::gaussian_pinhole(2.5e-3).unwrap();
        let row1 = DoubleGaussianState::from_variances(0.230, 0.807, 1).unwrap();
        let row2 = DoubleGaussianState::from_variances(0.332, 1.439, 1).unwrap();
        assert!((interference_blur_sigma(&row1, &optics) - 3.637e-3).abs() < 1e-6);
        let x_min = ideal.first_minimum().unwrap();
        let v1 = predicted_interference(&row1, &slit(), &optics, &fiber, &grid, &settings).unwrap().contrast_at(x_min).unwrap();
        let v2 = predicted_interference(&row2, &slit(), &optics, &fiber, &grid, &settings).unwrap().contrast_at(x_min).unwrap();
        assert!(v1 < 1.0 && v2 < v1, "{v1} {v2}");
    }

    #[test]
    fn monotone_contrast() {
        let optics = OpticsConfig::default();
        let det = Aperture::rect_slit(0.4).unwrap();
        let grid = UniformGrid::default_image();
        let ideal = ideal_ghost_image(&slit(), &grid).unwrap();
        let depths: Vec<f64> = [0.05, 0.1, 0.2, 0.3, 0.5]
            .iter()
            .map(|v: &f64| blurred_pattern(&ideal, v.sqrt() * optics.magnification_imaging_arm, &det).unwrap().dip_depth())
            .collect();
        assert!(depths.windows(2).all(|w| w[1] < w[0]), "{depths:?}");

        let fringes = interference();
        let x_min = fringes.first_minimum().unwrap();
        let fiber = Aperture::gaussian_pinhole(2.5e-3).unwrap();
        let vis: Vec<f64> = [0.2, 0.5, 0.8, 1.2, 2.0]
            .iter()
            .map(|v: &f64| {
                let s = focal_plane_position(v.sqrt(), optics.lambda_nm, optics.f2_mm);
                blurred_pattern(&fringes, s, &fiber).unwrap().contrast_at(x_min).unwrap()
            })
            .collect();
        assert!(vis.windows(2).all(|w| w[1] < w[0]), "{vis:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn blurred_curves_are_peak_normalized_and_even(sigma in 0.0f64..1.0, width in 0.05f64..1.0) {
            let c = blurred_pattern(&image(), sigma, &Aperture::rect_slit(width).unwrap()).unwrap();
            prop_assert!((c.max() - 1.0).abs() <= 1e-12);
            prop_assert!(c.values().iter().all(|v| *v >= 0.0));
            let v = c.values();
            let n = v.len();
            for i in 0..n / 2 {
                prop_assert!((v[i] - v[n - 1 - i]).abs() < 1e-9);
            }
        }
    }
}
