//! Amplitude-level pattern predictions computed directly from the
//! wavefunction, with the arm-2 collection treated as a projection onto the
//! single mode already folded into `Γ`.
//!
//! Writing the single-axis exponent as `−a·x₁² + 2b·x₁x₂ − a·x₂²` with
//! `a = 1/4σ₋² + 1/4σ₊²` and `b = 1/4σ₋² − 1/4σ₊²`, completing the square in
//! either variable gives
//!
//! ```text
//! ψ(x₁, x₂) = N · exp(−a (x₂ − c·x₁)²) · exp(−x₁² / (σ₊² + σ₋²)),   c = b/a
//! ```
//!
//! so the conditional amplitude of one party is a Gaussian of width
//! `1/√(2a)` centred on `c` times the other party's coordinate. The transform
//! over `x₁` is analytic:
//!
//! ```text
//! ∫ e^{−ipx₁} ψ(x₁, x₂) dx₁ = N √(π/a) e^{−p²/4a} e^{−ipc·x₂} e^{−x₂²/(σ₊²+σ₋²)}.
//! ```
//!
//! These predictions are coherent: they do not reduce to the Gaussian
//! convolution model except in the strong-correlation limit.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numeric::{simpson, simpson_fourier};
use crate::optics::{focal_plane_wavenumber, Aperture, OpticsConfig};
use crate::patterns::{Normalization, PatternCurve, PatternError, PatternKind, UniformGrid};
use crate::state::DoubleGaussianState;

/// Relative change (to the curve maximum) tolerated when doubling the nodes.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-4;

/// Gaussian factors are integrated out to this many standard deviations.
const WINDOW_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSettings {
    /// Simpson panels on each smooth piece of the integrand.
    pub panels: usize,
    pub check_convergence: bool,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            panels: 512,
            check_convergence: true,
        }
    }
}

/// Parameters of the completed-square form of a single-axis state.
#[derive(Debug, Clone, Copy)]
struct Conditional {
    a: f64,
    c: f64,
    /// `σ₊² + σ₋²`
    envelope: f64,
}

impl Conditional {
    fn of(state: &DoubleGaussianState) -> Self {
        let sm2 = state.sigma_minus().powi(2);
        let sp2 = state.sigma_plus().powi(2);
        let a = (sp2 + sm2) / (4.0 * sp2 * sm2);
        let c = (sp2 - sm2) / (sp2 + sm2);
        Self { a, c, envelope: sp2 + sm2 }
    }

    /// Amplitude standard deviation of the conditional Gaussian.
    fn width(&self) -> f64 {
        (1.0 / (2.0 * self.a)).sqrt()
    }
}

fn intersect(pieces: &[(f64, f64)], lo: f64, hi: f64) -> Vec<(f64, f64)> {
    pieces
        .iter()
        .filter_map(|&(a, b)| {
            let l = a.max(lo);
            let h = b.min(hi);
            (h > l).then_some((l, h))
        })
        .collect()
}

fn check_state(state: &DoubleGaussianState) -> Result<(), PatternError> {
    if state.dimension() != 1 {
        return Err(PatternError::StateDimension);
    }
    Ok(())
}

fn largest_change(coarse: &[f64], fine: &[f64]) -> f64 {
    let scale = coarse.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    coarse
        .iter()
        .zip(fine)
        .map(|(a, b)| (a - b).abs() / scale)
        .fold(0.0, f64::max)
}

/// Runs `eval` with `panels` and, if requested, `2·panels`; returns the
/// refined values when both agree.
fn converged<F>(settings: &QuadratureSettings, eval: F) -> Result<Vec<f64>, PatternError>
where
    F: Fn(usize) -> Vec<f64>,
{
    let coarse = eval(settings.panels);
    if !settings.check_convergence {
        return Ok(coarse);
    }
    let fine = eval(2 * settings.panels);
    let change = largest_change(&coarse, &fine);
    if change > CONVERGENCE_TOLERANCE {
        return Err(PatternError::NotConverged { change });
    }
    Ok(fine)
}

fn finish(
    grid: &UniformGrid,
    values: Vec<f64>,
    kind: PatternKind,
    detector: &Aperture,
) -> Result<PatternCurve, PatternError> {
    let raw = PatternCurve::new(*grid, values, kind, Normalization::Raw)?;
    Ok(raw.blurred(0.0, detector)?.normalized_max())
}

/// Ghost image `C(x₁) = |∫ ψ(x₁, x₂) Γ(x₂) dx₂|²`, then the detector
/// acceptance, peak-normalized.
pub fn amplitude_image_oracle(
    state: &DoubleGaussianState,
    aperture: &Aperture,
    detector: &Aperture,
    grid: &UniformGrid,
    settings: &QuadratureSettings,
) -> Result<PatternCurve, PatternError> {
    check_state(state)?;
    let cond = Conditional::of(state);
    let reach = WINDOW_SIGMAS * cond.width();
    let positions: Vec<f64> = grid.positions().collect();
    let eval = |panels: usize| -> Vec<f64> {
        positions
            .par_iter()
            .map(|&x1| {
                let centre = cond.c * x1;
                let pieces = aperture.smooth_intervals(centre.abs() + reach);
                let amplitude: f64 = intersect(&pieces, centre - reach, centre + reach)
                    .into_iter()
                    .map(|(a, b)| simpson(|x2| state.axis_amplitude(x1, x2) * aperture.transmission(x2), a, b, panels))
                    .sum();
                amplitude * amplitude
            })
            .collect()
    };
    let values = converged(settings, eval)?;
    finish(grid, values, PatternKind::Image, detector)
}

/// Ghost interference `C(X) = |A(2πX/λf₂)|²` with
/// `A(p) = ∫∫ e^{−ipx₁} ψ(x₁, x₂) Γ(x₂) dx₁ dx₂`, then the detector
/// acceptance, peak-normalized.
pub fn amplitude_interference_oracle(
    state: &DoubleGaussianState,
    aperture: &Aperture,
    optics: &OpticsConfig,
    detector: &Aperture,
    grid: &UniformGrid,
    settings: &QuadratureSettings,
) -> Result<PatternCurve, PatternError> {
    check_state(state)?;
    let cond = Conditional::of(state);
    // Effective width of Γ(x₂)·exp(−x₂²/(σ₊²+σ₋²)).
    let width = match aperture.extent() {
        Some(e) if !aperture.is_hard_edged() => 1.0 / (1.0 / (e * e) + 1.0 / cond.envelope).sqrt(),
        _ => cond.envelope.sqrt(),
    };
    let pieces = aperture.smooth_intervals(WINDOW_SIGMAS * width);
    let prefactor = (1.0 / (std::f64::consts::PI * state.sigma_plus() * state.sigma_minus())).sqrt()
        * (std::f64::consts::PI / cond.a).sqrt();
    let wavenumbers: Vec<f64> = grid
        .positions()
        .map(|x| focal_plane_wavenumber(x, optics.lambda_nm, optics.f2_mm))
        .collect();
    let eval = |panels: usize| -> Vec<f64> {
        wavenumbers
            .par_iter()
            .map(|&p| {
                let inner: Complex64 = pieces
                    .iter()
                    .map(|&(a, b)| {
                        simpson_fourier(
                            |x2| aperture.transmission(x2) * (-x2 * x2 / cond.envelope).exp(),
                            p * cond.c,
                            a,
                            b,
                            panels,
                        )
                    })
                    .sum();
                let amplitude = inner * (prefactor * (-p * p / (4.0 * cond.a)).exp());
                amplitude.norm_sqr()
            })
            .collect()
    };
    let values = converged(settings, eval)?;
    finish(grid, values, PatternKind::Interference, detector)
}
