//! Double-Gaussian two-party state and the storage channel.
//!
//! Positions are in millimetres and momenta are wavenumbers `p/ħ` in rad/mm,
//! so `ħ = 1` throughout and variances read directly in mm² and rad²/mm².
//!
//! The position-space amplitude is
//!
//! ```text
//! ψ(r_a, r_b) = N · exp(−|r_a − r_b|² / 4σ₋² − |r_a + r_b|² / 4σ₊²)
//! ```
//!
//! and its momentum-space counterpart is
//!
//! ```text
//! ψ̃(p_a, p_b) = Ñ · exp(−σ₊² |p_a + p_b|² / 4 − σ₋² |p_a − p_b|² / 4)
//! ```
//!
//! with `N = 1/(πσ₊σ₋)`, `Ñ = σ₊σ₋/π` for two transverse axes and the square
//! roots of those for a single axis.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("width {name} must be finite and positive, got {value}")]
    InvalidWidth { name: &'static str, value: f64 },
    #[error("sigma_plus ({sigma_plus}) must not be smaller than sigma_minus ({sigma_minus})")]
    Ordering { sigma_minus: f64, sigma_plus: f64 },
    #[error("dimension must be 1 or 2, got {0}")]
    Dimension(u8),
    #[error("coordinate has {got} components, state has dimension {expected}")]
    CoordinateLength { expected: usize, got: usize },
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("storage channel: {0}")]
    Channel(String),
    #[error("operation requires a one-dimensional state")]
    RequiresOneDimension,
}

/// Pure two-party Gaussian state parameterized by its difference and sum widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawState", into = "RawState")]
pub struct DoubleGaussianState {
    sigma_minus: f64,
    sigma_plus: f64,
    dimension: u8,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawState {
    sigma_minus_mm: f64,
    sigma_plus_mm: f64,
    dimension: u8,
}

impl TryFrom<RawState> for DoubleGaussianState {
    type Error = StateError;

    fn try_from(raw: RawState) -> Result<Self, Self::Error> {
        Self::new(raw.sigma_minus_mm, raw.sigma_plus_mm, raw.dimension)
    }
}

impl From<DoubleGaussianState> for RawState {
    fn from(s: DoubleGaussianState) -> Self {
        RawState {
            sigma_minus_mm: s.sigma_minus,
            sigma_plus_mm: s.sigma_plus,
            dimension: s.dimension,
        }
    }
}

fn check_width(name: &'static str, value: f64) -> Result<(), StateError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(StateError::InvalidWidth { name, value })
    }
}

impl DoubleGaussianState {
    /// Builds a state, rejecting `sigma_plus < sigma_minus` rather than relabeling.
    pub fn new(sigma_minus: f64, sigma_plus: f64, dimension: u8) -> Result<Self, StateError> {
        check_width("sigma_minus", sigma_minus)?;
        check_width("sigma_plus", sigma_plus)?;
        if dimension != 1 && dimension != 2 {
            return Err(StateError::Dimension(dimension));
        }
        if sigma_plus < sigma_minus {
            return Err(StateError::Ordering {
                sigma_minus,
                sigma_plus,
            });
        }
        Ok(Self {
            sigma_minus,
            sigma_plus,
            dimension,
        })
    }

    /// State whose marginals reproduce the given `Var(x₁−x₂)` and `Var(p₁+p₂)`.
    pub fn from_variances(var_x_minus: f64, var_p_plus: f64, dimension: u8) -> Result<Self, StateError> {
        check_width("var_x_minus", var_x_minus)?;
        check_width("var_p_plus", var_p_plus)?;
        Self::new(var_x_minus.sqrt(), 1.0 / var_p_plus.sqrt(), dimension)
    }

    pub fn sigma_minus(&self) -> f64 {
        self.sigma_minus
    }

    pub fn sigma_plus(&self) -> f64 {
        self.sigma_plus
    }

    pub fn dimension(&self) -> u8 {
        self.dimension
    }

    /// Same widths, different number of transverse axes.
    pub fn with_dimension(&self, dimension: u8) -> Result<Self, StateError> {
        Self::new(self.sigma_minus, self.sigma_plus, dimension)
    }

    fn check_coords(&self, a: &[f64], b: &[f64]) -> Result<(), StateError> {
        let expected = self.dimension as usize;
        for c in [a, b] {
            if c.len() != expected {
                return Err(StateError::CoordinateLength {
                    expected,
                    got: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(StateError::NonFinite);
            }
        }
        Ok(())
    }

    fn position_prefactor(&self) -> f64 {
        let two_axis = 1.0 / (PI * self.sigma_plus * self.sigma_minus);
        if self.dimension == 2 {
            two_axis
        } else {
            two_axis.sqrt()
        }
    }

    fn momentum_prefactor(&self) -> f64 {
        let two_axis = self.sigma_plus * self.sigma_minus / PI;
        if self.dimension == 2 {
            two_axis
        } else {
            two_axis.sqrt()
        }
    }

    /// Momentum-space amplitude. Each argument holds one component per axis.
    pub fn momentum_wavefunction(&self, p_a: &[f64], p_b: &[f64]) -> Result<f64, StateError> {
        self.check_coords(p_a, p_b)?;
        let sp2 = self.sigma_plus * self.sigma_plus;
        let sm2 = self.sigma_minus * self.sigma_minus;
        let exponent: f64 = p_a
            .iter()
            .zip(p_b)
            .map(|(a, b)| -sp2 * (a + b).powi(2) / 4.0 - sm2 * (a - b).powi(2) / 4.0)
            .sum();
        Ok(self.momentum_prefactor() * exponent.exp())
    }

    /// Position-space amplitude. Each argument holds one component per axis.
    pub fn position_wavefunction(&self, r_a: &[f64], r_b: &[f64]) -> Result<f64, StateError> {
        self.check_coords(r_a, r_b)?;
        let exponent: f64 = r_a
            .iter()
            .zip(r_b)
            .map(|(a, b)| self.axis_exponent(*a, *b))
            .sum();
        Ok(self.position_prefactor() * exponent.exp())
    }

    /// Exponent of the position amplitude along one axis.
    #[inline]
    pub(crate) fn axis_exponent(&self, r_a: f64, r_b: f64) -> f64 {
        let d = r_a - r_b;
        let s = r_a + r_b;
        -d * d / (4.0 * self.sigma_minus * self.sigma_minus) - s * s / (4.0 * self.sigma_plus * self.sigma_plus)
    }

    /// Single-axis position amplitude without argument checks.
    #[inline]
    pub(crate) fn axis_amplitude(&self, r_a: f64, r_b: f64) -> f64 {
        (1.0 / (PI * self.sigma_plus * self.sigma_minus)).sqrt() * self.axis_exponent(r_a, r_b).exp()
    }

    /// Collective-coordinate variances per transverse axis.
    pub fn marginal_variances(&self) -> MarginalVariances {
        let sm2 = self.sigma_minus * self.sigma_minus;
        let sp2 = self.sigma_plus * self.sigma_plus;
        MarginalVariances {
            var_x_minus: sm2,
            var_p_plus: 1.0 / sp2,
            var_x_plus: sp2,
            var_p_minus: 1.0 / sm2,
        }
    }

    /// State after one party passes through `channel`.
    ///
    /// Fails if the broadened widths no longer satisfy `sigma_plus ≥ sigma_minus`:
    /// a pure double-Gaussian cannot represent a product above one.
    pub fn apply_storage(&self, channel: &StorageChannel) -> Result<Self, StateError> {
        let var_x_minus = self.sigma_minus.powi(2) + channel.beta_x;
        let var_p_plus = self.sigma_plus.powi(-2) + channel.beta_p;
        Self::from_variances(var_x_minus, var_p_plus, self.dimension)
    }
}

/// Second moments of the collective coordinates (ħ = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalVariances {
    pub var_x_minus: f64,
    pub var_p_plus: f64,
    pub var_x_plus: f64,
    pub var_p_minus: f64,
}

impl MarginalVariances {
    /// `Var(x₁−x₂)·Var(p₁+p₂)`, the quantity both criteria threshold.
    /// Evaluated as `σ₋²/σ₊²`, which is exactly one for a product state.
    pub fn criterion_product(&self) -> f64 {
        self.var_x_minus / self.var_x_plus
    }
}

/// Additive Gaussian broadening of the collective quadratures during storage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChannel", into = "RawChannel")]
pub struct StorageChannel {
    beta_x: f64,
    beta_p: f64,
    efficiency: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    beta_x_mm2: f64,
    beta_p_per_mm2: f64,
    efficiency: f64,
}

impl TryFrom<RawChannel> for StorageChannel {
    type Error = StateError;

    fn try_from(raw: RawChannel) -> Result<Self, Self::Error> {
        Self::new(raw.beta_x_mm2, raw.beta_p_per_mm2, raw.efficiency)
    }
}

impl From<StorageChannel> for RawChannel {
    fn from(c: StorageChannel) -> Self {
        RawChannel {
            beta_x_mm2: c.beta_x,
            beta_p_per_mm2: c.beta_p,
            efficiency: c.efficiency,
        }
    }
}

impl StorageChannel {
    pub fn new(beta_x: f64, beta_p: f64, efficiency: f64) -> Result<Self, StateError> {
        if !(beta_x.is_finite() && beta_x >= 0.0) {
            return Err(StateError::Channel(format!("beta_x must be >= 0, got {beta_x}")));
        }
        if !(beta_p.is_finite() && beta_p >= 0.0) {
            return Err(StateError::Channel(format!("beta_p must be >= 0, got {beta_p}")));
        }
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(StateError::Channel(format!(
                "efficiency must lie in (0, 1], got {efficiency}"
            )));
        }
        Ok(Self {
            beta_x,
            beta_p,
            efficiency,
        })
    }

    pub fn identity() -> Self {
        Self {
            beta_x: 0.0,
            beta_p: 0.0,
            efficiency: 1.0,
        }
    }

    /// Channel whose broadening maps `before` onto `after` exactly.
    pub fn calibrated(
        before: &MarginalVariances,
        after: &MarginalVariances,
        efficiency: f64,
    ) -> Result<Self, StateError> {
        Self::new(
            after.var_x_minus - before.var_x_minus,
            after.var_p_plus - before.var_p_plus,
            efficiency,
        )
    }

    pub fn beta_x(&self) -> f64 {
        self.beta_x
    }

    pub fn beta_p(&self) -> f64 {
        self.beta_p
    }

    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    /// Sequential application: broadenings add, efficiencies multiply.
    pub fn then(&self, next: &StorageChannel) -> StorageChannel {
        StorageChannel {
            beta_x: self.beta_x + next.beta_x,
            beta_p: self.beta_p + next.beta_p,
            efficiency: self.efficiency * next.efficiency,
        }
    }
}

impl Default for StorageChannel {
    /// Broadening calibrated on the two reference rows; 25 % retrieval.
    fn default() -> Self {
        Self {
            beta_x: 0.332 - 0.230,
            beta_p: 1.439 - 0.807,
            efficiency: 0.25,
        }
    }
}
