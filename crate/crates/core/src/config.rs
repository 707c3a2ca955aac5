//! Experiment configuration: one JSON document whose sections mirror the
//! library types. Every field has a default reproducing the reference setup.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_json, write_json, IoError};
use crate::optics::{Aperture, OpticsConfig};
use crate::patterns::{PatternError, PatternKind, TransformSettings, UniformGrid};
use crate::state::{DoubleGaussianState, StateError, StorageChannel};
use crate::synth::{symmetric_positions, CountBudget};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

/// The source state, by widths or by collective variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum StateSpec {
    Widths { sigma_minus_mm: f64, sigma_plus_mm: f64 },
    Variances { var_x_minus_mm2: f64, var_p_plus_per_mm2: f64 },
}

impl StateSpec {
    pub fn build(&self) -> Result<DoubleGaussianState, StateError> {
        match *self {
            StateSpec::Widths {
                sigma_minus_mm,
                sigma_plus_mm,
            } => DoubleGaussianState::new(sigma_minus_mm, sigma_plus_mm, 1),
            StateSpec::Variances {
                var_x_minus_mm2,
                var_p_plus_per_mm2,
            } => DoubleGaussianState::from_variances(var_x_minus_mm2, var_p_plus_per_mm2, 1),
        }
    }
}

impl Default for StateSpec {
    fn default() -> Self {
        StateSpec::Variances {
            var_x_minus_mm2: 0.230,
            var_p_plus_per_mm2: 0.807,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApertureConfig {
    /// Object in the imaging/interference arm.
    pub object: Aperture,
    /// Scanning slit of the image arm.
    pub image_detector: Aperture,
    /// Fibre acceptance at the interference detector.
    pub fiber: Aperture,
}

impl Default for ApertureConfig {
    fn default() -> Self {
        Self {
            object: Aperture::DoubleSlitEffective {
                bar_width_mm: 1.04,
                mode_waist_mm: 1.1,
            },
            image_detector: Aperture::RectSlit { width_mm: 0.4 },
            fiber: Aperture::GaussianPinhole { waist_mm: 2.5e-3 },
        }
    }
}

/// Count budgets of the unstored row; the stored row scales them by
/// accumulation time and storage efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub image_peak_counts: f64,
    pub interference_peak_counts: f64,
    pub snr: f64,
    pub image_duration_s: f64,
    pub interference_duration_s: f64,
    pub stored_image_duration_s: f64,
    pub stored_interference_duration_s: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            image_peak_counts: 252.0,
            interference_peak_counts: 344.0,
            snr: 30.0,
            image_duration_s: 1000.0,
            interference_duration_s: 200.0,
            stored_image_duration_s: 3000.0,
            stored_interference_duration_s: 500.0,
        }
    }
}

impl BudgetConfig {
    pub fn budget(&self, arm: PatternKind) -> Result<CountBudget, ConfigError> {
        let peak = match arm {
            PatternKind::Image => self.image_peak_counts,
            PatternKind::Interference => self.interference_peak_counts,
        };
        CountBudget::from_snr(peak, self.snr).map_err(invalid)
    }

    pub fn duration(&self, arm: PatternKind, stored: bool) -> f64 {
        match (arm, stored) {
            (PatternKind::Image, false) => self.image_duration_s,
            (PatternKind::Image, true) => self.stored_image_duration_s,
            (PatternKind::Interference, false) => self.interference_duration_s,
            (PatternKind::Interference, true) => self.stored_interference_duration_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub image_half_width_mm: f64,
    pub image_step_mm: f64,
    pub stored_image_step_mm: f64,
    pub interference_half_width_mm: f64,
    pub interference_step_mm: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            image_half_width_mm: 3.0,
            image_step_mm: 0.1,
            stored_image_step_mm: 0.2,
            interference_half_width_mm: 0.06,
            interference_step_mm: 0.002,
        }
    }
}

impl ScanConfig {
    pub fn positions(&self, arm: PatternKind, stored: bool) -> Vec<f64> {
        match (arm, stored) {
            (PatternKind::Image, false) => symmetric_positions(self.image_half_width_mm, self.image_step_mm),
            (PatternKind::Image, true) => symmetric_positions(self.image_half_width_mm, self.stored_image_step_mm),
            (PatternKind::Interference, _) => {
                symmetric_positions(self.interference_half_width_mm, self.interference_step_mm)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub half_width_mm: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn grid(&self) -> Result<UniformGrid, PatternError> {
        UniformGrid::symmetric(self.half_width_mm, self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub image: GridSpec,
    pub interference: GridSpec,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            image: GridSpec {
                half_width_mm: 8.0,
                points: 4097,
            },
            interference: GridSpec {
                half_width_mm: 0.1,
                points: 4097,
            },
        }
    }
}

impl GridConfig {
    pub fn grid(&self, arm: PatternKind) -> Result<UniformGrid, PatternError> {
        match arm {
            PatternKind::Image => self.image.grid(),
            PatternKind::Interference => self.interference.grid(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Fit without the detector in the model and subtract its equivalent
    /// Gaussian width in quadrature instead.
    pub subtract_detector_resolution: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub state: StateSpec,
    pub storage: StorageChannel,
    pub optics: OpticsConfig,
    pub apertures: ApertureConfig,
    pub budgets: BudgetConfig,
    pub scans: ScanConfig,
    pub grids: GridConfig,
    pub transform: TransformSettings,
    pub fit: FitConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            state: StateSpec::default(),
            storage: StorageChannel::default(),
            optics: OpticsConfig::default(),
            apertures: ApertureConfig::default(),
            budgets: BudgetConfig::default(),
            scans: ScanConfig::default(),
            grids: GridConfig::default(),
            transform: TransformSettings::default(),
            fit: FitConfig::default(),
            seed: 20_180_101,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let state = self.state.build().map_err(invalid)?;
        state.apply_storage(&self.storage).map_err(invalid)?;
        self.optics.validate().map_err(invalid)?;
        for a in [self.apertures.object, self.apertures.image_detector, self.apertures.fiber] {
            a.validated().map_err(invalid)?;
        }
        if matches!(self.apertures.object, Aperture::Open) {
            return Err(invalid("object aperture must not be open"));
        }
        for arm in [PatternKind::Image, PatternKind::Interference] {
            self.budgets.budget(arm)?;
            for stored in [false, true] {
                let d = self.budgets.duration(arm, stored);
                if !(d.is_finite() && d > 0.0) {
                    return Err(invalid(format!("{} duration must be positive, got {d}", arm.as_str())));
                }
            }
            let grid = self.grids.grid(arm).map_err(invalid)?;
            for stored in [false, true] {
                let positions = self.scans.positions(arm, stored);
                if positions.len() < 2 || positions.iter().any(|x| !x.is_finite()) {
                    return Err(invalid(format!("{} scan needs at least two finite positions", arm.as_str())));
                }
                if positions.iter().any(|&x| !grid.contains(x)) {
                    return Err(invalid(format!("{} scan extends beyond its model grid", arm.as_str())));
                }
            }
        }
        for (name, v) in [
            ("image_step_mm", self.scans.image_step_mm),
            ("stored_image_step_mm", self.scans.stored_image_step_mm),
            ("interference_step_mm", self.scans.interference_step_mm),
            ("image_half_width_mm", self.scans.image_half_width_mm),
            ("interference_half_width_mm", self.scans.interference_half_width_mm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let c: Self = serde_json::from_str(text).map_err(invalid)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let c: Self = read_json(path).map_err(|e| match e {
            IoError::Json { source, path } if !source.is_io() => invalid(format!("{}: {source}", path.display())),
            other => ConfigError::Io(other),
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        Ok(write_json(self, path)?)
    }
}
