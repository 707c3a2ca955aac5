//! End-to-end reproduction: state → predicted curves → synthetic scans →
//! fits → variances → criteria, for the unstored and the stored row.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::criteria::{classify, CriterionReport, Regime};
use crate::fit::{extract_variances, fit_samples, DetectorWidths, FitResult, FitStatus};
use crate::median;
use crate::optics::Aperture;
use crate::patterns::{
    blurred_pattern, ideal_ghost_image_magnified, ideal_ghost_interference, image_blur_sigma, interference_blur_sigma,
    PatternCurve, PatternKind,
};
use crate::seed;
use crate::state::{DoubleGaussianState, StorageChannel};
use crate::synth::{expected_counts, synthesize, CountBudget};

/// Reference products of the unstored and stored rows.
pub const REFERENCE_PRODUCTS: [f64; 2] = [0.186, 0.478];
/// Allowed relative deviation of the median recovered product.
pub const PRODUCT_TOLERANCE: f64 = 0.25;
/// Fraction of seeds that must land in the expected regime.
pub const REGIME_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    State,
    Predict,
    Synthesize,
    Fit,
    Extract,
    Classify,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::State => "state",
            Stage::Predict => "predict",
            Stage::Synthesize => "synthesize",
            Stage::Fit => "fit",
            Stage::Extract => "extract",
            Stage::Classify => "classify",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{label}: {} stage failed: {message}", stage.as_str())]
pub struct PipelineError {
    pub label: String,
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    fn at(label: &str, stage: Stage) -> impl FnOnce(String) -> Self + '_ {
        move |message| Self {
            label: label.to_string(),
            stage,
            message,
        }
    }
}

/// One reproduced row: its state, budgets and scan settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSpec {
    pub index: usize,
    pub label: String,
    pub state: DoubleGaussianState,
    pub stored: bool,
    pub image_budget: CountBudget,
    pub interference_budget: CountBudget,
    pub reference_product: f64,
}

impl RowSpec {
    pub fn true_product(&self) -> f64 {
        self.state.marginal_variances().criterion_product()
    }

    pub fn expected_regime(&self) -> Regime {
        Regime::from_product(self.reference_product)
    }
}

/// The two rows. With `storage_on == false` the stored row passes through
/// the identity channel and keeps the unstored budgets.
pub fn rows(config: &ExperimentConfig, storage_on: bool) -> Result<[RowSpec; 2], PipelineError> {
    let state_err = |label: &'static str| PipelineError::at(label, Stage::State);
    let base = config.state.build().map_err(|e| state_err("row1")(e.to_string()))?;
    let channel = if storage_on {
        config.storage
    } else {
        StorageChannel::identity()
    };
    let stored = base.apply_storage(&channel).map_err(|e| state_err("row2")(e.to_string()))?;
    let b = &config.budgets;
    let budget = |arm: PatternKind, scale: f64, label: &'static str| {
        b.budget(arm)
            .and_then(|x| x.scaled(scale).map_err(|e| crate::config::ConfigError::Invalid(e.to_string())))
            .map_err(|e| state_err(label)(e.to_string()))
    };
    let scale = |arm: PatternKind| {
        if storage_on {
            b.duration(arm, true) / b.duration(arm, false) * channel.efficiency()
        } else {
            1.0
        }
    };
    Ok([
        RowSpec {
            index: 0,
            label: "row1".into(),
            state: base,
            stored: false,
            image_budget: budget(PatternKind::Image, 1.0, "row1")?,
            interference_budget: budget(PatternKind::Interference, 1.0, "row1")?,
            reference_product: REFERENCE_PRODUCTS[0],
        },
        RowSpec {
            index: 1,
            label: "row2".into(),
            state: stored,
            stored: storage_on,
            image_budget: budget(PatternKind::Image, scale(PatternKind::Image), "row2")?,
            interference_budget: budget(PatternKind::Interference, scale(PatternKind::Interference), "row2")?,
            reference_product: if storage_on { REFERENCE_PRODUCTS[1] } else { REFERENCE_PRODUCTS[0] },
        },
    ])
}

/// State-independent ideal curves used both for truth and as fit models.
#[derive(Debug, Clone)]
pub struct IdealCurves {
    pub image: PatternCurve,
    pub interference: PatternCurve,
}

impl IdealCurves {
    pub fn new(config: &ExperimentConfig) -> Result<Self, PipelineError> {
        let err = PipelineError::at("ideal", Stage::Predict);
        let build = || -> Result<Self, crate::patterns::PatternError> {
            Ok(Self {
                image: ideal_ghost_image_magnified(
                    &config.apertures.object,
                    &config.grids.image.grid()?,
                    config.optics.magnification_imaging_arm,
                )?,
                interference: ideal_ghost_interference(
                    &config.apertures.object,
                    &config.optics,
                    &config.grids.interference.grid()?,
                    &config.transform,
                )?,
            })
        };
        build().map_err(|e| err(e.to_string()))
    }
}

/// Detector folded into the fit model, and widths subtracted afterwards.
pub fn fit_detectors(config: &ExperimentConfig) -> (Aperture, Aperture, DetectorWidths) {
    let a = &config.apertures;
    if config.fit.subtract_detector_resolution {
        (Aperture::Open, Aperture::Open, DetectorWidths::equivalent(&a.image_detector, &a.fiber))
    } else {
        (a.image_detector, a.fiber, DetectorWidths::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowOutcome {
    pub label: String,
    pub replicate: usize,
    pub image_fit: FitResult,
    pub interference_fit: FitResult,
    pub report: CriterionReport,
}

/// Stream seed for `(row, replicate, arm)`.
pub fn scan_seed(root: u64, row: usize, replicate: usize, arm: PatternKind) -> u64 {
    let arm = match arm {
        PatternKind::Image => 0,
        PatternKind::Interference => 1,
    };
    seed::derive(root, &[row as u64, replicate as u64, arm])
}

/// Runs one row for one replicate. Without noise the fits see the exact
/// expected counts.
pub fn run_row(
    config: &ExperimentConfig,
    ideals: &IdealCurves,
    row: &RowSpec,
    replicate: usize,
    noise: bool,
) -> Result<RowOutcome, PipelineError> {
    let label = row.label.as_str();
    let (image_det, fiber_det, widths) = fit_detectors(config);
    let a = &config.apertures;
    let truth_image = blurred_pattern(&ideals.image, image_blur_sigma(&row.state, &config.optics), &a.image_detector)
        .map_err(|e| PipelineError::at(label, Stage::Predict)(e.to_string()))?;
    let truth_fringes = blurred_pattern(
        &ideals.interference,
        interference_blur_sigma(&row.state, &config.optics),
        &a.fiber,
    )
    .map_err(|e| PipelineError::at(label, Stage::Predict)(e.to_string()))?;

    let fit_arm = |arm: PatternKind, truth: &PatternCurve, budget: &CountBudget, ideal: &PatternCurve, det: &Aperture| {
        let positions = config.scans.positions(arm, row.stored);
        let values = if noise {
            let seed = scan_seed(config.seed, row.index, replicate, arm);
            synthesize(truth, budget, &positions, config.budgets.duration(arm, row.stored), seed)
                .map(|s| s.counts_f64())
        } else {
            expected_counts(truth, budget, &positions)
        }
        .map_err(|e| PipelineError::at(label, Stage::Synthesize)(e.to_string()))?;
        let fit = fit_samples(&positions, &values, ideal, det, None)
            .map_err(|e| PipelineError::at(label, Stage::Fit)(format!("{} arm: {e}", arm.as_str())))?;
        if fit.status != FitStatus::Converged {
            return Err(PipelineError::at(label, Stage::Fit)(format!(
                "{} arm: {:?} after {} iterations",
                arm.as_str(),
                fit.status,
                fit.iterations
            )));
        }
        Ok(fit)
    };
    let image_fit = fit_arm(PatternKind::Image, &truth_image, &row.image_budget, &ideals.image, &image_det)?;
    let interference_fit = fit_arm(
        PatternKind::Interference,
        &truth_fringes,
        &row.interference_budget,
        &ideals.interference,
        &fiber_det,
    )?;
    let extraction = extract_variances(&image_fit, &interference_fit, &config.optics, &widths)
        .map_err(|e| PipelineError::at(label, Stage::Extract)(e.to_string()))?;
    let measurement = extraction
        .measurement(label)
        .map_err(|e| PipelineError::at(label, Stage::Classify)(e.to_string()))?;
    Ok(RowOutcome {
        label: row.label.clone(),
        replicate,
        image_fit,
        interference_fit,
        report: classify(&measurement),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub label: String,
    pub true_product: f64,
    pub reference_product: f64,
    pub median_product: f64,
    pub median_var_x_minus_mm2: f64,
    pub median_var_p_plus_per_mm2: f64,
    pub expected_regime: Regime,
    pub regime_hits: usize,
    pub replicates: usize,
    pub product_within_tolerance: bool,
    pub regime_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceSummary {
    pub seed: u64,
    pub noise: bool,
    pub storage: bool,
    pub rows: Vec<RowSummary>,
    pub outcomes: Vec<RowOutcome>,
    pub pass: bool,
}

/// Runs both rows over `replicates` seeds (in parallel, order-preserving).
pub fn reproduce(
    config: &ExperimentConfig,
    replicates: usize,
    noise: bool,
    storage_on: bool,
) -> Result<ReproduceSummary, PipelineError> {
    if replicates == 0 {
        return Err(PipelineError::at("reproduce", Stage::State)("at least one replicate is required".into()));
    }
    let ideals = IdealCurves::new(config)?;
    let specs = rows(config, storage_on)?;
    let jobs: Vec<(usize, usize)> = (0..specs.len()).flat_map(|r| (0..replicates).map(move |k| (r, k))).collect();
    let outcomes: Vec<RowOutcome> = jobs
        .par_iter()
        .map(|&(r, k)| run_row(config, &ideals, &specs[r], k, noise))
        .collect::<Result<_, _>>()?;
    let rows: Vec<RowSummary> = specs
        .iter()
        .map(|spec| {
            let mine: Vec<&RowOutcome> = outcomes.iter().filter(|o| o.label == spec.label).collect();
            let med = |f: fn(&CriterionReport) -> f64| median(&mut mine.iter().map(|o| f(&o.report)).collect::<Vec<_>>());
            let median_product = med(|r| r.product_hbar2);
            let expected_regime = spec.expected_regime();
            let regime_hits = mine.iter().filter(|o| o.report.regime == expected_regime).count();
            RowSummary {
                label: spec.label.clone(),
                true_product: spec.true_product(),
                reference_product: spec.reference_product,
                median_product,
                median_var_x_minus_mm2: med(|r| r.var_x_minus_mm2),
                median_var_p_plus_per_mm2: med(|r| r.var_p_plus_per_mm2),
                expected_regime,
                regime_hits,
                replicates,
                product_within_tolerance: (median_product - spec.reference_product).abs()
                    <= PRODUCT_TOLERANCE * spec.reference_product,
                regime_ok: regime_hits as f64 >= REGIME_FRACTION * replicates as f64,
            }
        })
        .collect();
    let pass = rows.iter().all(|r| r.product_within_tolerance && r.regime_ok);
    Ok(ReproduceSummary {
        seed: config.seed,
        noise,
        storage: storage_on,
        rows,
        outcomes,
        pass,
    })
}
