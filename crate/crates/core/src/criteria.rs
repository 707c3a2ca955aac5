//! EPR-paradox, inseparability and sum-form criteria on measured variances.
//!
//! Both product criteria threshold `Var(x₁−x₂)·Var(p₁+p₂)` (ħ = 1): below 1/4
//! the correlations violate the EPR bound, below 1 the state is inseparable.
//! Both inequalities are strict, so a product sitting exactly on a threshold
//! is classified into the weaker regime.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const PARADOX_THRESHOLD: f64 = 0.25;
pub const INSEPARABILITY_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriteriaError {
    #[error("{name} must be finite and positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be finite and non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
}

/// Measured `(Δx₋)²` and `(Δp₊)²` with one-standard-deviation errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasurement", into = "RawMeasurement")]
pub struct VarianceMeasurement {
    var_x_minus: f64,
    err_x: f64,
    var_p_plus: f64,
    err_p: f64,
    label: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasurement {
    #[serde(default)]
    label: String,
    var_x_minus_mm2: f64,
    #[serde(default)]
    var_x_minus_err_mm2: f64,
    var_p_plus_per_mm2: f64,
    #[serde(default)]
    var_p_plus_err_per_mm2: f64,
}

impl TryFrom<RawMeasurement> for VarianceMeasurement {
    type Error = CriteriaError;

    fn try_from(raw: RawMeasurement) -> Result<Self, Self::Error> {
        Self::new(
            raw.var_x_minus_mm2,
            raw.var_x_minus_err_mm2,
            raw.var_p_plus_per_mm2,
            raw.var_p_plus_err_per_mm2,
        )
        .map(|m| m.with_label(raw.label))
    }
}

impl From<VarianceMeasurement> for RawMeasurement {
    fn from(m: VarianceMeasurement) -> Self {
        RawMeasurement {
            label: m.label,
            var_x_minus_mm2: m.var_x_minus,
            var_x_minus_err_mm2: m.err_x,
            var_p_plus_per_mm2: m.var_p_plus,
            var_p_plus_err_per_mm2: m.err_p,
        }
    }
}

impl VarianceMeasurement {
    pub fn new(var_x_minus: f64, err_x: f64, var_p_plus: f64, err_p: f64) -> Result<Self, CriteriaError> {
        for (name, value) in [("var_x_minus", var_x_minus), ("var_p_plus", var_p_plus)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(CriteriaError::NonPositive { name, value });
            }
        }
        for (name, value) in [("err_x", err_x), ("err_p", err_p)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CriteriaError::Negative { name, value });
            }
        }
        Ok(Self {
            var_x_minus,
            err_x,
            var_p_plus,
            err_p,
            label: String::new(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn var_x_minus(&self) -> f64 {
        self.var_x_minus
    }

    pub fn err_x(&self) -> f64 {
        self.err_x
    }

    pub fn var_p_plus(&self) -> f64 {
        self.var_p_plus
    }

    pub fn err_p(&self) -> f64 {
        self.err_p
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn product(&self) -> f64 {
        self.var_x_minus * self.var_p_plus
    }

    /// First-order error of the product: relative errors added in quadrature.
    pub fn product_err(&self) -> f64 {
        let rx = self.err_x / self.var_x_minus;
        let rp = self.err_p / self.var_p_plus;
        self.product() * rx.hypot(rp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub satisfied: bool,
    pub product: f64,
}

/// `Var(x₁−x₂)·Var(p₁+p₂) < 1/4`.
pub fn paradox_criterion(m: &VarianceMeasurement) -> CriterionOutcome {
    let product = m.product();
    CriterionOutcome {
        satisfied: product < PARADOX_THRESHOLD,
        product,
    }
}

/// `Var(x₁−x₂)·Var(p₁+p₂) < 1`.
pub fn inseparability_criterion(m: &VarianceMeasurement) -> CriterionOutcome {
    let product = m.product();
    CriterionOutcome {
        satisfied: product < INSEPARABILITY_THRESHOLD,
        product,
    }
}

/// Sum form `Var(x₁−x₂)/scale + scale·Var(p₁+p₂)`.
///
/// The scale absorbs the unspecified normalization of the two quadratures; the
/// inseparability bound on the sum is 2 for every scale.
pub fn duan_sum(m: &VarianceMeasurement, scale: f64) -> Result<f64, CriteriaError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(CriteriaError::NonPositive {
            name: "scale",
            value: scale,
        });
    }
    Ok(m.var_x_minus / scale + scale * m.var_p_plus)
}

/// Scale minimizing [`duan_sum`]: `√(Var(x₁−x₂)/Var(p₁+p₂))`.
pub fn optimal_duan_scale(m: &VarianceMeasurement) -> f64 {
    (m.var_x_minus / m.var_p_plus).sqrt()
}

/// Sum evaluated at the optimal scale; equals `2√product`.
pub fn duan_sum_optimized(m: &VarianceMeasurement) -> f64 {
    let scale = optimal_duan_scale(m);
    m.var_x_minus / scale + scale * m.var_p_plus
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    EprParadox,
    Entangled,
    Classical,
}

impl Regime {
    pub fn from_product(product: f64) -> Self {
        if product < PARADOX_THRESHOLD {
            Regime::EprParadox
        } else if product < INSEPARABILITY_THRESHOLD {
            Regime::Entangled
        } else {
            Regime::Classical
        }
    }

    /// Ordering from strongest (0) to weakest correlation.
    pub fn strength_rank(self) -> u8 {
        match self {
            Regime::EprParadox => 0,
            Regime::Entangled => 1,
            Regime::Classical => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::EprParadox => "epr_paradox",
            Regime::Entangled => "entangled",
            Regime::Classical => "classical",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Distance of the product from its decision boundary in units of its error.
///
/// `Exact` marks a zero-error measurement, serialized as the string `"exact"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMargin {
    Sigma(f64),
    Exact,
}

impl SigmaMargin {
    pub fn value(self) -> f64 {
        match self {
            SigmaMargin::Sigma(v) => v,
            SigmaMargin::Exact => f64::INFINITY,
        }
    }
}

impl Serialize for SigmaMargin {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            SigmaMargin::Sigma(v) => serializer.serialize_f64(*v),
            SigmaMargin::Exact => serializer.serialize_str("exact"),
        }
    }
}

impl<'de> Deserialize<'de> for SigmaMargin {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Number(v) => Ok(SigmaMargin::Sigma(v)),
            Repr::Text(t) if t == "exact" => Ok(SigmaMargin::Exact),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("unknown margin {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionReport {
    pub label: String,
    pub var_x_minus_mm2: f64,
    pub var_x_minus_err_mm2: f64,
    pub var_p_plus_per_mm2: f64,
    pub var_p_plus_err_per_mm2: f64,
    pub product_hbar2: f64,
    pub product_err: f64,
    pub duan_sum_optimized: f64,
    pub paradox_satisfied: bool,
    pub inseparability_satisfied: bool,
    pub regime: Regime,
    pub sigma_margin: SigmaMargin,
}

/// Classifies a measurement and propagates its errors to the product.
///
/// The margin is measured against 1/4 for the paradox regime and against 1
/// for the other two.
pub fn classify(m: &VarianceMeasurement) -> CriterionReport {
    let product = m.product();
    let product_err = m.product_err();
    let regime = Regime::from_product(product);
    let boundary = match regime {
        Regime::EprParadox => PARADOX_THRESHOLD,
        Regime::Entangled | Regime::Classical => INSEPARABILITY_THRESHOLD,
    };
    let sigma_margin = if product_err > 0.0 {
        SigmaMargin::Sigma((product - boundary).abs() / product_err)
    } else {
        SigmaMargin::Exact
    };
    CriterionReport {
        label: m.label.clone(),
        var_x_minus_mm2: m.var_x_minus,
        var_x_minus_err_mm2: m.err_x,
        var_p_plus_per_mm2: m.var_p_plus,
        var_p_plus_err_per_mm2: m.err_p,
        product_hbar2: product,
        product_err,
        duan_sum_optimized: duan_sum_optimized(m),
        paradox_satisfied: paradox_criterion(m).satisfied,
        inseparability_satisfied: inseparability_criterion(m).satisfied,
        regime,
        sigma_margin,
    }
}
