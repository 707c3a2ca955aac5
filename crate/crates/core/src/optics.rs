//! Transverse optics: amplitude apertures, paraxial ray transfer, and the
//! lens map between transverse momentum and back-focal-plane position.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("{name} must be finite and positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

fn positive(name: &'static str, value: f64) -> Result<f64, OpticsError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(OpticsError::NonPositive { name, value })
    }
}

/// Amplitude transmission profile, even in `x` for every variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Aperture {
    /// Opaque bar of width `bar_width_mm` centred in a Gaussian mode of waist
    /// `mode_waist_mm`: the effective double slit.
    DoubleSlitEffective { bar_width_mm: f64, mode_waist_mm: f64 },
    RectSlit { width_mm: f64 },
    /// Gaussian acceptance `exp(−x²/w²)`, e.g. a fibre head.
    GaussianPinhole { waist_mm: f64 },
    Open,
}

impl Aperture {
    pub fn double_slit(bar_width_mm: f64, mode_waist_mm: f64) -> Result<Self, OpticsError> {
        Aperture::DoubleSlitEffective {
            bar_width_mm,
            mode_waist_mm,
        }
        .validated()
    }

    pub fn rect_slit(width_mm: f64) -> Result<Self, OpticsError> {
        Aperture::RectSlit { width_mm }.validated()
    }

    pub fn gaussian_pinhole(waist_mm: f64) -> Result<Self, OpticsError> {
        Aperture::GaussianPinhole { waist_mm }.validated()
    }

    pub fn validated(self) -> Result<Self, OpticsError> {
        match self {
            Aperture::DoubleSlitEffective {
                bar_width_mm,
                mode_waist_mm,
            } => {
                positive("bar_width_mm", bar_width_mm)?;
                positive("mode_waist_mm", mode_waist_mm)?;
            }
            Aperture::RectSlit { width_mm } => {
                positive("width_mm", width_mm)?;
            }
            Aperture::GaussianPinhole { waist_mm } => {
                positive("waist_mm", waist_mm)?;
            }
            Aperture::Open => {}
        }
        Ok(self)
    }

    /// Amplitude transmission at `x` (mm), in `[0, 1]`.
    pub fn transmission(&self, x: f64) -> f64 {
        match *self {
            Aperture::DoubleSlitEffective {
                bar_width_mm,
                mode_waist_mm,
            } => {
                if x.abs() < bar_width_mm / 2.0 {
                    0.0
                } else {
                    (-x * x / (mode_waist_mm * mode_waist_mm)).exp()
                }
            }
            Aperture::RectSlit { width_mm } => {
                if x.abs() <= width_mm / 2.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Aperture::GaussianPinhole { waist_mm } => (-x * x / (waist_mm * waist_mm)).exp(),
            Aperture::Open => 1.0,
        }
    }

    /// Length scale beyond which the transmission is negligible or zero.
    /// `None` for an open aperture.
    pub fn extent(&self) -> Option<f64> {
        match *self {
            Aperture::DoubleSlitEffective { mode_waist_mm, .. } => Some(mode_waist_mm),
            Aperture::RectSlit { width_mm } => Some(width_mm / 2.0),
            Aperture::GaussianPinhole { waist_mm } => Some(waist_mm),
            Aperture::Open => None,
        }
    }

    /// Whether the transmission has a hard edge at `extent()`.
    pub fn is_hard_edged(&self) -> bool {
        matches!(self, Aperture::RectSlit { .. })
    }

    /// Smallest feature the pattern grids must resolve.
    pub fn feature_width(&self) -> Option<f64> {
        match *self {
            Aperture::DoubleSlitEffective { bar_width_mm, .. } => Some(bar_width_mm),
            Aperture::RectSlit { width_mm } => Some(width_mm),
            Aperture::GaussianPinhole { waist_mm } => Some(waist_mm),
            Aperture::Open => None,
        }
    }

    /// Sub-intervals of `[-half_window, half_window]` on which the transmission
    /// is smooth and not identically zero.
    pub fn smooth_intervals(&self, half_window: f64) -> Vec<(f64, f64)> {
        let clip = |a: f64, b: f64| -> Option<(f64, f64)> {
            let lo = a.max(-half_window);
            let hi = b.min(half_window);
            (hi > lo).then_some((lo, hi))
        };
        match *self {
            Aperture::DoubleSlitEffective { bar_width_mm, .. } => {
                let h = bar_width_mm / 2.0;
                [clip(-half_window, -h), clip(h, half_window)].into_iter().flatten().collect()
            }
            Aperture::RectSlit { width_mm } => {
                clip(-width_mm / 2.0, width_mm / 2.0).into_iter().collect()
            }
            Aperture::GaussianPinhole { .. } | Aperture::Open => vec![(-half_window, half_window)],
        }
    }

    /// Standard deviation of a Gaussian with the same variance as `|T(x)|²`
    /// (normalized). Used for resolution subtraction.
    pub fn equivalent_sigma(&self) -> f64 {
        match *self {
            Aperture::RectSlit { width_mm } => width_mm / 12f64.sqrt(),
            Aperture::GaussianPinhole { waist_mm } => waist_mm / 2.0,
            Aperture::Open => 0.0,
            Aperture::DoubleSlitEffective { .. } => f64::NAN,
        }
    }
}

/// Paraxial ray map `x′ = A·x + B·θ`, `θ′ = C·x + D·θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayTransfer {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl RayTransfer {
    pub const IDENTITY: RayTransfer = RayTransfer {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
    };

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &RayTransfer) -> RayTransfer {
        RayTransfer {
            a: self.a * first.a + self.b * first.c,
            b: self.a * first.b + self.b * first.d,
            c: self.c * first.a + self.d * first.c,
            d: self.c * first.b + self.d * first.d,
        }
    }

    /// Composes elements listed in propagation order.
    pub fn chain<'a>(elements: impl IntoIterator<Item = &'a RayTransfer>) -> RayTransfer {
        elements
            .into_iter()
            .fold(RayTransfer::IDENTITY, |acc, e| e.after(&acc))
    }

    /// Propagates a ray `(x, θ)`.
    pub fn apply(&self, x: f64, theta: f64) -> (f64, f64) {
        (self.a * x + self.b * theta, self.c * x + self.d * theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Element {
    FreeSpace { distance_mm: f64 },
    ThinLens { focal_mm: f64 },
    /// Two-lens relay, focal lengths in propagation order.
    FourF { first_mm: f64, second_mm: f64 },
}

impl Element {
    pub fn transfer(&self) -> Result<RayTransfer, OpticsError> {
        match *self {
            Element::FreeSpace { distance_mm } => {
                let d = positive("distance_mm", distance_mm)?;
                Ok(RayTransfer {
                    a: 1.0,
                    b: d,
                    c: 0.0,
                    d: 1.0,
                })
            }
            Element::ThinLens { focal_mm } => {
                let f = positive("focal_mm", focal_mm)?;
                Ok(RayTransfer {
                    a: 1.0,
                    b: 0.0,
                    c: -1.0 / f,
                    d: 1.0,
                })
            }
            Element::FourF {
                first_mm,
                second_mm,
            } => {
                let fa = positive("first_mm", first_mm)?;
                let fb = positive("second_mm", second_mm)?;
                Ok(RayTransfer {
                    a: -fb / fa,
                    b: 0.0,
                    c: 0.0,
                    d: -fa / fb,
                })
            }
        }
    }
}

/// Wavelength and focal lengths of the setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsConfig {
    pub lambda_nm: f64,
    /// Relay lens; carried for completeness, unused by the pattern math.
    pub f1_mm: f64,
    /// Fourier lens in front of the interference detector.
    pub f2_mm: f64,
    /// Fibre-collimator lens; carried for completeness.
    pub fc_mm: f64,
    /// Net magnification from the object plane to the image-arm scan plane.
    pub magnification_imaging_arm: f64,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        Self {
            lambda_nm: 795.0,
            f1_mm: 500.0,
            f2_mm: 32.0,
            fc_mm: 11.07,
            magnification_imaging_arm: 1.0,
        }
    }
}

impl OpticsConfig {
    pub fn validate(&self) -> Result<(), OpticsError> {
        positive("lambda_nm", self.lambda_nm)?;
        positive("f1_mm", self.f1_mm)?;
        positive("f2_mm", self.f2_mm)?;
        positive("fc_mm", self.fc_mm)?;
        positive("magnification_imaging_arm", self.magnification_imaging_arm)?;
        Ok(())
    }

    pub fn lambda_mm(&self) -> f64 {
        self.lambda_nm * 1e-6
    }

    /// Wavenumber per millimetre of focal-plane displacement, `2π/(λf₂)`.
    pub fn wavenumber_per_mm(&self) -> f64 {
        2.0 * PI / (self.lambda_mm() * self.f2_mm)
    }
}

/// Back-focal-plane position `λf·p̃/2π` (mm) of transverse wavenumber `p̃` (rad/mm).
pub fn focal_plane_position(p_tilde: f64, lambda_nm: f64, f2_mm: f64) -> f64 {
    lambda_nm * 1e-6 * f2_mm * p_tilde / (2.0 * PI)
}

/// Inverse of [`focal_plane_position`].
pub fn focal_plane_wavenumber(x_mm: f64, lambda_nm: f64, f2_mm: f64) -> f64 {
    2.0 * PI * x_mm / (lambda_nm * 1e-6 * f2_mm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &RayTransfer, b: &RayTransfer, tol: f64) -> bool {
        (a.a - b.a).abs() < tol && (a.b - b.b).abs() < tol && (a.c - b.c).abs() < tol && (a.d - b.d).abs() < tol
    }

    #[test]
    fn double_slit_transmission() {
        let ap = Aperture::double_slit(1.04, 1.1).unwrap();
        assert_eq!(ap.transmission(0.0), 0.0);
        assert_eq!(ap.transmission(0.3), 0.0);
        let edge = ap.transmission(0.52);
        assert!((edge - 0.799_738_024_451_095).abs() < 1e-12, "{edge}");
        assert!((ap.transmission(2.0) - (-4.0f64 / 1.21).exp()).abs() < 1e-15);
    }

    #[test]
    fn other_variants() {
        let slit = Aperture::rect_slit(0.4).unwrap();
        assert_eq!(slit.transmission(0.19), 1.0);
        assert_eq!(slit.transmission(0.21), 0.0);
        let pin = Aperture::gaussian_pinhole(2.5e-3).unwrap();
        assert_eq!(pin.transmission(0.0), 1.0);
        assert!((pin.transmission(2.5e-3) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(Aperture::Open.transmission(123.0), 1.0);
        assert!(Aperture::rect_slit(0.0).is_err());
        assert!(Aperture::double_slit(1.0, -1.0).is_err());
        assert!(Aperture::gaussian_pinhole(f64::NAN).is_err());
    }

    #[test]
    fn aperture_serde() {
        let ap = Aperture::double_slit(1.04, 1.1).unwrap();
        let v = serde_json::to_value(ap).unwrap();
        assert_eq!(v["kind"], "double_slit_effective");
        assert_eq!(serde_json::from_value::<Aperture>(v).unwrap(), ap);
        let open: Aperture = serde_json::from_str(r#"{"kind":"open"}"#).unwrap();
        assert_eq!(open, Aperture::Open);
    }

    #[test]
    fn squared_transmission_integrable() {
        let ap = Aperture::double_slit(1.04, 1.1).unwrap();
        let n = 20_000;
        let h = 12.0 * 1.1 / n as f64;
        let total: f64 = (0..=n)
            .map(|i| ap.transmission(-6.6 + i as f64 * h).powi(2) * h)
            .sum();
        assert!(total.is_finite() && total > 0.0);
    }

    #[test]
    fn unit_four_f_inverts() {
        let m = Element::FourF {
            first_mm: 50.0,
            second_mm: 50.0,
        }
        .transfer()
        .unwrap();
        assert_eq!(m, RayTransfer { a: -1.0, b: 0.0, c: 0.0, d: -1.0 });
    }

    #[test]
    fn front_to_back_focal_plane() {
        let f = 32.0;
        let free = Element::FreeSpace { distance_mm: f }.transfer().unwrap();
        let lens = Element::ThinLens { focal_mm: f }.transfer().unwrap();
        let m = RayTransfer::chain([&free, &lens, &free]);
        assert!(close(&m, &RayTransfer { a: 0.0, b: f, c: -1.0 / f, d: 0.0 }, 1e-12));
    }

    #[test]
    fn four_f_matches_primitives() {
        let (fa, fb) = (500.0, 32.0);
        let parts = [
            Element::FreeSpace { distance_mm: fa },
            Element::ThinLens { focal_mm: fa },
            Element::FreeSpace { distance_mm: fa + fb },
            Element::ThinLens { focal_mm: fb },
            Element::FreeSpace { distance_mm: fb },
        ]
        .map(|e| e.transfer().unwrap());
        let composed = RayTransfer::chain(parts.iter());
        let relay = Element::FourF { first_mm: fa, second_mm: fb }.transfer().unwrap();
        assert!(close(&composed, &relay, 1e-12), "{composed:?}");
    }

    #[test]
    fn elements_reject_nonpositive() {
        assert!(Element::FreeSpace { distance_mm: 0.0 }.transfer().is_err());
        assert!(Element::ThinLens { focal_mm: -1.0 }.transfer().is_err());
        assert!(Element::FourF { first_mm: 1.0, second_mm: 0.0 }.transfer().is_err());
    }

    #[test]
    fn focal_plane_map() {
        let o = OpticsConfig::default();
        assert_eq!(focal_plane_position(0.0, o.lambda_nm, o.f2_mm), 0.0);
        let p = focal_plane_wavenumber(1.0, o.lambda_nm, o.f2_mm);
        assert!((p - 2.0 * PI / (795e-6 * 32.0)).abs() < 1e-9);
        assert!((focal_plane_position(p, o.lambda_nm, o.f2_mm) - 1.0).abs() < 1e-15);
        let x = focal_plane_position(0.807f64.sqrt(), o.lambda_nm, o.f2_mm);
        assert!((x - 3.637_257e-3).abs() < 1e-8, "{x}");
    }

    #[test]
    fn optics_validation() {
        assert!(OpticsConfig::default().validate().is_ok());
        let bad = OpticsConfig { f2_mm: 0.0, ..OpticsConfig::default() };
        assert!(bad.validate().is_err());
    }

    fn element() -> impl Strategy<Value = RayTransfer> {
        prop_oneof![
            (0.1f64..500.0).prop_map(|d| Element::FreeSpace { distance_mm: d }),
            (1.0f64..500.0).prop_map(|f| Element::ThinLens { focal_mm: f }),
            (1.0f64..500.0, 1.0f64..500.0).prop_map(|(a, b)| Element::FourF { first_mm: a, second_mm: b }),
        ]
        .prop_map(|e| e.transfer().unwrap())
    }

    proptest! {
        #[test]
        fn transmission_even_and_bounded(x in -10.0f64..10.0, bar in 0.1f64..3.0, w in 0.1f64..3.0) {
            for ap in [
                Aperture::double_slit(bar, w).unwrap(),
                Aperture::rect_slit(bar).unwrap(),
                Aperture::gaussian_pinhole(w).unwrap(),
                Aperture::Open,
            ] {
                let t = ap.transmission(x);
                prop_assert!((0.0..=1.0).contains(&t));
                prop_assert_eq!(t, ap.transmission(-x));
            }
        }

        #[test]
        fn composition_is_unimodular(ms in proptest::collection::vec(element(), 1..4)) {
            let m = RayTransfer::chain(ms.iter());
            prop_assert!((m.determinant() - 1.0).abs() < 1e-9 * (1.0 + m.a.abs() * m.d.abs() + m.b.abs() * m.c.abs()));
        }

        #[test]
        fn composition_is_associative(a in element(), b in element(), c in element()) {
            let left = c.after(&b).after(&a);
            let right = c.after(&b.after(&a));
            let scale = 1.0 + left.a.abs() + left.b.abs() + left.c.abs() + left.d.abs();
            prop_assert!(close(&left, &right, 1e-12 * scale));
        }

        #[test]
        fn focal_map_is_linear(p in -50.0f64..50.0, q in -50.0f64..50.0, k in -3.0f64..3.0) {
            let f = |v: f64| focal_plane_position(v, 795.0, 32.0);
            prop_assert!((f(p + k * q) - (f(p) + k * f(q))).abs() < 1e-15);
        }
    }
}
