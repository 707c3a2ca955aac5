//! Synthetic coincidence scans and phase-space Monte Carlo.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::optics::Aperture;
use crate::patterns::{PatternCurve, PatternKind};
use crate::seed;
use crate::state::DoubleGaussianState;

/// Samples per random stream in the Monte Carlo generators.
pub const CHUNK: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("peak_expected must be finite and positive, got {0}")]
    Peak(f64),
    #[error("background_fraction must lie in [0, 1), got {0}")]
    Background(f64),
    #[error("duration must be finite and positive, got {0}")]
    Duration(f64),
    #[error("position {0} mm lies outside the curve domain")]
    OutsideDomain(f64),
    #[error("positions must be finite and strictly increasing")]
    Positions,
    #[error("scan columns have different lengths")]
    Length,
    #[error("sample count must be positive")]
    NoSamples,
    #[error("state must be one-dimensional")]
    StateDimension,
    #[error("magnification must be finite and nonzero")]
    Magnification,
}

/// Expected counts at the pattern maximum and the flat accidental floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountBudget {
    pub peak_expected: f64,
    /// Accidental floor as a fraction of the peak (1/SNR).
    pub background_fraction: f64,
}

impl CountBudget {
    pub fn new(peak_expected: f64, background_fraction: f64) -> Result<Self, SynthError> {
        let b = Self {
            peak_expected,
            background_fraction,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn from_snr(peak_expected: f64, snr: f64) -> Result<Self, SynthError> {
        Self::new(peak_expected, 1.0 / snr)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.peak_expected.is_finite() && self.peak_expected > 0.0) {
            return Err(SynthError::Peak(self.peak_expected));
        }
        if !(self.background_fraction.is_finite() && (0.0..1.0).contains(&self.background_fraction)) {
            return Err(SynthError::Background(self.background_fraction));
        }
        Ok(())
    }

    pub fn background(&self) -> f64 {
        self.background_fraction * self.peak_expected
    }

    /// Same budget with the peak scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, SynthError> {
        Self::new(self.peak_expected * factor, self.background_fraction)
    }
}

/// A coincidence scan: counts at strictly increasing positions, each
/// accumulated for `duration_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceScan {
    pub arm: PatternKind,
    positions: Vec<f64>,
    counts: Vec<u64>,
    duration_s: f64,
    pub seed: u64,
    pub meta: Map<String, Value>,
}

impl CoincidenceScan {
    pub fn new(
        arm: PatternKind,
        positions: Vec<f64>,
        counts: Vec<u64>,
        duration_s: f64,
        seed: u64,
        meta: Map<String, Value>,
    ) -> Result<Self, SynthError> {
        if positions.len() != counts.len() {
            return Err(SynthError::Length);
        }
        check_positions(&positions)?;
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(SynthError::Duration(duration_s));
        }
        Ok(Self {
            arm,
            positions,
            counts,
            duration_s,
            seed,
            meta,
        })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Same counts at positions shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut s = self.clone();
        for x in &mut s.positions {
            *x += delta;
        }
        s
    }
}

fn check_positions(positions: &[f64]) -> Result<(), SynthError> {
    if positions.iter().any(|x| !x.is_finite()) || positions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SynthError::Positions);
    }
    Ok(())
}

/// `n` positions `start, start+step, ...`; `n = round(2·half/step) + 1`
/// symmetric about zero.
pub fn symmetric_positions(half_width: f64, step: f64) -> Vec<f64> {
    let half_n = (half_width / step).round() as i64;
    (-half_n..=half_n).map(|i| i as f64 * step).collect()
}

/// Poisson means `background + peak·curve(x)` at each position.
pub fn expected_counts(curve: &PatternCurve, budget: &CountBudget, positions: &[f64]) -> Result<Vec<f64>, SynthError> {
    budget.validate()?;
    check_positions(positions)?;
    positions
        .iter()
        .map(|&x| {
            curve
                .value_at(x)
                .map(|v| budget.background() + budget.peak_expected * v)
                .ok_or(SynthError::OutsideDomain(x))
        })
        .collect()
}

/// Poisson draw with mean `lambda`; zero mean gives zero.
fn poisson<R: Rng>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("finite positive mean").sample(rng) as u64
}

/// Poisson counts from `curve`. Point `i` draws from stream `i` of `seed`.
pub fn synthesize(
    curve: &PatternCurve,
    budget: &CountBudget,
    positions: &[f64],
    duration_s: f64,
    seed: u64,
) -> Result<CoincidenceScan, SynthError> {
    let means = expected_counts(curve, budget, positions)?;
    let counts: Vec<u64> = means
        .par_iter()
        .enumerate()
        .map(|(i, &lambda)| poisson(lambda, &mut seed::rng(seed, i as u64)))
        .collect();
    let mut meta = Map::new();
    meta.insert("peak_expected".into(), budget.peak_expected.into());
    meta.insert("background_fraction".into(), budget.background_fraction.into());
    meta.insert("background_model".into(), "flat".into());
    CoincidenceScan::new(curve.kind(), positions.to_vec(), counts, duration_s, seed, meta)
}

/// One phase-space sample `(x₁, p̃₁, x₂, p̃₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub x1: f64,
    pub p1: f64,
    pub x2: f64,
    pub p2: f64,
}

struct CollectiveSampler {
    x_minus: Normal<f64>,
    x_plus: Normal<f64>,
    p_plus: Normal<f64>,
    p_minus: Normal<f64>,
}

impl CollectiveSampler {
    fn new(state: &DoubleGaussianState) -> Result<Self, SynthError> {
        if state.dimension() != 1 {
            return Err(SynthError::StateDimension);
        }
        let sm = state.sigma_minus();
        let sp = state.sigma_plus();
        let n = |s: f64| Normal::new(0.0, s).expect("positive width");
        Ok(Self {
            x_minus: n(sm),
            x_plus: n(sp),
            p_plus: n(1.0 / sp),
            p_minus: n(1.0 / sm),
        })
    }

    fn positions<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        let u = self.x_minus.sample(rng);
        let v = self.x_plus.sample(rng);
        ((v + u) / 2.0, (v - u) / 2.0)
    }

    fn point<R: Rng>(&self, rng: &mut R) -> PhasePoint {
        let (x1, x2) = self.positions(rng);
        let s = self.p_plus.sample(rng);
        let d = self.p_minus.sample(rng);
        PhasePoint {
            x1,
            p1: (s + d) / 2.0,
            x2,
            p2: (s - d) / 2.0,
        }
    }
}

fn chunks(n: usize) -> impl IndexedParallelIterator<Item = (u64, usize)> {
    let count = n.div_ceil(CHUNK);
    (0..count)
        .into_par_iter()
        .map(move |c| (c as u64, CHUNK.min(n - c * CHUNK)))
}

/// Draws from the (positive) Wigner function of the state. Chunk `c` of
/// [`CHUNK`] samples uses stream `c`.
pub fn wigner_sample(state: &DoubleGaussianState, n: usize, seed: u64) -> Result<Vec<PhasePoint>, SynthError> {
    if n == 0 {
        return Err(SynthError::NoSamples);
    }
    let sampler = CollectiveSampler::new(state)?;
    let parts: Vec<Vec<PhasePoint>> = chunks(n)
        .map(|(c, len)| {
            let mut rng = seed::rng(seed, c);
            (0..len).map(|_| sampler.point(&mut rng)).collect()
        })
        .collect();
    Ok(parts.concat())
}

/// Ray-level ghost image: a pair is kept with probability `|Γ(x₂)|²` and
/// binned at every position whose detector window contains `M·x₁`.
/// For a rectangular slit the window is `|M·x₁ − X| < w/2`; a Gaussian
/// detector accepts with probability `|T(M·x₁ − X)|²`; an open detector
/// bins to the nearest position.
pub fn mc_ghost_image(
    state: &DoubleGaussianState,
    aperture: &Aperture,
    detector: &Aperture,
    magnification: f64,
    positions: &[f64],
    n: usize,
    seed: u64,
) -> Result<CoincidenceScan, SynthError> {
    if n == 0 {
        return Err(SynthError::NoSamples);
    }
    if !(magnification.is_finite() && magnification != 0.0) {
        return Err(SynthError::Magnification);
    }
    check_positions(positions)?;
    if positions.is_empty() {
        return Err(SynthError::Positions);
    }
    let sampler = CollectiveSampler::new(state)?;
    let reach = match *detector {
        Aperture::RectSlit { width_mm } => width_mm / 2.0,
        Aperture::Open => 0.0,
        _ => 4.0 * detector.extent().unwrap_or(0.0),
    };
    let counts = chunks(n)
        .map(|(c, len)| {
            let mut rng = seed::rng(seed, c);
            let mut local = vec![0u64; positions.len()];
            for _ in 0..len {
                let (x1, x2) = sampler.positions(&mut rng);
                let keep: f64 = rng.random();
                if keep >= aperture.transmission(x2).powi(2) {
                    continue;
                }
                let y = magnification * x1;
                if let Aperture::Open = detector {
                    let i = positions.partition_point(|&p| p < y);
                    let nearest = match i {
                        0 => 0,
                        i if i == positions.len() => i - 1,
                        i if y - positions[i - 1] <= positions[i] - y => i - 1,
                        i => i,
                    };
                    local[nearest] += 1;
                    continue;
                }
                let lo = positions.partition_point(|&p| p <= y - reach);
                let hi = positions.partition_point(|&p| p < y + reach);
                for i in lo..hi {
                    let hit = match detector {
                        Aperture::RectSlit { .. } => true,
                        _ => rng.random::<f64>() < detector.transmission(y - positions[i]).powi(2),
                    };
                    if hit {
                        local[i] += 1;
                    }
                }
            }
            local
        })
        .reduce(
            || vec![0u64; positions.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let mut meta = Map::new();
    meta.insert("source".into(), "phase_space_monte_carlo".into());
    meta.insert("pairs".into(), n.into());
    CoincidenceScan::new(PatternKind::Image, positions.to_vec(), counts, 1.0, seed, meta)
}
