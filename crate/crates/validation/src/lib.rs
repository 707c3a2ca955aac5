//! Independent oracles and bookkeeping for the acceptance suite.

use std::fmt::Write as _;
use std::process::ExitCode;

use eprlab::optics::Aperture;
use eprlab::state::DoubleGaussianState;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Collects one PASS/FAIL line per criterion.
#[derive(Debug, Default)]
pub struct Report {
    lines: Vec<(String, bool, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records and prints one criterion.
    pub fn record(&mut self, id: &str, pass: bool, detail: impl Into<String>) {
        let detail = detail.into();
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id.to_string(), pass, detail));
    }

    pub fn failures(&self) -> Vec<&str> {
        self.lines.iter().filter(|l| !l.1).map(|l| l.0.as_str()).collect()
    }

    pub fn summary(&self) -> String {
        let failed = self.failures();
        let mut s = String::new();
        let _ = write!(s, "{}/{} criteria passed", self.lines.len() - failed.len(), self.lines.len());
        if !failed.is_empty() {
            let _ = write!(s, "; failed: {}", failed.join(", "));
        }
        s
    }

    pub fn exit_code(&self) -> ExitCode {
        if self.failures().is_empty() {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Upper-tail probability of a chi-square statistic.
pub fn chi_square_p_value(statistic: f64, dof: usize) -> f64 {
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    dist.sf(statistic)
}

/// Pearson statistic and degrees of freedom over bins with expectation of
/// at least `min_expected`. `constraints` is subtracted from the bin count.
pub fn pearson(observed: &[f64], expected: &[f64], min_expected: f64, constraints: usize) -> (f64, usize) {
    let used: Vec<(f64, f64)> = observed
        .iter()
        .zip(expected)
        .filter(|(_, e)| **e >= min_expected)
        .map(|(o, e)| (*o, *e))
        .collect();
    let stat = used.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    (stat, used.len() - constraints)
}

pub fn relative_l2(values: &[Complex64], reference: &[Complex64]) -> f64 {
    let num: f64 = values.iter().zip(reference).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = reference.iter().map(|b| b.norm_sqr()).sum();
    (num / den).sqrt()
}

/// Two-dimensional FFT of a dimension-1 position amplitude on an `n × n`
/// grid over `±half_width`, compared with the analytic momentum amplitude
/// at the FFT frequencies. Returns the relative L2 error.
///
/// Convention: `ψ̃(p) = (1/2π) ∫∫ e^{−i(p_a x_a + p_b x_b)} ψ(x) dx`.
/// With `x_j = −L + j·h`, `p_k = (k − n/2)·2π/(n·h)` and `n/2` even, the sum
/// reduces to `(−1)^{j+k}` modulated DFTs.
pub fn fourier_duality_error(state: &DoubleGaussianState, n: usize, half_width: f64) -> f64 {
    assert!(n % 4 == 0, "n/2 must be even");
    let h = 2.0 * half_width / n as f64;
    let x = |j: usize| -half_width + j as f64 * h;
    let sign = |j: usize| if j % 2 == 0 { 1.0 } else { -1.0 };

    let mut data: Vec<Complex64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (ja, jb) = (idx / n, idx % n);
            let psi = state.position_wavefunction(&[x(ja)], &[x(jb)]).expect("dimension 1");
            Complex64::new(sign(ja) * sign(jb) * psi, 0.0)
        })
        .collect();
    fft_rows(&mut data, n);
    transpose(&mut data, n);
    fft_rows(&mut data, n);
    transpose(&mut data, n);

    let dp = 2.0 * std::f64::consts::PI / (n as f64 * h);
    let p = |k: usize| (k as f64 - (n / 2) as f64) * dp;
    let scale = h * h / (2.0 * std::f64::consts::PI);
    let numeric: Vec<Complex64> = data
        .par_iter()
        .enumerate()
        .map(|(idx, v)| v * (scale * sign(idx / n) * sign(idx % n)))
        .collect();
    let exact: Vec<Complex64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let psi = state.momentum_wavefunction(&[p(idx / n)], &[p(idx % n)]).expect("dimension 1");
            Complex64::new(psi, 0.0)
        })
        .collect();
    relative_l2(&numeric, &exact)
}

fn fft_rows(data: &mut [Complex64], n: usize) {
    let fft = FftPlanner::new().plan_fft_forward(n);
    data.par_chunks_mut(n).for_each(|row| fft.process(row));
}

fn transpose(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

/// Riemann sum of `|f|²` over a 4-D cube `±half_width` with `n` points per
/// axis. Exact to rounding for Gaussians well inside the cube and well
/// resolved by the grid.
pub fn norm_4d<F: Fn([f64; 4]) -> f64 + Sync>(f: F, n: usize, half_width: f64) -> f64 {
    let h = 2.0 * half_width / n as f64;
    let c = |i: usize| -half_width + (i as f64 + 0.5) * h;
    let sum: f64 = (0..n * n)
        .into_par_iter()
        .map(|outer| {
            let (i, j) = (outer / n, outer % n);
            let mut acc = 0.0;
            for k in 0..n {
                for l in 0..n {
                    acc += f([c(i), c(j), c(k), c(l)]).powi(2);
                }
            }
            acc
        })
        .sum();
    sum * h.powi(4)
}

/// Composite Simpson rule.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels + panels % 2;
    let h = (b - a) / panels as f64;
    let inner: f64 = (1..panels)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

/// Probability that a pair passes the object (`|Γ(x₂)|²`) and lands with
/// `x₁` in `[lo, hi)`, from the Gaussian factorization
/// `|ψ|² = N(x₂; 0, (σ₊²+σ₋²)/4)·N(x₁; c·x₂, σ₊²σ₋²/(σ₊²+σ₋²))`,
/// `c = (σ₊²−σ₋²)/(σ₊²+σ₋²)`.
pub fn incoherent_bin_probability(state: &DoubleGaussianState, aperture: &Aperture, lo: f64, hi: f64) -> f64 {
    let sp2 = state.sigma_plus().powi(2);
    let sm2 = state.sigma_minus().powi(2);
    let c = (sp2 - sm2) / (sp2 + sm2);
    let cond_sd = (sp2 * sm2 / (sp2 + sm2)).sqrt();
    let marg_sd = (sp2 + sm2).sqrt() / 2.0;
    let marginal = Normal::new(0.0, marg_sd).expect("positive width");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let integrand = |x2: f64| {
        let t = aperture.transmission(x2);
        let window = unit.cdf((hi - c * x2) / cond_sd) - unit.cdf((lo - c * x2) / cond_sd);
        statrs::distribution::Continuous::pdf(&marginal, x2) * t * t * window
    };
    aperture
        .smooth_intervals(10.0 * marg_sd)
        .into_iter()
        .map(|(a, b)| simpson(integrand, a, b, 4000))
        .sum()
}
