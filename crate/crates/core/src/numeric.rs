//! Quadrature, convolution and interpolation on uniform grids.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Composite Simpson rule over `[a, b]` with `panels` (rounded up to even).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels.max(2).next_multiple_of(2);
    let h = (b - a) / n as f64;
    let mut odd = 0.0;
    let mut even = 0.0;
    for i in 1..n {
        let v = f(a + i as f64 * h);
        if i % 2 == 1 {
            odd += v;
        } else {
            even += v;
        }
    }
    h / 3.0 * (f(a) + f(b) + 4.0 * odd + 2.0 * even)
}

/// Simpson estimate of `∫ g(x)·exp(−i·k·x) dx` over `[a, b]`.
///
/// The phase is advanced by a complex rotation per node so only `g` is
/// evaluated inside the loop.
pub fn simpson_fourier<F: Fn(f64) -> f64>(g: F, k: f64, a: f64, b: f64, panels: usize) -> Complex64 {
    let n = panels.max(2).next_multiple_of(2);
    let h = (b - a) / n as f64;
    let step = Complex64::from_polar(1.0, -k * h);
    let mut phase = Complex64::from_polar(1.0, -k * a);
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..=n {
        // Re-anchor periodically so rounding in the rotation does not accumulate.
        if i > 0 && i % 256 == 0 {
            phase = Complex64::from_polar(1.0, -k * (a + i as f64 * h));
        }
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        // The last node is exactly `b`: integrands may be discontinuous just beyond it.
        let x = if i == n { b } else { a + i as f64 * h };
        acc += phase * (w * g(x));
        phase *= step;
    }
    acc * (h / 3.0)
}

/// "Same"-size linear convolution with a centred odd-length kernel, zero
/// padded at the boundaries.
pub fn convolve_same(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    assert!(kernel.len() % 2 == 1, "kernel must have odd length");
    let n = signal.len();
    let half = kernel.len() / 2;
    if kernel.len() == 1 {
        return signal.iter().map(|v| v * kernel[0]).collect();
    }
    if kernel.len() <= 64 || n <= 64 {
        return (0..n)
            .map(|i| {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let j = i as isize + half as isize - k as isize;
                    if j >= 0 && (j as usize) < n {
                        acc += w * signal[j as usize];
                    }
                }
                acc
            })
            .collect();
    }
    let size = (n + kernel.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);
    let mut a: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(size, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = kernel.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(size, Complex64::new(0.0, 0.0));
    forward.process(&mut a);
    forward.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inverse.process(&mut a);
    let scale = 1.0 / size as f64;
    a[half..half + n].iter().map(|c| c.re * scale).collect()
}

/// Catmull–Rom interpolation of samples `values` at `start + i·step`.
/// Returns `None` outside `[start, start + (len−1)·step]`.
pub fn cubic_interpolate(values: &[f64], start: f64, step: f64, x: f64) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let t = (x - start) / step;
    let last = (n - 1) as f64;
    if !(t >= -1e-9 && t <= last + 1e-9) {
        return None;
    }
    let t = t.clamp(0.0, last);
    if t.fract() == 0.0 {
        return Some(values[t as usize]);
    }
    let i = (t.floor() as usize).min(n - 2);
    let u = t - i as f64;
    let p1 = values[i];
    let p2 = values[i + 1];
    let p0 = if i > 0 { values[i - 1] } else { 2.0 * p1 - p2 };
    let p3 = if i + 2 < n { values[i + 2] } else { 2.0 * p2 - p1 };
    let u2 = u * u;
    let u3 = u2 * u;
    Some(
        0.5 * (2.0 * p1
            + (-p0 + p2) * u
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u2
            + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u3),
    )
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
