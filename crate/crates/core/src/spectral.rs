//! Fourier tools for periodic samples on the unit circle `θ ∈ [0, 1)`.
//!
//! Every function here treats its input as `N` uniform samples of a real
//! 1-periodic function, `θ_j = j / N`. For even `N` the Nyquist mode is kept as
//! a pure cosine so that derivative matrices stay real and symmetric.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;

/// Signed wavenumber of DFT bin `k` for an `n`-point transform.
pub fn wavenumber(k: usize, n: usize) -> i64 {
    if 2 * k <= n {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

pub fn forward(values: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Inverse transform, normalized, real part only.
pub fn inverse_real(coeffs: &[Complex64]) -> Vec<f64> {
    let n = coeffs.len();
    let mut buf = coeffs.to_vec();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Spectral derivative of order `order` (period 1).
pub fn derivative(values: &[f64], order: u32) -> Vec<f64> {
    let n = values.len();
    let mut c = forward(values);
    for (k, ck) in c.iter_mut().enumerate() {
        let w = wavenumber(k, n);
        if n % 2 == 0 && 2 * k == n && order % 2 == 1 {
            *ck = Complex64::new(0.0, 0.0);
            continue;
        }
        let factor = Complex64::new(0.0, 2.0 * PI * w as f64).powu(order);
        *ck *= factor;
    }
    inverse_real(&c)
}

/// Trigonometric interpolation onto `m` uniform samples.
pub fn resample(values: &[f64], m: usize) -> Vec<f64> {
    let n = values.len();
    if m == n {
        return values.to_vec();
    }
    let c = forward(values);
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    let half_n = n / 2;
    for (k, ck) in c.iter().enumerate() {
        let w = wavenumber(k, n);
        let mut coeff = *ck;
        // An even-length Nyquist bin is a cosine: split it between ±n/2.
        let nyquist = n % 2 == 0 && k == half_n;
        if nyquist {
            coeff *= 0.5;
        }
        let targets: &[i64] = if nyquist { &[1, -1] } else { &[1] };
        for &sign in targets {
            let wave = if nyquist { sign * w.abs() } else { w };
            if 2 * wave.unsigned_abs() as usize > m {
                continue;
            }
            if 2 * wave.unsigned_abs() as usize == m {
                // New Nyquist bin: fold both signs together.
                out[m / 2] += coeff;
                continue;
            }
            let idx = if wave >= 0 {
                wave as usize
            } else {
                (m as i64 + wave) as usize
            };
            out[idx] += coeff;
        }
    }
    let scale = m as f64 / n as f64;
    for o in out.iter_mut() {
        *o *= scale;
    }
    if m % 2 == 0 {
        // The folded Nyquist bin of a real signal must be real.
        out[m / 2] = Complex64::new(out[m / 2].re, 0.0);
    }
    inverse_real(&out)
}

/// Samples of `f(θ + delta)` at the original nodes.
pub fn shift(values: &[f64], delta: f64) -> Vec<f64> {
    let n = values.len();
    let mut c = forward(values);
    for (k, ck) in c.iter_mut().enumerate() {
        let w = wavenumber(k, n);
        if n % 2 == 0 && 2 * k == n {
            *ck *= (PI * n as f64 * delta).cos();
        } else {
            *ck *= Complex64::from_polar(1.0, 2.0 * PI * w as f64 * delta);
        }
    }
    inverse_real(&c)
}

/// Evaluate the trigonometric interpolant of the samples at `theta`.
pub fn eval_at(coeffs: &[Complex64], theta: f64) -> f64 {
    let n = coeffs.len();
    let mut acc = 0.0;
    for (k, ck) in coeffs.iter().enumerate() {
        let w = wavenumber(k, n);
        if n % 2 == 0 && 2 * k == n {
            acc += ck.re * (PI * n as f64 * theta).cos();
        } else {
            acc += (ck * Complex64::from_polar(1.0, 2.0 * PI * w as f64 * theta)).re;
        }
    }
    acc / n as f64
}

/// First-derivative matrix on `n` nodes (period 1). Antisymmetric.
pub fn diff1_matrix(n: usize) -> DMatrix<f64> {
    assert!(n % 2 == 0, "spectral matrices need an even node count");
    DMatrix::from_fn(n, n, |j, k| {
        if j == k {
            0.0
        } else {
            let d = j as f64 - k as f64;
            let sign = if (j + k) % 2 == 0 { 1.0 } else { -1.0 };
            PI * sign / (PI * d / n as f64).tan()
        }
    })
}

/// Second-derivative matrix on `n` nodes (period 1). Symmetric, Nyquist kept.
pub fn diff2_matrix(n: usize) -> DMatrix<f64> {
    assert!(n % 2 == 0, "spectral matrices need an even node count");
    let h = 2.0 * PI / n as f64;
    let scale = (2.0 * PI) * (2.0 * PI);
    DMatrix::from_fn(n, n, |j, k| {
        if j == k {
            scale * (-PI * PI / (3.0 * h * h) - 1.0 / 6.0)
        } else {
            let d = j as f64 - k as f64;
            let sign = if (j + k) % 2 == 0 { 1.0 } else { -1.0 };
            let s = (d * h / 2.0).sin();
            scale * (-sign / (2.0 * s * s))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..n).map(|j| f(j as f64 / n as f64)).collect()
    }

    #[test]
    fn derivative_of_trig_polynomial_is_exact() {
        let n = 32;
        let f = samples(n, |t| (2.0 * PI * 3.0 * t).sin() + 0.5 * (2.0 * PI * t).cos());
        let df = derivative(&f, 1);
        let expect = samples(n, |t| {
            6.0 * PI * (6.0 * PI * t).cos() - PI * (2.0 * PI * t).sin()
        });
        for (a, b) in df.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-11);
        }
        let d2 = derivative(&f, 2);
        let m = diff2_matrix(n) * nalgebra::DVector::from_vec(f.clone());
        for (a, b) in d2.iter().zip(m.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn diff_matrices_match_fft() {
        let n = 16;
        let f = samples(n, |t| (2.0 * PI * t).sin().exp());
        let d1 = diff1_matrix(n) * nalgebra::DVector::from_vec(f.clone());
        let fft = derivative(&f, 1);
        for (a, b) in d1.iter().zip(&fft) {
            assert!((a - b).abs() < 1e-10);
        }
        let d2 = diff2_matrix(n);
        assert!((&d2 - d2.transpose()).amax() < 1e-9);
    }

    #[test]
    fn resample_and_shift_are_exact_on_band_limited_signals() {
        let f = |t: f64| (2.0 * PI * t).cos() + 0.3 * (4.0 * PI * t).sin();
        let coarse = samples(8, f);
        let fine = resample(&coarse, 64);
        for (j, v) in fine.iter().enumerate() {
            assert!((v - f(j as f64 / 64.0)).abs() < 1e-12);
        }
        let back = resample(&fine, 8);
        for (a, b) in back.iter().zip(&coarse) {
            assert!((a - b).abs() < 1e-12);
        }
        let shifted = shift(&coarse, 0.0371);
        for (j, v) in shifted.iter().enumerate() {
            assert!((v - f(j as f64 / 8.0 + 0.0371)).abs() < 1e-12);
        }
        let c = forward(&coarse);
        assert!((eval_at(&c, 0.123) - f(0.123)).abs() < 1e-12);
    }
}
