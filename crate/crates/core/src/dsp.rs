//! Shared DSP building blocks: Kaiser windows, windowed-sinc kernels,
//! fractional delays and FFT correlation.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Zeroth-order modified Bessel function of the first kind (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser window evaluated at `x ∈ [-1, 1]` (0 outside).
pub fn kaiser(x: f64, beta: f64) -> f64 {
    if x.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - x * x).sqrt()) / bessel_i0(beta)
}

pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

const DELAY_HALF_TAPS: isize = 32;
const DELAY_BETA: f64 = 8.0;

/// Adds `gain · src` delayed by `delay` samples (may be fractional) into `dst`.
///
/// Band-limited interpolation with a 64-tap Kaiser-windowed sinc; integer
/// delays reduce to an exact shift. Contributions past the end of `dst` are
/// dropped.
pub fn add_delayed(dst: &mut [f64], src: &[f64], delay: f64, gain: f64) {
    let base = delay.floor();
    let frac = delay - base;
    let base = base as isize;
    if frac == 0.0 {
        for (m, &s) in src.iter().enumerate() {
            let n = base + m as isize;
            if n >= 0 && (n as usize) < dst.len() {
                dst[n as usize] += gain * s;
            }
        }
        return;
    }
    // kernel[k] weights src[m] into dst[m + base + k]
    let taps: Vec<(isize, f64)> = (-DELAY_HALF_TAPS + 1..=DELAY_HALF_TAPS)
        .map(|k| {
            let x = k as f64 - frac;
            (
                k,
                gain * sinc(x) * kaiser(x / DELAY_HALF_TAPS as f64, DELAY_BETA),
            )
        })
        .collect();
    for (m, &s) in src.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        for &(k, h) in &taps {
            let n = base + m as isize + k;
            if n >= 0 && (n as usize) < dst.len() {
                dst[n as usize] += h * s;
            }
        }
    }
}

/// `out[k] = Σ_m template[m] · signal[k + m]` for `k` in `0..signal.len()`,
/// treating samples past the end of `signal` as zero.
pub fn cross_correlate(signal: &[f64], template: &[f64]) -> Vec<f64> {
    if signal.is_empty() || template.is_empty() {
        return vec![0.0; signal.len()];
    }
    let n = (signal.len() + template.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut a: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    a.resize(n, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = template.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    b.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y.conj();
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    a.iter().take(signal.len()).map(|z| z.re * scale).collect()
}

/// Linear-phase FIR convolution, output aligned to the input (`y[n] = Σ h[k] x[n-k]`).
pub fn fir_filter(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (n, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, h) in taps.iter().enumerate().take(n + 1) {
            acc += h * x[n - k];
        }
        *out = acc;
    }
    y
}

/// Magnitude of the frequency response of `taps` at `f / fs`.
pub fn fir_response(taps: &[f64], normalized_freq: f64) -> f64 {
    let w = 2.0 * PI * normalized_freq;
    let (mut re, mut im) = (0.0, 0.0);
    for (k, h) in taps.iter().enumerate() {
        re += h * (w * k as f64).cos();
        im -= h * (w * k as f64).sin();
    }
    (re * re + im * im).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_reference_values() {
        assert_eq!(bessel_i0(0.0), 1.0);
        // I0(1) = 1.2660658777520082, I0(5) = 27.239871823604442
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_2).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_442).abs() < 1e-11);
    }

    #[test]
    fn correlation_matches_direct_sum() {
        let signal: Vec<f64> = (0..300)
            .map(|i| ((i * 37 % 101) as f64 - 50.0) / 50.0)
            .collect();
        let template: Vec<f64> = (0..41).map(|i| (i as f64 * 0.3).sin()).collect();
        let fast = cross_correlate(&signal, &template);
        for (k, v) in fast.iter().enumerate() {
            let direct: f64 = template
                .iter()
                .enumerate()
                .filter(|(m, _)| k + m < signal.len())
                .map(|(m, t)| t * signal[k + m])
                .sum();
            assert!((v - direct).abs() < 1e-10, "lag {k}");
        }
    }

    #[test]
    fn integer_delay_is_exact_shift() {
        let src = [1.0, -2.0, 3.0];
        let mut dst = vec![0.0; 8];
        add_delayed(&mut dst, &src, 4.0, 0.5);
        assert_eq!(dst, vec![0.0, 0.0, 0.0, 0.0, 0.5, -1.0, 1.5, 0.0]);
    }

    #[test]
    fn fractional_delay_of_band_limited_tone() {
        let f = 0.12; // cycles per sample
        let src: Vec<f64> = (0..400).map(|n| (2.0 * PI * f * n as f64).sin()).collect();
        let delay = 37.3;
        let mut dst = vec![0.0; 500];
        add_delayed(&mut dst, &src, delay, 1.0);
        for (n, got) in dst.iter().enumerate().take(380).skip(120) {
            let expected = (2.0 * PI * f * (n as f64 - delay)).sin();
            assert!((got - expected).abs() < 1e-4, "n={n}");
        }
    }
}
