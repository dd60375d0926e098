//! FFT plumbing for periodic frames.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::C64;

/// Forward/inverse plan pair for one transform length. The inverse is
/// normalized so `inverse(forward(x)) == x`.
pub struct Fourier {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<C64>,
}

impl Fourier {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Fourier {
            n,
            forward,
            inverse,
            scratch: vec![C64::new(0.0, 0.0); scratch_len],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&mut self, data: &mut [C64]) {
        self.forward.process_with_scratch(data, &mut self.scratch);
    }

    pub fn inverse(&mut self, data: &mut [C64]) {
        self.inverse.process_with_scratch(data, &mut self.scratch);
        let scale = 1.0 / self.n as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }

    /// Multiplies the spectrum of `data` by `response` (FFT bin order).
    pub fn filter(&mut self, data: &mut [C64], response: &[C64]) {
        self.forward(data);
        data.iter_mut().zip(response).for_each(|(d, r)| *d *= r);
        self.inverse(data);
    }
}

/// Angular frequency of every FFT bin for sample rate `fs`.
pub fn omega_grid(n: usize, fs: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let k = if k < n.div_ceil(2) {
                k as f64
            } else {
                k as f64 - n as f64
            };
            2.0 * PI * k * fs / n as f64
        })
        .collect()
}

/// Circular convolution with a real FIR centered on its middle tap, so a
/// symmetric filter introduces no delay. Taps longer than the frame wrap.
pub fn circular_convolve(signal: &[C64], taps: &[f64]) -> Vec<C64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let center = (taps.len() / 2) as isize;
    let mut kernel = vec![C64::new(0.0, 0.0); n];
    for (j, &h) in taps.iter().enumerate() {
        let idx = (j as isize - center).rem_euclid(n as isize) as usize;
        kernel[idx] += h;
    }
    let mut fourier = Fourier::new(n);
    fourier.forward(&mut kernel);
    let mut out = signal.to_vec();
    fourier.filter(&mut out, &kernel);
    out
}

/// Band-limited resampling by keeping (or zero-padding) the central part of
/// the spectrum. `to_len` must be even or equal to `from_len`.
pub fn resample_spectral(signal: &[C64], to_len: usize) -> Vec<C64> {
    let n = signal.len();
    if to_len == n {
        return signal.to_vec();
    }
    let mut spec = signal.to_vec();
    Fourier::new(n).forward(&mut spec);
    let mut out = vec![C64::new(0.0, 0.0); to_len];
    let half = n.min(to_len) / 2;
    out[..half].copy_from_slice(&spec[..half]);
    for k in 1..half {
        out[to_len - k] = spec[n - k];
    }
    Fourier::new(to_len).inverse(&mut out);
    let scale = to_len as f64 / n as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circular_convolution_matches_direct_sum() {
        let x: Vec<C64> = (0..37)
            .map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let h = [0.25, -0.5, 1.0, 0.75, 0.1];
        let y = circular_convolve(&x, &h);
        for (i, yi) in y.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for (j, &hj) in h.iter().enumerate() {
                let idx = (i as isize + 2 - j as isize).rem_euclid(37) as usize;
                acc += x[idx] * hj;
            }
            assert!((acc - yi).norm() < 1e-12);
        }
    }

    #[test]
    fn resampling_preserves_band_limited_tone() {
        let n = 64;
        let tone = |t: f64| C64::from_polar(1.0, 2.0 * PI * 3.0 * t);
        let x: Vec<C64> = (0..n).map(|i| tone(i as f64 / n as f64)).collect();
        let y = resample_spectral(&x, 16);
        for (i, v) in y.iter().enumerate() {
            assert!((v - tone(i as f64 / 16.0)).norm() < 1e-12);
        }
    }
}
