//! Root-raised-cosine pulse shaping and matched filtering.
//!
//! Frames are periodic, so both filters are applied circularly and the
//! centered impulse response adds no delay: symbol `n` sits at sample `n * sps`.

use std::f64::consts::PI;

use super::spectral::circular_convolve;
use crate::error::{config, Result};
use crate::C64;

/// Unit-energy RRC impulse response, `taps` samples centered on the middle tap.
pub fn rrc_taps(rolloff: f64, sps: usize, taps: usize) -> Result<Vec<f64>> {
    if taps.is_multiple_of(2) {
        return Err(config(format!("RRC tap count must be odd, got {taps}")));
    }
    if sps < 2 {
        return Err(config(format!("RRC needs sps >= 2, got {sps}")));
    }
    if !(0.0..=1.0).contains(&rolloff) {
        return Err(config(format!(
            "RRC roll-off must be in [0, 1], got {rolloff}"
        )));
    }
    let b = rolloff;
    let mid = (taps / 2) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let t = (i as f64 - mid) / sps as f64;
            if t == 0.0 {
                1.0 - b + 4.0 * b / PI
            } else if b > 0.0 && ((4.0 * b * t).abs() - 1.0).abs() < 1e-9 {
                b / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin()
                        + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
            } else {
                ((PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos())
                    / (PI * t * (1.0 - (4.0 * b * t).powi(2)))
            }
        })
        .collect();
    let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    h.iter_mut().for_each(|v| *v /= norm);
    Ok(h)
}

#[derive(Clone, Debug)]
pub struct RrcFilter {
    pub rolloff: f64,
    pub sps: usize,
    pub taps: Vec<f64>,
}

impl RrcFilter {
    pub fn new(rolloff: f64, sps: usize, taps: usize) -> Result<Self> {
        Ok(RrcFilter {
            rolloff,
            sps,
            taps: rrc_taps(rolloff, sps, taps)?,
        })
    }

    /// Upsamples by zero insertion and shapes.
    pub fn shape(&self, symbols: &[C64]) -> Vec<C64> {
        let mut up = vec![C64::new(0.0, 0.0); symbols.len() * self.sps];
        for (i, &s) in symbols.iter().enumerate() {
            up[i * self.sps] = s;
        }
        circular_convolve(&up, &self.taps)
    }

    /// The RRC response is real and even, so the matched filter is itself.
    pub fn matched(&self, waveform: &[C64]) -> Vec<C64> {
        circular_convolve(waveform, &self.taps)
    }
}

pub fn rrc_shape(symbols: &[C64], rolloff: f64, sps: usize, taps: usize) -> Result<Vec<C64>> {
    Ok(RrcFilter::new(rolloff, sps, taps)?.shape(symbols))
}

pub fn rrc_matched(waveform: &[C64], rolloff: f64, sps: usize, taps: usize) -> Result<Vec<C64>> {
    Ok(RrcFilter::new(rolloff, sps, taps)?.matched(waveform))
}

/// Every `factor`-th sample starting at `offset`.
pub fn decimate(samples: &[C64], factor: usize, offset: usize) -> Vec<C64> {
    samples
        .iter()
        .skip(offset)
        .step_by(factor)
        .copied()
        .collect()
}
