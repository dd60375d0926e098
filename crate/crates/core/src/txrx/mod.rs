//! Simulated coherent transmission: DP-16QAM transmitter, multi-span fiber
//! and a minimal receiver DSP chain.
//!
//! All frames are periodic. Shaping, propagation and compensation are
//! circular operations, so the frame edges carry no filter transients.

pub mod dataset;
pub mod fiber;
pub mod metrics;
pub mod prbs;
pub mod qam;
pub mod rrc;
pub mod spectral;

use serde::{Deserialize, Serialize};

pub use dataset::{make_dataset, Dataset, DatasetHeader};
pub use fiber::{cd_compensate, dbp, propagate, FiberParams, LinkConfig};
pub use metrics::{ber_count, q_factor, BerCount, EvalResult, QValue};

use crate::error::{config, Result};
use crate::C64;
use rrc::RrcFilter;
use spectral::resample_spectral;

/// Samples per symbol the receiver DSP runs at.
pub const DSP_SAMPLES_PER_SYMBOL: usize = 2;
/// Steps per span for the digital back-propagation baseline.
pub const DEFAULT_DBP_STEPS: usize = 3;

/// Sampled dual-polarization waveform with its transmitted symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalFrame {
    pub x: Vec<C64>,
    pub y: Vec<C64>,
    pub sample_rate_hz: f64,
    pub samples_per_symbol: usize,
    /// 4-bit 16-QAM indices per polarization.
    pub truth_x: Vec<u8>,
    pub truth_y: Vec<u8>,
    pub seed: u64,
    pub config_hash: String,
}

impl SignalFrame {
    pub fn symbol_count(&self) -> usize {
        self.truth_x.len()
    }

    /// Canonical little-endian bytes of every sample, for determinism checks.
    pub fn sample_bytes(&self) -> Vec<u8> {
        self.x
            .iter()
            .chain(&self.y)
            .flat_map(|v| [v.re.to_le_bytes(), v.im.to_le_bytes()])
            .flatten()
            .collect()
    }
}

/// Symbol-rate receiver output with ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolFrame {
    pub x: Vec<C64>,
    pub y: Vec<C64>,
    pub truth_x: Vec<u8>,
    pub truth_y: Vec<u8>,
    pub seed: u64,
    /// Complex gain divided out of each polarization.
    pub normalization: [C64; 2],
}

impl SymbolFrame {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Decides every symbol of both polarizations and scores them.
    pub fn evaluate(&self) -> Result<BerCount> {
        Ok(metrics::symbol_errors(&self.x, &self.truth_x)?
            .merge(metrics::symbol_errors(&self.y, &self.truth_y)?))
    }

    /// Scores only the symbols `range` of both polarizations.
    pub fn evaluate_range(&self, range: std::ops::Range<usize>) -> Result<BerCount> {
        Ok(
            metrics::symbol_errors(&self.x[range.clone()], &self.truth_x[range.clone()])?.merge(
                metrics::symbol_errors(&self.y[range.clone()], &self.truth_y[range])?,
            ),
        )
    }
}

/// Generates `n_symbols` per polarization from one PRBS-32 run (X takes the
/// first `4n` bits, Y the next `4n`), shapes them and scales the waveform to
/// the launch power.
pub fn transmit(link: &LinkConfig, n_symbols: usize, seed: u64) -> Result<SignalFrame> {
    link.validate()?;
    let bits = prbs::prbs32(seed, 8 * n_symbols)?;
    let (bx, by) = bits.split_at(4 * n_symbols);
    let truth_x = qam::bits_to_indices(bx)?;
    let truth_y = qam::bits_to_indices(by)?;
    let sps = link.samples_per_symbol_sim;
    let filter = RrcFilter::new(link.rrc_rolloff, sps, link.rrc_span_symbols * sps + 1)?;
    let sx: Vec<C64> = truth_x.iter().map(|&i| qam::point(i)).collect();
    let sy: Vec<C64> = truth_y.iter().map(|&i| qam::point(i)).collect();
    let mut x = filter.shape(&sx);
    let mut y = filter.shape(&sy);
    let p = fiber::mean_power(&x, &y);
    if p > 0.0 {
        let scale = (link.launch_power_w() / p).sqrt();
        x.iter_mut().chain(y.iter_mut()).for_each(|v| *v *= scale);
    }
    Ok(SignalFrame {
        x,
        y,
        sample_rate_hz: sps as f64 * link.symbol_rate_hz(),
        samples_per_symbol: sps,
        truth_x,
        truth_y,
        seed,
        config_hash: link.hash(),
    })
}

/// Transmits and propagates in one go.
pub fn simulate(link: &LinkConfig, n_symbols: usize, seed: u64) -> Result<SignalFrame> {
    fiber::propagate(&transmit(link, n_symbols, seed)?, link)
}

/// Which channel inverse the receiver applies before matched filtering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compensation {
    None,
    Cdc,
    Dbp { steps_per_span: usize },
}

/// Least-squares complex gain `r ~ c s`, using the known symbols.
fn complex_gain(received: &[C64], truth: &[u8]) -> C64 {
    let (num, den) =
        received
            .iter()
            .zip(truth)
            .fold((C64::new(0.0, 0.0), 0.0), |(n, d), (&r, &t)| {
                let s = qam::point(t);
                (n + r * s.conj(), d + s.norm_sqr())
            });
    if den == 0.0 || num.norm() == 0.0 {
        C64::new(1.0, 0.0)
    } else {
        num / den
    }
}

/// Receiver DSP: band-limit to 2 samples/symbol, undo dispersion (CDC or
/// DBP), matched RRC, symbol-rate decimation, then divide out one complex
/// gain per polarization so the constellation has its nominal scale.
pub fn receive(frame: &SignalFrame, link: &LinkConfig, comp: Compensation) -> Result<SymbolFrame> {
    let n_sym = frame.symbol_count();
    if frame.x.len() != n_sym * frame.samples_per_symbol || frame.y.len() != frame.x.len() {
        return Err(config("frame sample count does not match symbol count"));
    }
    if n_sym == 0 {
        return Ok(SymbolFrame {
            x: vec![],
            y: vec![],
            truth_x: vec![],
            truth_y: vec![],
            seed: frame.seed,
            normalization: [C64::new(1.0, 0.0); 2],
        });
    }
    let sps = DSP_SAMPLES_PER_SYMBOL;
    let fs = frame.sample_rate_hz * sps as f64 / frame.samples_per_symbol as f64;
    let mut x = resample_spectral(&frame.x, n_sym * sps);
    let mut y = resample_spectral(&frame.y, n_sym * sps);
    match comp {
        Compensation::None => {}
        Compensation::Cdc => {
            let acc = link.accumulated_dispersion();
            cd_compensate(&mut x, fs, acc);
            cd_compensate(&mut y, fs, acc);
        }
        Compensation::Dbp { steps_per_span } => dbp(&mut x, &mut y, fs, link, steps_per_span)?,
    }
    let filter = RrcFilter::new(link.rrc_rolloff, sps, link.rrc_span_symbols * sps + 1)?;
    let mut rx = rrc::decimate(&filter.matched(&x), sps, 0);
    let mut ry = rrc::decimate(&filter.matched(&y), sps, 0);
    let gx = complex_gain(&rx, &frame.truth_x);
    let gy = complex_gain(&ry, &frame.truth_y);
    rx.iter_mut().for_each(|v| *v /= gx);
    ry.iter_mut().for_each(|v| *v /= gy);
    Ok(SymbolFrame {
        x: rx,
        y: ry,
        truth_x: frame.truth_x.clone(),
        truth_y: frame.truth_y.clone(),
        seed: frame.seed,
        normalization: [gx, gy],
    })
}

/// Re-simulates a frame and runs it through the DBP receiver.
pub fn dbp_equalize(
    frame: &SignalFrame,
    link: &LinkConfig,
    steps_per_span: usize,
) -> Result<SymbolFrame> {
    receive(frame, link, Compensation::Dbp { steps_per_span })
}
