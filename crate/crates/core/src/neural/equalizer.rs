//! Sliding-window equalizer: two networks of one architecture, one per
//! polarization target, both fed the same dual-polarization window.
//!
//! Model file layout (see [`crate::format`]): magic `EQLABNN1`, JSON
//! [`ModelHeader`], then the X-target network's parameters followed by the
//! Y-target network's, each as little-endian f64 in layer order with the
//! per-layer layout documented in the layer kernels.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::{Architecture, INPUT_FEATURES, OUTPUT_WIDTH};
use super::network::Network;
use super::tensor::Batch;
use super::train::{train, SampleSource, TrainConfig, TrainReport};
use crate::complexity::rmps_model;
use crate::error::{config, Error, Result};
use crate::format::{self, PayloadReader, PayloadWriter};
use crate::txrx::metrics::{symbol_errors, BerCount};
use crate::txrx::{qam, SymbolFrame};
use crate::C64;

pub const MODEL_MAGIC: &[u8; 8] = b"EQLABNN1";
const INFER_CHUNK: usize = 2048;

/// `[N, 4]` rows of `(Re x, Im x, Re y, Im y)` times `scale`.
pub fn window_features(frame: &SymbolFrame, scale: f64) -> Vec<f64> {
    frame
        .x
        .iter()
        .zip(&frame.y)
        .flat_map(|(a, b)| [a.re * scale, a.im * scale, b.re * scale, b.im * scale])
        .collect()
}

/// Scale that brings the average per-feature power of a frame to one half,
/// i.e. unit average power per complex symbol.
pub fn unit_power_scale(frame: &SymbolFrame) -> f64 {
    let n = frame.len();
    if n == 0 {
        return 1.0;
    }
    let p: f64 = frame
        .x
        .iter()
        .chain(&frame.y)
        .map(|v| v.norm_sqr())
        .sum::<f64>()
        / (2 * n) as f64;
    if p > 0.0 {
        1.0 / p.sqrt()
    } else {
        1.0
    }
}

/// Centers that have a full window in a frame of `len` symbols.
pub fn scored_centers(len: usize, memory: usize) -> Range<usize> {
    let half = memory / 2;
    if len < memory {
        half..half
    } else {
        half..len - half
    }
}

/// Windows over a feature buffer with one polarization's symbols as targets.
pub struct WindowSet<'a> {
    features: &'a [f64],
    targets: Vec<f64>,
    memory: usize,
    first: usize,
}

impl<'a> WindowSet<'a> {
    pub fn new(features: &'a [f64], truth: &[u8], memory: usize) -> Self {
        let centers = scored_centers(truth.len(), memory);
        let first = centers.start;
        let targets = truth[centers]
            .iter()
            .flat_map(|&t| {
                let p = qam::point(t);
                [p.re, p.im]
            })
            .collect();
        WindowSet {
            features,
            targets,
            memory,
            first,
        }
    }
}

impl SampleSource for WindowSet<'_> {
    fn len(&self) -> usize {
        self.targets.len() / OUTPUT_WIDTH
    }

    fn input_shape(&self) -> (usize, usize) {
        (self.memory, INPUT_FEATURES)
    }

    fn target_width(&self) -> usize {
        OUTPUT_WIDTH
    }

    fn gather(&self, idx: &[usize], input: &mut Vec<f64>, target: &mut Vec<f64>) {
        let w = self.memory * INPUT_FEATURES;
        for &i in idx {
            // sample i is centered on symbol first + i, so its window starts at i
            input.extend_from_slice(&self.features[i * INPUT_FEATURES..][..w]);
            target.extend_from_slice(&self.targets[i * OUTPUT_WIDTH..][..OUTPUT_WIDTH]);
        }
        debug_assert!(self.first == self.memory / 2);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format: String,
    pub version: String,
    pub architecture: Architecture,
    pub memory: usize,
    /// Multiplier applied to received symbols before they enter the window.
    pub input_scale: f64,
    /// Multiplier applied to network outputs to reach constellation scale.
    pub output_scale: f64,
    pub seed: u64,
    pub train: TrainConfig,
    pub rmps: u64,
    pub params_per_network: usize,
    #[serde(default)]
    pub manifest_hash: Option<String>,
}

/// Equalized center symbols of a frame with their ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Equalized {
    pub x: Vec<C64>,
    pub y: Vec<C64>,
    pub truth_x: Vec<u8>,
    pub truth_y: Vec<u8>,
    /// Frame index of the first equalized symbol.
    pub first: usize,
}

impl Equalized {
    pub fn range(&self) -> Range<usize> {
        self.first..self.first + self.x.len()
    }

    pub fn count(&self) -> Result<BerCount> {
        Ok(symbol_errors(&self.x, &self.truth_x)?.merge(symbol_errors(&self.y, &self.truth_y)?))
    }
}

#[derive(Clone, Debug)]
pub struct Equalizer {
    pub header: ModelHeader,
    /// Networks recovering the X and the Y polarization.
    pub nets: [Network; 2],
}

impl Equalizer {
    /// Randomly initialized twin networks for `arch`.
    pub fn new(arch: Architecture, memory: usize, seed: u64) -> Result<Self> {
        if memory == 0 || memory.is_multiple_of(2) {
            return Err(config(format!("memory {memory} must be odd")));
        }
        let spec = arch.model_spec(memory)?;
        let rmps = rmps_model(&spec)?.total_rmps;
        let nx = Network::new(spec.clone(), crate::derive_seed(seed, 0))?;
        let ny = Network::new(spec, crate::derive_seed(seed, 1))?;
        Ok(Equalizer {
            header: ModelHeader {
                format: "eqlab-model".into(),
                version: format::format_version(),
                architecture: arch,
                memory,
                input_scale: 1.0,
                output_scale: 1.0,
                seed,
                train: TrainConfig::default(),
                rmps,
                params_per_network: nx.params().len(),
                manifest_hash: None,
            },
            nets: [nx, ny],
        })
    }

    /// Trains both networks on every full window of `frame`.
    pub fn fit(
        arch: Architecture,
        memory: usize,
        frame: &SymbolFrame,
        cfg: &TrainConfig,
    ) -> Result<(Self, [TrainReport; 2])> {
        cfg.validate()?;
        let mut eq = Self::new(arch, memory, cfg.seed)?;
        if frame.len() < memory {
            return Err(config(format!(
                "training frame has {} symbols, fewer than memory {memory}",
                frame.len()
            )));
        }
        eq.header.train = cfg.clone();
        eq.header.input_scale = unit_power_scale(frame);
        let feats = window_features(frame, eq.header.input_scale);
        let sx = WindowSet::new(&feats, &frame.truth_x, memory);
        let sy = WindowSet::new(&feats, &frame.truth_y, memory);
        let cx = TrainConfig {
            seed: crate::derive_seed(cfg.seed, 2),
            ..cfg.clone()
        };
        let cy = TrainConfig {
            seed: crate::derive_seed(cfg.seed, 3),
            ..cfg.clone()
        };
        let [mut nx, mut ny] = eq.nets;
        let (rx, ry) = rayon::join(|| train(&mut nx, &sx, &cx), || train(&mut ny, &sy, &cy));
        eq.nets = [nx, ny];
        Ok((eq, [rx?, ry?]))
    }

    pub fn memory(&self) -> usize {
        self.header.memory
    }

    pub fn rmps(&self) -> u64 {
        self.header.rmps
    }

    pub fn params(&self) -> usize {
        2 * self.header.params_per_network
    }

    pub fn set_intra_op_threads(&mut self, threads: usize) {
        self.nets
            .iter_mut()
            .for_each(|n| n.set_intra_op_threads(threads));
    }

    /// Recovers every symbol that has a full window; edge symbols are dropped.
    pub fn equalize(&self, frame: &SymbolFrame) -> Result<Equalized> {
        let m = self.memory();
        if frame.len() < m {
            return Err(config(format!(
                "frame has {} symbols, fewer than memory {m}",
                frame.len()
            )));
        }
        let feats = window_features(frame, self.header.input_scale);
        let centers = scored_centers(frame.len(), m);
        let count = centers.len();
        let w = m * INPUT_FEATURES;
        let mut outs = [Vec::with_capacity(count), Vec::with_capacity(count)];
        let mut start = 0;
        while start < count {
            let n = INFER_CHUNK.min(count - start);
            let mut data = Vec::with_capacity(n * w);
            for i in start..start + n {
                data.extend_from_slice(&feats[i * INPUT_FEATURES..][..w]);
            }
            let batch = Batch::new(data, n, m, INPUT_FEATURES)?;
            for (net, out) in self.nets.iter().zip(outs.iter_mut()) {
                let y = net.forward(&batch)?;
                if y.data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical(
                        "equalizer produced a non-finite output".into(),
                    ));
                }
                let s = self.header.output_scale;
                out.extend(
                    y.data
                        .chunks_exact(OUTPUT_WIDTH)
                        .map(|c| C64::new(c[0] * s, c[1] * s)),
                );
            }
            start += n;
        }
        let [x, y] = outs;
        Ok(Equalized {
            x,
            y,
            truth_x: frame.truth_x[centers.clone()].to_vec(),
            truth_y: frame.truth_y[centers.clone()].to_vec(),
            first: centers.start,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        format::write_container(&mut out, MODEL_MAGIC, &self.header, &self.payload())?;
        Ok(out)
    }

    fn payload(&self) -> Vec<u8> {
        let mut p = PayloadWriter::default();
        for net in &self.nets {
            p.f64s(net.params().iter().copied());
        }
        p.0
    }

    fn from_parts(header: ModelHeader, payload: &[u8]) -> Result<Self> {
        format::check_version(&header.version)?;
        let mut eq = Self::new(header.architecture, header.memory, header.seed)?;
        if eq.header.params_per_network != header.params_per_network {
            return Err(Error::Format(
                "parameter count does not match the architecture".into(),
            ));
        }
        let mut r = PayloadReader::new(payload);
        for net in eq.nets.iter_mut() {
            let n = net.params().len();
            net.set_params(r.f64s(n)?)?;
        }
        r.finish()?;
        eq.header = header;
        Ok(eq)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = format::read_container(bytes, MODEL_MAGIC)?;
        Self::from_parts(header, &payload)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        format::write_container(
            BufWriter::new(File::create(path)?),
            MODEL_MAGIC,
            &self.header,
            &self.payload(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, payload) =
            format::read_container(BufReader::new(File::open(path)?), MODEL_MAGIC)?;
        Self::from_parts(header, &payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(n: usize) -> SymbolFrame {
        let truth_x: Vec<u8> = (0..n).map(|i| (i * 7 % 16) as u8).collect();
        let truth_y: Vec<u8> = (0..n).map(|i| (i * 5 % 16) as u8).collect();
        SymbolFrame {
            x: truth_x.iter().map(|&t| qam::point(t)).collect(),
            y: truth_y.iter().map(|&t| qam::point(t)).collect(),
            truth_x,
            truth_y,
            seed: 1,
            normalization: [C64::new(1.0, 0.0); 2],
        }
    }

    #[test]
    fn windows_line_up_with_centers() {
        let f = frame(20);
        let feats = window_features(&f, 1.0);
        let set = WindowSet::new(&feats, &f.truth_x, 5);
        assert_eq!(set.len(), 16);
        let (x, t) = set.batch(&[3]);
        // center of window 3 is symbol 5, which sits at row 2 of the window
        let p = qam::point(f.truth_x[5]);
        assert_eq!(&x.data[8..10], &[p.re, p.im]);
        assert_eq!(t, vec![p.re, p.im]);
    }

    #[test]
    fn short_frame_rejected() {
        let eq = Equalizer::new(
            Architecture::Mlp {
                n1: 2,
                n2: 2,
                n3: 2,
            },
            5,
            1,
        )
        .unwrap();
        assert!(eq.equalize(&frame(4)).is_err());
        assert_eq!(eq.equalize(&frame(5)).unwrap().x.len(), 1);
    }

    #[test]
    fn model_round_trip_and_determinism() {
        let eq = Equalizer::new(
            Architecture::CnnBilstm {
                filters: 2,
                kernel: 3,
                hidden: 2,
            },
            5,
            9,
        )
        .unwrap();
        let back = Equalizer::from_bytes(&eq.to_bytes().unwrap()).unwrap();
        let f = frame(40);
        assert_eq!(eq.equalize(&f).unwrap(), back.equalize(&f).unwrap());
        let mut bytes = eq.to_bytes().unwrap();
        bytes.pop();
        assert!(Equalizer::from_bytes(&bytes).is_err());
    }

    #[test]
    fn even_memory_rejected() {
        assert!(Equalizer::new(Architecture::Bilstm { hidden: 2 }, 4, 1).is_err());
    }
}
