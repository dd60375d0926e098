//! Train/test symbol datasets and their on-disk format.
//!
//! File layout (see [`crate::format`]): magic `EQLABDS1`, JSON
//! [`DatasetHeader`], then for the train frame and then the test frame:
//! X samples as interleaved little-endian f64 `(re, im)`, Y samples likewise,
//! X truth indices (`u8`), Y truth indices (`u8`).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::max_normalized_xcorr;
use super::{qam, receive, simulate, Compensation, LinkConfig, SymbolFrame};
use crate::error::{config, Error, Result};
use crate::format::{self, PayloadReader, PayloadWriter};
use crate::C64;

pub const DATASET_MAGIC: &[u8; 8] = b"EQLABDS1";
/// Cross-correlation ceiling between train and test streams.
pub const XCORR_LIMIT: f64 = 0.02;

/// Window bookkeeping: centers `first_center..=last_center` have a full window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowMeta {
    pub memory: usize,
    pub first_center: usize,
    pub last_center: Option<usize>,
}

impl WindowMeta {
    pub fn new(memory: usize, symbols: usize) -> Self {
        let half = memory / 2;
        WindowMeta {
            memory,
            first_center: half,
            last_center: (symbols >= memory).then(|| symbols - 1 - half),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub seed: u64,
    pub symbols: usize,
    /// Complex gain `[re, im]` removed from X and Y by the receiver.
    pub normalization: [[f64; 2]; 2],
    pub window: WindowMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: String,
    pub config_hash: String,
    pub link: LinkConfig,
    pub compensation: Compensation,
    pub train: FrameMeta,
    pub test: FrameMeta,
    /// Largest train/test normalized cross-correlation over all lags.
    pub xcorr_max: f64,
    pub xcorr_threshold: f64,
    #[serde(default)]
    pub manifest_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub train: SymbolFrame,
    pub test: SymbolFrame,
}

/// Acceptance ceiling for the measured cross-correlation. The statistical
/// floor of the maximum over all lags of two independent streams of length
/// `L` is about `sqrt(ln L / L)`, so short streams get a proportionally
/// looser bound; from `2^16` symbols on it is the fixed [`XCORR_LIMIT`].
pub fn xcorr_threshold(len: usize) -> f64 {
    if len == 0 {
        return XCORR_LIMIT;
    }
    XCORR_LIMIT.max(5.0 / (len as f64).sqrt())
}

/// Largest cross-correlation between any train stream and any test stream.
pub fn train_test_xcorr(train: &SymbolFrame, test: &SymbolFrame) -> f64 {
    let sym = |t: &[u8]| -> Vec<C64> { t.iter().map(|&i| qam::point(i)).collect() };
    let a = [sym(&train.truth_x), sym(&train.truth_y)];
    let b = [sym(&test.truth_x), sym(&test.truth_y)];
    let mut worst: f64 = 0.0;
    for s in &a {
        for t in &b {
            worst = worst.max(max_normalized_xcorr(s, t));
        }
    }
    worst
}

fn frame_meta(frame: &SymbolFrame, memory: usize) -> FrameMeta {
    let g = frame.normalization;
    FrameMeta {
        seed: frame.seed,
        symbols: frame.len(),
        normalization: [[g[0].re, g[0].im], [g[1].re, g[1].im]],
        window: WindowMeta::new(memory, frame.len()),
    }
}

/// Simulates independent train and test frames, runs the CDC receiver on
/// both, and checks that they are statistically independent.
pub fn make_dataset(
    link: &LinkConfig,
    n_train: usize,
    n_test: usize,
    seeds: (u64, u64),
    memory: usize,
) -> Result<Dataset> {
    if seeds.0 == seeds.1 {
        return Err(config("train and test seeds must differ"));
    }
    if memory == 0 || memory.is_multiple_of(2) {
        return Err(config("window memory must be odd"));
    }
    link.validate()?;
    let run = |n: usize, seed: u64| -> Result<SymbolFrame> {
        let frame = simulate(link, n, seed)?;
        receive(&frame, link, Compensation::Cdc)
    };
    let (train, test) = rayon::join(|| run(n_train, seeds.0), || run(n_test, seeds.1));
    let (train, test) = (train?, test?);
    let len = train.len().min(test.len());
    let xcorr = if len == 0 {
        0.0
    } else {
        train_test_xcorr(&train, &test)
    };
    let threshold = xcorr_threshold(len);
    if xcorr >= threshold {
        return Err(Error::Config(format!(
            "train/test cross-correlation {xcorr:.4} >= {threshold:.4}; pick other seeds"
        )));
    }
    let header = DatasetHeader {
        format: "eqlab-dataset".into(),
        version: format::format_version(),
        config_hash: link.hash(),
        link: link.clone(),
        compensation: Compensation::Cdc,
        train: frame_meta(&train, memory),
        test: frame_meta(&test, memory),
        xcorr_max: xcorr,
        xcorr_threshold: threshold,
        manifest_hash: None,
    };
    Ok(Dataset {
        header,
        train,
        test,
    })
}

fn write_frame(p: &mut PayloadWriter, f: &SymbolFrame) {
    p.f64s(f.x.iter().flat_map(|v| [v.re, v.im]));
    p.f64s(f.y.iter().flat_map(|v| [v.re, v.im]));
    p.bytes(&f.truth_x);
    p.bytes(&f.truth_y);
}

fn read_frame(r: &mut PayloadReader<'_>, meta: &FrameMeta) -> Result<SymbolFrame> {
    let n = meta.symbols;
    let complex =
        |v: Vec<f64>| -> Vec<C64> { v.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect() };
    let x = complex(r.f64s(2 * n)?);
    let y = complex(r.f64s(2 * n)?);
    let truth_x = r.bytes(n)?;
    let truth_y = r.bytes(n)?;
    if truth_x.iter().chain(&truth_y).any(|&t| t > 15) {
        return Err(Error::Format("truth index out of 16-QAM range".into()));
    }
    let g = meta.normalization;
    Ok(SymbolFrame {
        x,
        y,
        truth_x,
        truth_y,
        seed: meta.seed,
        normalization: [C64::new(g[0][0], g[0][1]), C64::new(g[1][0], g[1][1])],
    })
}

impl Dataset {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut p = PayloadWriter::default();
        write_frame(&mut p, &self.train);
        write_frame(&mut p, &self.test);
        let mut out = Vec::new();
        format::write_container(&mut out, DATASET_MAGIC, &self.header, &p.0)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload): (DatasetHeader, _) = format::read_container(bytes, DATASET_MAGIC)?;
        format::check_version(&header.version)?;
        let mut r = PayloadReader::new(&payload);
        let train = read_frame(&mut r, &header.train)?;
        let test = read_frame(&mut r, &header.test)?;
        r.finish()?;
        Ok(Dataset {
            header,
            train,
            test,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut p = PayloadWriter::default();
        write_frame(&mut p, &self.train);
        write_frame(&mut p, &self.test);
        format::write_container(
            BufWriter::new(File::create(path)?),
            DATASET_MAGIC,
            &self.header,
            &p.0,
        )
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (header, payload): (DatasetHeader, _) =
            format::read_container(BufReader::new(File::open(path)?), DATASET_MAGIC)?;
        format::check_version(&header.version)?;
        let mut r = PayloadReader::new(&payload);
        let train = read_frame(&mut r, &header.train)?;
        let test = read_frame(&mut r, &header.test)?;
        r.finish()?;
        Ok(Dataset {
            header,
            train,
            test,
        })
    }
}
