//! Inference latency harness.
//!
//! Times `Network::forward` alone, single-threaded, and reports per-symbol
//! statistics. [`latency_vs_rmps`] builds one model per family and RMpS
//! decade and checks how well the multiply count ranks the measured times.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::complexity::rmps_model;
use crate::error::{config, Result};
use crate::neural::{Batch, Family, Network, INPUT_FEATURES};
use crate::search::{feasible_space, Budget};

pub const CSV_VERSION: &str = "1.0";
/// Minimum post-warmup iterations for a report.
pub const MIN_ITERS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Per-symbol seconds.
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    pub batch: usize,
    pub warmup: usize,
    pub iters: usize,
    pub timer_resolution_s: f64,
    /// False when the timer is coarser than 1% of the mean batch time.
    pub reliable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub family: Family,
    pub decade: String,
    pub architecture: String,
    pub rmps: u64,
    /// At the configured batch size.
    pub timing: Timing,
    /// At batch size 1, when the configured batch is larger.
    pub single: Option<Timing>,
    pub host: String,
}

/// Smallest nonzero step the monotonic clock reports.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..64 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Short description of the machine the numbers come from.
pub fn host_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!(
        "{} {} / {cpu} / {threads} hw threads",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

/// Times `iters` forward passes of `input` after `warmup` discarded ones.
pub fn measure_latency(
    net: &Network,
    input: &Batch,
    warmup: usize,
    iters: usize,
) -> Result<Timing> {
    if iters == 0 {
        return Err(config("iteration count must be >= 1"));
    }
    if input.batch == 0 {
        return Err(config("input batch is empty"));
    }
    if net.intra_op_threads() != 1 {
        return Err(config(format!(
            "latency runs single-threaded; the network is set to {} intra-op threads",
            net.intra_op_threads()
        )));
    }
    for _ in 0..warmup {
        std::hint::black_box(net.forward(input)?);
    }
    let mut per_symbol = Vec::with_capacity(iters);
    let mut total = 0.0;
    for _ in 0..iters {
        let t = Instant::now();
        std::hint::black_box(net.forward(std::hint::black_box(input))?);
        let dt = t.elapsed().as_secs_f64();
        total += dt;
        per_symbol.push(dt / input.batch as f64);
    }
    let mean_s = per_symbol.iter().sum::<f64>() / iters as f64;
    per_symbol.sort_by(f64::total_cmp);
    let resolution = timer_resolution().as_secs_f64();
    Ok(Timing {
        mean_s,
        median_s: percentile(&per_symbol, 0.5),
        p95_s: percentile(&per_symbol, 0.95),
        batch: input.batch,
        warmup,
        iters,
        timer_resolution_s: resolution,
        reliable: resolution <= 0.01 * total / iters as f64 && per_symbol[0] > 0.0,
    })
}

/// Deterministic pseudo-random input windows.
pub fn synthetic_input(batch: usize, memory: usize) -> Batch {
    let n = batch * memory * INPUT_FEATURES;
    let data = (0..n)
        .map(|i| ((i as f64 * 0.618_033_988_75).fract() - 0.5) * 2.0)
        .collect();
    Batch::from_parts(data, batch, memory, INPUT_FEATURES)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub families: Vec<Family>,
    pub decades: Vec<u64>,
    pub memory: usize,
    pub batch: usize,
    pub warmup: usize,
    pub iters: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub rows: Vec<LatencyReport>,
    /// Spearman rank correlation between RMpS and mean latency per family.
    pub spearman: Vec<(Family, Option<f64>)>,
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman's rho as the Pearson correlation of ranks; `None` below two
/// points or when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// One model per `(family, decade)`: the largest balanced member of the
/// family that fits the decade, timed at `cfg.batch`. Families that cannot
/// reach a decade are skipped there.
pub fn latency_vs_rmps(cfg: &BenchConfig) -> Result<LatencyTable> {
    if cfg.iters == 0 {
        return Err(config("iteration count must be >= 1"));
    }
    let host = host_descriptor();
    let input = synthetic_input(cfg.batch, cfg.memory);
    let one = (cfg.batch > 1).then(|| synthetic_input(1, cfg.memory));
    let mut rows = Vec::new();
    let mut spearman_out = Vec::new();
    for &family in &cfg.families {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &d in &cfg.decades {
            let budget = Budget::new(d)?;
            let bounds = match feasible_space(family, &budget, cfg.memory) {
                Ok(b) => b,
                Err(crate::Error::Infeasible(_)) => continue,
                Err(e) => return Err(e),
            };
            let arch = bounds.upper_corner()?;
            let spec = arch.model_spec(cfg.memory)?;
            let rmps = rmps_model(&spec)?.total_rmps;
            let net = Network::new(spec, cfg.seed)?;
            let timing = measure_latency(&net, &input, cfg.warmup, cfg.iters)?;
            let single = match &one {
                Some(x) => Some(measure_latency(&net, x, cfg.warmup, cfg.iters)?),
                None => None,
            };
            xs.push(rmps as f64);
            ys.push(timing.mean_s);
            rows.push(LatencyReport {
                family,
                decade: budget.label,
                architecture: arch.to_string(),
                rmps,
                timing,
                single,
                host: host.clone(),
            });
        }
        if !xs.is_empty() {
            spearman_out.push((family, spearman(&xs, &ys)));
        }
    }
    Ok(LatencyTable {
        rows,
        spearman: spearman_out,
    })
}

impl LatencyTable {
    pub fn to_csv(&self, manifest_hash: Option<&str>) -> String {
        let mut out = format!("# eqlab-latency {CSV_VERSION}");
        if let Some(h) = manifest_hash {
            let _ = write!(out, " manifest={h}");
        }
        out.push('\n');
        out.push_str(
            "family,decade,architecture,rmps,batch,warmup,iters,mean_s,median_s,p95_s,reliable,\
             mean_s_b1,median_s_b1,p95_s_b1,host\n",
        );
        for r in &self.rows {
            let t = &r.timing;
            let b1 = match &r.single {
                Some(s) => format!("{:e},{:e},{:e}", s.mean_s, s.median_s, s.p95_s),
                None => ",,".into(),
            };
            let _ = writeln!(
                out,
                "{},{},\"{}\",{},{},{},{},{:e},{:e},{:e},{},{b1},\"{}\"",
                r.family,
                r.decade,
                r.architecture,
                r.rmps,
                t.batch,
                t.warmup,
                t.iters,
                t.mean_s,
                t.median_s,
                t.p95_s,
                t.reliable,
                r.host
            );
        }
        out
    }
}
