//! Forward and backward kernels for the supported layer kinds.
//!
//! Parameters of a layer are one contiguous slice of the network's flat
//! parameter vector:
//!
//! * dense: `W[in, units]` row-major, then `b[units]`
//! * conv1d: `W[kernel * c_in, filters]` with row `j * c_in + c` holding the
//!   weights for tap `j` of channel `c`, then `b[filters]`
//! * lstm: `Wx[n_i, 4 n_h]`, `U[n_h, 4 n_h]`, `b[4 n_h]`, gate columns in
//!   the order input, forget, cell, output
//! * bilstm: the forward-direction LSTM block followed by the backward one

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::{gemm, Batch, Mat, Tally};
use crate::complexity::{Activation, LayerSpec, SeqShape};

pub(crate) const LEAKY_SLOPE: f64 = 0.01;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn activate(act: Activation, z: &[f64]) -> Vec<f64> {
    match act {
        Activation::Linear => z.to_vec(),
        Activation::LeakyRelu => z
            .iter()
            .map(|&v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
            .collect(),
        Activation::Tanh => z.iter().map(|v| v.tanh()).collect(),
        Activation::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
    }
}

/// `dy * act'(z)` given pre-activation `z` and output `y`.
fn activation_grad(act: Activation, z: &[f64], y: &[f64], dy: &mut [f64]) {
    match act {
        Activation::Linear => {}
        Activation::LeakyRelu => dy.iter_mut().zip(z).for_each(|(d, &v)| {
            if v <= 0.0 {
                *d *= LEAKY_SLOPE
            }
        }),
        Activation::Tanh => dy.iter_mut().zip(y).for_each(|(d, &v)| *d *= 1.0 - v * v),
        Activation::Sigmoid => dy.iter_mut().zip(y).for_each(|(d, &v)| *d *= v * (1.0 - v)),
    }
}

fn add_bias(z: &mut [f64], bias: &[f64]) {
    for row in z.chunks_exact_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
    }
}

fn bias_grad(dz: &[f64], db: &mut [f64]) {
    for row in dz.chunks_exact(db.len()) {
        db.iter_mut().zip(row).for_each(|(g, d)| *g += d);
    }
}

/// A layer bound to its input shape and its slice of the parameter vector.
#[derive(Clone, Debug)]
pub(crate) struct Layer {
    pub spec: LayerSpec,
    pub input: SeqShape,
    pub output: SeqShape,
    pub offset: usize,
    pub len: usize,
}

/// Intermediate values a backward pass needs.
pub(crate) enum Cache {
    None,
    Affine { z: Vec<f64> },
    Conv { cols: Vec<f64>, z: Vec<f64> },
    Recurrent(Vec<Trace>),
}

/// Per-direction LSTM history in processing order.
pub(crate) struct Trace {
    /// Activated gates `[step][batch][4 n_h]`.
    gates: Vec<f64>,
    /// Cell states `[step][batch][n_h]`.
    cells: Vec<f64>,
    /// Hidden states `[step][batch][n_h]`.
    hidden: Vec<f64>,
}

impl Layer {
    pub fn param_len(spec: &LayerSpec, input: SeqShape) -> usize {
        match *spec {
            LayerSpec::Dense { units, .. } => input.width() * units + units,
            LayerSpec::Conv1d {
                filters, kernel, ..
            } => kernel * input.features * filters + filters,
            LayerSpec::Lstm { hidden } => lstm_len(input.features, hidden),
            LayerSpec::BiLstm { hidden } => 2 * lstm_len(input.features, hidden),
            LayerSpec::Flatten => 0,
        }
    }

    pub fn init<R: Rng>(&self, p: &mut [f64], rng: &mut R) {
        let uniform = |p: &mut [f64], limit: f64, rng: &mut R| {
            p.iter_mut()
                .for_each(|v| *v = rng.random_range(-limit..=limit));
        };
        let fan_limit = |fan_in: usize, act: Activation| {
            let gain = if act == Activation::LeakyRelu {
                6.0
            } else {
                3.0
            };
            (gain / fan_in as f64).sqrt()
        };
        match self.spec {
            LayerSpec::Dense { units, activation } => {
                let n = self.input.width() * units;
                uniform(&mut p[..n], fan_limit(self.input.width(), activation), rng);
                p[n..].fill(0.0);
            }
            LayerSpec::Conv1d {
                filters,
                kernel,
                activation,
                ..
            } => {
                let fan = kernel * self.input.features;
                uniform(&mut p[..fan * filters], fan_limit(fan, activation), rng);
                p[fan * filters..].fill(0.0);
            }
            LayerSpec::Lstm { hidden } => init_lstm(p, self.input.features, hidden, rng),
            LayerSpec::BiLstm { hidden } => {
                let (a, b) = p.split_at_mut(lstm_len(self.input.features, hidden));
                init_lstm(a, self.input.features, hidden, rng);
                init_lstm(b, self.input.features, hidden, rng);
            }
            LayerSpec::Flatten => {}
        }
    }

    pub fn forward<T: Tally>(
        &self,
        p: &[f64],
        x: &Batch,
        tally: &mut T,
        keep: bool,
    ) -> (Batch, Cache) {
        let b = x.batch;
        match self.spec {
            LayerSpec::Dense { units, activation } => {
                let n_in = self.input.width();
                let (w, bias) = p.split_at(n_in * units);
                let mut z = vec![0.0; b * units];
                gemm(
                    b,
                    n_in,
                    units,
                    Mat::rows(&x.data, n_in),
                    Mat::rows(w, units),
                    &mut z,
                    false,
                    tally,
                );
                add_bias(&mut z, bias);
                let y = activate(activation, &z);
                let cache = if keep {
                    Cache::Affine { z }
                } else {
                    Cache::None
                };
                (Batch::from_parts(y, b, 1, units), cache)
            }
            LayerSpec::Conv1d {
                filters,
                kernel,
                activation,
                ..
            } => {
                let cols = self.im2col(x);
                let rows = b * self.output.steps;
                let k = kernel * self.input.features;
                let (w, bias) = p.split_at(k * filters);
                let mut z = vec![0.0; rows * filters];
                gemm(
                    rows,
                    k,
                    filters,
                    Mat::rows(&cols, k),
                    Mat::rows(w, filters),
                    &mut z,
                    false,
                    tally,
                );
                add_bias(&mut z, bias);
                let y = activate(activation, &z);
                let cache = if keep {
                    Cache::Conv { cols, z }
                } else {
                    Cache::None
                };
                (Batch::from_parts(y, b, self.output.steps, filters), cache)
            }
            LayerSpec::Lstm { hidden } => {
                let mut out = Batch::zeros(b, self.input.steps, hidden);
                let t = lstm_forward(p, x, hidden, false, &mut out, 0, tally, keep);
                let cache = if keep {
                    Cache::Recurrent(vec![t.unwrap()])
                } else {
                    Cache::None
                };
                (out, cache)
            }
            LayerSpec::BiLstm { hidden } => {
                let (pf, pb) = p.split_at(lstm_len(self.input.features, hidden));
                let mut out = Batch::zeros(b, self.input.steps, 2 * hidden);
                let tf = lstm_forward(pf, x, hidden, false, &mut out, 0, tally, keep);
                let tb = lstm_forward(pb, x, hidden, true, &mut out, hidden, tally, keep);
                let cache = if keep {
                    Cache::Recurrent(vec![tf.unwrap(), tb.unwrap()])
                } else {
                    Cache::None
                };
                (out, cache)
            }
            LayerSpec::Flatten => (
                Batch::from_parts(x.data.clone(), b, 1, x.width()),
                Cache::None,
            ),
        }
    }

    /// Accumulates parameter gradients into `g` and returns `dL/dx`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        p: &[f64],
        x: &Batch,
        y: &Batch,
        cache: &Cache,
        mut dy: Vec<f64>,
        g: &mut [f64],
        want_dx: bool,
    ) -> Vec<f64> {
        let b = x.batch;
        let nt = &mut super::tensor::NoTally;
        match (&self.spec, cache) {
            (&LayerSpec::Dense { units, activation }, Cache::Affine { z }) => {
                let n_in = self.input.width();
                activation_grad(activation, z, &y.data, &mut dy);
                let (w, _) = p.split_at(n_in * units);
                let (gw, gb) = g.split_at_mut(n_in * units);
                gemm(
                    n_in,
                    b,
                    units,
                    Mat::transposed(&x.data, n_in),
                    Mat::rows(&dy, units),
                    gw,
                    true,
                    nt,
                );
                bias_grad(&dy, gb);
                if !want_dx {
                    return Vec::new();
                }
                let mut dx = vec![0.0; b * n_in];
                gemm(
                    b,
                    units,
                    n_in,
                    Mat::rows(&dy, units),
                    Mat::transposed(w, units),
                    &mut dx,
                    false,
                    nt,
                );
                dx
            }
            (
                &LayerSpec::Conv1d {
                    filters,
                    kernel,
                    activation,
                    ..
                },
                Cache::Conv { cols, z },
            ) => {
                activation_grad(activation, z, &y.data, &mut dy);
                let rows = b * self.output.steps;
                let k = kernel * self.input.features;
                let (w, _) = p.split_at(k * filters);
                let (gw, gb) = g.split_at_mut(k * filters);
                gemm(
                    k,
                    rows,
                    filters,
                    Mat::transposed(cols, k),
                    Mat::rows(&dy, filters),
                    gw,
                    true,
                    nt,
                );
                bias_grad(&dy, gb);
                if !want_dx {
                    return Vec::new();
                }
                let mut dcols = vec![0.0; rows * k];
                gemm(
                    rows,
                    filters,
                    k,
                    Mat::rows(&dy, filters),
                    Mat::transposed(w, filters),
                    &mut dcols,
                    false,
                    nt,
                );
                self.col2im(&dcols, b)
            }
            (&LayerSpec::Lstm { hidden }, Cache::Recurrent(t)) => {
                let mut dx = vec![0.0; if want_dx { x.data.len() } else { 0 }];
                lstm_backward(p, x, hidden, false, &dy, 0, &t[0], g, &mut dx);
                dx
            }
            (&LayerSpec::BiLstm { hidden }, Cache::Recurrent(t)) => {
                let n = lstm_len(self.input.features, hidden);
                let (pf, pb) = p.split_at(n);
                let (gf, gb) = g.split_at_mut(n);
                let mut dx = vec![0.0; if want_dx { x.data.len() } else { 0 }];
                lstm_backward(pf, x, hidden, false, &dy, 0, &t[0], gf, &mut dx);
                lstm_backward(pb, x, hidden, true, &dy, hidden, &t[1], gb, &mut dx);
                dx
            }
            (LayerSpec::Flatten, _) => dy,
            _ => unreachable!("backward called without a training cache"),
        }
    }

    /// Gathers every receptive field into one row; padded taps are zeros.
    fn im2col(&self, x: &Batch) -> Vec<f64> {
        let LayerSpec::Conv1d {
            kernel,
            stride,
            padding,
            dilation,
            ..
        } = self.spec
        else {
            unreachable!()
        };
        let (c_in, s_in, s_out) = (self.input.features, self.input.steps, self.output.steps);
        let k = kernel * c_in;
        let mut cols = vec![0.0; x.batch * s_out * k];
        for b in 0..x.batch {
            for t in 0..s_out {
                let row = &mut cols[(b * s_out + t) * k..][..k];
                for j in 0..kernel {
                    let pos = (t * stride + j * dilation) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < s_in {
                        let src = &x.data[(b * s_in + pos as usize) * c_in..][..c_in];
                        row[j * c_in..(j + 1) * c_in].copy_from_slice(src);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[f64], batch: usize) -> Vec<f64> {
        let LayerSpec::Conv1d {
            kernel,
            stride,
            padding,
            dilation,
            ..
        } = self.spec
        else {
            unreachable!()
        };
        let (c_in, s_in, s_out) = (self.input.features, self.input.steps, self.output.steps);
        let k = kernel * c_in;
        let mut dx = vec![0.0; batch * s_in * c_in];
        for b in 0..batch {
            for t in 0..s_out {
                let row = &dcols[(b * s_out + t) * k..][..k];
                for j in 0..kernel {
                    let pos = (t * stride + j * dilation) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < s_in {
                        let dst = &mut dx[(b * s_in + pos as usize) * c_in..][..c_in];
                        dst.iter_mut()
                            .zip(&row[j * c_in..])
                            .for_each(|(d, v)| *d += v);
                    }
                }
            }
        }
        dx
    }
}

fn lstm_len(inputs: usize, hidden: usize) -> usize {
    4 * hidden * (inputs + hidden + 1)
}

fn init_lstm<R: Rng>(p: &mut [f64], inputs: usize, hidden: usize, rng: &mut R) {
    let g4 = 4 * hidden;
    let (wx, rest) = p.split_at_mut(inputs * g4);
    let (u, bias) = rest.split_at_mut(hidden * g4);
    let limit = (6.0 / (inputs + g4) as f64).sqrt();
    wx.iter_mut()
        .for_each(|v| *v = rng.random_range(-limit..=limit));
    for gate in 0..4 {
        let q = orthogonal(hidden, rng);
        for r in 0..hidden {
            u[r * g4 + gate * hidden..][..hidden].copy_from_slice(&q[r * hidden..][..hidden]);
        }
    }
    bias.fill(0.0);
    bias[hidden..2 * hidden].fill(1.0);
}

/// Random orthogonal `n x n` matrix by modified Gram-Schmidt on Gaussian rows.
fn orthogonal<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut q: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    for i in 0..n {
        for j in 0..i {
            let d: f64 = (0..n).map(|c| q[i * n + c] * q[j * n + c]).sum();
            for c in 0..n {
                q[i * n + c] -= d * q[j * n + c];
            }
        }
        let norm = (0..n).map(|c| q[i * n + c].powi(2)).sum::<f64>().sqrt();
        if norm > 1e-12 {
            q[i * n..(i + 1) * n].iter_mut().for_each(|v| *v /= norm);
        }
    }
    q
}

/// One LSTM direction. Writes `h_t` into feature columns
/// `out_off..out_off + hidden` of `out`.
#[allow(clippy::too_many_arguments)]
fn lstm_forward<T: Tally>(
    p: &[f64],
    x: &Batch,
    hidden: usize,
    reverse: bool,
    out: &mut Batch,
    out_off: usize,
    tally: &mut T,
    keep: bool,
) -> Option<Trace> {
    let (b, s, n_i, h, g4) = (x.batch, x.steps, x.features, hidden, 4 * hidden);
    let (wx, rest) = p.split_at(n_i * g4);
    let (u, bias) = rest.split_at(h * g4);
    let mut xw = vec![0.0; b * s * g4];
    gemm(
        b * s,
        n_i,
        g4,
        Mat::rows(&x.data, n_i),
        Mat::rows(wx, g4),
        &mut xw,
        false,
        tally,
    );
    let mut trace = keep.then(|| Trace {
        gates: Vec::with_capacity(s * b * g4),
        cells: Vec::with_capacity(s * b * h),
        hidden: Vec::with_capacity(s * b * h),
    });
    let mut h_prev = vec![0.0; b * h];
    let mut c_prev = vec![0.0; b * h];
    let mut gates = vec![0.0; b * g4];
    let of = out.features;
    for step in 0..s {
        let t = if reverse { s - 1 - step } else { step };
        for r in 0..b {
            let src = &xw[(r * s + t) * g4..][..g4];
            gates[r * g4..][..g4]
                .iter_mut()
                .zip(src.iter().zip(bias))
                .for_each(|(g, (a, c))| *g = a + c);
        }
        gemm(
            b,
            h,
            g4,
            Mat::rows(&h_prev, h),
            Mat::rows(u, g4),
            &mut gates,
            true,
            tally,
        );
        for r in 0..b {
            let g = &mut gates[r * g4..][..g4];
            for j in 0..h {
                let i = sigmoid(g[j]);
                let f = sigmoid(g[h + j]);
                let c_hat = g[2 * h + j].tanh();
                let o = sigmoid(g[3 * h + j]);
                g[j] = i;
                g[h + j] = f;
                g[2 * h + j] = c_hat;
                g[3 * h + j] = o;
                let c = f * c_prev[r * h + j] + i * c_hat;
                c_prev[r * h + j] = c;
                let hv = o * c.tanh();
                h_prev[r * h + j] = hv;
                out.data[(r * s + t) * of + out_off + j] = hv;
            }
        }
        // f * c, i * c_hat and o * tanh(c) for every unit
        tally.tick(3 * (b * h) as u64);
        if let Some(tr) = trace.as_mut() {
            tr.gates.extend_from_slice(&gates);
            tr.cells.extend_from_slice(&c_prev);
            tr.hidden.extend_from_slice(&h_prev);
        }
    }
    trace
}

#[allow(clippy::too_many_arguments)]
fn lstm_backward(
    p: &[f64],
    x: &Batch,
    hidden: usize,
    reverse: bool,
    dy: &[f64],
    out_off: usize,
    tr: &Trace,
    g: &mut [f64],
    dx: &mut [f64],
) {
    let (b, s, n_i, h, g4) = (x.batch, x.steps, x.features, hidden, 4 * hidden);
    let nt = &mut super::tensor::NoTally;
    let (wx, rest) = p.split_at(n_i * g4);
    let (u, _) = rest.split_at(h * g4);
    let (gwx, grest) = g.split_at_mut(n_i * g4);
    let (gu, gb) = grest.split_at_mut(h * g4);
    let of = dy.len() / (b * s).max(1);
    let zeros = vec![0.0; b * h];
    let mut da_all = vec![0.0; b * s * g4];
    let mut da = vec![0.0; b * g4];
    let mut dh_next = vec![0.0; b * h];
    let mut dc_next = vec![0.0; b * h];
    for step in (0..s).rev() {
        let t = if reverse { s - 1 - step } else { step };
        let gates = &tr.gates[step * b * g4..][..b * g4];
        let cells = &tr.cells[step * b * h..][..b * h];
        let (c_prev, h_prev) = if step == 0 {
            (&zeros[..], &zeros[..])
        } else {
            (
                &tr.cells[(step - 1) * b * h..][..b * h],
                &tr.hidden[(step - 1) * b * h..][..b * h],
            )
        };
        for r in 0..b {
            let gr = &gates[r * g4..][..g4];
            for j in 0..h {
                let (i, f, c_hat, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                let idx = r * h + j;
                let dh = dy[(r * s + t) * of + out_off + j] + dh_next[idx];
                let tc = cells[idx].tanh();
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[idx];
                dc_next[idx] = dc * f;
                let d = &mut da[r * g4..][..g4];
                d[j] = dc * c_hat * i * (1.0 - i);
                d[h + j] = dc * c_prev[idx] * f * (1.0 - f);
                d[2 * h + j] = dc * i * (1.0 - c_hat * c_hat);
                d[3 * h + j] = d_o * o * (1.0 - o);
            }
            da_all[(r * s + t) * g4..][..g4].copy_from_slice(&da[r * g4..][..g4]);
        }
        gemm(
            h,
            b,
            g4,
            Mat::transposed(h_prev, h),
            Mat::rows(&da, g4),
            gu,
            true,
            nt,
        );
        gemm(
            b,
            g4,
            h,
            Mat::rows(&da, g4),
            Mat::transposed(u, g4),
            &mut dh_next,
            false,
            nt,
        );
    }
    gemm(
        n_i,
        b * s,
        g4,
        Mat::transposed(&x.data, n_i),
        Mat::rows(&da_all, g4),
        gwx,
        true,
        nt,
    );
    bias_grad(&da_all, gb);
    if !dx.is_empty() {
        gemm(
            b * s,
            g4,
            n_i,
            Mat::rows(&da_all, g4),
            Mat::transposed(wx, g4),
            dx,
            true,
            nt,
        );
    }
}
