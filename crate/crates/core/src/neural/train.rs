//! Adam optimizer and the minibatch MSE training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::tensor::Batch;
use crate::error::{config, Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay.
    #[serde(default = "unit")]
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Tail share of the samples held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

fn unit() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            lr_decay: 0.93,
            batch_size: 256,
            epochs: 30,
            patience: 8,
            validation_fraction: 0.1,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config("learning rate must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(config("learning-rate decay must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(config("batch size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(config("validation fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Indexed supervised samples the training loop draws minibatches from.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Input `(steps, features)` of one sample.
    fn input_shape(&self) -> (usize, usize);
    fn target_width(&self) -> usize;
    /// Appends inputs and targets of the samples `idx` in order.
    fn gather(&self, idx: &[usize], input: &mut Vec<f64>, target: &mut Vec<f64>);

    fn batch(&self, idx: &[usize]) -> (Batch, Vec<f64>) {
        let (s, f) = self.input_shape();
        let mut x = Vec::with_capacity(idx.len() * s * f);
        let mut t = Vec::with_capacity(idx.len() * self.target_width());
        self.gather(idx, &mut x, &mut t);
        (Batch::from_parts(x, idx.len(), s, f), t)
    }
}

/// Fully materialized samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub steps: usize,
    pub features: usize,
    pub target_width: usize,
}

impl SampleSource for Samples {
    fn len(&self) -> usize {
        self.targets.len() / self.target_width.max(1)
    }

    fn input_shape(&self) -> (usize, usize) {
        (self.steps, self.features)
    }

    fn target_width(&self) -> usize {
        self.target_width
    }

    fn gather(&self, idx: &[usize], input: &mut Vec<f64>, target: &mut Vec<f64>) {
        let (w, o) = (self.steps * self.features, self.target_width);
        for &i in idx {
            input.extend_from_slice(&self.inputs[i * w..(i + 1) * w]);
            target.extend_from_slice(&self.targets[i * o..(i + 1) * o]);
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Epoch whose weights were kept (0-based).
    pub best_epoch: usize,
}

/// Mean loss over `idx` in fixed-size chunks.
pub fn mean_loss<S: SampleSource>(
    net: &Network,
    data: &S,
    idx: &[usize],
    chunk: usize,
) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for part in idx.chunks(chunk.max(1)) {
        let (x, t) = data.batch(part);
        total += net.loss(&x, &t)? * part.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Minibatch Adam on MSE with early stopping. The weights of the best
/// validation epoch (or the last epoch without a validation split) are kept.
pub fn train<S: SampleSource>(
    net: &mut Network,
    data: &S,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let (s, f) = data.input_shape();
    let want = net.spec().input_shape();
    if s * f != want.width() || data.target_width() != net.output_width() {
        return Err(Error::Shape {
            expected: format!(
                "samples [{}, {}] -> {}",
                want.steps,
                want.features,
                net.output_width()
            ),
            actual: format!("samples [{s}, {f}] -> {}", data.target_width()),
        });
    }
    let n = data.len();
    let n_val = ((n as f64) * cfg.validation_fraction).round() as usize;
    let n_train = n - n_val;
    if n_train == 0 {
        return Err(config("no training samples"));
    }
    let val_idx: Vec<usize> = (n_train..n).collect();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net.params().len(), cfg.learning_rate);
    let mut report = TrainReport::default();
    let mut best = (f64::INFINITY, net.params().to_vec());
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        adam.lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let (x, t) = data.batch(idx);
            let (loss, grad) = net.loss_and_grad(&x, &t)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            adam.step(net.params_mut(), &grad);
            sum += loss * idx.len() as f64;
        }
        report.train_loss.push(sum / n_train as f64);
        let score = if n_val > 0 {
            let v = mean_loss(net, data, &val_idx, 4096)?;
            if !v.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            report.validation_loss.push(v);
            v
        } else {
            sum / n_train as f64
        };
        if score < best.0 || n_val == 0 {
            best = (score, net.params().to_vec());
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience.max(1) {
                break;
            }
        }
    }
    if cfg.epochs > 0 {
        net.set_params(best.1)?;
    }
    Ok(report)
}
