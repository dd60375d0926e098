//! Sequential network over a flat parameter vector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::layers::{Cache, Layer};
use super::tensor::{Batch, MulCounter, NoTally, Tally};
use crate::complexity::{LayerSpec, ModelSpec, SeqShape};
use crate::error::{Error, Result};

/// Output of a counted forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Counted {
    pub output: Batch,
    /// Scalar real multiplications executed for the whole batch.
    pub multiplies: u64,
}

/// Everything a backward pass needs from the forward pass.
pub struct Tape {
    activations: Vec<Batch>,
    caches: Vec<Cache>,
}

impl Tape {
    pub fn output(&self) -> &Batch {
        self.activations
            .last()
            .expect("tape holds the input at least")
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    spec: ModelSpec,
    layers: Vec<Layer>,
    params: Vec<f64>,
    intra_op_threads: usize,
}

impl Network {
    /// Builds the network with zero weights.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut offset = 0;
        let layers: Vec<Layer> = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let len = Layer::param_len(l, shapes[i]);
                let layer = Layer {
                    spec: l.clone(),
                    input: shapes[i],
                    output: shapes[i + 1],
                    offset,
                    len,
                };
                offset += len;
                layer
            })
            .collect();
        Ok(Network {
            spec,
            layers,
            params: vec![0.0; offset],
            intra_op_threads: 1,
        })
    }

    /// Builds the network with seeded fan-in scaled / orthogonal weights.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &net.layers {
            layer.init(
                &mut net.params[layer.offset..layer.offset + layer.len],
                &mut rng,
            );
        }
        Ok(net)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape {
                expected: format!("{} parameters", self.params.len()),
                actual: format!("{} parameters", params.len()),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn intra_op_threads(&self) -> usize {
        self.intra_op_threads
    }

    /// Values above one split inference batches across the rayon pool.
    pub fn set_intra_op_threads(&mut self, threads: usize) {
        self.intra_op_threads = threads.max(1);
    }

    pub fn output_width(&self) -> usize {
        self.spec.output
    }

    fn check_input(&self, x: &Batch) -> Result<()> {
        let want = self.spec.input_shape();
        let flat_ok = x.steps == 1
            && x.features == want.width()
            && matches!(
                self.spec.layers.first(),
                Some(LayerSpec::Dense { .. } | LayerSpec::Flatten)
            );
        if (x.steps == want.steps && x.features == want.features) || flat_ok {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: format!("[B, {}, {}]", want.steps, want.features),
                actual: format!("[{}, {}, {}]", x.batch, x.steps, x.features),
            })
        }
    }

    fn run<T: Tally>(&self, x: &Batch, tally: &mut T) -> Batch {
        let want = self.spec.input_shape();
        let mut cur = Batch::from_parts(x.data.clone(), x.batch, want.steps, want.features);
        for layer in &self.layers {
            let p = &self.params[layer.offset..layer.offset + layer.len];
            cur = layer.forward(p, &cur, tally, false).0;
        }
        cur
    }

    /// Inference. Deterministic and independent of `intra_op_threads`:
    /// samples never interact, so splitting the batch changes nothing.
    pub fn forward(&self, x: &Batch) -> Result<Batch> {
        self.check_input(x)?;
        if self.intra_op_threads <= 1 || x.batch < 2 {
            return Ok(self.run(x, &mut NoTally));
        }
        let per = x.batch.div_ceil(self.intra_op_threads);
        let w = x.width();
        let parts: Vec<Batch> = x
            .data
            .par_chunks(per * w)
            .map(|chunk| {
                self.run(
                    &Batch::from_parts(chunk.to_vec(), chunk.len() / w, x.steps, x.features),
                    &mut NoTally,
                )
            })
            .collect();
        let mut data = Vec::with_capacity(x.batch * self.spec.output);
        parts.iter().for_each(|p| data.extend_from_slice(&p.data));
        Ok(Batch::from_parts(
            data,
            x.batch,
            parts[0].steps,
            parts[0].features,
        ))
    }

    /// Inference through the scalar kernels, counting every real product.
    pub fn forward_counted(&self, x: &Batch) -> Result<Counted> {
        self.check_input(x)?;
        let mut counter = MulCounter::default();
        let output = self.run(x, &mut counter);
        Ok(Counted {
            output,
            multiplies: counter.count,
        })
    }

    /// Forward pass that records what `backward` needs.
    pub fn forward_train(&self, x: &Batch) -> Result<Tape> {
        self.check_input(x)?;
        let want = self.spec.input_shape();
        let mut activations = vec![Batch::from_parts(
            x.data.clone(),
            x.batch,
            want.steps,
            want.features,
        )];
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let p = &self.params[layer.offset..layer.offset + layer.len];
            let (y, cache) = layer.forward(p, activations.last().unwrap(), &mut NoTally, true);
            activations.push(y);
            caches.push(cache);
        }
        Ok(Tape {
            activations,
            caches,
        })
    }

    /// Gradient of the loss with respect to every parameter given
    /// `dL/d(output)`.
    pub fn backward(&self, tape: &Tape, d_out: Vec<f64>) -> Result<Vec<f64>> {
        if d_out.len() != tape.output().data.len() {
            return Err(Error::Shape {
                expected: format!("{} output gradients", tape.output().data.len()),
                actual: format!("{}", d_out.len()),
            });
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut d = d_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let p = &self.params[layer.offset..layer.offset + layer.len];
            let g = &mut grad[layer.offset..layer.offset + layer.len];
            d = layer.backward(
                p,
                &tape.activations[i],
                &tape.activations[i + 1],
                &tape.caches[i],
                d,
                g,
                i > 0,
            );
        }
        Ok(grad)
    }

    /// Mean squared error over every output value, and its gradient.
    pub fn loss_and_grad(&self, x: &Batch, target: &[f64]) -> Result<(f64, Vec<f64>)> {
        let tape = self.forward_train(x)?;
        let y = &tape.output().data;
        check_target(y.len(), target.len())?;
        let n = y.len().max(1) as f64;
        let loss = y
            .iter()
            .zip(target)
            .map(|(a, t)| (a - t).powi(2))
            .sum::<f64>()
            / n;
        let d: Vec<f64> = y
            .iter()
            .zip(target)
            .map(|(a, t)| 2.0 * (a - t) / n)
            .collect();
        let grad = self.backward(&tape, d)?;
        Ok((loss, grad))
    }

    pub fn loss(&self, x: &Batch, target: &[f64]) -> Result<f64> {
        let y = self.forward(x)?;
        check_target(y.data.len(), target.len())?;
        let n = y.data.len().max(1) as f64;
        Ok(y.data
            .iter()
            .zip(target)
            .map(|(a, t)| (a - t).powi(2))
            .sum::<f64>()
            / n)
    }

    /// Per-layer `(input, output)` shapes for inspection.
    pub fn layer_shapes(&self) -> Vec<(SeqShape, SeqShape)> {
        self.layers.iter().map(|l| (l.input, l.output)).collect()
    }
}

fn check_target(outputs: usize, targets: usize) -> Result<()> {
    if outputs != targets {
        return Err(Error::Shape {
            expected: format!("{outputs} target values"),
            actual: format!("{targets}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complexity::{rmps_model, Activation, InputSpec};

    fn spec(memory: usize, features: usize, output: usize, layers: Vec<LayerSpec>) -> ModelSpec {
        ModelSpec {
            input: InputSpec { memory, features },
            output,
            layers,
        }
    }

    #[test]
    fn zero_dense_counts_six() {
        let net =
            Network::zeros(spec(1, 3, 2, vec![LayerSpec::dense(2, Activation::Linear)])).unwrap();
        let out = net
            .forward_counted(&Batch::new(vec![1.0, 2.0, 3.0], 1, 1, 3).unwrap())
            .unwrap();
        assert_eq!(out.output.data, vec![0.0, 0.0]);
        assert_eq!(out.multiplies, 6);
    }

    #[test]
    fn tiny_bilstm_on_zeros() {
        let s = spec(
            1,
            4,
            2,
            vec![LayerSpec::BiLstm { hidden: 1 }, LayerSpec::Flatten],
        );
        let net = Network::zeros(s.clone()).unwrap();
        let out = net.forward_counted(&Batch::zeros(1, 1, 4)).unwrap();
        assert_eq!(out.output.data, vec![0.0, 0.0]);
        assert_eq!(out.multiplies, rmps_model(&s).unwrap().total_rmps);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let net = Network::zeros(spec(
            5,
            4,
            2,
            vec![
                LayerSpec::conv_same(2, 3, Activation::Linear),
                LayerSpec::Flatten,
                LayerSpec::dense(2, Activation::Linear),
            ],
        ))
        .unwrap();
        assert!(net.forward(&Batch::zeros(2, 4, 4)).is_err());
        assert!(net.forward(&Batch::zeros(2, 1, 20)).is_err());
        assert!(net.forward(&Batch::zeros(2, 5, 4)).is_ok());
    }

    #[test]
    fn threaded_inference_matches_serial() {
        let s = spec(
            7,
            4,
            2,
            vec![
                LayerSpec::BiLstm { hidden: 3 },
                LayerSpec::Flatten,
                LayerSpec::dense(2, Activation::Linear),
            ],
        );
        let mut net = Network::new(s, 3).unwrap();
        let x = Batch::new(
            (0..9 * 28).map(|i| (i as f64 * 0.37).sin()).collect(),
            9,
            7,
            4,
        )
        .unwrap();
        let serial = net.forward(&x).unwrap();
        net.set_intra_op_threads(4);
        assert_eq!(net.forward(&x).unwrap(), serial);
    }

    /// Largest relative error between the analytic gradient and central
    /// differences, with a floor on the denominator for tiny gradients.
    #[allow(clippy::needless_range_loop)]
    fn grad_check(spec: ModelSpec, batch: usize, seed: u64) -> f64 {
        let net = Network::new(spec.clone(), seed).unwrap();
        let w = spec.input_shape();
        let x = Batch::new(
            (0..batch * w.width())
                .map(|i| ((i * 37 % 19) as f64 / 9.0 - 1.0) * 0.8)
                .collect(),
            batch,
            w.steps,
            w.features,
        )
        .unwrap();
        let t: Vec<f64> = (0..batch * spec.output)
            .map(|i| (i as f64 * 0.61).cos())
            .collect();
        let (_, g) = net.loss_and_grad(&x, &t).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..g.len() {
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let up = p.loss(&x, &t).unwrap();
            p.params_mut()[i] -= 2.0 * h;
            let down = p.loss(&x, &t).unwrap();
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6));
        }
        worst
    }

    #[test]
    fn gradients_of_every_layer_kind() {
        let cases = vec![
            spec(
                3,
                2,
                2,
                vec![
                    LayerSpec::dense(4, Activation::Tanh),
                    LayerSpec::dense(3, Activation::Sigmoid),
                    LayerSpec::dense(2, Activation::Linear),
                ],
            ),
            spec(
                6,
                2,
                3,
                vec![
                    LayerSpec::Conv1d {
                        filters: 3,
                        kernel: 3,
                        stride: 2,
                        padding: 2,
                        dilation: 2,
                        activation: Activation::Tanh,
                    },
                    LayerSpec::Lstm { hidden: 3 },
                    LayerSpec::Flatten,
                    LayerSpec::dense(3, Activation::Linear),
                ],
            ),
            spec(
                4,
                3,
                8,
                vec![
                    LayerSpec::BiLstm { hidden: 2 },
                    LayerSpec::Flatten,
                    LayerSpec::dense(8, Activation::Sigmoid),
                ],
            ),
        ];
        for (i, s) in cases.into_iter().enumerate() {
            let e = grad_check(s, 3, i as u64);
            assert!(e < 1e-4, "case {i}: {e}");
        }
    }
}
