//! Real-multiplication accounting for neural equalizer layer stacks.
//!
//! Every count here is "real multiplications per recovered output symbol"
//! (RMpS): the number of scalar products one forward pass over a single
//! input window executes. Bias additions and activation functions are free.
//!
//! The per-layer formulas are the classic closed forms for dense, 1-D
//! convolutional and LSTM layers. Composite models are charged layer by
//! layer on the actual inter-layer shapes, and every product between two
//! adjacent layers belongs to the consumer. In particular the per-step
//! output projection that the standalone LSTM formula includes is billed to
//! whatever layer reads the recurrent output, never to the LSTM itself.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

/// Nonlinearity applied after a layer. Metadata only for the count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Linear,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

fn one() -> usize {
    1
}

/// One layer of a sequential model.
///
/// A `Dense` layer always reads its input flattened, so a dense layer
/// placed directly on a `[n_s, n_i]` window sees `n_s * n_i` inputs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
        #[serde(default)]
        activation: Activation,
    },
    Conv1d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "one")]
        dilation: usize,
        #[serde(default)]
        activation: Activation,
    },
    Lstm {
        hidden: usize,
    },
    #[serde(rename = "bilstm")]
    BiLstm {
        hidden: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn dense(units: usize, activation: Activation) -> Self {
        LayerSpec::Dense { units, activation }
    }

    /// Convolution with stride 1, no dilation and "same" padding for odd kernels.
    pub fn conv_same(filters: usize, kernel: usize, activation: Activation) -> Self {
        LayerSpec::Conv1d {
            filters,
            kernel,
            stride: 1,
            padding: kernel.saturating_sub(1) / 2,
            dilation: 1,
            activation,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::BiLstm { .. } => "bilstm",
            LayerSpec::Flatten => "flatten",
        }
    }

    fn check(&self, index: usize) -> Result<()> {
        let bad = |reason: &str| Error::Layer {
            index,
            kind: self.kind_name(),
            reason: reason.to_string(),
        };
        match *self {
            LayerSpec::Dense { units: 0, .. } => Err(bad("units must be >= 1")),
            LayerSpec::Conv1d {
                filters,
                kernel,
                stride,
                dilation,
                ..
            } => {
                if filters == 0 || kernel == 0 || stride == 0 || dilation == 0 {
                    Err(bad("filters, kernel, stride and dilation must be >= 1"))
                } else {
                    Ok(())
                }
            }
            LayerSpec::Lstm { hidden } | LayerSpec::BiLstm { hidden } if hidden == 0 => {
                Err(bad("hidden units must be >= 1"))
            }
            _ => Ok(()),
        }
    }

    /// Output shape for a per-sample input shape.
    pub fn output_shape(&self, index: usize, input: SeqShape) -> Result<SeqShape> {
        self.check(index)?;
        Ok(match *self {
            LayerSpec::Dense { units, .. } => SeqShape::new(1, units),
            LayerSpec::Conv1d {
                filters,
                kernel,
                stride,
                padding,
                dilation,
                ..
            } => {
                let steps = conv_output_length(input.steps, kernel, padding, dilation, stride)
                    .map_err(|e| Error::Layer {
                        index,
                        kind: "conv1d",
                        reason: e.to_string(),
                    })?;
                SeqShape::new(steps, filters)
            }
            LayerSpec::Lstm { hidden } => SeqShape::new(input.steps, hidden),
            LayerSpec::BiLstm { hidden } => SeqShape::new(input.steps, 2 * hidden),
            LayerSpec::Flatten => SeqShape::new(1, input.width()),
        })
    }
}

/// Per-sample tensor shape `[n_s, n_i]`. Flat vectors use `steps == 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeqShape {
    pub steps: usize,
    pub features: usize,
}

impl SeqShape {
    pub fn new(steps: usize, features: usize) -> Self {
        SeqShape { steps, features }
    }

    pub fn width(&self) -> usize {
        self.steps * self.features
    }
}

impl std::fmt::Display for SeqShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.steps, self.features)
    }
}

/// Batched shape `[B, n_s, n_i]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub batch: usize,
    pub steps: usize,
    pub features: usize,
}

impl TensorShape {
    pub fn new(batch: usize, steps: usize, features: usize) -> Result<Self> {
        if batch == 0 || steps == 0 || features == 0 {
            return Err(config(format!(
                "tensor dimensions must be >= 1, got [{batch}, {steps}, {features}]"
            )));
        }
        Ok(TensorShape {
            batch,
            steps,
            features,
        })
    }

    pub fn per_sample(&self) -> SeqShape {
        SeqShape::new(self.steps, self.features)
    }

    pub fn len(&self) -> usize {
        self.batch * self.steps * self.features
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Model input window: `memory` symbols with `features` reals each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputSpec {
    pub memory: usize,
    pub features: usize,
}

/// An ordered layer stack with its input window and final output width.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: InputSpec,
    pub output: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        spec.shapes()?;
        Ok(spec)
    }

    pub fn input_shape(&self) -> SeqShape {
        SeqShape::new(self.input.memory, self.input.features)
    }

    /// Shapes at every layer boundary: `shapes[0]` is the input, `shapes[i+1]`
    /// the output of layer `i`.
    pub fn shapes(&self) -> Result<Vec<SeqShape>> {
        if self.input.memory == 0 || self.input.features == 0 {
            return Err(config("input memory and features must be >= 1"));
        }
        if self.output == 0 {
            return Err(config("output width must be >= 1"));
        }
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut current = self.input_shape();
        shapes.push(current);
        for (index, layer) in self.layers.iter().enumerate() {
            current = layer.output_shape(index, current)?;
            shapes.push(current);
        }
        if current.width() != self.output {
            return Err(Error::Shape {
                expected: format!("final output width {}", self.output),
                actual: format!("{current} (width {})", current.width()),
            });
        }
        Ok(shapes)
    }
}

/// Per-layer line of an [`RmpsReport`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerReport {
    pub index: usize,
    pub kind: String,
    pub input: SeqShape,
    pub output: SeqShape,
    pub rmps: u64,
    pub params: u64,
    pub big_o: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RmpsReport {
    pub layers: Vec<LayerReport>,
    pub total_rmps: u64,
    pub params: u64,
}

impl RmpsReport {
    /// One line per layer plus a total, for terminal output.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<3} {:<8} {:<12} {:<12} {:>14} {:>12}  {}\n",
            "#", "layer", "input", "output", "rmps", "params", "big-o"
        );
        for l in &self.layers {
            out.push_str(&format!(
                "{:<3} {:<8} {:<12} {:<12} {:>14} {:>12}  {}\n",
                l.index,
                l.kind,
                l.input.to_string(),
                l.output.to_string(),
                l.rmps,
                l.params,
                l.big_o
            ));
        }
        out.push_str(&format!(
            "{:<3} {:<8} {:<12} {:<12} {:>14} {:>12}\n",
            "", "total", "", "", self.total_rmps, self.params
        ));
        out
    }
}

fn mul(values: &[usize]) -> Result<u64> {
    values.iter().try_fold(1u64, |acc, &v| {
        acc.checked_mul(v as u64)
            .ok_or_else(|| Error::Numerical("multiplication count overflows u64".into()))
    })
}

fn add(a: u64, b: u64) -> Result<u64> {
    a.checked_add(b)
        .ok_or_else(|| Error::Numerical("multiplication count overflows u64".into()))
}

fn require_positive(op: &str, values: &[(&str, usize)]) -> Result<()> {
    for (name, v) in values {
        if *v == 0 {
            return Err(config(format!("{op}: {name} must be >= 1")));
        }
    }
    Ok(())
}

/// Output length of a 1-D convolution.
pub fn conv_output_length(
    steps: usize,
    kernel: usize,
    padding: usize,
    dilation: usize,
    stride: usize,
) -> Result<usize> {
    require_positive(
        "conv_output_length",
        &[
            ("n_s", steps),
            ("kernel", kernel),
            ("dilation", dilation),
            ("stride", stride),
        ],
    )?;
    let effective = dilation * (kernel - 1) + 1;
    let padded = steps + 2 * padding;
    if effective > padded {
        return Err(config(format!(
            "effective kernel {effective} exceeds padded length {padded}"
        )));
    }
    Ok((padded - effective) / stride + 1)
}

/// Dense block with one hidden layer: `n_i*n_1 + n_1*n_o`.
pub fn rmps_dense(inputs: usize, hidden: usize, outputs: usize) -> Result<u64> {
    require_positive(
        "rmps_dense",
        &[("n_i", inputs), ("n_1", hidden), ("n_o", outputs)],
    )?;
    add(mul(&[inputs, hidden])?, mul(&[hidden, outputs])?)
}

/// 1-D convolution: `k * n_i * n_o * n_s'` where `n_o` is the filter count.
pub fn rmps_conv1d(kernel: usize, inputs: usize, filters: usize, out_steps: usize) -> Result<u64> {
    require_positive(
        "rmps_conv1d",
        &[
            ("kernel", kernel),
            ("n_i", inputs),
            ("n_o", filters),
            ("n_s'", out_steps),
        ],
    )?;
    mul(&[kernel, inputs, filters, out_steps])
}

fn lstm_core(steps: usize, inputs: usize, hidden: usize, projection: usize) -> Result<u64> {
    let per_unit = 4 * inputs + 4 * hidden + 3 + projection;
    mul(&[steps, hidden, per_unit])
}

/// Unidirectional LSTM with a per-step projection to `n_o` outputs:
/// `n_s * n_h * (4 n_i + 4 n_h + 3 + n_o)`.
pub fn rmps_lstm(steps: usize, inputs: usize, hidden: usize, outputs: usize) -> Result<u64> {
    require_positive(
        "rmps_lstm",
        &[
            ("n_s", steps),
            ("n_i", inputs),
            ("n_h", hidden),
            ("n_o", outputs),
        ],
    )?;
    lstm_core(steps, inputs, hidden, outputs)
}

/// Bidirectional LSTM: two independent directions of `n_h` units each.
pub fn rmps_bilstm(steps: usize, inputs: usize, hidden: usize, outputs: usize) -> Result<u64> {
    let one = rmps_lstm(steps, inputs, hidden, outputs)?;
    mul(&[one as usize, 2])
}

/// Multiplications a single layer performs on its actual input shape.
/// Recurrent layers are charged without any output projection.
pub fn layer_rmps(layer: &LayerSpec, input: SeqShape, output: SeqShape) -> Result<u64> {
    match *layer {
        LayerSpec::Dense { units, .. } => mul(&[input.width(), units]),
        LayerSpec::Conv1d {
            filters, kernel, ..
        } => mul(&[kernel, input.features, filters, output.steps]),
        LayerSpec::Lstm { hidden } => lstm_core(input.steps, input.features, hidden, 0),
        LayerSpec::BiLstm { hidden } => add(
            lstm_core(input.steps, input.features, hidden, 0)?,
            lstm_core(input.steps, input.features, hidden, 0)?,
        ),
        LayerSpec::Flatten => Ok(0),
    }
}

/// Trainable weights plus biases of one layer.
pub fn layer_params(layer: &LayerSpec, input: SeqShape) -> Result<u64> {
    match *layer {
        LayerSpec::Dense { units, .. } => add(mul(&[input.width(), units])?, units as u64),
        LayerSpec::Conv1d {
            filters, kernel, ..
        } => add(mul(&[kernel, input.features, filters])?, filters as u64),
        LayerSpec::Lstm { hidden } => lstm_params(input.features, hidden),
        LayerSpec::BiLstm { hidden } => mul(&[lstm_params(input.features, hidden)? as usize, 2]),
        LayerSpec::Flatten => Ok(0),
    }
}

fn lstm_params(inputs: usize, hidden: usize) -> Result<u64> {
    mul(&[4, inputs * hidden + hidden * hidden + hidden])
}

/// Asymptotic cost tag for a layer kind.
pub fn big_o(layer: &LayerSpec) -> &'static str {
    match layer {
        LayerSpec::Lstm { .. } | LayerSpec::BiLstm { .. } => "O(n d²)",
        LayerSpec::Conv1d { .. } => "O(k n d²)",
        LayerSpec::Dense { .. } => "O(n d)",
        LayerSpec::Flatten => "O(1)",
    }
}

/// Full multiplication and parameter accounting for a model.
pub fn rmps_model(model: &ModelSpec) -> Result<RmpsReport> {
    let shapes = model.shapes()?;
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut total = 0u64;
    let mut params = 0u64;
    for (index, layer) in model.layers.iter().enumerate() {
        let (input, output) = (shapes[index], shapes[index + 1]);
        let rmps = layer_rmps(layer, input, output)?;
        let p = layer_params(layer, input)?;
        total = add(total, rmps)?;
        params = add(params, p)?;
        layers.push(LayerReport {
            index,
            kind: layer.kind_name().to_string(),
            input,
            output,
            rmps,
            params: p,
            big_o: big_o(layer).to_string(),
        });
    }
    Ok(RmpsReport {
        layers,
        total_rmps: total,
        params,
    })
}

pub fn param_count(model: &ModelSpec) -> Result<u64> {
    Ok(rmps_model(model)?.params)
}
