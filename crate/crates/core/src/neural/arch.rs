//! The four equalizer families and their free hyperparameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::complexity::{Activation, InputSpec, LayerSpec, ModelSpec};
use crate::error::{config, Error, Result};

/// Reals per received symbol: Re/Im of X and Y.
pub const INPUT_FEATURES: usize = 4;
/// Reals per recovered symbol: Re/Im of one polarization.
pub const OUTPUT_WIDTH: usize = 2;
pub const DEFAULT_MEMORY: usize = 41;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Mlp,
    CnnMlp,
    Bilstm,
    CnnBilstm,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Mlp,
        Family::CnnMlp,
        Family::Bilstm,
        Family::CnnBilstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Mlp => "mlp",
            Family::CnnMlp => "cnn-mlp",
            Family::Bilstm => "bilstm",
            Family::CnnBilstm => "cnn-bilstm",
        }
    }

    /// Names of the free hyperparameters, in [`Architecture::values`] order.
    pub fn hyperparameters(self) -> &'static [&'static str] {
        match self {
            Family::Mlp => &["n1", "n2", "n3"],
            Family::CnnMlp => &["filters", "kernel", "n1", "n2"],
            Family::Bilstm => &["hidden"],
            Family::CnnBilstm => &["filters", "kernel", "hidden"],
        }
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, Family::Bilstm | Family::CnnBilstm)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                config(format!(
                    "unknown family {s:?}; expected mlp, cnn-mlp, bilstm or cnn-bilstm"
                ))
            })
    }
}

/// A concrete member of one family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Architecture {
    Mlp {
        n1: usize,
        n2: usize,
        n3: usize,
    },
    CnnMlp {
        filters: usize,
        kernel: usize,
        n1: usize,
        n2: usize,
    },
    Bilstm {
        hidden: usize,
    },
    CnnBilstm {
        filters: usize,
        kernel: usize,
        hidden: usize,
    },
}

impl Architecture {
    pub fn family(&self) -> Family {
        match self {
            Architecture::Mlp { .. } => Family::Mlp,
            Architecture::CnnMlp { .. } => Family::CnnMlp,
            Architecture::Bilstm { .. } => Family::Bilstm,
            Architecture::CnnBilstm { .. } => Family::CnnBilstm,
        }
    }

    pub fn values(&self) -> Vec<usize> {
        match *self {
            Architecture::Mlp { n1, n2, n3 } => vec![n1, n2, n3],
            Architecture::CnnMlp {
                filters,
                kernel,
                n1,
                n2,
            } => vec![filters, kernel, n1, n2],
            Architecture::Bilstm { hidden } => vec![hidden],
            Architecture::CnnBilstm {
                filters,
                kernel,
                hidden,
            } => vec![filters, kernel, hidden],
        }
    }

    pub fn from_values(family: Family, v: &[usize]) -> Result<Self> {
        if v.len() != family.hyperparameters().len() {
            return Err(config(format!(
                "{family} takes {} hyperparameters, got {}",
                family.hyperparameters().len(),
                v.len()
            )));
        }
        Ok(match family {
            Family::Mlp => Architecture::Mlp {
                n1: v[0],
                n2: v[1],
                n3: v[2],
            },
            Family::CnnMlp => Architecture::CnnMlp {
                filters: v[0],
                kernel: v[1],
                n1: v[2],
                n2: v[3],
            },
            Family::Bilstm => Architecture::Bilstm { hidden: v[0] },
            Family::CnnBilstm => Architecture::CnnBilstm {
                filters: v[0],
                kernel: v[1],
                hidden: v[2],
            },
        })
    }

    /// Layer stack over a `memory`-symbol window. Hidden dense and conv
    /// layers use LeakyReLU; the output layer is linear.
    pub fn model_spec(&self, memory: usize) -> Result<ModelSpec> {
        let leaky = Activation::LeakyRelu;
        let head = LayerSpec::dense(OUTPUT_WIDTH, Activation::Linear);
        let layers = match *self {
            Architecture::Mlp { n1, n2, n3 } => vec![
                LayerSpec::dense(n1, leaky),
                LayerSpec::dense(n2, leaky),
                LayerSpec::dense(n3, leaky),
                head,
            ],
            Architecture::CnnMlp {
                filters,
                kernel,
                n1,
                n2,
            } => {
                check_kernel(kernel)?;
                vec![
                    LayerSpec::conv_same(filters, kernel, leaky),
                    LayerSpec::Flatten,
                    LayerSpec::dense(n1, leaky),
                    LayerSpec::dense(n2, leaky),
                    head,
                ]
            }
            Architecture::Bilstm { hidden } => {
                vec![LayerSpec::BiLstm { hidden }, LayerSpec::Flatten, head]
            }
            Architecture::CnnBilstm {
                filters,
                kernel,
                hidden,
            } => {
                check_kernel(kernel)?;
                vec![
                    LayerSpec::conv_same(filters, kernel, leaky),
                    LayerSpec::BiLstm { hidden },
                    LayerSpec::Flatten,
                    head,
                ]
            }
        };
        let spec = ModelSpec {
            input: InputSpec {
                memory,
                features: INPUT_FEATURES,
            },
            output: OUTPUT_WIDTH,
            layers,
        };
        spec.shapes()?;
        Ok(spec)
    }
}

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel.is_multiple_of(2) {
        return Err(config(format!(
            "kernel {kernel} must be odd for centered padding"
        )));
    }
    Ok(())
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fam = self.family();
        let parts: Vec<String> = fam
            .hyperparameters()
            .iter()
            .zip(self.values())
            .map(|(n, v)| format!("{n}={v}"))
            .collect();
        write!(f, "{fam}({})", parts.join(","))
    }
}
