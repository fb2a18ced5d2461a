//! On-disk model description: a JSON document holding an ordered operator
//! list and the weight tensors of each parameterized operator.
//!
//! ```json
//! {
//!   "format": "micam-graph",
//!   "version": 1,
//!   "name": "toy",
//!   "input": { "width": 16, "height": 16, "channels": 3,
//!              "mean": [0.5, 0.5, 0.5], "std": [0.25, 0.25, 0.25] },
//!   "output": { "classes": 3, "logits": true },
//!   "layers": [
//!     { "name": "conv1", "op": "conv2d", "padding": 1, "activation": "relu",
//!       "weight": { "shape": [4, 3, 3, 3], "data": [...] },
//!       "bias": { "shape": [4], "data": [...] } },
//!     { "name": "pool1", "op": "max_pool2d", "kernel": 2 },
//!     { "name": "gap", "op": "global_avg_pool" },
//!     { "name": "fc", "op": "dense", "weight": { "shape": [3, 4], "data": [...] } }
//!   ]
//! }
//! ```
//!
//! Pixels are fed as `(v / 255 − mean[c]) / std[c]`.

use serde::{Deserialize, Serialize};

pub const FORMAT_TAG: &str = "micam-graph";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub input: InputSpec,
    pub output: OutputSpec,
    pub layers: Vec<LayerDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub classes: usize,
    /// Raw outputs are logits and get a softmax applied.
    #[serde(default)]
    pub logits: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDef {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorDef {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self { shape, data }
    }
}

/// One operator. Which optional fields apply depends on `op`:
///
/// | op                | fields                                              |
/// |-------------------|-----------------------------------------------------|
/// | `conv2d`          | `weight` `[out, in, k, k]`, `bias`, `stride`, `padding`, `activation` |
/// | `dense`           | `weight` `[out, in]`, `bias`, `activation`          |
/// | `relu`            | none                                                |
/// | `max_pool2d`      | `kernel`, `stride` (defaults to `kernel`)           |
/// | `global_avg_pool` | none                                                |
/// | `flatten`         | none                                                |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDef {
    pub name: String,
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<TensorDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<TensorDef>,
}

impl LayerDef {
    pub fn op(name: impl Into<String>, op: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            op: op.into(),
            kernel: None,
            stride: None,
            padding: None,
            activation: None,
            weight: None,
            bias: None,
        }
    }

    pub fn conv2d(name: impl Into<String>, weight: TensorDef, bias: Option<TensorDef>, padding: usize, relu: bool) -> Self {
        Self {
            padding: Some(padding),
            activation: relu.then(|| "relu".to_string()),
            weight: Some(weight),
            bias,
            ..Self::op(name, "conv2d")
        }
    }

    pub fn dense(name: impl Into<String>, weight: TensorDef, bias: Option<TensorDef>, relu: bool) -> Self {
        Self {
            activation: relu.then(|| "relu".to_string()),
            weight: Some(weight),
            bias,
            ..Self::op(name, "dense")
        }
    }

    pub fn max_pool(name: impl Into<String>, kernel: usize) -> Self {
        Self { kernel: Some(kernel), ..Self::op(name, "max_pool2d") }
    }
}
