//! Model loading, inference and activation capture.
//!
//! A [`ModelHandle`] is immutable and cheap to clone; any change (such as
//! weight randomization) produces a new handle.

mod format;
mod graph;

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use format::{InputSpec, LayerDef, ModelFile, OutputSpec, TensorDef, FORMAT_TAG, FORMAT_VERSION};
use graph::{Layer, Op, Shape, Value};

use crate::error::{Error, Result};
use crate::image::{FloatImage, Image};
use crate::plane::Plane;

/// Per-class model outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    values: Vec<f64>,
    softmax: bool,
}

impl Scores {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Whether a softmax was applied to raw logits.
    pub fn is_softmax(&self) -> bool {
        self.softmax
    }

    pub fn get(&self, class: usize) -> Result<f64> {
        self.values
            .get(class)
            .copied()
            .ok_or(Error::ClassOutOfRange { class, classes: self.values.len() })
    }

    /// Index of the largest score; the first one wins ties.
    pub fn argmax(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// The `K` output channels of one layer for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStack {
    layer: String,
    planes: Vec<Plane>,
}

impl ActivationStack {
    pub fn new(layer: impl Into<String>, planes: Vec<Plane>) -> Result<Self> {
        let first = planes.first().ok_or(Error::Empty("activation stack"))?;
        let dims = (first.width(), first.height());
        if let Some(p) = planes.iter().find(|p| (p.width(), p.height()) != dims) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", dims.0, dims.1),
                actual: format!("{}x{}", p.width(), p.height()),
            });
        }
        Ok(Self { layer: layer.into(), planes })
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn plane(&self, k: usize) -> &Plane {
        &self.planes[k]
    }

    fn from_value(layer: &str, v: &Value) -> Result<Self> {
        let planes = match v {
            Value::Map(x) => x
                .outer_iter()
                .map(|ch| Plane::new(ch.to_owned()))
                .collect::<Result<Vec<_>>>()?,
            Value::Flat(x) => x.iter().map(|&s| Plane::filled(1, 1, s)).collect::<Result<Vec<_>>>()?,
        };
        Self::new(layer, planes)
    }

    fn to_map(&self) -> Array3<f64> {
        let (k, h, w) = (self.channels(), self.height(), self.width());
        Array3::from_shape_fn((k, h, w), |(c, y, x)| self.planes[c].get(x, y))
    }
}

/// Output of [`ModelHandle::preprocess`].
#[derive(Debug, Clone)]
pub struct Preprocessed {
    /// The input resized to the model's resolution, before normalization.
    /// This is the image the gray-scale reference is taken from.
    pub image: Image,
    /// Normalized `channels × height × width` network input.
    pub tensor: Array3<f64>,
}

#[derive(Debug)]
struct Inner {
    id: String,
    name: String,
    input: InputSpec,
    output: OutputSpec,
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
}

/// A loaded, validated classifier.
#[derive(Debug, Clone)]
pub struct ModelHandle {
    inner: Arc<Inner>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl ModelHandle {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::MalformedGraph(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.format != FORMAT_TAG {
            return Err(Error::MalformedGraph(format!("unknown format tag `{}`", file.format)));
        }
        if file.version != FORMAT_VERSION {
            return Err(Error::MalformedGraph(format!("unsupported format version {}", file.version)));
        }
        let spec = &file.input;
        if spec.width == 0 || spec.height == 0 {
            return Err(Error::MalformedGraph("input dimensions must be >= 1".into()));
        }
        if spec.channels != 1 && spec.channels != 3 {
            return Err(Error::MalformedGraph(format!("{} input channels", spec.channels)));
        }
        if spec.mean.len() != spec.channels || spec.std.len() != spec.channels {
            return Err(Error::MalformedGraph("normalization constants must match channel count".into()));
        }
        if spec.std.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::MalformedGraph("normalization std must be positive".into()));
        }
        let mut seen = HashSet::new();
        let mut layers = Vec::with_capacity(file.layers.len());
        let mut shapes = Vec::with_capacity(file.layers.len());
        let mut shape = Shape::Map { c: spec.channels, h: spec.height, w: spec.width };
        for def in &file.layers {
            if !seen.insert(def.name.clone()) {
                return Err(Error::MalformedGraph(format!("duplicate layer name `{}`", def.name)));
            }
            let (layer, out) = Layer::compile(def, shape)?;
            layers.push(layer);
            shapes.push(out);
            shape = out;
        }
        match shape {
            Shape::Flat(n) if n == file.output.classes => {}
            other => {
                return Err(Error::MalformedGraph(format!(
                    "graph output {other:?} does not match {} classes",
                    file.output.classes
                )))
            }
        }
        let canonical = serde_json::to_vec(&file)?;
        let id = format!("{}-{:016x}", file.name, fnv1a(&canonical));
        Ok(Self {
            inner: Arc::new(Inner { id, name: file.name, input: file.input, output: file.output, layers, shapes }),
        })
    }

    /// Serializable description of this handle, including current weights.
    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            name: self.inner.name.clone(),
            input: self.inner.input.clone(),
            output: self.inner.output.clone(),
            layers: self.inner.layers.iter().map(Layer::to_def).collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_file())?)?;
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.inner.id
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn input_spec(&self) -> &InputSpec {
        &self.inner.input
    }

    pub fn class_count(&self) -> usize {
        self.inner.output.classes
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.inner.layers.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn conv_layer_names(&self) -> Vec<&str> {
        self.inner.layers.iter().filter(|l| l.is_conv()).map(|l| l.name.as_str()).collect()
    }

    /// Names of conv and dense layers, shallowest first.
    pub fn parameterized_layer_names(&self) -> Vec<&str> {
        self.inner.layers.iter().filter(|l| l.is_parameterized()).map(|l| l.name.as_str()).collect()
    }

    /// Default explanation target.
    pub fn last_conv_layer(&self) -> Option<&str> {
        self.inner.layers.iter().rev().find(|l| l.is_conv()).map(|l| l.name.as_str())
    }

    fn layer_index(&self, name: &str) -> Result<usize> {
        self.inner
            .layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    /// Number of channels the named layer emits.
    pub fn layer_channels(&self, name: &str) -> Result<usize> {
        Ok(match self.inner.shapes[self.layer_index(name)?] {
            Shape::Map { c, .. } => c,
            Shape::Flat(n) => n,
        })
    }

    /// Resizes to the model resolution and normalizes.
    pub fn preprocess(&self, img: &Image) -> Result<Preprocessed> {
        let spec = &self.inner.input;
        let resized = img.resize(spec.width, spec.height)?;
        let resized = match (resized.channels(), spec.channels) {
            (1, 3) => resized.to_rgb(),
            (3, 1) => crate::mi::grayscale(&resized).and_then(|g| {
                Image::new(
                    g.width(),
                    g.height(),
                    crate::image::ColorSpace::Gray,
                    g.values().iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect(),
                )
            })?,
            _ => resized,
        };
        let tensor = self.normalize(&resized.to_float())?;
        Ok(Preprocessed { image: resized, tensor })
    }

    fn normalize(&self, px: &FloatImage) -> Result<Array3<f64>> {
        let spec = &self.inner.input;
        if (px.width, px.height, px.channels) != (spec.width, spec.height, spec.channels) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}x{}", spec.width, spec.height, spec.channels),
                actual: format!("{}x{}x{}", px.width, px.height, px.channels),
            });
        }
        let c = spec.channels;
        Ok(Array3::from_shape_fn((c, spec.height, spec.width), |(ch, y, x)| {
            (px.data[(y * spec.width + x) * c + ch] / 255.0 - spec.mean[ch]) / spec.std[ch]
        }))
    }

    fn finish(&self, v: Value) -> Scores {
        let Value::Flat(raw) = v else { unreachable!("validated graph ends flat") };
        let raw = raw.to_vec();
        if self.inner.output.logits {
            Scores { values: softmax(&raw), softmax: true }
        } else {
            Scores { values: raw, softmax: false }
        }
    }

    fn run(&self, px: &FloatImage, capture: Option<usize>) -> Result<(Scores, Option<ActivationStack>)> {
        let mut v = Value::Map(self.normalize(px)?);
        let mut captured = None;
        for (i, layer) in self.inner.layers.iter().enumerate() {
            v = layer.apply(v);
            if capture == Some(i) {
                captured = Some(ActivationStack::from_value(&layer.name, &v)?);
            }
        }
        Ok((self.finish(v), captured))
    }

    /// Class scores for an arbitrary image (resized to the model resolution).
    pub fn forward(&self, img: &Image) -> Result<Scores> {
        self.forward_pixels(&self.preprocess(img)?.image.to_float())
    }

    /// Class scores for pixels already at the model resolution, in 8-bit units.
    pub fn forward_pixels(&self, px: &FloatImage) -> Result<Scores> {
        Ok(self.run(px, None)?.0)
    }

    pub fn capture_activations(&self, img: &Image, layer: &str) -> Result<ActivationStack> {
        self.capture_pixels(&self.preprocess(img)?.image.to_float(), layer).map(|(_, s)| s)
    }

    /// Scores and the named layer's activations from one pass.
    pub fn capture_pixels(&self, px: &FloatImage, layer: &str) -> Result<(Scores, ActivationStack)> {
        let idx = self.layer_index(layer)?;
        let (scores, stack) = self.run(px, Some(idx))?;
        Ok((scores, stack.expect("captured layer index is in range")))
    }

    /// Runs the layers after `stack.layer()` on the given activations.
    pub fn forward_from(&self, stack: &ActivationStack) -> Result<Scores> {
        let idx = self.layer_index(stack.layer())?;
        let mut v = match self.inner.shapes[idx] {
            Shape::Map { c, h, w } => {
                if (stack.channels(), stack.height(), stack.width()) != (c, h, w) {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{c}x{h}x{w}"),
                        actual: format!("{}x{}x{}", stack.channels(), stack.height(), stack.width()),
                    });
                }
                Value::Map(stack.to_map())
            }
            Shape::Flat(n) => {
                if stack.channels() != n || stack.width() * stack.height() != 1 {
                    return Err(Error::ShapeMismatch { expected: format!("{n}"), actual: format!("{}", stack.channels()) });
                }
                Value::Flat(Array1::from_iter(stack.planes().iter().map(|p| p.get(0, 0))))
            }
        };
        for layer in &self.inner.layers[idx + 1..] {
            v = layer.apply(v);
        }
        Ok(self.finish(v))
    }

    /// Copy of this model whose `from_top` deepest parameterized layers have
    /// their weight and bias tensors redrawn from `N(mean, std)` of each
    /// original tensor.
    ///
    /// Each layer draws from its own stream derived from `seed`, so a deeper
    /// cascade extends a shallower one without changing it.
    pub fn randomize_cascade(&self, from_top: usize, seed: u64) -> Result<ModelHandle> {
        let param_idx: Vec<usize> = (0..self.inner.layers.len())
            .filter(|&i| self.inner.layers[i].is_parameterized())
            .collect();
        if from_top == 0 || from_top > param_idx.len() {
            return Err(Error::InvalidArgument(format!(
                "cascade depth {from_top} outside 1..={}",
                param_idx.len()
            )));
        }
        let mut layers = self.inner.layers.clone();
        for (rank, &i) in param_idx.iter().rev().take(from_top).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (rank as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            match &mut layers[i].op {
                Op::Conv2d(c) => {
                    redraw(c.weight.as_slice_mut().expect("standard layout"), &mut rng);
                    redraw(c.bias.as_slice_mut().expect("standard layout"), &mut rng);
                }
                Op::Dense(d) => {
                    redraw(d.weight.as_slice_mut().expect("standard layout"), &mut rng);
                    redraw(d.bias.as_slice_mut().expect("standard layout"), &mut rng);
                }
                _ => unreachable!("filtered to parameterized layers"),
            }
        }
        Ok(Self {
            inner: Arc::new(Inner {
                id: format!("{}+cascade{from_top}@{seed}", self.inner.id),
                name: self.inner.name.clone(),
                input: self.inner.input.clone(),
                output: self.inner.output.clone(),
                layers,
                shapes: self.inner.shapes.clone(),
            }),
        })
    }
}

fn redraw(values: &mut [f64], rng: &mut ChaCha8Rng) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std > 0.0 {
        let normal = Normal::new(mean, std).expect("finite positive std");
        values.iter_mut().for_each(|v| *v = normal.sample(rng));
    } else {
        values.fill(mean);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[101.0, 102.0, 103.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_first_wins() {
        let s = Scores { values: vec![0.2, 0.4, 0.4], softmax: false };
        assert_eq!(s.argmax(), 1);
        assert!(s.get(3).is_err());
    }

    #[test]
    fn stack_rejects_mixed_dims() {
        let a = Plane::filled(2, 2, 0.0).unwrap();
        let b = Plane::filled(3, 2, 0.0).unwrap();
        assert!(ActivationStack::new("l", vec![a, b]).is_err());
        assert!(ActivationStack::new("l", vec![]).is_err());
    }
}
