//! Compiled operators and the evaluation loop.

use ndarray::{Array1, Array2, Array3, Array4, Axis};

use super::format::{LayerDef, TensorDef};
use crate::error::{Error, Result};

/// Intermediate value flowing between operators.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Value {
    /// `channels × height × width`
    Map(Array3<f64>),
    Flat(Array1<f64>),
}

/// Static shape of a [`Value`], used for load-time validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Shape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    /// `out × in × kh × kw`
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
    pub padding: usize,
    pub relu: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub relu: bool,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Conv2d(Conv2d),
    Dense(Dense),
    Relu,
    MaxPool { kernel: usize, stride: usize },
    GlobalAvgPool,
    Flatten,
}

#[derive(Debug, Clone)]
pub(crate) struct Layer {
    pub name: String,
    pub op: Op,
}

impl Layer {
    pub fn is_conv(&self) -> bool {
        matches!(self.op, Op::Conv2d(_))
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self.op, Op::Conv2d(_) | Op::Dense(_))
    }
}

fn malformed(layer: &str, msg: impl std::fmt::Display) -> Error {
    Error::MalformedGraph(format!("layer `{layer}`: {msg}"))
}

fn tensor_len_ok(t: &TensorDef) -> bool {
    t.shape.iter().product::<usize>() == t.data.len()
}

fn activation_flag(def: &LayerDef) -> Result<bool> {
    match def.activation.as_deref() {
        None | Some("none") | Some("linear") => Ok(false),
        Some("relu") => Ok(true),
        Some(other) => Err(Error::UnsupportedOperator(format!("activation {other}"))),
    }
}

fn bias_or_zeros(def: &LayerDef, out: usize) -> Result<Array1<f64>> {
    match &def.bias {
        None => Ok(Array1::zeros(out)),
        Some(b) if b.shape == [out] && tensor_len_ok(b) => Ok(Array1::from(b.data.clone())),
        Some(b) => Err(malformed(&def.name, format!("bias shape {:?}, expected [{out}]", b.shape))),
    }
}

impl Layer {
    /// Builds a layer from its definition and checks it against the incoming shape.
    /// Returns the layer and its output shape.
    pub fn compile(def: &LayerDef, input: Shape) -> Result<(Layer, Shape)> {
        let name = def.name.clone();
        let (op, out) = match def.op.as_str() {
            "conv2d" => {
                let w = def.weight.as_ref().ok_or_else(|| malformed(&name, "missing weight"))?;
                if w.shape.len() != 4 || !tensor_len_ok(w) {
                    return Err(malformed(&name, format!("conv weight shape {:?}", w.shape)));
                }
                let (oc, ic, kh, kw) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
                let Shape::Map { c, h, w: width } = input else {
                    return Err(malformed(&name, "conv2d needs a spatial input"));
                };
                if ic != c || oc == 0 || kh == 0 || kw == 0 {
                    return Err(malformed(&name, format!("expects {ic} input channels, got {c}")));
                }
                let stride = def.stride.unwrap_or(1);
                let padding = def.padding.unwrap_or(0);
                if stride == 0 || h + 2 * padding < kh || width + 2 * padding < kw {
                    return Err(malformed(&name, "kernel does not fit input"));
                }
                let oh = (h + 2 * padding - kh) / stride + 1;
                let ow = (width + 2 * padding - kw) / stride + 1;
                let weight = Array4::from_shape_vec((oc, ic, kh, kw), w.data.clone())
                    .map_err(|e| malformed(&name, e))?;
                let conv = Conv2d { weight, bias: bias_or_zeros(def, oc)?, stride, padding, relu: activation_flag(def)? };
                (Op::Conv2d(conv), Shape::Map { c: oc, h: oh, w: ow })
            }
            "dense" => {
                let w = def.weight.as_ref().ok_or_else(|| malformed(&name, "missing weight"))?;
                if w.shape.len() != 2 || !tensor_len_ok(w) {
                    return Err(malformed(&name, format!("dense weight shape {:?}", w.shape)));
                }
                let (out_f, in_f) = (w.shape[0], w.shape[1]);
                let Shape::Flat(n) = input else {
                    return Err(malformed(&name, "dense needs a flat input"));
                };
                if n != in_f || out_f == 0 {
                    return Err(malformed(&name, format!("expects {in_f} inputs, got {n}")));
                }
                let weight = Array2::from_shape_vec((out_f, in_f), w.data.clone()).map_err(|e| malformed(&name, e))?;
                let dense = Dense { weight, bias: bias_or_zeros(def, out_f)?, relu: activation_flag(def)? };
                (Op::Dense(dense), Shape::Flat(out_f))
            }
            "relu" => (Op::Relu, input),
            "max_pool2d" => {
                let kernel = def.kernel.ok_or_else(|| malformed(&name, "missing kernel"))?;
                let stride = def.stride.unwrap_or(kernel);
                let Shape::Map { c, h, w } = input else {
                    return Err(malformed(&name, "max_pool2d needs a spatial input"));
                };
                if kernel == 0 || stride == 0 || kernel > h || kernel > w {
                    return Err(malformed(&name, "pool window does not fit input"));
                }
                (Op::MaxPool { kernel, stride }, Shape::Map { c, h: (h - kernel) / stride + 1, w: (w - kernel) / stride + 1 })
            }
            "global_avg_pool" => match input {
                Shape::Map { c, .. } => (Op::GlobalAvgPool, Shape::Flat(c)),
                Shape::Flat(_) => return Err(malformed(&name, "global_avg_pool needs a spatial input")),
            },
            "flatten" => match input {
                Shape::Map { c, h, w } => (Op::Flatten, Shape::Flat(c * h * w)),
                flat => (Op::Flatten, flat),
            },
            other => return Err(Error::UnsupportedOperator(other.to_string())),
        };
        Ok((Layer { name, op }, out))
    }

    pub fn to_def(&self) -> LayerDef {
        match &self.op {
            Op::Conv2d(c) => {
                let mut def = LayerDef::conv2d(
                    &self.name,
                    TensorDef::new(c.weight.shape().to_vec(), c.weight.iter().copied().collect()),
                    Some(TensorDef::new(vec![c.bias.len()], c.bias.to_vec())),
                    c.padding,
                    c.relu,
                );
                def.stride = Some(c.stride);
                def
            }
            Op::Dense(d) => LayerDef::dense(
                &self.name,
                TensorDef::new(d.weight.shape().to_vec(), d.weight.iter().copied().collect()),
                Some(TensorDef::new(vec![d.bias.len()], d.bias.to_vec())),
                d.relu,
            ),
            Op::Relu => LayerDef::op(&self.name, "relu"),
            Op::MaxPool { kernel, stride } => {
                let mut def = LayerDef::max_pool(&self.name, *kernel);
                def.stride = Some(*stride);
                def
            }
            Op::GlobalAvgPool => LayerDef::op(&self.name, "global_avg_pool"),
            Op::Flatten => LayerDef::op(&self.name, "flatten"),
        }
    }

    pub fn apply(&self, v: Value) -> Value {
        match (&self.op, v) {
            (Op::Conv2d(c), Value::Map(x)) => Value::Map(conv2d(c, &x)),
            (Op::Dense(d), Value::Flat(x)) => {
                let mut y = d.weight.dot(&x) + &d.bias;
                if d.relu {
                    y.mapv_inplace(relu);
                }
                Value::Flat(y)
            }
            (Op::Relu, Value::Map(x)) => Value::Map(x.mapv(relu)),
            (Op::Relu, Value::Flat(x)) => Value::Flat(x.mapv(relu)),
            (Op::MaxPool { kernel, stride }, Value::Map(x)) => Value::Map(max_pool(&x, *kernel, *stride)),
            (Op::GlobalAvgPool, Value::Map(x)) => {
                Value::Flat(x.mean_axis(Axis(2)).and_then(|m| m.mean_axis(Axis(1))).expect("non-empty map"))
            }
            (Op::Flatten, Value::Map(x)) => Value::Flat(Array1::from_iter(x.iter().copied())),
            (Op::Flatten, flat @ Value::Flat(_)) => flat,
            // Shapes are validated at compile time.
            (op, _) => unreachable!("operator {op:?} applied to incompatible value"),
        }
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn conv2d(c: &Conv2d, x: &Array3<f64>) -> Array3<f64> {
    let (oc, ic, kh, kw) = c.weight.dim();
    let (_, h, w) = x.dim();
    let pad = c.padding as isize;
    let oh = (h + 2 * c.padding - kh) / c.stride + 1;
    let ow = (w + 2 * c.padding - kw) / c.stride + 1;
    let mut out = Array3::<f64>::zeros((oc, oh, ow));
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = c.bias[o];
                for i in 0..ic {
                    for ky in 0..kh {
                        let iy = (oy * c.stride + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * c.stride + kx) as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += c.weight[[o, i, ky, kx]] * x[[i, iy as usize, ix as usize]];
                        }
                    }
                }
                out[[o, oy, ox]] = if c.relu { relu(acc) } else { acc };
            }
        }
    }
    out
}

fn max_pool(x: &Array3<f64>, kernel: usize, stride: usize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    Array3::from_shape_fn((c, oh, ow), |(ch, oy, ox)| {
        let mut m = f64::NEG_INFINITY;
        for ky in 0..kernel {
            for kx in 0..kernel {
                m = m.max(x[[ch, oy * stride + ky, ox * stride + kx]]);
            }
        }
        m
    })
}
