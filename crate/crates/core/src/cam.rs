//! Saliency maps from weighted activation channels.
//!
//! MI-CAM weights channel `k` by the mutual information between its upsampled
//! map and the gray-scaled input, then forms `ReLU(Σ_k α_k A_k)`. Score-CAM
//! and Eigen-CAM are provided as gradient-free baselines.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ColorSpace, Image};
use crate::mi::{self, grayscale, quantize};
use crate::model::{softmax, ActivationStack, ModelHandle};
use crate::plane::Plane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MiCam,
    ScoreCam,
    EigenCam,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::MiCam, Method::ScoreCam, Method::EigenCam];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::MiCam => "mi-cam",
            Method::ScoreCam => "score-cam",
            Method::EigenCam => "eigen-cam",
        }
    }

    /// Unit of this method's channel weights.
    pub fn weight_units(self) -> &'static str {
        match self {
            Method::MiCam => "bits",
            Method::ScoreCam => "score-softmax",
            Method::EigenCam => "unitless",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mi-cam" | "micam" | "mi" => Ok(Method::MiCam),
            "score-cam" | "scorecam" | "score" => Ok(Method::ScoreCam),
            "eigen-cam" | "eigencam" | "eigen" => Ok(Method::EigenCam),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// One weight per activation channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    method: Method,
    weights: Vec<f64>,
}

impl WeightVector {
    pub fn new(method: Method, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("weight vector"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("non-finite channel weight".into()));
        }
        if method == Method::MiCam && weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument("mutual information weights must be >= 0".into()));
        }
        Ok(Self { method, weights })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Writes `method,layer,channel,weight` rows.
    pub fn write_csv<W: Write>(&self, layer: &str, mut out: W) -> Result<()> {
        writeln!(out, "method,layer,channel,weight")?;
        for (k, w) in self.weights.iter().enumerate() {
            writeln!(out, "{},{},{},{:e}", self.method, layer, k, w)?;
        }
        Ok(())
    }
}

/// A `[0, 1]` heatmap at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    plane: Plane,
    layer: String,
    method: Method,
}

impl SaliencyMap {
    /// Min–max normalizes `raw` into a map. An all-zero input stays all zero;
    /// any other constant input becomes all ones.
    pub fn from_raw(raw: &Plane, layer: impl Into<String>, method: Method) -> Self {
        let (lo, hi) = raw.min_max();
        let plane = if hi > lo {
            raw.normalized()
        } else if hi > 0.0 {
            Plane::filled(raw.width(), raw.height(), 1.0).expect("non-empty")
        } else {
            Plane::filled(raw.width(), raw.height(), 0.0).expect("non-empty")
        };
        Self { plane, layer: layer.into(), method }
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn width(&self) -> usize {
        self.plane.width()
    }

    pub fn height(&self) -> usize {
        self.plane.height()
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Row-major values.
    pub fn to_vec(&self) -> Vec<f64> {
        self.plane.to_vec()
    }

    pub fn is_zero(&self) -> bool {
        self.plane.values().iter().all(|&v| v == 0.0)
    }

    /// Writes the map as a `height`-row, `width`-column CSV matrix.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.plane.values().rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// 8-bit grayscale rendering of the map.
    pub fn to_gray_image(&self) -> Image {
        Image::new(
            self.width(),
            self.height(),
            ColorSpace::Gray,
            self.plane.values().iter().map(|v| (v * 255.0).round() as u8).collect(),
        )
        .expect("dims come from a valid plane")
    }
}

/// MI-CAM channel weights: `α_k = I(flat(Up(A_k)); flat(Gr(x)))`.
///
/// `x` must be the model-resolution input the stack was captured from.
pub fn mi_weights(stack: &ActivationStack, x: &Image, bins: usize) -> Result<WeightVector> {
    let gray = quantize(&grayscale(x)?, bins)?;
    let (w, h) = (x.width(), x.height());
    let weights = stack
        .planes()
        .par_iter()
        .map(|plane| {
            let act = quantize(&plane.upsample(w, h)?, bins)?;
            mi::mutual_information(&act, &gray)
        })
        .collect::<Result<Vec<_>>>()?;
    WeightVector::new(Method::MiCam, weights)
}

/// `ReLU(Σ_k w_k A_k)` at the stack's resolution, before upsampling.
fn weighted_sum(stack: &ActivationStack, w: &WeightVector) -> Result<Plane> {
    if stack.channels() != w.len() {
        return Err(Error::LengthMismatch { left: stack.channels(), right: w.len() });
    }
    let mut acc = Array2::<f64>::zeros((stack.height(), stack.width()));
    for (plane, &wk) in stack.planes().iter().zip(w.weights()) {
        acc.scaled_add(wk, plane.values());
    }
    Plane::new(acc)
}

/// Weighted channel sum, rectified, upsampled to `out_w × out_h` and
/// normalized to `[0, 1]`.
pub fn combine(stack: &ActivationStack, w: &WeightVector, out_w: usize, out_h: usize) -> Result<SaliencyMap> {
    let rectified = weighted_sum(stack, w)?.map(|v| v.max(0.0))?;
    let up = rectified.upsample(out_w, out_h)?;
    Ok(SaliencyMap::from_raw(&up, stack.layer(), w.method()))
}

/// Score-CAM channel weights.
///
/// Each upsampled channel is min–max scaled to `[0, 1]` and used as a soft
/// mask on `x`; the masked input's score for `class` is recorded and the
/// weights are the softmax of those scores over channels.
pub fn score_cam_weights(m: &ModelHandle, stack: &ActivationStack, x: &Image, class: usize) -> Result<WeightVector> {
    if class >= m.class_count() {
        return Err(Error::ClassOutOfRange { class, classes: m.class_count() });
    }
    let px = x.to_float();
    let c = px.channels;
    let scores = stack
        .planes()
        .par_iter()
        .map(|plane| {
            let mask = plane.upsample(px.width, px.height)?.normalized();
            let mut masked = px.clone();
            for (i, &mv) in mask.values().iter().enumerate() {
                masked.data[i * c..(i + 1) * c].iter_mut().for_each(|v| *v *= mv);
            }
            m.forward_pixels(&masked)?.get(class)
        })
        .collect::<Result<Vec<_>>>()?;
    WeightVector::new(Method::ScoreCam, softmax(&scores))
}

/// First right-singular vector of the `(H'·W') × K` activation matrix,
/// signed so that the projection's largest-magnitude entry is positive.
pub fn eigen_cam_weights(stack: &ActivationStack) -> Result<WeightVector> {
    let n = stack.width() * stack.height();
    let k = stack.channels();
    let columns: Vec<Vec<f64>> = stack.planes().iter().map(Plane::to_vec).collect();
    let matrix = DMatrix::from_fn(n, k, |i, j| columns[j][i]);
    let svd = matrix.clone().try_svd(false, true, f64::EPSILON, 10_000).ok_or(Error::SvdNoConvergence)?;
    let v_t = svd.v_t.as_ref().ok_or(Error::SvdNoConvergence)?;
    let top = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &s)| if s > bv { (i, s) } else { (bi, bv) })
        .0;
    let mut v: Vec<f64> = v_t.row(top).iter().copied().collect();
    let projection = &matrix * DMatrix::from_column_slice(k, 1, &v);
    let pivot = projection
        .iter()
        .copied()
        .fold(0.0f64, |best, p| if p.abs() > best.abs() { p } else { best });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    WeightVector::new(Method::EigenCam, v)
}

/// Eigen-CAM: absolute projection onto the principal component, upsampled
/// and normalized.
pub fn eigen_cam_map(stack: &ActivationStack, out_w: usize, out_h: usize) -> Result<SaliencyMap> {
    let w = eigen_cam_weights(stack)?;
    let magnitude = weighted_sum(stack, &w)?.map(f64::abs)?;
    let up = magnitude.upsample(out_w, out_h)?;
    Ok(SaliencyMap::from_raw(&up, stack.layer(), Method::EigenCam))
}

/// Jet colormap, `v ∈ [0, 1]` to RGB in `[0, 1]`.
pub fn jet(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |offset: f64| (1.5 - (4.0 * v - offset).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Alpha-blends the jet-coloured map over `img` (converted to RGB).
/// `alpha = 0` returns the image, `alpha = 1` the pure colormap.
pub fn render_overlay(img: &Image, s: &SaliencyMap, alpha: f64) -> Result<Image> {
    if (img.width(), img.height()) != (s.width(), s.height()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", img.width(), img.height()),
            actual: format!("{}x{}", s.width(), s.height()),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let rgb = img.to_rgb();
    let data = rgb
        .data()
        .chunks_exact(3)
        .zip(s.plane().values().iter())
        .flat_map(|(px, &v)| {
            let color = jet(v);
            (0..3).map(move |c| ((1.0 - alpha) * f64::from(px[c]) + alpha * 255.0 * color[c]).round().clamp(0.0, 255.0) as u8)
        })
        .collect();
    Image::new(img.width(), img.height(), ColorSpace::Rgb, data)
}

/// Everything produced by one explanation request.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub saliency: SaliencyMap,
    pub weights: WeightVector,
    /// Model-resolution input the explanation refers to.
    pub input: Image,
    pub class: usize,
}

/// Runs one method end to end on a raw image. `class` defaults to the
/// model's top prediction; it only affects Score-CAM.
pub fn explain(
    m: &ModelHandle,
    img: &Image,
    layer: &str,
    method: Method,
    bins: usize,
    class: Option<usize>,
) -> Result<Explanation> {
    let pre = m.preprocess(img)?;
    let (scores, stack) = m.capture_pixels(&pre.image.to_float(), layer)?;
    let class = class.unwrap_or_else(|| scores.argmax());
    let (w, h) = (pre.image.width(), pre.image.height());
    let (saliency, weights) = match method {
        Method::MiCam => {
            let weights = mi_weights(&stack, &pre.image, bins)?;
            (combine(&stack, &weights, w, h)?, weights)
        }
        Method::ScoreCam => {
            let weights = score_cam_weights(m, &stack, &pre.image, class)?;
            (combine(&stack, &weights, w, h)?, weights)
        }
        Method::EigenCam => (eigen_cam_map(&stack, w, h)?, eigen_cam_weights(&stack)?),
    };
    Ok(Explanation { saliency, weights, input: pre.image, class })
}

/// Channel weights for `method` on a model-resolution input.
pub fn method_weights(
    m: &ModelHandle,
    stack: &ActivationStack,
    x: &Image,
    method: Method,
    bins: usize,
    class: usize,
) -> Result<WeightVector> {
    match method {
        Method::MiCam => mi_weights(stack, x, bins),
        Method::ScoreCam => score_cam_weights(m, stack, x, class),
        Method::EigenCam => eigen_cam_weights(stack),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn plane(w: usize, h: usize, v: &[f64]) -> Plane {
        Plane::from_vec(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn method_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("grad-cam".parse::<Method>().is_err());
    }

    #[test]
    fn mi_weight_vector_rejects_negative() {
        assert!(WeightVector::new(Method::MiCam, vec![0.1, -0.1]).is_err());
        assert!(WeightVector::new(Method::EigenCam, vec![0.1, -0.1]).is_ok());
    }

    #[test]
    fn combine_one_hot_and_zero() {
        let a = plane(2, 2, &[1.0, -2.0, 3.0, 0.5]);
        let b = plane(2, 2, &[9.0, 9.0, 0.0, 1.0]);
        let stack = ActivationStack::new("l", vec![a.clone(), b]).unwrap();

        let one_hot = WeightVector::new(Method::ScoreCam, vec![1.0, 0.0]).unwrap();
        let got = combine(&stack, &one_hot, 2, 2).unwrap();
        let expect = SaliencyMap::from_raw(&a.map(|v| v.max(0.0)).unwrap(), "l", Method::ScoreCam);
        assert_eq!(got.plane(), expect.plane());

        let zero = WeightVector::new(Method::MiCam, vec![0.0, 0.0]).unwrap();
        assert!(combine(&stack, &zero, 5, 3).unwrap().is_zero());

        let short = WeightVector::new(Method::MiCam, vec![1.0]).unwrap();
        assert!(matches!(combine(&stack, &short, 2, 2), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn combine_weighted_two_planes() {
        // 1*[1,0,2,4] + 2*[0,1,1,-3] = [1,2,4,-2] -> relu [1,2,4,0] -> /4
        let stack = ActivationStack::new(
            "l",
            vec![plane(2, 2, &[1.0, 0.0, 2.0, 4.0]), plane(2, 2, &[0.0, 1.0, 1.0, -3.0])],
        )
        .unwrap();
        let w = WeightVector::new(Method::MiCam, vec![1.0, 2.0]).unwrap();
        let map = combine(&stack, &w, 2, 2).unwrap();
        assert_eq!(map.to_vec(), vec![0.25, 0.5, 1.0, 0.0]);
    }

    #[test]
    fn eigen_rank_one_recovers_plane() {
        let p = plane(3, 2, &[0.0, 1.0, -3.0, 2.0, 0.5, 1.5]);
        let stack = ActivationStack::new("l", vec![p.map(|v| 2.0 * v).unwrap(), p.map(|v| -0.5 * v).unwrap(), p.clone()]).unwrap();
        let map = eigen_cam_map(&stack, 3, 2).unwrap();
        let expect = SaliencyMap::from_raw(&p.map(f64::abs).unwrap(), "l", Method::EigenCam);
        for (a, b) in map.to_vec().iter().zip(expect.to_vec()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }

        let single = ActivationStack::new("l", vec![p.clone()]).unwrap();
        let map = eigen_cam_map(&single, 3, 2).unwrap();
        for (a, b) in map.to_vec().iter().zip(expect.to_vec()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn eigen_sign_makes_pivot_positive() {
        let p = plane(2, 2, &[-5.0, 1.0, 0.0, 2.0]);
        let stack = ActivationStack::new("l", vec![p.clone(), p.map(|v| 3.0 * v).unwrap()]).unwrap();
        let w = eigen_cam_weights(&stack).unwrap();
        let proj: Vec<f64> = (0..4)
            .map(|i| w.weights()[0] * p.to_vec()[i] + w.weights()[1] * 3.0 * p.to_vec()[i])
            .collect();
        let pivot = proj.iter().copied().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
        assert!(pivot > 0.0);
    }

    #[test]
    fn jet_endpoints() {
        assert_eq!(jet(0.0), [0.0, 0.0, 0.5]);
        assert_eq!(jet(1.0), [0.5, 0.0, 0.0]);
        assert_eq!(jet(0.5), [0.5, 1.0, 0.5]);
    }

    #[test]
    fn overlay_alpha_extremes() {
        let img = Image::from_fn(3, 2, ColorSpace::Rgb, |x, y, c| (x * 60 + y * 30 + c * 10) as u8).unwrap();
        let s = SaliencyMap::from_raw(&plane(3, 2, &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]), "l", Method::MiCam);
        assert_eq!(render_overlay(&img, &s, 0.0).unwrap(), img);
        let pure = render_overlay(&img, &s, 1.0).unwrap();
        for (i, v) in s.to_vec().into_iter().enumerate() {
            let c = jet(v);
            let want: Vec<u8> = c.iter().map(|x| (x * 255.0).round() as u8).collect();
            assert_eq!(pure.pixel(i % 3, i / 3), &want[..]);
        }
        let zero = SaliencyMap::from_raw(&Plane::filled(3, 2, 0.0).unwrap(), "l", Method::MiCam);
        let half = render_overlay(&img, &zero, 0.5).unwrap();
        // zero colour is (0, 0, 127.5)
        for y in 0..2 {
            for x in 0..3 {
                let src = img.pixel(x, y);
                let got = half.pixel(x, y);
                assert_eq!(got[0], (0.5 * f64::from(src[0])).round() as u8);
                assert_eq!(got[1], (0.5 * f64::from(src[1])).round() as u8);
                assert_eq!(got[2], (0.5 * f64::from(src[2]) + 63.75).round() as u8);
            }
        }
        let wrong = SaliencyMap::from_raw(&Plane::filled(2, 2, 0.0).unwrap(), "l", Method::MiCam);
        assert!(render_overlay(&img, &wrong, 0.5).is_err());
    }

    #[test]
    fn weight_csv_records_method() {
        let w = WeightVector::new(Method::EigenCam, vec![0.5, -0.25]).unwrap();
        let mut buf = Vec::new();
        w.write_csv("conv2", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "method,layer,channel,weight\neigen-cam,conv2,0,5e-1\neigen-cam,conv2,1,-2.5e-1\n");
    }
}
