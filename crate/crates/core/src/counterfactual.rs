//! Counterfactual inputs and how much channel weights move under them.

use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cam::{self, Method, SaliencyMap, WeightVector};
use crate::error::{Error, Result};
use crate::eval::rank_pixels;
use crate::image::Image;
use crate::model::ModelHandle;

/// How to build a counterfactual image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PerturbPolicy {
    /// Fill the `ceil(fraction · pixels)` most salient pixels.
    OccludeTopSalient { fraction: f64, fill: u8 },
    /// Fill a `width × height` rectangle at a seeded random position.
    RandomPatch { width: usize, height: usize, fill: u8, seed: u64 },
    /// Fill a seeded random subset of `ceil(fraction · pixels)` pixels.
    ConstantFill { fraction: f64, fill: u8, seed: u64 },
}

impl Default for PerturbPolicy {
    fn default() -> Self {
        PerturbPolicy::OccludeTopSalient { fraction: 0.5, fill: 0 }
    }
}

fn selected_count(fraction: f64, total: usize) -> usize {
    ((fraction * total as f64 - 1e-9).ceil().max(0.0) as usize).min(total)
}

impl PerturbPolicy {
    /// Patch dimensions whose area is as close as possible to
    /// `ceil(fraction · width · height)` without falling short, keeping the
    /// image's aspect ratio.
    pub fn equal_area_patch(width: usize, height: usize, fraction: f64, fill: u8, seed: u64) -> PerturbPolicy {
        let area = selected_count(fraction, width * height).max(1);
        let pw = ((area as f64 * width as f64 / height as f64).sqrt().ceil() as usize).clamp(1, width);
        let ph = area.div_ceil(pw).clamp(1, height);
        PerturbPolicy::RandomPatch { width: pw, height: ph, fill, seed }
    }

    fn validate(&self, w: usize, h: usize) -> Result<()> {
        match *self {
            PerturbPolicy::OccludeTopSalient { fraction, .. } | PerturbPolicy::ConstantFill { fraction, .. } => {
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(Error::InvalidArgument(format!("perturbation fraction {fraction} outside [0, 1]")));
                }
            }
            PerturbPolicy::RandomPatch { width, height, .. } => {
                if width == 0 || height == 0 || width > w || height > h {
                    return Err(Error::InvalidArgument(format!("patch {width}x{height} does not fit {w}x{h} image")));
                }
            }
        }
        Ok(())
    }

    pub fn needs_saliency(&self) -> bool {
        matches!(self, PerturbPolicy::OccludeTopSalient { .. })
    }
}

/// Row-major indices of the pixels the policy changes.
pub fn selected_pixels(w: usize, h: usize, s: Option<&SaliencyMap>, policy: &PerturbPolicy) -> Result<Vec<usize>> {
    policy.validate(w, h)?;
    let total = w * h;
    Ok(match *policy {
        PerturbPolicy::OccludeTopSalient { fraction, .. } => {
            let s = s.ok_or_else(|| Error::InvalidArgument("salient occlusion needs a saliency map".into()))?;
            if (s.width(), s.height()) != (w, h) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{w}x{h}"),
                    actual: format!("{}x{}", s.width(), s.height()),
                });
            }
            let mut ranked = rank_pixels(s, true);
            ranked.truncate(selected_count(fraction, total));
            ranked
        }
        PerturbPolicy::RandomPatch { width, height, seed, .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x0 = rng.random_range(0..=w - width);
            let y0 = rng.random_range(0..=h - height);
            (y0..y0 + height).flat_map(|y| (x0..x0 + width).map(move |x| y * w + x)).collect()
        }
        PerturbPolicy::ConstantFill { fraction, seed, .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = index::sample(&mut rng, total, selected_count(fraction, total)).into_vec();
            picked.sort_unstable();
            picked
        }
    })
}

/// Builds the counterfactual image. Only selected pixels change, and they
/// change to the fill value in every channel.
pub fn perturb(img: &Image, s: Option<&SaliencyMap>, policy: &PerturbPolicy) -> Result<Image> {
    let fill = match *policy {
        PerturbPolicy::OccludeTopSalient { fill, .. }
        | PerturbPolicy::RandomPatch { fill, .. }
        | PerturbPolicy::ConstantFill { fill, .. } => fill,
    };
    let mut out = img.clone();
    for idx in selected_pixels(img.width(), img.height(), s, policy)? {
        out.pixel_mut(idx % img.width(), idx / img.width()).fill(fill);
    }
    Ok(out)
}

/// Per-channel movement between two weight vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub deltas: Vec<f64>,
    pub l1: f64,
    pub linf: f64,
    /// `l1 / Σ|α_k|`, or 0 when the original weights are all zero.
    pub relative_l1: f64,
}

pub fn weight_divergence(w: &WeightVector, w_cf: &WeightVector) -> Result<DivergenceReport> {
    if w.len() != w_cf.len() {
        return Err(Error::LengthMismatch { left: w.len(), right: w_cf.len() });
    }
    let deltas: Vec<f64> = w.weights().iter().zip(w_cf.weights()).map(|(a, b)| (a - b).abs()).collect();
    let l1: f64 = deltas.iter().sum();
    let linf = deltas.iter().copied().fold(0.0, f64::max);
    let scale: f64 = w.weights().iter().map(|a| a.abs()).sum();
    let relative_l1 = if scale > 0.0 { l1 / scale } else { 0.0 };
    Ok(DivergenceReport { deltas, l1, linf, relative_l1 })
}

/// Weights of one method on the original and counterfactual input.
#[derive(Debug, Clone)]
pub struct MethodDivergence {
    pub method: Method,
    pub original: WeightVector,
    pub counterfactual: WeightVector,
    pub report: DivergenceReport,
}

impl MethodDivergence {
    /// `channel,alpha_original,alpha_counterfactual,abs_delta` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "channel,alpha_original,alpha_counterfactual,abs_delta")?;
        for (k, ((a, b), d)) in self
            .original
            .weights()
            .iter()
            .zip(self.counterfactual.weights())
            .zip(&self.report.deltas)
            .enumerate()
        {
            writeln!(out, "{k},{a:e},{b:e},{d:e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CounterfactualRun {
    /// Model-resolution original input.
    pub original: Image,
    pub perturbed: Image,
    /// MI-CAM map of the original, which salient occlusion ranks by.
    pub saliency: SaliencyMap,
    pub class: usize,
    pub methods: Vec<MethodDivergence>,
}

/// Compares each method's channel weights on `img` and on its perturbed
/// counterpart. The perturbation is shared by all methods and Score-CAM is
/// scored on the class predicted for the original input.
pub fn counterfactual_run(
    m: &ModelHandle,
    img: &Image,
    layer: &str,
    policy: &PerturbPolicy,
    methods: &[Method],
    bins: usize,
) -> Result<CounterfactualRun> {
    let x = m.preprocess(img)?.image;
    let (scores, stack) = m.capture_pixels(&x.to_float(), layer)?;
    let class = scores.argmax();
    let mi = cam::mi_weights(&stack, &x, bins)?;
    let saliency = cam::combine(&stack, &mi, x.width(), x.height())?;
    let perturbed = perturb(&x, Some(&saliency), policy)?;
    let (_, stack_cf) = m.capture_pixels(&perturbed.to_float(), layer)?;

    let mut results = Vec::with_capacity(methods.len());
    for &method in methods {
        let original = match method {
            Method::MiCam => mi.clone(),
            other => cam::method_weights(m, &stack, &x, other, bins, class)?,
        };
        let counterfactual = cam::method_weights(m, &stack_cf, &perturbed, method, bins, class)?;
        let report = weight_divergence(&original, &counterfactual)?;
        results.push(MethodDivergence { method, original, counterfactual, report });
    }
    Ok(CounterfactualRun { original: x, perturbed, saliency, class, methods: results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ColorSpace;
    use crate::plane::Plane;

    fn wv(v: &[f64]) -> WeightVector {
        WeightVector::new(Method::EigenCam, v.to_vec()).unwrap()
    }

    #[test]
    fn zero_fraction_is_identity() {
        let img = Image::from_fn(5, 4, ColorSpace::Rgb, |x, y, c| (x * 20 + y * 9 + c + 3) as u8).unwrap();
        let s = SaliencyMap::from_raw(&Plane::from_vec(5, 4, (0..20).map(f64::from).collect()).unwrap(), "l", Method::MiCam);
        let p = PerturbPolicy::OccludeTopSalient { fraction: 0.0, fill: 0 };
        assert_eq!(perturb(&img, Some(&s), &p).unwrap(), img);
        let p = PerturbPolicy::ConstantFill { fraction: 0.0, fill: 9, seed: 1 };
        assert_eq!(perturb(&img, None, &p).unwrap(), img);
    }

    #[test]
    fn whole_image_fill_is_constant() {
        let img = Image::from_fn(5, 4, ColorSpace::Rgb, |x, y, c| (x * 20 + y * 9 + c) as u8).unwrap();
        let p = PerturbPolicy::ConstantFill { fraction: 1.0, fill: 42, seed: 7 };
        assert!(perturb(&img, None, &p).unwrap().data().iter().all(|&v| v == 42));
        let p = PerturbPolicy::RandomPatch { width: 5, height: 4, fill: 3, seed: 0 };
        assert!(perturb(&img, None, &p).unwrap().data().iter().all(|&v| v == 3));
    }

    #[test]
    fn top_salient_quarter_matches_sort_oracle() {
        let img = Image::filled(6, 6, ColorSpace::Gray, 200).unwrap();
        // Distinct values in a scrambled order.
        let raw: Vec<f64> = (0..36).map(|i| f64::from((i * 17) % 36)).collect();
        let s = SaliencyMap::from_raw(&Plane::from_vec(6, 6, raw.clone()).unwrap(), "l", Method::MiCam);
        let p = PerturbPolicy::OccludeTopSalient { fraction: 0.25, fill: 0 };
        let out = perturb(&img, Some(&s), &p).unwrap();
        let changed: Vec<usize> = (0..36).filter(|&i| out.data()[i] != 200).collect();
        assert_eq!(changed.len(), 9);
        let mut sorted = raw.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let cutoff = sorted[8];
        assert!(changed.iter().all(|&i| raw[i] >= cutoff));
    }

    #[test]
    fn policy_errors() {
        let img = Image::filled(4, 4, ColorSpace::Gray, 1).unwrap();
        assert!(perturb(&img, None, &PerturbPolicy::default()).is_err());
        assert!(perturb(&img, None, &PerturbPolicy::RandomPatch { width: 5, height: 1, fill: 0, seed: 0 }).is_err());
        assert!(perturb(&img, None, &PerturbPolicy::ConstantFill { fraction: 1.5, fill: 0, seed: 0 }).is_err());
    }

    #[test]
    fn patches_are_seeded() {
        let img = Image::filled(10, 10, ColorSpace::Gray, 100).unwrap();
        let p = PerturbPolicy::RandomPatch { width: 3, height: 2, fill: 0, seed: 11 };
        let a = perturb(&img, None, &p).unwrap();
        assert_eq!(a, perturb(&img, None, &p).unwrap());
        assert_eq!(a.data().iter().filter(|&&v| v == 0).count(), 6);
    }

    #[test]
    fn equal_area_patch_dims() {
        let PerturbPolicy::RandomPatch { width, height, .. } = PerturbPolicy::equal_area_patch(16, 16, 0.5, 0, 0) else {
            panic!("expected a patch");
        };
        assert!(width * height >= 128 && width * height < 128 + 16);
        let PerturbPolicy::RandomPatch { width, height, .. } = PerturbPolicy::equal_area_patch(20, 10, 1.0, 0, 0) else {
            panic!("expected a patch");
        };
        assert_eq!((width, height), (20, 10));
    }

    #[test]
    fn divergence_examples() {
        let zero = weight_divergence(&wv(&[0.3, -1.0]), &wv(&[0.3, -1.0])).unwrap();
        assert_eq!((zero.l1, zero.linf, zero.relative_l1), (0.0, 0.0, 0.0));

        let r = weight_divergence(&wv(&[1.0, 0.0]), &wv(&[0.0, 1.0])).unwrap();
        assert_eq!((r.l1, r.linf, r.relative_l1), (2.0, 1.0, 2.0));

        let a = weight_divergence(&wv(&[0.5, 2.0, -1.0]), &wv(&[1.0, 1.0, 1.0])).unwrap();
        let b = weight_divergence(&wv(&[1.5, 6.0, -3.0]), &wv(&[3.0, 3.0, 3.0])).unwrap();
        assert!((b.l1 - 3.0 * a.l1).abs() < 1e-12);
        assert!((b.relative_l1 - a.relative_l1).abs() < 1e-12);

        assert!(weight_divergence(&wv(&[1.0]), &wv(&[1.0, 2.0])).is_err());
        let z = weight_divergence(&wv(&[0.0, 0.0]), &wv(&[1.0, 0.0])).unwrap();
        assert_eq!(z.relative_l1, 0.0);
    }
}
