//! Faithfulness and localization metrics for saliency maps.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::cam::SaliencyMap;
use crate::error::{Error, Result};
use crate::image::{FloatImage, Image};
use crate::model::ModelHandle;

/// Saliency threshold used for Average Drop / Average Increase masks.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_STEP: f64 = 0.01;
pub const DEFAULT_STEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Average Drop: zero every pixel whose saliency is below the threshold.
    MuteBelow,
    /// Average Increase: start from an all-zero image and copy in pixels
    /// whose saliency is at or above the threshold.
    InsertAbove,
}

fn check_dims(w: usize, h: usize, s: &SaliencyMap) -> Result<()> {
    if (w, h) != (s.width(), s.height()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{w}x{h}"),
            actual: format!("{}x{}", s.width(), s.height()),
        });
    }
    Ok(())
}

pub fn threshold_mask(img: &Image, s: &SaliencyMap, theta: f64, mode: MaskMode) -> Result<Image> {
    check_dims(img.width(), img.height(), s)?;
    let mut out = match mode {
        MaskMode::MuteBelow => img.clone(),
        MaskMode::InsertAbove => Image::filled(img.width(), img.height(), img.color_space(), 0)?,
    };
    for y in 0..img.height() {
        for x in 0..img.width() {
            let v = s.plane().get(x, y);
            match mode {
                MaskMode::MuteBelow if v < theta => out.pixel_mut(x, y).fill(0),
                MaskMode::InsertAbove if v >= theta => out.pixel_mut(x, y).copy_from_slice(img.pixel(x, y)),
                _ => {}
            }
        }
    }
    Ok(out)
}

/// Scores for one image: `original` on the unmodified input, `masked` on the
/// saliency-masked input and `baseline` on the all-zero input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub class: usize,
    pub original: f64,
    pub masked: f64,
    pub baseline: f64,
}

fn check_records(records: &[EvalRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    if let Some(r) = records.iter().find(|r| !(r.original.is_finite() && r.masked.is_finite() && r.baseline.is_finite())) {
        return Err(Error::InvalidArgument(format!("non-finite score in record `{}`", r.id)));
    }
    Ok(())
}

/// `(100 / N) · Σ max(0, Y − O) / Y`, in percent.
pub fn average_drop(records: &[EvalRecord]) -> Result<f64> {
    check_records(records)?;
    let mut total = 0.0;
    for r in records {
        if r.original <= 0.0 {
            return Err(Error::NonPositiveScore { id: r.id.clone(), value: r.original });
        }
        total += (r.original - r.masked).max(0.0) / r.original;
    }
    Ok(total * 100.0 / records.len() as f64)
}

/// `(100 / N) · Σ max(0, O − B) / O`, in percent.
pub fn average_increase(records: &[EvalRecord]) -> Result<f64> {
    check_records(records)?;
    let mut total = 0.0;
    for r in records {
        if r.masked <= 0.0 {
            return Err(Error::NonPositiveScore { id: r.id.clone(), value: r.masked });
        }
        total += (r.masked - r.baseline).max(0.0) / r.masked;
    }
    Ok(total * 100.0 / records.len() as f64)
}

/// Class score as a function of the fraction of pixels removed or restored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    fractions: Vec<f64>,
    scores: Vec<f64>,
}

impl Curve {
    pub fn new(fractions: Vec<f64>, scores: Vec<f64>) -> Result<Self> {
        if fractions.len() != scores.len() {
            return Err(Error::LengthMismatch { left: fractions.len(), right: scores.len() });
        }
        if fractions.first().is_some_and(|&f| f != 0.0) {
            return Err(Error::InvalidArgument("curve must start at fraction 0".into()));
        }
        if fractions.windows(2).any(|w| w[1] <= w[0]) || fractions.iter().any(|f| !(0.0..=1.0 + 1e-9).contains(f)) {
            return Err(Error::InvalidArgument("fractions must increase strictly within [0, 1]".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("non-finite curve score".into()));
        }
        Ok(Self { fractions, scores })
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Trapezoidal area under the curve.
pub fn auc(c: &Curve) -> Result<f64> {
    if c.len() < 2 {
        return Err(Error::InvalidArgument(format!("AUC needs at least 2 points, got {}", c.len())));
    }
    Ok(c.fractions
        .windows(2)
        .zip(c.scores.windows(2))
        .map(|(f, s)| (f[1] - f[0]) * (s[0] + s[1]) / 2.0)
        .sum())
}

/// Order in which insertion restores pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InsertionOrder {
    /// Ascending saliency: least important pixels first.
    #[default]
    LeastImportantFirst,
    MostImportantFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    /// Fraction of all pixels changed per step.
    pub step: f64,
    pub steps: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self { step: DEFAULT_STEP, steps: DEFAULT_STEPS }
    }
}

impl CurveConfig {
    fn validate(&self) -> Result<()> {
        if !self.step.is_finite() || self.step <= 0.0 || self.steps == 0 {
            return Err(Error::InvalidArgument(format!("invalid curve step {} x {}", self.step, self.steps)));
        }
        if self.step * self.steps as f64 > 1.0 + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "step {} x {} steps exceeds the whole image",
                self.step, self.steps
            )));
        }
        Ok(())
    }

    fn fractions(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| (i as f64 * self.step).min(1.0)).collect()
    }

    /// Cumulative pixel count changed after step `i`.
    fn pixels_after(&self, i: usize, total: usize) -> usize {
        ((i as f64 * self.step * total as f64).round() as usize).min(total)
    }
}

/// Row-major pixel indices sorted by saliency; ties keep row-major order.
pub fn rank_pixels(s: &SaliencyMap, descending: bool) -> Vec<usize> {
    let values = s.to_vec();
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let ord = values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal);
        if descending {
            ord.reverse()
        } else {
            ord
        }
    });
    idx
}

fn run_curve(
    m: &ModelHandle,
    start: FloatImage,
    order: &[usize],
    class: usize,
    cfg: CurveConfig,
    mut apply: impl FnMut(&mut FloatImage, usize),
) -> Result<Curve> {
    let total = start.pixel_count();
    let mut current = start;
    let mut scores = Vec::with_capacity(cfg.steps + 1);
    scores.push(m.forward_pixels(&current)?.get(class)?);
    let mut done = 0;
    for i in 1..=cfg.steps {
        let target = cfg.pixels_after(i, total);
        for &idx in &order[done..target] {
            apply(&mut current, idx);
        }
        done = target;
        scores.push(m.forward_pixels(&current)?.get(class)?);
    }
    Curve::new(cfg.fractions(), scores)
}

/// Removes pixels (sets them to 0) from the most salient down.
/// `s` must be at the model's input resolution.
pub fn deletion_curve(m: &ModelHandle, img: &Image, s: &SaliencyMap, class: usize, cfg: CurveConfig) -> Result<Curve> {
    cfg.validate()?;
    let pre = m.preprocess(img)?;
    check_dims(pre.image.width(), pre.image.height(), s)?;
    let order = rank_pixels(s, true);
    run_curve(m, pre.image.to_float(), &order, class, cfg, |px, idx| px.fill_pixel(idx, 0.0))
}

/// Restores original pixels onto an all-zero canvas in the given order.
pub fn insertion_curve(
    m: &ModelHandle,
    img: &Image,
    s: &SaliencyMap,
    class: usize,
    cfg: CurveConfig,
    order: InsertionOrder,
) -> Result<Curve> {
    cfg.validate()?;
    let pre = m.preprocess(img)?;
    check_dims(pre.image.width(), pre.image.height(), s)?;
    let original = pre.image.to_float();
    let ranked = rank_pixels(s, order == InsertionOrder::MostImportantFirst);
    let canvas = FloatImage::zeros(original.width, original.height, original.channels);
    run_curve(m, canvas, &ranked, class, cfg, |px, idx| px.copy_pixel_from(&original, idx))
}

/// Pixel box covering columns `x..=x + w - 1` and rows `y..=y + h - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }

    fn check(&self, s: &SaliencyMap) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.x + self.w > s.width() || self.y + self.h > s.height() {
            return Err(Error::InvalidArgument(format!(
                "box {self:?} outside {}x{} map",
                s.width(),
                s.height()
            )));
        }
        Ok(())
    }
}

/// Position of the first maximum in row-major order.
pub fn argmax_pixel(s: &SaliencyMap) -> (usize, usize) {
    let values = s.to_vec();
    let best = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0;
    (best % s.width(), best / s.width())
}

/// Whether the map's peak falls inside the box.
pub fn pointing_game(s: &SaliencyMap, b: &BBox) -> Result<bool> {
    b.check(s)?;
    let (x, y) = argmax_pixel(s);
    Ok(b.contains(x, y))
}

/// Percentage of total saliency mass inside the box.
pub fn ebpg(s: &SaliencyMap, b: &BBox) -> Result<f64> {
    b.check(s)?;
    let mut inside = 0.0;
    let mut total = 0.0;
    for y in 0..s.height() {
        for x in 0..s.width() {
            let v = s.plane().get(x, y);
            total += v;
            if b.contains(x, y) {
                inside += v;
            }
        }
    }
    if total <= 0.0 {
        return Err(Error::InvalidArgument("energy pointing game needs a non-zero map".into()));
    }
    Ok(100.0 * inside / total)
}

/// One bounding-box annotation. Coordinates are in the saliency map's frame
/// (the model input resolution).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub image: String,
    #[serde(default)]
    pub class: Option<usize>,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Annotation {
    pub fn bbox(&self) -> BBox {
        BBox { x: self.x, y: self.y, w: self.w, h: self.h }
    }
}

/// All per-image metrics for one saliency map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub record: EvalRecord,
    pub deletion: Curve,
    pub insertion: Curve,
    pub deletion_auc: f64,
    pub insertion_auc: f64,
    pub pointing_hit: Option<bool>,
    pub ebpg: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub threshold: f64,
    pub curve: CurveConfig,
    pub insertion_order: InsertionOrder,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, curve: CurveConfig::default(), insertion_order: InsertionOrder::default() }
    }
}

/// Scores `s` against `img` for `class`. The AD/AI masks act on the
/// model-resolution image.
pub fn evaluate_image(
    m: &ModelHandle,
    id: &str,
    img: &Image,
    s: &SaliencyMap,
    class: usize,
    bbox: Option<BBox>,
    cfg: &EvalConfig,
) -> Result<ImageMetrics> {
    let x = m.preprocess(img)?.image;
    let original = m.forward_pixels(&x.to_float())?.get(class)?;
    let masked_img = threshold_mask(&x, s, cfg.threshold, MaskMode::MuteBelow)?;
    let masked = m.forward_pixels(&masked_img.to_float())?.get(class)?;
    let zero = FloatImage::zeros(x.width(), x.height(), x.channels());
    let baseline = m.forward_pixels(&zero)?.get(class)?;

    let deletion = deletion_curve(m, &x, s, class, cfg.curve)?;
    let insertion = insertion_curve(m, &x, s, class, cfg.curve, cfg.insertion_order)?;
    let (pointing_hit, energy) = match bbox {
        Some(b) => (Some(pointing_game(s, &b)?), if s.is_zero() { None } else { Some(ebpg(s, &b)?) }),
        None => (None, None),
    };
    Ok(ImageMetrics {
        record: EvalRecord { id: id.to_string(), class, original, masked, baseline },
        deletion_auc: auc(&deletion)?,
        insertion_auc: auc(&insertion)?,
        deletion,
        insertion,
        pointing_hit,
        ebpg: energy,
    })
}
