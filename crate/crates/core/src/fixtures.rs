//! Small hand-weighted models and synthetic scenes for tests, demos and
//! benchmarks.
//!
//! The toy classifier takes 32×32 RGB input and has two 3×3 conv layers
//! (`conv1`, `conv2`) followed by global average pooling and a 3-way dense
//! head. Its filters respond to red regions, luminance edges and overall
//! brightness; the classes loosely mean "red object", "textured" and
//! "plain". Weights carry a small seeded jitter so that no two filters are
//! exactly degenerate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::BBox;
use crate::image::{ColorSpace, Image};
use crate::model::{InputSpec, LayerDef, ModelFile, OutputSpec, TensorDef, FORMAT_TAG, FORMAT_VERSION};

pub const TOY_SIZE: usize = 32;

fn model_file(name: &str, input: InputSpec, output: OutputSpec, layers: Vec<LayerDef>) -> ModelFile {
    ModelFile { format: FORMAT_TAG.into(), version: FORMAT_VERSION, name: name.into(), input, output, layers }
}

fn unit_input(width: usize, height: usize, channels: usize) -> InputSpec {
    InputSpec { width, height, channels, mean: vec![0.0; channels], std: vec![1.0; channels] }
}

const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
const BOX: [f64; 9] = [1.0; 9];
const CENTER: [f64; 9] = [0.5, 1.0, 0.5, 1.0, 2.0, 1.0, 0.5, 1.0, 0.5];

/// The two-conv toy classifier described in the module docs.
pub fn toy_classifier() -> ModelFile {
    let mut rng = ChaCha8Rng::seed_from_u64(0x70c1);
    let mut jitter = |v: f64| v + rng.random_range(-0.02..0.02);

    // conv1: 3 -> 4. Per output filter, per input channel gain applied to a 3x3 pattern.
    let luma = [0.299, 0.587, 0.114];
    let conv1_spec: [([f64; 3], &[f64; 9], f64); 4] = [
        ([1.0, -0.6, -0.6], &CENTER, 1.0 / 8.0), // red
        (luma, &SOBEL_X, 0.25),                  // vertical edges
        (luma, &SOBEL_Y, 0.25),                  // horizontal edges
        ([1.0, 1.0, 1.0], &BOX, 1.0 / 27.0),     // brightness
    ];
    let mut w1 = Vec::with_capacity(4 * 3 * 9);
    for (gains, pattern, scale) in conv1_spec {
        for g in gains {
            w1.extend(pattern.iter().map(|p| jitter(g * p * scale)));
        }
    }
    let b1 = vec![-0.3, 0.0, 0.0, 0.1];

    // conv2: 4 -> 6, mixing conv1 features with a centre-weighted kernel.
    let mix: [[f64; 4]; 6] = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [1.0, -0.5, -0.5, 0.0],
        [-0.5, 0.0, 0.0, 1.0],
        [0.5, 0.5, 0.5, -0.3],
    ];
    let mut w2 = Vec::with_capacity(6 * 4 * 9);
    for row in mix {
        for g in row {
            w2.extend(CENTER.iter().map(|p| jitter(g * p / 8.0)));
        }
    }
    let b2 = vec![0.0, -0.05, 0.0, 0.0, 0.05, 0.0];

    let w3 = vec![
        2.0, -0.5, -0.5, 1.5, -1.0, 0.2, // red object
        -0.5, 2.5, 0.0, -0.5, 0.0, 0.5, // textured
        -0.5, -1.0, 1.5, -0.5, 1.0, 0.0, // plain
    ];
    let w3 = w3.into_iter().map(&mut jitter).collect();

    model_file(
        "toy-2conv",
        InputSpec { width: TOY_SIZE, height: TOY_SIZE, channels: 3, mean: vec![0.5; 3], std: vec![0.25; 3] },
        OutputSpec { classes: 3, logits: true },
        vec![
            LayerDef::conv2d("conv1", TensorDef::new(vec![4, 3, 3, 3], w1), Some(TensorDef::new(vec![4], b1)), 1, true),
            LayerDef::max_pool("pool1", 2),
            LayerDef::conv2d("conv2", TensorDef::new(vec![6, 4, 3, 3], w2), Some(TensorDef::new(vec![6], b2)), 1, true),
            LayerDef::op("gap", "global_avg_pool"),
            LayerDef::dense("fc", TensorDef::new(vec![3, 6], w3), Some(TensorDef::new(vec![3], vec![0.0, -0.2, 0.1])), false),
        ],
    )
}

/// Single-output model whose score is the mean pixel intensity over all
/// channels, in `[0, 1]`. No softmax.
pub fn mean_intensity_model(width: usize, height: usize) -> ModelFile {
    model_file(
        "mean-intensity",
        unit_input(width, height, 3),
        OutputSpec { classes: 1, logits: false },
        vec![
            LayerDef::conv2d("conv", TensorDef::new(vec![1, 3, 1, 1], vec![1.0 / 3.0; 3]), None, 0, false),
            LayerDef::op("gap", "global_avg_pool"),
            LayerDef::dense("fc", TensorDef::new(vec![1, 1], vec![1.0]), None, false),
        ],
    )
}

/// Class 0 scores the sum of all `pixel / 255` values, class 1 its negation.
pub fn sum_of_pixels_model(width: usize, height: usize) -> ModelFile {
    let n = width * height * 3;
    let mut w = vec![1.0; n];
    w.extend(std::iter::repeat_n(-1.0, n));
    model_file(
        "sum-of-pixels",
        unit_input(width, height, 3),
        OutputSpec { classes: 2, logits: false },
        vec![LayerDef::op("flatten", "flatten"), LayerDef::dense("fc", TensorDef::new(vec![2, n], w), None, false)],
    )
}

/// 2×2 gray input, flattened into a 3-class dense layer with softmax.
/// Logits are `W · (pixel / 255) + b` with
/// `W = [[1, 0, 0, 0], [0, 1, 1, 0], [-1, -1, -1, -1]]`, `b = [0, 0.5, 1]`.
pub fn logit_probe_model() -> ModelFile {
    let w = vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, -1.0, -1.0, -1.0, -1.0];
    model_file(
        "logit-probe",
        unit_input(2, 2, 1),
        OutputSpec { classes: 3, logits: true },
        vec![
            LayerDef::op("flatten", "flatten"),
            LayerDef::dense("fc", TensorDef::new(vec![3, 4], w), Some(TensorDef::new(vec![3], vec![0.0, 0.5, 1.0])), false),
        ],
    )
}

/// A 3→3 conv with an identity kernel per channel, then a small head.
/// Capturing `conv` returns the normalized input channels.
pub fn identity_conv_model(width: usize, height: usize) -> ModelFile {
    let mut w = vec![0.0; 3 * 3 * 9];
    for c in 0..3 {
        w[(c * 3 + c) * 9 + 4] = 1.0;
    }
    model_file(
        "identity-conv",
        InputSpec { width, height, channels: 3, mean: vec![0.5; 3], std: vec![0.5; 3] },
        OutputSpec { classes: 2, logits: true },
        vec![
            LayerDef::conv2d("conv", TensorDef::new(vec![3, 3, 3, 3], w), None, 1, false),
            LayerDef::op("gap", "global_avg_pool"),
            LayerDef::dense("fc", TensorDef::new(vec![2, 3], vec![1.0, 0.0, -1.0, 0.0, 1.0, 0.5]), None, false),
        ],
    )
}

/// Gray linear model: class 0 scores the mean of `pixel / 255` over the left
/// half of the image, class 1 over the right half.
pub fn halves_model(width: usize, height: usize) -> ModelFile {
    let half = width / 2;
    let mut w = vec![0.0; 2 * width * height];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if x < half {
                w[i] = 1.0 / (half * height) as f64;
            } else {
                w[width * height + i] = 1.0 / ((width - half) * height) as f64;
            }
        }
    }
    model_file(
        "halves",
        unit_input(width, height, 1),
        OutputSpec { classes: 2, logits: false },
        vec![
            LayerDef::conv2d("conv", TensorDef::new(vec![1, 1, 1, 1], vec![1.0]), None, 0, false),
            LayerDef::op("flatten", "flatten"),
            LayerDef::dense("fc", TensorDef::new(vec![2, width * height], w), None, false),
        ],
    )
}

/// A seeded scene: mottled gray-green background with one saturated red
/// square. Returns the image and the square's box.
pub fn synthetic_scene(seed: u64, width: usize, height: usize) -> (Image, BBox) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side_max = (width.min(height) / 2).max(2);
    let side = rng.random_range((side_max / 2).max(1)..=side_max);
    let bx = rng.random_range(0..=width - side);
    let by = rng.random_range(0..=height - side);
    let base: [f64; 3] = [rng.random_range(60.0..110.0), rng.random_range(90.0..150.0), rng.random_range(60.0..110.0)];
    let bbox = BBox { x: bx, y: by, w: side, h: side };
    let noise: Vec<f64> = (0..width * height).map(|_| rng.random_range(-25.0..25.0)).collect();
    let img = Image::from_fn(width, height, ColorSpace::Rgb, |x, y, c| {
        if bbox.contains(x, y) {
            [220.0, 40.0, 40.0][c] as u8
        } else {
            (base[c] + noise[y * width + x]).round().clamp(0.0, 255.0) as u8
        }
    })
    .expect("valid dims");
    (img, bbox)
}
