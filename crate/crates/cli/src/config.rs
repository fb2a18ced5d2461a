//! Run settings: command-line flags layered over an optional JSON file.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use micam::eval::{CurveConfig, InsertionOrder, DEFAULT_STEP, DEFAULT_STEPS, DEFAULT_THRESHOLD};
use micam::mi::DEFAULT_BINS;
use micam::{fixtures, Method, ModelHandle};
use serde::Deserialize;

/// Environment variable naming the directory relative model paths resolve against.
pub const MODEL_DIR_ENV: &str = "MICAM_MODEL_DIR";
/// Model path that selects the built-in toy classifier.
pub const BUILTIN_TOY: &str = "builtin:toy";

/// Bad input from the caller. Maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Contents of a `--config` file. Every field is optional; flags win.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub layer: Option<String>,
    pub method: Option<Method>,
    pub methods: Option<Vec<Method>>,
    pub image: Option<PathBuf>,
    pub images: Option<Vec<PathBuf>>,
    pub policy: Option<String>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub bins: Option<usize>,
    pub class: Option<usize>,
    pub alpha: Option<f64>,
    pub threshold: Option<f64>,
    pub step: Option<f64>,
    pub steps: Option<usize>,
    pub insertion_order: Option<InsertionOrder>,
    pub seed: Option<u64>,
    pub annotations: Option<PathBuf>,
    pub depths: Option<Vec<usize>>,
    pub repeats: Option<usize>,
    pub fraction: Option<f64>,
    pub fill: Option<u8>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }
}

/// Loads a model by path, by name under the model directory, or the
/// built-in toy classifier.
pub fn load_model(spec: &str) -> Result<ModelHandle> {
    if spec == BUILTIN_TOY {
        return Ok(ModelHandle::from_file(fixtures::toy_classifier())?);
    }
    let direct = PathBuf::from(spec);
    let path = match std::env::var_os(MODEL_DIR_ENV) {
        Some(dir) if !direct.is_absolute() && !direct.exists() => PathBuf::from(dir).join(&direct),
        _ => direct,
    };
    ModelHandle::load(&path).with_context(|| format!("loading model {}", path.display()))
}

pub fn resolve_layer(m: &ModelHandle, layer: Option<String>) -> Result<String> {
    match layer {
        Some(l) => Ok(l),
        None => match m.last_conv_layer() {
            Some(l) => Ok(l.to_string()),
            None => usage(format!("model `{}` has no conv layer; pass --layer", m.name())),
        },
    }
}

pub fn bins(v: Option<usize>) -> Result<usize> {
    let b = v.unwrap_or(DEFAULT_BINS);
    if b < 2 {
        return usage(format!("--bins must be at least 2, got {b}"));
    }
    Ok(b)
}

pub fn unit_interval(name: &str, v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return usage(format!("--{name} must lie in [0, 1], got {v}"));
    }
    Ok(v)
}

pub fn threshold(v: Option<f64>) -> Result<f64> {
    unit_interval("threshold", v.unwrap_or(DEFAULT_THRESHOLD))
}

pub fn curve(step: Option<f64>, steps: Option<usize>) -> Result<CurveConfig> {
    let cfg = CurveConfig { step: step.unwrap_or(DEFAULT_STEP), steps: steps.unwrap_or(DEFAULT_STEPS) };
    if !cfg.step.is_finite() || cfg.step <= 0.0 || cfg.steps == 0 || cfg.step * cfg.steps as f64 > 1.0 + 1e-9 {
        return usage(format!("curve step {} x {} steps must be positive and cover at most the image", cfg.step, cfg.steps));
    }
    Ok(cfg)
}

pub fn out_dir(v: Option<PathBuf>) -> Result<PathBuf> {
    let dir = match v {
        Some(d) => d,
        None => return usage("--out is required"),
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn required<T>(name: &str, v: Option<T>) -> Result<T> {
    match v {
        Some(v) => Ok(v),
        None => usage(format!("--{name} is required")),
    }
}

/// Expands directories to the PNG/JPEG files they contain, sorted by name.
pub fn collect_images(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
                })
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}
