use std::collections::HashMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::{info, warn};
use micam::cam::{self, render_overlay};
use micam::counterfactual::{counterfactual_run, PerturbPolicy};
use micam::eval::{average_drop, average_increase, evaluate_image, Annotation, EvalConfig, EvalRecord};
use micam::stats::spearman;
use micam::{fixtures, Image, Method, ModelHandle};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{BenchArgs, CounterfactualArgs, EvaluateArgs, ExplainArgs, ModelArgs, SanityArgs};
use crate::config::{self, file_stem, usage, FileConfig};

const DEFAULT_ALPHA: f64 = 0.5;
const DEFAULT_REPEATS: usize = 10;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_image(path: &Path) -> Result<Image> {
    Image::load(path).with_context(|| format!("loading image {}", path.display()))
}

struct Setup {
    model: ModelHandle,
    layer: String,
    bins: usize,
}

fn setup(a: ModelArgs, file: &FileConfig) -> Result<(Setup, Option<PathBuf>)> {
    let model_spec = config::required("model", a.model.or_else(|| file.model.clone()))?;
    let model = config::load_model(&model_spec)?;
    let layer = config::resolve_layer(&model, a.layer.or_else(|| file.layer.clone()))?;
    let bins = config::bins(a.bins.or(file.bins))?;
    Ok((Setup { model, layer, bins }, a.out.or_else(|| file.out.clone())))
}

fn check_class(m: &ModelHandle, class: Option<usize>) -> Result<Option<usize>> {
    match class {
        Some(c) if c >= m.class_count() => usage(format!("--class {c} out of range for {} classes", m.class_count())),
        c => Ok(c),
    }
}

pub fn explain(a: ExplainArgs, file: &FileConfig) -> Result<()> {
    let (s, out) = setup(a.model, file)?;
    let method = a.method.or(file.method).unwrap_or(Method::MiCam);
    let alpha = config::unit_interval("alpha", a.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA))?;
    let class = check_class(&s.model, a.class.or(file.class))?;
    let path = config::required("image", a.image.or_else(|| file.image.clone()))?;
    let out = config::out_dir(out)?;

    let img = load_image(&path)?;
    let e = cam::explain(&s.model, &img, &s.layer, method, s.bins, class)?;
    let stem = format!("{}.{}", file_stem(&path), method);

    let overlay = out.join(format!("{stem}.overlay.png"));
    render_overlay(&e.input, &e.saliency, alpha)?.save_png(&overlay)?;
    let saliency = out.join(format!("{stem}.saliency.csv"));
    e.saliency.write_csv(create(&saliency)?)?;
    let weights = out.join(format!("{stem}.weights.csv"));
    e.weights.write_csv(&s.layer, create(&weights)?)?;

    info!("{method} on layer {} (class {}): wrote {}, {}, {}", s.layer, e.class, overlay.display(), saliency.display(), weights.display());
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnnotationFile {
    Many(Vec<Annotation>),
    One(Annotation),
}

fn load_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading annotations {}", path.display()))?;
    let parsed: AnnotationFile =
        serde_json::from_str(&text).map_err(|e| config::UsageError(format!("annotations {}: {e}", path.display())))?;
    Ok(match parsed {
        AnnotationFile::Many(v) => v,
        AnnotationFile::One(a) => vec![a],
    })
}

#[derive(Serialize)]
struct ImageRow {
    image: String,
    class: usize,
    original: f64,
    masked: f64,
    baseline: f64,
    deletion_auc: f64,
    insertion_auc: f64,
    pointing_hit: Option<u8>,
    ebpg: Option<f64>,
}

#[derive(Serialize)]
struct CurveRow<'a> {
    image: &'a str,
    curve: &'static str,
    fraction: f64,
    score: f64,
}

#[derive(Serialize)]
struct EvalSummary {
    model: String,
    layer: String,
    method: Method,
    images: usize,
    average_drop: f64,
    average_increase: f64,
    deletion_auc: f64,
    insertion_auc: f64,
    annotated: usize,
    pointing_game_hit_rate: Option<f64>,
    ebpg: Option<f64>,
    config: EvalConfig,
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn evaluate(a: EvaluateArgs, file: &FileConfig) -> Result<()> {
    let (s, out) = setup(a.model, file)?;
    let method = a.method.or(file.method).unwrap_or(Method::MiCam);
    let cfg = EvalConfig {
        threshold: config::threshold(a.threshold.or(file.threshold))?,
        curve: config::curve(a.step.or(file.step), a.steps.or(file.steps))?,
        insertion_order: a.insertion_order.or(file.insertion_order).unwrap_or_default(),
    };
    let inputs = if a.images.is_empty() { file.images.clone().unwrap_or_default() } else { a.images };
    let paths = config::collect_images(&inputs)?;
    if paths.is_empty() {
        return usage("no input images to evaluate");
    }
    let annotations = match a.annotations.or_else(|| file.annotations.clone()) {
        Some(p) => load_annotations(&p)?,
        None => Vec::new(),
    };
    let by_name: HashMap<&str, &Annotation> = annotations.iter().map(|x| (x.image.as_str(), x)).collect();
    let out = config::out_dir(out)?;

    let results: Vec<Result<_>> = paths
        .par_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let ann = by_name.get(name.as_str()).or_else(|| by_name.get(p.to_string_lossy().as_ref())).copied();
            let img = load_image(p)?;
            let class = check_class(&s.model, ann.and_then(|x| x.class))?;
            let e = cam::explain(&s.model, &img, &s.layer, method, s.bins, class)?;
            let metrics = evaluate_image(&s.model, &name, &img, &e.saliency, e.class, ann.map(Annotation::bbox), &cfg)
                .with_context(|| format!("evaluating {}", p.display()))?;
            Ok(metrics)
        })
        .collect();
    let metrics = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut rows = csv::Writer::from_writer(create(&out.join("per_image.csv"))?);
    let mut curves = csv::Writer::from_writer(create(&out.join("curves.csv"))?);
    for m in &metrics {
        rows.serialize(ImageRow {
            image: m.record.id.clone(),
            class: m.record.class,
            original: m.record.original,
            masked: m.record.masked,
            baseline: m.record.baseline,
            deletion_auc: m.deletion_auc,
            insertion_auc: m.insertion_auc,
            pointing_hit: m.pointing_hit.map(u8::from),
            ebpg: m.ebpg,
        })?;
        for (name, c) in [("deletion", &m.deletion), ("insertion", &m.insertion)] {
            for (&fraction, &score) in c.fractions().iter().zip(c.scores()) {
                curves.serialize(CurveRow { image: &m.record.id, curve: name, fraction, score })?;
            }
        }
    }
    rows.flush()?;
    curves.flush()?;

    let records: Vec<EvalRecord> = metrics.iter().map(|m| m.record.clone()).collect();
    let hits: Vec<f64> = metrics.iter().filter_map(|m| m.pointing_hit).map(|h| f64::from(u8::from(h))).collect();
    let energy: Vec<f64> = metrics.iter().filter_map(|m| m.ebpg).collect();
    let summary = EvalSummary {
        model: s.model.name().to_string(),
        layer: s.layer,
        method,
        images: metrics.len(),
        average_drop: average_drop(&records)?,
        average_increase: average_increase(&records)?,
        deletion_auc: mean(&metrics.iter().map(|m| m.deletion_auc).collect::<Vec<_>>()).unwrap_or_default(),
        insertion_auc: mean(&metrics.iter().map(|m| m.insertion_auc).collect::<Vec<_>>()).unwrap_or_default(),
        annotated: hits.len(),
        pointing_game_hit_rate: mean(&hits),
        ebpg: mean(&energy),
        config: cfg,
    };
    write_json(&out.join("summary.json"), &summary)?;
    info!(
        "{} images: AD {:.4}% AI {:.4}% deletion AUC {:.5} insertion AUC {:.5}",
        summary.images, summary.average_drop, summary.average_increase, summary.deletion_auc, summary.insertion_auc
    );
    Ok(())
}

#[derive(Serialize)]
struct MethodSummary {
    method: Method,
    l1: f64,
    linf: f64,
    relative_l1: f64,
}

#[derive(Serialize)]
struct CounterfactualSummary {
    model: String,
    image: String,
    layer: String,
    class: usize,
    policy: PerturbPolicy,
    changed_pixels: usize,
    methods: Vec<MethodSummary>,
}

pub fn counterfactual(a: CounterfactualArgs, file: &FileConfig) -> Result<()> {
    let (s, out) = setup(a.model, file)?;
    let path = config::required("image", a.image.or_else(|| file.image.clone()))?;
    let fraction = config::unit_interval("fraction", a.fraction.or(file.fraction).unwrap_or(0.5))?;
    let fill = a.fill.or(file.fill).unwrap_or(0);
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let spec = s.model.input_spec();
    let policy = match a.policy.or_else(|| file.policy.clone()).as_deref().unwrap_or("occlude") {
        "occlude" => PerturbPolicy::OccludeTopSalient { fraction, fill },
        "patch" => PerturbPolicy::equal_area_patch(spec.width, spec.height, fraction, fill, seed),
        "fill" => PerturbPolicy::ConstantFill { fraction, fill, seed },
        other => return usage(format!("unknown policy `{other}` (expected occlude, patch or fill)")),
    };
    let methods = if a.methods.is_empty() { file.methods.clone().unwrap_or(Method::ALL.to_vec()) } else { a.methods };
    let out = config::out_dir(out)?;

    let img = load_image(&path)?;
    let run = counterfactual_run(&s.model, &img, &s.layer, &policy, &methods, s.bins)?;
    run.perturbed.save_png(out.join("perturbed.png"))?;
    for d in &run.methods {
        d.write_csv(create(&out.join(format!("{}.divergence.csv", d.method)))?)?;
        info!("{}: L1 {:.6} relative {:.6}", d.method, d.report.l1, d.report.relative_l1);
    }
    let changed = run.original.data().chunks(run.original.channels()).zip(run.perturbed.data().chunks(run.perturbed.channels())).filter(|(x, y)| x != y).count();
    let summary = CounterfactualSummary {
        model: s.model.name().to_string(),
        image: file_stem(&path),
        layer: s.layer,
        class: run.class,
        policy,
        changed_pixels: changed,
        methods: run
            .methods
            .iter()
            .map(|d| MethodSummary { method: d.method, l1: d.report.l1, linf: d.report.linf, relative_l1: d.report.relative_l1 })
            .collect(),
    };
    write_json(&out.join("summary.json"), &summary)
}

#[derive(Serialize)]
struct SanityRow {
    depth: usize,
    randomized_layers: String,
    spearman: f64,
}

pub fn sanity(a: SanityArgs, file: &FileConfig) -> Result<()> {
    let (s, out) = setup(a.model, file)?;
    let path = config::required("image", a.image.or_else(|| file.image.clone()))?;
    let method = a.method.or(file.method).unwrap_or(Method::MiCam);
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let params = s.model.parameterized_layer_names();
    let mut depths = a.depths.or_else(|| file.depths.clone()).unwrap_or_else(|| (1..=params.len()).collect());
    if let Some(&d) = depths.iter().find(|&&d| d == 0 || d > params.len()) {
        return usage(format!("depth {d} outside 1..={} for model `{}`", params.len(), s.model.name()));
    }
    depths.sort_unstable();
    depths.dedup();
    let out = config::out_dir(out)?;

    let img = load_image(&path)?;
    let base = cam::explain(&s.model, &img, &s.layer, method, s.bins, None)?;
    base.saliency.to_gray_image().save_png(out.join("depth_0.png"))?;
    let reference = base.saliency.to_vec();
    let mut rows = vec![SanityRow { depth: 0, randomized_layers: String::new(), spearman: spearman(&reference, &reference)? }];

    let results: Vec<Result<(usize, f64)>> = depths
        .par_iter()
        .map(|&d| {
            let randomized = s.model.randomize_cascade(d, seed)?;
            let e = cam::explain(&randomized, &img, &s.layer, method, s.bins, Some(base.class))?;
            e.saliency.to_gray_image().save_png(out.join(format!("depth_{d}.png")))?;
            Ok((d, spearman(&reference, &e.saliency.to_vec())?))
        })
        .collect();
    for r in results {
        let (d, rho) = r?;
        let layers: Vec<&str> = params.iter().rev().take(d).copied().collect();
        rows.push(SanityRow { depth: d, randomized_layers: layers.join(";"), spearman: rho });
        info!("depth {d}: spearman {rho:.6}");
    }
    let mut w = csv::Writer::from_writer(create(&out.join("spearman.csv"))?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    model: String,
    method: Method,
    repeats: usize,
    images: usize,
    mean_seconds: f64,
    min_seconds: f64,
    max_seconds: f64,
}

pub fn bench(a: BenchArgs, file: &FileConfig) -> Result<()> {
    let repeats = a.repeats.or(file.repeats).unwrap_or(DEFAULT_REPEATS);
    if repeats == 0 {
        return usage("--repeats must be at least 1");
    }
    let specs = if a.models.is_empty() { file.model.clone().into_iter().collect() } else { a.models };
    if specs.is_empty() {
        return usage("--model is required");
    }
    let methods = if a.methods.is_empty() { file.methods.clone().unwrap_or(Method::ALL.to_vec()) } else { a.methods };
    let bins = config::bins(a.bins.or(file.bins))?;
    let inputs = if a.images.is_empty() { file.images.clone().unwrap_or_default() } else { a.images };
    let paths = config::collect_images(&inputs)?;
    let loaded = paths.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
    let out = config::out_dir(a.out.or_else(|| file.out.clone()))?;

    let mut rows = Vec::new();
    for spec in &specs {
        let m = config::load_model(spec)?;
        let layer = config::resolve_layer(&m, a.layer.clone().or_else(|| file.layer.clone()))?;
        let images = if loaded.is_empty() {
            let i = m.input_spec();
            vec![fixtures::synthetic_scene(0, i.width, i.height).0]
        } else {
            loaded.clone()
        };
        let mut means = HashMap::new();
        for &method in &methods {
            let mut times = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let start = Instant::now();
                for img in &images {
                    cam::explain(&m, img, &layer, method, bins, None)?;
                }
                times.push(start.elapsed().as_secs_f64());
            }
            let avg = times.iter().sum::<f64>() / repeats as f64;
            means.insert(method, avg);
            rows.push(BenchRow {
                model: m.name().to_string(),
                method,
                repeats,
                images: images.len(),
                mean_seconds: avg,
                min_seconds: times.iter().copied().fold(f64::INFINITY, f64::min),
                max_seconds: times.iter().copied().fold(0.0, f64::max),
            });
        }
        if let (Some(mi), Some(score)) = (means.get(&Method::MiCam), means.get(&Method::ScoreCam)) {
            if mi < score {
                info!("{}: mi-cam {mi:.6}s < score-cam {score:.6}s as expected", m.name());
            } else {
                warn!("{}: mi-cam {mi:.6}s not faster than score-cam {score:.6}s", m.name());
            }
        }
    }
    let mut w = csv::Writer::from_writer(create(&out.join("bench.csv"))?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
