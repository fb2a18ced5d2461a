//! Histogram estimates of entropy and mutual information between planes.
//!
//! Planes are min–max normalized and binned into `B` equal-width bins, then
//! flattened row-major. All quantities are in bits.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::{ColorSpace, Image};
use crate::plane::Plane;

/// Default histogram resolution; matches 8-bit intensity depth.
pub const DEFAULT_BINS: usize = 256;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
const SUM_TOL: f64 = 1e-9;

/// Luma plane of an image. Gray images pass through unchanged.
pub fn grayscale(img: &Image) -> Result<Plane> {
    let values: Vec<f64> = match img.color_space() {
        ColorSpace::Gray => img.data().iter().map(|&v| f64::from(v)).collect(),
        ColorSpace::Rgb => img
            .data()
            .chunks_exact(3)
            .map(|p| LUMA[0] * f64::from(p[0]) + LUMA[1] * f64::from(p[1]) + LUMA[2] * f64::from(p[2]))
            .collect(),
    };
    Plane::from_vec(img.width(), img.height(), values)
}

/// Bin indices of a flattened plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteVector {
    symbols: Vec<usize>,
    bins: usize,
}

impl DiscreteVector {
    pub fn new(symbols: Vec<usize>, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidArgument(format!("bin count must be >= 2, got {bins}")));
        }
        if let Some(&bad) = symbols.iter().find(|&&s| s >= bins) {
            return Err(Error::InvalidArgument(format!("symbol {bad} outside {bins} bins")));
        }
        Ok(Self { symbols, bins })
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    fn counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.bins];
        for &s in &self.symbols {
            counts[s] += 1;
        }
        counts
    }

    pub fn histogram(&self) -> ProbTable {
        let n = self.symbols.len().max(1) as f64;
        ProbTable { probs: self.counts().into_iter().map(|c| c as f64 / n).collect() }
    }
}

/// Min–max normalize then bin: `floor(v·B)` clamped to `B − 1`.
/// A constant plane maps every pixel to bin 0.
pub fn quantize(p: &Plane, bins: usize) -> Result<DiscreteVector> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("bin count must be >= 2, got {bins}")));
    }
    let (lo, hi) = p.min_max();
    let range = hi - lo;
    let top = bins - 1;
    let symbols = p
        .values()
        .iter()
        .map(|&v| {
            if range > 0.0 {
                let unit = ((v - lo) / range).clamp(0.0, 1.0);
                ((unit * bins as f64).floor() as usize).min(top)
            } else {
                0
            }
        })
        .collect();
    Ok(DiscreteVector { symbols, bins })
}

/// A marginal distribution over `B` symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTable {
    probs: Vec<f64>,
}

impl ProbTable {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Joint distribution of two symbol streams; rows index the first stream.
#[derive(Debug, Clone, PartialEq)]
pub struct JointProbTable {
    probs: Array2<f64>,
}

impl JointProbTable {
    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn row_marginal(&self) -> ProbTable {
        ProbTable { probs: self.probs.rows().into_iter().map(|r| r.sum()).collect() }
    }

    pub fn col_marginal(&self) -> ProbTable {
        ProbTable { probs: self.probs.columns().into_iter().map(|c| c.sum()).collect() }
    }
}

/// Shannon entropy in bits, with `0 · log 0 = 0`.
pub fn entropy(t: &ProbTable) -> f64 {
    let h: f64 = t.probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum();
    h.max(0.0)
}

struct JointCounts {
    counts: Array2<u64>,
    total: u64,
}

fn joint_counts(a: &DiscreteVector, b: &DiscreteVector) -> Result<JointCounts> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(Error::Empty("symbol vectors"));
    }
    let mut counts = Array2::<u64>::zeros((a.bins, b.bins));
    for (&x, &y) in a.symbols.iter().zip(&b.symbols) {
        counts[[x, y]] += 1;
    }
    Ok(JointCounts { counts, total: a.len() as u64 })
}

/// Co-occurrence frequencies of aligned symbol pairs.
pub fn joint_histogram(a: &DiscreteVector, b: &DiscreteVector) -> Result<JointProbTable> {
    let jc = joint_counts(a, b)?;
    let n = jc.total as f64;
    Ok(JointProbTable { probs: jc.counts.mapv(|c| c as f64 / n) })
}

/// Entropy of a count multiset. Counts are summed in sorted order so the
/// result does not depend on how the table was traversed.
fn entropy_of_counts(mut counts: Vec<u64>, total: u64) -> f64 {
    counts.retain(|&c| c > 0);
    counts.sort_unstable();
    let n = total as f64;
    let h: f64 = counts
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// `I(a; b) = H(a) + H(b) − H(a, b)` in bits, clamped at zero.
pub fn mutual_information(a: &DiscreteVector, b: &DiscreteVector) -> Result<f64> {
    let jc = joint_counts(a, b)?;
    let rows: Vec<u64> = jc.counts.rows().into_iter().map(|r| r.sum()).collect();
    let cols: Vec<u64> = jc.counts.columns().into_iter().map(|c| c.sum()).collect();
    let h_a = entropy_of_counts(rows, jc.total);
    let h_b = entropy_of_counts(cols, jc.total);
    let h_ab = entropy_of_counts(jc.counts.iter().copied().collect(), jc.total);
    Ok((h_a + h_b - h_ab).max(0.0))
}

/// Mutual information between two planes of equal size, each quantized to `bins`.
pub fn plane_mutual_information(a: &Plane, b: &Plane, bins: usize) -> Result<f64> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", b.width(), b.height()),
            actual: format!("{}x{}", a.width(), a.height()),
        });
    }
    mutual_information(&quantize(a, bins)?, &quantize(b, bins)?)
}
