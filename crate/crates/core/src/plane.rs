use ndarray::Array2;

use crate::error::{Error, Result};
use crate::resample;

/// A single real-valued channel, indexed `[row, column]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    values: Array2<f64>,
}

impl Plane {
    /// Wraps a `height × width` array. Rejects empty or non-finite data.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDimensions("empty plane".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("plane contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn from_vec(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let arr = Array2::from_shape_vec((height, width), values)
            .map_err(|e| Error::InvalidDimensions(e.to_string()))?;
        Self::new(arr)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), value))
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[[y, x]]
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Row-major copy of the values.
    pub fn to_vec(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Bilinear resize with half-pixel centres.
    pub fn upsample(&self, target_w: usize, target_h: usize) -> Result<Plane> {
        if target_w == 0 || target_h == 0 {
            return Err(Error::InvalidDimensions(format!("upsample target {target_w}x{target_h}")));
        }
        let data = resample::bilinear(&self.to_vec(), self.width(), self.height(), 1, target_w, target_h);
        Plane::from_vec(target_w, target_h, data)
    }

    /// Min–max scaled copy in `[0, 1]`; a constant plane maps to all zeros.
    pub fn normalized(&self) -> Plane {
        let (lo, hi) = self.min_max();
        let range = hi - lo;
        let values = if range > 0.0 {
            self.values.mapv(|v| ((v - lo) / range).clamp(0.0, 1.0))
        } else {
            Array2::zeros(self.values.raw_dim())
        };
        Plane { values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Plane> {
        Plane::new(self.values.mapv(f))
    }
}
