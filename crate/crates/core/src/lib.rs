//! Gradient-free visual explanations for convolutional classifiers.
//!
//! The central method, MI-CAM, weights each activation channel of a chosen
//! convolutional layer by its mutual information with the gray-scaled input
//! image and combines the channels into a rectified, normalized heatmap.
//! Score-CAM and Eigen-CAM are included as baselines, together with
//! faithfulness and localization metrics, counterfactual weight analysis and
//! cascading parameter-randomization checks.

pub mod cam;
pub mod counterfactual;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod image;
pub mod mi;
pub mod model;
pub mod plane;
mod resample;
pub mod stats;

pub use cam::{Explanation, Method, SaliencyMap, WeightVector};
pub use error::{Error, Result};
pub use image::{ColorSpace, FloatImage, Image};
pub use model::{ActivationStack, ModelHandle, Scores};
pub use plane::Plane;
