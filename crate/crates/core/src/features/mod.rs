//! Keypoints, local descriptors and covariance context descriptors.

mod context;
mod descriptor;
mod detector;

use std::sync::Arc;

pub use context::{
    attach_context, context_roi, covariance_descriptor, dense_descriptors, log_euclidean_vec,
    ContextConfig, ContextStats, CovarianceDescriptor, ContextVector, Roi, CONTEXT_DIM,
};
pub use descriptor::{describe_at, DESCRIPTOR_DIM};
pub use detector::{extract_keypoints, DetectorConfig};

use crate::error::Result;
use crate::geometry::PixelPoint;
use crate::image::GrayImage;

/// 128-bin gradient orientation histogram, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptor(pub [f32; DESCRIPTOR_DIM]);

impl Descriptor {
    /// The zero-gradient fallback, every entry `1/sqrt(128)`.
    pub fn uniform() -> Self {
        Descriptor([(1.0 / (DESCRIPTOR_DIM as f64).sqrt()) as f32; DESCRIPTOR_DIM])
    }

    /// Normalize raw histogram mass, clip at 0.2 and renormalize.
    /// Falls back to [`Descriptor::uniform`] when there is no mass.
    pub fn from_histogram(hist: &[f64]) -> Self {
        debug_assert_eq!(hist.len(), DESCRIPTOR_DIM);
        let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Descriptor::uniform();
        }
        let mut v: Vec<f64> = hist.iter().map(|x| (x / norm).min(0.2)).collect();
        let norm2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm2);
        let mut out = [0.0f32; DESCRIPTOR_DIM];
        for (o, x) in out.iter_mut().zip(&v) {
            *o = *x as f32;
        }
        Descriptor(out)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

/// A detected interest point with its local descriptor and, once attached,
/// its context vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub pos: PixelPoint,
    /// Detection scale in pixels.
    pub scale: f64,
    /// Dominant gradient orientation, radians in `[0, 2π)`.
    pub orientation: f64,
    /// Absolute detector response; keypoints are ordered by it.
    pub response: f64,
    pub descriptor: Descriptor,
    pub context: Option<Arc<[f32]>>,
}

impl Keypoint {
    pub fn new(pos: PixelPoint, scale: f64, orientation: f64, descriptor: Descriptor) -> Self {
        Keypoint { pos, scale, orientation, response: 0.0, descriptor, context: None }
    }

    pub fn context_slice(&self) -> Option<&[f32]> {
        self.context.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureConfig {
    pub detector: DetectorConfig,
    pub context: ContextConfig,
}

/// Detect, describe and attach contexts; keypoints without a context are
/// dropped.
pub fn describe_image(img: &GrayImage, cfg: &FeatureConfig) -> Result<Vec<Keypoint>> {
    let kps = extract_keypoints(img, &cfg.detector)?;
    Ok(attach_context(img, &kps, &cfg.context).0)
}
