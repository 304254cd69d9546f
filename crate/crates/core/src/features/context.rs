//! Covariance context descriptors.
//!
//! A keypoint's context is summarized by the covariance of axis-aligned dense
//! gradient histograms sampled on a square region around it. The covariance
//! lives on the SPD manifold; it is mapped to a flat vector by taking the
//! matrix logarithm at the identity and half-vectorizing with `√2` weights on
//! the off-diagonal, which makes Euclidean distance between vectors equal the
//! Frobenius distance between logarithms.

use std::f64::consts::{SQRT_2, TAU};
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use super::{Descriptor, Keypoint, DESCRIPTOR_DIM};
use crate::error::{Error, Result};
use crate::geometry::PixelPoint;
use crate::image::GrayImage;
use crate::par::{self, Exec};

/// Length of a half-vectorized 128x128 symmetric matrix.
pub const CONTEXT_DIM: usize = DESCRIPTOR_DIM * (DESCRIPTOR_DIM + 1) / 2;

/// Side of the fixed dense sampling patch (4x4 cells of 4 px).
pub const DENSE_PATCH: usize = 16;
const DENSE_CELL: usize = 4;
const BINS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ContextConfig {
    /// Multiplier on keypoint scale; 6 by default.
    pub epsilon: f64,
    /// Base multiplier so that `epsilon * roi_base = 24`.
    pub roi_base: f64,
    /// Extra factor for RoI sweeps; 1 is the default size.
    pub scale_factor: f64,
    /// Dense grid spacing in pixels.
    pub stride: usize,
    /// Pre-smoothing applied before dense gradients.
    pub smoothing_sigma: f64,
    pub exec: Exec,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            epsilon: 6.0,
            roi_base: 4.0,
            scale_factor: 1.0,
            stride: 4,
            smoothing_sigma: 1.0,
            exec: Exec::Parallel,
        }
    }
}

/// Axis-aligned square region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub center: PixelPoint,
    pub side: f64,
}

impl Roi {
    pub fn min_x(&self) -> f64 {
        self.center.u - self.side / 2.0
    }
    pub fn min_y(&self) -> f64 {
        self.center.v - self.side / 2.0
    }
}

/// Square RoI of side `scale_factor * epsilon * roi_base * scale` centered on
/// the keypoint, shrunk about its center until it fits inside a
/// `width x height` image.
pub fn context_roi(kp: &Keypoint, cfg: &ContextConfig, width: usize, height: usize) -> Roi {
    let side = cfg.scale_factor * cfg.epsilon * cfg.roi_base * kp.scale;
    let (u, v) = (kp.pos.u, kp.pos.v);
    let max_half = u
        .min(v)
        .min(width as f64 - 1.0 - u)
        .min(height as f64 - 1.0 - v)
        .max(0.0);
    Roi { center: kp.pos, side: side.min(2.0 * max_half) }
}

/// Per-pixel gradient magnitude and soft orientation bin.
pub(crate) struct OrientedGradients {
    width: usize,
    height: usize,
    mag: Vec<f32>,
    bin: Vec<u8>,
    frac: Vec<f32>,
}

impl OrientedGradients {
    pub(crate) fn new(img: &GrayImage, smoothing_sigma: f64) -> Self {
        let smooth = img.gaussian_blur(smoothing_sigma);
        let g = smooth.gradients();
        let n = g.gx.len();
        let mut mag = Vec::with_capacity(n);
        let mut bin = Vec::with_capacity(n);
        let mut frac = Vec::with_capacity(n);
        for (&gx, &gy) in g.gx.iter().zip(&g.gy) {
            let (gx, gy) = (gx as f64, gy as f64);
            let m = gx.hypot(gy);
            let o = gy.atan2(gx).rem_euclid(TAU) * BINS as f64 / TAU;
            let b = o.floor();
            mag.push(m as f32);
            bin.push((b as usize % BINS) as u8);
            frac.push((o - b) as f32);
        }
        OrientedGradients { width: g.width, height: g.height, mag, bin, frac }
    }

    fn describe_patch(&self, x0: isize, y0: isize) -> Descriptor {
        let mut hist = [0.0f64; DESCRIPTOR_DIM];
        for py in 0..DENSE_PATCH {
            let y = y0 + py as isize;
            if y < 0 || y >= self.height as isize {
                continue;
            }
            let row = py / DENSE_CELL;
            for px in 0..DENSE_PATCH {
                let x = x0 + px as isize;
                if x < 0 || x >= self.width as isize {
                    continue;
                }
                let i = y as usize * self.width + x as usize;
                let m = self.mag[i] as f64;
                if m == 0.0 {
                    continue;
                }
                let cell = row * 4 + px / DENSE_CELL;
                let b = self.bin[i] as usize;
                let f = self.frac[i] as f64;
                hist[cell * BINS + b] += m * (1.0 - f);
                hist[cell * BINS + (b + 1) % BINS] += m * f;
            }
        }
        Descriptor::from_histogram(&hist)
    }

    /// Dense descriptors on a regular grid inside `roi`, in row-major grid
    /// order. Nodes are inset by half a patch and the grid is centered.
    pub(crate) fn dense(&self, roi: &Roi, stride: usize) -> Result<Vec<Descriptor>> {
        let min = DENSE_PATCH as f64;
        if roi.side < min {
            return Err(Error::RoiTooSmall { side: roi.side, min });
        }
        let stride = stride.max(1);
        let span = roi.side - min;
        let n = (span / stride as f64 + 1e-9).floor() as usize + 1;
        let leftover = span - ((n - 1) * stride) as f64;
        let half = min / 2.0;
        let start_x = roi.min_x() + half + leftover / 2.0;
        let start_y = roi.min_y() + half + leftover / 2.0;
        let mut out = Vec::with_capacity(n * n);
        for gy in 0..n {
            let cy = start_y + (gy * stride) as f64;
            for gx in 0..n {
                let cx = start_x + (gx * stride) as f64;
                let x0 = (cx - half).round() as isize;
                let y0 = (cy - half).round() as isize;
                out.push(self.describe_patch(x0, y0));
            }
        }
        Ok(out)
    }
}

/// Dense 128-d gradient histograms over a fixed 16x16 patch at every grid
/// node of spacing `stride` inside `roi`.
pub fn dense_descriptors(img: &GrayImage, roi: &Roi, stride: usize) -> Result<Vec<Descriptor>> {
    dense_descriptors_smoothed(img, roi, stride, ContextConfig::default().smoothing_sigma)
}

pub(crate) fn dense_descriptors_smoothed(
    img: &GrayImage,
    roi: &Roi,
    stride: usize,
    smoothing_sigma: f64,
) -> Result<Vec<Descriptor>> {
    OrientedGradients::new(img, smoothing_sigma).dense(roi, stride)
}

/// Regularized sample covariance of a descriptor set.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceDescriptor {
    /// `raw + regularization * I`, exactly symmetric.
    pub matrix: DMatrix<f64>,
    /// The diagonal loading that was added.
    pub regularization: f64,
}

impl CovarianceDescriptor {
    /// The unregularized sample covariance.
    pub fn raw(&self) -> DMatrix<f64> {
        let n = self.matrix.nrows();
        &self.matrix - DMatrix::identity(n, n) * self.regularization
    }
}

/// Unbiased sample covariance plus diagonal loading
/// `1e-6 * trace / 128 + 1e-12`.
///
/// Samples are sorted by bit pattern before accumulation, so any permutation
/// of the input gives a bitwise-identical matrix.
pub fn covariance_descriptor(samples: &[Descriptor]) -> Result<CovarianceDescriptor> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let mut sorted: Vec<&Descriptor> = samples.iter().collect();
    sorted.sort_by(|a, b| {
        a.0.iter()
            .map(|v| v.to_bits())
            .cmp(b.0.iter().map(|v| v.to_bits()))
    });

    let d = DESCRIPTOR_DIM;
    let mut mean = vec![0.0f64; d];
    for s in &sorted {
        for (m, &v) in mean.iter_mut().zip(s.0.iter()) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut centered = DMatrix::<f64>::zeros(n, d);
    for (i, s) in sorted.iter().enumerate() {
        for j in 0..d {
            centered[(i, j)] = s.0[j] as f64 - mean[j];
        }
    }
    let mut c = centered.tr_mul(&centered) / (n as f64 - 1.0);
    for i in 0..d {
        for j in 0..i {
            c[(i, j)] = c[(j, i)];
        }
    }
    let trace: f64 = (0..d).map(|i| c[(i, i)]).sum();
    let lambda = 1e-6 * trace / d as f64 + 1e-12;
    for i in 0..d {
        c[(i, i)] += lambda;
    }
    Ok(CovarianceDescriptor { matrix: c, regularization: lambda })
}

/// Half-vectorized matrix logarithm of an SPD matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector(pub Vec<f64>);

/// Row-major upper-triangle vectorization with `√2` on off-diagonal entries.
pub(crate) fn half_vectorize(w: &DMatrix<f64>) -> Vec<f64> {
    let d = w.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        out.push(w[(i, i)]);
        for j in i + 1..d {
            out.push(SQRT_2 * w[(i, j)]);
        }
    }
    out
}

/// Symmetric matrix logarithm via eigendecomposition.
pub(crate) fn spd_log(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(c.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    let v = &eig.eigenvectors;
    let logs = eig.eigenvalues.map(|l| l.ln());
    let mut scaled = v.clone();
    for (j, l) in logs.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*l);
    }
    let mut w = scaled * v.transpose();
    let d = w.nrows();
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (w[(i, j)] + w[(j, i)]);
            w[(i, j)] = avg;
            w[(j, i)] = avg;
        }
    }
    Ok(w)
}

/// Map a covariance to the tangent space at the identity and flatten it.
pub fn log_euclidean_vec(c: &CovarianceDescriptor) -> Result<ContextVector> {
    let w = spd_log(&c.matrix)?;
    Ok(ContextVector(half_vectorize(&w)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContextStats {
    pub attached: usize,
    pub dropped: usize,
}

/// Compute context vectors for `kps`. Keypoints whose RoI is too small (or
/// whose covariance cannot be formed) are dropped; order is preserved.
pub fn attach_context(img: &GrayImage, kps: &[Keypoint], cfg: &ContextConfig) -> (Vec<Keypoint>, ContextStats) {
    let grads = OrientedGradients::new(img, cfg.smoothing_sigma);
    let (w, h) = img.dims();
    let results = par::map_slice(cfg.exec, kps, |kp| {
        let roi = context_roi(kp, cfg, w, h);
        let dense = grads.dense(&roi, cfg.stride).ok()?;
        let cov = covariance_descriptor(&dense).ok()?;
        let v = log_euclidean_vec(&cov).ok()?;
        let ctx: Arc<[f32]> = v.0.iter().map(|&x| x as f32).collect();
        let mut out = kp.clone();
        out.context = Some(ctx);
        Some(out)
    });
    let mut stats = ContextStats::default();
    let mut out = Vec::with_capacity(kps.len());
    for r in results {
        match r {
            Some(kp) => {
                stats.attached += 1;
                out.push(kp);
            }
            None => stats.dropped += 1,
        }
    }
    (out, stats)
}
