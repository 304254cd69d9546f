use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::flow::{motion_histogram, optical_flow, FlowField, MOTION_HIST_DIM};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::par::{self, Exec};

/// Motion histogram plus the blur score.
pub const FEATURE_DIM: usize = MOTION_HIST_DIM + 1;

const BLUR_MIN_SIDE: usize = 16;
const BLUR_TAPS: isize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameQualityFeature {
    pub motion_hist: Vec<f64>,
    pub blur: f64,
}

impl FrameQualityFeature {
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.motion_hist.clone();
        v.push(self.blur);
        v
    }
}

/// No-reference blur estimate in `[0, 1]`: the share of neighboring-pixel
/// variation that survives a strong 1D low-pass, worst of the two axes.
/// A constant image has no variation to lose and scores 1.
pub fn blur_metric(img: &GrayImage) -> Result<f64> {
    let (w, h) = img.dims();
    if w < BLUR_MIN_SIDE || h < BLUR_MIN_SIDE {
        return Err(Error::ImageTooSmall { width: w, height: h, min: BLUR_MIN_SIDE });
    }
    let r = BLUR_TAPS / 2;
    let avg = |horizontal: bool, x: usize, y: usize| -> f64 {
        let mut s = 0.0;
        for k in -r..=r {
            s += if horizontal {
                img.get_clamped(x as isize + k, y as isize)
            } else {
                img.get_clamped(x as isize, y as isize + k)
            } as f64;
        }
        s / BLUR_TAPS as f64
    };
    let mut scores = [0.0f64; 2];
    for (slot, horizontal) in [(0, true), (1, false)] {
        let mut sum_f = 0.0;
        let mut sum_v = 0.0;
        for y in 0..h {
            for x in 0..w {
                let (px, py) = if horizontal {
                    if x == 0 {
                        continue;
                    }
                    (x - 1, y)
                } else {
                    if y == 0 {
                        continue;
                    }
                    (x, y - 1)
                };
                let df = (img.get(x, y) - img.get(px, py)).abs() as f64;
                let db = (avg(horizontal, x, y) - avg(horizontal, px, py)).abs();
                sum_f += df;
                sum_v += (df - db).max(0.0);
            }
        }
        scores[slot] = if sum_f > 0.0 { ((sum_f - sum_v) / sum_f).clamp(0.0, 1.0) } else { 1.0 };
    }
    Ok(scores[0].max(scores[1]))
}

/// Per-frame quality features; frame 0 uses zero flow.
pub fn frame_features(seq: &[GrayImage], exec: Exec) -> Result<Vec<FrameQualityFeature>> {
    for f in seq.iter().skip(1) {
        if f.dims() != seq[0].dims() {
            return Err(Error::SizeMismatch(seq[0].dims(), f.dims()));
        }
    }
    par::map_range(exec, seq.len(), |i| {
        let flow = if i == 0 {
            let (w, h) = seq[0].dims();
            FlowField::zeros(w, h)
        } else {
            optical_flow(&seq[i - 1], &seq[i])?
        };
        Ok(FrameQualityFeature { motion_hist: motion_histogram(&flow), blur: blur_metric(&seq[i])? })
    })
    .into_iter()
    .collect()
}

/// Linear keep/drop rule on [`FrameQualityFeature`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPruner {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
}

impl LinearPruner {
    /// Zero weights; keeps every frame.
    pub fn keep_all() -> Self {
        LinearPruner { weights: vec![0.0; FEATURE_DIM], bias: 0.0, threshold: 0.0 }
    }

    pub fn score(&self, f: &FrameQualityFeature) -> f64 {
        let x = f.to_vector();
        self.bias + self.weights.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn keeps(&self, f: &FrameQualityFeature) -> bool {
        self.score(f) >= self.threshold
    }
}

/// Indices of frames whose score reaches the pruner threshold.
pub fn prune_frames(seq: &[GrayImage], pruner: &LinearPruner, exec: Exec) -> Result<Vec<usize>> {
    if pruner.weights.len() != FEATURE_DIM {
        return Err(Error::DimensionMismatch { expected: FEATURE_DIM, got: pruner.weights.len() });
    }
    let feats = frame_features(seq, exec)?;
    Ok(feats.iter().enumerate().filter(|(_, f)| pruner.keeps(f)).map(|(i, _)| i).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPruner {
    pub pruner: LinearPruner,
    pub training_accuracy: f64,
}

const ITERATIONS: usize = 500;
const L2: f64 = 1e-3;
const STEP: f64 = 0.5;

/// L2-regularized logistic regression by full-batch gradient descent.
///
/// Features are standardized internally; the returned weights act on raw
/// features. `true` labels mean "keep".
pub fn train_pruner(features: &[FrameQualityFeature], labels: &[bool], seed: u64) -> Result<TrainedPruner> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: features.len(), got: labels.len() });
    }
    if !labels.iter().any(|&l| l) || !labels.iter().any(|&l| !l) {
        return Err(Error::SingleClass);
    }
    let xs: Vec<Vec<f64>> = features.iter().map(|f| f.to_vector()).collect();
    let n = xs.len() as f64;
    let dim = FEATURE_DIM;
    let mut mean = vec![0.0; dim];
    let mut scale = vec![0.0; dim];
    for x in &xs {
        for k in 0..dim {
            mean[k] += x[k] / n;
        }
    }
    for x in &xs {
        for k in 0..dim {
            scale[k] += (x[k] - mean[k]).powi(2) / n;
        }
    }
    scale.iter_mut().for_each(|s| *s = if *s > 1e-24 { s.sqrt() } else { 1.0 });
    let zs: Vec<Vec<f64>> = xs.iter().map(|x| (0..dim).map(|k| (x[k] - mean[k]) / scale[k]).collect()).collect();
    let ys: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..dim).map(|_| rng.random_range(-1e-3..1e-3)).collect();
    let mut b = 0.0;
    for _ in 0..ITERATIONS {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (z, y) in zs.iter().zip(&ys) {
            let t = b + w.iter().zip(z).map(|(a, c)| a * c).sum::<f64>();
            let p = 1.0 / (1.0 + (-t).exp());
            let e = p - y;
            for k in 0..dim {
                gw[k] += e * z[k] / n;
            }
            gb += e / n;
        }
        for k in 0..dim {
            w[k] -= STEP * (gw[k] + L2 * w[k]);
        }
        b -= STEP * gb;
    }

    let weights: Vec<f64> = (0..dim).map(|k| w[k] / scale[k]).collect();
    let bias = b - (0..dim).map(|k| w[k] * mean[k] / scale[k]).sum::<f64>();
    let pruner = LinearPruner { weights, bias, threshold: 0.0 };
    let correct = features.iter().zip(labels).filter(|(f, &l)| pruner.keeps(f) == l).count();
    Ok(TrainedPruner { pruner, training_accuracy: correct as f64 / n })
}

/// Labeled features from generated frame pairs: sharp with small motion
/// (keep) against blurred with fast motion (drop).
pub fn synthetic_training_set(
    width: usize,
    height: usize,
    per_class: usize,
    seed: u64,
) -> Result<(Vec<FrameQualityFeature>, Vec<bool>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feats = Vec::with_capacity(2 * per_class);
    let mut labels = Vec::with_capacity(2 * per_class);
    for i in 0..2 * per_class {
        let good = i % 2 == 0;
        let base = GrayImage::from_fn(width, height, |_, _| rng.random_range(0.0f32..1.0)).gaussian_blur(1.2);
        let (dx, dy, blur) = if good {
            (rng.random_range(-2i64..=2) as isize, rng.random_range(-2i64..=2) as isize, 0.0)
        } else {
            let sign = if rng.random_bool(0.5) { 1 } else { -1 };
            (rng.random_range(5i64..=8) as isize * sign, rng.random_range(-8i64..=8) as isize, rng.random_range(2.5..4.0))
        };
        let next = GrayImage::from_fn(width, height, |x, y| base.get_clamped(x as isize - dx, y as isize - dy))
            .gaussian_blur(blur);
        let flow = optical_flow(&base, &next)?;
        feats.push(FrameQualityFeature { motion_hist: motion_histogram(&flow), blur: blur_metric(&next)? });
        labels.push(good);
    }
    Ok((feats, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random_range(0.0f32..1.0))
    }

    #[test]
    fn blur_metric_contract_cases() {
        assert_eq!(blur_metric(&GrayImage::filled(32, 32, 0.3)).unwrap(), 1.0);
        assert!(matches!(blur_metric(&GrayImage::new(15, 40)), Err(Error::ImageTooSmall { .. })));
        let b = blur_metric(&noise(64, 64, 3)).unwrap();
        assert!(b < 0.3, "{b}");
    }

    #[test]
    fn blur_metric_grows_under_box_blur() {
        let mut img = noise(64, 64, 5).gaussian_blur(0.7);
        let mut prev = blur_metric(&img).unwrap();
        for _ in 0..5 {
            img = img.box_blur3();
            let b = blur_metric(&img).unwrap();
            assert!(b >= prev + 1e-4, "{prev} -> {b}");
            assert!((0.0..=1.0).contains(&b));
            prev = b;
        }
    }

    fn separable_set() -> (Vec<FrameQualityFeature>, Vec<bool>) {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let good = i % 2 == 0;
            let mut h = vec![0.0; MOTION_HIST_DIM];
            h[i % MOTION_HIST_DIM] = if good { 10.0 } else { 500.0 } + i as f64;
            feats.push(FrameQualityFeature { motion_hist: h, blur: if good { 0.2 } else { 0.8 } });
            labels.push(good);
        }
        (feats, labels)
    }

    #[test]
    fn separable_data_is_fit_exactly() {
        let (f, l) = separable_set();
        let t = train_pruner(&f, &l, 1).unwrap();
        assert_eq!(t.training_accuracy, 1.0);
    }

    #[test]
    fn flipped_labels_mirror_the_boundary() {
        let (f, l) = separable_set();
        let flipped: Vec<bool> = l.iter().map(|v| !v).collect();
        let a = train_pruner(&f, &l, 1).unwrap().pruner;
        let b = train_pruner(&f, &flipped, 1).unwrap().pruner;
        for x in &f {
            let (sa, sb) = (a.score(x), b.score(x));
            assert!(sa * sb < 0.0, "{sa} {sb}");
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let (f, _) = separable_set();
        assert!(matches!(train_pruner(&f, &vec![true; f.len()], 0), Err(Error::SingleClass)));
    }

    #[test]
    fn keep_all_pruner_keeps_everything() {
        let seq: Vec<GrayImage> = (0..3).map(|s| noise(32, 32, s)).collect();
        assert_eq!(prune_frames(&seq, &LinearPruner::keep_all(), Exec::Sequential).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn trained_pruner_drops_the_bad_frame() {
        let (f, l) = synthetic_training_set(64, 48, 12, 7).unwrap();
        let t = train_pruner(&f, &l, 7).unwrap();
        assert!(t.training_accuracy >= 0.95);

        let base = noise(64, 48, 99).gaussian_blur(1.2);
        let shift = |img: &GrayImage, dx: isize| {
            GrayImage::from_fn(64, 48, |x, y| img.get_clamped(x as isize - dx, y as isize))
        };
        let mut seq = vec![base.clone()];
        for k in 1..6 {
            seq.push(shift(&base, k));
        }
        let static_seq = vec![base.clone(); 4];
        assert_eq!(prune_frames(&static_seq, &t.pruner, Exec::Sequential).unwrap(), vec![0, 1, 2, 3]);

        // frame 3 jumps 7 px and is heavily blurred
        seq[3] = shift(&seq[2], 7).gaussian_blur(3.0);
        let kept = prune_frames(&seq, &t.pruner, Exec::Parallel).unwrap();
        assert!(!kept.contains(&3), "{kept:?}");
        assert!(kept.contains(&0) && kept.contains(&1) && kept.contains(&2));
    }
}
