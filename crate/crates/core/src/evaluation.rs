//! Pose errors, match statistics, registration curves and parameter sweeps.

use crate::embedding::Sigma;
use crate::error::Result;
use crate::geometry::{Intrinsics, Pose};
use crate::registration::{
    prepare_frames, reprojection_error, register_prepared, Correspondence2D3D, FrameResult, ImageIndex,
    PipelineConfig, QuerySequence,
};
use crate::synth::SynthScene;

pub const DEFAULT_DIMS: [usize; 5] = [20, 40, 60, 80, 100];
pub const DEFAULT_ROI_FACTORS: [f64; 9] = [0.7, 0.8, 0.9, 1.0, 1.1, 1.5, 2.5, 5.5, 10.0];
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Position error in meters between camera centers and geodesic rotation
/// error in degrees.
pub fn pose_errors(est: &Pose, gt: &Pose) -> (f64, f64) {
    let pos = (est.center() - gt.center()).norm();
    let r = gt.rotation.transpose() * est.rotation;
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    (pos, cos.acos().to_degrees())
}

/// Which correspondences reproject within `threshold` pixels under the
/// ground-truth pose.
pub fn inlier_mask(corrs: &[Correspondence2D3D], gt: &Pose, k: &Intrinsics, threshold: f64) -> Vec<bool> {
    corrs.iter().map(|c| reprojection_error(gt, k, &c.world.xyz, &c.pixel) < threshold).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryMatchStats {
    pub frame_idx: usize,
    pub inliers: usize,
    pub matches: usize,
    /// `inliers / matches`, 0 without matches.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchReport {
    pub per_query: Vec<QueryMatchStats>,
    pub mean_inliers: f64,
    pub mean_matches: f64,
    pub mean_ratio: f64,
}

impl MatchReport {
    pub fn from_stats(per_query: Vec<QueryMatchStats>) -> Self {
        let n = per_query.len();
        if n == 0 {
            return MatchReport::default();
        }
        let mean = |f: &dyn Fn(&QueryMatchStats) -> f64| per_query.iter().map(f).sum::<f64>() / n as f64;
        MatchReport {
            mean_inliers: mean(&|s| s.inliers as f64),
            mean_matches: mean(&|s| s.matches as f64),
            mean_ratio: mean(&|s| s.ratio),
            per_query,
        }
    }
}

/// Score the lifted correspondences of each frame against ground truth.
/// Frames without a ground-truth pose are skipped.
pub fn count_inliers(results: &[FrameResult], seq: &QuerySequence, threshold: f64) -> MatchReport {
    let per_frame: Vec<(usize, &[Correspondence2D3D])> =
        results.iter().map(|r| (r.frame_idx, r.correspondences.as_slice())).collect();
    count_inliers_in(&per_frame, seq, threshold)
}

/// [`count_inliers`] over bare `(frame index, correspondences)` records.
pub fn count_inliers_in(per_frame: &[(usize, &[Correspondence2D3D])], seq: &QuerySequence, threshold: f64) -> MatchReport {
    let stats = per_frame
        .iter()
        .filter_map(|&(frame_idx, corrs)| {
            let frame = seq.frames.get(frame_idx)?;
            let gt = frame.gt_pose.as_ref()?;
            let mask = inlier_mask(corrs, gt, &frame.intrinsics, threshold);
            let inliers = mask.iter().filter(|&&b| b).count();
            let matches = mask.len();
            let ratio = if matches == 0 { 0.0 } else { inliers as f64 / matches as f64 };
            Some(QueryMatchStats { frame_idx, inliers, matches, ratio })
        })
        .collect();
    MatchReport::from_stats(stats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameError {
    pub frame_idx: usize,
    /// `(position m, orientation deg)` for registered frames.
    pub errors: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegistrationReport {
    pub frames: Vec<FrameError>,
    pub registered: usize,
    pub rms_position: f64,
    pub rms_orientation: f64,
    pub median_position: f64,
    pub median_orientation: f64,
}

pub fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Lower median, always one of the inputs; 0 when empty.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

impl RegistrationReport {
    pub fn from_frames(frames: Vec<FrameError>) -> Self {
        let (pos, ori): (Vec<f64>, Vec<f64>) = frames.iter().filter_map(|f| f.errors).unzip();
        RegistrationReport {
            registered: pos.len(),
            rms_position: rms(&pos),
            rms_orientation: rms(&ori),
            median_position: median(&pos),
            median_orientation: median(&ori),
            frames,
        }
    }

    pub fn registered_fraction(&self) -> f64 {
        if self.frames.is_empty() {
            0.0
        } else {
            self.registered as f64 / self.frames.len() as f64
        }
    }
}

/// Errors of registered frames against ground truth. A registered frame
/// without ground truth counts as unregistered here.
pub fn registration_report(results: &[FrameResult], seq: &QuerySequence) -> RegistrationReport {
    let poses: Vec<(usize, Option<Pose>)> = results.iter().map(|r| (r.frame_idx, r.pose().copied())).collect();
    registration_report_from(&poses, seq)
}

/// [`registration_report`] over `(frame index, estimated pose)` records.
pub fn registration_report_from(poses: &[(usize, Option<Pose>)], seq: &QuerySequence) -> RegistrationReport {
    let frames = poses
        .iter()
        .map(|&(frame_idx, est)| {
            let gt = seq.frames.get(frame_idx).and_then(|f| f.gt_pose);
            let errors = match (est, gt) {
                (Some(est), Some(gt)) => Some(pose_errors(&est, &gt)),
                _ => None,
            };
            FrameError { frame_idx, errors }
        })
        .collect();
    RegistrationReport::from_frames(frames)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub by_position: usize,
    pub by_orientation: usize,
}

/// Registered frames whose error is within each threshold.
pub fn registration_curve(report: &RegistrationReport, thresholds: &[f64]) -> Vec<CurvePoint> {
    thresholds
        .iter()
        .map(|&t| {
            let errs = report.frames.iter().filter_map(|f| f.errors);
            let (mut p, mut o) = (0, 0);
            for (pe, oe) in errs {
                p += usize::from(pe <= t);
                o += usize::from(oe <= t);
            }
            CurvePoint { threshold: t, by_position: p, by_orientation: o }
        })
        .collect()
}

/// Vocabulary size used for the procedural scenes.
pub const SYNTH_VOCAB: usize = 256;
/// Ground-truth reprojection bound for counting inliers on 320x240 frames.
pub const SYNTH_INLIER_PX: f64 = 2.0;

/// Pipeline settings for the procedural scenes. They only have a handful of
/// model views, so the shortlist is short, and the keypoint budget is sized
/// to the sprite count.
pub fn synthetic_pipeline(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.features.detector.max_keypoints = 120;
    cfg.matching.kernel.sigma_s = Sigma::Median(0.1);
    cfg.shortlist = 3;
    cfg.ransac.seed = seed;
    cfg
}

/// Inputs shared by the sweeps: a scene, which of its sequences to use and
/// the pipeline settings to vary around.
#[derive(Debug, Clone)]
pub struct SweepSetup<'a> {
    pub scene: &'a SynthScene,
    pub night: bool,
    pub pipeline: PipelineConfig,
    pub vocab_size: usize,
    pub inlier_threshold: f64,
}

impl<'a> SweepSetup<'a> {
    pub fn synthetic(scene: &'a SynthScene, night: bool) -> Self {
        SweepSetup {
            scene,
            night,
            pipeline: synthetic_pipeline(scene.config.seed),
            vocab_size: SYNTH_VOCAB,
            inlier_threshold: SYNTH_INLIER_PX,
        }
    }

    fn sequence(&self) -> &QuerySequence {
        if self.night {
            &self.scene.night
        } else {
            &self.scene.day
        }
    }

    /// Build the model for `cfg`, run the pipeline and score it.
    pub fn run(&self, cfg: &PipelineConfig) -> Result<(MatchReport, RegistrationReport)> {
        let model = self.scene.build_model(&cfg.features, cfg.exec)?;
        let index = ImageIndex::build(&model, self.vocab_size, cfg.matching.kernel.seed, cfg.exec)?;
        let seq = self.sequence();
        let prepared = prepare_frames(seq, cfg)?;
        let results = register_prepared(seq, &prepared, &model, &index, cfg)?;
        Ok((count_inliers(&results, seq, self.inlier_threshold), registration_report(&results, seq)))
    }
}

/// Model and query features are built once; only the embedding size
/// changes.
pub fn embedding_dim_sweep(setup: &SweepSetup, dims: &[usize]) -> Result<Vec<(usize, MatchReport)>> {
    let cfg = &setup.pipeline;
    let model = setup.scene.build_model(&cfg.features, cfg.exec)?;
    let index = ImageIndex::build(&model, setup.vocab_size, cfg.matching.kernel.seed, cfg.exec)?;
    let seq = setup.sequence();
    let prepared = prepare_frames(seq, cfg)?;
    dims.iter()
        .map(|&d| {
            let mut c = cfg.clone();
            c.matching.kernel.embedding_dim = d;
            let results = register_prepared(seq, &prepared, &model, &index, &c)?;
            Ok((d, count_inliers(&results, seq, setup.inlier_threshold)))
        })
        .collect()
}

/// Context regions are rebuilt for every factor on both sides.
pub fn roi_scale_sweep(setup: &SweepSetup, factors: &[f64]) -> Result<Vec<(f64, MatchReport)>> {
    factors
        .iter()
        .map(|&f| {
            let mut c = setup.pipeline.clone();
            c.features.context.scale_factor = f;
            Ok((f, setup.run(&c)?.0))
        })
        .collect()
}
