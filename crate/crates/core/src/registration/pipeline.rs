use log::{debug, info};

use super::pnp::{ransac_pnp, PoseEstimate, RansacConfig};
use super::{lift_matches, Correspondence2D3D, LiftStats, Model3D};
use crate::error::{Error, Result};
use crate::features::{attach_context, describe_image, Descriptor, FeatureConfig, Keypoint};
use crate::geometry::{Intrinsics, Pose};
use crate::image::GrayImage;
use crate::matching::{match_frame_to_shortlist, MatchConfig, MatchMode, MatchPair, QueryFrame};
use crate::par::{self, Exec};
use crate::retrieval::{build_vocabulary, index_images, shortlist, InvertedIndex, Vocabulary, DEFAULT_SHORTLIST};
use crate::sequence::{prune_frames, track_keypoints, LinearPruner, Track, TrackerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFrame {
    pub timestamp: f64,
    pub intrinsics: Intrinsics,
    pub image: GrayImage,
    pub gt_pose: Option<Pose>,
    /// Externally extracted keypoints. Missing contexts are computed from
    /// `image`.
    pub keypoints: Option<Vec<Keypoint>>,
}

impl SequenceFrame {
    pub fn new(timestamp: f64, intrinsics: Intrinsics, image: GrayImage, gt_pose: Option<Pose>) -> Self {
        SequenceFrame { timestamp, intrinsics, image, gt_pose, keypoints: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuerySequence {
    pub frames: Vec<SequenceFrame>,
}

impl QuerySequence {
    pub fn images(&self) -> Vec<GrayImage> {
        self.frames.iter().map(|f| f.image.clone()).collect()
    }
}

/// Visual-word index over the model images.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageIndex {
    pub vocab: Vocabulary,
    pub index: InvertedIndex,
}

impl ImageIndex {
    /// Vocabulary size is capped by the number of model descriptors.
    pub fn build(model: &Model3D, vocab_size: usize, seed: u64, exec: Exec) -> Result<Self> {
        let per_image: Vec<(u64, Vec<Descriptor>)> = model
            .images()
            .iter()
            .map(|im| (im.id, im.keypoints.iter().map(|k| k.descriptor).collect()))
            .collect();
        let all: Vec<Descriptor> = per_image.iter().flat_map(|(_, d)| d.iter().copied()).collect();
        let k = vocab_size.min(all.len());
        let vocab = build_vocabulary(&all, k, seed, exec)?;
        let index = index_images(&per_image, &vocab, exec);
        Ok(ImageIndex { vocab, index })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub matching: MatchConfig,
    pub ransac: RansacConfig,
    pub shortlist: usize,
    /// `None` keeps every frame.
    pub pruner: Option<LinearPruner>,
    pub tracker: TrackerConfig,
    /// Register every n-th kept frame; the skipped ones still feed tracking.
    pub frame_stride: usize,
    pub exec: Exec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            features: FeatureConfig::default(),
            matching: MatchConfig::default(),
            ransac: RansacConfig::default(),
            shortlist: DEFAULT_SHORTLIST,
            pruner: None,
            tracker: TrackerConfig::default(),
            frame_stride: 1,
            exec: Exec::Parallel,
        }
    }
}

/// Keypoints and (in spatio-temporal mode) tracks for one kept frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedFrame {
    pub frame_idx: usize,
    pub keypoints: Vec<Keypoint>,
    pub tracks: Option<Vec<Track>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_idx: usize,
    pub timestamp: f64,
    pub shortlist: Vec<(u64, f64)>,
    pub matches: Vec<(u64, Vec<MatchPair>)>,
    pub correspondences: Vec<Correspondence2D3D>,
    pub lift: LiftStats,
    /// `None` when there were too few correspondences to try.
    pub estimate: Option<PoseEstimate>,
}

impl FrameResult {
    pub fn is_registered(&self) -> bool {
        self.estimate.as_ref().is_some_and(|e| e.is_registered())
    }

    pub fn pose(&self) -> Option<&Pose> {
        self.estimate.as_ref().filter(|e| e.is_registered()).map(|e| &e.pose)
    }

    pub fn match_count(&self) -> usize {
        self.matches.iter().map(|(_, m)| m.len()).sum()
    }
}

/// Prune, detect and track. An empty sequence yields no frames. Tracks run backwards over the previous kept
/// frames, at most `temporal_window` of them.
pub fn prepare_frames(seq: &QuerySequence, cfg: &PipelineConfig) -> Result<Vec<PreparedFrame>> {
    if cfg.frame_stride == 0 {
        return Err(Error::DegenerateInput("frame stride must be positive"));
    }
    cfg.matching.validate()?;
    if seq.frames.is_empty() {
        return Ok(Vec::new());
    }
    let images = seq.images();
    let kept = match &cfg.pruner {
        Some(p) => prune_frames(&images, p, cfg.exec)?,
        None => (0..images.len()).collect(),
    };
    info!("kept {} of {} frames", kept.len(), images.len());
    let targets: Vec<usize> = (0..kept.len()).step_by(cfg.frame_stride).collect();
    let want_tracks = cfg.matching.mode == MatchMode::SpatioTemporal;
    let window = cfg.matching.temporal_window;

    let out = par::map_slice(cfg.exec, &targets, |&t| -> Result<PreparedFrame> {
        let frame_idx = kept[t];
        let keypoints = match &seq.frames[frame_idx].keypoints {
            Some(k) if k.iter().all(|k| k.context.is_some()) => k.clone(),
            Some(k) => attach_context(&images[frame_idx], k, &cfg.features.context).0,
            None => describe_image(&images[frame_idx], &cfg.features)?,
        };
        let tracks = want_tracks.then(|| {
            let first = t.saturating_sub(window);
            let history: Vec<GrayImage> = kept[first..=t].iter().map(|&i| images[i].clone()).collect();
            track_keypoints(&history, &keypoints, &cfg.tracker)
        });
        debug!("frame {frame_idx}: {} keypoints", keypoints.len());
        Ok(PreparedFrame { frame_idx, keypoints, tracks })
    });
    out.into_iter().collect()
}

/// Retrieve, match, lift and estimate a pose for every prepared frame.
pub fn register_prepared(
    seq: &QuerySequence,
    prepared: &[PreparedFrame],
    model: &Model3D,
    index: &ImageIndex,
    cfg: &PipelineConfig,
) -> Result<Vec<FrameResult>> {
    let mut results = Vec::with_capacity(prepared.len());
    for p in prepared {
        let frame = seq
            .frames
            .get(p.frame_idx)
            .ok_or_else(|| Error::ShapeMismatch(format!("prepared frame {} outside sequence", p.frame_idx)))?;
        let descriptors: Vec<Descriptor> = p.keypoints.iter().map(|k| k.descriptor).collect();
        let short = if descriptors.is_empty() {
            Vec::new()
        } else {
            shortlist(&descriptors, &index.index, &index.vocab, cfg.shortlist, cfg.exec)
        };
        let candidates: Vec<(u64, &[Keypoint])> = short
            .iter()
            .filter_map(|(id, _)| model.image(*id).map(|im| (*id, im.keypoints.as_slice())))
            .collect();
        let query = QueryFrame { keypoints: &p.keypoints, tracks: p.tracks.as_deref() };
        let matches = match_frame_to_shortlist(&query, &candidates, &cfg.matching);
        let (correspondences, lift) = lift_matches(&matches, &p.keypoints, model);
        let estimate = match ransac_pnp(&correspondences, &frame.intrinsics, &cfg.ransac) {
            Ok(e) => Some(e),
            Err(Error::TooFewCorrespondences { .. }) => None,
            Err(e) => return Err(e),
        };
        debug!(
            "frame {}: {} candidates, {} correspondences, registered {}",
            p.frame_idx,
            candidates.len(),
            correspondences.len(),
            estimate.as_ref().is_some_and(|e| e.is_registered())
        );
        results.push(FrameResult {
            frame_idx: p.frame_idx,
            timestamp: frame.timestamp,
            shortlist: short,
            matches,
            correspondences,
            lift,
            estimate,
        });
    }
    Ok(results)
}

pub fn register_sequence(
    seq: &QuerySequence,
    model: &Model3D,
    index: &ImageIndex,
    cfg: &PipelineConfig,
) -> Result<Vec<FrameResult>> {
    let prepared = prepare_frames(seq, cfg)?;
    register_prepared(seq, &prepared, model, index, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_model() -> Model3D {
        Model3D::new(Vec::new(), Vec::new()).unwrap()
    }

    #[test]
    fn empty_sequence_gives_empty_output() {
        let cfg = PipelineConfig { exec: Exec::Sequential, ..PipelineConfig::default() };
        let seq = QuerySequence::default();
        assert!(prepare_frames(&seq, &cfg).unwrap().is_empty());
        let index = ImageIndex { vocab: Vocabulary { centers: Vec::new() }, index: InvertedIndex { idf: Vec::new(), ids: Vec::new(), vectors: Vec::new() } };
        assert!(register_sequence(&seq, &empty_model(), &index, &cfg).unwrap().is_empty());
    }

    #[test]
    fn zero_stride_is_rejected() {
        let cfg = PipelineConfig { frame_stride: 0, ..PipelineConfig::default() };
        assert!(matches!(prepare_frames(&QuerySequence::default(), &cfg), Err(Error::DegenerateInput(_))));
    }
}
