//! Frame-quality pruning and short-term keypoint tracking.

mod flow;
mod pruner;
mod tracking;

pub use flow::{motion_histogram, optical_flow, FlowField, BLOCK, MOTION_HIST_DIM, SEARCH};
pub use pruner::{
    blur_metric, frame_features, prune_frames, synthetic_training_set, train_pruner, FrameQualityFeature,
    LinearPruner, TrainedPruner, FEATURE_DIM,
};
pub use tracking::{track_keypoints, track_points, Track, TrackerConfig};
