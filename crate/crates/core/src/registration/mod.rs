//! From keypoint matches to camera poses.

mod pipeline;
mod pnp;

pub use pipeline::{
    prepare_frames, register_prepared, register_sequence, FrameResult, ImageIndex, PipelineConfig, PreparedFrame,
    QuerySequence, SequenceFrame,
};
pub use pnp::{
    pnp_solve, pnp_solve_points, ransac_pnp, reprojection_error, PoseEstimate, RansacConfig, RegistrationStatus,
    MIN_SAMPLE,
};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::features::Keypoint;
use crate::geometry::{Intrinsics, PixelPoint, Pose, WorldPoint};
use crate::matching::MatchPair;

/// One registered image of the prebuilt model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelImage {
    pub id: u64,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    pub keypoints: Vec<Keypoint>,
    /// `links[k]` is the world point seen by keypoint `k`, if any.
    pub links: Vec<Option<u64>>,
}

/// Sparse point cloud plus the images it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Model3D {
    points: Vec<WorldPoint>,
    images: Vec<ModelImage>,
    by_id: BTreeMap<u64, usize>,
}

impl Model3D {
    pub fn new(points: Vec<WorldPoint>, images: Vec<ModelImage>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            if by_id.insert(p.id, i).is_some() {
                return Err(Error::ShapeMismatch(format!("duplicate world point id {}", p.id)));
            }
        }
        let mut image_ids = BTreeMap::new();
        for img in &images {
            if image_ids.insert(img.id, ()).is_some() {
                return Err(Error::ShapeMismatch(format!("duplicate image id {}", img.id)));
            }
            if img.links.len() != img.keypoints.len() {
                return Err(Error::ShapeMismatch(format!(
                    "image {} has {} links for {} keypoints",
                    img.id,
                    img.links.len(),
                    img.keypoints.len()
                )));
            }
            if let Some(bad) = img.links.iter().flatten().find(|id| !by_id.contains_key(id)) {
                return Err(Error::ShapeMismatch(format!("image {} links to missing point {bad}", img.id)));
            }
        }
        Ok(Model3D { points, images, by_id })
    }

    pub fn points(&self) -> &[WorldPoint] {
        &self.points
    }

    pub fn images(&self) -> &[ModelImage] {
        &self.images
    }

    pub fn point(&self, id: u64) -> Option<&WorldPoint> {
        self.by_id.get(&id).map(|&i| &self.points[i])
    }

    pub fn image(&self, id: u64) -> Option<&ModelImage> {
        self.images.iter().find(|im| im.id == id)
    }

    /// Largest axis-aligned side of the point cloud's bounding box.
    pub fn extent(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        let mut lo = self.points[0].xyz;
        let mut hi = lo;
        for p in &self.points {
            lo = lo.inf(&p.xyz);
            hi = hi.sup(&p.xyz);
        }
        (hi - lo).max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence2D3D {
    pub pixel: PixelPoint,
    pub world: WorldPoint,
    pub source_image: u64,
    pub embed_dist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LiftStats {
    pub unlinked: usize,
    pub duplicates: usize,
}

/// Turn per-image matches into 2D–3D correspondences. Matches to unlinked
/// keypoints are dropped; several matches to one world point keep the one
/// with the smallest embedded distance (earliest on ties). Output is ordered
/// by world point id.
pub fn lift_matches(
    matches: &[(u64, Vec<MatchPair>)],
    query: &[Keypoint],
    model: &Model3D,
) -> (Vec<Correspondence2D3D>, LiftStats) {
    let mut stats = LiftStats::default();
    let mut best: BTreeMap<u64, Correspondence2D3D> = BTreeMap::new();
    for (image_id, pairs) in matches {
        let Some(img) = model.image(*image_id) else {
            stats.unlinked += pairs.len();
            continue;
        };
        for m in pairs {
            let link = img.links.get(m.model_idx).copied().flatten();
            let (Some(pid), Some(q)) = (link, query.get(m.query_idx)) else {
                stats.unlinked += 1;
                continue;
            };
            let world = *model.point(pid).expect("links validated on construction");
            let c = Correspondence2D3D { pixel: q.pos, world, source_image: *image_id, embed_dist: m.embed_dist };
            match best.get(&pid) {
                Some(prev) => {
                    stats.duplicates += 1;
                    if c.embed_dist < prev.embed_dist {
                        best.insert(pid, c);
                    }
                }
                None => {
                    best.insert(pid, c);
                }
            }
        }
    }
    (best.into_values().collect(), stats)
}
