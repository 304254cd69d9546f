//! Keypoint matching in the joint embedding.
//!
//! Query and model keypoints are embedded together, paired by a minimum-cost
//! assignment on squared embedded distances, and filtered by a ratio test
//! against the second-closest model point. A plain descriptor
//! nearest-neighbor matcher is provided as the baseline.

use log::warn;
use nalgebra::DMatrix;

use crate::embedding::{
    assemble_affinity, resolved_kernel, solve_embedding, spatial_similarity, temporal_similarity, AffinityMode,
    EmbeddedSet, KernelConfig,
};
use crate::error::{Error, Result};
use crate::features::Keypoint;
use crate::geometry::PixelPoint;
use crate::par;
use crate::sequence::Track;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    /// Lowe ratio test on raw descriptors; no embedding.
    DescriptorNn,
    /// Descriptor and context kernels only.
    SingleFrame,
    /// Adds the within-frame spatial kernel.
    Spatial,
    /// Adds the temporal stability kernel and drops untracked keypoints.
    SpatioTemporal,
}

impl MatchMode {
    pub fn name(self) -> &'static str {
        match self {
            MatchMode::DescriptorNn => "nn",
            MatchMode::SingleFrame => "single",
            MatchMode::Spatial => "sp",
            MatchMode::SpatioTemporal => "sptemp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nn" => Some(MatchMode::DescriptorNn),
            "single" => Some(MatchMode::SingleFrame),
            "sp" => Some(MatchMode::Spatial),
            "sptemp" => Some(MatchMode::SpatioTemporal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchConfig {
    pub mode: MatchMode,
    pub ratio_threshold: f64,
    pub kernel: KernelConfig,
    /// Past frames used for tracking and the temporal kernel.
    pub temporal_window: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            mode: MatchMode::SpatioTemporal,
            ratio_threshold: 0.8,
            kernel: KernelConfig::default(),
            temporal_window: 20,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio_threshold > 0.0 && self.ratio_threshold <= 1.0) {
            return Err(Error::DegenerateInput("ratio threshold must lie in (0, 1]"));
        }
        if self.kernel.embedding_dim == 0 {
            return Err(Error::DegenerateInput("embedding dimension must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub query_idx: usize,
    pub model_idx: usize,
    pub embed_dist: f64,
    /// `embed_dist` over the distance to the runner-up; 0 when there is none.
    pub ratio: f64,
}

/// Minimum-cost assignment; returns `min(p, q)` pairs sorted by row.
///
/// A rectangular matrix is padded to square with `10 · max cost`. Among
/// equal-cost optima the result is a fixed function of the input.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let (p, q) = cost.shape();
    if p == 0 || q == 0 {
        return Vec::new();
    }
    let n = p.max(q);
    let max = cost.iter().cloned().fold(0.0f64, f64::max);
    let pad = if max > 0.0 { 10.0 * max } else { 1.0 };
    let c = |i: usize, j: usize| if i < p && j < q { cost[(i, j)] } else { pad };

    // shortest augmenting paths with row/column potentials, 1-based
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter_map(|j| {
            let i = col_row[j];
            (i >= 1 && i - 1 < p && j - 1 < q).then(|| (i - 1, j - 1))
        })
        .collect();
    pairs.sort_unstable();
    pairs
}

fn row_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    (0..a.ncols()).map(|k| (a[(i, k)] - b[(j, k)]).powi(2)).sum::<f64>().sqrt()
}

fn filter_with_mask(
    assignment: &[(usize, usize)],
    zq: &DMatrix<f64>,
    zm: &DMatrix<f64>,
    model_ok: &[bool],
    threshold: f64,
) -> Vec<MatchPair> {
    let candidates = model_ok.iter().filter(|&&ok| ok).count();
    assignment
        .iter()
        .filter_map(|&(i, j)| {
            let d = row_dist(zq, i, zm, j);
            if candidates < 2 {
                return Some(MatchPair { query_idx: i, model_idx: j, embed_dist: d, ratio: 0.0 });
            }
            let second = (0..zm.nrows())
                .filter(|&k| k != j && model_ok[k])
                .map(|k| row_dist(zq, i, zm, k))
                .fold(f64::INFINITY, f64::min);
            (d < threshold * second).then(|| MatchPair { query_idx: i, model_idx: j, embed_dist: d, ratio: d / second })
        })
        .collect()
}

/// Keep assigned pairs whose embedded distance is below `threshold` times the
/// distance from the same query to the closest other model point.
pub fn ratio_filter(assignment: &[(usize, usize)], zq: &DMatrix<f64>, zm: &DMatrix<f64>, threshold: f64) -> Vec<MatchPair> {
    filter_with_mask(assignment, zq, zm, &vec![true; zm.nrows()], threshold)
}

/// Assignment plus ratio test on an embedding, skipping isolated nodes.
pub fn match_embedded(emb: &EmbeddedSet, threshold: f64) -> Vec<MatchPair> {
    let (p, q) = (emb.zq.nrows(), emb.zm.nrows());
    let rows: Vec<usize> = (0..p).filter(|&i| !emb.query_isolated(i)).collect();
    let cols: Vec<usize> = (0..q).filter(|&j| !emb.model_isolated(j)).collect();
    let cost = DMatrix::from_fn(rows.len(), cols.len(), |a, b| row_dist(&emb.zq, rows[a], &emb.zm, cols[b]).powi(2));
    let assignment: Vec<(usize, usize)> = hungarian(&cost).into_iter().map(|(a, b)| (rows[a], cols[b])).collect();
    let model_ok: Vec<bool> = (0..q).map(|j| !emb.model_isolated(j)).collect();
    filter_with_mask(&assignment, &emb.zq, &emb.zm, &model_ok, threshold)
}

fn contexts(kps: &[Keypoint]) -> Result<Vec<&[f32]>> {
    kps.iter()
        .map(|k| k.context_slice().ok_or(Error::DegenerateInput("keypoint has no context vector")))
        .collect()
}

fn descriptors(kps: &[Keypoint]) -> Vec<&[f32]> {
    kps.iter().map(|k| &k.descriptor.0[..]).collect()
}

/// Descriptor and context kernels between query and model keypoints.
fn cross_kernels(query: &[Keypoint], model: &[Keypoint], k: &KernelConfig) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = resolved_kernel(&descriptors(query), &descriptors(model), k.sigma_f, k.seed, k.exec)?;
    let r = resolved_kernel(&contexts(query)?, &contexts(model)?, k.sigma_c, k.seed.wrapping_add(1), k.exec)?;
    Ok((p, r))
}

fn check_sets(query: &[Keypoint], model: &[Keypoint]) -> Result<()> {
    if query.is_empty() {
        return Err(Error::EmptyInput("query keypoints"));
    }
    if model.is_empty() {
        return Err(Error::EmptyInput("model keypoints"));
    }
    Ok(())
}

fn embed_and_match(
    query: &[Keypoint],
    model: &[Keypoint],
    within: Option<(DMatrix<f64>, Option<DMatrix<f64>>)>,
    cfg: &MatchConfig,
) -> Result<Vec<MatchPair>> {
    cfg.validate()?;
    let (p, r) = cross_kernels(query, model, &cfg.kernel)?;
    let aff = match &within {
        None => assemble_affinity(&p, &r, None, None, AffinityMode::SingleFrame)?,
        Some((s, g)) => assemble_affinity(&p, &r, Some(s), g.as_ref(), AffinityMode::SpatioTemporal)?,
    };
    let emb = solve_embedding(&aff, cfg.kernel.embedding_dim)?;
    Ok(match_embedded(&emb, cfg.ratio_threshold))
}

/// Match using only descriptor and context affinities.
pub fn match_single_frame(query: &[Keypoint], model: &[Keypoint], cfg: &MatchConfig) -> Result<Vec<MatchPair>> {
    check_sets(query, model)?;
    embed_and_match(query, model, None, cfg)
}

fn positions(kps: &[Keypoint]) -> Vec<PixelPoint> {
    kps.iter().map(|k| k.pos).collect()
}

/// Match with the spatial kernel inside the query frame (temporal kernel
/// taken as all ones).
pub fn match_spatial(query: &[Keypoint], model: &[Keypoint], cfg: &MatchConfig) -> Result<Vec<MatchPair>> {
    check_sets(query, model)?;
    let s = spatial_similarity(&positions(query), cfg.kernel.sigma_s, cfg.kernel.seed.wrapping_add(2))?;
    embed_and_match(query, model, Some((s, None)), cfg)
}

/// Match frame-T keypoints using spatial and temporal kernels. `tracks[i]`
/// belongs to `query[i]`; keypoints with dead tracks are left out and
/// returned indices refer to `query`.
pub fn match_spatiotemporal(
    query: &[Keypoint],
    tracks: &[Track],
    model: &[Keypoint],
    cfg: &MatchConfig,
) -> Result<Vec<MatchPair>> {
    if tracks.len() != query.len() {
        return Err(Error::ShapeMismatch(format!("{} tracks for {} keypoints", tracks.len(), query.len())));
    }
    let keep: Vec<usize> = (0..query.len()).filter(|&i| tracks[i].alive).collect();
    let sub: Vec<Keypoint> = keep.iter().map(|&i| query[i].clone()).collect();
    let live: Vec<&Track> = keep.iter().map(|&i| &tracks[i]).collect();
    check_sets(&sub, model)?;
    let paths: Vec<&[PixelPoint]> = live.iter().map(|t| t.positions.as_slice()).collect();
    let g = temporal_similarity(&paths, cfg.kernel.sigma_g, cfg.kernel.seed.wrapping_add(3))?;
    let s = spatial_similarity(&positions(&sub), cfg.kernel.sigma_s, cfg.kernel.seed.wrapping_add(2))?;
    let mut out = embed_and_match(&sub, model, Some((s, Some(g))), cfg)?;
    for m in &mut out {
        m.query_idx = keep[m.query_idx];
    }
    Ok(out)
}

/// Lowe ratio test on raw descriptor distances, independently per query.
pub fn match_descriptor_nn(query: &[Keypoint], model: &[Keypoint], ratio_threshold: f64) -> Result<Vec<MatchPair>> {
    check_sets(query, model)?;
    let dist = |a: &Keypoint, b: &Keypoint| {
        a.descriptor.0.iter().zip(&b.descriptor.0).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
    };
    let mut out = Vec::new();
    for (i, qk) in query.iter().enumerate() {
        let mut best = (usize::MAX, f64::INFINITY);
        let mut second = f64::INFINITY;
        for (j, mk) in model.iter().enumerate() {
            let d = dist(qk, mk);
            if d < best.1 {
                second = best.1;
                best = (j, d);
            } else if d < second {
                second = d;
            }
        }
        if model.len() == 1 {
            out.push(MatchPair { query_idx: i, model_idx: best.0, embed_dist: best.1, ratio: 0.0 });
        } else if best.1 < ratio_threshold * second {
            out.push(MatchPair { query_idx: i, model_idx: best.0, embed_dist: best.1, ratio: best.1 / second });
        }
    }
    Ok(out)
}

/// A query frame as seen by the matcher.
#[derive(Debug, Clone, Copy)]
pub struct QueryFrame<'a> {
    pub keypoints: &'a [Keypoint],
    /// Required in spatio-temporal mode.
    pub tracks: Option<&'a [Track]>,
}

/// Dispatch on `cfg.mode`.
pub fn match_query(query: &QueryFrame, model: &[Keypoint], cfg: &MatchConfig) -> Result<Vec<MatchPair>> {
    match cfg.mode {
        MatchMode::DescriptorNn => match_descriptor_nn(query.keypoints, model, cfg.ratio_threshold),
        MatchMode::SingleFrame => match_single_frame(query.keypoints, model, cfg),
        MatchMode::Spatial => match_spatial(query.keypoints, model, cfg),
        MatchMode::SpatioTemporal => {
            let tracks = query.tracks.ok_or_else(|| Error::ShapeMismatch("spatio-temporal mode needs tracks".into()))?;
            match_spatiotemporal(query.keypoints, tracks, model, cfg)
        }
    }
}

/// Match one frame against every shortlisted image independently. Failures
/// on an image are logged and give an empty list. Output follows shortlist
/// order.
pub fn match_frame_to_shortlist(
    query: &QueryFrame,
    shortlist: &[(u64, &[Keypoint])],
    cfg: &MatchConfig,
) -> Vec<(u64, Vec<MatchPair>)> {
    par::map_slice(cfg.kernel.exec, shortlist, |&(id, kps)| match match_query(query, kps, cfg) {
        Ok(m) => (id, m),
        Err(e) => {
            warn!("matching against image {id} failed: {e}");
            (id, Vec::new())
        }
    })
}
