//! Difference-of-Gaussians blob detector.

use super::descriptor::{describe_at, dominant_orientation};
use super::Keypoint;
use crate::error::{Error, Result};
use crate::geometry::PixelPoint;
use crate::image::{GrayImage, Gradients};

pub const MIN_IMAGE_SIDE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Scales sampled per octave.
    pub scales_per_octave: usize,
    /// Base blur of the first octave.
    pub sigma0: f64,
    /// Blur already present in the input.
    pub input_sigma: f64,
    /// Minimum absolute DoG response of a refined extremum.
    pub contrast_threshold: f64,
    /// Maximum principal-curvature ratio.
    pub edge_ratio: f64,
    /// Keypoints closer than this to the border are discarded.
    pub border: usize,
    /// Keep at most this many of the strongest keypoints (0 = unlimited).
    pub max_keypoints: usize,
    /// Number of octaves, capped by image size.
    pub max_octaves: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            scales_per_octave: 3,
            sigma0: 1.6,
            input_sigma: 0.5,
            contrast_threshold: 0.01,
            edge_ratio: 10.0,
            border: 8,
            max_keypoints: 0,
            max_octaves: 4,
        }
    }
}

struct Octave {
    dogs: Vec<GrayImage>,
    gradients: Vec<Gradients>,
    step: f64,
}

/// Detect scale-space extrema and describe them.
///
/// Output is sorted by response (descending), ties broken by position, so it
/// is a pure function of the input pixels.
pub fn extract_keypoints(img: &GrayImage, cfg: &DetectorConfig) -> Result<Vec<Keypoint>> {
    let (w, h) = img.dims();
    if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
        return Err(Error::ImageTooSmall { width: w, height: h, min: MIN_IMAGE_SIDE });
    }
    let s = cfg.scales_per_octave.max(1);
    let k = 2f64.powf(1.0 / s as f64);
    let base_blur = (cfg.sigma0 * cfg.sigma0 - cfg.input_sigma * cfg.input_sigma).max(0.01).sqrt();
    let mut base = img.gaussian_blur(base_blur);

    let n_oct = {
        let mut n = 0;
        let mut side = w.min(h);
        while n < cfg.max_octaves && side >= MIN_IMAGE_SIDE / 2 {
            n += 1;
            side /= 2;
        }
        n.max(1)
    };

    let mut octaves = Vec::with_capacity(n_oct);
    for o in 0..n_oct {
        let mut gaussians = vec![base.clone()];
        for i in 1..s + 3 {
            let prev = cfg.sigma0 * k.powi(i as i32 - 1);
            let next = prev * k;
            let inc = (next * next - prev * prev).sqrt();
            let g = gaussians[i - 1].gaussian_blur(inc);
            gaussians.push(g);
        }
        let dogs: Vec<GrayImage> = gaussians
            .windows(2)
            .map(|pair| {
                let (a, b) = (&pair[0], &pair[1]);
                let data = a.data().iter().zip(b.data()).map(|(x, y)| y - x).collect();
                GrayImage::from_vec(a.width(), a.height(), data).expect("same dims")
            })
            .collect();
        let gradients = gaussians.iter().map(|g| g.gradients()).collect();
        base = gaussians[s].downsample2();
        octaves.push(Octave { dogs, gradients, step: 2f64.powi(o as i32) });
    }

    let mut kps = Vec::new();
    for oct in &octaves {
        detect_in_octave(oct, s, k, cfg, w, h, &mut kps);
    }

    kps.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.pos.v.total_cmp(&b.pos.v))
            .then(a.pos.u.total_cmp(&b.pos.u))
            .then(a.scale.total_cmp(&b.scale))
    });
    // near-duplicate suppression across octaves
    let mut kept: Vec<Keypoint> = Vec::with_capacity(kps.len());
    for kp in kps {
        let dup = kept.iter().any(|q| {
            q.pos.dist(&kp.pos) < 1.0 && (q.scale / kp.scale).ln().abs() < 0.5
        });
        if !dup {
            kept.push(kp);
        }
        if cfg.max_keypoints > 0 && kept.len() >= cfg.max_keypoints {
            break;
        }
    }
    Ok(kept)
}

fn detect_in_octave(
    oct: &Octave,
    s: usize,
    k: f64,
    cfg: &DetectorConfig,
    full_w: usize,
    full_h: usize,
    out: &mut Vec<Keypoint>,
) {
    let dogs = &oct.dogs;
    let (w, h) = dogs[0].dims();
    if w < 3 || h < 3 {
        return;
    }
    let prefilter = 0.5 * cfg.contrast_threshold;
    for layer in 1..=s {
        let (prev, cur, next) = (&dogs[layer - 1], &dogs[layer], &dogs[layer + 1]);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let v = cur.get(x, y);
                if (v.abs() as f64) < prefilter {
                    continue;
                }
                if !is_extremum(prev, cur, next, x, y, v) {
                    continue;
                }
                if let Some(kp) = refine(oct, layer, x, y, s, k, cfg, full_w, full_h) {
                    out.push(kp);
                }
            }
        }
    }
}

fn is_extremum(prev: &GrayImage, cur: &GrayImage, next: &GrayImage, x: usize, y: usize, v: f32) -> bool {
    let is_max = v > 0.0;
    for img in [prev, cur, next] {
        for dy in 0..3 {
            for dx in 0..3 {
                let (xx, yy) = (x + dx - 1, y + dy - 1);
                if std::ptr::eq(img, cur) && xx == x && yy == y {
                    continue;
                }
                let n = img.get(xx, yy);
                if (is_max && n >= v) || (!is_max && n <= v) {
                    return false;
                }
            }
        }
    }
    true
}

#[allow(clippy::too_many_arguments)]
fn refine(
    oct: &Octave,
    layer0: usize,
    x0: usize,
    y0: usize,
    s: usize,
    k: f64,
    cfg: &DetectorConfig,
    full_w: usize,
    full_h: usize,
) -> Option<Keypoint> {
    let dogs = &oct.dogs;
    let (w, h) = dogs[0].dims();
    let (mut x, mut y, mut layer) = (x0, y0, layer0);
    let mut offset = [0.0f64; 3];
    let mut converged = false;
    for _ in 0..5 {
        let d = |l: usize, xx: usize, yy: usize| dogs[l].get(xx, yy) as f64;
        let dx = 0.5 * (d(layer, x + 1, y) - d(layer, x - 1, y));
        let dy = 0.5 * (d(layer, x, y + 1) - d(layer, x, y - 1));
        let ds = 0.5 * (d(layer + 1, x, y) - d(layer - 1, x, y));
        let c = d(layer, x, y);
        let dxx = d(layer, x + 1, y) + d(layer, x - 1, y) - 2.0 * c;
        let dyy = d(layer, x, y + 1) + d(layer, x, y - 1) - 2.0 * c;
        let dss = d(layer + 1, x, y) + d(layer - 1, x, y) - 2.0 * c;
        let dxy = 0.25 * (d(layer, x + 1, y + 1) - d(layer, x - 1, y + 1) - d(layer, x + 1, y - 1) + d(layer, x - 1, y - 1));
        let dxs = 0.25 * (d(layer + 1, x + 1, y) - d(layer + 1, x - 1, y) - d(layer - 1, x + 1, y) + d(layer - 1, x - 1, y));
        let dys = 0.25 * (d(layer + 1, x, y + 1) - d(layer + 1, x, y - 1) - d(layer - 1, x, y + 1) + d(layer - 1, x, y - 1));
        let hess = nalgebra::Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
        let grad = nalgebra::Vector3::new(dx, dy, ds);
        let sol = hess.lu().solve(&(-grad))?;
        offset = [sol.x, sol.y, sol.z];
        if offset.iter().all(|o| o.abs() < 0.5) {
            converged = true;
            break;
        }
        let nx = x as isize + offset[0].round() as isize;
        let ny = y as isize + offset[1].round() as isize;
        let nl = layer as isize + offset[2].round() as isize;
        if nl < 1 || nl > s as isize || nx < 1 || ny < 1 || nx >= w as isize - 1 || ny >= h as isize - 1 {
            return None;
        }
        x = nx as usize;
        y = ny as usize;
        layer = nl as usize;
    }
    if !converged {
        return None;
    }

    let d = |l: usize, xx: usize, yy: usize| dogs[l].get(xx, yy) as f64;
    let c = d(layer, x, y);
    let dx = 0.5 * (d(layer, x + 1, y) - d(layer, x - 1, y));
    let dy = 0.5 * (d(layer, x, y + 1) - d(layer, x, y - 1));
    let ds = 0.5 * (d(layer + 1, x, y) - d(layer - 1, x, y));
    let response = c + 0.5 * (dx * offset[0] + dy * offset[1] + ds * offset[2]);
    if response.abs() < cfg.contrast_threshold {
        return None;
    }

    let dxx = d(layer, x + 1, y) + d(layer, x - 1, y) - 2.0 * c;
    let dyy = d(layer, x, y + 1) + d(layer, x, y - 1) - 2.0 * c;
    let dxy = 0.25 * (d(layer, x + 1, y + 1) - d(layer, x - 1, y + 1) - d(layer, x + 1, y - 1) + d(layer, x - 1, y - 1));
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let r = cfg.edge_ratio;
    if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
        return None;
    }

    let ox = x as f64 + offset[0];
    let oy = y as f64 + offset[1];
    let sigma_oct = cfg.sigma0 * k.powf(layer as f64 + offset[2]);
    let u = ox * oct.step;
    let v = oy * oct.step;
    let b = cfg.border as f64;
    if u < b || v < b || u >= full_w as f64 - b || v >= full_h as f64 - b {
        return None;
    }

    let grads = &oct.gradients[layer];
    let orientation = dominant_orientation(grads, ox, oy, sigma_oct);
    let descriptor = describe_at(grads, ox, oy, sigma_oct, orientation);
    Some(Keypoint {
        pos: PixelPoint::new(u, v),
        scale: sigma_oct * oct.step,
        orientation,
        response: response.abs(),
        descriptor,
        context: None,
    })
}
