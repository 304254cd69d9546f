use crate::features::Keypoint;
use crate::geometry::PixelPoint;
use crate::image::{GrayImage, Gradients};
use crate::par::{self, Exec};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Odd window side.
    pub window: usize,
    pub levels: usize,
    pub max_iterations: usize,
    /// Mean absolute intensity difference above which a track dies.
    pub max_residual: f64,
    pub exec: Exec,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig { window: 11, levels: 3, max_iterations: 30, max_residual: 0.25, exec: Exec::Parallel }
    }
}

/// Positions of one frame-T keypoint over frames `T−K ..= T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub keypoint_idx: usize,
    pub positions: Vec<PixelPoint>,
    pub alive: bool,
}

impl AsRef<[PixelPoint]> for Track {
    fn as_ref(&self) -> &[PixelPoint] {
        &self.positions
    }
}

struct Level {
    img: GrayImage,
    grads: Gradients,
}

fn pyramid(img: &GrayImage, levels: usize) -> Vec<Level> {
    let mut out = Vec::with_capacity(levels);
    let mut cur = img.clone();
    for l in 0..levels.max(1) {
        if l > 0 {
            cur = cur.gaussian_blur(1.0).downsample2();
        }
        let grads = cur.gradients();
        out.push(Level { img: cur.clone(), grads });
    }
    out
}

fn sample_grad(g: &Gradients, x: f64, y: f64) -> (f64, f64) {
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let at = |xi: isize, yi: isize| {
        let xc = xi.clamp(0, g.width as isize - 1) as usize;
        let yc = yi.clamp(0, g.height as isize - 1) as usize;
        let (a, b) = g.at(xc, yc);
        (a as f64, b as f64)
    };
    let (xi, yi) = (x0 as isize, y0 as isize);
    let (a, b, c, d) = (at(xi, yi), at(xi + 1, yi), at(xi, yi + 1), at(xi + 1, yi + 1));
    let lerp = |p: f64, q: f64, r: f64, s: f64| (p * (1.0 - fx) + q * fx) * (1.0 - fy) + (r * (1.0 - fx) + s * fx) * fy;
    (lerp(a.0, b.0, c.0, d.0), lerp(a.1, b.1, c.1, d.1))
}

fn inside(p: PixelPoint, w: usize, h: usize) -> bool {
    p.u >= 0.0 && p.v >= 0.0 && p.u <= (w - 1) as f64 && p.v <= (h - 1) as f64
}

/// Translation-only pyramidal alignment of the window around `p` in `from`
/// to `to`. Returns the new position and the final mean absolute residual,
/// or `None` when the window has no usable texture.
fn align(from: &[Level], to: &[Level], p: PixelPoint, cfg: &TrackerConfig) -> Option<(PixelPoint, f64)> {
    let half = (cfg.window / 2) as isize;
    let mut d = (0.0f64, 0.0f64);
    for l in (0..from.len()).rev() {
        let s = 0.5f64.powi(l as i32);
        let (px, py) = (p.u * s, p.v * s);
        let (src, dst) = (&from[l], &to[l]);
        let mut tmpl = Vec::with_capacity(cfg.window * cfg.window);
        let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
        for oy in -half..=half {
            for ox in -half..=half {
                let (x, y) = (px + ox as f64, py + oy as f64);
                let (gx, gy) = sample_grad(&src.grads, x, y);
                tmpl.push((src.img.sample(x, y), gx, gy));
                gxx += gx * gx;
                gxy += gx * gy;
                gyy += gy * gy;
            }
        }
        let det = gxx * gyy - gxy * gxy;
        let tr = gxx + gyy;
        if det <= 1e-12 * tr * tr || tr <= 1e-12 {
            return None;
        }
        for _ in 0..cfg.max_iterations {
            let (mut bx, mut by) = (0.0, 0.0);
            let mut k = 0;
            for oy in -half..=half {
                for ox in -half..=half {
                    let (t, gx, gy) = tmpl[k];
                    k += 1;
                    let e = t - dst.img.sample(px + d.0 + ox as f64, py + d.1 + oy as f64);
                    bx += gx * e;
                    by += gy * e;
                }
            }
            let step = ((gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det);
            d.0 += step.0;
            d.1 += step.1;
            if step.0.hypot(step.1) < 1e-3 {
                break;
            }
        }
        if l > 0 {
            d = (2.0 * d.0, 2.0 * d.1);
        }
    }
    let q = PixelPoint::new(p.u + d.0, p.v + d.1);
    let (src, dst) = (&from[0], &to[0]);
    let mut res = 0.0;
    for oy in -half..=half {
        for ox in -half..=half {
            let (ox, oy) = (ox as f64, oy as f64);
            res += (src.img.sample(p.u + ox, p.v + oy) - dst.img.sample(q.u + ox, q.v + oy)).abs();
        }
    }
    Some((q, res / (cfg.window * cfg.window) as f64))
}

/// Track points through `frames` in the given order, starting in
/// `frames[0]`. Each result holds one position per frame and a liveness
/// flag; a dead track repeats its last good position.
pub fn track_points(frames: &[GrayImage], start: &[PixelPoint], cfg: &TrackerConfig) -> Vec<(Vec<PixelPoint>, bool)> {
    if frames.is_empty() {
        return start.iter().map(|_| (Vec::new(), false)).collect();
    }
    let (w, h) = frames[0].dims();
    let pyrs: Vec<Vec<Level>> = par::map_slice(cfg.exec, frames, |f| pyramid(f, cfg.levels));
    par::map_slice(cfg.exec, start, |&p0| {
        let mut path = Vec::with_capacity(frames.len());
        path.push(p0);
        let mut alive = inside(p0, w, h) && frames.iter().all(|f| f.dims() == (w, h));
        let mut cur = p0;
        for t in 1..frames.len() {
            if alive {
                match align(&pyrs[t - 1], &pyrs[t], cur, cfg) {
                    Some((q, res)) if res <= cfg.max_residual && inside(q, w, h) => cur = q,
                    _ => alive = false,
                }
            }
            path.push(cur);
        }
        (path, alive)
    })
}

/// Track frame-T keypoints back through `frames` (ordered `T−K ..= T`).
/// Positions in each [`Track`] follow the same order.
pub fn track_keypoints(frames: &[GrayImage], kps: &[Keypoint], cfg: &TrackerConfig) -> Vec<Track> {
    let reversed: Vec<GrayImage> = frames.iter().rev().cloned().collect();
    let start: Vec<PixelPoint> = kps.iter().map(|k| k.pos).collect();
    track_points(&reversed, &start, cfg)
        .into_iter()
        .enumerate()
        .map(|(i, (mut path, alive))| {
            path.reverse();
            Track { keypoint_idx: i, positions: path, alive }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Descriptor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn texture(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random_range(0.0f32..1.0)).gaussian_blur(1.5)
    }

    fn kp(u: f64, v: f64) -> Keypoint {
        Keypoint::new(PixelPoint::new(u, v), 2.0, 0.0, Descriptor::uniform())
    }

    #[test]
    fn static_sequence_keeps_positions() {
        let img = texture(96, 80, 1);
        let frames = vec![img.clone(); 5];
        let kps = vec![kp(30.0, 30.0), kp(60.5, 41.25), kp(20.0, 60.0)];
        let tracks = track_keypoints(&frames, &kps, &TrackerConfig::default());
        for (t, k) in tracks.iter().zip(&kps) {
            assert!(t.alive);
            assert_eq!(t.positions.len(), 5);
            assert!(t.positions.iter().all(|p| p.dist(&k.pos) < 0.5));
        }
    }

    #[test]
    fn translating_content_is_followed() {
        let base = texture(120, 90, 2);
        // content moves 2 px right per frame
        let frames: Vec<GrayImage> = (0..5)
            .map(|t| GrayImage::from_fn(120, 90, |x, y| base.sample(x as f64 - 2.0 * t as f64, y as f64) as f32))
            .collect();
        let kps = vec![kp(50.0, 40.0), kp(70.0, 50.0)];
        let tracks = track_keypoints(&frames, &kps, &TrackerConfig::default());
        for (t, k) in tracks.iter().zip(&kps) {
            assert!(t.alive);
            for (f, p) in t.positions.iter().enumerate() {
                let expect = PixelPoint::new(k.pos.u - 2.0 * (4 - f) as f64, k.pos.v);
                assert!(p.dist(&expect) < 1.0, "frame {f}: {p:?} vs {expect:?}");
            }
        }
    }

    #[test]
    fn point_leaving_the_image_dies() {
        let base = texture(80, 64, 3);
        let frames: Vec<GrayImage> = (0..4)
            .map(|t| GrayImage::from_fn(80, 64, |x, y| base.sample(x as f64 - 5.0 * t as f64, y as f64) as f32))
            .collect();
        // the point at u = 6 in the last frame sat at u < 0 three frames ago
        let tracks = track_keypoints(&frames, &[kp(6.0, 30.0)], &TrackerConfig::default());
        assert!(!tracks[0].alive);
    }

    #[test]
    fn forward_backward_consistency() {
        let base = texture(100, 80, 4);
        let frames: Vec<GrayImage> = (0..6)
            .map(|t| GrayImage::from_fn(100, 80, |x, y| base.sample(x as f64 - 1.5 * t as f64, y as f64 + 0.5 * t as f64) as f32))
            .collect();
        let start = vec![PixelPoint::new(40.0, 40.0), PixelPoint::new(55.0, 30.0)];
        let cfg = TrackerConfig::default();
        let fwd = track_points(&frames, &start, &cfg);
        let rev: Vec<GrayImage> = frames.iter().rev().cloned().collect();
        let ends: Vec<PixelPoint> = fwd.iter().map(|(p, _)| *p.last().unwrap()).collect();
        let back = track_points(&rev, &ends, &cfg);
        for ((f, b), s) in fwd.iter().zip(&back).zip(&start) {
            assert!(f.1 && b.1);
            assert!(b.0.last().unwrap().dist(s) < 1.0);
        }
    }

    #[test]
    fn flat_window_cannot_be_tracked() {
        let frames = vec![GrayImage::filled(64, 64, 0.5); 3];
        let tracks = track_keypoints(&frames, &[kp(32.0, 32.0)], &TrackerConfig::default());
        assert!(!tracks[0].alive);
    }
}
