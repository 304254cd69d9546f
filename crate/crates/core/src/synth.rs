//! Procedural test scenes: textured point sprites seen by a day model rig
//! and by a hand-held query camera, with a night photometric transform.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::{describe_image, FeatureConfig};
use crate::geometry::{project_xyz, Intrinsics, PixelPoint, Pose, WorldPoint};
use crate::image::GrayImage;
use crate::par::{self, Exec};
use crate::registration::{Model3D, ModelImage, QuerySequence, SequenceFrame};

/// Pixel-level change applied to every query frame:
/// `clip(contrast * p^gamma + brightness + noise)`, plus optional light
/// sources that are absent from the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Photometric {
    pub gamma: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub noise_sigma: f64,
    /// Bright blobs that jump to a new spot every frame.
    pub distractors: usize,
}

impl Photometric {
    pub fn identity() -> Self {
        Photometric { gamma: 1.0, brightness: 0.0, contrast: 1.0, noise_sigma: 0.0, distractors: 0 }
    }

    pub fn night() -> Self {
        Photometric { gamma: 2.2, brightness: -0.4, contrast: 1.0, noise_sigma: 0.02, distractors: 12 }
    }

    pub fn is_identity(&self) -> bool {
        *self == Photometric::identity()
    }
}

/// Query camera path: a lateral walk with per-frame head jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: usize,
    /// Sideways step per frame in meters.
    pub step: f64,
    /// Standard deviation of the per-frame gaze jitter in degrees.
    pub jitter_deg: f64,
    /// Seconds between frames.
    pub frame_interval: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub points: usize,
    /// Width of the point volume in meters; height and depth scale with it.
    pub extent: f64,
    pub model_images: usize,
    pub trajectory: Trajectory,
    pub night: Photometric,
    /// Probability that a sprite is missing from a given query frame.
    pub dropout: f64,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
}

impl SynthConfig {
    pub fn day_night_default(seed: u64) -> Self {
        SynthConfig {
            seed,
            points: 200,
            extent: 10.0,
            model_images: 8,
            trajectory: Trajectory { frames: 12, step: 0.08, jitter_deg: 0.3, frame_interval: 1.0 / 15.0 },
            night: Photometric::night(),
            dropout: 0.0,
            width: 320,
            height: 240,
            focal: 280.0,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        match name {
            "day-night-default" => Some(Self::day_night_default(seed)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.extent > 0.0
            && self.points > 0
            && self.model_images > 0
            && self.trajectory.frames > 0
            && self.trajectory.frame_interval > 0.0
            && (0.0..=1.0).contains(&self.dropout)
            && self.night.gamma > 0.0
            && self.night.noise_sigma >= 0.0
            && self.width >= 32
            && self.height >= 32
            && self.focal > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::DegenerateInput("invalid synthetic scene configuration"))
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            width: self.width as u32,
            height: self.height as u32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Blob {
    dx: f64,
    dy: f64,
    sigma: f64,
    amp: f64,
}

/// A world point with its billboard pattern, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Sprite {
    pub point: WorldPoint,
    blobs: Vec<Blob>,
}

const SPRITE_RADIUS: f64 = 0.15;
const BACKGROUND: f64 = 0.68;
const LINK_RADIUS_PX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub config: SynthConfig,
    pub facade: Facade,
    pub sprites: Vec<Sprite>,
    /// Day renderings of the model rig with their exact poses.
    pub model_views: Vec<SequenceFrame>,
    pub day: QuerySequence,
    pub night: QuerySequence,
}

/// Bright core shapes shared by many sprites, as `(dx, dy, sigma, amp)` in
/// units of [`SPRITE_RADIUS`].
const PROTOTYPES: [&[(f64, f64, f64, f64)]; 4] = [
    &[(0.0, 0.0, 0.5, 0.24)],
    &[(0.0, 0.0, 0.5, 0.24), (1.1, 0.0, 0.3, 0.16)],
    &[(0.0, 0.0, 0.5, 0.24), (-0.6, 0.9, 0.3, 0.16)],
    &[(0.0, 0.0, 0.5, 0.24), (0.8, 0.8, 0.3, 0.14), (-0.8, 0.8, 0.3, 0.14)],
];

fn make_sprites(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Sprite> {
    let half_w = cfg.extent / 2.0;
    let half_h = cfg.extent * 0.2;
    let depth = cfg.extent * 0.05;
    (0..cfg.points)
        .map(|i| {
            let xyz = Vector3::new(
                rng.random_range(-half_w..half_w),
                rng.random_range(-half_h..half_h),
                cfg.extent * 0.5 + rng.random_range(0.0..depth),
            );
            let proto = PROTOTYPES[rng.random_range(0..PROTOTYPES.len())];
            let mut blobs: Vec<Blob> = proto
                .iter()
                .map(|&(dx, dy, s, a)| Blob { dx: dx * SPRITE_RADIUS, dy: dy * SPRITE_RADIUS, sigma: s * SPRITE_RADIUS, amp: a })
                .collect();
            // dark per-sprite detail; shadows clip at night and it flattens out
            let details = rng.random_range(2..=3);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for d in 0..details {
                let a = phase + d as f64 * std::f64::consts::TAU / details as f64 + rng.random_range(-0.6..0.6);
                let r = SPRITE_RADIUS * rng.random_range(0.8..1.4);
                blobs.push(Blob {
                    dx: r * a.cos(),
                    dy: r * a.sin(),
                    sigma: SPRITE_RADIUS * rng.random_range(0.25..0.4),
                    amp: -rng.random_range(0.12..0.24),
                });
            }
            Sprite { point: WorldPoint { id: i as u64, xyz }, blobs }
        })
        .collect()
}

/// World-anchored grating on the facade plane whose orientation drifts
/// slowly across the wall.
#[derive(Debug, Clone, PartialEq)]
pub struct Facade {
    depth: f64,
    /// `(kx, ky, phase)` of the low-frequency terms steering orientation.
    warp: Vec<(f64, f64, f64)>,
    cycles_per_m: f64,
    amplitude: f64,
}

impl Facade {
    fn random(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let scale = std::f64::consts::TAU / cfg.extent;
        let warp = (0..3)
            .map(|_| (rng.random_range(-2.0..2.0) * scale, rng.random_range(-2.0..2.0) * scale, rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        Facade { depth: cfg.extent * 0.5 + cfg.extent * 0.025, warp, cycles_per_m: 3.0, amplitude: 0.02 }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let w: f64 = self.warp.iter().map(|&(kx, ky, ph)| (kx * x + ky * y + ph).sin()).sum::<f64>();
        let theta = std::f64::consts::FRAC_PI_2 * (1.0 + w / 3.0);
        let along = x * theta.cos() + y * theta.sin();
        self.amplitude * (std::f64::consts::TAU * self.cycles_per_m * along).sin()
    }

    fn at_pixel(&self, pose: &Pose, k: &Intrinsics, u: f64, v: f64) -> f64 {
        let ray_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        let dir = pose.rotation.transpose() * ray_cam;
        let origin = pose.center();
        if dir.z.abs() < 1e-9 {
            return 0.0;
        }
        let t = (self.depth - origin.z) / dir.z;
        if t <= 0.0 {
            return 0.0;
        }
        let hit = origin + dir * t;
        self.value(hit.x, hit.y)
    }
}

/// Splat sprites through a pinhole camera. Sprites are billboards facing
/// the camera and scale with inverse depth, drawn over the facade texture. `hidden[i]` skips sprite `i`.
pub fn render(facade: &Facade, sprites: &[Sprite], pose: &Pose, k: &Intrinsics, hidden: &[bool]) -> GrayImage {
    let (w, h) = (k.width as usize, k.height as usize);
    let mut acc: Vec<f64> =
        (0..w * h).map(|i| BACKGROUND + facade.at_pixel(pose, k, (i % w) as f64, (i / w) as f64)).collect();
    for (i, s) in sprites.iter().enumerate() {
        if hidden.get(i).copied().unwrap_or(false) {
            continue;
        }
        let c = pose.transform(&s.point.xyz);
        if c.z <= 0.1 {
            continue;
        }
        let px_per_m = k.fx / c.z;
        let u0 = k.fx * c.x / c.z + k.cx;
        let v0 = k.fy * c.y / c.z + k.cy;
        for b in &s.blobs {
            let (u, v) = (u0 + b.dx * px_per_m, v0 + b.dy * px_per_m);
            let sig = b.sigma * px_per_m;
            let reach = (3.0 * sig).ceil();
            let (x0, x1) = ((u - reach).floor().max(0.0), (u + reach).ceil().min(w as f64 - 1.0));
            let (y0, y1) = ((v - reach).floor().max(0.0), (v + reach).ceil().min(h as f64 - 1.0));
            if x0 > x1 || y0 > y1 {
                continue;
            }
            let inv = 1.0 / (2.0 * sig * sig);
            for y in y0 as usize..=y1 as usize {
                for x in x0 as usize..=x1 as usize {
                    let d2 = (x as f64 - u).powi(2) + (y as f64 - v).powi(2);
                    acc[y * w + x] += b.amp * (-d2 * inv).exp();
                }
            }
        }
    }
    GrayImage::from_fn(w, h, |x, y| acc[y * w + x].clamp(0.0, 1.0) as f32).quantized()
}

/// Apply a [`Photometric`] change. The identity leaves the image untouched.
pub fn apply_photometric(img: &GrayImage, ph: &Photometric, rng: &mut ChaCha8Rng) -> GrayImage {
    if ph.is_identity() {
        return img.clone();
    }
    let (w, h) = img.dims();
    let mut out: Vec<f64> = img.data().iter().map(|&p| ph.contrast * (p as f64).powf(ph.gamma) + ph.brightness).collect();
    for _ in 0..ph.distractors {
        let u = rng.random_range(0.0..w as f64);
        let v = rng.random_range(0.0..h as f64);
        let sig = rng.random_range(1.5..3.5);
        let amp = rng.random_range(0.4..0.8);
        let reach = (3.0 * sig) as isize + 1;
        for y in (v as isize - reach).max(0)..(v as isize + reach).min(h as isize) {
            for x in (u as isize - reach).max(0)..(u as isize + reach).min(w as isize) {
                let d2 = (x as f64 - u).powi(2) + (y as f64 - v).powi(2);
                out[y as usize * w + x as usize] += amp * (-d2 / (2.0 * sig * sig)).exp();
            }
        }
    }
    if ph.noise_sigma > 0.0 {
        let n = Normal::new(0.0, ph.noise_sigma).expect("finite sigma");
        out.iter_mut().for_each(|p| *p += n.sample(rng));
    }
    GrayImage::from_fn(w, h, |x, y| out[y * w + x].clamp(0.0, 1.0) as f32).quantized()
}

fn model_rig(cfg: &SynthConfig) -> Vec<Pose> {
    let n = cfg.model_images;
    let span = cfg.extent * 0.8;
    let up = Vector3::new(0.0, -1.0, 0.0);
    (0..n)
        .map(|i| {
            let t = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
            let x = -span / 2.0 + span * t;
            let center = Vector3::new(x, 0.0, 0.0);
            let target = Vector3::new(x * 0.9, 0.0, cfg.extent * 0.6);
            Pose::look_at(center, target, up)
        })
        .collect()
}

fn query_path(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let tr = &cfg.trajectory;
    let jitter = Normal::new(0.0, tr.jitter_deg.to_radians()).expect("finite jitter");
    let up = Vector3::new(0.0, -1.0, 0.0);
    let start = -(tr.frames as f64 - 1.0) * tr.step / 2.0 + cfg.extent * 0.05;
    let dist = cfg.extent * 0.6;
    let (mut yaw, mut pitch) = (0.0f64, 0.0f64);
    (0..tr.frames)
        .map(|f| {
            yaw += jitter.sample(rng);
            pitch += jitter.sample(rng);
            let center = Vector3::new(start + f as f64 * tr.step, 0.1 * cfg.extent * 0.05, cfg.extent * 0.08);
            let target = center + Vector3::new(dist * yaw.sin(), dist * pitch.sin(), dist);
            Pose::look_at(center, target, up)
        })
        .collect()
}

/// Build a scene. Deterministic in `cfg.seed`.
pub fn synth_scene(cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let k = cfg.intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sprites = make_sprites(cfg, &mut rng);
    let facade = Facade::random(cfg, &mut rng);
    let model_views = model_rig(cfg)
        .into_iter()
        .map(|pose| SequenceFrame::new(0.0, k, render(&facade, &sprites, &pose, &k, &[]), Some(pose)))
        .collect();
    let path = query_path(cfg, &mut rng);
    let mut day = Vec::with_capacity(path.len());
    let mut night = Vec::with_capacity(path.len());
    for (f, pose) in path.iter().enumerate() {
        let hidden: Vec<bool> = (0..sprites.len()).map(|_| cfg.dropout > 0.0 && rng.random_bool(cfg.dropout)).collect();
        let image = render(&facade, &sprites, pose, &k, &hidden);
        let mut frame_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(f as u64 + 1)));
        let dark = apply_photometric(&image, &cfg.night, &mut frame_rng);
        let timestamp = f as f64 * cfg.trajectory.frame_interval;
        day.push(SequenceFrame::new(timestamp, k, image, Some(*pose)));
        night.push(SequenceFrame::new(timestamp, k, dark, Some(*pose)));
    }
    Ok(SynthScene {
        config: cfg.clone(),
        facade,
        sprites,
        model_views,
        day: QuerySequence { frames: day },
        night: QuerySequence { frames: night },
    })
}

impl SynthScene {
    pub fn world_points(&self) -> Vec<WorldPoint> {
        self.sprites.iter().map(|s| s.point).collect()
    }

    /// Detect features on the model views and link each keypoint to the
    /// nearest sprite center projecting within two pixels.
    pub fn build_model(&self, features: &FeatureConfig, exec: Exec) -> Result<Model3D> {
        let points = self.world_points();
        let images = par::map_slice(exec, &self.model_views, |view| -> Result<(Vec<_>, Vec<Option<u64>>)> {
            let pose = view.gt_pose.expect("model views carry poses");
            let kps = describe_image(&view.image, features)?;
            let proj: Vec<Option<PixelPoint>> =
                points.iter().map(|p| project_xyz(&p.xyz, &pose, &view.intrinsics).ok()).collect();
            let links = kps
                .iter()
                .map(|kp| {
                    let mut best: Option<(f64, u64)> = None;
                    for (p, pr) in points.iter().zip(&proj) {
                        if let Some(pr) = pr {
                            let d = pr.dist(&kp.pos);
                            if d <= LINK_RADIUS_PX && best.is_none_or(|(bd, _)| d < bd) {
                                best = Some((d, p.id));
                            }
                        }
                    }
                    best.map(|(_, id)| id)
                })
                .collect();
            Ok((kps, links))
        });
        let mut model_images = Vec::with_capacity(images.len());
        for (i, (view, res)) in self.model_views.iter().zip(images).enumerate() {
            let (keypoints, links) = res?;
            model_images.push(ModelImage {
                id: i as u64,
                pose: view.gt_pose.expect("model views carry poses"),
                intrinsics: view.intrinsics,
                keypoints,
                links,
            });
        }
        Model3D::new(points, model_images)
    }
}
