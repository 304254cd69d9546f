use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Block side in pixels.
pub const BLOCK: usize = 8;
/// Maximum displacement searched in each direction.
pub const SEARCH: isize = 8;
pub const MOTION_HIST_DIM: usize = 144;

const GRID: usize = 3;
const BINS: usize = 8;
/// Lower edges of the magnitude bins; values under the first edge land in bin 0.
const MAG_EDGES: [f64; BINS] = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

/// Dense displacement field from one frame to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub vx: Vec<f32>,
    pub vy: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField { width, height, vx: vec![0.0; width * height], vy: vec![0.0; width * height] }
    }

    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.vx[i], self.vy[i])
    }

    pub fn magnitude_sum(&self) -> f64 {
        self.vx.iter().zip(&self.vy).map(|(&x, &y)| (x as f64).hypot(y as f64)).sum()
    }
}

/// Block-matching flow: each 8x8 block of `prev` is matched by minimum sum
/// of absolute differences against `curr` within ±8 px. Ties prefer the
/// smaller displacement, then the lower `(dy, dx)`. Pixels outside the block
/// tiling keep zero flow.
pub fn optical_flow(prev: &GrayImage, curr: &GrayImage) -> Result<FlowField> {
    if prev.dims() != curr.dims() {
        return Err(Error::SizeMismatch(prev.dims(), curr.dims()));
    }
    let (w, h) = prev.dims();
    let mut field = FlowField::zeros(w, h);
    let (nbx, nby) = (w / BLOCK, h / BLOCK);
    for by in 0..nby {
        for bx in 0..nbx {
            let (x0, y0) = (bx * BLOCK, by * BLOCK);
            let mut best = (f64::INFINITY, 0isize, 0isize);
            for dy in -SEARCH..=SEARCH {
                let ty = y0 as isize + dy;
                if ty < 0 || ty as usize + BLOCK > h {
                    continue;
                }
                for dx in -SEARCH..=SEARCH {
                    let tx = x0 as isize + dx;
                    if tx < 0 || tx as usize + BLOCK > w {
                        continue;
                    }
                    let mut sad = 0.0f64;
                    for yy in 0..BLOCK {
                        for xx in 0..BLOCK {
                            let a = prev.get(x0 + xx, y0 + yy);
                            let b = curr.get(tx as usize + xx, ty as usize + yy);
                            sad += (a - b).abs() as f64;
                        }
                    }
                    let better = sad < best.0
                        || (sad == best.0 && dx * dx + dy * dy < best.1 * best.1 + best.2 * best.2);
                    if better {
                        best = (sad, dx, dy);
                    }
                }
            }
            for yy in 0..BLOCK {
                for xx in 0..BLOCK {
                    let i = (y0 + yy) * w + x0 + xx;
                    field.vx[i] = best.1 as f32;
                    field.vy[i] = best.2 as f32;
                }
            }
        }
    }
    Ok(field)
}

fn magnitude_bin(m: f64) -> usize {
    MAG_EDGES.iter().rposition(|&e| m >= e).unwrap_or(0)
}

/// 3x3 sections, each contributing 8 log-magnitude bins then 8 orientation
/// bins, every pixel weighted by its flow magnitude.
pub fn motion_histogram(flow: &FlowField) -> Vec<f64> {
    let mut hist = vec![0.0; MOTION_HIST_DIM];
    let (w, h) = (flow.width, flow.height);
    for y in 0..h {
        let sy = (y * GRID / h.max(1)).min(GRID - 1);
        for x in 0..w {
            let (vx, vy) = flow.at(x, y);
            let (vx, vy) = (vx as f64, vy as f64);
            let m = vx.hypot(vy);
            if m == 0.0 {
                continue;
            }
            let sx = (x * GRID / w.max(1)).min(GRID - 1);
            let base = (sy * GRID + sx) * 2 * BINS;
            hist[base + magnitude_bin(m)] += m;
            let theta = vy.atan2(vx).rem_euclid(TAU);
            let ob = ((theta * BINS as f64 / TAU) as usize).min(BINS - 1);
            hist[base + BINS + ob] += m;
        }
    }
    hist
}
