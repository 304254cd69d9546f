use std::f64::consts::TAU;

use super::Descriptor;
use crate::image::Gradients;

pub const DESCRIPTOR_DIM: usize = 128;
const GRID: usize = 4;
const BINS: usize = 8;

/// Rotated 4x4x8 gradient histogram around `(x, y)` in the coordinates of
/// `grads`, with cell width `3 * sigma`. Trilinear soft binning.
pub fn describe_at(grads: &Gradients, x: f64, y: f64, sigma: f64, angle: f64) -> Descriptor {
    let mut hist = [0.0f64; (GRID + 2) * (GRID + 2) * (BINS + 2)];
    let cell = 3.0 * sigma;
    let radius = (cell * std::f64::consts::SQRT_2 * (GRID as f64 + 1.0) * 0.5).round() as isize;
    let (sin_t, cos_t) = angle.sin_cos();
    let xi = x.round() as isize;
    let yi = y.round() as isize;
    let half = GRID as f64 / 2.0;
    let exp_denom = 2.0 * half * half;

    for dy in -radius..=radius {
        let py = yi + dy;
        if py <= 0 || py >= grads.height as isize - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let px = xi + dx;
            if px <= 0 || px >= grads.width as isize - 1 {
                continue;
            }
            let ox = px as f64 - x;
            let oy = py as f64 - y;
            let rx = (cos_t * ox + sin_t * oy) / cell;
            let ry = (-sin_t * ox + cos_t * oy) / cell;
            let rbin = ry + half - 0.5;
            let cbin = rx + half - 0.5;
            if rbin <= -1.0 || rbin >= GRID as f64 || cbin <= -1.0 || cbin >= GRID as f64 {
                continue;
            }
            let (gx, gy) = grads.at(px as usize, py as usize);
            let (gx, gy) = (gx as f64, gy as f64);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut ori = gy.atan2(gx) - angle;
            ori = ori.rem_euclid(TAU);
            let obin = ori * BINS as f64 / TAU;
            let w = mag * (-(rx * rx + ry * ry) / exp_denom).exp();
            accumulate(&mut hist, rbin, cbin, obin, w);
        }
    }

    let mut raw = [0.0f64; DESCRIPTOR_DIM];
    for r in 0..GRID {
        for c in 0..GRID {
            for o in 0..BINS {
                raw[(r * GRID + c) * BINS + o] = hist[idx(r + 1, c + 1, o)];
            }
        }
    }
    Descriptor::from_histogram(&raw)
}

#[inline]
fn idx(r: usize, c: usize, o: usize) -> usize {
    (r * (GRID + 2) + c) * (BINS + 2) + o
}

fn accumulate(hist: &mut [f64], rbin: f64, cbin: f64, obin: f64, w: f64) {
    let r0 = rbin.floor();
    let c0 = cbin.floor();
    let o0 = obin.floor();
    let dr = rbin - r0;
    let dc = cbin - c0;
    let dor = obin - o0;
    for (ri, wr) in [(r0, 1.0 - dr), (r0 + 1.0, dr)] {
        if ri < 0.0 || ri >= GRID as f64 {
            continue;
        }
        for (ci, wc) in [(c0, 1.0 - dc), (c0 + 1.0, dc)] {
            if ci < 0.0 || ci >= GRID as f64 {
                continue;
            }
            for (oi, wo) in [(o0, 1.0 - dor), (o0 + 1.0, dor)] {
                let o = (oi as usize) % BINS;
                hist[idx(ri as usize + 1, ci as usize + 1, o)] += w * wr * wc * wo;
            }
        }
    }
}

/// Dominant gradient orientation in a Gaussian-weighted window of radius
/// `4.5 sigma`; 36-bin histogram, smoothed, parabolic peak interpolation.
pub(crate) fn dominant_orientation(grads: &Gradients, x: f64, y: f64, sigma: f64) -> f64 {
    const N: usize = 36;
    let mut hist = [0.0f64; N];
    let s = 1.5 * sigma;
    let radius = (3.0 * s).round() as isize;
    let xi = x.round() as isize;
    let yi = y.round() as isize;
    for dy in -radius..=radius {
        let py = yi + dy;
        if py <= 0 || py >= grads.height as isize - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let px = xi + dx;
            if px <= 0 || px >= grads.width as isize - 1 {
                continue;
            }
            let (gx, gy) = grads.at(px as usize, py as usize);
            let (gx, gy) = (gx as f64, gy as f64);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let w = (-((dx * dx + dy * dy) as f64) / (2.0 * s * s)).exp();
            let ori = gy.atan2(gx).rem_euclid(TAU);
            let bin = ((ori * N as f64 / TAU).floor() as usize) % N;
            hist[bin] += w * mag;
        }
    }
    let mut smooth = [0.0f64; N];
    for i in 0..N {
        smooth[i] = 0.25 * hist[(i + N - 1) % N] + 0.5 * hist[i] + 0.25 * hist[(i + 1) % N];
    }
    let mut best = 0;
    for i in 1..N {
        if smooth[i] > smooth[best] {
            best = i;
        }
    }
    if smooth[best] <= 0.0 {
        return 0.0;
    }
    let l = smooth[(best + N - 1) % N];
    let r = smooth[(best + 1) % N];
    let c = smooth[best];
    let denom = l - 2.0 * c + r;
    let offset = if denom.abs() > 1e-18 { 0.5 * (l - r) / denom } else { 0.0 };
    ((best as f64 + 0.5 + offset) * TAU / N as f64).rem_euclid(TAU)
}
