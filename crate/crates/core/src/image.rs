//! Grayscale raster and the handful of filters the pipeline needs.

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage { width, height, data: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        GrayImage { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch { expected: width * height, got: data.len() });
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage { width, height, data }
    }

    /// Decode 8-bit samples, `v / 255`.
    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height {
            return Err(Error::DimensionMismatch { expected: width * height, got: bytes.len() });
        }
        Ok(GrayImage { width, height, data: bytes.iter().map(|&b| b as f32 / 255.0).collect() })
    }

    /// Encode to 8-bit samples with rounding and clamping.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// Snap every pixel to the nearest 8-bit level so that an 8-bit
    /// round trip is lossless.
    pub fn quantized(&self) -> GrayImage {
        GrayImage::from_u8(self.width, self.height, &self.to_u8()).expect("same size")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Border-replicating access.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    /// Bilinear sample with border replication.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(xi, yi) as f64;
        let b = self.get_clamped(xi + 1, yi) as f64;
        let c = self.get_clamped(xi, yi + 1) as f64;
        let d = self.get_clamped(xi + 1, yi + 1) as f64;
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> GrayImage {
        GrayImage { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Separable Gaussian blur, kernel radius `ceil(3 sigma)`.
    pub fn gaussian_blur(&self, sigma: f64) -> GrayImage {
        if sigma <= 0.0 {
            return self.clone();
        }
        let kernel = gaussian_kernel_1d(sigma);
        let tmp = self.convolve_rows(&kernel);
        tmp.convolve_cols(&kernel)
    }

    fn convolve_rows(&self, kernel: &[f32]) -> GrayImage {
        let r = (kernel.len() / 2) as isize;
        let mut out = GrayImage::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0f32;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * self.get_clamped(x as isize + k as isize - r, y as isize);
                }
                out.data[y * self.width + x] = acc;
            }
        }
        out
    }

    fn convolve_cols(&self, kernel: &[f32]) -> GrayImage {
        let r = (kernel.len() / 2) as isize;
        let mut out = GrayImage::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0f32;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * self.get_clamped(x as isize, y as isize + k as isize - r);
                }
                out.data[y * self.width + x] = acc;
            }
        }
        out
    }

    /// 3x3 mean filter with border replication.
    pub fn box_blur3(&self) -> GrayImage {
        let k = [1.0 / 3.0; 3];
        self.convolve_rows(&k).convolve_cols(&k)
    }

    /// Keep every second pixel in each direction.
    pub fn downsample2(&self) -> GrayImage {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        GrayImage::from_fn(w, h, |x, y| self.get((2 * x).min(self.width - 1), (2 * y).min(self.height - 1)))
    }

    /// Central-difference gradients (border-replicating).
    pub fn gradients(&self) -> Gradients {
        let mut gx = vec![0.0f32; self.data.len()];
        let mut gy = vec![0.0f32; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let (xi, yi) = (x as isize, y as isize);
                gx[y * self.width + x] = 0.5 * (self.get_clamped(xi + 1, yi) - self.get_clamped(xi - 1, yi));
                gy[y * self.width + x] = 0.5 * (self.get_clamped(xi, yi + 1) - self.get_clamped(xi, yi - 1));
            }
        }
        Gradients { width: self.width, height: self.height, gx, gy }
    }
}

/// Per-pixel horizontal and vertical derivatives.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f32>,
    pub gy: Vec<f32>,
}

impl Gradients {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.gx[i], self.gy[i])
    }
}

pub(crate) fn gaussian_kernel_1d(sigma: f64) -> Vec<f32> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k.into_iter().map(|v| v as f32).collect()
}
