//! Float rasters in `[0, 1]` and the low-level operations shared by the
//! generator, the data pipeline and the visualisation exports.
//!
//! Pixels are stored interleaved (`row`, `col`, `channel`) as `f32`. Pixel
//! centres sit on integer coordinates; every sampling operation replicates
//! edge pixels for out-of-range lookups.

mod augment;
mod io;
mod jpeg;
mod ssim;

pub use augment::{augment, AugmentConfig, BrightnessContrast, ColorJitter, Erase, JpegCompression, RangeAug};
pub use io::{read_gray, read_image, write_gray_png, write_image};
pub use jpeg::jpeg_roundtrip;
pub use ssim::{dssim, luma};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// ImageNet channel means used for network input normalisation.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
/// ImageNet channel standard deviations.
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Shared access to interleaved float rasters.
pub trait Raster: Sized + Clone {
    const CHANNELS: usize;

    fn height(&self) -> usize;
    fn width(&self) -> usize;
    fn data(&self) -> &[f32];
    fn data_mut(&mut self) -> &mut [f32];

    /// Builds a raster from raw values, which must already lie in `[0, 1]`.
    fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Result<Self>;

    fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }
}

fn validate(height: usize, width: usize, channels: usize, data: &[f32]) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!("zero-sized raster {height}x{width}")));
    }
    if data.len() != height * width * channels {
        return Err(Error::Dimension(format!(
            "expected {} values for {height}x{width}x{channels}, got {}",
            height * width * channels,
            data.len()
        )));
    }
    if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Parameter(format!("intensity {v} outside [0, 1]")));
    }
    Ok(())
}

/// An RGB raster with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// A single-channel raster in `[0, 1]`: masks and heatmaps.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        validate(height, width, 3, &data)?;
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend(f(r, c).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self::new(height, width, data)
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        for (k, v) in rgb.into_iter().enumerate() {
            self.data[i + k] = v.clamp(0.0, 1.0);
        }
    }

    pub fn into_raw(self) -> Vec<f32> {
        self.data
    }
}

impl GrayMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        validate(height, width, 1, &data)?;
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c).clamp(0.0, 1.0));
            }
        }
        Self::new(height, width, data)
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value.clamp(0.0, 1.0);
    }

    /// Sum of all values, accumulated in double precision.
    pub fn mass(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.mass() / self.data.len() as f64
    }

    /// Bilinear lookup at a continuous position with edge replication.
    pub fn sample(&self, y: f32, x: f32) -> f32 {
        sample_bilinear(self.height, self.width, 1, &self.data, y, x, 0)
    }

    /// `1 - v` for every value.
    pub fn inverted(&self) -> GrayMap {
        GrayMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
        }
    }

    pub fn into_raw(self) -> Vec<f32> {
        self.data
    }
}

macro_rules! impl_raster {
    ($ty:ty, $ch:expr) => {
        impl Raster for $ty {
            const CHANNELS: usize = $ch;

            fn height(&self) -> usize {
                self.height
            }
            fn width(&self) -> usize {
                self.width
            }
            fn data(&self) -> &[f32] {
                &self.data
            }
            fn data_mut(&mut self) -> &mut [f32] {
                &mut self.data
            }
            fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
                <$ty>::new(height, width, data)
            }
        }
    };
}

impl_raster!(Image, 3);
impl_raster!(GrayMap, 1);

/// Bilinear sample of channel `ch` at `(y, x)`, replicating edges.
pub(crate) fn sample_bilinear(h: usize, w: usize, c: usize, data: &[f32], y: f32, x: f32, ch: usize) -> f32 {
    let y = y.clamp(0.0, (h - 1) as f32);
    let x = x.clamp(0.0, (w - 1) as f32);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f32;
    let fx = x - x0 as f32;
    let at = |r: usize, col: usize| data[(r * w + col) * c + ch];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear resize with half-pixel centres (no anti-aliasing), matching the
/// usual `align_corners = false` convention.
pub fn resize_bilinear<R: Raster>(img: &R, out_h: usize, out_w: usize) -> Result<R> {
    let (h, w) = img.dims();
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::Dimension(format!("cannot resize {h}x{w} to {out_h}x{out_w}")));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let c = R::CHANNELS;
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for r in 0..out_h {
        let y = (r as f32 + 0.5) * sy - 0.5;
        for col in 0..out_w {
            let x = (col as f32 + 0.5) * sx - 0.5;
            for ch in 0..c {
                out.push(sample_bilinear(h, w, c, img.data(), y, x, ch).clamp(0.0, 1.0));
            }
        }
    }
    R::from_raw(out_h, out_w, out)
}

/// Normalised 1-D Gaussian weights. Even sizes are bumped to the next odd size.
pub fn gaussian_kernel(sigma: f32, kernel_size: usize) -> Result<Vec<f32>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("gaussian sigma must be positive, got {sigma}")));
    }
    let size = if kernel_size % 2 == 0 { kernel_size + 1 } else { kernel_size }.max(1);
    let radius = (size / 2) as i64;
    let two_s2 = 2.0 * (sigma as f64) * (sigma as f64);
    let raw: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / two_s2).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| (v / total) as f32).collect())
}

/// Kernel size covering ±3σ, used when only a sigma is given.
pub fn kernel_size_for_sigma(sigma: f32) -> usize {
    2 * (3.0 * sigma).ceil().max(1.0) as usize + 1
}

/// Separable Gaussian blur with a normalised kernel and edge replication.
pub fn gaussian_blur<R: Raster>(img: &R, sigma: f32, kernel_size: usize) -> Result<R> {
    let kernel = gaussian_kernel(sigma, kernel_size)?;
    let (h, w) = img.dims();
    let c = R::CHANNELS;
    let out = convolve_separable(h, w, c, img.data(), &kernel);
    R::from_raw(h, w, out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Blur with a kernel of `size` pixels and sigma `size / 6`.
pub fn gaussian_blur_sized<R: Raster>(img: &R, size: usize) -> Result<R> {
    gaussian_blur(img, size as f32 / 6.0, size)
}

pub(crate) fn convolve_separable(h: usize, w: usize, c: usize, data: &[f32], kernel: &[f32]) -> Vec<f32> {
    let radius = (kernel.len() / 2) as isize;
    let mut tmp = vec![0f32; data.len()];
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut acc = 0f64;
                for (k, &wk) in kernel.iter().enumerate() {
                    let x = (col as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += wk as f64 * data[(r * w + x) * c + ch] as f64;
                }
                tmp[(r * w + col) * c + ch] = acc as f32;
            }
        }
    }
    let mut out = vec![0f32; data.len()];
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut acc = 0f64;
                for (k, &wk) in kernel.iter().enumerate() {
                    let y = (r as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += wk as f64 * tmp[(y * w + col) * c + ch] as f64;
                }
                out[(r * w + col) * c + ch] = acc as f32;
            }
        }
    }
    out
}

/// Per-channel standardisation into a `[3, H, W]` network tensor.
pub fn normalize_for_network(img: &Image, mean: [f32; 3], std: [f32; 3]) -> Result<Tensor<f32>> {
    if let Some(s) = std.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Parameter(format!("normalisation std must be positive, got {s}")));
    }
    let (h, w) = img.dims();
    let mut out = vec![0f32; 3 * h * w];
    for (i, px) in img.data.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            out[ch * h * w + i] = (px[ch] - mean[ch]) / std[ch];
        }
    }
    Tensor::new(vec![3, h, w], out)
}

/// Horizontal mirror.
pub fn flip_horizontal<R: Raster>(img: &R) -> R {
    let (h, w) = img.dims();
    let c = R::CHANNELS;
    let src = img.data();
    let mut out = img.clone();
    let dst = out.data_mut();
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                dst[(r * w + col) * c + ch] = src[(r * w + (w - 1 - col)) * c + ch];
            }
        }
    }
    out
}
