use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{dssim, gaussian_blur, gaussian_blur_sized, kernel_size_for_sigma, GrayMap, Image, Raster};

/// Mask recovery for real/fake frame pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DssimMaskConfig {
    /// SSIM window in pixels.
    pub window: usize,
    pub blur_sigma: f32,
    pub threshold: f32,
    /// Feather radius in pixels; 0 keeps the mask binary.
    pub feather: usize,
}

impl Default for DssimMaskConfig {
    fn default() -> Self {
        Self {
            window: 11,
            blur_sigma: 3.0,
            threshold: 0.1,
            feather: 5,
        }
    }
}

impl DssimMaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || !(self.blur_sigma > 0.0) || !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("invalid dssim mask settings {self:?}")));
        }
        Ok(())
    }

    /// Furthest a changed pixel can push mask support outward.
    pub fn support_radius(&self) -> usize {
        self.window / 2 + kernel_size_for_sigma(self.blur_sigma) / 2 + self.feather
    }
}

/// Thresholded blurred DSSIM map, before feathering.
pub fn dssim_mask_binary(real: &Image, fake: &Image, cfg: &DssimMaskConfig) -> Result<GrayMap> {
    cfg.validate()?;
    let d = dssim(real, fake, cfg.window)?;
    let blurred = gaussian_blur(&d, cfg.blur_sigma, kernel_size_for_sigma(cfg.blur_sigma))?;
    let (h, w) = blurred.dims();
    GrayMap::new(h, w, blurred.data().iter().map(|&v| if v > cfg.threshold { 1.0 } else { 0.0 }).collect())
}

/// Binary DSSIM mask, softened by a blur of `2 * feather + 1` pixels.
pub fn dssim_mask(real: &Image, fake: &Image, cfg: &DssimMaskConfig) -> Result<GrayMap> {
    let bin = dssim_mask_binary(real, fake, cfg)?;
    if cfg.feather == 0 {
        return Ok(bin);
    }
    gaussian_blur_sized(&bin, 2 * cfg.feather + 1)
}
