use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{gaussian_blur, jpeg_roundtrip, kernel_size_for_sigma, Image, Raster};
use crate::error::{Error, Result};

/// An augmentation parameterised by a single sampled scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeAug {
    pub enabled: bool,
    pub probability: f64,
    pub range: [f32; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JpegCompression {
    pub enabled: bool,
    pub probability: f64,
    pub quality: [u8; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrightnessContrast {
    pub enabled: bool,
    pub probability: f64,
    /// Additive offset range.
    pub brightness: [f32; 2],
    /// Multiplicative gain around mid-grey.
    pub contrast: [f32; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Erase {
    pub enabled: bool,
    pub probability: f64,
    pub area_fraction: [f32; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorJitter {
    pub enabled: bool,
    pub probability: f64,
    /// Per-channel gains are drawn from `1 ± strength`.
    pub strength: f32,
}

/// Photometric augmentations applied to generated composites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub jpeg: JpegCompression,
    pub noise: RangeAug,
    pub blur: RangeAug,
    pub brightness_contrast: BrightnessContrast,
    pub erase: Erase,
    pub color_jitter: ColorJitter,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            jpeg: JpegCompression {
                enabled: true,
                probability: 0.3,
                quality: [60, 100],
            },
            noise: RangeAug {
                enabled: true,
                probability: 0.3,
                range: [0.005, 0.03],
            },
            blur: RangeAug {
                enabled: true,
                probability: 0.2,
                range: [0.5, 1.5],
            },
            brightness_contrast: BrightnessContrast {
                enabled: true,
                probability: 0.3,
                brightness: [-0.1, 0.1],
                contrast: [0.8, 1.2],
            },
            erase: Erase {
                enabled: true,
                probability: 0.1,
                area_fraction: [0.02, 0.1],
            },
            color_jitter: ColorJitter {
                enabled: true,
                probability: 0.3,
                strength: 0.05,
            },
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name} probability {p} outside [0, 1]")));
    }
    Ok(())
}

fn check_range<T: PartialOrd + std::fmt::Debug>(name: &str, r: &[T; 2]) -> Result<()> {
    if !(r[0] <= r[1]) {
        return Err(Error::Config(format!("{name} range {r:?} is not ordered")));
    }
    Ok(())
}

impl AugmentConfig {
    /// Every augmentation switched off.
    pub fn disabled() -> Self {
        let mut cfg = Self::default();
        cfg.jpeg.enabled = false;
        cfg.noise.enabled = false;
        cfg.blur.enabled = false;
        cfg.brightness_contrast.enabled = false;
        cfg.erase.enabled = false;
        cfg.color_jitter.enabled = false;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        check_prob("jpeg", self.jpeg.probability)?;
        check_prob("noise", self.noise.probability)?;
        check_prob("blur", self.blur.probability)?;
        check_prob("brightness_contrast", self.brightness_contrast.probability)?;
        check_prob("erase", self.erase.probability)?;
        check_prob("color_jitter", self.color_jitter.probability)?;
        check_range("jpeg quality", &self.jpeg.quality)?;
        if self.jpeg.quality[0] == 0 || self.jpeg.quality[1] > 100 {
            return Err(Error::Config("jpeg quality must lie in 1..=100".into()));
        }
        check_range("noise sigma", &self.noise.range)?;
        check_range("blur sigma", &self.blur.range)?;
        check_range("brightness", &self.brightness_contrast.brightness)?;
        check_range("contrast", &self.brightness_contrast.contrast)?;
        check_range("erase area", &self.erase.area_fraction)?;
        if self.noise.range[0] < 0.0 || self.blur.range[0] < 0.0 || self.brightness_contrast.contrast[0] < 0.0 {
            return Err(Error::Config("noise/blur sigmas and contrast must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.erase.area_fraction[0]) || !(0.0..=1.0).contains(&self.erase.area_fraction[1]) {
            return Err(Error::Config("erase area fraction must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.color_jitter.strength) {
            return Err(Error::Config("color jitter strength must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn fires(enabled: bool, p: f64, rng: &mut impl Rng) -> bool {
    enabled && p > 0.0 && rng.random::<f64>() < p
}

fn uniform(r: [f32; 2], rng: &mut impl Rng) -> f32 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

/// Applies each enabled augmentation with its probability, in a fixed order:
/// JPEG, blur, noise, brightness/contrast, colour jitter, erasing.
pub fn augment(img: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Image {
    debug_assert!(cfg.validate().is_ok());
    let mut out = img.clone();

    if fires(cfg.jpeg.enabled, cfg.jpeg.probability, rng) {
        let q = rng.random_range(cfg.jpeg.quality[0]..=cfg.jpeg.quality[1]);
        out = jpeg_roundtrip(&out, q);
    }
    if fires(cfg.blur.enabled, cfg.blur.probability, rng) {
        let sigma = uniform(cfg.blur.range, rng);
        if sigma > 0.0 {
            out = gaussian_blur(&out, sigma, kernel_size_for_sigma(sigma)).expect("positive sigma");
        }
    }
    if fires(cfg.noise.enabled, cfg.noise.probability, rng) {
        let sigma = uniform(cfg.noise.range, rng);
        if sigma > 0.0 {
            let normal = Normal::new(0.0f32, sigma).expect("finite sigma");
            for v in out.data_mut() {
                *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }
    if fires(cfg.brightness_contrast.enabled, cfg.brightness_contrast.probability, rng) {
        let b = uniform(cfg.brightness_contrast.brightness, rng);
        let c = uniform(cfg.brightness_contrast.contrast, rng);
        for v in out.data_mut() {
            *v = ((*v - 0.5) * c + 0.5 + b).clamp(0.0, 1.0);
        }
    }
    if fires(cfg.color_jitter.enabled, cfg.color_jitter.probability, rng) {
        let s = cfg.color_jitter.strength;
        let gains: [f32; 3] = std::array::from_fn(|_| 1.0 + uniform([-s, s], rng));
        for px in out.data_mut().chunks_exact_mut(3) {
            for (v, g) in px.iter_mut().zip(gains) {
                *v = (*v * g).clamp(0.0, 1.0);
            }
        }
    }
    if fires(cfg.erase.enabled, cfg.erase.probability, rng) {
        let (h, w) = out.dims();
        let area = uniform(cfg.erase.area_fraction, rng) * (h * w) as f32;
        let aspect: f32 = rng.random_range(0.5..=2.0);
        let eh = ((area * aspect).sqrt().round() as usize).clamp(1, h);
        let ew = ((area / aspect).sqrt().round() as usize).clamp(1, w);
        let top = rng.random_range(0..=h - eh);
        let left = rng.random_range(0..=w - ew);
        let fill: [f32; 3] = std::array::from_fn(|_| rng.random::<f32>());
        for r in top..top + eh {
            for c in left..left + ew {
                out.set_pixel(r, c, fill);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Image {
        Image::from_fn(32, 32, |r, c| [r as f32 / 31.0, c as f32 / 31.0, 0.5]).unwrap()
    }

    fn zero_probabilities() -> AugmentConfig {
        let mut cfg = AugmentConfig::default();
        cfg.jpeg.probability = 0.0;
        cfg.noise.probability = 0.0;
        cfg.blur.probability = 0.0;
        cfg.brightness_contrast.probability = 0.0;
        cfg.erase.probability = 0.0;
        cfg.color_jitter.probability = 0.0;
        cfg
    }

    fn noise_only(sigma: f32) -> AugmentConfig {
        let mut cfg = AugmentConfig::disabled();
        cfg.noise = RangeAug {
            enabled: true,
            probability: 1.0,
            range: [sigma, sigma],
        };
        cfg
    }

    #[test]
    fn zero_probability_is_identity() {
        let img = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(augment(&img, &zero_probabilities(), &mut rng), img);
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let img = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(augment(&img, &noise_only(0.0), &mut rng), img);
    }

    #[test]
    fn seeded_noise_replays_bit_identically() {
        let img = sample();
        let a = augment(&img, &noise_only(0.05), &mut ChaCha8Rng::seed_from_u64(11));
        let b = augment(&img, &noise_only(0.05), &mut ChaCha8Rng::seed_from_u64(11));
        assert_ne!(a, img);
        let bits = |i: &Image| i.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn full_config_stays_in_range() {
        let mut cfg = AugmentConfig::default();
        cfg.jpeg.probability = 1.0;
        cfg.noise.probability = 1.0;
        cfg.blur.probability = 1.0;
        cfg.brightness_contrast.probability = 1.0;
        cfg.erase.probability = 1.0;
        cfg.color_jitter.probability = 1.0;
        let out = augment(&sample(), &cfg, &mut ChaCha8Rng::seed_from_u64(5));
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn validation_rejects_bad_ranges() {
        let mut cfg = AugmentConfig::default();
        cfg.noise.range = [0.2, 0.1];
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.erase.probability = 1.5;
        assert!(cfg.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
    }
}
