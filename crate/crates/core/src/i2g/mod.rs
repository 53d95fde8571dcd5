//! Synthesis of self-inconsistent images: a face from another identity is
//! aligned onto the target, cut by a deformed and feathered hull mask, and
//! blended in.

mod blend;

pub use blend::{blend, poisson_lite, PoissonReport, POISSON_MAX_ITERS, POISSON_TOL};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    convex_hull, elastic_deform, estimate_alignment, landmark_distance, rasterize, warp, DeformConfig, Landmarks,
};
use crate::imaging::{augment, gaussian_blur_sized, AugmentConfig, GrayMap, Image, Raster};

/// A face frame with its landmarks and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceRecord {
    pub image: Image,
    pub landmarks: Landmarks,
    pub identity: String,
    pub video: String,
    pub frame_index: usize,
}

impl FaceRecord {
    /// Builds a record, clamping landmarks into the frame (with a warning).
    pub fn new(
        image: Image,
        mut landmarks: Landmarks,
        identity: impl Into<String>,
        video: impl Into<String>,
        frame_index: usize,
    ) -> Self {
        let (video, identity) = (video.into(), identity.into());
        if landmarks.clamp_to(image.height(), image.width()) {
            log::warn!("landmarks of {video}#{frame_index} fell outside the frame and were clamped");
        }
        Self {
            image,
            landmarks,
            identity,
            video,
            frame_index,
        }
    }

    /// `video#frame`.
    pub fn id(&self) -> String {
        format!("{}#{}", self.video, self.frame_index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendMethod {
    Alpha,
    PoissonLite,
}

impl BlendMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BlendMethod::Alpha => "alpha",
            BlendMethod::PoissonLite => "poisson_lite",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct I2GConfig {
    /// Landmark distance threshold in pixels, measured after aligning the
    /// candidate onto the target.
    pub epsilon: f64,
    pub blend_methods: Vec<BlendMethod>,
    /// Apply elastic deformation to the hull mask.
    pub elastic: bool,
    pub deform: DeformConfig,
    /// Gaussian kernel size used to feather the mask; 0 disables blurring.
    pub mask_blur_size: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for I2GConfig {
    fn default() -> Self {
        Self {
            epsilon: 45.0,
            blend_methods: vec![BlendMethod::Alpha, BlendMethod::PoissonLite],
            elastic: true,
            deform: DeformConfig::default(),
            mask_blur_size: 17,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl I2GConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.blend_methods.is_empty() {
            return Err(Error::Config("at least one blend method must be enabled".into()));
        }
        self.deform.validate()?;
        self.augment.validate()
    }
}

/// A forged frame and the mask it was blended with.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedPair {
    pub forged: Image,
    /// Blend mask before augmentation.
    pub mask: GrayMap,
    pub source_id: String,
    pub target_id: String,
    pub blend_method: BlendMethod,
    pub seed_used: u64,
}

/// Landmark distance after the least-squares similarity alignment of
/// `candidate` onto `target`; `None` for degenerate candidates.
pub fn aligned_distance(candidate: &Landmarks, target: &Landmarks) -> Option<f64> {
    let t = estimate_alignment(candidate, target).ok()?;
    Some(landmark_distance(&t.apply_landmarks(candidate), target))
}

/// Candidates in `pool` that may serve as a source for `target`.
pub fn qualifying_sources<'a>(target: &FaceRecord, pool: &'a [FaceRecord], cfg: &I2GConfig) -> Vec<&'a FaceRecord> {
    pool.iter()
        .filter(|c| c.identity != target.identity)
        .filter(|c| aligned_distance(&c.landmarks, &target.landmarks).is_some_and(|d| d < cfg.epsilon))
        .collect()
}

/// Uniformly random qualifying source: different identity and aligned
/// landmark distance below epsilon.
pub fn select_source<'a>(
    target: &FaceRecord,
    pool: &'a [FaceRecord],
    cfg: &I2GConfig,
    rng: &mut impl Rng,
) -> Result<&'a FaceRecord> {
    let candidates = qualifying_sources(target, pool, cfg);
    if candidates.is_empty() {
        return Err(Error::NoSource(target.id()));
    }
    Ok(candidates[rng.random_range(0..candidates.len())])
}

/// Hull of the landmarks, rasterized, elastically deformed and blurred.
pub fn synthesize_mask(lm: &Landmarks, h: usize, w: usize, cfg: &I2GConfig, rng: &mut impl Rng) -> Result<GrayMap> {
    let hull = convex_hull(lm)?;
    let mut mask = rasterize(&hull, h, w);
    if cfg.elastic {
        mask = elastic_deform(&mask, &cfg.deform, rng)?;
    }
    if cfg.mask_blur_size > 0 {
        mask = gaussian_blur_sized(&mask, cfg.mask_blur_size)?;
    }
    Ok(mask)
}

/// Draws a per-pair seed from `rng` and runs [`generate_with_seed`].
pub fn generate(target: &FaceRecord, pool: &[FaceRecord], cfg: &I2GConfig, rng: &mut impl Rng) -> Result<GeneratedPair> {
    let seed = rng.random::<u64>();
    generate_with_seed(target, pool, cfg, seed)
}

/// Source selection, alignment, mask synthesis, blending and augmentation,
/// all driven by a generator seeded with `seed`.
pub fn generate_with_seed(target: &FaceRecord, pool: &[FaceRecord], cfg: &I2GConfig, seed: u64) -> Result<GeneratedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = select_source(target, pool, cfg, &mut rng)?;
    let (h, w) = target.image.dims();
    let t = estimate_alignment(&source.landmarks, &target.landmarks)?;
    let aligned = warp(&source.image, &t, h, w)?;
    let mask = synthesize_mask(&target.landmarks, h, w, cfg, &mut rng)?;
    let method = cfg.blend_methods[rng.random_range(0..cfg.blend_methods.len())];
    let composite = blend(&target.image, &aligned, &mask, method)?;
    let forged = augment(&composite, &cfg.augment, &mut rng);
    Ok(GeneratedPair {
        forged,
        mask,
        source_id: source.id(),
        target_id: target.id(),
        blend_method: method,
        seed_used: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, LANDMARK_COUNT};

    fn ring(cx: f64, cy: f64, r: f64, wobble: f64) -> Landmarks {
        Landmarks::new(
            (0..LANDMARK_COUNT)
                .map(|i| {
                    let t = i as f64 / LANDMARK_COUNT as f64 * std::f64::consts::TAU;
                    let rr = r * (1.0 + wobble * (3.0 * t).sin());
                    Point::new(cx + rr * t.cos(), cy + 1.2 * rr * t.sin())
                })
                .collect(),
        )
        .unwrap()
    }

    fn flat(rgb: [f32; 3], lm: Landmarks, id: &str, frame: usize) -> FaceRecord {
        FaceRecord::new(Image::filled(64, 64, rgb).unwrap(), lm, id, format!("v{id}"), frame)
    }

    fn plain_cfg() -> I2GConfig {
        I2GConfig {
            blend_methods: vec![BlendMethod::Alpha],
            augment: AugmentConfig::disabled(),
            ..I2GConfig::default()
        }
    }

    #[test]
    fn single_candidate_is_chosen() {
        let lm = ring(32.0, 32.0, 12.0, 0.0);
        let target = flat([0.2; 3], lm.clone(), "a", 0);
        let pool = vec![flat([0.8; 3], lm, "b", 0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select_source(&target, &pool, &plain_cfg(), &mut rng).unwrap().identity, "b");
    }

    #[test]
    fn same_identity_pool_has_no_source() {
        let lm = ring(32.0, 32.0, 12.0, 0.0);
        let target = flat([0.2; 3], lm.clone(), "a", 0);
        let pool = vec![flat([0.8; 3], lm.clone(), "a", 1), flat([0.5; 3], lm, "a", 2)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(select_source(&target, &pool, &plain_cfg(), &mut rng), Err(Error::NoSource(_))));
    }

    #[test]
    fn epsilon_is_measured_after_alignment() {
        let target = flat([0.2; 3], ring(32.0, 32.0, 12.0, 0.0), "a", 0);
        // same shape, shifted and scaled: far apart raw, identical once aligned
        let moved = flat([0.8; 3], ring(20.0, 40.0, 9.0, 0.0), "b", 0);
        assert!(landmark_distance(&moved.landmarks, &target.landmarks) > 45.0);
        assert!(aligned_distance(&moved.landmarks, &target.landmarks).unwrap() < 1e-9);
        assert_eq!(qualifying_sources(&target, std::slice::from_ref(&moved), &plain_cfg()).len(), 1);
    }

    #[test]
    fn mask_without_deform_or_blur_is_binary_hull() {
        let lm = ring(32.0, 32.0, 12.0, 0.1);
        let cfg = I2GConfig {
            elastic: false,
            mask_blur_size: 0,
            ..plain_cfg()
        };
        let m = synthesize_mask(&lm, 64, 64, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(m, rasterize(&convex_hull(&lm).unwrap(), 64, 64));
    }

    #[test]
    fn blurred_mask_has_soft_band() {
        let lm = ring(32.0, 32.0, 12.0, 0.1);
        let cfg = I2GConfig {
            elastic: false,
            ..plain_cfg()
        };
        let m = synthesize_mask(&lm, 64, 64, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let band = m.data().iter().filter(|&&v| v > 0.0 && v < 1.0).count();
        assert!(band > 50, "only {band} soft pixels");
        assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn self_blend_reproduces_target() {
        let lm = ring(32.0, 32.0, 12.0, 0.1);
        let img = Image::from_fn(64, 64, |r, c| [r as f32 / 63.0, c as f32 / 63.0, 0.4]).unwrap();
        let target = FaceRecord::new(img.clone(), lm.clone(), "a", "va", 0);
        let pool = vec![FaceRecord::new(img.clone(), lm, "b", "vb", 0)];
        for method in [BlendMethod::Alpha, BlendMethod::PoissonLite] {
            let cfg = I2GConfig {
                blend_methods: vec![method],
                ..plain_cfg()
            };
            let pair = generate_with_seed(&target, &pool, &cfg, 5).unwrap();
            assert!(pair.mask.data().iter().any(|&v| v > 0.5));
            for (a, b) in pair.forged.data().iter().zip(img.data()) {
                assert!((a - b).abs() < 1e-4, "{method:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn flat_colours_split_by_mask() {
        let lm = ring(32.0, 32.0, 12.0, 0.1);
        let target = flat([0.1, 0.2, 0.3], lm.clone(), "a", 0);
        let pool = vec![flat([0.9, 0.8, 0.7], lm, "b", 0)];
        let cfg = I2GConfig {
            elastic: false,
            mask_blur_size: 0,
            ..plain_cfg()
        };
        let pair = generate_with_seed(&target, &pool, &cfg, 3).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                let want = if pair.mask.get(r, c) == 1.0 { [0.9, 0.8, 0.7] } else { [0.1, 0.2, 0.3] };
                assert_eq!(pair.forged.pixel(r, c), want);
            }
        }
    }

    #[test]
    fn seeded_generation_replays() {
        let lm = ring(32.0, 32.0, 12.0, 0.1);
        let target = FaceRecord::new(
            Image::from_fn(64, 64, |r, c| [((r * c) % 7) as f32 / 7.0, 0.3, 0.6]).unwrap(),
            lm.clone(),
            "a",
            "va",
            0,
        );
        let pool = vec![flat([0.9, 0.1, 0.4], lm.clone(), "b", 0), flat([0.3, 0.7, 0.2], lm, "c", 0)];
        let cfg = I2GConfig::default();
        let a = generate(&target, &pool, &cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = generate(&target, &pool, &cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(generate_with_seed(&target, &pool, &cfg, a.seed_used).unwrap(), a);
    }

    #[test]
    fn config_validation() {
        assert!(I2GConfig::default().validate().is_ok());
        let mut c = I2GConfig::default();
        c.epsilon = 0.0;
        assert!(c.validate().is_err());
        let mut c = I2GConfig::default();
        c.blend_methods.clear();
        assert!(c.validate().is_err());
    }
}
