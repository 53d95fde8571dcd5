//! Training samples `(X, V, y)`: ground-truth construction, per-epoch frame
//! sampling, on-the-fly I2G substitution and real/fake balancing.

mod dssim;
mod manifest;

pub use dssim::{dssim_mask, dssim_mask_binary, DssimMaskConfig};
pub use manifest::{CorpusManifest, ManifestEntry, Role};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consistency::{downsample_mask, gt_volume, ConsistencyVolume};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::i2g::{generate, FaceRecord, I2GConfig};
use crate::imaging::{
    augment, flip_horizontal, normalize_for_network, resize_bilinear, AugmentConfig, GrayMap, Image, Raster,
    IMAGENET_MEAN, IMAGENET_STD,
};
use crate::nn::{SampleSource, TrainExample, STRIDE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    DatasetFake,
    I2gFake,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: Image,
    pub volume: ConsistencyVolume,
    /// 1 = fake.
    pub label: u8,
    pub provenance: Provenance,
    pub video: String,
    /// The pixel mask the volume was derived from (fakes only).
    pub mask: Option<GrayMap>,
}

impl LabeledSample {
    pub fn to_example(&self) -> Result<TrainExample> {
        Ok(TrainExample {
            input: normalize_for_network(&self.image, IMAGENET_MEAN, IMAGENET_STD)?,
            volume: self.volume.data().to_vec(),
            label: self.label,
        })
    }
}

fn patch_grid(h: usize, w: usize) -> Result<(usize, usize)> {
    if h % STRIDE != 0 || w % STRIDE != 0 || h == 0 || w == 0 {
        return Err(Error::Dimension(format!("{h}x{w} is not a positive multiple of {STRIDE}")));
    }
    Ok((h / STRIDE, w / STRIDE))
}

/// Pairs an image with its target volume: all ones for reals, the pairwise
/// patch agreement of the downsampled mask for fakes.
pub fn build_gt(
    image: Image,
    mask: Option<GrayMap>,
    label: u8,
    provenance: Provenance,
    video: impl Into<String>,
) -> Result<LabeledSample> {
    let video = video.into();
    let (h_p, w_p) = patch_grid(image.height(), image.width())?;
    match (label, provenance) {
        (0, Provenance::Real) => Ok(LabeledSample {
            image,
            volume: ConsistencyVolume::ones(h_p, w_p),
            label,
            provenance,
            video,
            mask: None,
        }),
        (1, Provenance::DatasetFake | Provenance::I2gFake) => {
            let mask = mask.ok_or_else(|| Error::Data(format!("fake sample from {video} has no mask")))?;
            if mask.dims() != image.dims() {
                return Err(Error::Dimension(format!("mask {:?} vs image {:?}", mask.dims(), image.dims())));
            }
            let volume = gt_volume(&downsample_mask(&mask, h_p, w_p)?);
            if volume.is_all_ones() {
                log::warn!("fake sample from {video} has a constant coarse mask; its volume is all ones");
            }
            Ok(LabeledSample {
                image,
                volume,
                label,
                provenance,
                video,
                mask: Some(mask),
            })
        }
        _ => Err(Error::Data(format!("label {label} does not fit provenance {provenance:?}"))),
    }
}

/// Per-epoch frame plan: `frames_per_video` indices per video (videos in
/// first-appearance order), drawn without replacement when the video has
/// enough frames and topped up with replacement otherwise, then shuffled.
pub fn sample_epoch<'a>(
    videos: impl IntoIterator<Item = &'a str>,
    frames_per_video: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
    for (i, v) in videos.into_iter().enumerate() {
        match groups.iter_mut().find(|(g, _)| *g == v) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((v, vec![i])),
        }
    }
    if groups.is_empty() {
        return Err(Error::Data("cannot sample an epoch from an empty corpus".into()));
    }
    let mut plan = Vec::with_capacity(groups.len() * frames_per_video);
    for (_, idx) in &groups {
        let n = idx.len();
        if n >= frames_per_video {
            plan.extend(index::sample(rng, n, frames_per_video).iter().map(|k| idx[k]));
        } else {
            plan.extend_from_slice(idx);
            plan.extend((n..frames_per_video).map(|_| idx[rng.random_range(0..n)]));
        }
    }
    plan.shuffle(rng);
    Ok(plan)
}

/// With probability `p`, turns a real face into an I2G fake whose volume is
/// built from the generated blend mask. Falls back to the real sample when
/// no source qualifies.
pub fn maybe_i2g(
    face: &FaceRecord,
    p: f64,
    cfg: &I2GConfig,
    pool: &[FaceRecord],
    rng: &mut impl Rng,
) -> Result<LabeledSample> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("substitution probability {p} outside [0, 1]")));
    }
    if rng.random_bool(p) {
        match generate(face, pool, cfg, rng) {
            Ok(pair) => return build_gt(pair.forged, Some(pair.mask), 1, Provenance::I2gFake, face.video.clone()),
            Err(Error::NoSource(id)) => log::warn!("no I2G source for {id}; keeping it real"),
            Err(e) => return Err(e),
        }
    }
    build_gt(face.image.clone(), None, 0, Provenance::Real, face.video.clone())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMode {
    None,
    /// Randomly drop samples of the larger class down to the smaller one.
    #[default]
    Downsample,
}

/// Equalizes real and fake counts; relative order of kept items is
/// preserved. A missing class leaves the stream untouched.
pub fn balance_stream<T>(items: Vec<T>, is_fake: impl Fn(&T) -> bool, mode: BalanceMode, rng: &mut impl Rng) -> Vec<T> {
    if mode == BalanceMode::None {
        return items;
    }
    let fake_idx: Vec<usize> = (0..items.len()).filter(|&i| is_fake(&items[i])).collect();
    let n_fake = fake_idx.len();
    let n_real = items.len() - n_fake;
    if n_fake == 0 || n_real == 0 {
        log::warn!("cannot balance a stream with {n_real} real and {n_fake} fake samples");
        return items;
    }
    let majority_fake = n_fake > n_real;
    let majority: Vec<usize> = if majority_fake {
        fake_idx
    } else {
        (0..items.len()).filter(|&i| !is_fake(&items[i])).collect()
    };
    let keep_n = n_fake.min(n_real);
    let mut keep = vec![true; items.len()];
    majority.iter().for_each(|&i| keep[i] = false);
    for k in index::sample(rng, majority.len(), keep_n) {
        keep[majority[k]] = true;
    }
    items.into_iter().zip(keep).filter_map(|(it, k)| k.then_some(it)).collect()
}

/// Training-protocol switch: `InDataset` uses real frames and dataset fakes
/// with DSSIM masks; `CrossDataset` uses real frames only and relies on I2G
/// for every positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    InDataset,
    #[default]
    CrossDataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub frames_per_video: usize,
    /// Chance that a sampled real frame is replaced by an I2G fake.
    pub i2g_probability: f64,
    pub balance: BalanceMode,
    pub dssim: DssimMaskConfig,
    /// Chance of mirroring a training sample (image and mask together).
    pub flip_probability: f64,
    /// Photometric augmentation of every training sample, real or fake.
    pub augment: AugmentConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            frames_per_video: 32,
            i2g_probability: 0.5,
            balance: BalanceMode::Downsample,
            dssim: DssimMaskConfig::default(),
            flip_probability: 0.5,
            augment: sample_augment(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_video == 0 {
            return Err(Error::Config("frames_per_video must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.i2g_probability) {
            return Err(Error::Config(format!("i2g_probability {} outside [0, 1]", self.i2g_probability)));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config(format!("flip_probability {} outside [0, 1]", self.flip_probability)));
        }
        self.augment.validate()?;
        self.dssim.validate()
    }
}

/// JPEG, noise and blur only: colour shifts and erasing stay off.
pub fn sample_augment() -> AugmentConfig {
    let mut a = AugmentConfig::default();
    a.brightness_contrast.enabled = false;
    a.color_jitter.enabled = false;
    a.erase.enabled = false;
    a
}

/// Mirrors (keeping image, mask and volume in step) and photometrically
/// augments one training sample.
pub fn augment_sample(s: LabeledSample, cfg: &DataConfig, rng: &mut impl Rng) -> Result<LabeledSample> {
    let flip = rng.random_bool(cfg.flip_probability);
    let image = augment(&if flip { flip_horizontal(&s.image) } else { s.image }, &cfg.augment, rng);
    if !flip {
        return Ok(LabeledSample { image, ..s });
    }
    let mask = s.mask.as_ref().map(flip_horizontal);
    build_gt(image, mask, s.label, s.provenance, s.video)
}

/// Resizes a face and maps its landmarks with the same half-pixel-centre
/// convention as the image.
pub fn resize_face(face: &FaceRecord, h: usize, w: usize) -> Result<FaceRecord> {
    let (h0, w0) = face.image.dims();
    let (sy, sx) = (h as f64 / h0 as f64, w as f64 / w0 as f64);
    let lm = face.landmarks.map(|p| Point::new((p.x + 0.5) * sx - 0.5, (p.y + 0.5) * sy - 0.5));
    Ok(FaceRecord::new(
        resize_bilinear(&face.image, h, w)?,
        lm,
        face.identity.clone(),
        face.video.clone(),
        face.frame_index,
    ))
}

#[derive(Clone, Debug)]
enum Item {
    /// Index into the I2G pool.
    Face(usize),
    /// Real frame without landmarks.
    Plain(Image),
    Fake(Image, GrayMap),
}

/// Epoch generator over a prepared corpus; implements [`SampleSource`].
#[derive(Clone, Debug)]
pub struct TrainingData {
    items: Vec<(Item, String)>,
    pool: Vec<FaceRecord>,
    cfg: DataConfig,
    i2g: I2GConfig,
}

impl TrainingData {
    /// Real faces only, already at network resolution.
    pub fn from_faces(faces: Vec<FaceRecord>, cfg: DataConfig, i2g: I2GConfig) -> Result<Self> {
        cfg.validate()?;
        i2g.validate()?;
        let items = faces.iter().enumerate().map(|(i, f)| (Item::Face(i), f.video.clone())).collect();
        Ok(Self {
            items,
            pool: faces,
            cfg,
            i2g,
        })
    }

    /// Loads a manifest, resizing every frame to `size x size`. Unlabeled
    /// entries are skipped, as are dataset fakes under `CrossDataset` and
    /// fakes whose DSSIM mask comes out empty.
    pub fn from_manifest(
        manifest: &CorpusManifest,
        preset: Preset,
        cfg: DataConfig,
        i2g: I2GConfig,
        size: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        i2g.validate()?;
        let mut items = Vec::new();
        let mut pool = Vec::new();
        for e in &manifest.entries {
            match e.role {
                None => log::warn!("skipping unlabeled entry {}", e.image.display()),
                Some(Role::Real) => {
                    let image = e.load_image()?;
                    match e.load_landmarks()? {
                        Some(lm) => {
                            let face = FaceRecord::new(image, lm, e.identity.clone(), e.video.clone(), e.frame_index);
                            pool.push(resize_face(&face, size, size)?);
                            items.push((Item::Face(pool.len() - 1), e.video.clone()));
                        }
                        None => items.push((Item::Plain(resize_bilinear(&image, size, size)?), e.video.clone())),
                    }
                }
                Some(Role::Fake) if preset == Preset::CrossDataset => {}
                Some(Role::Fake) => {
                    let real_path = e.paired_real.as_ref().ok_or_else(|| {
                        Error::Data(format!("fake {} has no paired real frame", e.image.display()))
                    })?;
                    let fake = e.load_image()?;
                    let real = crate::imaging::read_image(real_path)?;
                    let mask = dssim_mask(&real, &fake, &cfg.dssim)?;
                    if mask.mass() == 0.0 {
                        log::warn!("dropping {}: empty DSSIM mask", e.image.display());
                        continue;
                    }
                    items.push((
                        Item::Fake(resize_bilinear(&fake, size, size)?, resize_bilinear(&mask, size, size)?),
                        e.video.clone(),
                    ));
                }
            }
        }
        if items.is_empty() {
            return Err(Error::Data("no usable training entries".into()));
        }
        Ok(Self { items, pool, cfg, i2g })
    }

    pub fn videos(&self) -> usize {
        let mut v: Vec<&str> = self.items.iter().map(|(_, v)| v.as_str()).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    }

    /// The labeled samples of one epoch, in training order. Identical seeds
    /// give identical epochs regardless of thread count.
    pub fn epoch_samples(&self, seed: u64) -> Result<Vec<LabeledSample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = sample_epoch(self.items.iter().map(|(_, v)| v.as_str()), self.cfg.frames_per_video, &mut rng)?;
        let seeds: Vec<u64> = plan.iter().map(|_| rng.random()).collect();
        let cfg = &self.cfg;
        let samples = plan
            .par_iter()
            .zip(&seeds)
            .map(|(&i, &s)| {
                let (item, video) = &self.items[i];
                let mut r = ChaCha8Rng::seed_from_u64(s);
                let sample = match item {
                    Item::Face(k) => {
                        maybe_i2g(&self.pool[*k], self.cfg.i2g_probability, &self.i2g, &self.pool, &mut r)
                    }
                    Item::Plain(img) => build_gt(img.clone(), None, 0, Provenance::Real, video.clone()),
                    Item::Fake(img, mask) => {
                        build_gt(img.clone(), Some(mask.clone()), 1, Provenance::DatasetFake, video.clone())
                    }
                }?;
                augment_sample(sample, cfg, &mut r)
            })
            .collect::<Result<Vec<_>>>()?;
        // I2G substitution alone is balanced in expectation; only dataset
        // fakes can skew the ratio
        if self.items.iter().any(|(it, _)| matches!(it, Item::Fake(..))) {
            Ok(balance_stream(samples, |s| s.label == 1, self.cfg.balance, &mut rng))
        } else {
            Ok(samples)
        }
    }
}

impl SampleSource for TrainingData {
    fn epoch_len(&self) -> usize {
        self.videos() * self.cfg.frames_per_video
    }

    fn epoch(&mut self, _epoch: usize, seed: u64) -> Result<Vec<TrainExample>> {
        self.epoch_samples(seed)?.iter().map(LabeledSample::to_example).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Landmarks, LANDMARK_COUNT};

    fn img(h: usize, w: usize) -> Image {
        Image::filled(h, w, [0.4, 0.5, 0.6]).unwrap()
    }

    #[test]
    fn real_gets_all_ones() {
        let s = build_gt(img(64, 32), None, 0, Provenance::Real, "v").unwrap();
        assert_eq!((s.label, s.volume.n_patches()), (0, 8));
        assert!(s.volume.is_all_ones());
    }

    #[test]
    fn fake_without_mask_or_with_real_provenance_fails() {
        assert!(matches!(build_gt(img(32, 32), None, 1, Provenance::I2gFake, "v"), Err(Error::Data(_))));
        let m = GrayMap::filled(32, 32, 1.0).unwrap();
        assert!(build_gt(img(32, 32), Some(m), 1, Provenance::Real, "v").is_err());
        assert!(matches!(build_gt(img(30, 32), None, 0, Provenance::Real, "v"), Err(Error::Dimension(_))));
    }

    #[test]
    fn constant_fake_mask_is_degenerate_but_labeled() {
        let m = GrayMap::filled(32, 32, 1.0).unwrap();
        let s = build_gt(img(32, 32), Some(m), 1, Provenance::DatasetFake, "v").unwrap();
        assert!(s.volume.is_all_ones());
        assert_eq!(s.label, 1);
    }

    #[test]
    fn half_plane_fake_matches_loop_oracle() {
        // split on a patch edge: coarse columns 2 and 3 are manipulated
        let m = GrayMap::from_fn(64, 64, |_, c| if c >= 32 { 1.0 } else { 0.0 }).unwrap();
        let s = build_gt(img(64, 64), Some(m), 1, Provenance::I2gFake, "v").unwrap();
        for a in 0..16 {
            for b in 0..16 {
                let (ma, mb) = ((a % 4 >= 2) as u8 as f32, (b % 4 >= 2) as u8 as f32);
                assert_eq!(s.volume.at(a, b), 1.0 - (ma - mb).abs());
            }
        }
    }

    fn video_ids(counts: &[usize]) -> Vec<String> {
        counts.iter().enumerate().flat_map(|(v, &n)| (0..n).map(move |_| format!("v{v}"))).collect()
    }

    #[test]
    fn plan_length_is_frames_times_videos() {
        let ids = video_ids(&[40, 5, 32]);
        let plan = sample_epoch(ids.iter().map(String::as_str), 32, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(plan.len(), 96);
        // the 32-frame video (indices 45..77) appears exactly once each
        let mut exact: Vec<usize> = plan.iter().copied().filter(|&i| i >= 45).collect();
        exact.sort_unstable();
        assert_eq!(exact, (45..77).collect::<Vec<_>>());
        // the long video is drawn without replacement
        let mut long: Vec<usize> = plan.iter().copied().filter(|&i| i < 40).collect();
        long.sort_unstable();
        long.dedup();
        assert_eq!(long.len(), 32);
        // the short one shows every frame at least once
        assert!((40..45).all(|i| plan.contains(&i)));
    }

    #[test]
    fn plan_replays_and_rejects_empty() {
        let ids = video_ids(&[10, 10]);
        let run = |s| sample_epoch(ids.iter().map(String::as_str), 4, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
        assert!(sample_epoch(std::iter::empty(), 4, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn balance_restores_ratio() {
        let items: Vec<u8> = (0..400).map(|i| (i % 4 != 0) as u8).collect();
        let out = balance_stream(items, |&l| l == 1, BalanceMode::Downsample, &mut ChaCha8Rng::seed_from_u64(5));
        let fakes = out.iter().filter(|&&l| l == 1).count();
        assert_eq!((fakes, out.len() - fakes), (100, 100));
    }

    #[test]
    fn balance_passes_single_class_through() {
        let items = vec![0u8; 10];
        let out = balance_stream(items.clone(), |&l| l == 1, BalanceMode::Downsample, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(out, items);
    }

    fn face(id: &str, shift: f64) -> FaceRecord {
        let lm = Landmarks::new(
            (0..LANDMARK_COUNT)
                .map(|i| {
                    let t = i as f64 / LANDMARK_COUNT as f64 * std::f64::consts::TAU;
                    Point::new(16.0 + shift + 8.0 * t.cos(), 16.0 + 9.0 * t.sin())
                })
                .collect(),
        )
        .unwrap();
        let tone = id.len() as f32 * 0.1;
        FaceRecord::new(Image::filled(32, 32, [tone; 3]).unwrap(), lm, id, format!("v{id}"), 0)
    }

    fn quiet_i2g() -> I2GConfig {
        I2GConfig {
            augment: AugmentConfig::disabled(),
            ..I2GConfig::default()
        }
    }

    #[test]
    fn substitution_extremes() {
        let pool = vec![face("a", 0.0), face("bb", 1.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let s = maybe_i2g(&pool[0], 0.0, &quiet_i2g(), &pool, &mut rng).unwrap();
            assert_eq!((s.label, s.provenance), (0, Provenance::Real));
            let s = maybe_i2g(&pool[0], 1.0, &quiet_i2g(), &pool, &mut rng).unwrap();
            assert_eq!((s.label, s.provenance), (1, Provenance::I2gFake));
        }
    }

    #[test]
    fn missing_source_falls_back_to_real() {
        let pool = vec![face("a", 0.0)];
        let s = maybe_i2g(&pool[0], 1.0, &quiet_i2g(), &pool, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(s.provenance, Provenance::Real);
    }

    #[test]
    fn i2g_volume_comes_from_the_generated_mask() {
        let pool = vec![face("a", 0.0), face("bb", 1.0)];
        let s = maybe_i2g(&pool[0], 1.0, &quiet_i2g(), &pool, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        // replay the same draws: one Bernoulli, then generate
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert!(rng.random_bool(1.0));
        let pair = generate(&pool[0], &pool, &quiet_i2g(), &mut rng).unwrap();
        assert_eq!(s.mask.as_ref(), Some(&pair.mask));
        assert_eq!(s.volume, gt_volume(&downsample_mask(&pair.mask, 2, 2).unwrap()));
    }

    #[test]
    fn epochs_replay_and_have_nominal_length() {
        let faces: Vec<FaceRecord> = ["a", "bb", "ccc"].iter().enumerate().map(|(i, id)| face(id, i as f64)).collect();
        let cfg = DataConfig {
            frames_per_video: 4,
            balance: BalanceMode::None,
            ..DataConfig::default()
        };
        let data = TrainingData::from_faces(faces, cfg, quiet_i2g()).unwrap();
        assert_eq!(data.epoch_len(), 12);
        let a = data.epoch_samples(7).unwrap();
        assert_eq!(a, data.epoch_samples(7).unwrap());
        assert_eq!(a.len(), 12);
        assert!(a.iter().all(|s| s.label == 1 || s.volume.is_all_ones()));
    }

    #[test]
    fn resize_maps_landmarks_with_pixel_centres() {
        let f = face("a", 0.0);
        let r = resize_face(&f, 64, 64).unwrap();
        let (p, q) = (f.landmarks.points()[0], r.landmarks.points()[0]);
        assert!((q.x - ((p.x + 0.5) * 2.0 - 0.5)).abs() < 1e-12);
        assert_eq!(r.image.dims(), (64, 64));
    }

    #[test]
    fn flipped_sample_keeps_mask_and_volume_in_step() {
        let m = GrayMap::from_fn(32, 32, |_, c| if c >= 16 { 1.0 } else { 0.0 }).unwrap();
        let s = build_gt(img(32, 32), Some(m.clone()), 1, Provenance::I2gFake, "v").unwrap();
        let cfg = DataConfig {
            flip_probability: 1.0,
            augment: AugmentConfig::disabled(),
            ..DataConfig::default()
        };
        let f = augment_sample(s, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(f.mask, Some(flip_horizontal(&m)));
        let expect = build_gt(img(32, 32), Some(flip_horizontal(&m)), 1, Provenance::I2gFake, "v").unwrap();
        assert_eq!(f.volume, expect.volume);
    }
}
