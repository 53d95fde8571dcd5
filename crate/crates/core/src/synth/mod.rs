//! Procedural toy faces with 68-point landmarks for demos and end-to-end
//! tests. Every video has its own identity (face shape, skin, background,
//! pose) and belongs to a texture family: a faint grating laid over the
//! whole frame that plays the part of a camera or codec fingerprint.

mod experiment;

pub use experiment::{evaluate_frames, toy_augment, FrameResult, ToyExperiment, ToyRun};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{CorpusManifest, ManifestEntry, Role};
use crate::error::{Error, Result};
use crate::geometry::{DeformConfig, Landmarks, Point};
use crate::i2g::{generate, FaceRecord, I2GConfig};
use crate::imaging::{write_image, AugmentConfig, Image};

/// Number of distinct texture families.
pub const FAMILIES: usize = 10;

/// Centre grating of a texture family: period in pixels at 128 px scale,
/// angle in radians and amplitude. Periods and angles are spread over a
/// grid so that the last families fall between the first ones.
pub fn family_grating(family: usize) -> (f64, f64, f64) {
    let f = family % FAMILIES;
    let period = 3.0 + 0.4 * ((7 * f + 3) % FAMILIES) as f64;
    let angle = std::f64::consts::PI * ((3 * f) % FAMILIES) as f64 / FAMILIES as f64;
    let amp = 0.045 + 0.01 * (f % 3) as f64;
    (period, angle, amp)
}

/// Per-video appearance and pose.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyIdentity {
    pub video: String,
    pub family: usize,
    pub skin: [f64; 3],
    pub background: [f64; 3],
    pub feature: [f64; 3],
    /// Face centre and radii as fractions of the frame size.
    pub centre: (f64, f64),
    pub radii: (f64, f64),
    pub angle: f64,
    /// Grating period, angle and amplitude: the family centre with a
    /// per-video wobble.
    pub grating: (f64, f64, f64),
    pub phase: f64,
}

impl ToyIdentity {
    pub fn random(video: impl Into<String>, family: usize, rng: &mut impl Rng) -> Self {
        let mut colour = |lo: f64, hi: f64| [0; 3].map(|_| rng.random_range(lo..hi));
        let skin = colour(0.35, 0.85);
        let background = colour(0.05, 0.95);
        let feature = colour(0.0, 0.3);
        Self {
            video: video.into(),
            family,
            skin,
            background,
            feature,
            centre: (rng.random_range(0.45..0.55), rng.random_range(0.47..0.55)),
            radii: (rng.random_range(0.2..0.25), rng.random_range(0.22..0.27)),
            angle: rng.random_range(-0.15..0.15),
            grating: {
                let (p, a, m) = family_grating(family);
                (p * rng.random_range(0.9..1.1), a + rng.random_range(-0.15..0.15), m * rng.random_range(0.9..1.1))
            },
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }
}

/// 68 points in face coordinates (x right, y down, unit radii): jaw 0-16,
/// brows 17-26, nose 27-35, eyes 36-47, mouth 48-67.
pub fn landmark_template() -> Vec<(f64, f64)> {
    use std::f64::consts::PI;
    let mut pts = Vec::with_capacity(68);
    for k in 0..17 {
        let t = PI * k as f64 / 16.0;
        pts.push((-t.cos(), 0.05 + 0.95 * t.sin()));
    }
    for side in [-1.0, 1.0] {
        for k in 0..5 {
            let u = k as f64 / 4.0;
            let x = side * (0.15 + 0.55 * if side < 0.0 { 1.0 - u } else { u });
            pts.push((x, -0.42 - 0.06 * (1.0 - (2.0 * u - 1.0).powi(2))));
        }
    }
    for k in 0..4 {
        pts.push((0.0, -0.3 + 0.13 * k as f64));
    }
    for k in 0..5 {
        pts.push((-0.18 + 0.09 * k as f64, 0.22 + 0.03 * (1.0 - ((k as f64 - 2.0) / 2.0).powi(2))));
    }
    for cx in [-0.38, 0.38] {
        for k in 0..6 {
            let t = 2.0 * PI * k as f64 / 6.0;
            pts.push((cx - 0.14 * t.cos(), -0.2 - 0.06 * t.sin()));
        }
    }
    for k in 0..12 {
        let t = 2.0 * PI * k as f64 / 12.0;
        pts.push((-0.32 * t.cos(), 0.52 - 0.11 * t.sin()));
    }
    for k in 0..8 {
        let t = 2.0 * PI * k as f64 / 8.0;
        pts.push((-0.22 * t.cos(), 0.52 - 0.05 * t.sin()));
    }
    pts
}

fn ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)
}

/// Smooth inside-indicator of `q <= 1` with a one-pixel ramp.
fn soft(q: f64, r_px: f64) -> f64 {
    ((1.0 - q.sqrt()) * r_px + 0.5).clamp(0.0, 1.0)
}

/// Renders one frame. `jitter` nudges the pose per frame.
pub fn render_face(id: &ToyIdentity, size: usize, frame: usize, jitter: (f64, f64), noise_seed: u64) -> Result<FaceRecord> {
    let s = size as f64;
    let (cx, cy) = ((id.centre.0 + jitter.0) * s, (id.centre.1 + jitter.1) * s);
    let (rx, ry) = (id.radii.0 * s, id.radii.1 * s);
    let (sin, cos) = id.angle.sin_cos();
    let to_face = |x: f64, y: f64| {
        let (dx, dy) = (x - cx, y - cy);
        ((cos * dx + sin * dy) / rx, (-sin * dx + cos * dy) / ry)
    };
    let to_px = |u: f64, v: f64| Point::new(cx + cos * u * rx - sin * v * ry, cy + sin * u * rx + cos * v * ry);
    let (period, g_angle, amp) = id.grating;
    let period = period * s / 128.0;
    let (gs, gc) = g_angle.sin_cos();
    let noise = Normal::new(0.0, 0.01).expect("valid sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let r_px = rx.min(ry);
    let image = Image::from_fn(size, size, |r, c| {
        let (x, y) = (c as f64, r as f64);
        let (u, v) = to_face(x, y);
        let shade = 1.0 - 0.25 * (u * u + v * v).min(1.0);
        let mut px = [0.0; 3];
        let face_w = soft(ellipse(u, v, 0.0, -0.1, 1.05, 1.2), r_px);
        let eye = soft(ellipse(u, v, -0.38, -0.2, 0.13, 0.055), r_px).max(soft(ellipse(u, v, 0.38, -0.2, 0.13, 0.055), r_px));
        let brow = soft(ellipse(u, v, -0.42, -0.45, 0.28, 0.04), r_px).max(soft(ellipse(u, v, 0.42, -0.45, 0.28, 0.04), r_px));
        let mouth = soft(ellipse(u, v, 0.0, 0.52, 0.3, 0.09), r_px);
        for ch in 0..3 {
            let bg = id.background[ch] * (0.85 + 0.15 * y / s);
            let mut f = id.skin[ch] * shade;
            f = f * (1.0 - eye - brow) + id.feature[ch] * (eye + brow);
            let lip = [0.7, 0.25, 0.3][ch];
            f = f * (1.0 - mouth) + lip * mouth;
            px[ch] = bg * (1.0 - face_w) + f * face_w;
        }
        let g = amp * (std::f64::consts::TAU * (x * gc + y * gs) / period + id.phase).sin();
        let n: f64 = noise.sample(&mut rng);
        px.map(|v| (v + g + n).clamp(0.0, 1.0) as f32)
    })?;
    let lm = Landmarks::new(landmark_template().into_iter().map(|(u, v)| to_px(u, v)).collect())?;
    Ok(FaceRecord::new(image, lm, id.video.clone(), id.video.clone(), frame))
}

/// Corpus layout: how many videos of which families, frames per video.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpusConfig {
    pub size: usize,
    pub frames_per_video: usize,
    pub train_videos: usize,
    pub held_out_videos: usize,
    /// Families used for training videos; held-out videos use the rest.
    pub train_families: usize,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            size: 128,
            frames_per_video: 2,
            train_videos: 70,
            held_out_videos: 30,
            train_families: 7,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub train: Vec<FaceRecord>,
    pub held_out: Vec<FaceRecord>,
}

fn render_video(id: &ToyIdentity, cfg: &ToyCorpusConfig, rng: &mut impl Rng) -> Result<Vec<FaceRecord>> {
    (0..cfg.frames_per_video)
        .map(|f| {
            let jitter = (rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
            render_face(id, cfg.size, f, jitter, rng.random())
        })
        .collect()
}

/// Training videos cycle through families `0..train_families`; held-out
/// videos through the remaining families.
pub fn toy_corpus(cfg: &ToyCorpusConfig) -> Result<ToyCorpus> {
    if cfg.train_families == 0 || cfg.train_families >= FAMILIES {
        return Err(Error::Config(format!("train_families must lie in 1..{FAMILIES}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train = Vec::new();
    for v in 0..cfg.train_videos {
        let id = ToyIdentity::random(format!("train{v:03}"), v % cfg.train_families, &mut rng);
        train.extend(render_video(&id, cfg, &mut rng)?);
    }
    let unseen = FAMILIES - cfg.train_families;
    let mut held_out = Vec::new();
    for v in 0..cfg.held_out_videos {
        let id = ToyIdentity::random(format!("test{v:03}"), cfg.train_families + v % unseen, &mut rng);
        held_out.extend(render_video(&id, cfg, &mut rng)?);
    }
    Ok(ToyCorpus { train, held_out })
}

/// I2G settings scaled from the 256 px defaults to `size`, without
/// post-blend augmentation.
pub fn toy_i2g_config(size: usize, seed: u64) -> I2GConfig {
    let k = size as f64 / 256.0;
    let d = DeformConfig::default();
    I2GConfig {
        epsilon: 45.0 * k,
        deform: DeformConfig {
            sigma_range: d.sigma_range.map(|v| v * k),
            ..d
        },
        mask_blur_size: ((17.0 * k).round() as usize) | 1,
        augment: AugmentConfig::disabled(),
        seed,
        ..I2GConfig::default()
    }
}

/// A labeled evaluation frame.
#[derive(Clone, Debug)]
pub struct EvalFrame {
    pub id: String,
    pub video: String,
    pub label: u8,
    pub image: Image,
    /// Blend mask of fakes.
    pub mask: Option<crate::imaging::GrayMap>,
}

/// Every held-out frame as a real sample plus an I2G fake drawn from the
/// held-out pool; fakes are grouped under `<video>_fake`.
pub fn eval_split(held_out: &[FaceRecord], cfg: &I2GConfig, seed: u64) -> Result<Vec<EvalFrame>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * held_out.len());
    for face in held_out {
        out.push(EvalFrame {
            id: face.id(),
            video: face.video.clone(),
            label: 0,
            image: face.image.clone(),
            mask: None,
        });
        let pair = generate(face, held_out, cfg, &mut rng)?;
        out.push(EvalFrame {
            id: format!("{}_fake#{}", face.video, face.frame_index),
            video: format!("{}_fake", face.video),
            label: 1,
            image: pair.forged,
            mask: Some(pair.mask),
        });
    }
    Ok(out)
}

/// Writes `real/<video>_<frame>.png`, `landmarks/<video>_<frame>.txt` and a
/// `manifest.jsonl` describing them.
pub fn write_faces(dir: impl AsRef<Path>, faces: &[FaceRecord]) -> Result<CorpusManifest> {
    let dir = dir.as_ref();
    for sub in ["real", "landmarks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::with_capacity(faces.len());
    for f in faces {
        let stem = format!("{}_{}", f.video, f.frame_index);
        let image = dir.join("real").join(format!("{stem}.png"));
        let landmarks = dir.join("landmarks").join(format!("{stem}.txt"));
        write_image(&f.image, &image)?;
        f.landmarks.save(&landmarks)?;
        entries.push(ManifestEntry {
            image,
            landmarks: Some(landmarks),
            identity: f.identity.clone(),
            video: f.video.clone(),
            frame_index: f.frame_index,
            role: Some(Role::Real),
            paired_real: None,
        });
    }
    let manifest = CorpusManifest { entries };
    manifest.save(dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
