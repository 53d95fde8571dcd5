//! File-level drivers behind the `pcl` binary: I2G corpus generation,
//! training, evaluation and heatmap export.

mod config;

pub use config::{env_overrides, RunConfig, ENV_PREFIX};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consistency::{fuse_heatmap, overlay, upsample_heatmap, Heatmap};
use crate::data::{CorpusManifest, Role, TrainingData};
use crate::error::{Error, Result};
use crate::geometry::{convex_hull, Landmarks, Point};
use crate::i2g::{generate_with_seed, FaceRecord};
use crate::imaging::{
    normalize_for_network, read_image, resize_bilinear, write_gray_png, write_image, Image, Raster, IMAGENET_MEAN,
    IMAGENET_STD,
};
use crate::metrics::{labeled_set, video_metrics, write_metrics_json, write_scores_csv, FrameScore, MetricsReport};
use crate::nn::{epoch_seed, load_checkpoint, save_checkpoint, train, write_log_csv, Checkpoint, PclModel, Prediction, STRIDE};

/// Exit status for a batch where some items were skipped.
pub const EXIT_PARTIAL: i32 = 3;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One line of the generated-pairs manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub pair: usize,
    pub target: String,
    pub source: String,
    pub blend_method: String,
    pub seed: u64,
    pub epsilon: f64,
    /// File names relative to the output directory.
    pub forged: String,
    pub mask: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GenerateSummary {
    pub written: usize,
    /// Pairs already present from an earlier run.
    pub reused: usize,
    pub skipped: usize,
}

impl GenerateSummary {
    pub fn exit_code(&self) -> i32 {
        if self.skipped > 0 {
            EXIT_PARTIAL
        } else {
            0
        }
    }
}

/// Seed of pair `k` of a run seeded with `seed`.
pub fn pair_seed(seed: u64, k: usize) -> u64 {
    epoch_seed(seed ^ 0x5EED, k)
}

fn read_pair_records(path: &Path) -> Result<BTreeMap<usize, PairRecord>> {
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: PairRecord = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.insert(r.pair, r);
    }
    Ok(out)
}

fn write_pair_records(path: &Path, records: &BTreeMap<usize, PairRecord>) -> Result<()> {
    let mut buf = Vec::new();
    for r in records.values() {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes `count` forged/mask pairs plus `manifest.jsonl` into `out`.
///
/// Pair `k` blends onto real entry `k mod n` with seed [`pair_seed`], so
/// reruns reproduce the same files and an interrupted run resumes where it
/// stopped. Targets without landmarks and targets with no qualifying source
/// are skipped and counted.
pub fn cmd_generate(cfg: &RunConfig, count: usize, out: &Path) -> Result<GenerateSummary> {
    cfg.validate()?;
    let manifest = CorpusManifest::load(cfg.manifest_path()?)?;
    let reals: Vec<_> = manifest.entries.iter().filter(|e| e.role == Some(Role::Real)).collect();
    if reals.is_empty() && count > 0 {
        return Err(Error::Data("manifest has no real entries".into()));
    }
    let faces: Vec<Option<FaceRecord>> = reals
        .par_iter()
        .map(|e| {
            Ok(match e.load_landmarks()? {
                Some(lm) => Some(FaceRecord::new(
                    e.load_image()?,
                    lm,
                    e.identity.clone(),
                    e.video.clone(),
                    e.frame_index,
                )),
                None => {
                    log::warn!("{} has no landmarks", e.image.display());
                    None
                }
            })
        })
        .collect::<Result<_>>()?;
    let pool: Vec<FaceRecord> = faces.iter().flatten().cloned().collect();

    create_dir(out)?;
    let manifest_path = out.join("manifest.jsonl");
    let mut records = read_pair_records(&manifest_path)?;
    records.retain(|&k, r| k < count && out.join(&r.forged).exists() && out.join(&r.mask).exists());
    let mut summary = GenerateSummary {
        reused: records.len(),
        ..Default::default()
    };
    let todo: Vec<usize> = (0..count).filter(|k| !records.contains_key(k)).collect();
    let chunk = rayon::current_num_threads().max(1) * 4;
    for ks in todo.chunks(chunk) {
        let results: Vec<Result<Option<PairRecord>>> = ks
            .par_iter()
            .map(|&k| {
                let Some(target) = &faces[k % faces.len()] else {
                    return Ok(None);
                };
                let seed = pair_seed(cfg.seed, k);
                let pair = match generate_with_seed(target, &pool, &cfg.i2g, seed) {
                    Ok(p) => p,
                    Err(Error::NoSource(t)) => {
                        log::warn!("pair {k}: no compatible source for {t}");
                        return Ok(None);
                    }
                    Err(e) => return Err(e),
                };
                let forged = format!("pair_{k:06}_forged.png");
                let mask = format!("pair_{k:06}_mask.png");
                write_image(&pair.forged, out.join(&forged))?;
                write_gray_png(&pair.mask, out.join(&mask))?;
                Ok(Some(PairRecord {
                    pair: k,
                    target: pair.target_id,
                    source: pair.source_id,
                    blend_method: pair.blend_method.as_str().to_string(),
                    seed,
                    epsilon: cfg.i2g.epsilon,
                    forged,
                    mask,
                }))
            })
            .collect();
        for r in results {
            match r? {
                Some(rec) => {
                    records.insert(rec.pair, rec);
                    summary.written += 1;
                }
                None => summary.skipped += 1,
            }
        }
        write_pair_records(&manifest_path, &records)?;
    }
    write_pair_records(&manifest_path, &records)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps: usize,
    pub last_checkpoint: Option<PathBuf>,
}

/// Trains from the configured manifest, writing `config.toml`, one
/// `epoch_NNN.ckpt` per epoch and `log.csv` (rewritten after every epoch)
/// into `out`. The top-level seed drives data order, I2G and training.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.train.seed = cfg.seed;
    cfg.i2g.seed = cfg.seed;
    let manifest = CorpusManifest::load(cfg.manifest_path()?)?;
    let mut data = TrainingData::from_manifest(
        &manifest,
        cfg.preset,
        cfg.data.clone(),
        cfg.i2g.clone(),
        cfg.model.input_size,
    )?;
    let model = PclModel::new(cfg.model.clone())?;
    create_dir(out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let mut last = None;
    let mut on_epoch = |r: &crate::nn::EpochReport| {
        let path = out.join(format!("epoch_{:03}.ckpt", r.epoch + 1));
        save_checkpoint(
            &path,
            &Checkpoint {
                model: r.model.clone(),
                adam: Some(r.adam.clone()),
                train: Some(cfg.train.clone()),
                epoch: r.epoch + 1,
            },
        )?;
        write_log_csv(out.join("log.csv"), r.log)?;
        log::info!("epoch {} done, {} steps", r.epoch + 1, r.log.len());
        last = Some(path);
        Ok(())
    };
    match train(model, &mut data, &cfg.train, &mut on_epoch) {
        Ok(outcome) => Ok(TrainSummary {
            epochs: cfg.train.epochs,
            steps: outcome.log.len(),
            last_checkpoint: last,
        }),
        Err(e) => {
            match &last {
                Some(p) => log::error!("training failed; last good checkpoint is {}", p.display()),
                None => log::error!("training failed before the first checkpoint"),
            }
            Err(e)
        }
    }
}

/// Resizes to the nearest multiple of the network stride (at least one
/// stride), warning when the size changes.
pub fn fit_to_stride(img: &Image) -> Result<Image> {
    let (h, w) = img.dims();
    let snap = |n: usize| ((n + STRIDE / 2) / STRIDE).max(1) * STRIDE;
    let (h2, w2) = (snap(h), snap(w));
    if (h2, w2) == (h, w) {
        return Ok(img.clone());
    }
    log::warn!("resizing {h}x{w} input to {h2}x{w2} (multiples of {STRIDE})");
    resize_bilinear(img, h2, w2)
}

/// Prediction and fused heatmap of an image of any size; the full heatmap
/// has the input's dimensions.
pub fn heatmap_for_image(model: &PclModel<f32>, img: &Image) -> Result<(Prediction, Heatmap)> {
    let net_in = fit_to_stride(img)?;
    let pred = model.predict(&normalize_for_network(&net_in, IMAGENET_MEAN, IMAGENET_STD)?)?;
    let (h, w) = img.dims();
    let heat = upsample_heatmap(&fuse_heatmap(&pred.volume), h, w)?;
    Ok((pred, heat))
}

fn score_image(model: &PclModel<f32>, img: &Image) -> Result<f64> {
    let n = model.config.input_size;
    let img = if img.dims() == (n, n) {
        img.clone()
    } else {
        resize_bilinear(img, n, n)?
    };
    Ok(model.predict(&normalize_for_network(&img, IMAGENET_MEAN, IMAGENET_STD)?)?.fake_prob)
}

pub struct EvalOutput {
    pub scores: Vec<FrameScore>,
    /// `None` when some frame is unlabeled or only one class is present.
    pub metrics: Option<MetricsReport>,
}

/// Scores every manifest frame at the checkpoint's input size and writes
/// `scores.csv`, plus `metrics.json` when video-level metrics are defined.
pub fn cmd_eval(checkpoint: &Path, manifest: &Path, out: &Path) -> Result<EvalOutput> {
    let ck = load_checkpoint(checkpoint)?;
    let manifest = CorpusManifest::load(manifest)?;
    let scores: Vec<FrameScore> = manifest
        .entries
        .par_iter()
        .map(|e| {
            Ok(FrameScore {
                id: e.id(),
                video: e.video.clone(),
                label: e.role.map(Role::label),
                score: score_image(&ck.model, &e.load_image()?)?,
            })
        })
        .collect::<Result<_>>()?;
    create_dir(out)?;
    write_scores_csv(out.join("scores.csv"), &scores)?;
    let metrics = match labeled_set(&scores) {
        None => {
            log::warn!("manifest has unlabeled frames; writing scores only");
            None
        }
        Some(set) => match set.counts() {
            (0, _) | (_, 0) => {
                log::warn!("manifest holds a single class; metrics are undefined");
                None
            }
            _ => Some(video_metrics(&set)?),
        },
    };
    if let Some(m) = &metrics {
        write_metrics_json(out.join("metrics.json"), m)?;
    }
    Ok(EvalOutput { scores, metrics })
}

fn draw_outline(img: &mut Image, vertices: &[Point], rgb: [f32; 3]) {
    let (h, w) = img.dims();
    for (i, a) in vertices.iter().enumerate() {
        let b = vertices[(i + 1) % vertices.len()];
        let steps = ((b.x - a.x).abs().max((b.y - a.y).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let (x, y) = ((a.x + t * (b.x - a.x)).round(), (a.y + t * (b.y - a.y)).round());
            if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                img.set_pixel(y as usize, x as usize, rgb);
            }
        }
    }
}

pub struct HeatmapOutput {
    pub fake_prob: f64,
    pub heatmap: Heatmap,
}

/// Writes `heatmap_coarse.png`, `heatmap_full.png` (input size) and
/// `overlay.png`, the latter with the landmark hull outlined when given.
pub fn cmd_heatmap(checkpoint: &Path, image: &Path, landmarks: Option<&Path>, out: &Path) -> Result<HeatmapOutput> {
    let ck = load_checkpoint(checkpoint)?;
    let img = read_image(image)?;
    let hull = landmarks.map(|p| convex_hull(&Landmarks::load(p)?)).transpose()?;
    let (pred, heat) = heatmap_for_image(&ck.model, &img)?;
    let full = heat.full.as_ref().expect("upsampled heatmap");
    let mut composite = overlay(&img, full, 0.6, false)?;
    if let Some(poly) = &hull {
        draw_outline(&mut composite, &poly.vertices, [0.1, 0.9, 0.1]);
    }
    create_dir(out)?;
    write_gray_png(&heat.coarse, out.join("heatmap_coarse.png"))?;
    write_gray_png(full, out.join("heatmap_full.png"))?;
    write_image(&composite, out.join("overlay.png"))?;
    Ok(HeatmapOutput {
        fake_prob: pred.fake_prob,
        heatmap: heat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|k| pair_seed(7, k)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(pair_seed(1, 0), pair_seed(2, 0));
    }

    #[test]
    fn stride_snapping() {
        let img = Image::filled(30, 16, [0.5; 3]).unwrap();
        assert_eq!(fit_to_stride(&img).unwrap().dims(), (32, 16));
        let tiny = Image::filled(5, 40, [0.5; 3]).unwrap();
        assert_eq!(fit_to_stride(&tiny).unwrap().dims(), (16, 48));
    }

    #[test]
    fn outline_stays_in_bounds() {
        let mut img = Image::filled(8, 8, [0.0; 3]).unwrap();
        draw_outline(&mut img, &[Point::new(-3.0, 1.0), Point::new(6.0, 1.0), Point::new(6.0, 20.0)], [1.0; 3]);
        assert_eq!(img.pixel(1, 0), [1.0; 3]);
        assert_eq!(img.pixel(7, 6), [1.0; 3]);
        assert_eq!(img.pixel(4, 2), [0.0; 3]);
    }
}
