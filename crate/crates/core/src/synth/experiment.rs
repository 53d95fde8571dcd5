use rayon::prelude::*;

use super::{eval_split, toy_corpus, toy_i2g_config, EvalFrame, ToyCorpus, ToyCorpusConfig};
use crate::consistency::{fuse_heatmap, upsample_heatmap};
use crate::data::{DataConfig, TrainingData};
use crate::error::Result;
use crate::imaging::{normalize_for_network, AugmentConfig, GrayMap, Raster, IMAGENET_MEAN, IMAGENET_STD};
use crate::metrics::{labeled_set, low_region_iou, video_metrics, FrameScore, MetricsReport};
use crate::nn::{train, ModelConfig, PclModel, TrainConfig, TrainOutcome};

/// Train-on-real-plus-I2G, test-on-unseen-families experiment.
#[derive(Clone, Debug)]
pub struct ToyExperiment {
    pub corpus: ToyCorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval_seed: u64,
}

impl Default for ToyExperiment {
    fn default() -> Self {
        let corpus = ToyCorpusConfig::default();
        Self {
            model: ModelConfig {
                input_size: corpus.size,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                batch_size: 8,
                lr_peak: 1e-3,
                ..TrainConfig::default()
            },
            data: DataConfig {
                frames_per_video: 4 * corpus.frames_per_video,
                augment: toy_augment(),
                ..DataConfig::default()
            },
            corpus,
            eval_seed: 99,
        }
    }
}

/// Brightness, contrast and strong colour jitter only; flips come from the
/// data config.
pub fn toy_augment() -> AugmentConfig {
    let mut a = AugmentConfig::disabled();
    a.brightness_contrast.enabled = true;
    a.brightness_contrast.probability = 0.8;
    a.color_jitter.enabled = true;
    a.color_jitter.probability = 0.8;
    a.color_jitter.strength = 0.2;
    a
}

/// Scores and heatmap of one evaluation frame.
#[derive(Clone, Debug)]
pub struct FrameResult {
    pub score: FrameScore,
    pub heatmap: GrayMap,
    /// Bottom-decile IoU against the blend mask, for fakes.
    pub iou: Option<f64>,
}

pub struct ToyRun {
    pub outcome: TrainOutcome,
    pub frames: Vec<FrameResult>,
    pub report: MetricsReport,
}

impl ToyExperiment {
    pub fn corpus(&self) -> Result<(ToyCorpus, Vec<EvalFrame>)> {
        let corpus = toy_corpus(&self.corpus)?;
        let split = eval_split(&corpus.held_out, &toy_i2g_config(self.corpus.size, self.eval_seed), self.eval_seed)?;
        Ok((corpus, split))
    }

    pub fn fit(&self, corpus: &ToyCorpus, lambda: f64) -> Result<TrainOutcome> {
        let mut data = TrainingData::from_faces(
            corpus.train.clone(),
            self.data.clone(),
            toy_i2g_config(self.corpus.size, self.train.seed),
        )?;
        let cfg = TrainConfig {
            lambda,
            ..self.train.clone()
        };
        train(PclModel::new(self.model.clone())?, &mut data, &cfg, &mut |_| Ok(()))
    }

    pub fn run(&self, corpus: &ToyCorpus, split: &[EvalFrame], lambda: f64) -> Result<ToyRun> {
        let outcome = self.fit(corpus, lambda)?;
        let frames = evaluate_frames(&outcome.model, split)?;
        let scores: Vec<FrameScore> = frames.iter().map(|f| f.score.clone()).collect();
        let report = video_metrics(&labeled_set(&scores).expect("split is labeled"))?;
        Ok(ToyRun {
            outcome,
            frames,
            report,
        })
    }
}

/// Fake probability, fused full-resolution heatmap and mask IoU per frame.
pub fn evaluate_frames(model: &PclModel<f32>, frames: &[EvalFrame]) -> Result<Vec<FrameResult>> {
    frames
        .par_iter()
        .map(|f| {
            let pred = model.predict(&normalize_for_network(&f.image, IMAGENET_MEAN, IMAGENET_STD)?)?;
            let (h, w) = f.image.dims();
            let heat = upsample_heatmap(&fuse_heatmap(&pred.volume), h, w)?.full.expect("upsampled");
            let iou = f.mask.as_ref().map(|m| low_region_iou(&heat, m, 0.1)).transpose()?;
            Ok(FrameResult {
                score: FrameScore {
                    id: f.id.clone(),
                    video: f.video.clone(),
                    label: Some(f.label),
                    score: pred.fake_prob,
                },
                heatmap: heat,
                iou,
            })
        })
        .collect()
}
