use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::model::PclModel;
use super::optim::{adam_step, lr_schedule, AdamState};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the consistency loss.
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_peak: f64,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub seed: u64,
    /// Worker threads for per-sample gradients; 0 uses all cores.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            batch_size: 16,
            epochs: 30,
            lr_peak: 5e-5,
            adam_betas: [0.9, 0.999],
            adam_eps: 1e-8,
            seed: 0,
            jobs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.lr_peak > 0.0) || !self.lr_peak.is_finite() {
            return Err(Error::Config(format!("lr_peak must be > 0, got {}", self.lr_peak)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let [b1, b2] = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps must be positive".into()));
        }
        Ok(())
    }

    /// Optimizer steps for an epoch of `epoch_len` samples.
    pub fn steps_per_epoch(&self, epoch_len: usize) -> usize {
        epoch_len.div_ceil(self.batch_size)
    }
}

/// A network-ready sample: normalized `[3, H, W]` input, flattened target
/// volume and label (1 = fake).
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub input: Tensor<f32>,
    pub volume: Vec<f32>,
    pub label: u8,
}

/// Supplies the ordered samples of each epoch.
pub trait SampleSource {
    /// Number of samples every epoch yields.
    fn epoch_len(&self) -> usize;
    fn epoch(&mut self, epoch: usize, seed: u64) -> Result<Vec<TrainExample>>;
}

impl SampleSource for Vec<TrainExample> {
    fn epoch_len(&self) -> usize {
        self.len()
    }

    fn epoch(&mut self, _epoch: usize, _seed: u64) -> Result<Vec<TrainExample>> {
        Ok(self.clone())
    }
}

/// Batch-mean losses of one optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub l_pcl: f64,
    pub l_cls: f64,
    pub total: f64,
}

/// Handed to the per-epoch callback after the epoch's last step.
pub struct EpochReport<'a> {
    pub epoch: usize,
    pub model: &'a PclModel<f32>,
    pub adam: &'a AdamState,
    pub log: &'a [StepLog],
}

pub struct TrainOutcome {
    pub model: PclModel<f32>,
    pub adam: AdamState,
    pub log: Vec<StepLog>,
}

struct SampleGrad {
    grads: Vec<Vec<f32>>,
    l_pcl: f64,
    l_cls: f64,
}

fn sample_grad(model: &PclModel<f32>, ex: &TrainExample, lambda: f32) -> Result<SampleGrad> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let loss = model.loss(&mut g, &vars, &ex.input, &ex.volume, ex.label, lambda)?;
    let grads = g.backward(loss.total)?;
    Ok(SampleGrad {
        grads: model
            .params
            .tensors()
            .iter()
            .zip(&vars)
            .map(|(t, &v)| grads.get_or_zeros(v, t.numel()))
            .collect(),
        l_pcl: loss.pcl.map_or(0.0, |v| g.value(v).item() as f64),
        l_cls: g.value(loss.cls).item() as f64,
    })
}

/// Derives the data seed of an epoch from the run seed.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Minibatch Adam on `lambda * L_pcl + L_cls` with the warm-up / plateau /
/// decay schedule. Per-sample gradients are computed in parallel and summed
/// in sample order, so results do not depend on the thread count.
pub fn train(
    mut model: PclModel<f32>,
    source: &mut dyn SampleSource,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochReport) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let per_epoch = cfg.steps_per_epoch(source.epoch_len());
    let total_steps = per_epoch * cfg.epochs;
    let mut adam = AdamState::new(&model.params);
    let mut log = Vec::with_capacity(total_steps);
    let lambda = cfg.lambda as f32;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let samples = source.epoch(epoch, epoch_seed(cfg.seed, epoch))?;
        for batch in samples.chunks(cfg.batch_size) {
            let results: Vec<Result<SampleGrad>> =
                pool.install(|| batch.par_iter().map(|ex| sample_grad(&model, ex, lambda)).collect());
            let inv = 1.0 / batch.len() as f32;
            let mut sum: Vec<Vec<f32>> = model.params.tensors().iter().map(|t| vec![0f32; t.numel()]).collect();
            let (mut l_pcl, mut l_cls) = (0.0, 0.0);
            for r in results {
                let r = r?;
                for (acc, g) in sum.iter_mut().zip(&r.grads) {
                    acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b * inv);
                }
                l_pcl += r.l_pcl;
                l_cls += r.l_cls;
            }
            l_pcl /= batch.len() as f64;
            l_cls /= batch.len() as f64;
            let lr = lr_schedule(step, total_steps, cfg.lr_peak);
            adam_step(&mut model.params, &sum, &mut adam, cfg, lr)?;
            if model.params.tensors().iter().any(|t| !t.is_finite()) {
                return Err(Error::Numeric(format!("parameters became non-finite at step {step}")));
            }
            log.push(StepLog {
                step,
                lr,
                l_pcl,
                l_cls,
                total: cfg.lambda * l_pcl + l_cls,
            });
            step += 1;
        }
        on_epoch(&EpochReport {
            epoch,
            model: &model,
            adam: &adam,
            log: &log,
        })?;
    }
    Ok(TrainOutcome { model, adam, log })
}

/// Writes `step,lr,l_pcl,l_cls,total` rows.
pub fn write_log_csv(path: impl AsRef<Path>, log: &[StepLog]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
