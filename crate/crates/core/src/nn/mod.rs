//! A small reverse-mode network core and the two-branch consistency model
//! built on it.

mod checkpoint;
mod graph;
mod loss;
mod model;
mod optim;
mod tensor;
mod train;

pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use graph::{Grads, Graph, Var, PROB_EPS};
pub use loss::{bce, cls_loss, pcl_loss, total_loss};
pub use model::{
    class_index, fake_probability, pcl_head, FeatureMap, ForwardOut, LossVars, ModelConfig, ParamStore, PclHeadParams,
    PclModel, Prediction, STRIDE,
};
pub use optim::{adam_step, lr_schedule, AdamState};
pub use tensor::{Real, Tensor};
pub use train::{
    epoch_seed, train, write_log_csv, EpochReport, SampleSource, StepLog, TrainConfig, TrainExample, TrainOutcome,
};
