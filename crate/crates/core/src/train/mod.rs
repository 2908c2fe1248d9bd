//! Training: configuration, Adam/SGD updates, the optimisation loop with
//! periodic dev evaluation, binary checkpoints, whole-model gradient checks
//! and hyperparameter sweeps.

mod checkpoint;
mod config;
mod gradcheck;
mod optim;
mod sweep;
mod trainer;

pub use checkpoint::{Checkpoint, NamedTensor, FORMAT_VERSION, MAGIC};
pub use config::TrainConfig;
pub use gradcheck::{gradcheck_model, GradcheckSetup, GroupReport, GRADCHECK_FAIL};
pub use optim::{adam_step, clip_grad_norm, sgd_step, OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use sweep::{parse_grid, run_sweep, sweep_csv, SweepRow, SWEEP_HEADER};
pub use trainer::{
    build_vocab, load_dataset, load_datasets, metrics_csv, split_dev, train, Datasets, MetricRow, TrainSummary, Trainer, TrainerState,
    BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_FILE, METRICS_HEADER,
};
