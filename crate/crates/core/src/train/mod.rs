//! Loss, optimiser, data splits and the training loop.

pub mod config;
pub mod loss;
pub mod optim;
pub mod split;
pub mod trainer;

pub use config::{derive_seed, TrainConfig};
pub use loss::bce_loss;
pub use optim::RmsProp;
pub use split::{split, split_counts, Split};
pub use trainer::{
    batch_loss, diagnosis_truths, evaluate, predict_samples, score, selection_metric_name, train, train_from,
    EpochLog, TrainOutcome, SELECTION_K,
};
