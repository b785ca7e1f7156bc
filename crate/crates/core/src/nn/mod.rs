//! Dense feedforward networks trained with backpropagation and Nadam.

pub mod activation;
pub mod bins;
pub mod eval;
pub mod loss;
pub mod mlp;
pub mod models;
pub mod optim;
pub mod train;

pub use activation::{softmax, swish, Activation};
pub use bins::{binned_expectation, BinGrid};
pub use eval::{evaluate_predictions, Metrics};
pub use loss::{cce_loss, mae_loss, LossKind};
pub use mlp::{Architecture, LayerSpec, Mlp, Trace};
pub use models::{ClassificationModel, RegressionModel};
pub use optim::{Nadam, NadamConfig};
pub use train::{train, EpochRecord, History, TrainConfig};
