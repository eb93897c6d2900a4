//! Small-scale training experiments: a rectifier network on synthetic
//! classes, trained with each energy regularizer, plus rotation training where
//! the hidden neurons only rotate.
//!
//! Every arm of a given seed starts from the same weights, sees batches in the
//! same order and draws projections from its own stream, so differences
//! between arms come from the regularizer alone.

mod data;
mod rotation;
mod train;

pub use data::{
    argmax_rows, error_rate, least_squares_test_error, make_dataset, make_dataset_with, one_hot,
    Dataset, DatasetConfig, TRAIN_FRACTION,
};
pub use rotation::{gram_schmidt, gram_schmidt_node, orthogonality_error};
pub use train::{
    summaries_to_json, total_loss_gradient_check, train, train_rotation, train_seed, ArmResult,
    ArmSummary, MlpSpec, Regularizer, RunResult, TrainConfig, TrainRow, TrainTrace,
};
