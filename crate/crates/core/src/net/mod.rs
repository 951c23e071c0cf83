//! Stacked-LSTM classifier written from scratch.
//!
//! Categorical covariates go through trainable embeddings, the stack runs
//! over the whole window, and a dense head turns the top layer's last hidden
//! state into class probabilities. Gradients are exact (backpropagation
//! through time) and verified against finite differences in [`gradcheck`].

mod cell;
mod checkpoint;
mod config;
mod data;
pub mod gradcheck;
mod model;
mod optim;
mod params;
mod train;

pub use cell::{
    embed_row, lstm_step, lstm_step_backward, softmax, HiddenState, LayerState, StepCache,
};
pub use checkpoint::{
    checkpoint_manifest, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{Covariate, Hyper, ModelConfig};
pub use data::{DatasetSequences, SequenceSource};
pub use model::{
    argmax, batch_gradient, embed, encode_input, forward, loss, loss_with, nll, predict,
    predict_many, Forward, LabelledSequence, Sequence, PROB_FLOOR,
};
pub use optim::{adam_step, dropout_mask, AdamConfig, AdamState, DropoutPlan};
pub use params::{Layout, ModelParams, TensorSpec};
pub use train::{
    evaluate, fit, hyper_search, train, EpochRecord, InputSpec, RngState, SearchOutcome,
    SearchSpace, TrainOutcome, Trial,
};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("category {category} out of range for {covariate} (cardinality {cardinality})")]
    CategoryOutOfRange {
        covariate: &'static str,
        category: usize,
        cardinality: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("normalization statistics are missing")]
    MissingStats,
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {0} is not a valid class")]
    InvalidLabel(u8),
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("search space is empty")]
    EmptySpace,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
