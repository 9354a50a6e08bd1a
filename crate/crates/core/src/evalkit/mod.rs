//! Few-shot classifier evaluation on a testbed of tasks.
//!
//! Embeddings are precomputed (the toolkit never touches images or trains
//! feature extractors); classifiers operate on frozen vectors. Evaluation is
//! stateless per task and runs in parallel; reports are deterministic
//! reductions keyed by task id.

mod classifiers;
mod embeddings;
mod report;

pub use classifiers::{
    bdcspn_rectify, compute_prototypes, finetune_fit_predict, protonet_predict,
    softmax_ce_loss_and_grad, ClassifierSpec, BDCSPN_DEFAULT_SHIFT_WEIGHT,
    BDCSPN_DEFAULT_TEMPERATURE, FINETUNE_DEFAULT_LEARNING_RATE, FINETUNE_DEFAULT_STEPS,
};
pub use embeddings::{load_embeddings, EmbeddingStore, EMB1_MAGIC};
pub use report::{
    evaluate_testbed, rolling_correlation, EvalReport, QuartileSummary, RollingPoint, TaskResult,
    DEFAULT_ROLLING_WINDOW,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("embedding dimension mismatch for `{id}`: expected {expected}, got {got}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("duplicate instance id `{0}`")]
    DuplicateInstance(String),
    #[error("non-finite vector component for instance `{0}`")]
    NonFiniteVector(String),
    #[error("instance `{instance}` is missing from the embedding store{}", task_context(.task_id))]
    MissingInstance {
        instance: String,
        task_id: Option<u64>,
    },
    #[error("rolling window of {window} exceeds the {tasks} available tasks")]
    WindowTooLarge { window: usize, tasks: usize },
    #[error("invalid embedding data: {0}")]
    Parse(String),
    #[error("invalid classifier configuration: {0}")]
    InvalidClassifier(String),
}

fn task_context(task_id: &Option<u64>) -> String {
    match task_id {
        Some(t) => format!(" (task {t})"),
        None => String::new(),
    }
}
