//! Dual-branch XCM classifier.
//!
//! ```text
//!            ┌ Conv2d(k x 1, F2) → BN → ReLU ─▶ [variable-wise Grad-CAM]
//!            │   → Conv2d(1 x 1, 1) → ReLU                      (D x T)
//! window ────┤                                                        ├─ concat (D+1) x T
//!  (D x T)   └ Conv1d(k, F1) → BN → ReLU → Conv1d(1, 1) → ReLU  (1 x T)
//!
//! concat → Conv1d(k, Ff) → BN → ReLU ─▶ [combined Grad-CAM] → GAP → Dense(5) → softmax
//! ```
//!
//! Every convolution is stride 1 with same padding, so all feature maps keep
//! the input's time length and Grad-CAM maps line up with input samples.

mod config;
mod model;
mod persist;
mod train;

pub use config::{
    XcmConfig, DEFAULT_KERNEL_SAMPLES, DEFAULT_SAMPLE_RATE_HZ, DEFAULT_WINDOW_LEN, KERNEL_SPAN_MS,
    WINDOW_SPAN_MS,
};
pub use model::{
    batch_input, Classification, ForwardCache, Gradients, LayerTag, Overrides, XcmModel,
};
pub use persist::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{
    accuracy, class_weights, classify_all, derive_seed, fit, train, train_with_observer, FitOutcome,
    TrainEvent, TrainReport, TrainStage,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum XcmError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training partition is empty")]
    EmptyDataset,
    #[error("model file does not start with the XCM1 magic")]
    BadMagic,
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("model file ends before {0} is complete")]
    TruncatedFile(&'static str),
    #[error("model file tensor {index} has shape {found:?}, expected {expected:?}")]
    TensorShape {
        index: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
