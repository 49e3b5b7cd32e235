//! Minimal dense-tensor numeric core.
//!
//! Everything the XCM model needs and nothing more: stride-1 same-padded
//! time convolutions (1D and time-only 2D), batch normalization, ReLU,
//! global average pooling, a dense head, softmax cross-entropy and Adam.
//! Each layer exposes an explicit `forward` and `backward`; the model wires
//! them together and keeps the intermediate tensors it needs.
//!
//! All arithmetic is `f64` and every reduction runs in a fixed order, so
//! identical inputs give bit-identical outputs.

mod adam;
mod batchnorm;
mod conv;
mod layers;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use batchnorm::{BatchNorm, BatchNormCache, Mode, BN_EPS, BN_MOMENTUM};
pub use conv::{Conv1d, Conv2d, ConvGrads};
pub use layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, softmax,
    softmax_cross_entropy, Dense, DenseGrads,
};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("cache does not belong to this forward pass: {0}")]
    CacheMismatch(String),
}

/// Which kind of layer a parameter block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv1d,
    Conv2d,
    BatchNorm,
    Dense,
}

/// Dot product with four independent accumulators.
///
/// The summation order depends only on the slice length, so results are
/// reproducible while still letting the compiler keep several lanes busy.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `out[i] += w * x[i]`
#[inline]
pub(crate) fn axpy(out: &mut [f64], w: f64, x: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += w * v;
    }
}
