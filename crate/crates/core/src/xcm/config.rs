use serde::{Deserialize, Serialize};

use super::XcmError;
use crate::waveform_io::BreathClass;

pub const DEFAULT_SAMPLE_RATE_HZ: usize = 125;
pub const WINDOW_SPAN_MS: usize = 5000;
pub const KERNEL_SPAN_MS: usize = 344;

pub const DEFAULT_WINDOW_LEN: usize = WINDOW_SPAN_MS * DEFAULT_SAMPLE_RATE_HZ / 1000;
pub const DEFAULT_KERNEL_SAMPLES: usize = KERNEL_SPAN_MS * DEFAULT_SAMPLE_RATE_HZ / 1000;

const _: () = assert!(DEFAULT_WINDOW_LEN == 625);
const _: () = assert!(DEFAULT_KERNEL_SAMPLES == 43);
const _: () = assert!(DEFAULT_KERNEL_SAMPLES % 2 == 1);
const _: () = assert!((WINDOW_SPAN_MS * DEFAULT_SAMPLE_RATE_HZ).is_multiple_of(1000));
const _: () = assert!((KERNEL_SPAN_MS * DEFAULT_SAMPLE_RATE_HZ).is_multiple_of(1000));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XcmConfig {
    pub n_variables: usize,
    pub window_len: usize,
    pub kernel_samples: usize,
    pub filters_2d: usize,
    pub filters_1d: usize,
    pub filters_final: usize,
    pub n_classes: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub folds: usize,
    pub seed: u64,
    pub lr: f64,
    /// Weight the loss by inverse class frequency.
    pub class_weighting: bool,
}

impl Default for XcmConfig {
    fn default() -> Self {
        Self {
            n_variables: 2,
            window_len: DEFAULT_WINDOW_LEN,
            kernel_samples: DEFAULT_KERNEL_SAMPLES,
            filters_2d: 16,
            filters_1d: 16,
            filters_final: 32,
            n_classes: BreathClass::COUNT,
            batch_size: 32,
            epochs: 100,
            folds: 5,
            seed: 0,
            lr: 1e-3,
            class_weighting: false,
        }
    }
}

impl XcmConfig {
    /// Kernel width in samples spanning `span_ms` at `sample_rate_hz`,
    /// rounded to the nearest odd integer.
    pub fn kernel_for_span(span_ms: f64, sample_rate_hz: f64) -> usize {
        let raw = (span_ms * sample_rate_hz / 1000.0).round() as usize;
        if raw.is_multiple_of(2) {
            raw + 1
        } else {
            raw
        }
    }

    pub fn validate(&self) -> Result<(), XcmError> {
        let fail = |m: String| Err(XcmError::InvalidConfig(m));
        if self.n_variables != 2 {
            return fail(format!("n_variables must be 2 (flow, pressure), got {}", self.n_variables));
        }
        if self.n_classes != BreathClass::COUNT {
            return fail(format!("n_classes must be {}, got {}", BreathClass::COUNT, self.n_classes));
        }
        if self.kernel_samples == 0 || self.kernel_samples.is_multiple_of(2) {
            return fail(format!("kernel_samples must be odd, got {}", self.kernel_samples));
        }
        if self.window_len < 2 || self.kernel_samples > self.window_len {
            return fail(format!(
                "kernel_samples {} must not exceed window_len {} (>= 2)",
                self.kernel_samples, self.window_len
            ));
        }
        if self.filters_2d == 0 || self.filters_1d == 0 || self.filters_final == 0 {
            return fail("filter counts must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.folds < 2 {
            return fail(format!("folds must be at least 2, got {}", self.folds));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        Ok(())
    }
}
