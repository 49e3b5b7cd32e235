//! Zero-crossing breath segmentation and fixed-length network windows.
//!
//! A candidate breath starts where flow goes from negative to non-negative
//! and ends where the next such crossing begins. Nothing is filtered out:
//! short or noisy segments are kept so the classifier can label them as
//! artefacts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform_io::{BreathClass, WaveformRecord, ANNOTATION_HEADER};

/// Number of input variables (flow, pressure).
pub const N_VARIABLES: usize = 2;
/// Default window length: 5 s at 125 Hz.
pub const DEFAULT_WINDOW_LEN: usize = 625;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentationError {
    #[error("sequence of length {0} is too short; need at least 2 samples")]
    SequenceTooShort(usize),
}

/// Indices `i >= 1` with `flow[i - 1] < 0` and `flow[i] >= 0`, ascending.
pub fn detect_crossings(flow: &[f64]) -> Result<Vec<usize>, SegmentationError> {
    if flow.len() < 2 {
        return Err(SegmentationError::SequenceTooShort(flow.len()));
    }
    Ok(flow
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] < 0.0 && w[1] >= 0.0)
        .map(|(i, _)| i + 1)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreathSegment {
    pub record_id: String,
    pub start_idx: usize,
    /// Exclusive.
    pub end_idx: usize,
    pub flow: Vec<f64>,
    pub pressure: Vec<f64>,
    pub label: Option<BreathClass>,
}

impl BreathSegment {
    pub fn from_record(
        record: &WaveformRecord,
        start_idx: usize,
        end_idx: usize,
        label: Option<BreathClass>,
    ) -> Self {
        Self {
            record_id: record.record_id.clone(),
            start_idx,
            end_idx,
            flow: record.flow[start_idx..end_idx].to_vec(),
            pressure: record.pressure[start_idx..end_idx].to_vec(),
            label,
        }
    }

    pub fn len(&self) -> usize {
        self.end_idx - self.start_idx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One segment per consecutive crossing pair `[c_k, c_{k+1})`. Samples before
/// the first and after the last crossing are incomplete breaths and dropped.
pub fn segment_breaths(record: &WaveformRecord) -> Vec<BreathSegment> {
    let Ok(crossings) = detect_crossings(&record.flow) else {
        return Vec::new();
    };
    crossings
        .windows(2)
        .map(|c| BreathSegment::from_record(record, c[0], c[1], None))
        .collect()
}

/// Exports segments in the annotation CSV layout; unlabeled rows leave the
/// label column empty.
pub fn segments_to_csv(segments: &[BreathSegment]) -> String {
    let mut out = String::from(ANNOTATION_HEADER);
    out.push('\n');
    for s in segments {
        let label = s.label.map(BreathClass::name).unwrap_or("");
        out.push_str(&format!("{},{},{}\n", s.start_idx, s.end_idx, label));
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSource {
    pub record_id: String,
    pub start_idx: usize,
    pub end_idx: usize,
}

/// Fixed `2 x T` network input. Row 0 is flow, row 1 pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    values: Vec<f64>,
    window_len: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub resampled: bool,
    pub source: Option<WindowSource>,
}

impl SampleWindow {
    /// Wraps raw `D x T` values (row-major) with no padding metadata.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let t = rows.first()?.len();
        if rows.len() != N_VARIABLES || t == 0 || rows.iter().any(|r| r.len() != t) {
            return None;
        }
        Some(Self {
            values: rows.concat(),
            window_len: t,
            pad_left: 0,
            pad_right: 0,
            resampled: false,
            source: None,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, variable: usize) -> &[f64] {
        &self.values[variable * self.window_len..(variable + 1) * self.window_len]
    }

    pub fn row_mut(&mut self, variable: usize) -> &mut [f64] {
        &mut self.values[variable * self.window_len..(variable + 1) * self.window_len]
    }

    /// Number of samples that came from the source segment (`T` if resampled).
    pub fn content_len(&self) -> usize {
        self.window_len - self.pad_left - self.pad_right
    }

    /// First and last non-padding sample of a variable.
    pub fn boundary_values(&self, variable: usize) -> (f64, f64) {
        let row = self.row(variable);
        (row[self.pad_left], row[self.window_len - self.pad_right - 1])
    }
}

/// Linear interpolation onto `n` equidistant points, keeping both endpoints.
pub fn resample_linear(values: &[f64], n: usize) -> Vec<f64> {
    let last = values.len() - 1;
    if n == 1 {
        return vec![values[0]];
    }
    (0..n)
        .map(|j| {
            if j == n - 1 {
                return values[last];
            }
            let x = j as f64 * last as f64 / (n - 1) as f64;
            let i = (x.floor() as usize).min(last);
            if i == last {
                return values[last];
            }
            let frac = x - i as f64;
            values[i] + frac * (values[i + 1] - values[i])
        })
        .collect()
}

/// Pads with zeros on both sides (left gets `floor((T - len) / 2)`) or, for
/// segments longer than `T`, linearly resamples onto `T` points.
pub fn fixed_length(segment: &BreathSegment, window_len: usize) -> SampleWindow {
    let len = segment.len();
    let source = Some(WindowSource {
        record_id: segment.record_id.clone(),
        start_idx: segment.start_idx,
        end_idx: segment.end_idx,
    });
    let mut values = vec![0.0; N_VARIABLES * window_len];
    if len <= window_len {
        let pad_left = (window_len - len) / 2;
        let pad_right = window_len - len - pad_left;
        for (d, row) in [&segment.flow, &segment.pressure].into_iter().enumerate() {
            values[d * window_len + pad_left..d * window_len + pad_left + len].copy_from_slice(row);
        }
        SampleWindow {
            values,
            window_len,
            pad_left,
            pad_right,
            resampled: false,
            source,
        }
    } else {
        for (d, row) in [&segment.flow, &segment.pressure].into_iter().enumerate() {
            values[d * window_len..(d + 1) * window_len]
                .copy_from_slice(&resample_linear(row, window_len));
        }
        SampleWindow {
            values,
            window_len,
            pad_left: 0,
            pad_right: 0,
            resampled: true,
            source,
        }
    }
}
