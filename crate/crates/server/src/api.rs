//! Read-only HTTP API over a loaded model and data directory.
//!
//! | Method | Path                                   | Body                       |
//! |--------|----------------------------------------|----------------------------|
//! | GET    | `/api/records`                         | record ids                 |
//! | GET    | `/api/records/{id}?from_idx&to_idx&max_points` | decimated samples  |
//! | GET    | `/api/records/{id}/breaths`            | [`ApiWindowView`] list     |
//! | GET    | `/api/breaths/{id}/explanation`        | [`ApiExplanationView`]     |
//! | POST   | `/api/classify`                        | classification + maps      |
//!
//! Breath ids are `<record_id>:<k>` with `k` the breath's position in the
//! record's segmentation. Segmentation and classification run once at
//! startup; explanations are computed on first request and cached.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use breathlens::gradcam::{explain, explain_for_prediction, Explanation};
use breathlens::nn::Mode;
use breathlens::segmentation::{fixed_length, segment_breaths, SampleWindow, N_VARIABLES};
use breathlens::waveform_io::{BreathClass, WaveformRecord};
use breathlens::xcm::{batch_input, Classification, XcmError, XcmModel};

use crate::data::DataEntry;

pub const DEFAULT_MAX_POINTS: usize = 2000;
/// Point budget per variable for the plotting samples of one breath.
pub const BREATH_MAX_POINTS: usize = 256;
pub const VARIABLE_NAMES: [&str; N_VARIABLES] = ["flow", "pressure"];
const CLASSIFY_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub idx: usize,
    pub value: f64,
}

/// Peak-preserving decimation of `values`, whose first element sits at
/// absolute index `offset`.
///
/// With more samples than `max_points`, the range is cut into
/// `max_points / 2` buckets and each bucket contributes its minimum and
/// maximum in index order, so no local extreme is lost.
pub fn decimate(values: &[f64], offset: usize, max_points: usize) -> Vec<Point> {
    let len = values.len();
    if len <= max_points {
        return values
            .iter()
            .enumerate()
            .map(|(i, &value)| Point {
                idx: offset + i,
                value,
            })
            .collect();
    }
    let buckets = (max_points / 2).max(1);
    let mut out = Vec::with_capacity(2 * buckets);
    for b in 0..buckets {
        let (lo, hi) = (b * len / buckets, (b + 1) * len / buckets);
        let (mut min_i, mut max_i) = (lo, lo);
        for i in lo..hi {
            if values[i] < values[min_i] {
                min_i = i;
            }
            if values[i] > values[max_i] {
                max_i = i;
            }
        }
        let (first, second) = (min_i.min(max_i), min_i.max(max_i));
        out.push(Point {
            idx: offset + first,
            value: values[first],
        });
        if second != first {
            out.push(Point {
                idx: offset + second,
                value: values[second],
            });
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiRecordView {
    pub record_id: String,
    pub sample_rate_hz: f64,
    pub len: usize,
    pub from_idx: usize,
    pub to_idx: usize,
    pub flow: Vec<Point>,
    pub pressure: Vec<Point>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiWindowView {
    pub breath_id: String,
    pub record_id: String,
    pub start_idx: usize,
    /// Exclusive.
    pub end_idx: usize,
    pub flow: Vec<Point>,
    pub pressure: Vec<Point>,
    pub label: BreathClass,
    pub confidence: f64,
    pub probabilities: Vec<f64>,
    pub annotated_label: Option<BreathClass>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiExplanationView {
    pub breath_id: String,
    pub record_id: String,
    pub start_idx: usize,
    pub end_idx: usize,
    pub label: BreathClass,
    pub confidence: f64,
    pub target_class: BreathClass,
    pub variables: Vec<String>,
    /// Network input, `D x T`.
    pub window: Vec<Vec<f64>>,
    pub pad_left: usize,
    pub pad_right: usize,
    pub resampled: bool,
    /// First real sample per variable, drawn across the left padding.
    pub display_pad_value_left: Vec<f64>,
    /// Last real sample per variable, drawn across the right padding.
    pub display_pad_value_right: Vec<f64>,
    pub combined: Vec<f64>,
    pub per_variable: Vec<Vec<f64>>,
}

impl ApiExplanationView {
    pub fn new(
        breath_id: String,
        window: &SampleWindow,
        classification: &Classification,
        explanation: &Explanation,
    ) -> Self {
        let source = window.source.clone().unwrap_or_default();
        let (left, right): (Vec<f64>, Vec<f64>) =
            (0..N_VARIABLES).map(|d| window.boundary_values(d)).unzip();
        Self {
            breath_id,
            record_id: source.record_id,
            start_idx: source.start_idx,
            end_idx: source.end_idx,
            label: classification.label,
            confidence: classification.confidence,
            target_class: explanation.target_class,
            variables: VARIABLE_NAMES.iter().map(|s| s.to_string()).collect(),
            window: (0..N_VARIABLES).map(|d| window.row(d).to_vec()).collect(),
            pad_left: window.pad_left,
            pad_right: window.pad_right,
            resampled: window.resampled,
            display_pad_value_left: left,
            display_pad_value_right: right,
            combined: explanation.combined.clone(),
            per_variable: explanation.per_variable.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyRequest {
    /// `D x T`, row 0 flow, row 1 pressure.
    pub window: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub label: BreathClass,
    pub confidence: f64,
    pub probabilities: Vec<f64>,
    pub target_class: BreathClass,
    pub combined: Vec<f64>,
    pub per_variable: Vec<Vec<f64>>,
}

pub struct BreathEntry {
    pub breath_id: String,
    pub window: SampleWindow,
    pub classification: Classification,
    pub annotated_label: Option<BreathClass>,
    explanation: OnceLock<Explanation>,
}

impl BreathEntry {
    pub fn start_idx(&self) -> usize {
        self.window.source.as_ref().map_or(0, |s| s.start_idx)
    }

    pub fn end_idx(&self) -> usize {
        self.window.source.as_ref().map_or(0, |s| s.end_idx)
    }
}

pub struct RecordEntry {
    pub record: WaveformRecord,
    pub breaths: Vec<BreathEntry>,
}

pub struct AppState {
    pub model: XcmModel,
    pub records: BTreeMap<String, RecordEntry>,
}

pub fn breath_id(record_id: &str, k: usize) -> String {
    format!("{record_id}:{k}")
}

fn classify_windows(model: &XcmModel, windows: &[SampleWindow]) -> Result<Vec<Classification>, XcmError> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(CLASSIFY_BATCH) {
        let refs: Vec<&SampleWindow> = chunk.iter().collect();
        let cache = model.forward(&batch_input(&refs)?, Mode::Infer)?;
        out.extend((0..chunk.len()).map(|b| cache.classification(b)));
    }
    Ok(out)
}

impl AppState {
    /// Segments and classifies every record.
    pub fn new(model: XcmModel, data: Vec<DataEntry>) -> Result<Self, XcmError> {
        let t = model.config.window_len;
        let mut records = BTreeMap::new();
        for entry in data {
            let record = entry.record;
            let segments = segment_breaths(&record);
            let windows: Vec<SampleWindow> = segments.iter().map(|s| fixed_length(s, t)).collect();
            let classes = classify_windows(&model, &windows)?;
            let breaths = windows
                .into_iter()
                .zip(classes)
                .zip(&segments)
                .enumerate()
                .map(|(k, ((window, classification), s))| BreathEntry {
                    breath_id: breath_id(&record.record_id, k),
                    window,
                    classification,
                    annotated_label: entry
                        .annotations
                        .as_ref()
                        .and_then(|a| a.label_for(s.start_idx, s.end_idx)),
                    explanation: OnceLock::new(),
                })
                .collect();
            records.insert(record.record_id.clone(), RecordEntry { record, breaths });
        }
        Ok(Self { model, records })
    }

    pub fn breath(&self, breath_id: &str) -> Option<&BreathEntry> {
        let (record_id, k) = breath_id.rsplit_once(':')?;
        let k: usize = k.parse().ok()?;
        self.records.get(record_id)?.breaths.get(k)
    }

    /// Explanation of the predicted class, computed once per breath.
    pub fn explanation<'a>(&self, breath: &'a BreathEntry) -> Result<&'a Explanation, XcmError> {
        if let Some(e) = breath.explanation.get() {
            return Ok(e);
        }
        let (_, cache) = self.model.forward_with_cache(&breath.window)?;
        let e = explain(&self.model, &cache, breath.classification.label)?;
        Ok(breath.explanation.get_or_init(|| e))
    }

    pub fn window_views(&self, record_id: &str) -> Option<Vec<ApiWindowView>> {
        let entry = self.records.get(record_id)?;
        let r = &entry.record;
        Some(
            entry
                .breaths
                .iter()
                .map(|b| {
                    let (s, e) = (b.start_idx(), b.end_idx());
                    ApiWindowView {
                        breath_id: b.breath_id.clone(),
                        record_id: record_id.to_string(),
                        start_idx: s,
                        end_idx: e,
                        flow: decimate(&r.flow[s..e], s, BREATH_MAX_POINTS),
                        pressure: decimate(&r.pressure[s..e], s, BREATH_MAX_POINTS),
                        label: b.classification.label,
                        confidence: b.classification.confidence,
                        probabilities: b.classification.distribution.clone(),
                        annotated_label: b.annotated_label,
                    }
                })
                .collect(),
        )
    }

    pub fn explanation_view(&self, breath_id: &str) -> Result<ApiExplanationView, ApiError> {
        let breath = self
            .breath(breath_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown breath id {breath_id:?}")))?;
        let explanation = self.explanation(breath).map_err(ApiError::internal)?;
        Ok(ApiExplanationView::new(
            breath.breath_id.clone(),
            &breath.window,
            &breath.classification,
            explanation,
        ))
    }

    pub fn record_view(&self, record_id: &str, q: &RecordQuery) -> Result<ApiRecordView, ApiError> {
        let r = &self
            .records
            .get(record_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown record id {record_id:?}")))?
            .record;
        let from = q.from_idx.unwrap_or(0);
        let to = q.to_idx.unwrap_or(r.len());
        let max_points = q.max_points.unwrap_or(DEFAULT_MAX_POINTS);
        if from >= to || to > r.len() {
            return Err(ApiError::bad_request(format!(
                "range [{from}, {to}) is not within record of length {}",
                r.len()
            )));
        }
        if max_points < 2 {
            return Err(ApiError::bad_request("max_points must be at least 2"));
        }
        Ok(ApiRecordView {
            record_id: record_id.to_string(),
            sample_rate_hz: r.sample_rate_hz,
            len: r.len(),
            from_idx: from,
            to_idx: to,
            flow: decimate(&r.flow[from..to], from, max_points),
            pressure: decimate(&r.pressure[from..to], from, max_points),
        })
    }

    pub fn classify_raw(&self, request: &ClassifyRequest) -> Result<ClassifyResponse, ApiError> {
        let t = self.model.config.window_len;
        let d = request.window.len();
        if d != N_VARIABLES {
            return Err(ApiError::bad_request(format!(
                "window must have shape D x T with expected D=2 variables (flow, pressure) and T={t}; got D={d}"
            )));
        }
        for (i, row) in request.window.iter().enumerate() {
            if row.len() != t {
                return Err(ApiError::bad_request(format!(
                    "window row {i} ({}) has {} samples; expected T={t}",
                    VARIABLE_NAMES[i],
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(ApiError::bad_request(format!("window row {i} holds non-finite values")));
            }
        }
        let window = SampleWindow::from_rows(&request.window)
            .ok_or_else(|| ApiError::bad_request("window rows must be non-empty and equal length"))?;
        let (c, e) = explain_for_prediction(&self.model, &window).map_err(ApiError::internal)?;
        Ok(ClassifyResponse {
            label: c.label,
            confidence: c.confidence,
            probabilities: c.distribution,
            target_class: e.target_class,
            combined: e.combined,
            per_variable: e.per_variable,
        })
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct RecordQuery {
    pub from_idx: Option<usize>,
    pub to_idx: Option<usize>,
    pub max_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            message: message.into(),
        }
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: e.to_string(),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: &self.message })).into_response()
    }
}

type Shared = State<Arc<AppState>>;

async fn list_records(State(s): Shared) -> Json<Vec<String>> {
    Json(s.records.keys().cloned().collect())
}

async fn get_record(
    State(s): Shared,
    Path(id): Path<String>,
    Query(q): Query<RecordQuery>,
) -> Result<Json<ApiRecordView>, ApiError> {
    s.record_view(&id, &q).map(Json)
}

async fn get_breaths(State(s): Shared, Path(id): Path<String>) -> Result<Json<Vec<ApiWindowView>>, ApiError> {
    s.window_views(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown record id {id:?}")))
}

async fn get_explanation(
    State(s): Shared,
    Path(id): Path<String>,
) -> Result<Json<ApiExplanationView>, ApiError> {
    s.explanation_view(&id).map(Json)
}

async fn post_classify(State(s): Shared, body: Bytes) -> Result<Json<ClassifyResponse>, ApiError> {
    let request: ClassifyRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("body must be {{\"window\": [[..], [..]]}}: {e}")))?;
    s.classify_raw(&request).map(Json)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/records", get(list_records))
        .route("/api/records/{id}", get(get_record))
        .route("/api/records/{id}/breaths", get(get_breaths))
        .route("/api/breaths/{id}/explanation", get(get_explanation))
        .route("/api/classify", post(post_classify))
        .with_state(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_ranges_are_kept_whole() {
        let pts = decimate(&[1.0, 2.0, 3.0], 10, 5);
        assert_eq!(pts.iter().map(|p| p.idx).collect::<Vec<_>>(), vec![10, 11, 12]);
    }

    #[test]
    fn decimation_keeps_bucket_extremes() {
        let values: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64).collect();
        let pts = decimate(&values, 0, 100);
        assert!(pts.len() <= 100);
        assert!(pts.windows(2).all(|w| w[0].idx < w[1].idx));
        for b in 0..50 {
            let (lo, hi) = (b * 1000 / 50, (b + 1) * 1000 / 50);
            let bucket: Vec<&Point> = pts.iter().filter(|p| (lo..hi).contains(&p.idx)).collect();
            let max = values[lo..hi].iter().cloned().fold(f64::MIN, f64::max);
            let min = values[lo..hi].iter().cloned().fold(f64::MAX, f64::min);
            assert!(bucket.iter().any(|p| p.value == max));
            assert!(bucket.iter().any(|p| p.value == min));
        }
    }
}
