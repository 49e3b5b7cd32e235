//! Data directory layout: `<id>.csv` records with optional `<id>.labels.csv`
//! annotation files next to them.

use std::fs;
use std::path::{Path, PathBuf};

use breathlens::waveform_io::{
    load_annotations, load_record, AnnotationSet, WaveformError, WaveformRecord,
};

pub const ANNOTATION_SUFFIX: &str = ".labels.csv";
pub const RECORD_SUFFIX: &str = ".csv";

#[derive(Debug, Clone)]
pub struct DataEntry {
    pub record: WaveformRecord,
    pub annotations: Option<AnnotationSet>,
}

pub fn record_path(dir: &Path, record_id: &str) -> PathBuf {
    dir.join(format!("{record_id}{RECORD_SUFFIX}"))
}

pub fn annotation_path(dir: &Path, record_id: &str) -> PathBuf {
    dir.join(format!("{record_id}{ANNOTATION_SUFFIX}"))
}

/// Record ids found in `dir`, sorted.
pub fn record_ids(dir: &Path) -> Result<Vec<String>, WaveformError> {
    let entries = fs::read_dir(dir).map_err(|e| WaveformError::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| WaveformError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(ANNOTATION_SUFFIX) || !entry.path().is_file() {
            continue;
        }
        if let Some(id) = name.strip_suffix(RECORD_SUFFIX) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Loads every record of `dir` in id order, with its annotations if present.
pub fn load_dir(dir: &Path, sample_rate_hz: f64) -> Result<Vec<DataEntry>, WaveformError> {
    let ids = record_ids(dir)?;
    if ids.is_empty() {
        return Err(WaveformError::InvalidRecord(format!(
            "{}: no record CSV files",
            dir.display()
        )));
    }
    ids.iter()
        .map(|id| {
            let record = load_record(&record_path(dir, id), sample_rate_hz)?;
            let labels = annotation_path(dir, id);
            let annotations = if labels.is_file() {
                Some(load_annotations(&labels, &record)?)
            } else {
                None
            };
            Ok(DataEntry {
                record,
                annotations,
            })
        })
        .collect()
}
