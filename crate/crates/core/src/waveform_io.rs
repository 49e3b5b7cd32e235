//! On-disk formats for flow/pressure records, breath annotations and
//! train/validation/test split manifests.
//!
//! Record CSV:     `timestamp_ms,flow,pressure` (one sample per row)
//! Annotation CSV: `start_idx,end_idx,label` (lowercase class names)
//! Manifest:       `record_id,partition` (one row per record)

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmentation::{fixed_length, BreathSegment, SampleWindow};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 125.0;
pub const RECORD_HEADER: &str = "timestamp_ms,flow,pressure";
pub const ANNOTATION_HEADER: &str = "start_idx,end_idx,label";

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("file contains no samples")]
    EmptyFile,
    #[error("line {line}: timestamp {found} does not increase past {previous}")]
    UnsortedTimestamps { line: usize, previous: i64, found: i64 },
    #[error("line {line}: indices {start}..{end} outside record of length {len}")]
    OutOfRangeIndex {
        line: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("line {line}: entry {start}..{end} overlaps the previous entry")]
    OverlappingEntries { line: usize, start: usize, end: usize },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("need more than {needed} records for the requested split, have {have}")]
    InsufficientRecords { have: usize, needed: usize },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

impl WaveformError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Annotated breath class. The integer codes are part of the model file
/// format and must never be renumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BreathClass {
    Artefact = 0,
    Spontaneous = 1,
    Mechanical = 2,
    Triggered = 3,
    Unclassifiable = 4,
}

impl BreathClass {
    pub const COUNT: usize = 5;
    pub const ALL: [BreathClass; 5] = [
        BreathClass::Artefact,
        BreathClass::Spontaneous,
        BreathClass::Mechanical,
        BreathClass::Triggered,
        BreathClass::Unclassifiable,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BreathClass::Artefact => "artefact",
            BreathClass::Spontaneous => "spontaneous",
            BreathClass::Mechanical => "mechanical",
            BreathClass::Triggered => "triggered",
            BreathClass::Unclassifiable => "unclassifiable",
        }
    }

    /// Capitalized name used in reports.
    pub fn title(self) -> &'static str {
        match self {
            BreathClass::Artefact => "Artefact",
            BreathClass::Spontaneous => "Spontaneous",
            BreathClass::Mechanical => "Mechanical",
            BreathClass::Triggered => "Triggered",
            BreathClass::Unclassifiable => "Unclassifiable",
        }
    }
}

impl fmt::Display for BreathClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BreathClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// One patient's flow (mL/s) and pressure (mbar) streams.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformRecord {
    pub record_id: String,
    pub sample_rate_hz: f64,
    pub start_time_ms: i64,
    pub timestamps_ms: Vec<i64>,
    pub flow: Vec<f64>,
    pub pressure: Vec<f64>,
}

impl WaveformRecord {
    /// Builds a record with evenly spaced timestamps starting at `start_time_ms`.
    pub fn new(
        record_id: impl Into<String>,
        sample_rate_hz: f64,
        start_time_ms: i64,
        flow: Vec<f64>,
        pressure: Vec<f64>,
    ) -> Result<Self, WaveformError> {
        let timestamps_ms = (0..flow.len())
            .map(|i| start_time_ms + (i as f64 * 1000.0 / sample_rate_hz).round() as i64)
            .collect();
        let record = Self {
            record_id: record_id.into(),
            sample_rate_hz,
            start_time_ms,
            timestamps_ms,
            flow,
            pressure,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), WaveformError> {
        if !(self.sample_rate_hz > 0.0) {
            return Err(WaveformError::InvalidRecord(format!(
                "sample rate {} must be positive",
                self.sample_rate_hz
            )));
        }
        if self.flow.is_empty() {
            return Err(WaveformError::EmptyFile);
        }
        if self.flow.len() != self.pressure.len() || self.flow.len() != self.timestamps_ms.len() {
            return Err(WaveformError::InvalidRecord(format!(
                "flow/pressure/timestamp lengths differ: {}/{}/{}",
                self.flow.len(),
                self.pressure.len(),
                self.timestamps_ms.len()
            )));
        }
        if let Some(i) = self.timestamps_ms.windows(2).position(|w| w[1] <= w[0]) {
            return Err(WaveformError::UnsortedTimestamps {
                line: i + 3,
                previous: self.timestamps_ms[i],
                found: self.timestamps_ms[i + 1],
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.flow.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flow.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 24);
        out.push_str(RECORD_HEADER);
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{}\n",
                self.timestamps_ms[i], self.flow[i], self.pressure[i]
            ));
        }
        out
    }
}

/// Record id used for a CSV path: the file stem.
pub fn record_id_for(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read(path: &Path) -> Result<String, WaveformError> {
    fs::read_to_string(path).map_err(|e| WaveformError::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<(), WaveformError> {
    let mut f = fs::File::create(path).map_err(|e| WaveformError::io(path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| WaveformError::io(path, e))
}

pub fn load_record(path: &Path, sample_rate_hz: f64) -> Result<WaveformRecord, WaveformError> {
    parse_record(&read(path)?, &record_id_for(path), sample_rate_hz)
}

pub fn write_record(record: &WaveformRecord, path: &Path) -> Result<(), WaveformError> {
    write(path, &record.to_csv())
}

fn cells(line: &str, lineno: usize, expected: usize) -> Result<Vec<&str>, WaveformError> {
    let cells: Vec<&str> = line.split(',').map(str::trim).collect();
    if cells.len() != expected {
        return Err(WaveformError::MalformedRow {
            line: lineno,
            reason: format!("expected {expected} columns, found {}", cells.len()),
        });
    }
    Ok(cells)
}

fn number<T: FromStr>(cell: &str, lineno: usize, column: &str) -> Result<T, WaveformError> {
    cell.parse().map_err(|_| WaveformError::MalformedRow {
        line: lineno,
        reason: format!("{column} {cell:?} is not a number"),
    })
}

/// Parses record CSV text. Blank lines are ignored; the header is required.
pub fn parse_record(
    text: &str,
    record_id: &str,
    sample_rate_hz: f64,
) -> Result<WaveformRecord, WaveformError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == RECORD_HEADER => {}
        Some((i, header)) => {
            return Err(WaveformError::MalformedRow {
                line: i + 1,
                reason: format!("expected header {RECORD_HEADER:?}, found {header:?}"),
            })
        }
        None => return Err(WaveformError::EmptyFile),
    }
    let (mut ts, mut flow, mut pressure) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines {
        let lineno = i + 1;
        let c = cells(line, lineno, 3)?;
        let t: i64 = number(c[0], lineno, "timestamp")?;
        let f: f64 = number(c[1], lineno, "flow")?;
        let p: f64 = number(c[2], lineno, "pressure")?;
        if !f.is_finite() || !p.is_finite() {
            return Err(WaveformError::MalformedRow {
                line: lineno,
                reason: "non-finite sample".into(),
            });
        }
        if let Some(&prev) = ts.last() {
            if t <= prev {
                return Err(WaveformError::UnsortedTimestamps {
                    line: lineno,
                    previous: prev,
                    found: t,
                });
            }
        }
        ts.push(t);
        flow.push(f);
        pressure.push(p);
    }
    if ts.is_empty() {
        return Err(WaveformError::EmptyFile);
    }
    let record = WaveformRecord {
        record_id: record_id.to_string(),
        sample_rate_hz,
        start_time_ms: ts[0],
        timestamps_ms: ts,
        flow,
        pressure,
    };
    record.validate()?;
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnotationEntry {
    pub start_idx: usize,
    pub end_idx: usize,
    pub label: BreathClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub record_id: String,
    entries: Vec<AnnotationEntry>,
}

impl AnnotationSet {
    /// Validates bounds, sorts by start index and rejects overlaps.
    pub fn new(
        record_id: impl Into<String>,
        mut entries: Vec<AnnotationEntry>,
        record_len: usize,
    ) -> Result<Self, WaveformError> {
        for (i, e) in entries.iter().enumerate() {
            if e.start_idx >= e.end_idx || e.end_idx > record_len {
                return Err(WaveformError::OutOfRangeIndex {
                    line: i + 2,
                    start: e.start_idx,
                    end: e.end_idx,
                    len: record_len,
                });
            }
        }
        entries.sort_by_key(|e| e.start_idx);
        if let Some(i) = entries.windows(2).position(|w| w[1].start_idx < w[0].end_idx) {
            let e = entries[i + 1];
            return Err(WaveformError::OverlappingEntries {
                line: i + 3,
                start: e.start_idx,
                end: e.end_idx,
            });
        }
        Ok(Self {
            record_id: record_id.into(),
            entries,
        })
    }

    pub fn entries(&self) -> &[AnnotationEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Label of the entry spanning exactly `start..end`, if any.
    pub fn label_for(&self, start: usize, end: usize) -> Option<BreathClass> {
        self.entries
            .binary_search_by_key(&start, |e| e.start_idx)
            .ok()
            .map(|i| self.entries[i])
            .filter(|e| e.end_idx == end)
            .map(|e| e.label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(ANNOTATION_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.start_idx, e.end_idx, e.label));
        }
        out
    }
}

pub fn load_annotations(path: &Path, record: &WaveformRecord) -> Result<AnnotationSet, WaveformError> {
    parse_annotations(&read(path)?, record)
}

pub fn write_annotations(set: &AnnotationSet, path: &Path) -> Result<(), WaveformError> {
    write(path, &set.to_csv())
}

pub fn parse_annotations(text: &str, record: &WaveformRecord) -> Result<AnnotationSet, WaveformError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == ANNOTATION_HEADER => {}
        Some((i, header)) => {
            return Err(WaveformError::MalformedRow {
                line: i + 1,
                reason: format!("expected header {ANNOTATION_HEADER:?}, found {header:?}"),
            })
        }
        None => return Err(WaveformError::EmptyFile),
    }
    let mut entries: Vec<(usize, AnnotationEntry)> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let c = cells(line, lineno, 3)?;
        let start_idx: usize = number(c[0], lineno, "start_idx")?;
        let end_idx: usize = number(c[1], lineno, "end_idx")?;
        let label = c[2].parse().map_err(|label| WaveformError::UnknownLabel {
            line: lineno,
            label,
        })?;
        if start_idx >= end_idx || end_idx > record.len() {
            return Err(WaveformError::OutOfRangeIndex {
                line: lineno,
                start: start_idx,
                end: end_idx,
                len: record.len(),
            });
        }
        entries.push((
            lineno,
            AnnotationEntry {
                start_idx,
                end_idx,
                label,
            },
        ));
    }
    entries.sort_by_key(|(_, e)| e.start_idx);
    if let Some(w) = entries.windows(2).find(|w| w[1].1.start_idx < w[0].1.end_idx) {
        let (line, e) = w[1];
        return Err(WaveformError::OverlappingEntries {
            line,
            start: e.start_idx,
            end: e.end_idx,
        });
    }
    Ok(AnnotationSet {
        record_id: record.record_id.clone(),
        entries: entries.into_iter().map(|(_, e)| e).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Partition::Train),
            "validation" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub window: SampleWindow,
    pub label: BreathClass,
}

/// Record-to-partition assignment, ordered by record id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitManifest(pub BTreeMap<String, Partition>);

impl SplitManifest {
    pub fn records_in(&self, partition: Partition) -> Vec<&str> {
        self.0
            .iter()
            .filter(|(_, &p)| p == partition)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("record_id,partition\n");
        for (id, p) in &self.0 {
            out.push_str(&format!("{id},{}\n", p.name()));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, WaveformError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let c = cells(line, i + 1, 2)?;
            let p = c[1].parse().map_err(|p| WaveformError::MalformedRow {
                line: i + 1,
                reason: format!("unknown partition {p:?}"),
            })?;
            map.insert(c[0].to_string(), p);
        }
        Ok(Self(map))
    }

    pub fn save(&self, path: &Path) -> Result<(), WaveformError> {
        write(path, &self.to_csv())
    }

    pub fn load(path: &Path) -> Result<Self, WaveformError> {
        Self::parse(&read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<LabeledWindow>,
    pub validation: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    pub manifest: SplitManifest,
}

/// Converts every annotated entry of a record into a fixed-length window.
pub fn labeled_windows(
    record: &WaveformRecord,
    annotations: &AnnotationSet,
    window_len: usize,
) -> Vec<LabeledWindow> {
    annotations
        .entries()
        .iter()
        .filter(|e| e.end_idx - e.start_idx >= 2)
        .map(|e| {
            let segment = BreathSegment::from_record(record, e.start_idx, e.end_idx, Some(e.label));
            LabeledWindow {
                window: fixed_length(&segment, window_len),
                label: e.label,
            }
        })
        .collect()
}

/// Assigns whole records to test, validation and train partitions.
///
/// Records are sorted by id before a seeded shuffle, so the assignment
/// depends only on the record set and the seed. The first `n_test` shuffled
/// records become test, the next `n_validation` validation, the rest train.
pub fn assign_partitions(
    record_ids: &[&str],
    seed: u64,
    n_validation: usize,
    n_test: usize,
) -> Result<SplitManifest, WaveformError> {
    if n_validation + n_test >= record_ids.len() {
        return Err(WaveformError::InsufficientRecords {
            have: record_ids.len(),
            needed: n_validation + n_test,
        });
    }
    let mut ids: Vec<&str> = record_ids.to_vec();
    ids.sort_unstable();
    let unique: HashSet<&str> = ids.iter().copied().collect();
    if unique.len() != ids.len() {
        return Err(WaveformError::InvalidRecord("duplicate record id".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let map = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let p = if i < n_test {
                Partition::Test
            } else if i < n_test + n_validation {
                Partition::Validation
            } else {
                Partition::Train
            };
            (id.to_string(), p)
        })
        .collect();
    Ok(SplitManifest(map))
}

pub fn split_dataset(
    records: &[(WaveformRecord, AnnotationSet)],
    seed: u64,
    n_validation_records: usize,
    n_test_records: usize,
    window_len: usize,
) -> Result<SplitDataset, WaveformError> {
    let ids: Vec<&str> = records.iter().map(|(r, _)| r.record_id.as_str()).collect();
    let manifest = assign_partitions(&ids, seed, n_validation_records, n_test_records)?;
    let mut order: Vec<&(WaveformRecord, AnnotationSet)> = records.iter().collect();
    order.sort_by(|a, b| a.0.record_id.cmp(&b.0.record_id));
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (record, ann) in order {
        let windows = labeled_windows(record, ann, window_len);
        match manifest.0[&record.record_id] {
            Partition::Train => train.extend(windows),
            Partition::Validation => validation.extend(windows),
            Partition::Test => test.extend(windows),
        }
    }
    Ok(SplitDataset {
        train,
        validation,
        test,
        manifest,
    })
}
