//! Confusion matrices, one-vs-rest class metrics and accuracy reports.
//!
//! Per-class metrics treat every other class, artefacts included, as the
//! negative set. "Excluding artefacts" drops windows whose true label is
//! Artefact; a non-artefact window predicted as Artefact still counts as an
//! error.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform_io::BreathClass;

const K: usize = BreathClass::COUNT;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("no windows to evaluate")]
    EmptyInput,
}

/// Rows are true classes, columns predicted classes, both in class-code order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: BreathClass, predicted: BreathClass) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (c, v) in row.iter_mut().zip(o) {
                *c += v;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: BreathClass) -> u64 {
        self.counts[class.index()].iter().sum()
    }

    pub fn column_sum(&self, class: BreathClass) -> u64 {
        self.counts.iter().map(|r| r[class.index()]).sum()
    }

    /// `trace / total`, or `None` when empty.
    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.trace(), self.total())
    }
}

pub fn confusion(pairs: &[(BreathClass, BreathClass)]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for &(t, p) in pairs {
        cm.add(t, p);
    }
    cm
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// One-vs-rest metrics. Ratios with a zero denominator are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: BreathClass,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: f64,
    pub support: u64,
    pub true_positives: u64,
    pub false_negatives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
}

pub fn class_metrics(cm: &ConfusionMatrix, class: BreathClass) -> Result<ClassMetrics, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let support = cm.row_sum(class);
    let tp = cm.counts[class.index()][class.index()];
    let fn_ = support - tp;
    let fp = cm.column_sum(class) - tp;
    let tn = total - support - fp;
    Ok(ClassMetrics {
        class,
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        accuracy: (tp + tn) as f64 / total as f64,
        support,
        true_positives: tp,
        false_negatives: fn_,
        false_positives: fp,
        true_negatives: tn,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySplit {
    pub including_artefacts: f64,
    /// `None` when every window is an artefact.
    pub excluding_artefacts: Option<f64>,
    pub windows: u64,
    pub non_artefact_windows: u64,
}

/// Accuracy over all windows and over windows whose true label is not Artefact.
pub fn accuracy_split(pairs: &[(BreathClass, BreathClass)]) -> Result<AccuracySplit, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let correct = pairs.iter().filter(|(t, p)| t == p).count() as u64;
    let kept: Vec<_> = pairs
        .iter()
        .filter(|(t, _)| *t != BreathClass::Artefact)
        .collect();
    let kept_correct = kept.iter().filter(|(t, p)| t == p).count() as u64;
    Ok(AccuracySplit {
        including_artefacts: correct as f64 / pairs.len() as f64,
        excluding_artefacts: ratio(kept_correct, kept.len() as u64),
        windows: pairs.len() as u64,
        non_artefact_windows: kept.len() as u64,
    })
}

/// Accuracy split of one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordAccuracy {
    pub record_id: String,
    pub split: AccuracySplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub confusion: ConfusionMatrix,
    pub classes: Vec<ClassMetrics>,
    pub split: AccuracySplit,
    pub records: Vec<RecordAccuracy>,
}

impl EvaluationReport {
    /// Builds a report from `(record_id, true, predicted)` triples. Records
    /// are listed in id order.
    pub fn from_predictions(
        predictions: &[(String, BreathClass, BreathClass)],
    ) -> Result<Self, EvalError> {
        let pairs: Vec<_> = predictions.iter().map(|(_, t, p)| (*t, *p)).collect();
        let split = accuracy_split(&pairs)?;
        let confusion = confusion(&pairs);
        let classes = BreathClass::ALL
            .iter()
            .map(|&c| class_metrics(&confusion, c))
            .collect::<Result<_, _>>()?;
        let mut ids: Vec<&str> = predictions.iter().map(|(r, _, _)| r.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        let records = ids
            .into_iter()
            .map(|id| {
                let own: Vec<_> = predictions
                    .iter()
                    .filter(|(r, _, _)| r == id)
                    .map(|(_, t, p)| (*t, *p))
                    .collect();
                Ok(RecordAccuracy {
                    record_id: id.to_string(),
                    split: accuracy_split(&own)?,
                })
            })
            .collect::<Result<_, EvalError>>()?;
        Ok(Self {
            confusion,
            classes,
            split,
            records,
        })
    }

    pub fn to_text(&self) -> String {
        report(&self.confusion, &self.split, &self.records)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

/// Percentage with two decimals, or `n/a` when undefined.
pub fn percent(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}%", 100.0 * v),
        None => "n/a".into(),
    }
}

/// Plain-text report: per-class metric rows, the artefact accuracy split and
/// per-record rows.
pub fn report(cm: &ConfusionMatrix, split: &AccuracySplit, records: &[RecordAccuracy]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Per-class metrics (sensitivity / specificity / accuracy)");
    for class in BreathClass::ALL {
        match class_metrics(cm, class) {
            Ok(m) => {
                let _ = writeln!(
                    out,
                    "{}: {} / {} / {} (support {})",
                    class.title(),
                    percent(m.sensitivity),
                    percent(m.specificity),
                    percent(Some(m.accuracy)),
                    m.support
                );
            }
            Err(_) => {
                let _ = writeln!(out, "{}: n/a / n/a / n/a (support 0)", class.title());
            }
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Accuracy (including artefacts / excluding artefacts)");
    let _ = writeln!(
        out,
        "Overall: {} / {} ({} windows, {} non-artefact)",
        percent(Some(split.including_artefacts)),
        percent(split.excluding_artefacts),
        split.windows,
        split.non_artefact_windows
    );
    for r in records {
        let _ = writeln!(
            out,
            "{}: {} / {} ({} windows)",
            r.record_id,
            percent(Some(r.split.including_artefacts)),
            percent(r.split.excluding_artefacts),
            r.split.windows
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Notes: metrics are one-vs-rest with artefact windows among the negatives; \
         n/a marks a zero denominator; excluding artefacts drops windows by true label only."
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use BreathClass::*;

    /// Test-set shape with a single unclassifiable breath that is missed and
    /// eight other windows wrongly predicted as unclassifiable.
    fn unclassifiable_case() -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::default();
        cm.counts[Unclassifiable.index()][Spontaneous.index()] = 1;
        cm.counts[Spontaneous.index()][Spontaneous.index()] = 150;
        cm.counts[Mechanical.index()][Mechanical.index()] = 100;
        cm.counts[Triggered.index()][Triggered.index()] = 80;
        cm.counts[Artefact.index()][Artefact.index()] = 25;
        cm.counts[Triggered.index()][Unclassifiable.index()] = 5;
        cm.counts[Mechanical.index()][Unclassifiable.index()] = 3;
        cm
    }

    #[test]
    fn empty_and_direct_tally() {
        assert_eq!(confusion(&[]).total(), 0);
        let cm = confusion(&[(Spontaneous, Spontaneous), (Mechanical, Triggered)]);
        assert_eq!(cm.counts[1][1], 1);
        assert_eq!(cm.counts[2][3], 1);
        assert_eq!(cm.total(), 2);
    }

    #[test]
    fn perfect_diagonal() {
        let pairs: Vec<_> = BreathClass::ALL.iter().map(|&c| (c, c)).collect();
        let cm = confusion(&pairs);
        for c in BreathClass::ALL {
            let m = class_metrics(&cm, c).unwrap();
            assert_eq!((m.sensitivity, m.specificity, m.accuracy), (Some(1.0), Some(1.0), 1.0));
        }
        let text = report(&cm, &accuracy_split(&pairs).unwrap(), &[]);
        assert!(text.contains("Mechanical: 100.00% / 100.00% / 100.00%"));
    }

    #[test]
    fn unclassifiable_row() {
        let cm = unclassifiable_case();
        assert_eq!(cm.total(), 364);
        let m = class_metrics(&cm, Unclassifiable).unwrap();
        assert_eq!(m.support, 1);
        assert_eq!(m.false_positives, 8);
        assert_eq!(m.true_negatives + m.false_positives, 363);
        assert_eq!(m.sensitivity, Some(0.0));
        assert_eq!(m.specificity, Some(355.0 / 363.0));
        assert_eq!(m.accuracy, 355.0 / 364.0);
        let text = report(&cm, &accuracy_split(&[(Spontaneous, Spontaneous)]).unwrap(), &[]);
        assert!(text.contains("Unclassifiable: 0.00% / 97.80% / 97.53%"), "{text}");
    }

    #[test]
    fn zero_support_is_undefined() {
        let cm = confusion(&[(Spontaneous, Spontaneous), (Spontaneous, Mechanical)]);
        let m = class_metrics(&cm, Triggered).unwrap();
        assert_eq!(m.sensitivity, None);
        assert_eq!(m.specificity, Some(1.0));
        assert_eq!(class_metrics(&ConfusionMatrix::default(), Triggered), Err(EvalError::EmptyMatrix));
    }

    #[test]
    fn artefact_split() {
        let mut pairs = Vec::new();
        for i in 0..20 {
            pairs.push((Artefact, if i < 10 { Spontaneous } else { Artefact }));
        }
        for _ in 0..80 {
            pairs.push((Mechanical, Mechanical));
        }
        let s = accuracy_split(&pairs).unwrap();
        assert_eq!(s.including_artefacts, 0.9);
        assert_eq!(s.excluding_artefacts, Some(1.0));

        let only: Vec<_> = (0..5).map(|_| (Artefact, Artefact)).collect();
        let s = accuracy_split(&only).unwrap();
        assert_eq!((s.including_artefacts, s.excluding_artefacts), (1.0, None));
        assert_eq!(accuracy_split(&[]), Err(EvalError::EmptyInput));

        let clean = [(Spontaneous, Spontaneous), (Triggered, Mechanical)];
        let s = accuracy_split(&clean).unwrap();
        assert_eq!(Some(s.including_artefacts), s.excluding_artefacts);
    }

    #[test]
    fn report_is_stable_and_parseable() {
        let preds = vec![
            ("b".to_string(), Spontaneous, Spontaneous),
            ("a".to_string(), Mechanical, Triggered),
            ("a".to_string(), Artefact, Artefact),
            ("b".to_string(), Triggered, Triggered),
        ];
        let r = EvaluationReport::from_predictions(&preds).unwrap();
        assert_eq!(r.to_text(), EvaluationReport::from_predictions(&preds).unwrap().to_text());
        assert_eq!(r.records[0].record_id, "a");
        let json: EvaluationReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json, r);
        let line = r.to_text().lines().find(|l| l.starts_with("Triggered:")).unwrap().to_string();
        let values: Vec<f64> = line["Triggered:".len()..]
            .split('/')
            .map(|c| c.trim().split('%').next().unwrap().trim().parse().unwrap())
            .collect();
        let m = &r.classes[Triggered.index()];
        assert!((values[0] - 100.0 * m.sensitivity.unwrap()).abs() <= 0.005);
        assert!((values[1] - 100.0 * m.specificity.unwrap()).abs() <= 0.005);
    }
}
