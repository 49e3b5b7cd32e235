//! Mini-batch Adam training with k-fold cross-validation.
//!
//! Each fold trains a fresh model on the other `k - 1` folds and records the
//! held-out accuracy after every epoch. The fold with the best held-out
//! accuracy (ties to the lowest index) fixes the epoch count; the final model
//! is then retrained from scratch on the whole training partition for that
//! many epochs and scored on the validation partition.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_input, Classification, XcmConfig, XcmError, XcmModel};
use crate::nn::{adam_step, softmax_cross_entropy, AdamConfig, AdamState, Mode, Tensor};
use crate::waveform_io::{BreathClass, LabeledWindow, SplitDataset};

const EVAL_BATCH: usize = 64;

/// splitmix64 finalizer over `(seed, stream, index)`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_FOLDS: u64 = 1;
const STREAM_FOLD_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStage {
    Fold(usize),
    Final,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainEvent {
    pub stage: TrainStage,
    /// 1-based.
    pub epoch: usize,
    pub epochs: usize,
    pub loss: f64,
    pub monitor_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
    /// Accuracy on the monitor set after each epoch (empty without one).
    pub monitor_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: XcmConfig,
    pub train_windows: usize,
    pub validation_windows: usize,
    pub fold_accuracy: Vec<f64>,
    pub fold_best_epoch: Vec<usize>,
    pub fold_loss_history: Vec<Vec<f64>>,
    pub fold_accuracy_history: Vec<Vec<f64>>,
    pub selected_fold: usize,
    /// Loss history of the selected fold; one entry per configured epoch.
    pub loss_history: Vec<f64>,
    /// Epochs used to retrain the final model on the full training partition.
    pub final_epochs: usize,
    pub final_loss_history: Vec<f64>,
    pub validation_accuracy: Option<f64>,
    /// Classes absent from the training partition.
    pub missing_classes: Vec<BreathClass>,
    pub class_weights: Option<Vec<f64>>,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Inverse-frequency weights `N / (K * n_c)` over the classes present.
pub fn class_weights(labels: impl IntoIterator<Item = BreathClass>) -> Vec<f64> {
    let mut counts = [0usize; BreathClass::COUNT];
    for l in labels {
        counts[l.index()] += 1;
    }
    let total: usize = counts.iter().sum();
    let present = counts.iter().filter(|&&c| c > 0).count().max(1);
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                total as f64 / (present * c) as f64
            }
        })
        .collect()
}

/// Inference-mode classification of every window.
pub fn classify_all(model: &XcmModel, windows: &[&LabeledWindow]) -> Result<Vec<Classification>, XcmError> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(EVAL_BATCH) {
        let refs: Vec<_> = chunk.iter().map(|w| &w.window).collect();
        let cache = model.forward(&batch_input(&refs)?, Mode::Infer)?;
        out.extend((0..chunk.len()).map(|i| cache.classification(i)));
    }
    Ok(out)
}

pub fn accuracy(model: &XcmModel, windows: &[&LabeledWindow]) -> Result<f64, XcmError> {
    if windows.is_empty() {
        return Ok(0.0);
    }
    let predictions = classify_all(model, windows)?;
    let correct = predictions
        .iter()
        .zip(windows)
        .filter(|(p, w)| p.label == w.label)
        .count();
    Ok(correct as f64 / windows.len() as f64)
}

/// Trains `model` in place for `epochs` epochs with a seeded shuffle per epoch.
pub fn fit(
    model: &mut XcmModel,
    windows: &[&LabeledWindow],
    epochs: usize,
    seed: u64,
    weights: Option<&[f64]>,
    monitor: Option<&[&LabeledWindow]>,
    on_epoch: &mut dyn FnMut(usize, f64, Option<f64>),
) -> Result<FitOutcome, XcmError> {
    if windows.is_empty() {
        return Err(XcmError::EmptyDataset);
    }
    let adam = AdamConfig {
        lr: model.config.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(model.learnables());
    let batch = model.config.batch_size;
    let n_classes = model.config.n_classes;
    let mut outcome = FitOutcome::default();
    let mut order: Vec<usize> = (0..windows.len()).collect();

    for epoch in 0..epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SHUFFLE, epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let refs: Vec<_> = chunk.iter().map(|&i| &windows[i].window).collect();
            let input = batch_input(&refs)?;
            let cache = model.forward(&input, Mode::Train)?;
            let n = chunk.len();
            let mut d_logits = Tensor::zeros(&[n, n_classes]);
            let mut batch_loss = 0.0;
            for (b, &i) in chunk.iter().enumerate() {
                let target = windows[i].label.index();
                let w = weights.map_or(1.0, |ws| ws[target]);
                let (loss, p) = softmax_cross_entropy(cache.logits_of(b), target);
                batch_loss += w * loss;
                for (k, pk) in p.iter().enumerate() {
                    let onehot = if k == target { 1.0 } else { 0.0 };
                    d_logits.data_mut()[b * n_classes + k] = w * (pk - onehot) / n as f64;
                }
            }
            let grads = model.backward(&cache, &d_logits)?;
            adam_step(&mut model.learnables_mut(), &grads.params, &mut state, &adam)?;
            model.update_running_stats(&cache);
            epoch_loss += batch_loss;
        }
        let mean_loss = epoch_loss / windows.len() as f64;
        outcome.loss_history.push(mean_loss);
        let acc = match monitor {
            Some(m) if !m.is_empty() => Some(accuracy(model, m)?),
            _ => None,
        };
        if let Some(a) = acc {
            outcome.monitor_accuracy.push(a);
        }
        on_epoch(epoch + 1, mean_loss, acc);
    }
    Ok(outcome)
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn train(dataset: &SplitDataset, config: &XcmConfig) -> Result<(XcmModel, TrainReport), XcmError> {
    train_with_observer(dataset, config, |_| {})
}

pub fn train_with_observer(
    dataset: &SplitDataset,
    config: &XcmConfig,
    mut observer: impl FnMut(&TrainEvent),
) -> Result<(XcmModel, TrainReport), XcmError> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(XcmError::EmptyDataset);
    }
    let train: Vec<&LabeledWindow> = dataset.train.iter().collect();
    let validation: Vec<&LabeledWindow> = dataset.validation.iter().collect();

    let mut present = [false; BreathClass::COUNT];
    for w in &train {
        present[w.label.index()] = true;
    }
    let missing_classes: Vec<BreathClass> = BreathClass::ALL
        .into_iter()
        .filter(|c| !present[c.index()])
        .collect();
    let weights = config
        .class_weighting
        .then(|| class_weights(train.iter().map(|w| w.label)));

    let mut report = TrainReport {
        config: config.clone(),
        train_windows: train.len(),
        validation_windows: validation.len(),
        fold_accuracy: Vec::new(),
        fold_best_epoch: Vec::new(),
        fold_loss_history: Vec::new(),
        fold_accuracy_history: Vec::new(),
        selected_fold: 0,
        loss_history: Vec::new(),
        final_epochs: 0,
        final_loss_history: Vec::new(),
        validation_accuracy: None,
        missing_classes,
        class_weights: weights.clone(),
    };

    let mut model = XcmModel::build(config, config.seed)?;
    if config.epochs == 0 {
        return Ok((model, report));
    }
    if train.len() < config.folds {
        return Err(XcmError::InvalidConfig(format!(
            "{} training windows cannot fill {} folds",
            train.len(),
            config.folds
        )));
    }

    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_FOLDS, 0)));
    let mut fold_of = vec![0usize; train.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % config.folds;
    }

    for fold in 0..config.folds {
        let fit_set: Vec<&LabeledWindow> = (0..train.len())
            .filter(|&i| fold_of[i] != fold)
            .map(|i| train[i])
            .collect();
        let held: Vec<&LabeledWindow> = (0..train.len())
            .filter(|&i| fold_of[i] == fold)
            .map(|i| train[i])
            .collect();
        let mut fold_model = XcmModel::build(config, derive_seed(config.seed, STREAM_FOLD_INIT, fold as u64))?;
        let outcome = fit(
            &mut fold_model,
            &fit_set,
            config.epochs,
            derive_seed(config.seed, STREAM_SHUFFLE, fold as u64 + 1),
            weights.as_deref(),
            Some(&held),
            &mut |epoch, loss, acc| {
                observer(&TrainEvent {
                    stage: TrainStage::Fold(fold),
                    epoch,
                    epochs: config.epochs,
                    loss,
                    monitor_accuracy: acc,
                })
            },
        )?;
        let best = argmax_first(&outcome.monitor_accuracy);
        report.fold_accuracy.push(outcome.monitor_accuracy[best]);
        report.fold_best_epoch.push(best + 1);
        report.fold_loss_history.push(outcome.loss_history);
        report.fold_accuracy_history.push(outcome.monitor_accuracy);
    }

    report.selected_fold = argmax_first(&report.fold_accuracy);
    report.loss_history = report.fold_loss_history[report.selected_fold].clone();
    report.final_epochs = report.fold_best_epoch[report.selected_fold];

    let outcome = fit(
        &mut model,
        &train,
        report.final_epochs,
        derive_seed(config.seed, STREAM_SHUFFLE, 0),
        weights.as_deref(),
        None,
        &mut |epoch, loss, _| {
            observer(&TrainEvent {
                stage: TrainStage::Final,
                epoch,
                epochs: report.final_epochs,
                loss,
                monitor_accuracy: None,
            })
        },
    )?;
    report.final_loss_history = outcome.loss_history;
    model.snap_to_f32();
    if !validation.is_empty() {
        report.validation_accuracy = Some(accuracy(&model, &validation)?);
    }
    Ok((model, report))
}
