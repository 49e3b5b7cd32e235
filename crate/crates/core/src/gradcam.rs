//! Grad-CAM heatmaps at the two explanation layers of the XCM model.
//!
//! For a layer with post-ReLU maps `A^k` and target logit `y_c`:
//!
//! ```text
//! alpha_k = mean_p dy_c / dA^k_p
//! L_p     = max(0, sum_k alpha_k * A^k_p)
//! ```
//!
//! Positions `p` are time steps for the combined layer and (variable, time)
//! pairs for the variable-wise layer. Both layers keep the input length, so
//! the maps align sample-for-sample with the window without upsampling.

use serde::{Deserialize, Serialize};

use crate::nn::{Mode, NnError, Tensor};
use crate::segmentation::SampleWindow;
use crate::waveform_io::BreathClass;
use crate::xcm::{Classification, ForwardCache, XcmError, XcmModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub target_class: BreathClass,
    /// Combined-layer map scaled to `[0, 1]`, length `T`.
    pub combined: Vec<f64>,
    /// Variable-wise map scaled to `[0, 1]` jointly over both rows, `D x T`.
    /// It reflects the 2D branch only and need not match what drove the
    /// final decision, so displays may treat it as optional.
    pub per_variable: Vec<Vec<f64>>,
    pub raw_combined: Vec<f64>,
    pub raw_per_variable: Vec<Vec<f64>>,
    pub alphas_combined: Vec<f64>,
    pub alphas_per_variable: Vec<f64>,
}

/// Channel weights and raw map for one sample.
///
/// `activation` and `gradient` hold `K` channels of `positions` values each,
/// channel-major.
pub fn grad_cam(activation: &[f64], gradient: &[f64], channels: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(activation.len(), gradient.len());
    assert!(channels > 0 && activation.len().is_multiple_of(channels));
    let positions = activation.len() / channels;
    let alphas: Vec<f64> = gradient
        .chunks_exact(positions)
        .map(|g| g.iter().sum::<f64>() / positions as f64)
        .collect();
    let mut raw = vec![0.0; positions];
    for (a, &alpha) in activation.chunks_exact(positions).zip(&alphas) {
        for (r, &v) in raw.iter_mut().zip(a) {
            *r += alpha * v;
        }
    }
    for r in &mut raw {
        *r = r.max(0.0);
    }
    (alphas, raw)
}

/// Divides by the maximum; an all-zero map stays all zeros.
pub fn normalize(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        raw.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; raw.len()]
    }
}

fn sample_slice(t: &Tensor, sample: usize) -> &[f64] {
    let per = t.len() / t.dim(0);
    &t.data()[sample * per..(sample + 1) * per]
}

/// Explains `target` for the single window held in `cache`.
pub fn explain(
    model: &XcmModel,
    cache: &ForwardCache,
    target: BreathClass,
) -> Result<Explanation, XcmError> {
    if cache.batch_size() != 1 {
        return Err(NnError::CacheMismatch(format!(
            "expected a single-window cache, found batch of {}",
            cache.batch_size()
        ))
        .into());
    }
    explain_sample(model, cache, 0, target)
}

/// Explains `target` for one sample of an inference-mode batch cache. Train
/// mode is rejected for batches because batch statistics couple samples.
pub fn explain_sample(
    model: &XcmModel,
    cache: &ForwardCache,
    sample: usize,
    target: BreathClass,
) -> Result<Explanation, XcmError> {
    let n = cache.batch_size();
    if sample >= n {
        return Err(NnError::CacheMismatch(format!("sample {sample} outside batch of {n}")).into());
    }
    if n > 1 && cache.mode == Mode::Train {
        return Err(NnError::CacheMismatch("train-mode batch cache".into()).into());
    }
    let classes = cache.logits.dim(1);
    if target.index() >= classes {
        return Err(NnError::CacheMismatch(format!("no logit for class {target}")).into());
    }
    let mut seed = Tensor::zeros(cache.logits.shape());
    seed.data_mut()[sample * classes + target.index()] = 1.0;
    let grads = model.backward(cache, &seed)?;

    let cfg = &model.config;
    let (d, t) = (cfg.n_variables, cfg.window_len);
    let (alphas_per_variable, raw_var) = grad_cam(
        sample_slice(&cache.var_act, sample),
        sample_slice(&grads.var_act, sample),
        cfg.filters_2d,
    );
    let (alphas_combined, raw_combined) = grad_cam(
        sample_slice(&cache.fuse_act, sample),
        sample_slice(&grads.fuse_act, sample),
        cfg.filters_final,
    );
    let norm_var = normalize(&raw_var);
    let rows = |v: &[f64]| v.chunks_exact(t).map(<[f64]>::to_vec).collect::<Vec<_>>();
    debug_assert_eq!(raw_var.len(), d * t);
    Ok(Explanation {
        target_class: target,
        combined: normalize(&raw_combined),
        per_variable: rows(&norm_var),
        raw_combined,
        raw_per_variable: rows(&raw_var),
        alphas_combined,
        alphas_per_variable,
    })
}

/// Classifies a window and explains the predicted class.
pub fn explain_for_prediction(
    model: &XcmModel,
    window: &SampleWindow,
) -> Result<(Classification, Explanation), XcmError> {
    let (classification, cache) = model.forward_with_cache(window)?;
    let explanation = explain(model, &cache, classification.label)?;
    Ok((classification, explanation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xcm::{Overrides, XcmConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_model(seed: u64) -> XcmModel {
        let cfg = XcmConfig {
            window_len: 16,
            kernel_samples: 5,
            filters_2d: 3,
            filters_1d: 2,
            filters_final: 4,
            ..XcmConfig::default()
        };
        let mut m = XcmModel::build(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for t in [&mut m.var_merge.bias, &mut m.joint_merge.bias, &mut m.var_bn.beta] {
            for v in t.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        m
    }

    fn window(seed: u64, t: usize) -> SampleWindow {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..t).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        SampleWindow::from_rows(&rows).unwrap()
    }

    #[test]
    fn negative_weights_give_zero_map() {
        let a = [1.0, 2.0, 0.0, 3.0, 0.5, 1.0];
        let g = [-1.0, -2.0, -0.5, -0.1, -0.3, -4.0];
        let (alphas, raw) = grad_cam(&a, &g, 2);
        assert!(alphas.iter().all(|&x| x <= 0.0));
        assert_eq!(raw, vec![0.0; 3]);
        assert_eq!(normalize(&raw), vec![0.0; 3]);
    }

    #[test]
    fn single_map_passes_through() {
        let a = [0.0, 2.0, 1.0, 4.0];
        let (alphas, raw) = grad_cam(&a, &[1.0; 4], 1);
        assert_eq!(alphas, vec![1.0]);
        assert_eq!(raw, a.to_vec());
        assert_eq!(normalize(&raw), vec![0.0, 0.5, 0.25, 1.0]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let raw = [0.3, 0.0, 1.7, 0.2];
        let once = normalize(&raw);
        assert_eq!(normalize(&once), once);
    }

    #[test]
    fn maps_align_with_input() {
        let m = small_model(1);
        let (c, e) = explain_for_prediction(&m, &window(2, 16)).unwrap();
        assert_eq!(e.target_class, c.label);
        assert_eq!(e.combined.len(), 16);
        assert_eq!(e.per_variable.len(), 2);
        assert!(e.per_variable.iter().all(|r| r.len() == 16));
        assert!(e.raw_combined.iter().all(|&v| v >= 0.0));
        assert!(e.combined.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn combined_alphas_match_head_weights() {
        // GAP + dense is linear, so alpha_k = W[c, k] / T exactly.
        let m = small_model(3);
        let (_, cache) = m.forward_with_cache(&window(4, 16)).unwrap();
        for class in BreathClass::ALL {
            let e = explain(&m, &cache, class).unwrap();
            for (k, &a) in e.alphas_combined.iter().enumerate() {
                let w = m.head.weight.data()[class.index() * 4 + k];
                assert!((a - w / 16.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn variable_alphas_match_finite_differences() {
        let m = small_model(5);
        let w = window(6, 16);
        let (_, cache) = m.forward_with_cache(&w).unwrap();
        let target = BreathClass::Triggered;
        let e = explain(&m, &cache, target).unwrap();
        let base = cache.var_act.clone();
        let eps = 1e-6;
        let positions = 2 * 16;
        for k in 0..3 {
            let mut sum = 0.0;
            for p in 0..positions {
                let logit = |delta: f64| {
                    let mut a = base.clone();
                    a.data_mut()[k * positions + p] += delta;
                    let o = Overrides {
                        variable_wise: Some(a),
                        combined: None,
                    };
                    m.logits_with_overrides(&w, &o).unwrap()[target.index()]
                };
                sum += (logit(eps) - logit(-eps)) / (2.0 * eps);
            }
            let fd = sum / positions as f64;
            let a = e.alphas_per_variable[k];
            assert!((fd - a).abs() <= 1e-6 * fd.abs().max(1e-3), "{k}: {fd} vs {a}");
        }
    }

    #[test]
    fn padding_window_is_valid() {
        let m = small_model(7);
        let zeros = SampleWindow::from_rows(&[vec![0.0; 16], vec![0.0; 16]]).unwrap();
        let (_, e) = explain_for_prediction(&m, &zeros).unwrap();
        assert!(e.combined.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let m = small_model(8);
        assert!(explain_for_prediction(&m, &window(1, 12)).is_err());
    }
}
