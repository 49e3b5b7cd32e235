use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{XcmConfig, XcmError};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, softmax, BatchNorm,
    BatchNormCache, Conv1d, Conv2d, Dense, Mode, NnError, Tensor,
};
use crate::segmentation::SampleWindow;
use crate::waveform_io::BreathClass;

/// The two layers Grad-CAM is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerTag {
    /// First 2D convolution block: per-variable feature maps `[F2, D, T]`.
    VariableWise,
    /// Final 1D convolution block: fused feature maps `[Ff, T]`.
    Combined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XcmModel {
    pub config: XcmConfig,
    pub var_conv: Conv2d,
    pub var_bn: BatchNorm,
    pub var_merge: Conv2d,
    pub joint_conv: Conv1d,
    pub joint_bn: BatchNorm,
    pub joint_merge: Conv1d,
    pub fuse_conv: Conv1d,
    pub fuse_bn: BatchNorm,
    pub head: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: BreathClass,
    pub confidence: f64,
    pub distribution: Vec<f64>,
}

impl Classification {
    /// Argmax with ties going to the lowest class index.
    pub fn from_probabilities(distribution: Vec<f64>) -> Self {
        let mut best = 0;
        for (i, &p) in distribution.iter().enumerate() {
            if p > distribution[best] {
                best = i;
            }
        }
        Self {
            label: BreathClass::ALL[best],
            confidence: distribution[best],
            distribution,
        }
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        Self::from_probabilities(softmax(logits))
    }
}

/// Replacement post-ReLU activations for the two explanation layers.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub variable_wise: Option<Tensor>,
    pub combined: Option<Tensor>,
}

/// Every intermediate needed for backprop and Grad-CAM, in layer order.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub mode: Mode,
    /// `[N, D, T]`
    pub input: Tensor,
    pub var_bn_out: Tensor,
    pub var_bn: BatchNormCache,
    /// Post-ReLU maps of the variable-wise explanation layer, `[N, F2, D, T]`.
    pub var_act: Tensor,
    pub var_merge_pre: Tensor,
    pub joint_bn_out: Tensor,
    pub joint_bn: BatchNormCache,
    pub joint_act: Tensor,
    pub joint_merge_pre: Tensor,
    /// `[N, D + 1, T]`
    pub concat: Tensor,
    pub fuse_bn_out: Tensor,
    pub fuse_bn: BatchNormCache,
    /// Post-ReLU maps of the combined explanation layer, `[N, Ff, T]`.
    pub fuse_act: Tensor,
    pub pooled: Tensor,
    /// `[N, n_classes]`
    pub logits: Tensor,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.dim(0)
    }

    pub fn logits_of(&self, sample: usize) -> &[f64] {
        let k = self.logits.dim(1);
        &self.logits.data()[sample * k..(sample + 1) * k]
    }

    pub fn classification(&self, sample: usize) -> Classification {
        Classification::from_logits(self.logits_of(sample))
    }

    pub fn activation(&self, tag: LayerTag) -> &Tensor {
        match tag {
            LayerTag::VariableWise => &self.var_act,
            LayerTag::Combined => &self.fuse_act,
        }
    }
}

/// Parameter gradients (same order as [`XcmModel::learnables`]) plus the
/// gradients with respect to both explanation-layer activations.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    pub var_act: Tensor,
    pub fuse_act: Tensor,
}

/// Stacks windows into an `[N, D, T]` tensor.
pub fn batch_input(windows: &[&SampleWindow]) -> Result<Tensor, NnError> {
    let first = windows.first().ok_or_else(|| NnError::ShapeMismatch {
        expected: "at least one window".into(),
        found: "empty batch".into(),
    })?;
    let t = first.window_len();
    let d = first.values().len() / t;
    let mut data = Vec::with_capacity(windows.len() * d * t);
    for w in windows {
        if w.window_len() != t {
            return Err(NnError::ShapeMismatch {
                expected: format!("window length {t}"),
                found: format!("{}", w.window_len()),
            });
        }
        data.extend_from_slice(w.values());
    }
    Tensor::from_vec(&[windows.len(), d, t], data)
}

impl XcmModel {
    /// He-uniform initialization from `seed`; BN starts at identity.
    pub fn build(config: &XcmConfig, seed: u64) -> Result<Self, XcmError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, k) = (config.n_variables, config.kernel_samples);
        let (f2, f1, ff) = (config.filters_2d, config.filters_1d, config.filters_final);
        Ok(Self {
            config: config.clone(),
            var_conv: Conv2d::init(1, f2, k, &mut rng),
            var_bn: BatchNorm::new(f2),
            var_merge: Conv2d::init(f2, 1, 1, &mut rng),
            joint_conv: Conv1d::init(d, f1, k, &mut rng),
            joint_bn: BatchNorm::new(f1),
            joint_merge: Conv1d::init(f1, 1, 1, &mut rng),
            fuse_conv: Conv1d::init(d + 1, ff, k, &mut rng),
            fuse_bn: BatchNorm::new(ff),
            head: Dense::init(ff, config.n_classes, &mut rng),
        })
    }

    /// Trainable tensors in a fixed canonical order.
    pub fn learnables(&self) -> Vec<&Tensor> {
        vec![
            &self.var_conv.weight,
            &self.var_conv.bias,
            &self.var_bn.gamma,
            &self.var_bn.beta,
            &self.var_merge.weight,
            &self.var_merge.bias,
            &self.joint_conv.weight,
            &self.joint_conv.bias,
            &self.joint_bn.gamma,
            &self.joint_bn.beta,
            &self.joint_merge.weight,
            &self.joint_merge.bias,
            &self.fuse_conv.weight,
            &self.fuse_conv.bias,
            &self.fuse_bn.gamma,
            &self.fuse_bn.beta,
            &self.head.weight,
            &self.head.bias,
        ]
    }

    pub fn learnables_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.var_conv.weight,
            &mut self.var_conv.bias,
            &mut self.var_bn.gamma,
            &mut self.var_bn.beta,
            &mut self.var_merge.weight,
            &mut self.var_merge.bias,
            &mut self.joint_conv.weight,
            &mut self.joint_conv.bias,
            &mut self.joint_bn.gamma,
            &mut self.joint_bn.beta,
            &mut self.joint_merge.weight,
            &mut self.joint_merge.bias,
            &mut self.fuse_conv.weight,
            &mut self.fuse_conv.bias,
            &mut self.fuse_bn.gamma,
            &mut self.fuse_bn.beta,
            &mut self.head.weight,
            &mut self.head.bias,
        ]
    }

    /// Learnables followed by the BN running statistics: everything persisted.
    pub fn all_tensors(&self) -> Vec<&Tensor> {
        let mut all = self.learnables();
        for bn in [&self.var_bn, &self.joint_bn, &self.fuse_bn] {
            all.push(&bn.running_mean);
            all.push(&bn.running_var);
        }
        all
    }

    pub fn all_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut all = vec![
            &mut self.var_conv.weight,
            &mut self.var_conv.bias,
            &mut self.var_bn.gamma,
            &mut self.var_bn.beta,
            &mut self.var_merge.weight,
            &mut self.var_merge.bias,
            &mut self.joint_conv.weight,
            &mut self.joint_conv.bias,
            &mut self.joint_bn.gamma,
            &mut self.joint_bn.beta,
            &mut self.joint_merge.weight,
            &mut self.joint_merge.bias,
            &mut self.fuse_conv.weight,
            &mut self.fuse_conv.bias,
            &mut self.fuse_bn.gamma,
            &mut self.fuse_bn.beta,
            &mut self.head.weight,
            &mut self.head.bias,
        ];
        all.push(&mut self.var_bn.running_mean);
        all.push(&mut self.var_bn.running_var);
        all.push(&mut self.joint_bn.running_mean);
        all.push(&mut self.joint_bn.running_var);
        all.push(&mut self.fuse_bn.running_mean);
        all.push(&mut self.fuse_bn.running_var);
        all
    }

    pub fn parameter_count(&self) -> usize {
        self.learnables().iter().map(|t| t.len()).sum()
    }

    /// Rounds every stored value to the nearest `f32`, matching what the
    /// model file can represent.
    pub fn snap_to_f32(&mut self) {
        for t in self.all_tensors_mut() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<(), NnError> {
        let (d, t) = (self.config.n_variables, self.config.window_len);
        if input.shape().len() != 3 || input.dim(1) != d || input.dim(2) != t {
            return Err(NnError::ShapeMismatch {
                expected: format!("[N, {d}, {t}]"),
                found: format!("{:?}", input.shape()),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<ForwardCache, XcmError> {
        self.forward_with_overrides(input, mode, &Overrides::default())
    }

    /// Forward pass where either explanation layer's post-ReLU activation can
    /// be replaced; everything downstream is recomputed from the replacement.
    pub fn forward_with_overrides(
        &self,
        input: &Tensor,
        mode: Mode,
        overrides: &Overrides,
    ) -> Result<ForwardCache, XcmError> {
        self.check_input(input)?;
        let (n, d, t) = (input.dim(0), input.dim(1), input.dim(2));

        let x4 = input.clone().reshape(&[n, 1, d, t])?;
        let var_pre = self.var_conv.forward(&x4)?;
        let (var_bn_out, var_bn) = self.var_bn.forward(&var_pre, mode)?;
        let var_act = match &overrides.variable_wise {
            Some(a) => {
                a.expect_shape(var_bn_out.shape(), "variable-wise override")?;
                a.clone()
            }
            None => relu(&var_bn_out),
        };
        let var_merge_pre = self.var_merge.forward(&var_act)?;
        let var_out = relu(&var_merge_pre);

        let joint_pre = self.joint_conv.forward(input)?;
        let (joint_bn_out, joint_bn) = self.joint_bn.forward(&joint_pre, mode)?;
        let joint_act = relu(&joint_bn_out);
        let joint_merge_pre = self.joint_merge.forward(&joint_act)?;
        let joint_out = relu(&joint_merge_pre);

        let mut concat = Tensor::zeros(&[n, d + 1, t]);
        for b in 0..n {
            let dst = &mut concat.data_mut()[b * (d + 1) * t..(b + 1) * (d + 1) * t];
            dst[..d * t].copy_from_slice(&var_out.data()[b * d * t..(b + 1) * d * t]);
            dst[d * t..].copy_from_slice(&joint_out.data()[b * t..(b + 1) * t]);
        }

        let fuse_pre = self.fuse_conv.forward(&concat)?;
        let (fuse_bn_out, fuse_bn) = self.fuse_bn.forward(&fuse_pre, mode)?;
        let fuse_act = match &overrides.combined {
            Some(a) => {
                a.expect_shape(fuse_bn_out.shape(), "combined override")?;
                a.clone()
            }
            None => relu(&fuse_bn_out),
        };
        let pooled = global_avg_pool(&fuse_act)?;
        let logits = self.head.forward(&pooled)?;

        Ok(ForwardCache {
            mode,
            input: input.clone(),
            var_bn_out,
            var_bn,
            var_act,
            var_merge_pre,
            joint_bn_out,
            joint_bn,
            joint_act,
            joint_merge_pre,
            concat,
            fuse_bn_out,
            fuse_bn,
            fuse_act,
            pooled,
            logits,
        })
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<(), XcmError> {
        let n = cache.batch_size();
        let c = &self.config;
        let (d, t) = (c.n_variables, c.window_len);
        let expected: [(&Tensor, Vec<usize>); 4] = [
            (&cache.input, vec![n, d, t]),
            (&cache.var_act, vec![n, c.filters_2d, d, t]),
            (&cache.fuse_act, vec![n, c.filters_final, t]),
            (&cache.logits, vec![n, c.n_classes]),
        ];
        for (tensor, shape) in expected {
            if tensor.shape() != shape.as_slice() {
                return Err(NnError::CacheMismatch(format!(
                    "cached tensor {:?} does not fit model shape {:?}",
                    tensor.shape(),
                    shape
                ))
                .into());
            }
        }
        Ok(())
    }

    /// Exact reverse-mode gradients for a given `dLoss/dlogits`.
    pub fn backward(&self, cache: &ForwardCache, logit_grad: &Tensor) -> Result<Gradients, XcmError> {
        self.check_cache(cache)?;
        logit_grad.expect_shape(cache.logits.shape(), "logit gradient")?;
        let (n, d, t) = (cache.input.dim(0), cache.input.dim(1), cache.input.dim(2));

        let head = self.head.backward(&cache.pooled, logit_grad)?;
        let d_fuse_act = global_avg_pool_backward(cache.fuse_act.shape(), &head.input)?;
        let d_fuse_bn_out = relu_backward(&cache.fuse_bn_out, &d_fuse_act)?;
        let (d_fuse_pre, g_fuse_gamma, g_fuse_beta) = self.fuse_bn.backward(&cache.fuse_bn, &d_fuse_bn_out)?;
        let fuse = self.fuse_conv.backward(&cache.concat, &d_fuse_pre, true)?;
        let d_concat = fuse.input.expect("input gradient requested");

        let mut d_var_out = Tensor::zeros(&[n, 1, d, t]);
        let mut d_joint_out = Tensor::zeros(&[n, 1, t]);
        for b in 0..n {
            let src = &d_concat.data()[b * (d + 1) * t..(b + 1) * (d + 1) * t];
            d_var_out.data_mut()[b * d * t..(b + 1) * d * t].copy_from_slice(&src[..d * t]);
            d_joint_out.data_mut()[b * t..(b + 1) * t].copy_from_slice(&src[d * t..]);
        }

        let d_joint_merge_pre = relu_backward(&cache.joint_merge_pre, &d_joint_out)?;
        let joint_merge = self.joint_merge.backward(&cache.joint_act, &d_joint_merge_pre, true)?;
        let d_joint_act = joint_merge.input.expect("input gradient requested");
        let d_joint_bn_out = relu_backward(&cache.joint_bn_out, &d_joint_act)?;
        let (d_joint_pre, g_joint_gamma, g_joint_beta) = self.joint_bn.backward(&cache.joint_bn, &d_joint_bn_out)?;
        let joint = self.joint_conv.backward(&cache.input, &d_joint_pre, false)?;

        let d_var_merge_pre = relu_backward(&cache.var_merge_pre, &d_var_out)?;
        let var_merge = self.var_merge.backward(&cache.var_act, &d_var_merge_pre, true)?;
        let d_var_act = var_merge.input.expect("input gradient requested");
        let d_var_bn_out = relu_backward(&cache.var_bn_out, &d_var_act)?;
        let (d_var_pre, g_var_gamma, g_var_beta) = self.var_bn.backward(&cache.var_bn, &d_var_bn_out)?;
        let x4 = cache.input.clone().reshape(&[n, 1, d, t])?;
        let var = self.var_conv.backward(&x4, &d_var_pre, false)?;

        Ok(Gradients {
            params: vec![
                var.weight,
                var.bias,
                g_var_gamma,
                g_var_beta,
                var_merge.weight,
                var_merge.bias,
                joint.weight,
                joint.bias,
                g_joint_gamma,
                g_joint_beta,
                joint_merge.weight,
                joint_merge.bias,
                fuse.weight,
                fuse.bias,
                g_fuse_gamma,
                g_fuse_beta,
                head.weight,
                head.bias,
            ],
            var_act: d_var_act,
            fuse_act: d_fuse_act,
        })
    }

    /// Folds the batch statistics of a train-mode cache into every BN layer.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        self.var_bn.update_running_stats(&cache.var_bn);
        self.joint_bn.update_running_stats(&cache.joint_bn);
        self.fuse_bn.update_running_stats(&cache.fuse_bn);
    }

    fn window_tensor(&self, window: &SampleWindow) -> Result<Tensor, XcmError> {
        let (d, t) = (self.config.n_variables, self.config.window_len);
        if window.window_len() != t || window.values().len() != d * t {
            return Err(NnError::ShapeMismatch {
                expected: format!("{d} x {t} window"),
                found: format!("{} x {}", window.values().len() / window.window_len(), window.window_len()),
            }
            .into());
        }
        Ok(Tensor::from_vec(&[1, d, t], window.values().to_vec())?)
    }

    /// Inference-mode forward of one window, keeping the cache for Grad-CAM.
    pub fn forward_with_cache(&self, window: &SampleWindow) -> Result<(Classification, ForwardCache), XcmError> {
        let cache = self.forward(&self.window_tensor(window)?, Mode::Infer)?;
        Ok((cache.classification(0), cache))
    }

    pub fn classify(&self, window: &SampleWindow) -> Result<Classification, XcmError> {
        Ok(self.forward_with_cache(window)?.0)
    }

    /// Inference-mode logits for a single window with optional activation overrides.
    pub fn logits_with_overrides(&self, window: &SampleWindow, overrides: &Overrides) -> Result<Vec<f64>, XcmError> {
        let cache = self.forward_with_overrides(&self.window_tensor(window)?, Mode::Infer, overrides)?;
        Ok(cache.logits.into_data())
    }
}
