//! Independent reference implementations shared by the integration tests and
//! the acceptance harness. Everything here is written as plain nested loops
//! over explicit indices and never calls the library kernels it checks.

#![allow(dead_code)]

use breathlens::evaluation::ConfusionMatrix;
use breathlens::nn::{softmax_cross_entropy, Mode, Tensor};
use breathlens::waveform_io::BreathClass;
use breathlens::xcm::{ForwardCache, Overrides, XcmConfig, XcmModel};
use rand::Rng;

pub fn random_vec<R: Rng>(rng: &mut R, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, random_vec(rng, len, scale)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `x: [N, C, T]`, `w: [O, C, K]`, zero padding of `K / 2` on both sides.
pub fn naive_conv1d(x: &[f64], shape: [usize; 3], w: &[f64], b: &[f64], o: usize, k: usize) -> Vec<f64> {
    let [n, c, t] = shape;
    let half = (k / 2) as isize;
    let mut out = vec![0.0; n * o * t];
    for bn in 0..n {
        for oc in 0..o {
            for tt in 0..t {
                let mut acc = b[oc];
                for ic in 0..c {
                    for j in 0..k {
                        let src = tt as isize + j as isize - half;
                        if src >= 0 && (src as usize) < t {
                            acc += w[(oc * c + ic) * k + j] * x[(bn * c + ic) * t + src as usize];
                        }
                    }
                }
                out[(bn * o + oc) * t + tt] = acc;
            }
        }
    }
    out
}

/// `x: [N, C, D, T]`, `w: [O, C, K, 1]`; rows `D` never mix.
pub fn naive_conv2d(x: &[f64], shape: [usize; 4], w: &[f64], b: &[f64], o: usize, k: usize) -> Vec<f64> {
    let [n, c, d, t] = shape;
    let half = (k / 2) as isize;
    let mut out = vec![0.0; n * o * d * t];
    for bn in 0..n {
        for oc in 0..o {
            for r in 0..d {
                for tt in 0..t {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for j in 0..k {
                            let src = tt as isize + j as isize - half;
                            if src >= 0 && (src as usize) < t {
                                acc += w[(oc * c + ic) * k + j]
                                    * x[((bn * c + ic) * d + r) * t + src as usize];
                            }
                        }
                    }
                    out[((bn * o + oc) * d + r) * t + tt] = acc;
                }
            }
        }
    }
    out
}

/// Per-channel batch norm over `[N, C, S]` (S = product of trailing axes).
/// Train mode uses the biased batch variance; infer mode the given stats.
#[allow(clippy::too_many_arguments)]
pub fn naive_batchnorm(
    x: &[f64],
    n: usize,
    c: usize,
    s: usize,
    gamma: &[f64],
    beta: &[f64],
    running: Option<(&[f64], &[f64])>,
    eps: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let (mean, var) = match running {
            Some((m, v)) => (m[ch], v[ch]),
            None => {
                let mut sum = 0.0;
                for b in 0..n {
                    for i in 0..s {
                        sum += x[(b * c + ch) * s + i];
                    }
                }
                let mean = sum / (n * s) as f64;
                let mut sq = 0.0;
                for b in 0..n {
                    for i in 0..s {
                        let dv = x[(b * c + ch) * s + i] - mean;
                        sq += dv * dv;
                    }
                }
                (mean, sq / (n * s) as f64)
            }
        };
        for b in 0..n {
            for i in 0..s {
                let idx = (b * c + ch) * s + i;
                out[idx] = gamma[ch] * (x[idx] - mean) / (var + eps).sqrt() + beta[ch];
            }
        }
    }
    out
}

pub fn naive_gap(x: &[f64], n: usize, c: usize, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for b in 0..n {
        for ch in 0..c {
            let mut sum = 0.0;
            for i in 0..s {
                sum += x[(b * c + ch) * s + i];
            }
            out[b * c + ch] = sum / s as f64;
        }
    }
    out
}

/// `w: [out, in]`.
pub fn naive_dense(x: &[f64], n: usize, inputs: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let outputs = b.len();
    let mut out = vec![0.0; n * outputs];
    for bn in 0..n {
        for o in 0..outputs {
            let mut acc = b[o];
            for i in 0..inputs {
                acc += w[o * inputs + i] * x[bn * inputs + i];
            }
            out[bn * outputs + o] = acc;
        }
    }
    out
}

/// Brute-force crossing scan written against the definition.
pub fn brute_crossings(flow: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 1;
    while i < flow.len() {
        let before_negative = flow[i - 1] < 0.0;
        let now_non_negative = !(flow[i] < 0.0);
        if before_negative && now_non_negative {
            out.push(i);
        }
        i += 1;
    }
    out
}

/// Random flow with runs of exact zeros, sign flips and tiny magnitudes.
pub fn random_flow<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(len);
    while v.len() < len {
        let run = rng.random_range(1..6);
        let value = match rng.random_range(0..6) {
            0 => 0.0,
            1 => -0.0,
            2 => rng.random_range(-1e-300..1e-300),
            3 => -rng.random_range(0.0..5.0),
            _ => rng.random_range(-5.0..5.0),
        };
        for _ in 0..run {
            v.push(value);
        }
    }
    v.truncate(len);
    v
}

/// Counts TP/FN/FP/TN by walking every individual window of the matrix.
pub struct BruteMetrics {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

pub fn brute_metrics(cm: &ConfusionMatrix, class: BreathClass) -> BruteMetrics {
    let mut m = BruteMetrics {
        tp: 0,
        fn_: 0,
        fp: 0,
        tn: 0,
    };
    for truth in BreathClass::ALL {
        for predicted in BreathClass::ALL {
            for _ in 0..cm.counts[truth.index()][predicted.index()] {
                match (truth == class, predicted == class) {
                    (true, true) => m.tp += 1,
                    (true, false) => m.fn_ += 1,
                    (false, true) => m.fp += 1,
                    (false, false) => m.tn += 1,
                }
            }
        }
    }
    m
}

/// Small random architecture with non-zero biases and BN shifts, so that no
/// ReLU input sits exactly on the kink at zero.
pub fn random_small_model<R: Rng>(rng: &mut R, max_t: usize, max_filters: usize) -> XcmModel {
    random_model(rng, max_t, 1..=max_filters)
}

pub fn random_model<R: Rng>(
    rng: &mut R,
    max_t: usize,
    filters: std::ops::RangeInclusive<usize>,
) -> XcmModel {
    let t = rng.random_range(6..=max_t);
    let kernel = 2 * rng.random_range(0..=(t.min(9) - 1) / 2) + 1;
    let cfg = XcmConfig {
        window_len: t,
        kernel_samples: kernel,
        filters_2d: rng.random_range(filters.clone()),
        filters_1d: rng.random_range(filters.clone()),
        filters_final: rng.random_range(filters),
        ..XcmConfig::default()
    };
    let mut m = XcmModel::build(&cfg, rng.random()).unwrap();
    for tensor in [
        &mut m.var_conv.bias,
        &mut m.joint_conv.bias,
        &mut m.fuse_conv.bias,
        &mut m.var_merge.bias,
        &mut m.joint_merge.bias,
        &mut m.head.bias,
        &mut m.var_bn.beta,
        &mut m.joint_bn.beta,
        &mut m.fuse_bn.beta,
    ] {
        for v in tensor.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    for bn in [&mut m.var_bn, &mut m.joint_bn, &mut m.fuse_bn] {
        for v in bn.gamma.data_mut() {
            *v = rng.random_range(0.5..1.5);
        }
        for v in bn.running_mean.data_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
        for v in bn.running_var.data_mut() {
            *v = rng.random_range(0.5..2.0);
        }
    }
    m
}

pub fn random_input<R: Rng>(rng: &mut R, model: &XcmModel, n: usize) -> Tensor {
    let c = &model.config;
    random_tensor(rng, &[n, c.n_variables, c.window_len], 2.0)
}

fn mean_loss(model: &XcmModel, x: &Tensor, targets: &[usize]) -> (f64, ForwardCache) {
    let cache = model.forward(x, Mode::Train).unwrap();
    let n = targets.len() as f64;
    let loss = targets
        .iter()
        .enumerate()
        .map(|(i, &y)| softmax_cross_entropy(cache.logits_of(i), y).0)
        .sum::<f64>()
        / n;
    (loss, cache)
}

/// Sign pattern of every ReLU input in the network.
fn relu_pattern(cache: &ForwardCache) -> Vec<bool> {
    [
        &cache.var_bn_out,
        &cache.var_merge_pre,
        &cache.joint_bn_out,
        &cache.joint_merge_pre,
        &cache.fuse_bn_out,
    ]
    .iter()
    .flat_map(|t| t.data().iter().map(|&v| v > 0.0))
    .collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose +/- perturbation moved some ReLU input across zero;
    /// the central difference is not a derivative estimate there.
    pub kinks: usize,
}

/// Relative error with a floor on the denominator, so coordinates whose true
/// gradient is ~0 are judged on absolute error.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub const GRAD_FLOOR: f64 = 1e-6;

/// Mean cross-entropy over a train-mode batch, every learnable coordinate
/// checked against a central difference.
pub fn gradient_check(model: &XcmModel, x: &Tensor, targets: &[usize], eps: f64) -> GradCheck {
    let n = targets.len();
    let classes = model.config.n_classes;
    let (_, cache) = mean_loss(model, x, targets);
    let base_pattern = relu_pattern(&cache);
    let mut seed = Tensor::zeros(&[n, classes]);
    for (i, &y) in targets.iter().enumerate() {
        let (_, p) = softmax_cross_entropy(cache.logits_of(i), y);
        for k in 0..classes {
            let onehot = if k == y { 1.0 } else { 0.0 };
            seed.data_mut()[i * classes + k] = (p[k] - onehot) / n as f64;
        }
    }
    let grads = model.backward(&cache, &seed).unwrap();
    let mut out = GradCheck::default();
    for (pi, g) in grads.params.iter().enumerate() {
        for j in 0..g.len() {
            let mut plus = model.clone();
            plus.learnables_mut()[pi].data_mut()[j] += eps;
            let mut minus = model.clone();
            minus.learnables_mut()[pi].data_mut()[j] -= eps;
            let (lp, cp) = mean_loss(&plus, x, targets);
            let (lm, cm) = mean_loss(&minus, x, targets);
            if relu_pattern(&cp) != base_pattern || relu_pattern(&cm) != base_pattern {
                out.kinks += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * eps);
            out.max_rel_error = out.max_rel_error.max(rel_error(g.data()[j], fd, GRAD_FLOOR));
            out.checked += 1;
        }
    }
    out
}

/// Finite-difference Grad-CAM on a single window: alpha_k is the mean central
/// difference of the target logit over every position of channel k, and the
/// map is rebuilt from those alphas and the cached activations.
pub struct FdGradCam {
    pub alphas: Vec<f64>,
    pub raw: Vec<f64>,
}

pub fn fd_grad_cam(
    model: &XcmModel,
    x: &Tensor,
    target: usize,
    combined: bool,
    eps: f64,
) -> FdGradCam {
    let cache = model.forward(x, Mode::Infer).unwrap();
    let base = if combined { cache.fuse_act.clone() } else { cache.var_act.clone() };
    let channels = base.dim(1);
    let positions = base.len() / channels;
    let logit = |a: Tensor| {
        let o = if combined {
            Overrides {
                variable_wise: None,
                combined: Some(a),
            }
        } else {
            Overrides {
                variable_wise: Some(a),
                combined: None,
            }
        };
        model.forward_with_overrides(x, Mode::Infer, &o).unwrap().logits_of(0)[target]
    };
    let mut alphas = vec![0.0; channels];
    for (k, alpha) in alphas.iter_mut().enumerate() {
        let mut sum = 0.0;
        for p in 0..positions {
            let mut plus = base.clone();
            plus.data_mut()[k * positions + p] += eps;
            let mut minus = base.clone();
            minus.data_mut()[k * positions + p] -= eps;
            sum += (logit(plus) - logit(minus)) / (2.0 * eps);
        }
        *alpha = sum / positions as f64;
    }
    let mut raw = vec![0.0; positions];
    for (p, r) in raw.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..channels {
            acc += alphas[k] * base.data()[k * positions + p];
        }
        *r = if acc > 0.0 { acc } else { 0.0 };
    }
    FdGradCam { alphas, raw }
}
