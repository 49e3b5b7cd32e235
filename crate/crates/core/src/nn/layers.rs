use rand::Rng;

use super::{dot, LayerKind, NnError, Tensor};

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient of `relu` given its *input*. The derivative at exactly zero is 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
    grad_out.expect_shape(input.shape(), "relu gradient")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Mean over every axis after the channel axis: `[N, C, ...] -> [N, C]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor, NnError> {
    if input.shape().len() < 3 {
        return Err(NnError::ShapeMismatch {
            expected: "[N, C, ...] with at least one spatial axis".into(),
            found: format!("{:?}", input.shape()),
        });
    }
    let (n, c) = (input.dim(0), input.dim(1));
    let s: usize = input.shape()[2..].iter().product();
    let data = input
        .data()
        .chunks_exact(s)
        .map(|plane| plane.iter().sum::<f64>() / s as f64)
        .collect();
    Tensor::from_vec(&[n, c], data)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor, NnError> {
    grad_out.expect_shape(&input_shape[..2], "pooled gradient")?;
    let s: usize = input_shape[2..].iter().product();
    let mut out = Tensor::zeros(input_shape);
    for (plane, &g) in out.data_mut().chunks_exact_mut(s).zip(grad_out.data()) {
        plane.fill(g / s as f64);
    }
    Ok(out)
}

/// Affine map `[N, in] -> [N, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor::from_vec(&[outputs, inputs], w).expect("dense weight shape"),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::Dense
    }

    pub fn inputs(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn outputs(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        input.expect_rank(2, "dense input [N, in]")?;
        if input.dim(1) != self.inputs() {
            return Err(NnError::ShapeMismatch {
                expected: format!("[N, {}]", self.inputs()),
                found: format!("{:?}", input.shape()),
            });
        }
        let (n, k, m) = (input.dim(0), self.inputs(), self.outputs());
        let mut out = Tensor::zeros(&[n, m]);
        for b in 0..n {
            let x = &input.data()[b * k..][..k];
            for o in 0..m {
                out.data_mut()[b * m + o] =
                    self.bias.data()[o] + dot(&self.weight.data()[o * k..][..k], x);
            }
        }
        Ok(out)
    }

    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<DenseGrads, NnError> {
        let (n, k, m) = (input.dim(0), self.inputs(), self.outputs());
        grad_out.expect_shape(&[n, m], "dense output gradient")?;
        let mut gi = Tensor::zeros(input.shape());
        let mut gw = Tensor::zeros(self.weight.shape());
        let mut gb = Tensor::zeros(self.bias.shape());
        for b in 0..n {
            let x = &input.data()[b * k..][..k];
            for o in 0..m {
                let g = grad_out.data()[b * m + o];
                gb.data_mut()[o] += g;
                for i in 0..k {
                    gw.data_mut()[o * k + i] += g * x[i];
                    gi.data_mut()[b * k + i] += g * self.weight.data()[o * k + i];
                }
            }
        }
        Ok(DenseGrads {
            input: gi,
            weight: gw,
            bias: gb,
        })
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Returns `(-ln p[target], p)`. The loss is computed in log space so that
/// saturated logits do not round to `ln 0`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let loss = total.ln() - (logits[target] - max);
    (loss, softmax(logits))
}
