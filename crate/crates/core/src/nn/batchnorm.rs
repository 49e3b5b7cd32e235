use super::{LayerKind, NnError, Tensor};

pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistic at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics (biased variance).
    Train,
    /// Normalize with the stored running statistics.
    Infer,
}

/// Per-channel batch normalization over `[N, C, ...]` tensors.
///
/// Statistics are taken over the batch axis and every trailing axis, so the
/// same layer serves `[N, C, T]` and `[N, C, D, T]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub mode: Mode,
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
        }
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn layout(&self, input: &Tensor) -> Result<(usize, usize, usize), NnError> {
        if input.shape().len() < 2 || input.dim(1) != self.channels() {
            return Err(NnError::ShapeMismatch {
                expected: format!("[N, {}, ...]", self.channels()),
                found: format!("{:?}", input.shape()),
            });
        }
        let spatial = input.shape()[2..].iter().product();
        Ok((input.dim(0), self.channels(), spatial))
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache), NnError> {
        let (n, c, s) = self.layout(input)?;
        let x = input.data();
        let count = (n * s) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if mode == Mode::Train {
            for ch in 0..c {
                let mut sum = 0.0;
                for b in 0..n {
                    sum += x[(b * c + ch) * s..][..s].iter().sum::<f64>();
                }
                let mu = sum / count;
                let mut sq = 0.0;
                for b in 0..n {
                    sq += x[(b * c + ch) * s..][..s]
                        .iter()
                        .map(|v| (v - mu) * (v - mu))
                        .sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = sq / count;
            }
        } else {
            mean.copy_from_slice(self.running_mean.data());
            var.copy_from_slice(self.running_var.data());
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

        let mut x_hat = Tensor::zeros(input.shape());
        let mut out = Tensor::zeros(input.shape());
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                let (g, be) = (self.gamma.data()[ch], self.beta.data()[ch]);
                let (mu, is) = (mean[ch], inv_std[ch]);
                for i in base..base + s {
                    let h = (x[i] - mu) * is;
                    x_hat.data_mut()[i] = h;
                    out.data_mut()[i] = g * h + be;
                }
            }
        }
        Ok((
            out,
            BatchNormCache {
                mode,
                x_hat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        ))
    }

    /// Folds the batch statistics of a train-mode pass into the running ones.
    pub fn update_running_stats(&mut self, cache: &BatchNormCache) {
        if cache.mode != Mode::Train {
            return;
        }
        for ch in 0..self.channels() {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * cache.batch_mean[ch];
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * cache.batch_var[ch];
        }
    }

    /// Returns `(grad_input, grad_gamma, grad_beta)`.
    pub fn backward(
        &self,
        cache: &BatchNormCache,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor), NnError> {
        if grad_out.shape() != cache.x_hat.shape() {
            return Err(NnError::CacheMismatch(format!(
                "batch-norm gradient {:?} vs cached {:?}",
                grad_out.shape(),
                cache.x_hat.shape()
            )));
        }
        let (n, c, s) = self.layout(grad_out)?;
        let dy = grad_out.data();
        let xh = cache.x_hat.data();
        let count = (n * s) as f64;
        let mut g_gamma = Tensor::zeros(&[c]);
        let mut g_beta = Tensor::zeros(&[c]);
        for ch in 0..c {
            let (mut sdy, mut sdyx) = (0.0, 0.0);
            for b in 0..n {
                let base = (b * c + ch) * s;
                for i in base..base + s {
                    sdy += dy[i];
                    sdyx += dy[i] * xh[i];
                }
            }
            g_beta.data_mut()[ch] = sdy;
            g_gamma.data_mut()[ch] = sdyx;
        }

        let mut dx = Tensor::zeros(grad_out.shape());
        for ch in 0..c {
            let scale = self.gamma.data()[ch] * cache.inv_std[ch];
            let (sdy, sdyx) = (g_beta.data()[ch], g_gamma.data()[ch]);
            for b in 0..n {
                let base = (b * c + ch) * s;
                for i in base..base + s {
                    dx.data_mut()[i] = match cache.mode {
                        Mode::Infer => scale * dy[i],
                        Mode::Train => scale * (dy[i] - sdy / count - xh[i] * sdyx / count),
                    };
                }
            }
        }
        Ok((dx, g_gamma, g_beta))
    }
}
