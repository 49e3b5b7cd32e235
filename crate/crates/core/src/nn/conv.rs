//! Stride-1, zero "same"-padded convolutions along the time axis.
//!
//! `Conv1d` mixes all input channels: `[N, C, T] -> [N, O, T]`.
//! `Conv2d` uses a `k x 1` kernel that only spans time, applied to every
//! variable row independently: `[N, C, D, T] -> [N, O, D, T]`. Rows never
//! mix, which is what keeps the per-variable feature maps separable.
//!
//! Kernel widths must be odd so the padding is symmetric and the output time
//! length equals the input time length.

use rand::Rng;

use super::{axpy, dot, LayerKind, NnError, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `[out, in, k]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out, in, k, 1]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    rows: usize,
    len: usize,
    kernel: usize,
}

impl Geometry {
    fn half(&self) -> isize {
        (self.kernel / 2) as isize
    }

    fn in_plane(&self, n: usize, c: usize, r: usize) -> usize {
        ((n * self.c_in + c) * self.rows + r) * self.len
    }

    fn out_plane(&self, n: usize, o: usize, r: usize) -> usize {
        ((n * self.c_out + o) * self.rows + r) * self.len
    }
}

/// Output positions `t` whose tap `t + shift` lands inside `[0, len)`.
#[inline]
fn span(len: usize, shift: isize) -> Option<(usize, usize)> {
    let len = len as isize;
    let lo = (-shift).max(0);
    let hi = (len - shift).min(len);
    (lo < hi).then_some((lo as usize, hi as usize))
}

fn forward_core(g: Geometry, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let half = g.half();
    for n in 0..g.batch {
        for o in 0..g.c_out {
            for r in 0..g.rows {
                let ob = g.out_plane(n, o, r);
                let out_row = &mut out[ob..ob + g.len];
                out_row.fill(bias[o]);
                for c in 0..g.c_in {
                    let ib = g.in_plane(n, c, r);
                    let in_row = &input[ib..ib + g.len];
                    let taps = &weight[(o * g.c_in + c) * g.kernel..][..g.kernel];
                    for (j, &w) in taps.iter().enumerate() {
                        let shift = j as isize - half;
                        if let Some((lo, hi)) = span(g.len, shift) {
                            let src = (lo as isize + shift) as usize;
                            axpy(&mut out_row[lo..hi], w, &in_row[src..src + (hi - lo)]);
                        }
                    }
                }
            }
        }
    }
}

fn backward_core(
    g: Geometry,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    mut grad_in: Option<&mut [f64]>,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let half = g.half();
    for n in 0..g.batch {
        for o in 0..g.c_out {
            for r in 0..g.rows {
                let ob = g.out_plane(n, o, r);
                let go = &grad_out[ob..ob + g.len];
                grad_b[o] += go.iter().sum::<f64>();
                for c in 0..g.c_in {
                    let ib = g.in_plane(n, c, r);
                    let in_row = &input[ib..ib + g.len];
                    let wbase = (o * g.c_in + c) * g.kernel;
                    for j in 0..g.kernel {
                        let shift = j as isize - half;
                        let Some((lo, hi)) = span(g.len, shift) else {
                            continue;
                        };
                        let src = (lo as isize + shift) as usize;
                        let width = hi - lo;
                        grad_w[wbase + j] += dot(&go[lo..hi], &in_row[src..src + width]);
                        if let Some(gi) = grad_in.as_deref_mut() {
                            axpy(&mut gi[ib + src..ib + src + width], weight[wbase + j], &go[lo..hi]);
                        }
                    }
                }
            }
        }
    }
}

fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("shape product matches generated length")
}

fn check_kernel(kernel: usize) -> Result<(), NnError> {
    if kernel.is_multiple_of(2) {
        return Err(NnError::ShapeMismatch {
            expected: "odd kernel width".into(),
            found: format!("{kernel}"),
        });
    }
    Ok(())
}

impl Conv1d {
    /// He-uniform weights (bound `sqrt(6 / (in * k))`), zero bias.
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, kernel: usize, rng: &mut R) -> Self {
        Self {
            weight: he_uniform(&[c_out, c_in, kernel], c_in * kernel, rng),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::Conv1d
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    fn geometry(&self, input: &Tensor) -> Result<Geometry, NnError> {
        input.expect_rank(3, "conv1d input [N, C, T]")?;
        check_kernel(self.kernel())?;
        if input.dim(1) != self.in_channels() {
            return Err(NnError::ShapeMismatch {
                expected: format!("{} input channels", self.in_channels()),
                found: format!("{:?}", input.shape()),
            });
        }
        Ok(Geometry {
            batch: input.dim(0),
            c_in: self.in_channels(),
            c_out: self.out_channels(),
            rows: 1,
            len: input.dim(2),
            kernel: self.kernel(),
        })
    }

    /// `out[n][o][t] = bias[o] + sum_{c,j} w[o][c][j] * x[n][c][t + j - k/2]`
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let g = self.geometry(input)?;
        let mut out = Tensor::zeros(&[g.batch, g.c_out, g.len]);
        forward_core(g, input.data(), self.weight.data(), self.bias.data(), out.data_mut());
        Ok(out)
    }

    pub fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<ConvGrads, NnError> {
        let g = self.geometry(input)?;
        grad_out.expect_shape(&[g.batch, g.c_out, g.len], "conv1d output gradient")?;
        let mut gi = need_input_grad.then(|| Tensor::zeros(input.shape()));
        let mut gw = Tensor::zeros(self.weight.shape());
        let mut gb = Tensor::zeros(self.bias.shape());
        backward_core(
            g,
            input.data(),
            self.weight.data(),
            grad_out.data(),
            gi.as_mut().map(|t| t.data_mut()),
            gw.data_mut(),
            gb.data_mut(),
        );
        Ok(ConvGrads {
            input: gi,
            weight: gw,
            bias: gb,
        })
    }
}

impl Conv2d {
    /// He-uniform weights over a `kernel x 1` time-only receptive field.
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, kernel: usize, rng: &mut R) -> Self {
        Self {
            weight: he_uniform(&[c_out, c_in, kernel, 1], c_in * kernel, rng),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn kind(&self) -> LayerKind {
        LayerKind::Conv2d
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    fn geometry(&self, input: &Tensor) -> Result<Geometry, NnError> {
        input.expect_rank(4, "conv2d input [N, C, D, T]")?;
        check_kernel(self.kernel())?;
        if input.dim(1) != self.in_channels() {
            return Err(NnError::ShapeMismatch {
                expected: format!("{} input channels", self.in_channels()),
                found: format!("{:?}", input.shape()),
            });
        }
        Ok(Geometry {
            batch: input.dim(0),
            c_in: self.in_channels(),
            c_out: self.out_channels(),
            rows: input.dim(2),
            len: input.dim(3),
            kernel: self.kernel(),
        })
    }

    /// `out[n][o][d][t] = bias[o] + sum_{c,j} w[o][c][j] * x[n][c][d][t + j - k/2]`
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let g = self.geometry(input)?;
        let mut out = Tensor::zeros(&[g.batch, g.c_out, g.rows, g.len]);
        forward_core(g, input.data(), self.weight.data(), self.bias.data(), out.data_mut());
        Ok(out)
    }

    pub fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<ConvGrads, NnError> {
        let g = self.geometry(input)?;
        grad_out.expect_shape(&[g.batch, g.c_out, g.rows, g.len], "conv2d output gradient")?;
        let mut gi = need_input_grad.then(|| Tensor::zeros(input.shape()));
        let mut gw = Tensor::zeros(self.weight.shape());
        let mut gb = Tensor::zeros(self.bias.shape());
        backward_core(
            g,
            input.data(),
            self.weight.data(),
            grad_out.data(),
            gi.as_mut().map(|t| t.data_mut()),
            gw.data_mut(),
            gb.data_mut(),
        );
        Ok(ConvGrads {
            input: gi,
            weight: gw,
            bias: gb,
        })
    }
}
