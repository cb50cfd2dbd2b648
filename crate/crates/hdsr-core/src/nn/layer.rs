//! Layer zoo: shape algebra, forward passes, and exact backward passes.
//!
//! Layers operate on single samples. Rank-3 tensors are feature maps
//! `[channels, height, width]`; rank-2 tensors are frame sequences
//! `[frames, features]`; rank-1 tensors are plain vectors.

use crate::error::{Error, Result};
use crate::nn::scalar::Scalar;
use crate::nn::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Epsilon inside the batchnorm variance square root.
pub const BN_EPS: f64 = 1e-5;

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActKind {
    Relu,
    LeakyRelu,
}

/// One layer descriptor. A network is an ordered list of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    },
    MaxPool {
        window: (usize, usize),
        stride: (usize, usize),
    },
    BatchNorm,
    Activation {
        kind: ActKind,
    },
    FullyConnected {
        units: usize,
    },
    /// Per-frame linear projection on a `[frames, features]` sequence.
    FrameLinear {
        units: usize,
    },
    Softmax,
    Recurrent {
        hidden: usize,
        bidirectional: bool,
    },
    /// `[channels, 1, width]` feature map -> `[width, channels]` sequence.
    MapToSequence,
}

/// Whether batchnorm uses per-sample statistics (training) or running
/// averages (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

impl LayerSpec {
    /// Stable numeric tag for the weights file.
    pub fn type_tag(&self) -> u32 {
        match self {
            LayerSpec::Conv { .. } => 1,
            LayerSpec::MaxPool { .. } => 2,
            LayerSpec::BatchNorm => 3,
            LayerSpec::Activation { .. } => 4,
            LayerSpec::FullyConnected { .. } => 5,
            LayerSpec::FrameLinear { .. } => 6,
            LayerSpec::Softmax => 7,
            LayerSpec::Recurrent { .. } => 8,
            LayerSpec::MapToSequence => 9,
        }
    }

    /// Output shape for the given input shape, or an error when they do not
    /// compose.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                pad,
            } => {
                let [c, h, w] = expect_rank3(input, "conv")?;
                let _ = c;
                let oh = conv_extent(h, kernel.0, stride.0, pad.0, "conv height")?;
                let ow = conv_extent(w, kernel.1, stride.1, pad.1, "conv width")?;
                Ok(vec![filters, oh, ow])
            }
            LayerSpec::MaxPool { window, stride } => {
                let [c, h, w] = expect_rank3(input, "maxpool")?;
                let oh = pool_extent(h, window.0, stride.0, "maxpool height")?;
                let ow = pool_extent(w, window.1, stride.1, "maxpool width")?;
                Ok(vec![c, oh, ow])
            }
            LayerSpec::BatchNorm => {
                expect_rank3(input, "batchnorm")?;
                Ok(input.to_vec())
            }
            LayerSpec::Activation { .. } => Ok(input.to_vec()),
            LayerSpec::FullyConnected { units } => {
                if input.is_empty() {
                    return Err(Error::ShapeMismatch("fully-connected on empty shape".into()));
                }
                Ok(vec![units])
            }
            LayerSpec::FrameLinear { units } => {
                let [t, _] = expect_rank2(input, "frame-linear")?;
                Ok(vec![t, units])
            }
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(Error::ShapeMismatch(format!(
                        "softmax expects a vector, got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Recurrent {
                hidden,
                bidirectional,
            } => {
                let [t, _] = expect_rank2(input, "recurrent")?;
                Ok(vec![t, if bidirectional { 2 * hidden } else { hidden }])
            }
            LayerSpec::MapToSequence => {
                let [c, h, w] = expect_rank3(input, "map-to-sequence")?;
                if h != 1 {
                    return Err(Error::ShapeMismatch(format!(
                        "map-to-sequence needs height 1, got {h}"
                    )));
                }
                Ok(vec![w, c])
            }
        }
    }

    /// Shapes of the trainable parameter tensors, in serialization order.
    pub fn param_shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        match *self {
            LayerSpec::Conv {
                filters, kernel, ..
            } => {
                let [c, _, _] = expect_rank3(input, "conv")?;
                Ok(vec![vec![filters, c, kernel.0, kernel.1], vec![filters]])
            }
            LayerSpec::BatchNorm => {
                let [c, _, _] = expect_rank3(input, "batchnorm")?;
                Ok(vec![vec![c], vec![c]])
            }
            LayerSpec::FullyConnected { units } => {
                let d: usize = input.iter().product();
                Ok(vec![vec![units, d], vec![units]])
            }
            LayerSpec::FrameLinear { units } => {
                let [_, d] = expect_rank2(input, "frame-linear")?;
                Ok(vec![vec![units, d], vec![units]])
            }
            LayerSpec::Recurrent {
                hidden,
                bidirectional,
            } => {
                let [_, d] = expect_rank2(input, "recurrent")?;
                let one_dir = vec![
                    vec![hidden, d],
                    vec![hidden, hidden],
                    vec![hidden],
                    vec![hidden, d],
                    vec![hidden, hidden],
                    vec![hidden],
                ];
                if bidirectional {
                    let mut both = one_dir.clone();
                    both.extend(one_dir);
                    Ok(both)
                } else {
                    Ok(one_dir)
                }
            }
            _ => Ok(Vec::new()),
        }
    }

    /// Shapes of non-trainable state (batchnorm running mean/variance).
    pub fn aux_shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        match self {
            LayerSpec::BatchNorm => {
                let [c, _, _] = expect_rank3(input, "batchnorm")?;
                Ok(vec![vec![c], vec![c]])
            }
            _ => Ok(Vec::new()),
        }
    }
}

fn expect_rank3(shape: &[usize], what: &str) -> Result<[usize; 3]> {
    match shape {
        [c, h, w] => Ok([*c, *h, *w]),
        other => Err(Error::ShapeMismatch(format!(
            "{what} expects [channels, height, width], got {other:?}"
        ))),
    }
}

fn expect_rank2(shape: &[usize], what: &str) -> Result<[usize; 2]> {
    match shape {
        [t, d] => Ok([*t, *d]),
        other => Err(Error::ShapeMismatch(format!(
            "{what} expects [frames, features], got {other:?}"
        ))),
    }
}

fn conv_extent(size: usize, k: usize, s: usize, p: usize, what: &str) -> Result<usize> {
    if s == 0 || k == 0 {
        return Err(Error::ShapeMismatch(format!("{what}: zero kernel or stride")));
    }
    let padded = size + 2 * p;
    if padded < k {
        return Err(Error::ShapeMismatch(format!(
            "{what}: input {size} too small for kernel {k} with pad {p}"
        )));
    }
    Ok((padded - k) / s + 1)
}

fn pool_extent(size: usize, k: usize, s: usize, what: &str) -> Result<usize> {
    if s == 0 || k == 0 {
        return Err(Error::ShapeMismatch(format!("{what}: zero window or stride")));
    }
    if size < k {
        return Err(Error::ShapeMismatch(format!(
            "{what}: input {size} smaller than window {k}"
        )));
    }
    Ok((size - k) / s + 1)
}

/// Captured intermediates for a backward pass.
pub enum LayerCache<F> {
    Conv {
        col: Vec<F>,
        out_hw: (usize, usize),
    },
    MaxPool {
        argmax: Vec<usize>,
    },
    BatchNorm {
        xhat: Vec<F>,
        invstd: Vec<F>,
        /// Per-channel sample statistics, exported for running-average updates.
        mean: Vec<F>,
        var: Vec<F>,
    },
    Activation {
        input: Vec<F>,
    },
    FullyConnected {
        input: Vec<F>,
    },
    FrameLinear {
        input: Vec<F>,
    },
    Softmax {
        output: Vec<F>,
    },
    Recurrent {
        directions: Vec<RecurrentTrace<F>>,
    },
    Stateless,
}

/// Per-direction BPTT trace: inputs are in processing order (the backward
/// direction stores the reversed sequence).
pub struct RecurrentTrace<F> {
    pub xs: Vec<F>,     // [t, d]
    pub hs: Vec<F>,     // [t + 1, h], hs[0] = initial zero state
    pub zs: Vec<F>,     // [t, h] gate activations
    pub cs: Vec<F>,     // [t, h] candidate activations
}

/// Forward pass of one layer.
///
/// `params`/`aux` must match [`LayerSpec::param_shapes`] / [`LayerSpec::aux_shapes`].
/// When `want_cache` is set the returned cache supports [`backward`].
pub fn forward<F: Scalar>(
    spec: &LayerSpec,
    params: &[Tensor<F>],
    aux: &[Tensor<F>],
    input: &Tensor<F>,
    mode: Mode,
    want_cache: bool,
) -> Result<(Tensor<F>, Option<LayerCache<F>>)> {
    match *spec {
        LayerSpec::Conv {
            filters,
            kernel,
            stride,
            pad,
        } => conv_forward(params, input, filters, kernel, stride, pad, want_cache),
        LayerSpec::MaxPool { window, stride } => maxpool_forward(input, window, stride, want_cache),
        LayerSpec::BatchNorm => batchnorm_forward(params, aux, input, mode, want_cache),
        LayerSpec::Activation { kind } => activation_forward(input, kind, want_cache),
        LayerSpec::FullyConnected { units } => fc_forward(params, input, units, want_cache),
        LayerSpec::FrameLinear { units } => frame_linear_forward(params, input, units, want_cache),
        LayerSpec::Softmax => softmax_forward(input, want_cache),
        LayerSpec::Recurrent {
            hidden,
            bidirectional,
        } => recurrent_forward(params, input, hidden, bidirectional, want_cache),
        LayerSpec::MapToSequence => {
            let out = map_to_sequence(input)?;
            Ok((out, want_cache.then_some(LayerCache::Stateless)))
        }
    }
}

/// Backward pass: gradients of the loss with respect to the layer input and
/// each parameter tensor, given the gradient with respect to the output.
pub fn backward<F: Scalar>(
    spec: &LayerSpec,
    params: &[Tensor<F>],
    input_shape: &[usize],
    cache: &LayerCache<F>,
    dout: &Tensor<F>,
) -> Result<(Tensor<F>, Vec<Tensor<F>>)> {
    match (*spec, cache) {
        (
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                pad,
            },
            LayerCache::Conv { col, out_hw },
        ) => conv_backward(params, input_shape, col, *out_hw, dout, filters, kernel, stride, pad),
        (LayerSpec::MaxPool { .. }, LayerCache::MaxPool { argmax }) => {
            let mut dinput = Tensor::zeros(input_shape);
            let dd = dinput.data_mut();
            for (o, &src) in argmax.iter().enumerate() {
                dd[src] += dout.data()[o];
            }
            Ok((dinput, Vec::new()))
        }
        (LayerSpec::BatchNorm, LayerCache::BatchNorm { xhat, invstd, .. }) => {
            batchnorm_backward(params, input_shape, xhat, invstd, dout)
        }
        (LayerSpec::Activation { kind }, LayerCache::Activation { input }) => {
            let slope = match kind {
                ActKind::Relu => F::ZERO,
                ActKind::LeakyRelu => F::from_f64(LEAKY_SLOPE),
            };
            let mut dinput = Tensor::zeros(input_shape);
            for ((di, &x), &dy) in dinput.data_mut().iter_mut().zip(input).zip(dout.data()) {
                *di = if x > F::ZERO { dy } else { slope * dy };
            }
            Ok((dinput, Vec::new()))
        }
        (LayerSpec::FullyConnected { units }, LayerCache::FullyConnected { input }) => {
            fc_backward(params, input_shape, input, dout, units)
        }
        (LayerSpec::FrameLinear { units }, LayerCache::FrameLinear { input }) => {
            frame_linear_backward(params, input_shape, input, dout, units)
        }
        (LayerSpec::Softmax, LayerCache::Softmax { output }) => {
            let mut dot = F::ZERO;
            for (&y, &dy) in output.iter().zip(dout.data()) {
                dot += y * dy;
            }
            let mut dinput = Tensor::zeros(input_shape);
            for ((di, &y), &dy) in dinput.data_mut().iter_mut().zip(output).zip(dout.data()) {
                *di = y * (dy - dot);
            }
            Ok((dinput, Vec::new()))
        }
        (
            LayerSpec::Recurrent {
                hidden,
                bidirectional,
            },
            LayerCache::Recurrent { directions },
        ) => recurrent_backward(params, input_shape, directions, dout, hidden, bidirectional),
        (LayerSpec::MapToSequence, LayerCache::Stateless) => {
            // dout is [w, c]; transpose back to [c, 1, w].
            let [c, _, w] = expect_rank3(input_shape, "map-to-sequence")?;
            let mut dinput = Tensor::zeros(input_shape);
            let dd = dinput.data_mut();
            for x in 0..w {
                for ch in 0..c {
                    dd[ch * w + x] = dout.data()[x * c + ch];
                }
            }
            Ok((dinput, Vec::new()))
        }
        _ => Err(Error::Numerics("layer cache does not match layer spec".into())),
    }
}

// ---------------------------------------------------------------------------
// conv

#[allow(clippy::too_many_arguments)]
fn im2col<F: Scalar>(
    input: &[F],
    c: usize,
    h: usize,
    w: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
    oh: usize,
    ow: usize,
) -> Vec<F> {
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    let cols = oh * ow;
    let mut col = vec![F::ZERO; c * kh * kw * cols];
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let base = row * cols;
                for oy in 0..oh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let in_row = (ch * h + iy as usize) * w;
                    let out_row = base + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            col[out_row + ox] = input[in_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im<F: Scalar>(
    col: &[F],
    c: usize,
    h: usize,
    w: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
    oh: usize,
    ow: usize,
) -> Vec<F> {
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    let cols = oh * ow;
    let mut out = vec![F::ZERO; c * h * w];
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let base = row * cols;
                for oy in 0..oh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let in_row = (ch * h + iy as usize) * w;
                    let out_row = base + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            out[in_row + ix as usize] += col[out_row + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_forward<F: Scalar>(
    params: &[Tensor<F>],
    input: &Tensor<F>,
    filters: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
    want_cache: bool,
) -> Result<(Tensor<F>, Option<LayerCache<F>>)> {
    let [c, h, w] = expect_rank3(input.shape(), "conv")?;
    let oh = conv_extent(h, kernel.0, stride.0, pad.0, "conv height")?;
    let ow = conv_extent(w, kernel.1, stride.1, pad.1, "conv width")?;
    let weight = &params[0];
    let bias = &params[1];
    let ckk = c * kernel.0 * kernel.1;
    let cols = oh * ow;
    let col = im2col(input.data(), c, h, w, kernel, stride, pad, oh, ow);
    let mut out = Tensor::zeros(&[filters, oh, ow]);
    F::gemm(
        filters,
        ckk,
        cols,
        F::ONE,
        weight.data(),
        ckk as isize,
        1,
        &col,
        cols as isize,
        1,
        F::ZERO,
        out.data_mut(),
        cols as isize,
        1,
    );
    for f in 0..filters {
        let b = bias.data()[f];
        for v in &mut out.data_mut()[f * cols..(f + 1) * cols] {
            *v += b;
        }
    }
    let cache = want_cache.then_some(LayerCache::Conv {
        col,
        out_hw: (oh, ow),
    });
    Ok((out, cache))
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<F: Scalar>(
    params: &[Tensor<F>],
    input_shape: &[usize],
    col: &[F],
    out_hw: (usize, usize),
    dout: &Tensor<F>,
    filters: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<(Tensor<F>, Vec<Tensor<F>>)> {
    let [c, h, w] = expect_rank3(input_shape, "conv")?;
    let (oh, ow) = out_hw;
    let cols = oh * ow;
    let ckk = c * kernel.0 * kernel.1;
    let weight = &params[0];

    let mut dbias = Tensor::zeros(&[filters]);
    for f in 0..filters {
        let mut acc = F::ZERO;
        for &v in &dout.data()[f * cols..(f + 1) * cols] {
            acc += v;
        }
        dbias.data_mut()[f] = acc;
    }

    // dW[f, ckk] = dOut[f, cols] x col^T[cols, ckk]
    let mut dweight = Tensor::zeros(weight.shape());
    F::gemm(
        filters,
        cols,
        ckk,
        F::ONE,
        dout.data(),
        cols as isize,
        1,
        col,
        1,
        cols as isize,
        F::ZERO,
        dweight.data_mut(),
        ckk as isize,
        1,
    );

    // dcol[ckk, cols] = W^T[ckk, f] x dOut[f, cols]
    let mut dcol = vec![F::ZERO; ckk * cols];
    F::gemm(
        ckk,
        filters,
        cols,
        F::ONE,
        weight.data(),
        1,
        ckk as isize,
        dout.data(),
        cols as isize,
        1,
        F::ZERO,
        &mut dcol,
        cols as isize,
        1,
    );
    let dinput_data = col2im(&dcol, c, h, w, kernel, stride, pad, oh, ow);
    let dinput = Tensor::from_vec(input_shape, dinput_data)?;
    Ok((dinput, vec![dweight, dbias]))
}

// ---------------------------------------------------------------------------
// maxpool

fn maxpool_forward<F: Scalar>(
    input: &Tensor<F>,
    window: (usize, usize),
    stride: (usize, usize),
    want_cache: bool,
) -> Result<(Tensor<F>, Option<LayerCache<F>>)> {
    let [c, h, w] = expect_rank3(input.shape(), "maxpool")?;
    let oh = pool_extent(h, window.0, stride.0, "maxpool height")?;
    let ow = pool_extent(w, window.1, stride.1, "maxpool width")?;
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut argmax = vec![0usize; c * oh * ow];
    let data = input.data();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = F::from_f64(f64::NEG_INFINITY);
                let mut best_idx = 0usize;
                for ky in 0..window.0 {
                    let iy = oy * stride.0 + ky;
                    for kx in 0..window.1 {
                        let ix = ox * stride.1 + kx;
                        let idx = (ch * h + iy) * w + ix;
                        // first maximum wins ties, scan order fixed
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out.data_mut()[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((out, want_cache.then_some(LayerCache::MaxPool { argmax })))
}

// ---------------------------------------------------------------------------
// batchnorm

fn batchnorm_forward<F: Scalar>(
    params: &[Tensor<F>],
    aux: &[Tensor<F>],
    input: &Tensor<F>,
    mode: Mode,
    want_cache: bool,
) -> Result<(Tensor<F>, Option<LayerCache<F>>)> {
    let [c, h, w] = expect_rank3(input.shape(), "batchnorm")?;
    let n = h * w;
    let gamma = params[0].data();
    let beta = params[1].data();
    let eps = F::from_f64(BN_EPS);
    let mut out = Tensor::zeros(input.shape());
    let mut xhat = vec![F::ZERO; input.numel()];
    let mut invstds = vec![F::ZERO; c];
    let mut means = vec![F::ZERO; c];
    let mut vars = vec![F::ZERO; c];
    let inv_n = F::from_f64(1.0 / n as f64);
    for ch in 0..c {
        let slice = &input.data()[ch * n..(ch + 1) * n];
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = F::ZERO;
                for &x in slice {
                    mean += x;
                }
                mean *= inv_n;
                let mut var = F::ZERO;
                for &x in slice {
                    let d = x - mean;
                    var += d * d;
                }
                var *= inv_n;
                (mean, var)
            }
            Mode::Infer => (aux[0].data()[ch], aux[1].data()[ch]),
        };
        let invstd = F::ONE / (var + eps).sqrt();
        means[ch] = mean;
        vars[ch] = var;
        invstds[ch] = invstd;
        let (g, b) = (gamma[ch], beta[ch]);
        for (i, &x) in slice.iter().enumerate() {
            let xh = (x - mean) * invstd;
            xhat[ch * n + i] = xh;
            out.data_mut()[ch * n + i] = g * xh + b;
        }
    }
    let cache = want_cache.then_some(LayerCache::BatchNorm {
        xhat,
        invstd: invstds,
        mean: means,
        var: vars,
    });
    Ok((out, cache))
}

fn batchnorm_backward<F: Scalar>(
    params: &[Tensor<F>],
    input_shape: &[usize],
    xhat: &[F],
    invstd: &[F],
    dout: &Tensor<F>,
) -> Result<(Tensor<F>, Vec<Tensor<F>>)> {
    let [c, h, w] = expect_rank3(input_shape, "batchnorm")?;
    let n = h * w;
    let gamma = params[0].data();
    let inv_n = F::from_f64(1.0 / n as f64);
    let mut dinput = Tensor::zeros(input_shape);
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for ch in 0..c {
        let dy = &dout.data()[ch * n..(ch + 1) * n];
        let xh = &xhat[ch * n..(ch + 1) * n];
        let mut s_dy = F::ZERO;
        let mut s_dy_xh = F::ZERO;
        for (&d, &x) in dy.iter().zip(xh) {
            s_dy += d;
            s_dy_xh += d * x;
        }
        dgamma.data_mut()[ch] = s_dy_xh;
        dbeta.data_mut()[ch] = s_dy;
        let scale = gamma[ch] * invstd[ch];
        let mean_dy = s_dy * inv_n;
        let mean_dy_xh = s_dy_xh * inv_n;
        for i in 0..n {
            dinput.data_mut()[ch * n + i] = scale * (dy[i] - mean_dy - xh[i] * mean_dy_xh);
        }
    }
    Ok((dinput, vec![dgamma, dbeta]))
}

// ---------------------------------------------------------------------------
// activation / fc / frame-linear / softmax

fn activation_forward<F: Scalar>(
    input: &Tensor<F>,
    kind: ActKind,
    want_cache: bool,
) -> Result<(Tensor<F>, Option<LayerCache<F>>)> {
    let slope = match kind {
        ActKind::Relu => F::ZERO,
        ActKind::LeakyRelu => F::from_f64(LEAKY_SLOPE),
    };
    let mut out = Tensor::zeros(input.shape());
    for (o, &x) in out.data_mut().iter_mut().zip(input.data()) {
        *o = if x > F::ZERO { x } else { slope * x };
    }
    let cache = want_cache.then(|| LayerCache::Activation {
        input: input.data().to_vec(),
    });
    Ok((out, cache))
}

fn fc_forward<F: Scalar>(
    params: &[Tensor<F>],
    input: &Tensor<F>,
    units: usize,
    want_cache: bool,
) -> Result<(Tensor<F>, Option<LayerCache<F>>)> {
    let d = input.numel();
    let weight = &params[0];
    let bias = &params[1];
    let mut out = Tensor::zeros(&[units]);
    F::gemm(
        units,
        d,
        1,
        F::ONE,
        weight.data(),
        d as isize,
        1,
        input.data(),
        1,
        1,
        F::ZERO,
        out.data_mut(),
        1,
        1,
    );
    for (o, &b) in out.data_mut().iter_mut().zip(bias.data()) {
        *o += b;
    }
    let cache = want_cache.then(|| LayerCache::FullyConnected {
        input: input.data().to_vec(),
    });
    Ok((out, cache))
}

fn fc_backward<F: Scalar>(
    params: &[Tensor<F>],
    input_shape: &[usize],
    input: &[F],
    dout: &Tensor<F>,
    units: usize,
) -> Result<(Tensor<F>, Vec<Tensor<F>>)> {
    let d = input.len();
    let weight = &params[0];
    let mut dweight = Tensor::zeros(weight.shape());
    // dW[u, d] = dout[u] outer input[d]
    for u in 0..units {
        let g = dout.data()[u];
        let row = &mut dweight.data_mut()[u * d..(u + 1) * d];
        for (dw, &x) in row.iter_mut().zip(input) {
            *dw = g * x;
        }
    }
    let dbias = Tensor::from_vec(&[units], dout.data().to_vec())?;
    // dx[d] = W^T dout
    let mut dinput = Tensor::zeros(input_shape);
    F::gemm(
        d,
        units,
        1,
        F::ONE,
        weight.data(),
        1,
        d as isize,
        dout.data(),
        1,
        1,
        F::ZERO,
        dinput.data_mut(),
        1,
        1,
    );
    Ok((dinput, vec![dweight, dbias]))
}

fn frame_linear_forward<F: Scalar>(
    params: &[Tensor<F>],
    input: &Tensor<F>,
    units: usize,
    want_cache: bool,
) -> Result<(Tensor<F>, Option<LayerCache<F>>)> {
    let [t, d] = expect_rank2(input.shape(), "frame-linear")?;
    let weight = &params[0];
    let bias = &params[1];
    let mut out = Tensor::zeros(&[t, units]);
    // out[t, u] = x[t, d] x W^T[d, u]
    F::gemm(
        t,
        d,
        units,
        F::ONE,
        input.data(),
        d as isize,
        1,
        weight.data(),
        1,
        d as isize,
        F::ZERO,
        out.data_mut(),
        units as isize,
        1,
    );
    for ti in 0..t {
        let row = &mut out.data_mut()[ti * units..(ti + 1) * units];
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    let cache = want_cache.then(|| LayerCache::FrameLinear {
        input: input.data().to_vec(),
    });
    Ok((out, cache))
}

fn frame_linear_backward<F: Scalar>(
    params: &[Tensor<F>],
    input_shape: &[usize],
    input: &[F],
    dout: &Tensor<F>,
    units: usize,
) -> Result<(Tensor<F>, Vec<Tensor<F>>)> {
    let [t, d] = expect_rank2(input_shape, "frame-linear")?;
    let weight = &params[0];
    // dW[u, d] = dout^T[u, t] x input[t, d]
    let mut dweight = Tensor::zeros(weight.shape());
    F::gemm(
        units,
        t,
        d,
        F::ONE,
        dout.data(),
        1,
        units as isize,
        input,
        d as isize,
        1,
        F::ZERO,
        dweight.data_mut(),
        d as isize,
        1,
    );
    let mut dbias = Tensor::zeros(&[units]);
    for ti in 0..t {
        for u in 0..units {
            dbias.data_mut()[u] += dout.data()[ti * units + u];
        }
    }
    // dx[t, d] = dout[t, u] x W[u, d]
    let mut dinput = Tensor::zeros(input_shape);
    F::gemm(
        t,
        units,
        d,
        F::ONE,
        dout.data(),
        units as isize,
        1,
        weight.data(),
        d as isize,
        1,
        F::ZERO,
        dinput.data_mut(),
        d as isize,
        1,
    );
    Ok((dinput, vec![dweight, dbias]))
}

fn softmax_forward<F: Scalar>(
    input: &Tensor<F>,
    want_cache: bool,
) -> Result<(Tensor<F>, Option<LayerCache<F>>)> {
    if input.shape().len() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "softmax expects a vector, got {:?}",
            input.shape()
        )));
    }
    let mut m = F::from_f64(f64::NEG_INFINITY);
    for &x in input.data() {
        m = m.maximum(x);
    }
    let mut out = Tensor::zeros(input.shape());
    let mut sum = F::ZERO;
    for (o, &x) in out.data_mut().iter_mut().zip(input.data()) {
        *o = (x - m).exp();
        sum += *o;
    }
    let inv = F::ONE / sum;
    for o in out.data_mut() {
        *o *= inv;
    }
    let cache = want_cache.then(|| LayerCache::Softmax {
        output: out.data().to_vec(),
    });
    Ok((out, cache))
}

fn map_to_sequence<F: Scalar>(input: &Tensor<F>) -> Result<Tensor<F>> {
    let [c, h, w] = expect_rank3(input.shape(), "map-to-sequence")?;
    if h != 1 {
        return Err(Error::ShapeMismatch(format!(
            "map-to-sequence needs height 1, got {h}"
        )));
    }
    let mut out = Tensor::zeros(&[w, c]);
    for x in 0..w {
        for ch in 0..c {
            out.data_mut()[x * c + ch] = input.data()[ch * w + x];
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// recurrent (single-gate gated cell, bidirectional by concatenation)

fn run_direction<F: Scalar>(params: &[Tensor<F>], xs: &[F], t: usize, d: usize, h: usize) -> RecurrentTrace<F> {
    let wz = params[0].data();
    let uz = params[1].data();
    let bz = params[2].data();
    let wh = params[3].data();
    let uh = params[4].data();
    let bh = params[5].data();
    let mut hs = vec![F::ZERO; (t + 1) * h];
    let mut zs = vec![F::ZERO; t * h];
    let mut cs = vec![F::ZERO; t * h];
    let mut az = vec![F::ZERO; h];
    let mut ac = vec![F::ZERO; h];
    for ti in 0..t {
        let x = &xs[ti * d..(ti + 1) * d];
        let h_prev = hs[ti * h..(ti + 1) * h].to_vec();
        az.copy_from_slice(bz);
        ac.copy_from_slice(bh);
        F::gemm(h, d, 1, F::ONE, wz, d as isize, 1, x, 1, 1, F::ONE, &mut az, 1, 1);
        F::gemm(h, h, 1, F::ONE, uz, h as isize, 1, &h_prev, 1, 1, F::ONE, &mut az, 1, 1);
        F::gemm(h, d, 1, F::ONE, wh, d as isize, 1, x, 1, 1, F::ONE, &mut ac, 1, 1);
        F::gemm(h, h, 1, F::ONE, uh, h as isize, 1, &h_prev, 1, 1, F::ONE, &mut ac, 1, 1);
        for j in 0..h {
            let z = az[j].sigmoid();
            let c = ac[j].tanh();
            zs[ti * h + j] = z;
            cs[ti * h + j] = c;
            hs[(ti + 1) * h + j] = (F::ONE - z) * h_prev[j] + z * c;
        }
    }
    RecurrentTrace {
        xs: xs.to_vec(),
        hs,
        zs,
        cs,
    }
}

fn recurrent_forward<F: Scalar>(
    params: &[Tensor<F>],
    input: &Tensor<F>,
    hidden: usize,
    bidirectional: bool,
    want_cache: bool,
) -> Result<(Tensor<F>, Option<LayerCache<F>>)> {
    let [t, d] = expect_rank2(input.shape(), "recurrent")?;
    let h = hidden;
    let fwd = run_direction(&params[0..6], input.data(), t, d, h);
    let out_width = if bidirectional { 2 * h } else { h };
    let mut out = Tensor::zeros(&[t, out_width]);
    for ti in 0..t {
        out.data_mut()[ti * out_width..ti * out_width + h]
            .copy_from_slice(&fwd.hs[(ti + 1) * h..(ti + 2) * h]);
    }
    let mut directions = vec![fwd];
    if bidirectional {
        // process the time-reversed sequence with the second parameter set
        let mut rev = vec![F::ZERO; t * d];
        for ti in 0..t {
            rev[ti * d..(ti + 1) * d].copy_from_slice(&input.data()[(t - 1 - ti) * d..(t - ti) * d]);
        }
        let bwd = run_direction(&params[6..12], &rev, t, d, h);
        for ti in 0..t {
            // state for original position ti comes from reversed step t-1-ti
            let src = &bwd.hs[(t - ti) * h..(t - ti + 1) * h];
            out.data_mut()[ti * out_width + h..(ti + 1) * out_width].copy_from_slice(src);
        }
        directions.push(bwd);
    }
    let cache = want_cache.then_some(LayerCache::Recurrent { directions });
    Ok((out, cache))
}

/// BPTT over one direction; returns (dxs in processing order, param grads).
fn direction_backward<F: Scalar>(
    params: &[Tensor<F>],
    trace: &RecurrentTrace<F>,
    dh_out: &[F], // [t, h] gradient on this direction's emitted states
    t: usize,
    d: usize,
    h: usize,
) -> (Vec<F>, Vec<Tensor<F>>) {
    let wz = params[0].data();
    let uz = params[1].data();
    let wh = params[3].data();
    let uh = params[4].data();
    let mut d_wz = Tensor::zeros(&[h, d]);
    let mut d_uz = Tensor::zeros(&[h, h]);
    let mut d_bz = Tensor::zeros(&[h]);
    let mut d_wh = Tensor::zeros(&[h, d]);
    let mut d_uh = Tensor::zeros(&[h, h]);
    let mut d_bh = Tensor::zeros(&[h]);
    let mut dxs = vec![F::ZERO; t * d];
    let mut carry = vec![F::ZERO; h];
    let mut daz = vec![F::ZERO; h];
    let mut dac = vec![F::ZERO; h];
    for ti in (0..t).rev() {
        let h_prev = &trace.hs[ti * h..(ti + 1) * h];
        let z = &trace.zs[ti * h..(ti + 1) * h];
        let c = &trace.cs[ti * h..(ti + 1) * h];
        let x = &trace.xs[ti * d..(ti + 1) * d];
        for j in 0..h {
            let dh = dh_out[ti * h + j] + carry[j];
            let dz = dh * (c[j] - h_prev[j]);
            let dc = dh * z[j];
            daz[j] = dz * z[j] * (F::ONE - z[j]);
            dac[j] = dc * (F::ONE - c[j] * c[j]);
            carry[j] = dh * (F::ONE - z[j]);
        }
        // parameter gradients: outer products accumulated
        for j in 0..h {
            let (gz, gc) = (daz[j], dac[j]);
            d_bz.data_mut()[j] += gz;
            d_bh.data_mut()[j] += gc;
            let wz_row = &mut d_wz.data_mut()[j * d..(j + 1) * d];
            let wh_row = &mut d_wh.data_mut()[j * d..(j + 1) * d];
            for k in 0..d {
                wz_row[k] += gz * x[k];
                wh_row[k] += gc * x[k];
            }
            let uz_row = &mut d_uz.data_mut()[j * h..(j + 1) * h];
            let uh_row = &mut d_uh.data_mut()[j * h..(j + 1) * h];
            for k in 0..h {
                uz_row[k] += gz * h_prev[k];
                uh_row[k] += gc * h_prev[k];
            }
        }
        // dx = Wz^T daz + Wh^T dac
        let dx = &mut dxs[ti * d..(ti + 1) * d];
        F::gemm(d, h, 1, F::ONE, wz, 1, d as isize, &daz, 1, 1, F::ONE, dx, 1, 1);
        F::gemm(d, h, 1, F::ONE, wh, 1, d as isize, &dac, 1, 1, F::ONE, dx, 1, 1);
        // carry += Uz^T daz + Uh^T dac
        F::gemm(h, h, 1, F::ONE, uz, 1, h as isize, &daz, 1, 1, F::ONE, &mut carry, 1, 1);
        F::gemm(h, h, 1, F::ONE, uh, 1, h as isize, &dac, 1, 1, F::ONE, &mut carry, 1, 1);
    }
    (dxs, vec![d_wz, d_uz, d_bz, d_wh, d_uh, d_bh])
}

fn recurrent_backward<F: Scalar>(
    params: &[Tensor<F>],
    input_shape: &[usize],
    directions: &[RecurrentTrace<F>],
    dout: &Tensor<F>,
    hidden: usize,
    bidirectional: bool,
) -> Result<(Tensor<F>, Vec<Tensor<F>>)> {
    let [t, d] = expect_rank2(input_shape, "recurrent")?;
    let h = hidden;
    let out_width = if bidirectional { 2 * h } else { h };
    // split dout into per-direction [t, h] slices in processing order
    let mut dh_fwd = vec![F::ZERO; t * h];
    for ti in 0..t {
        dh_fwd[ti * h..(ti + 1) * h].copy_from_slice(&dout.data()[ti * out_width..ti * out_width + h]);
    }
    let (dx_fwd, grads_fwd) = direction_backward(&params[0..6], &directions[0], &dh_fwd, t, d, h);
    let mut dinput = Tensor::from_vec(input_shape, dx_fwd)?;
    let mut grads = grads_fwd;
    if bidirectional {
        let mut dh_bwd = vec![F::ZERO; t * h];
        for ti in 0..t {
            // reversed step ti corresponds to original position t-1-ti
            let orig = t - 1 - ti;
            dh_bwd[ti * h..(ti + 1) * h]
                .copy_from_slice(&dout.data()[orig * out_width + h..(orig + 1) * out_width]);
        }
        let (dx_rev, grads_bwd) = direction_backward(&params[6..12], &directions[1], &dh_bwd, t, d, h);
        for ti in 0..t {
            let orig = t - 1 - ti;
            let dst = &mut dinput.data_mut()[orig * d..(orig + 1) * d];
            for (dv, &s) in dst.iter_mut().zip(&dx_rev[ti * d..(ti + 1) * d]) {
                *dv += s;
            }
        }
        grads.extend(grads_bwd);
    }
    Ok((dinput, grads))
}
