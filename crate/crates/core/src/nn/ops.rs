//! Layer kernels with exact analytic backward passes.
//!
//! Every forward here has a matching backward that is verified against
//! central finite differences in [`crate::nn::gradcheck`]. Convolution is
//! cross-correlation with valid padding and stride 1 throughout.

use crate::error::{Error, Result};
use crate::nn::tensor::{matmul_into, matmul_ta_into, matmul_tb_into, Element, Tensor};

/// Affine map `rows(input) @ w + b` for `input [n, d_in]`, `w [d_in, d_out]`.
pub fn dense_forward<T: Element>(
    input: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    if input.rank() != 2 || w.rank() != 2 || b.rank() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "dense expects input [n,d_in], w [d_in,d_out], b [d_out]; got {:?} {:?} {:?}",
            input.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let (n, d_in) = (input.shape()[0], input.shape()[1]);
    let (wi, d_out) = (w.shape()[0], w.shape()[1]);
    if d_in != wi || b.shape()[0] != d_out {
        return Err(Error::ShapeMismatch(format!(
            "dense dims disagree: input {:?}, w {:?}, b {:?}",
            input.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(&[n, d_out]);
    for i in 0..n {
        out.row_mut(i).copy_from_slice(b.data());
    }
    matmul_into(input.data(), w.data(), out.data_mut(), n, d_in, d_out);
    Ok(out)
}

/// Gradients of [`dense_forward`]: returns `(d_input, d_w, d_b)`.
pub fn dense_backward<T: Element>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    w: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, d_in) = (input.shape()[0], input.shape()[1]);
    let d_out = w.shape()[1];
    debug_assert_eq!(grad_out.shape(), &[n, d_out]);

    let mut grad_input = Tensor::zeros(&[n, d_in]);
    matmul_tb_into(
        grad_out.data(),
        w.data(),
        grad_input.data_mut(),
        n,
        d_out,
        d_in,
    );

    let mut grad_w = Tensor::zeros(&[d_in, d_out]);
    matmul_ta_into(
        input.data(),
        grad_out.data(),
        grad_w.data_mut(),
        n,
        d_in,
        d_out,
    );

    let mut grad_b = Tensor::zeros(&[d_out]);
    for i in 0..n {
        for (gb, &g) in grad_b.data_mut().iter_mut().zip(grad_out.row(i)) {
            *gb += g;
        }
    }
    (grad_input, grad_w, grad_b)
}

fn conv_out_dims<T: Element>(input: &Tensor<T>, kernel: &Tensor<T>) -> Result<(usize, usize)> {
    if input.rank() != 4 || kernel.rank() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d expects input [n,h,w,c_in] and kernel [kh,kw,c_in,c_out]; got {:?} {:?}",
            input.shape(),
            kernel.shape()
        )));
    }
    let (h, w, c_in) = (input.shape()[1], input.shape()[2], input.shape()[3]);
    let (kh, kw, kc_in) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if kc_in != c_in {
        return Err(Error::ShapeMismatch(format!(
            "conv2d input has {c_in} channels, kernel expects {kc_in}"
        )));
    }
    if kh > h || kw > w {
        return Err(Error::ShapeMismatch(format!(
            "conv2d kernel {kh}x{kw} larger than input {h}x{w}"
        )));
    }
    Ok((h - kh + 1, w - kw + 1))
}

/// Unrolls valid-padding patches into rows of `[n*oh*ow, kh*kw*c_in]`,
/// matching the row-major flattening of the kernel.
fn im2col<T: Element>(input: &Tensor<T>, kh: usize, kw: usize, oh: usize, ow: usize) -> Tensor<T> {
    let (n, h, w, c_in) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let patch = kh * kw * c_in;
    let mut col = Tensor::zeros(&[n * oh * ow, patch]);
    let src = input.data();
    let dst = col.data_mut();
    let mut row = 0;
    for b in 0..n {
        let base_b = b * h * w * c_in;
        for y in 0..oh {
            for x in 0..ow {
                let dst_row = &mut dst[row * patch..(row + 1) * patch];
                let mut off = 0;
                for i in 0..kh {
                    let base = base_b + ((y + i) * w + x) * c_in;
                    let run = kw * c_in;
                    dst_row[off..off + run].copy_from_slice(&src[base..base + run]);
                    off += run;
                }
                row += 1;
            }
        }
    }
    col
}

/// Valid-padding stride-1 cross-correlation.
/// `input [n,h,w,c_in] * kernel [kh,kw,c_in,c_out] -> [n, h-kh+1, w-kw+1, c_out]`.
pub fn conv2d_forward<T: Element>(input: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let (oh, ow) = conv_out_dims(input, kernel)?;
    let n = input.shape()[0];
    let (kh, kw, c_in, c_out) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    let col = im2col(input, kh, kw, oh, ow);
    let m = n * oh * ow;
    let patch = kh * kw * c_in;
    let mut out = Tensor::zeros(&[n, oh, ow, c_out]);
    matmul_into(col.data(), kernel.data(), out.data_mut(), m, patch, c_out);
    Ok(out)
}

/// Gradients of [`conv2d_forward`]: returns `(d_input, d_kernel)`.
pub fn conv2d_backward<T: Element>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (n, h, w, c_in) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (kh, kw, _, c_out) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    debug_assert_eq!(grad_out.shape(), &[n, oh, ow, c_out]);
    let m = n * oh * ow;
    let patch = kh * kw * c_in;

    let col = im2col(input, kh, kw, oh, ow);
    let mut grad_kernel = Tensor::zeros(&[kh, kw, c_in, c_out]);
    matmul_ta_into(
        col.data(),
        grad_out.data(),
        grad_kernel.data_mut(),
        m,
        patch,
        c_out,
    );

    // d_col = grad_out @ kernelᵀ, then scatter-add patches back.
    let mut grad_col = Tensor::zeros(&[m, patch]);
    matmul_tb_into(
        grad_out.data(),
        kernel.data(),
        grad_col.data_mut(),
        m,
        c_out,
        patch,
    );
    let mut grad_input = Tensor::zeros(&[n, h, w, c_in]);
    let gin = grad_input.data_mut();
    let gcol = grad_col.data();
    let mut row = 0;
    for b in 0..n {
        let base_b = b * h * w * c_in;
        for y in 0..oh {
            for x in 0..ow {
                let src_row = &gcol[row * patch..(row + 1) * patch];
                let mut off = 0;
                for i in 0..kh {
                    let base = base_b + ((y + i) * w + x) * c_in;
                    let run = kw * c_in;
                    for (dst, &g) in gin[base..base + run]
                        .iter_mut()
                        .zip(&src_row[off..off + run])
                    {
                        *dst += g;
                    }
                    off += run;
                }
                row += 1;
            }
        }
    }
    (grad_input, grad_kernel)
}

/// Per-channel batch normalization over `[n,h,w,c]`.
#[derive(Clone, Debug)]
pub struct BatchNormState<T> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Element> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            momentum: T::from_f64(0.9),
            eps: T::from_f64(1e-5),
        }
    }
}

/// Saved activations batchnorm_backward needs.
pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

/// Train mode normalizes with batch statistics and folds them into the
/// running estimates; eval mode applies the running estimates unchanged.
pub fn batchnorm_forward<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BatchNormState<T>,
    training: bool,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    if input.rank() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm expects [n,h,w,c], got {:?}",
            input.shape()
        )));
    }
    let (n, h, w, c) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm gamma/beta must be [{c}]"
        )));
    }
    if training && n < 2 {
        return Err(Error::InvalidConfig(format!(
            "batchnorm train mode needs batch >= 2, got {n}"
        )));
    }
    let m = n * h * w;
    let m_t = T::from_f64(m as f64);

    let (mean, var) = if training {
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for pos in 0..m {
            let row = &input.data()[pos * c..(pos + 1) * c];
            for (mc, &v) in mean.iter_mut().zip(row) {
                *mc += v;
            }
        }
        for mc in mean.iter_mut() {
            *mc /= m_t;
        }
        for pos in 0..m {
            let row = &input.data()[pos * c..(pos + 1) * c];
            for ((vc, &mu), &v) in var.iter_mut().zip(&mean).zip(row) {
                let d = v - mu;
                *vc += d * d;
            }
        }
        for vc in var.iter_mut() {
            *vc /= m_t;
        }
        let mom = state.momentum;
        let one_m = T::one() - mom;
        for (r, &b) in state.running_mean.data_mut().iter_mut().zip(&mean) {
            *r = mom * *r + one_m * b;
        }
        for (r, &b) in state.running_var.data_mut().iter_mut().zip(&var) {
            *r = mom * *r + one_m * b;
        }
        (mean, var)
    } else {
        (
            state.running_mean.data().to_vec(),
            state.running_var.data().to_vec(),
        )
    };

    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::one() / (v + state.eps).sqrt())
        .collect();
    let mut xhat = Tensor::zeros(&[n, h, w, c]);
    let mut out = Tensor::zeros(&[n, h, w, c]);
    {
        let xh = xhat.data_mut();
        let o = out.data_mut();
        let x = input.data();
        for pos in 0..m {
            let base = pos * c;
            for ch in 0..c {
                let v = (x[base + ch] - mean[ch]) * inv_std[ch];
                xh[base + ch] = v;
                o[base + ch] = gamma.data()[ch] * v + beta.data()[ch];
            }
        }
    }
    let cache = training.then_some(BatchNormCache { xhat, inv_std });
    Ok((out, cache))
}

/// Train-mode gradients through the batch statistics:
/// returns `(d_input, d_gamma, d_beta)`.
pub fn batchnorm_backward<T: Element>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let shape = grad_out.shape().to_vec();
    let c = shape[3];
    let m = grad_out.len() / c;
    let m_t = T::from_f64(m as f64);

    let mut d_gamma = Tensor::zeros(&[c]);
    let mut d_beta = Tensor::zeros(&[c]);
    let mut sum_dxhat = vec![T::zero(); c];
    let mut sum_dxhat_xhat = vec![T::zero(); c];

    let g = grad_out.data();
    let xh = cache.xhat.data();
    for pos in 0..m {
        let base = pos * c;
        for ch in 0..c {
            let go = g[base + ch];
            let x = xh[base + ch];
            d_beta.data_mut()[ch] += go;
            d_gamma.data_mut()[ch] += go * x;
            let dxhat = go * gamma.data()[ch];
            sum_dxhat[ch] += dxhat;
            sum_dxhat_xhat[ch] += dxhat * x;
        }
    }

    let mut d_input = Tensor::zeros(&shape);
    let di = d_input.data_mut();
    for pos in 0..m {
        let base = pos * c;
        for ch in 0..c {
            let dxhat = g[base + ch] * gamma.data()[ch];
            di[base + ch] = cache.inv_std[ch] / m_t
                * (m_t * dxhat - sum_dxhat[ch] - xh[base + ch] * sum_dxhat_xhat[ch]);
        }
    }
    (d_input, d_gamma, d_beta)
}

pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

/// `d_input = grad_out * 1[input > 0]`.
pub fn relu_backward<T: Element>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Tensor<T> {
    debug_assert!(grad_out.same_shape(input));
    let mut out = grad_out.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *g = T::zero();
        }
    }
    out
}

/// Row softmax with the max-subtraction trick.
pub fn softmax_rows<T: Element>(logits: &Tensor<T>) -> Tensor<T> {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let mut out = Tensor::zeros(&[n, k]);
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let dst = out.row_mut(i);
        let mut sum = T::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

/// Mean negative log-likelihood over two-class logits with the fused
/// gradient `(softmax - onehot) / n`. Returns `(loss, probabilities, grad)`.
pub fn softmax_crossentropy<T: Element>(
    logits: &Tensor<T>,
    labels: &[bool],
) -> Result<(T, Tensor<T>, Tensor<T>)> {
    if logits.rank() != 2 || logits.shape()[1] != 2 {
        return Err(Error::ShapeMismatch(format!(
            "softmax_crossentropy expects [n,2] logits, got {:?}",
            logits.shape()
        )));
    }
    let n = logits.shape()[0];
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    let probs = softmax_rows(logits);
    let n_t = T::from_f64(n as f64);
    let mut loss = T::zero();
    let mut grad = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        let target = usize::from(label);
        let p = probs.row(i)[target];
        // Clamp to avoid -inf from a fully saturated wrong prediction.
        loss -= p.max(T::from_f64(1e-30)).ln();
        grad.row_mut(i)[target] -= T::one();
    }
    for g in grad.data_mut() {
        *g /= n_t;
    }
    Ok((loss / n_t, probs, grad))
}

/// Mean squared error over all elements; grad wrt `pred`.
pub fn mse_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> (T, Tensor<T>) {
    assert!(pred.same_shape(target));
    let n_t = T::from_f64(pred.len() as f64);
    let mut loss = T::zero();
    let mut grad = pred.clone();
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        loss += d * d;
        *g = T::from_f64(2.0) * d / n_t;
    }
    (loss / n_t, grad)
}
