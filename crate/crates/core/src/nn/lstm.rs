//! A single LSTM cell with caches sized for truncation-free backprop
//! through time over fixed-length sequences.
//!
//! Gate layout along the `4h` axis is `[input, forget, candidate, output]`
//! with sigmoid/sigmoid/tanh/sigmoid activations:
//!
//! ```text
//! c' = f * c + i * g
//! h' = o * tanh(c')
//! ```

use crate::error::{Error, Result};
use crate::nn::tensor::{matmul_into, matmul_ta_into, matmul_tb_into, Element, Tensor};

fn sigmoid<T: Element>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Everything the backward step needs from one forward step.
pub struct LstmStepCache<T> {
    /// Post-activation gates `[b, 4h]` in `[i, f, g, o]` order.
    gates: Tensor<T>,
    /// Cell state entering the step `[b, h]`.
    c_prev: Tensor<T>,
    /// `tanh(c')` of the produced cell state `[b, h]`.
    tanh_c: Tensor<T>,
    /// Step input `[b, d_in]`.
    x: Tensor<T>,
    /// Hidden state entering the step `[b, h]`.
    h_prev: Tensor<T>,
}

/// One step over a batch: `x [b, d_in]`, states `[b, h]`, weights
/// `wx [d_in, 4h]`, `wh [h, 4h]`, bias `[4h]`.
/// Returns `(h_next, c_next, cache)`.
pub fn lstm_step<T: Element>(
    x: &Tensor<T>,
    h_prev: &Tensor<T>,
    c_prev: &Tensor<T>,
    wx: &Tensor<T>,
    wh: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, LstmStepCache<T>)> {
    let (b, d_in) = (x.shape()[0], x.shape()[1]);
    let h = h_prev.shape()[1];
    if wx.shape() != [d_in, 4 * h] || wh.shape() != [h, 4 * h] || bias.shape() != [4 * h] {
        return Err(Error::ShapeMismatch(format!(
            "lstm_step weights disagree with d_in={d_in}, hidden={h}: wx {:?}, wh {:?}, bias {:?}",
            wx.shape(),
            wh.shape(),
            bias.shape()
        )));
    }
    if h_prev.shape()[0] != b || c_prev.shape() != h_prev.shape() {
        return Err(Error::ShapeMismatch(format!(
            "lstm_step states must be [{b}, {h}]; got h {:?}, c {:?}",
            h_prev.shape(),
            c_prev.shape()
        )));
    }

    // Pre-activations: bias + x @ wx + h @ wh.
    let mut gates = Tensor::zeros(&[b, 4 * h]);
    for i in 0..b {
        gates.row_mut(i).copy_from_slice(bias.data());
    }
    matmul_into(x.data(), wx.data(), gates.data_mut(), b, d_in, 4 * h);
    matmul_into(h_prev.data(), wh.data(), gates.data_mut(), b, h, 4 * h);

    let mut h_next = Tensor::zeros(&[b, h]);
    let mut c_next = Tensor::zeros(&[b, h]);
    let mut tanh_c = Tensor::zeros(&[b, h]);
    for r in 0..b {
        let g = gates.row_mut(r);
        for j in 0..h {
            g[j] = sigmoid(g[j]);
            g[h + j] = sigmoid(g[h + j]);
            g[2 * h + j] = g[2 * h + j].tanh();
            g[3 * h + j] = sigmoid(g[3 * h + j]);
        }
        let cp = c_prev.row(r);
        for j in 0..h {
            let c_new = g[h + j] * cp[j] + g[j] * g[2 * h + j];
            let tc = c_new.tanh();
            c_next.row_mut(r)[j] = c_new;
            tanh_c.row_mut(r)[j] = tc;
            h_next.row_mut(r)[j] = g[3 * h + j] * tc;
        }
    }

    let cache = LstmStepCache {
        gates,
        c_prev: c_prev.clone(),
        tanh_c,
        x: x.clone(),
        h_prev: h_prev.clone(),
    };
    Ok((h_next, c_next, cache))
}

/// Gradients flowing out of one backward step.
pub struct LstmStepGrads<T> {
    pub d_x: Tensor<T>,
    pub d_h_prev: Tensor<T>,
    pub d_c_prev: Tensor<T>,
}

/// Backward through one step. `d_h` / `d_c` are the gradients arriving at
/// this step's outputs; weight gradients accumulate into the provided
/// buffers so a sequence sums its own BPTT contributions.
pub fn lstm_step_backward<T: Element>(
    d_h: &Tensor<T>,
    d_c: &Tensor<T>,
    cache: &LstmStepCache<T>,
    wx: &Tensor<T>,
    wh: &Tensor<T>,
    d_wx: &mut Tensor<T>,
    d_wh: &mut Tensor<T>,
    d_bias: &mut Tensor<T>,
) -> LstmStepGrads<T> {
    let (b, d_in) = (cache.x.shape()[0], cache.x.shape()[1]);
    let h = cache.h_prev.shape()[1];
    debug_assert_eq!(d_h.shape(), &[b, h]);
    debug_assert_eq!(d_c.shape(), &[b, h]);

    let mut d_gates = Tensor::zeros(&[b, 4 * h]);
    let mut d_c_prev = Tensor::zeros(&[b, h]);
    for r in 0..b {
        let g = cache.gates.row(r);
        let tc = cache.tanh_c.row(r);
        let cp = cache.c_prev.row(r);
        let dh = d_h.row(r);
        let dc_in = d_c.row(r);
        let dg = d_gates.row_mut(r);
        for j in 0..h {
            let (ig, fg, gg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            // Total cell-state gradient: from h' through o*tanh, plus the
            // gradient already flowing on the cell path.
            let dc = dh[j] * og * (T::one() - tc[j] * tc[j]) + dc_in[j];
            dg[j] = dc * gg * ig * (T::one() - ig); // input gate (sigmoid')
            dg[h + j] = dc * cp[j] * fg * (T::one() - fg); // forget gate
            dg[2 * h + j] = dc * ig * (T::one() - gg * gg); // candidate (tanh')
            dg[3 * h + j] = dh[j] * tc[j] * og * (T::one() - og); // output gate
            d_c_prev.row_mut(r)[j] = dc * fg;
        }
    }

    for r in 0..b {
        for (db, &dg) in d_bias.data_mut().iter_mut().zip(d_gates.row(r)) {
            *db += dg;
        }
    }
    matmul_ta_into(
        cache.x.data(),
        d_gates.data(),
        d_wx.data_mut(),
        b,
        d_in,
        4 * h,
    );
    matmul_ta_into(
        cache.h_prev.data(),
        d_gates.data(),
        d_wh.data_mut(),
        b,
        h,
        4 * h,
    );

    let mut d_x = Tensor::zeros(&[b, d_in]);
    matmul_tb_into(d_gates.data(), wx.data(), d_x.data_mut(), b, 4 * h, d_in);
    let mut d_h_prev = Tensor::zeros(&[b, h]);
    matmul_tb_into(d_gates.data(), wh.data(), d_h_prev.data_mut(), b, 4 * h, h);

    LstmStepGrads {
        d_x,
        d_h_prev,
        d_c_prev,
    }
}
