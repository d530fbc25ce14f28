//! Central finite-difference verification of every backward pass.
//!
//! All checks run at 64-bit precision. The probe perturbs one coordinate at
//! a time by `EPS` in both directions and compares the secant slope against
//! the analytic gradient; the reported error is
//! `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
//!
//! Fragments containing a ReLU resample their inputs until every
//! pre-activation sits at least [`KINK_MARGIN`] from zero, so a probe of
//! size `EPS` can never push an activation across the kink and invalidate
//! the two-sided difference.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::adam::glorot_uniform;
use crate::nn::lstm::{lstm_step, lstm_step_backward};
use crate::nn::ops::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, dense_backward,
    dense_forward, mse_loss, relu, relu_backward, softmax_crossentropy, BatchNormState,
};
use crate::nn::tensor::Tensor;
use crate::rng::{stream, StreamTag};

const EPS: f64 = 1e-5;
pub const KINK_MARGIN: f64 = 1e-3;
/// Coordinates probed per tensor; tensors at or under this size are probed
/// exhaustively, larger ones are subsampled.
const PROBE_CAP: usize = 48;

/// Tolerance for purely linear ops (dense, conv, softmax-CE fused grad).
pub const TOL_LINEAR: f64 = 1e-6;
/// Tolerance for a single LSTM step.
pub const TOL_LSTM: f64 = 1e-5;
/// Tolerance for batchnorm and multi-layer composites.
pub const TOL_COMPOSITE: f64 = 1e-4;

/// Outcome of one named check (possibly aggregated over many trials).
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub coords_checked: usize,
    pub trials: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares `analytic` against central differences of `loss` at the current
/// parameter values. Returns `(max_rel_error, coords_checked)`.
pub fn compare_gradients<F>(
    params: &mut Vec<Tensor<f64>>,
    analytic: &[Tensor<f64>],
    mut loss: F,
    rng: &mut ChaCha8Rng,
) -> (f64, usize)
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for pi in 0..params.len() {
        let len = params[pi].len();
        let coords: Vec<usize> = if len <= PROBE_CAP {
            (0..len).collect()
        } else {
            sample(rng, len, PROBE_CAP).into_vec()
        };
        for ci in coords {
            let orig = params[pi].data()[ci];
            params[pi].data_mut()[ci] = orig + EPS;
            let f_plus = loss(params);
            params[pi].data_mut()[ci] = orig - EPS;
            let f_minus = loss(params);
            params[pi].data_mut()[ci] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * EPS);
            let ana = analytic[pi].data()[ci];
            let rel = (ana - numeric).abs() / ana.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}

fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(lo..hi);
    }
    t
}

/// Dense layer: checks d_input, d_w, d_b against an MSE head.
/// `dims` pins the shape (the randomized suite varies it).
pub fn check_dense(
    rng: &mut ChaCha8Rng,
    dims: (usize, usize, usize),
    corrupt: bool,
) -> GradCheckReport {
    let (n, d_in, d_out) = dims;
    let input = rand_tensor(&[n, d_in], -1.0, 1.0, rng);
    let w: Tensor<f64> = glorot_uniform(&[d_in, d_out], d_in, d_out, rng);
    let b = rand_tensor(&[d_out], -0.5, 0.5, rng);
    let target = rand_tensor(&[n, d_out], -1.0, 1.0, rng);

    let out = dense_forward(&input, &w, &b).unwrap();
    let (_, d_out_grad) = mse_loss(&out, &target);
    let (d_input, mut d_w, d_b) = dense_backward(&d_out_grad, &input, &w);
    if corrupt {
        // Deliberate off-by-factor-2 to prove the probe catches bad math.
        for g in d_w.data_mut() {
            *g *= 2.0;
        }
    }

    let mut params = vec![input, w, b];
    let analytic = [d_input, d_w, d_b];
    let (err, coords) = compare_gradients(
        &mut params,
        &analytic,
        |p| {
            let out = dense_forward(&p[0], &p[1], &p[2]).unwrap();
            mse_loss(&out, &target).0
        },
        rng,
    );
    GradCheckReport {
        name: "dense".into(),
        max_rel_error: err,
        tolerance: TOL_LINEAR,
        coords_checked: coords,
        trials: 1,
    }
}

/// Convolution: checks d_input and d_kernel.
pub fn check_conv2d(
    rng: &mut ChaCha8Rng,
    dims: Option<(usize, usize, usize, usize, usize, usize, usize)>,
) -> GradCheckReport {
    let (n, h, w, c_in, kh, kw, c_out) = dims.unwrap_or_else(|| {
        let h = rng.random_range(4..=8);
        let w = rng.random_range(4..=8);
        (
            rng.random_range(1..=3),
            h,
            w,
            rng.random_range(1..=3),
            rng.random_range(1..=4.min(h)),
            rng.random_range(1..=4.min(w)),
            rng.random_range(1..=3),
        )
    });
    let input = rand_tensor(&[n, h, w, c_in], -1.0, 1.0, rng);
    let kernel: Tensor<f64> = glorot_uniform(&[kh, kw, c_in, c_out], kh * kw * c_in, c_out, rng);
    let target = rand_tensor(&[n, h - kh + 1, w - kw + 1, c_out], -1.0, 1.0, rng);

    let out = conv2d_forward(&input, &kernel).unwrap();
    let (_, d_out) = mse_loss(&out, &target);
    let (d_input, d_kernel) = conv2d_backward(&d_out, &input, &kernel);

    let mut params = vec![input, kernel];
    let analytic = [d_input, d_kernel];
    let (err, coords) = compare_gradients(
        &mut params,
        &analytic,
        |p| {
            let out = conv2d_forward(&p[0], &p[1]).unwrap();
            mse_loss(&out, &target).0
        },
        rng,
    );
    GradCheckReport {
        name: "conv2d".into(),
        max_rel_error: err,
        tolerance: TOL_LINEAR,
        coords_checked: coords,
        trials: 1,
    }
}

/// Train-mode batchnorm: gradients couple through the batch statistics.
pub fn check_batchnorm(
    rng: &mut ChaCha8Rng,
    dims: Option<(usize, usize, usize, usize)>,
) -> GradCheckReport {
    let (n, h, w, c) = dims.unwrap_or_else(|| {
        (
            rng.random_range(2..=5),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
            rng.random_range(1..=4),
        )
    });
    let input = rand_tensor(&[n, h, w, c], -2.0, 2.0, rng);
    let gamma = rand_tensor(&[c], 0.5, 1.5, rng);
    let beta = rand_tensor(&[c], -0.5, 0.5, rng);
    let target = rand_tensor(&[n, h, w, c], -1.0, 1.0, rng);

    let mut state = BatchNormState::new(c);
    let (out, cache) = batchnorm_forward(&input, &gamma, &beta, &mut state, true).unwrap();
    let (_, d_out) = mse_loss(&out, &target);
    let (d_input, d_gamma, d_beta) = batchnorm_backward(&d_out, &gamma, &cache.unwrap());

    let mut params = vec![input, gamma, beta];
    let analytic = [d_input, d_gamma, d_beta];
    let (err, coords) = compare_gradients(
        &mut params,
        &analytic,
        |p| {
            let mut state = BatchNormState::new(p[1].len());
            let (out, _) = batchnorm_forward(&p[0], &p[1], &p[2], &mut state, true).unwrap();
            mse_loss(&out, &target).0
        },
        rng,
    );
    GradCheckReport {
        name: "batchnorm".into(),
        max_rel_error: err,
        tolerance: TOL_COMPOSITE,
        coords_checked: coords,
        trials: 1,
    }
}

/// ReLU through an MSE head; inputs resampled away from the kink.
pub fn check_relu(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let n = rng.random_range(2..=6);
    let d = rng.random_range(2..=8);
    let input = loop {
        let t = rand_tensor(&[n, d], -1.0, 1.0, rng);
        if t.data().iter().all(|v| v.abs() > KINK_MARGIN) {
            break t;
        }
    };
    let target = rand_tensor(&[n, d], -1.0, 1.0, rng);
    let out = relu(&input);
    let (_, d_out) = mse_loss(&out, &target);
    let d_input = relu_backward(&d_out, &input);

    let mut params = vec![input];
    let analytic = [d_input];
    let (err, coords) = compare_gradients(
        &mut params,
        &analytic,
        |p| mse_loss(&relu(&p[0]), &target).0,
        rng,
    );
    GradCheckReport {
        name: "relu".into(),
        max_rel_error: err,
        tolerance: TOL_LINEAR,
        coords_checked: coords,
        trials: 1,
    }
}

/// Fused softmax cross-entropy gradient against the raw loss value.
pub fn check_softmax_crossentropy(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let n = rng.random_range(2..=16);
    let logits = rand_tensor(&[n, 2], -3.0, 3.0, rng);
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let (_, _, grad) = softmax_crossentropy(&logits, &labels).unwrap();

    let mut params = vec![logits];
    let analytic = [grad];
    let (err, coords) = compare_gradients(
        &mut params,
        &analytic,
        |p| softmax_crossentropy(&p[0], &labels).unwrap().0,
        rng,
    );
    GradCheckReport {
        name: "softmax_crossentropy".into(),
        max_rel_error: err,
        tolerance: TOL_LINEAR,
        coords_checked: coords,
        trials: 1,
    }
}

/// One LSTM step; the loss reads both the hidden and the cell output so
/// every gate path carries gradient.
pub fn check_lstm_step(
    rng: &mut ChaCha8Rng,
    dims: Option<(usize, usize, usize)>,
) -> GradCheckReport {
    let (b, d_in, hidden) = dims.unwrap_or_else(|| {
        (
            rng.random_range(1..=3),
            rng.random_range(2..=5),
            rng.random_range(2..=6),
        )
    });
    let x = rand_tensor(&[b, d_in], -1.0, 1.0, rng);
    let h0 = rand_tensor(&[b, hidden], -0.5, 0.5, rng);
    let c0 = rand_tensor(&[b, hidden], -0.5, 0.5, rng);
    let wx: Tensor<f64> = glorot_uniform(&[d_in, 4 * hidden], d_in, hidden, rng);
    let wh: Tensor<f64> = glorot_uniform(&[hidden, 4 * hidden], hidden, hidden, rng);
    let bias = rand_tensor(&[4 * hidden], -0.2, 0.2, rng);
    let th = rand_tensor(&[b, hidden], -1.0, 1.0, rng);
    let tc = rand_tensor(&[b, hidden], -1.0, 1.0, rng);

    let (h1, c1, cache) = lstm_step(&x, &h0, &c0, &wx, &wh, &bias).unwrap();
    let (_, d_h) = mse_loss(&h1, &th);
    let (_, d_c) = mse_loss(&c1, &tc);
    let mut d_wx = Tensor::zeros(&[d_in, 4 * hidden]);
    let mut d_wh = Tensor::zeros(&[hidden, 4 * hidden]);
    let mut d_bias = Tensor::zeros(&[4 * hidden]);
    let grads = lstm_step_backward(
        &d_h,
        &d_c,
        &cache,
        &wx,
        &wh,
        &mut d_wx,
        &mut d_wh,
        &mut d_bias,
    );

    let mut params = vec![x, h0, c0, wx, wh, bias];
    let analytic = [
        grads.d_x,
        grads.d_h_prev,
        grads.d_c_prev,
        d_wx,
        d_wh,
        d_bias,
    ];
    let (err, coords) = compare_gradients(
        &mut params,
        &analytic,
        |p| {
            let (h1, c1, _) = lstm_step(&p[0], &p[1], &p[2], &p[3], &p[4], &p[5]).unwrap();
            mse_loss(&h1, &th).0 + mse_loss(&c1, &tc).0
        },
        rng,
    );
    GradCheckReport {
        name: "lstm_step".into(),
        max_rel_error: err,
        tolerance: TOL_LSTM,
        coords_checked: coords,
        trials: 1,
    }
}

/// Unrolled multi-step LSTM: verifies that weight gradients accumulated
/// across time sum the per-step contributions correctly.
pub fn check_lstm_sequence(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let steps = rng.random_range(3..=6);
    let b = rng.random_range(1..=2);
    let d_in = rng.random_range(2..=4);
    let hidden = rng.random_range(2..=5);

    let xs: Vec<Tensor<f64>> = (0..steps)
        .map(|_| rand_tensor(&[b, d_in], -1.0, 1.0, rng))
        .collect();
    let wx: Tensor<f64> = glorot_uniform(&[d_in, 4 * hidden], d_in, hidden, rng);
    let wh: Tensor<f64> = glorot_uniform(&[hidden, 4 * hidden], hidden, hidden, rng);
    let bias = rand_tensor(&[4 * hidden], -0.2, 0.2, rng);
    let targets: Vec<Tensor<f64>> = (0..steps)
        .map(|_| rand_tensor(&[b, hidden], -1.0, 1.0, rng))
        .collect();

    // Loss reads h at every step, so gradient flows along both the output
    // taps and the recurrent path.
    let run = |wx: &Tensor<f64>, wh: &Tensor<f64>, bias: &Tensor<f64>| {
        let mut h = Tensor::zeros(&[b, hidden]);
        let mut c = Tensor::zeros(&[b, hidden]);
        let mut loss = 0.0;
        let mut caches = Vec::with_capacity(steps);
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let (h1, c1, cache) = lstm_step(&xs[t], &h, &c, wx, wh, bias).unwrap();
            loss += mse_loss(&h1, &targets[t]).0;
            caches.push(cache);
            hs.push(h1.clone());
            h = h1;
            c = c1;
        }
        (loss, caches, hs)
    };

    let (_, caches, hs) = run(&wx, &wh, &bias);
    let mut d_wx = Tensor::zeros(&[d_in, 4 * hidden]);
    let mut d_wh = Tensor::zeros(&[hidden, 4 * hidden]);
    let mut d_bias = Tensor::zeros(&[4 * hidden]);
    let mut d_h = Tensor::zeros(&[b, hidden]);
    let mut d_c = Tensor::zeros(&[b, hidden]);
    for t in (0..steps).rev() {
        let (_, step_dh) = mse_loss(&hs[t], &targets[t]);
        for (acc, &g) in d_h.data_mut().iter_mut().zip(step_dh.data()) {
            *acc += g;
        }
        let grads = lstm_step_backward(
            &d_h,
            &d_c,
            &caches[t],
            &wx,
            &wh,
            &mut d_wx,
            &mut d_wh,
            &mut d_bias,
        );
        d_h = grads.d_h_prev;
        d_c = grads.d_c_prev;
    }

    let mut params = vec![wx, wh, bias];
    let analytic = [d_wx, d_wh, d_bias];
    let (err, coords) =
        compare_gradients(&mut params, &analytic, |p| run(&p[0], &p[1], &p[2]).0, rng);
    GradCheckReport {
        name: "lstm_sequence".into(),
        max_rel_error: err,
        tolerance: TOL_COMPOSITE,
        coords_checked: coords,
        trials: 1,
    }
}

/// The two-stage convolutional classifier at reduced width: 15×8 windows,
/// filters 9×1×2 and 6×8×3, batchnorm + ReLU after each convolution, then
/// a dense head into softmax cross-entropy.
pub fn check_cnn_reduced(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let n = 2;
    let (k1s, k2s) = ([9, 1, 1, 2], [6, 8, 2, 3]);
    let flat = 2 * 1 * 3; // output of the second stage per example

    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let forward = |p: &[Tensor<f64>]| -> (f64, Vec<Tensor<f64>>) {
        let (input, k1, g1, b1, k2, g2, b2, w, bf) = (
            &p[0], &p[1], &p[2], &p[3], &p[4], &p[5], &p[6], &p[7], &p[8],
        );
        let mut st1 = BatchNormState::new(2);
        let mut st2 = BatchNormState::new(3);
        let a1 = conv2d_forward(input, k1).unwrap();
        let (bn1, _) = batchnorm_forward(&a1, g1, b1, &mut st1, true).unwrap();
        let r1 = relu(&bn1);
        let a2 = conv2d_forward(&r1, k2).unwrap();
        let (bn2, _) = batchnorm_forward(&a2, g2, b2, &mut st2, true).unwrap();
        let r2 = relu(&bn2);
        let flat_t = r2.clone().reshape(&[n, flat]).unwrap();
        let logits = dense_forward(&flat_t, w, bf).unwrap();
        let (loss, _, _) = softmax_crossentropy(&logits, &labels).unwrap();
        (loss, vec![bn1, bn2])
    };

    // Resample until every ReLU pre-activation clears the kink margin.
    let mut params = loop {
        let input = rand_tensor(&[n, 15, 8, 1], -1.0, 1.0, rng);
        let k1: Tensor<f64> = glorot_uniform(&k1s, 9, 2, rng);
        let g1 = rand_tensor(&[2], 0.8, 1.2, rng);
        let b1 = rand_tensor(&[2], -0.3, 0.3, rng);
        let k2: Tensor<f64> = glorot_uniform(&k2s, 6 * 8 * 2, 3, rng);
        let g2 = rand_tensor(&[3], 0.8, 1.2, rng);
        let b2 = rand_tensor(&[3], -0.3, 0.3, rng);
        let w: Tensor<f64> = glorot_uniform(&[flat, 2], flat, 2, rng);
        let bf = rand_tensor(&[2], -0.2, 0.2, rng);
        let params = vec![input, k1, g1, b1, k2, g2, b2, w, bf];
        let (_, preacts) = forward(&params);
        if preacts
            .iter()
            .all(|t| t.data().iter().all(|v| v.abs() > KINK_MARGIN))
        {
            break params;
        }
    };

    // Analytic pass, mirroring the closure step for step.
    let analytic = {
        let (input, k1, g1, b1, k2, g2, b2, w, bf) = (
            &params[0], &params[1], &params[2], &params[3], &params[4], &params[5], &params[6],
            &params[7], &params[8],
        );
        let mut st1 = BatchNormState::new(2);
        let mut st2 = BatchNormState::new(3);
        let a1 = conv2d_forward(input, k1).unwrap();
        let (bn1, cache1) = batchnorm_forward(&a1, g1, b1, &mut st1, true).unwrap();
        let r1 = relu(&bn1);
        let a2 = conv2d_forward(&r1, k2).unwrap();
        let (bn2, cache2) = batchnorm_forward(&a2, g2, b2, &mut st2, true).unwrap();
        let r2 = relu(&bn2);
        let flat_t = r2.clone().reshape(&[n, flat]).unwrap();
        let logits = dense_forward(&flat_t, w, bf).unwrap();
        let (_, _, d_logits) = softmax_crossentropy(&logits, &labels).unwrap();

        let (d_flat, d_w, d_bf) = dense_backward(&d_logits, &flat_t, w);
        let d_r2 = d_flat.reshape(bn2.shape()).unwrap();
        let d_bn2 = relu_backward(&d_r2, &bn2);
        let (d_a2, d_g2, d_b2) = batchnorm_backward(&d_bn2, g2, &cache2.unwrap());
        let (d_r1, d_k2) = conv2d_backward(&d_a2, &r1, k2);
        let d_bn1 = relu_backward(&d_r1, &bn1);
        let (d_a1, d_g1, d_b1) = batchnorm_backward(&d_bn1, g1, &cache1.unwrap());
        let (d_input, d_k1) = conv2d_backward(&d_a1, input, k1);
        [d_input, d_k1, d_g1, d_b1, d_k2, d_g2, d_b2, d_w, d_bf]
    };

    let (err, coords) = compare_gradients(&mut params, &analytic, |p| forward(p).0, rng);
    GradCheckReport {
        name: "cnn_reduced".into(),
        max_rel_error: err,
        tolerance: TOL_COMPOSITE,
        coords_checked: coords,
        trials: 1,
    }
}

/// Runs `trials` randomized instances of every check and aggregates the
/// worst error per layer type. `corrupt` injects the off-by-factor-2 bug
/// into the dense backward as a negative control (the dense row must fail).
pub fn run_layer_suite(master_seed: u64, trials: usize, corrupt: bool) -> Vec<GradCheckReport> {
    let kinds: Vec<(&str, f64)> = vec![
        ("dense", TOL_LINEAR),
        ("conv2d", TOL_LINEAR),
        ("batchnorm", TOL_COMPOSITE),
        ("relu", TOL_LINEAR),
        ("softmax_crossentropy", TOL_LINEAR),
        ("lstm_step", TOL_LSTM),
        ("lstm_sequence", TOL_COMPOSITE),
        ("cnn_reduced", TOL_COMPOSITE),
    ];
    let mut out = Vec::with_capacity(kinds.len());
    for (ki, (name, tol)) in kinds.iter().enumerate() {
        let mut worst = 0.0_f64;
        let mut coords = 0;
        for trial in 0..trials {
            let mut rng = stream(
                master_seed,
                (ki * trials + trial) as u64,
                StreamTag::GradCheck,
            );
            let report = match *name {
                "dense" => {
                    let dims = (
                        rng.random_range(2..=5),
                        rng.random_range(2..=8),
                        rng.random_range(2..=6),
                    );
                    check_dense(&mut rng, dims, corrupt)
                }
                "conv2d" => check_conv2d(&mut rng, None),
                "batchnorm" => check_batchnorm(&mut rng, None),
                "relu" => check_relu(&mut rng),
                "softmax_crossentropy" => check_softmax_crossentropy(&mut rng),
                "lstm_step" => check_lstm_step(&mut rng, None),
                "lstm_sequence" => check_lstm_sequence(&mut rng),
                "cnn_reduced" => check_cnn_reduced(&mut rng),
                _ => unreachable!(),
            };
            worst = worst.max(report.max_rel_error);
            coords += report.coords_checked;
        }
        out.push(GradCheckReport {
            name: (*name).into(),
            max_rel_error: worst,
            tolerance: *tol,
            coords_checked: coords,
            trials,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(index: u64) -> ChaCha8Rng {
        stream(0xC0FFEE, index, StreamTag::GradCheck)
    }

    #[test]
    fn dense_three_by_four_to_five_passes_tight_tolerance() {
        let report = check_dense(&mut rng(0), (3, 4, 5), false);
        assert!(report.passed(), "rel err {}", report.max_rel_error);
        assert!(report.max_rel_error < 1e-6);
    }

    #[test]
    fn corrupted_dense_backward_fails() {
        let report = check_dense(&mut rng(1), (3, 4, 5), true);
        assert!(!report.passed(), "corrupted backward slipped through");
    }

    #[test]
    fn conv_small_case_passes() {
        let report = check_conv2d(&mut rng(2), Some((1, 5, 5, 2, 3, 3, 1)));
        assert!(report.passed(), "rel err {}", report.max_rel_error);
    }

    #[test]
    fn batchnorm_four_by_three_by_three_by_two_passes() {
        let report = check_batchnorm(&mut rng(3), Some((4, 3, 3, 2)));
        assert!(report.passed(), "rel err {}", report.max_rel_error);
        assert!(report.max_rel_error < 1e-4);
    }

    #[test]
    fn softmax_fused_gradient_matches_probe() {
        let report = check_softmax_crossentropy(&mut rng(4));
        assert!(report.passed(), "rel err {}", report.max_rel_error);
        assert!(report.max_rel_error < 1e-6);
    }

    #[test]
    fn lstm_step_three_to_four_passes() {
        let report = check_lstm_step(&mut rng(5), Some((1, 3, 4)));
        assert!(report.passed(), "rel err {}", report.max_rel_error);
        assert!(report.max_rel_error < 1e-5);
    }

    #[test]
    fn lstm_sequence_accumulation_passes() {
        let report = check_lstm_sequence(&mut rng(6));
        assert!(report.passed(), "rel err {}", report.max_rel_error);
    }

    #[test]
    fn reduced_cnn_composite_passes() {
        let report = check_cnn_reduced(&mut rng(7));
        assert!(report.passed(), "rel err {}", report.max_rel_error);
        assert!(report.max_rel_error < 1e-4);
    }

    #[test]
    fn short_suite_runs_all_layers() {
        let reports = run_layer_suite(7, 2, false);
        assert_eq!(reports.len(), 8);
        for r in &reports {
            assert!(r.passed(), "{} rel err {}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn corrupt_suite_flags_dense() {
        let reports = run_layer_suite(7, 1, true);
        let dense = reports.iter().find(|r| r.name == "dense").unwrap();
        assert!(!dense.passed());
    }
}
