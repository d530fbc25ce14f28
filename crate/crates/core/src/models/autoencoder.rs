//! Bottleneck reconstruction model over flattened five-sample windows.
//!
//! The encoder squeezes a 400-value window down to 370 activations; the
//! decoder mirrors it back. After training on background-dominated windows,
//! the bottleneck plus the scalar reconstruction error (371 values total)
//! feed the random forest.

use super::{epoch_order, EarlyStopper, EpochRecord, StopDecision, TrainConfig};
use crate::dataset::AeWindow;
use crate::error::{Error, Result};
use crate::nn::ops::{dense_backward, dense_forward, mse_loss, relu, relu_backward};
use crate::nn::{glorot_uniform, AdamState, Element, Parameter, Tensor};
use crate::rng::{stream, StreamTag};

/// Default layer widths: input, two encoder steps, mirrored decoder.
pub const AE_WIDTHS: [usize; 5] = [400, 390, 370, 390, 400];

/// Bottleneck activations plus one reconstruction-error slot.
pub const AE_FEATURE_LEN: usize = AE_WIDTHS[2] + 1;

#[derive(Clone, Debug)]
pub struct AutoencoderModel<T: Element> {
    pub widths: Vec<usize>,
    /// `w1, b1, w2, b2, w3, b3, w4, b4` in layer order.
    pub params: Vec<Parameter<T>>,
}

/// Per-layer values retained for the backward pass.
struct ForwardCache<T: Element> {
    /// `acts[0]` is the input; `acts[i]` the post-activation of layer `i`.
    acts: Vec<Tensor<T>>,
    /// Pre-activations of the three hidden layers.
    preacts: Vec<Tensor<T>>,
    recon: Tensor<T>,
}

impl<T: Element> AutoencoderModel<T> {
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() != 5 {
            return Err(Error::InvalidConfig(format!(
                "autoencoder takes 5 layer widths, got {}",
                widths.len()
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("zero-width layer".into()));
        }
        if widths[0] != widths[4] {
            return Err(Error::InvalidConfig(format!(
                "reconstruction width {} must match input width {}",
                widths[4], widths[0]
            )));
        }
        let mut rng = stream(seed, 0, StreamTag::ModelInit);
        let mut params = Vec::with_capacity(8);
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            params.push(Parameter::new(
                format!("w{}", i + 1),
                glorot_uniform(&[fan_in, fan_out], fan_in, fan_out, &mut rng),
            ));
            params.push(Parameter::new(
                format!("b{}", i + 1),
                Tensor::zeros(&[fan_out]),
            ));
        }
        Ok(AutoencoderModel {
            widths: widths.to_vec(),
            params,
        })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn bottleneck_width(&self) -> usize {
        self.widths[2]
    }

    fn forward_cached(&self, x: &Tensor<T>) -> Result<ForwardCache<T>> {
        let mut acts = vec![x.clone()];
        let mut preacts = Vec::with_capacity(3);
        let mut cur = x.clone();
        for layer in 0..4 {
            let w = &self.params[2 * layer].value;
            let b = &self.params[2 * layer + 1].value;
            let z = dense_forward(&cur, w, b)?;
            if layer < 3 {
                let a = relu(&z);
                preacts.push(z);
                acts.push(a.clone());
                cur = a;
            } else {
                return Ok(ForwardCache {
                    acts,
                    preacts,
                    recon: z,
                });
            }
        }
        unreachable!()
    }

    /// Reconstruction and bottleneck activations for a batch of rows.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let cache = self.forward_cached(x)?;
        Ok((cache.recon, cache.acts[2].clone()))
    }

    /// One reconstruction pass with gradient accumulation. Returns the loss.
    pub fn train_step(&mut self, x: &Tensor<T>) -> Result<f64> {
        let cache = self.forward_cached(x)?;
        let (loss, mut grad) = mse_loss(&cache.recon, x);
        let loss = loss.to_f64();
        for layer in (0..4).rev() {
            let w = &self.params[2 * layer].value;
            let input = &cache.acts[layer];
            let (d_input, d_w, d_b) = dense_backward(&grad, input, w);
            accumulate(&mut self.params[2 * layer].grad, &d_w);
            accumulate(&mut self.params[2 * layer + 1].grad, &d_b);
            grad = if layer > 0 {
                relu_backward(&d_input, &cache.preacts[layer - 1])
            } else {
                d_input
            };
        }
        Ok(loss)
    }

    /// Mean squared reconstruction error over a batch, no gradients.
    pub fn reconstruction_loss(&self, x: &Tensor<T>) -> Result<f64> {
        let (recon, _) = self.forward(x)?;
        Ok(mse_loss(&recon, x).0.to_f64())
    }
}

fn accumulate<T: Element>(dst: &mut Tensor<T>, src: &Tensor<T>) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += *s;
    }
}

fn rows_to_tensor(windows: &[AeWindow], width: usize) -> Result<Tensor<f32>> {
    if windows.is_empty() {
        return Err(Error::EmptyInput("no reconstruction windows".into()));
    }
    let mut data = Vec::with_capacity(windows.len() * width);
    for w in windows {
        if w.vector.len() != width {
            return Err(Error::ShapeMismatch(format!(
                "window has {} values, model expects {}",
                w.vector.len(),
                width
            )));
        }
        data.extend_from_slice(&w.vector);
    }
    Tensor::from_vec(&[windows.len(), width], data)
}

/// Unsupervised reconstruction training with early stopping on validation
/// reconstruction loss. Returns the model that achieved the minimum
/// validation loss and the per-epoch curve.
pub fn train_autoencoder(
    train: &[AeWindow],
    val: &[AeWindow],
    widths: &[usize],
    config: &TrainConfig,
) -> Result<(AutoencoderModel<f32>, Vec<EpochRecord>)> {
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::InvalidConfig(
            "batch_size and max_epochs must be positive".into(),
        ));
    }
    let mut model = AutoencoderModel::<f32>::new(widths, config.seed)?;
    let width = model.input_width();
    let train_x = rows_to_tensor(train, width)?;
    let val_x = rows_to_tensor(val, width)?;

    let mut adam = AdamState::new(&model.params, config.learning_rate);
    let mut stopper = EarlyStopper::new(config.patience);
    let mut best_params = model.params.clone();
    let mut curve = Vec::new();

    for epoch in 1..=config.max_epochs {
        let order = epoch_order(train.len(), config.seed, epoch);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = gather_rows(&train_x, chunk);
            for p in &mut model.params {
                p.zero_grad();
            }
            let loss = model.train_step(&batch)?;
            adam.update(&mut model.params);
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = loss_sum / seen as f64;
        let val_loss = chunked_loss(&model, &val_x, 256)?;
        curve.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best_params = model.params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    model.params = best_params;
    Ok((model, curve))
}

fn gather_rows(x: &Tensor<f32>, indices: &[usize]) -> Tensor<f32> {
    let cols = x.cols();
    let mut data = Vec::with_capacity(indices.len() * cols);
    for &i in indices {
        data.extend_from_slice(x.row(i));
    }
    Tensor::from_vec(&[indices.len(), cols], data).expect("gathered rows are rectangular")
}

fn chunked_loss(model: &AutoencoderModel<f32>, x: &Tensor<f32>, chunk: usize) -> Result<f64> {
    let n = x.rows();
    let mut sum = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = gather_rows(x, &idx);
        sum += model.reconstruction_loss(&batch)? * (end - start) as f64;
        start = end;
    }
    Ok(sum / n as f64)
}

/// Feature rows for the forest: bottleneck activations followed by the
/// scalar reconstruction error of each window.
pub fn ae_features(model: &AutoencoderModel<f32>, windows: &[AeWindow]) -> Result<Tensor<f32>> {
    let width = model.input_width();
    let x = rows_to_tensor(windows, width)?;
    let n = windows.len();
    let feat_len = model.bottleneck_width() + 1;
    let mut out = Tensor::zeros(&[n, feat_len]);
    let chunk = 256;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = gather_rows(&x, &idx);
        let (recon, bottleneck) = model.forward(&batch)?;
        for (local, global) in (start..end).enumerate() {
            let row = out.row_mut(global);
            row[..feat_len - 1].copy_from_slice(bottleneck.row(local));
            let mut err = 0.0f64;
            for (r, t) in recon.row(local).iter().zip(batch.row(local)) {
                let d = (*r - *t) as f64;
                err += d * d;
            }
            row[feat_len - 1] = (err / width as f64) as f32;
        }
        start = end;
    }
    Ok(out)
}
