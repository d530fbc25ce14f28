//! Two-stage convolutional classifier over 15-sample × 80-server grids.
//!
//! A temporal filter slides down each server column, then a full-width
//! spatial filter collapses the server axis; both stages are batch-normalized
//! and rectified before a tiny linear head scores the window.

use serde::{Deserialize, Serialize};

use super::{epoch_order, EarlyStopper, EpochRecord, StopDecision, TrainConfig};
use crate::dataset::CnnWindow;
use crate::error::{Error, Result};
use crate::nn::ops::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, dense_backward,
    dense_forward, relu, relu_backward, softmax_crossentropy, softmax_rows, BatchNormCache,
    BatchNormState,
};
use crate::nn::{glorot_uniform, AdamState, Element, Parameter, Tensor};
use crate::rng::{stream, StreamTag};

/// Filter geometry. The defaults give the 15×80 production model; tests
/// shrink the widths to keep finite-difference checks affordable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub window_len: usize,
    pub n_servers: usize,
    pub temporal_kernel: usize,
    pub temporal_filters: usize,
    pub spatial_kernel: usize,
    pub spatial_filters: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            window_len: 15,
            n_servers: 80,
            temporal_kernel: 9,
            temporal_filters: 16,
            spatial_kernel: 6,
            spatial_filters: 20,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.window_len,
            self.n_servers,
            self.temporal_kernel,
            self.temporal_filters,
            self.spatial_kernel,
            self.spatial_filters,
        ];
        if fields.contains(&0) {
            return Err(Error::InvalidConfig("zero-sized grid dimension".into()));
        }
        if self.temporal_kernel + self.spatial_kernel > self.window_len + 1 {
            return Err(Error::InvalidConfig(format!(
                "kernels {}+{} do not fit a window of {} samples",
                self.temporal_kernel, self.spatial_kernel, self.window_len
            )));
        }
        Ok(())
    }

    /// Rows left after the temporal stage (valid padding, stride 1).
    pub fn temporal_out(&self) -> usize {
        self.window_len - self.temporal_kernel + 1
    }

    /// Rows left after the spatial stage.
    pub fn spatial_out(&self) -> usize {
        self.temporal_out() - self.spatial_kernel + 1
    }

    pub fn flat_width(&self) -> usize {
        self.spatial_out() * self.spatial_filters
    }
}

// Parameter slots, in optimizer order.
const P_CONV1: usize = 0;
const P_BN1_GAMMA: usize = 1;
const P_BN1_BETA: usize = 2;
const P_CONV2: usize = 3;
const P_BN2_GAMMA: usize = 4;
const P_BN2_BETA: usize = 5;
const P_FC_W: usize = 6;
const P_FC_B: usize = 7;

#[derive(Clone, Debug)]
pub struct CnnModel<T: Element> {
    pub config: CnnConfig,
    pub params: Vec<Parameter<T>>,
    pub bn1: BatchNormState<T>,
    pub bn2: BatchNormState<T>,
}

/// Intermediate activations kept for the backward pass.
pub(crate) struct CnnCache<T: Element> {
    x: Tensor<T>,
    /// Batchnorm outputs (the ReLU inputs) of each stage.
    pub(crate) y1: Tensor<T>,
    pub(crate) y2: Tensor<T>,
    a1: Tensor<T>,
    flat: Tensor<T>,
    bn1: BatchNormCache<T>,
    bn2: BatchNormCache<T>,
}

impl<T: Element> CnnModel<T> {
    pub fn new(config: CnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, 0, StreamTag::ModelInit);
        let (tk, tf) = (config.temporal_kernel, config.temporal_filters);
        let (sk, sf, s) = (
            config.spatial_kernel,
            config.spatial_filters,
            config.n_servers,
        );
        let flat = config.flat_width();
        let params = vec![
            Parameter::new(
                "conv1",
                glorot_uniform(&[tk, 1, 1, tf], tk, tk * tf, &mut rng),
            ),
            Parameter::new("bn1_gamma", Tensor::filled(&[tf], T::one())),
            Parameter::new("bn1_beta", Tensor::zeros(&[tf])),
            Parameter::new(
                "conv2",
                glorot_uniform(&[sk, s, tf, sf], sk * s * tf, sk * s * sf, &mut rng),
            ),
            Parameter::new("bn2_gamma", Tensor::filled(&[sf], T::one())),
            Parameter::new("bn2_beta", Tensor::zeros(&[sf])),
            // The head starts at zero so an untrained model scores every
            // window 0.5; gradients still reach it through its inputs.
            Parameter::new("fc_w", Tensor::zeros(&[flat, 2])),
            Parameter::new("fc_b", Tensor::zeros(&[2])),
        ];
        Ok(CnnModel {
            config,
            params,
            bn1: BatchNormState::new(tf),
            bn2: BatchNormState::new(sf),
        })
    }

    fn forward_with(
        params: &[Parameter<T>],
        x: &Tensor<T>,
        bn1: &mut BatchNormState<T>,
        bn2: &mut BatchNormState<T>,
        training: bool,
    ) -> Result<(Tensor<T>, Option<CnnCache<T>>)> {
        let n = x.shape()[0];
        let z1 = conv2d_forward(x, &params[P_CONV1].value)?;
        let (y1, bn1_cache) = batchnorm_forward(
            &z1,
            &params[P_BN1_GAMMA].value,
            &params[P_BN1_BETA].value,
            bn1,
            training,
        )?;
        let a1 = relu(&y1);
        let z2 = conv2d_forward(&a1, &params[P_CONV2].value)?;
        let (y2, bn2_cache) = batchnorm_forward(
            &z2,
            &params[P_BN2_GAMMA].value,
            &params[P_BN2_BETA].value,
            bn2,
            training,
        )?;
        let a2 = relu(&y2);
        let flat_width = a2.len() / n;
        let flat = a2.reshape(&[n, flat_width])?;
        let logits = dense_forward(&flat, &params[P_FC_W].value, &params[P_FC_B].value)?;
        let cache = if training {
            Some(CnnCache {
                x: x.clone(),
                y1,
                y2,
                a1,
                flat,
                bn1: bn1_cache.expect("training mode returns a cache"),
                bn2: bn2_cache.expect("training mode returns a cache"),
            })
        } else {
            None
        };
        Ok((logits, cache))
    }

    pub(crate) fn forward_cached(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, CnnCache<T>)> {
        let (logits, cache) =
            Self::forward_with(&self.params, x, &mut self.bn1, &mut self.bn2, true)?;
        Ok((logits, cache.expect("training mode returns a cache")))
    }

    /// One batch of cross-entropy training: accumulates gradients into the
    /// parameters and updates batchnorm running statistics.
    pub fn train_step(&mut self, x: &Tensor<T>, labels: &[bool]) -> Result<f64> {
        let (logits, cache) = self.forward_cached(x)?;
        let (loss, _, grad) = softmax_crossentropy(&logits, labels)?;
        self.backward(&grad, &cache);
        Ok(loss.to_f64())
    }

    fn backward(&mut self, d_logits: &Tensor<T>, cache: &CnnCache<T>) {
        let (d_flat, d_fcw, d_fcb) =
            dense_backward(d_logits, &cache.flat, &self.params[P_FC_W].value);
        let d_a2 = d_flat
            .reshape(&[
                cache.y2.shape()[0],
                cache.y2.shape()[1],
                cache.y2.shape()[2],
                cache.y2.shape()[3],
            ])
            .expect("flat gradient matches stage-two volume");
        let d_y2 = relu_backward(&d_a2, &cache.y2);
        let (d_z2, d_g2, d_b2) =
            batchnorm_backward(&d_y2, &self.params[P_BN2_GAMMA].value, &cache.bn2);
        let (d_a1, d_k2) = conv2d_backward(&d_z2, &cache.a1, &self.params[P_CONV2].value);
        let d_y1 = relu_backward(&d_a1, &cache.y1);
        let (d_z1, d_g1, d_b1) =
            batchnorm_backward(&d_y1, &self.params[P_BN1_GAMMA].value, &cache.bn1);
        let (_, d_k1) = conv2d_backward(&d_z1, &cache.x, &self.params[P_CONV1].value);

        for (slot, grad) in [
            (P_CONV1, d_k1),
            (P_BN1_GAMMA, d_g1),
            (P_BN1_BETA, d_b1),
            (P_CONV2, d_k2),
            (P_BN2_GAMMA, d_g2),
            (P_BN2_BETA, d_b2),
            (P_FC_W, d_fcw),
            (P_FC_B, d_fcb),
        ] {
            for (dst, src) in self.params[slot]
                .grad
                .data_mut()
                .iter_mut()
                .zip(grad.data())
            {
                *dst += *src;
            }
        }
    }

    /// Class probabilities per window, eval-mode batchnorm.
    pub fn predict_probs(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut bn1 = self.bn1.clone();
        let mut bn2 = self.bn2.clone();
        let (logits, _) = Self::forward_with(&self.params, x, &mut bn1, &mut bn2, false)?;
        Ok(softmax_rows(&logits))
    }

    /// Runs an all-zero batch through the network and reports the actual
    /// stage shapes: temporal volume, spatial volume, flattened width.
    pub fn forward_shapes(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>, usize)> {
        let x = Tensor::zeros(&[n, self.config.window_len, self.config.n_servers, 1]);
        let z1 = conv2d_forward(&x, &self.params[P_CONV1].value)?;
        let z2 = conv2d_forward(&z1, &self.params[P_CONV2].value)?;
        let flat = z2.len() / n;
        Ok((z1.shape()[1..].to_vec(), z2.shape()[1..].to_vec(), flat))
    }
}

impl CnnModel<f32> {
    /// Attack-class probability for each window, in chunks.
    pub fn score_windows(&self, windows: &[CnnWindow]) -> Result<Vec<f64>> {
        let mut scores = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(256) {
            let (x, _) = windows_to_tensor(chunk, &self.config)?;
            let probs = self.predict_probs(&x)?;
            scores.extend((0..chunk.len()).map(|i| probs.row(i)[1] as f64));
        }
        Ok(scores)
    }
}

/// Stacks windows into an `[n, window_len, n_servers, 1]` volume.
pub fn windows_to_tensor(
    windows: &[CnnWindow],
    config: &CnnConfig,
) -> Result<(Tensor<f32>, Vec<bool>)> {
    if windows.is_empty() {
        return Err(Error::EmptyInput("no grid windows".into()));
    }
    let expect = config.window_len * config.n_servers;
    let mut data = Vec::with_capacity(windows.len() * expect);
    let mut labels = Vec::with_capacity(windows.len());
    for w in windows {
        if w.values.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "window holds {} values, expected {}x{}",
                w.values.len(),
                config.window_len,
                config.n_servers
            )));
        }
        data.extend_from_slice(&w.values);
        labels.push(w.label);
    }
    let x = Tensor::from_vec(
        &[windows.len(), config.window_len, config.n_servers, 1],
        data,
    )?;
    Ok((x, labels))
}

/// Cross-entropy training with early stopping on validation loss. Returns
/// the parameters (and batchnorm statistics) from the best epoch.
pub fn train_cnn(
    train: &[CnnWindow],
    val: &[CnnWindow],
    arch: &CnnConfig,
    config: &TrainConfig,
) -> Result<(CnnModel<f32>, Vec<EpochRecord>)> {
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::InvalidConfig(
            "batch_size and max_epochs must be positive".into(),
        ));
    }
    let mut model = CnnModel::<f32>::new(arch.clone(), config.seed)?;
    let (train_x, train_y) = windows_to_tensor(train, arch)?;
    let (val_x, val_y) = windows_to_tensor(val, arch)?;

    let mut adam = AdamState::new(&model.params, config.learning_rate);
    let mut stopper = EarlyStopper::new(config.patience);
    let mut best = (model.params.clone(), model.bn1.clone(), model.bn2.clone());
    let mut curve = Vec::new();

    for epoch in 1..=config.max_epochs {
        let order = epoch_order(train.len(), config.seed, epoch);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                // Batchnorm cannot normalize a single-row training batch.
                continue;
            }
            let (x, y) = gather_windows(&train_x, &train_y, chunk);
            for p in &mut model.params {
                p.zero_grad();
            }
            let loss = model.train_step(&x, &y)?;
            adam.update(&mut model.params);
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        if seen == 0 {
            return Err(Error::EmptyInput(
                "training set smaller than one batchnorm batch".into(),
            ));
        }
        let train_loss = loss_sum / seen as f64;
        let val_loss = eval_loss(&model, &val_x, &val_y)?;
        curve.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => {
                best = (model.params.clone(), model.bn1.clone(), model.bn2.clone());
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    model.params = best.0;
    model.bn1 = best.1;
    model.bn2 = best.2;
    Ok((model, curve))
}

fn gather_windows(x: &Tensor<f32>, y: &[bool], indices: &[usize]) -> (Tensor<f32>, Vec<bool>) {
    let volume = x.len() / x.shape()[0];
    let mut data = Vec::with_capacity(indices.len() * volume);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend_from_slice(&x.data()[i * volume..(i + 1) * volume]);
        labels.push(y[i]);
    }
    let shape = [indices.len(), x.shape()[1], x.shape()[2], x.shape()[3]];
    (
        Tensor::from_vec(&shape, data).expect("gathered windows are rectangular"),
        labels,
    )
}

/// Mean eval-mode cross-entropy over the whole set, in chunks.
fn eval_loss(model: &CnnModel<f32>, x: &Tensor<f32>, y: &[bool]) -> Result<f64> {
    let n = x.shape()[0];
    let volume = x.len() / n;
    let mut sum = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + 256).min(n);
        let shape = [end - start, x.shape()[1], x.shape()[2], x.shape()[3]];
        let chunk = Tensor::from_vec(&shape, x.data()[start * volume..end * volume].to_vec())?;
        let mut bn1 = model.bn1.clone();
        let mut bn2 = model.bn2.clone();
        let (logits, _) = CnnModel::forward_with(&model.params, &chunk, &mut bn1, &mut bn2, false)?;
        let (loss, _, _) = softmax_crossentropy(&logits, &y[start..end])?;
        sum += loss.to_f64() * (end - start) as f64;
        start = end;
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{compare_gradients, KINK_MARGIN, TOL_COMPOSITE};
    use rand::Rng;

    fn small_config() -> CnnConfig {
        CnnConfig {
            window_len: 15,
            n_servers: 8,
            temporal_kernel: 9,
            temporal_filters: 4,
            spatial_kernel: 6,
            spatial_filters: 6,
        }
    }

    fn noise_window(rng: &mut impl Rng, config: &CnnConfig, level: f32, label: bool) -> CnnWindow {
        CnnWindow {
            values: (0..config.window_len * config.n_servers)
                .map(|_| level + rng.random_range(-0.05..0.05))
                .collect(),
            label,
            instance_id: 0,
            offset: 0,
        }
    }

    #[test]
    fn shape_chain_matches_the_published_grid() {
        let model = CnnModel::<f32>::new(CnnConfig::default(), 1).unwrap();
        for n in [1usize, 7, 32] {
            let (t, s, flat) = model.forward_shapes(n).unwrap();
            assert_eq!(t, vec![7, 80, 16]);
            assert_eq!(s, vec![2, 1, 20]);
            assert_eq!(flat, 40);
            let x = Tensor::zeros(&[n, 15, 80, 1]);
            let probs = model.predict_probs(&x).unwrap();
            assert_eq!(probs.shape(), &[n, 2]);
        }
        assert_eq!(CnnConfig::default().flat_width(), 40);
    }

    #[test]
    fn first_batch_loss_is_ln_two() {
        // The zero-initialized head makes the first softmax exactly uniform.
        let mut model = CnnModel::<f32>::new(small_config(), 3).unwrap();
        let mut rng = stream(5, 0, StreamTag::Background);
        let windows: Vec<CnnWindow> = (0..16)
            .map(|i| noise_window(&mut rng, &small_config(), 0.5, i % 2 == 0))
            .collect();
        let (x, y) = windows_to_tensor(&windows, &small_config()).unwrap();
        let loss = model.train_step(&x, &y).unwrap();
        assert!(
            (loss - std::f64::consts::LN_2).abs() < 1e-6,
            "expected ln 2, got {loss}"
        );
    }

    #[test]
    fn batch_prediction_equals_one_by_one() {
        let mut model = CnnModel::<f32>::new(small_config(), 9).unwrap();
        // Give the head real weights; a zero head would hide batching bugs.
        let mut rng = stream(10, 0, StreamTag::ModelInit);
        let flat = small_config().flat_width();
        model.params[P_FC_W].value = glorot_uniform(&[flat, 2], flat, 2, &mut rng);
        let mut data_rng = stream(11, 0, StreamTag::Background);
        let windows: Vec<CnnWindow> = (0..5)
            .map(|_| noise_window(&mut data_rng, &small_config(), 0.4, false))
            .collect();
        let (x, _) = windows_to_tensor(&windows, &small_config()).unwrap();
        let batch = model.predict_probs(&x).unwrap();
        for i in 0..5 {
            let (one, _) = windows_to_tensor(&windows[i..=i], &small_config()).unwrap();
            let single = model.predict_probs(&one).unwrap();
            for k in 0..2 {
                assert!((batch.row(i)[k] - single.row(0)[k]).abs() < 1e-6);
            }
            let p: f32 = batch.row(i).iter().sum();
            assert!((p - 1.0).abs() < 1e-5, "probabilities must sum to 1");
        }
    }

    #[test]
    fn training_beats_the_untrained_model() {
        let config = small_config();
        let mut rng = stream(21, 0, StreamTag::Background);
        let make_set = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<CnnWindow> {
            (0..n)
                .map(|i| {
                    let attack = i % 2 == 0;
                    let level = if attack { 0.8 } else { 0.2 };
                    noise_window(rng, &config, level, attack)
                })
                .collect()
        };
        let train = make_set(&mut rng, 120);
        let val = make_set(&mut rng, 60);

        let f1_of = |model: &CnnModel<f32>| {
            let scores = model.score_windows(&val).unwrap();
            let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
            for (s, w) in scores.iter().zip(&val) {
                match (*s >= 0.5, w.label) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fn_ += 1.0,
                    _ => {}
                }
            }
            if tp == 0.0 {
                return 0.0;
            }
            2.0 * tp / (2.0 * tp + fp + fn_)
        };

        let untrained = CnnModel::<f32>::new(config.clone(), 2).unwrap();
        let baseline = f1_of(&untrained);
        let tc = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            patience: 10,
            max_epochs: 15,
            seed: 2,
        };
        let (trained, curve) = train_cnn(&train, &val, &config, &tc).unwrap();
        let after = f1_of(&trained);
        assert!(
            after > baseline,
            "training should improve validation F1: {baseline} -> {after}"
        );
        assert!(!curve.is_empty());
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let tc = TrainConfig::cnn_default(1);
        assert!(matches!(
            train_cnn(&[], &[], &small_config(), &tc),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        let config = CnnConfig {
            window_len: 15,
            n_servers: 6,
            temporal_kernel: 9,
            temporal_filters: 2,
            spatial_kernel: 6,
            spatial_filters: 3,
        };
        let mut rng = stream(31, 0, StreamTag::GradCheck);
        let labels = vec![true, false];

        // Resample until every rectifier input is clear of its kink, so the
        // finite-difference probes stay on one linear fragment.
        let (x, analytic, values) = loop {
            let data: Vec<f64> = (0..2 * 15 * 6)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let x = Tensor::from_vec(&[2, 15, 6, 1], data).unwrap();
            let mut model = CnnModel::<f64>::new(config.clone(), 17).unwrap();
            let (_, cache) = model.forward_cached(&x).unwrap();
            let clear = cache
                .y1
                .data()
                .iter()
                .chain(cache.y2.data())
                .all(|v| v.abs() > KINK_MARGIN);
            if !clear {
                continue;
            }
            let mut model = CnnModel::<f64>::new(config.clone(), 17).unwrap();
            for p in &mut model.params {
                p.zero_grad();
            }
            model.train_step(&x, &labels).unwrap();
            let analytic: Vec<Tensor<f64>> = model.params.iter().map(|p| p.grad.clone()).collect();
            let values: Vec<Tensor<f64>> = model.params.iter().map(|p| p.value.clone()).collect();
            break (x, analytic, values);
        };

        let mut values = values;
        let config2 = config.clone();
        let labels2 = labels.clone();
        let (max_rel, checked) = compare_gradients(
            &mut values,
            &analytic,
            |vals| {
                let mut m = CnnModel::<f64>::new(config2.clone(), 17).unwrap();
                for (p, v) in m.params.iter_mut().zip(vals) {
                    p.value = v.clone();
                }
                let (logits, _) = m.forward_cached(&x).unwrap();
                softmax_crossentropy(&logits, &labels2).unwrap().0
            },
            &mut rng,
        );
        assert!(checked > 0);
        assert!(max_rel < TOL_COMPOSITE, "cnn gradient mismatch: {max_rel}");
    }
}
