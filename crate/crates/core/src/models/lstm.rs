//! Stacked recurrent classifier emitting one attack score per time sample.

use super::{epoch_order, EarlyStopper, EpochRecord, StopDecision, TrainConfig};
use crate::dataset::SequenceExample;
use crate::error::{Error, Result};
use crate::nn::lstm::{lstm_step, lstm_step_backward, LstmStepCache};
use crate::nn::ops::{dense_backward, dense_forward, softmax_crossentropy, softmax_rows};
use crate::nn::{glorot_uniform, AdamState, Element, Parameter, Tensor};
use crate::rng::{stream, StreamTag};

// Parameter slots, in optimizer order.
const P_WX1: usize = 0;
const P_WH1: usize = 1;
const P_B1: usize = 2;
const P_WX2: usize = 3;
const P_WH2: usize = 4;
const P_B2: usize = 5;
const P_FC_W: usize = 6;
const P_FC_B: usize = 7;

/// Two stacked cells (input→64, 64→64) and a per-step 64→2 head.
#[derive(Clone, Debug)]
pub struct LstmModel<T: Element> {
    pub input_width: usize,
    pub hidden: usize,
    pub params: Vec<Parameter<T>>,
}

/// Carried hidden/cell state for one trace scored sample by sample.
#[derive(Clone, Debug)]
pub struct LstmStreamState<T: Element> {
    h1: Tensor<T>,
    c1: Tensor<T>,
    h2: Tensor<T>,
    c2: Tensor<T>,
}

impl<T: Element> LstmModel<T> {
    pub const DEFAULT_HIDDEN: usize = 64;

    pub fn new(input_width: usize, hidden: usize, seed: u64) -> Result<Self> {
        if input_width == 0 || hidden == 0 {
            return Err(Error::InvalidConfig(
                "lstm needs positive input and hidden widths".into(),
            ));
        }
        let mut rng = stream(seed, 0, StreamTag::ModelInit);
        // Forget-gate biases start at one so early training can carry state.
        let mut b1 = Tensor::zeros(&[4 * hidden]);
        b1.data_mut()[hidden..2 * hidden].fill(T::one());
        let mut b2 = Tensor::zeros(&[4 * hidden]);
        b2.data_mut()[hidden..2 * hidden].fill(T::one());
        let params = vec![
            Parameter::new(
                "wx1",
                glorot_uniform(
                    &[input_width, 4 * hidden],
                    input_width,
                    4 * hidden,
                    &mut rng,
                ),
            ),
            Parameter::new(
                "wh1",
                glorot_uniform(&[hidden, 4 * hidden], hidden, 4 * hidden, &mut rng),
            ),
            Parameter::new("b1", b1),
            Parameter::new(
                "wx2",
                glorot_uniform(&[hidden, 4 * hidden], hidden, 4 * hidden, &mut rng),
            ),
            Parameter::new(
                "wh2",
                glorot_uniform(&[hidden, 4 * hidden], hidden, 4 * hidden, &mut rng),
            ),
            Parameter::new("b2", b2),
            // Zero head: an untrained model scores every step 0.5.
            Parameter::new("fc_w", Tensor::zeros(&[hidden, 2])),
            Parameter::new("fc_b", Tensor::zeros(&[2])),
        ];
        Ok(LstmModel {
            input_width,
            hidden,
            params,
        })
    }

    pub fn fresh_state(&self) -> LstmStreamState<T> {
        LstmStreamState {
            h1: Tensor::zeros(&[1, self.hidden]),
            c1: Tensor::zeros(&[1, self.hidden]),
            h2: Tensor::zeros(&[1, self.hidden]),
            c2: Tensor::zeros(&[1, self.hidden]),
        }
    }

    /// Advances the carried state by one sample and returns its two logits.
    pub fn stream_step(&self, state: &mut LstmStreamState<T>, sample: &[T]) -> Result<[T; 2]> {
        if sample.len() != self.input_width {
            return Err(Error::ShapeMismatch(format!(
                "sample has {} values, model expects {}",
                sample.len(),
                self.input_width
            )));
        }
        let x = Tensor::from_vec(&[1, self.input_width], sample.to_vec())?;
        let (h1, c1, _) = lstm_step(
            &x,
            &state.h1,
            &state.c1,
            &self.params[P_WX1].value,
            &self.params[P_WH1].value,
            &self.params[P_B1].value,
        )?;
        let (h2, c2, _) = lstm_step(
            &h1,
            &state.h2,
            &state.c2,
            &self.params[P_WX2].value,
            &self.params[P_WH2].value,
            &self.params[P_B2].value,
        )?;
        let logits = dense_forward(&h2, &self.params[P_FC_W].value, &self.params[P_FC_B].value)?;
        state.h1 = h1;
        state.c1 = c1;
        state.h2 = h2;
        state.c2 = c2;
        Ok([logits.row(0)[0], logits.row(0)[1]])
    }

    /// Runs every sequence from a zero state and returns one logit row per
    /// step, laid out `[seq 0 steps..., seq 1 steps..., ...]`.
    pub fn forward_sequences(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (logits, _, _) = self.forward_internal(x, false)?;
        Ok(logits)
    }

    /// Per-step class probabilities in the same layout.
    pub fn predict_probs(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(softmax_rows(&self.forward_sequences(x)?))
    }

    #[allow(clippy::type_complexity)]
    fn forward_internal(
        &self,
        x: &Tensor<T>,
        keep_caches: bool,
    ) -> Result<(
        Tensor<T>,
        Vec<(LstmStepCache<T>, LstmStepCache<T>)>,
        Tensor<T>,
    )> {
        if x.rank() != 3 || x.shape()[2] != self.input_width {
            return Err(Error::ShapeMismatch(format!(
                "expected [n, steps, {}], got {:?}",
                self.input_width,
                x.shape()
            )));
        }
        let (n, steps, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut h1 = Tensor::zeros(&[n, self.hidden]);
        let mut c1 = Tensor::zeros(&[n, self.hidden]);
        let mut h2 = Tensor::zeros(&[n, self.hidden]);
        let mut c2 = Tensor::zeros(&[n, self.hidden]);
        let mut caches = Vec::with_capacity(if keep_caches { steps } else { 0 });
        let mut h2_all = Tensor::zeros(&[n * steps, self.hidden]);

        for t in 0..steps {
            let mut step_data = Vec::with_capacity(n * d);
            for i in 0..n {
                let at = (i * steps + t) * d;
                step_data.extend_from_slice(&x.data()[at..at + d]);
            }
            let x_t = Tensor::from_vec(&[n, d], step_data)?;
            let (h1n, c1n, cache1) = lstm_step(
                &x_t,
                &h1,
                &c1,
                &self.params[P_WX1].value,
                &self.params[P_WH1].value,
                &self.params[P_B1].value,
            )?;
            let (h2n, c2n, cache2) = lstm_step(
                &h1n,
                &h2,
                &c2,
                &self.params[P_WX2].value,
                &self.params[P_WH2].value,
                &self.params[P_B2].value,
            )?;
            for i in 0..n {
                h2_all.row_mut(i * steps + t).copy_from_slice(h2n.row(i));
            }
            h1 = h1n;
            c1 = c1n;
            h2 = h2n;
            c2 = c2n;
            if keep_caches {
                caches.push((cache1, cache2));
            }
        }
        let logits = dense_forward(
            &h2_all,
            &self.params[P_FC_W].value,
            &self.params[P_FC_B].value,
        )?;
        Ok((logits, caches, h2_all))
    }

    /// One batch of truncated-nowhere backpropagation through time.
    /// Accumulates gradients for all steps and returns the mean per-step
    /// cross-entropy.
    pub fn train_step(&mut self, x: &Tensor<T>, step_labels: &[bool]) -> Result<f64> {
        let (n, steps) = (x.shape()[0], x.shape()[1]);
        let (logits, caches, h2_all) = self.forward_internal(x, true)?;
        let (loss, _, grad) = softmax_crossentropy(&logits, step_labels)?;

        let (d_h2all, d_fcw, d_fcb) = dense_backward(&grad, &h2_all, &self.params[P_FC_W].value);
        accumulate(&mut self.params[P_FC_W].grad, &d_fcw);
        accumulate(&mut self.params[P_FC_B].grad, &d_fcb);

        // Weight tensors are cloned so gradient buffers can be borrowed
        // mutably from the same parameter list during the sweep.
        let wx1 = self.params[P_WX1].value.clone();
        let wh1 = self.params[P_WH1].value.clone();
        let wx2 = self.params[P_WX2].value.clone();
        let wh2 = self.params[P_WH2].value.clone();
        let mut d_wx1 = Tensor::zeros(&[self.input_width, 4 * self.hidden]);
        let mut d_wh1 = Tensor::zeros(&[self.hidden, 4 * self.hidden]);
        let mut d_b1 = Tensor::zeros(&[4 * self.hidden]);
        let mut d_wx2 = Tensor::zeros(&[self.hidden, 4 * self.hidden]);
        let mut d_wh2 = Tensor::zeros(&[self.hidden, 4 * self.hidden]);
        let mut d_b2 = Tensor::zeros(&[4 * self.hidden]);

        let mut d_h1_carry = Tensor::zeros(&[n, self.hidden]);
        let mut d_c1_carry = Tensor::zeros(&[n, self.hidden]);
        let mut d_h2_carry = Tensor::zeros(&[n, self.hidden]);
        let mut d_c2_carry = Tensor::zeros(&[n, self.hidden]);

        for t in (0..steps).rev() {
            let mut d_h2 = Tensor::zeros(&[n, self.hidden]);
            for i in 0..n {
                d_h2.row_mut(i).copy_from_slice(d_h2all.row(i * steps + t));
            }
            accumulate(&mut d_h2, &d_h2_carry);
            let (cache1, cache2) = &caches[t];
            let g2 = lstm_step_backward(
                &d_h2,
                &d_c2_carry,
                cache2,
                &wx2,
                &wh2,
                &mut d_wx2,
                &mut d_wh2,
                &mut d_b2,
            );
            d_h2_carry = g2.d_h_prev;
            d_c2_carry = g2.d_c_prev;
            let mut d_h1 = g2.d_x;
            accumulate(&mut d_h1, &d_h1_carry);
            let g1 = lstm_step_backward(
                &d_h1,
                &d_c1_carry,
                cache1,
                &wx1,
                &wh1,
                &mut d_wx1,
                &mut d_wh1,
                &mut d_b1,
            );
            d_h1_carry = g1.d_h_prev;
            d_c1_carry = g1.d_c_prev;
        }

        accumulate(&mut self.params[P_WX1].grad, &d_wx1);
        accumulate(&mut self.params[P_WH1].grad, &d_wh1);
        accumulate(&mut self.params[P_B1].grad, &d_b1);
        accumulate(&mut self.params[P_WX2].grad, &d_wx2);
        accumulate(&mut self.params[P_WH2].grad, &d_wh2);
        accumulate(&mut self.params[P_B2].grad, &d_b2);
        Ok(loss.to_f64())
    }
}

fn accumulate<T: Element>(dst: &mut Tensor<T>, src: &Tensor<T>) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += *s;
    }
}

/// Stacks sequences into `[n, steps, width]` plus flattened per-step labels.
pub fn sequences_to_tensor(
    sequences: &[SequenceExample],
    input_width: usize,
) -> Result<(Tensor<f32>, Vec<bool>)> {
    if sequences.is_empty() {
        return Err(Error::EmptyInput("no sequences".into()));
    }
    let steps = sequences[0].step_labels.len();
    let mut data = Vec::with_capacity(sequences.len() * steps * input_width);
    let mut labels = Vec::with_capacity(sequences.len() * steps);
    for s in sequences {
        if s.steps.len() != steps * input_width || s.step_labels.len() != steps {
            return Err(Error::ShapeMismatch(format!(
                "sequence holds {} values / {} labels, expected {}x{}",
                s.steps.len(),
                s.step_labels.len(),
                steps,
                input_width
            )));
        }
        data.extend_from_slice(&s.steps);
        labels.extend_from_slice(&s.step_labels);
    }
    let x = Tensor::from_vec(&[sequences.len(), steps, input_width], data)?;
    Ok((x, labels))
}

/// Mean per-step cross-entropy training over 64-step sequences, early
/// stopping on validation loss.
pub fn train_lstm(
    train: &[SequenceExample],
    val: &[SequenceExample],
    input_width: usize,
    hidden: usize,
    config: &TrainConfig,
) -> Result<(LstmModel<f32>, Vec<EpochRecord>)> {
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::InvalidConfig(
            "batch_size and max_epochs must be positive".into(),
        ));
    }
    let mut model = LstmModel::<f32>::new(input_width, hidden, config.seed)?;
    let (train_x, train_y) = sequences_to_tensor(train, input_width)?;
    let (val_x, val_y) = sequences_to_tensor(val, input_width)?;
    let steps = train_x.shape()[1];

    let mut adam = AdamState::new(&model.params, config.learning_rate);
    let mut stopper = EarlyStopper::new(config.patience);
    let mut best_params = model.params.clone();
    let mut curve = Vec::new();

    for epoch in 1..=config.max_epochs {
        let order = epoch_order(train.len(), config.seed, epoch);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = gather_sequences(&train_x, &train_y, chunk, steps);
            for p in &mut model.params {
                p.zero_grad();
            }
            let loss = model.train_step(&x, &y)?;
            adam.update(&mut model.params);
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = loss_sum / seen as f64;
        let val_loss = sequence_loss(&model, &val_x, &val_y)?;
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

fn gather_sequences(
    x: &Tensor<f32>,
    y: &[bool],
    indices: &[usize],
    steps: usize,
) -> (Tensor<f32>, Vec<bool>) {
    let d = x.shape()[2];
    let volume = steps * d;
    let mut data = Vec::with_capacity(indices.len() * volume);
    let mut labels = Vec::with_capacity(indices.len() * steps);
    for &i in indices {
        data.extend_from_slice(&x.data()[i * volume..(i + 1) * volume]);
        labels.extend_from_slice(&y[i * steps..(i + 1) * steps]);
    }
    (
        Tensor::from_vec(&[indices.len(), steps, d], data)
            .expect("gathered sequences are rectangular"),
        labels,
    )
}

/// Mean per-step cross-entropy without gradients, in chunks.
fn sequence_loss(model: &LstmModel<f32>, x: &Tensor<f32>, y: &[bool]) -> Result<f64> {
    let (n, steps, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let volume = steps * d;
    let mut sum = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + 64).min(n);
        let chunk = Tensor::from_vec(
            &[end - start, steps, d],
            x.data()[start * volume..end * volume].to_vec(),
        )?;
        let logits = model.forward_sequences(&chunk)?;
        let (loss, _, _) = softmax_crossentropy(&logits, &y[start * steps..end * steps])?;
        sum += loss.to_f64() * (end - start) as f64;
        start = end;
    }
    Ok(sum / n as f64)
}
