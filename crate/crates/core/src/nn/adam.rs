//! Named trainable parameters and the Adam optimizer.
//!
//! Parameters live in a `Vec` so update order — and therefore every
//! floating-point rounding decision — is identical across runs.

use rand::Rng;

use crate::nn::tensor::{Element, Tensor};

/// A trainable tensor plus its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Element> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Glorot/Xavier uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
/// Sampling happens in f64 so f32 and f64 models consume the RNG identically.
pub fn glorot_uniform<T: Element, R: Rng>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = T::from_f64(rng.random_range(-a..a));
    }
    t
}

/// Adam with bias correction; first/second moments are kept per parameter
/// in the same order as the parameter list.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &[Parameter<T>], learning_rate: f64) -> Self {
        AdamState {
            m: params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
            v: params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
            t: 0,
            learning_rate: T::from_f64(learning_rate),
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            epsilon: T::from_f64(1e-8),
        }
    }

    /// One Adam step over every parameter's accumulated gradient.
    pub fn update(&mut self, params: &mut [Parameter<T>]) {
        assert_eq!(
            params.len(),
            self.m.len(),
            "optimizer built for a different parameter list"
        );
        self.t += 1;
        let t_f = T::from_f64(self.t as f64);
        let bc1 = T::one() - self.beta1.powf(t_f);
        let bc2 = T::one() - self.beta2.powf(t_f);
        let one = T::one();
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for ((val, &g), (mi, vi)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (one - self.beta1) * g;
                *vi = self.beta2 * *vi + (one - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *val -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}
