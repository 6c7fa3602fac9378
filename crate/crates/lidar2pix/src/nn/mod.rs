//! Minimal CNN building blocks on ndarray: convolutions via im2col GEMM,
//! per-sample normalization, activations, dropout, Adam, and the losses.
//! Generic over the float type so gradient checks can run in f64 while
//! training runs in f32.

pub mod conv;
pub mod layers;
pub mod loss;

use ndarray::NdFloat;

pub use conv::{Conv2d, ConvTranspose2d};
pub use layers::{Dropout, InstanceNorm, LeakyRelu, Tanh};
pub use loss::{bce_with_logits, bce_with_logits_grad, l1_loss, l1_grad};

/// Mutable view of one named parameter tensor and its gradient.
pub struct ParamView<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: &'a mut [T],
    pub grad: &'a mut [T],
}

pub fn cast<T: NdFloat>(v: f64) -> T {
    T::from(v).expect("float cast")
}

/// Adam optimizer over a fixed-order parameter list. Moment buffers are
/// allocated lazily on the first step and matched positionally thereafter.
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: NdFloat> Adam<T> {
    pub fn new(lr: f64, beta1: f64) -> Self {
        Adam {
            lr: cast(lr),
            beta1: cast(beta1),
            beta2: cast(0.999),
            eps: cast(1e-8),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [ParamView<T>]) {
        if self.m.is_empty() {
            for p in params.iter() {
                self.m.push(vec![T::zero(); p.value.len()]);
                self.v.push(vec![T::zero(); p.value.len()]);
            }
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed size");
        self.t += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.t);
        let bc2 = one - self.beta2.powi(self.t);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.value.len() {
                let g = p.grad[k];
                m[k] = self.beta1 * m[k] + (one - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (one - self.beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p.value[k] = p.value[k] - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![5.0f64, -3.0];
        let mut g = vec![0.0f64; 2];
        let mut opt = Adam::new(0.1, 0.9);
        for _ in 0..500 {
            for k in 0..2 {
                g[k] = 2.0 * x[k];
            }
            let mut views = vec![ParamView {
                name: "x".into(),
                shape: vec![2],
                value: &mut x,
                grad: &mut g,
            }];
            opt.step(&mut views);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-3), "{x:?}");
    }
}
