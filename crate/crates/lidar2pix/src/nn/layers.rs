//! Pointwise layers and per-sample normalization.

use ndarray::{Array3, NdFloat};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::cast;

/// Per-channel normalization over the spatial extent of a single sample.
/// No learnable affine; conv biases provide the shift.
pub struct InstanceNorm<T> {
    eps: T,
    xhat: Option<Array3<T>>,
    inv_std: Vec<T>,
}

impl<T: NdFloat> InstanceNorm<T> {
    pub fn new() -> Self {
        InstanceNorm {
            eps: cast(1e-5),
            xhat: None,
            inv_std: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &Array3<T>) -> Array3<T> {
        let (c, h, w) = x.dim();
        let n = cast::<T>((h * w) as f64);
        let mut y = x.clone();
        self.inv_std.clear();
        for mut plane in y.outer_iter_mut() {
            let mean = plane.sum() / n;
            plane.mapv_inplace(|v| v - mean);
            let var = plane.iter().map(|v| *v * *v).fold(T::zero(), |a, b| a + b) / n;
            let inv = T::one() / (var + self.eps).sqrt();
            plane.mapv_inplace(|v| v * inv);
            self.inv_std.push(inv);
        }
        debug_assert_eq!(self.inv_std.len(), c);
        self.xhat = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array3<T>) -> Array3<T> {
        let xhat = self.xhat.as_ref().expect("forward before backward");
        let (_, h, w) = dy.dim();
        let n = cast::<T>((h * w) as f64);
        let mut dx = dy.clone();
        for ((mut dplane, xplane), inv) in dx
            .outer_iter_mut()
            .zip(xhat.outer_iter())
            .zip(self.inv_std.iter())
        {
            let mean_dy = dplane.sum() / n;
            let mean_dy_xhat = dplane
                .iter()
                .zip(xplane.iter())
                .map(|(a, b)| *a * *b)
                .fold(T::zero(), |a, b| a + b)
                / n;
            ndarray::Zip::from(&mut dplane).and(&xplane).for_each(|d, xh| {
                *d = (*d - mean_dy - *xh * mean_dy_xhat) * *inv;
            });
        }
        dx
    }
}

pub struct LeakyRelu<T> {
    alpha: T,
    mask: Option<Array3<bool>>,
}

impl<T: NdFloat> LeakyRelu<T> {
    pub fn new(alpha: f64) -> Self {
        LeakyRelu { alpha: cast(alpha), mask: None }
    }

    pub fn forward(&mut self, x: &Array3<T>) -> Array3<T> {
        self.mask = Some(x.mapv(|v| v > T::zero()));
        x.mapv(|v| if v > T::zero() { v } else { v * self.alpha })
    }

    pub fn backward(&self, dy: &Array3<T>) -> Array3<T> {
        let mask = self.mask.as_ref().expect("forward before backward");
        let mut dx = dy.clone();
        ndarray::Zip::from(&mut dx).and(mask).for_each(|d, &m| {
            if !m {
                *d = *d * self.alpha;
            }
        });
        dx
    }
}

pub struct Tanh<T> {
    y: Option<Array3<T>>,
}

impl<T: NdFloat> Tanh<T> {
    pub fn new() -> Self {
        Tanh { y: None }
    }

    pub fn forward(&mut self, x: &Array3<T>) -> Array3<T> {
        let y = x.mapv(|v| v.tanh());
        self.y = Some(y.clone());
        y
    }

    pub fn backward(&self, dy: &Array3<T>) -> Array3<T> {
        let y = self.y.as_ref().expect("forward before backward");
        let mut dx = dy.clone();
        ndarray::Zip::from(&mut dx).and(y).for_each(|d, &yv| {
            *d = *d * (T::one() - yv * yv);
        });
        dx
    }
}

/// Inverted dropout, active at train time only. The mask stream is owned by
/// the layer and seeded at model construction, so training is reproducible
/// and inference never consumes randomness.
pub struct Dropout<T> {
    rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Array3<T>>,
}

impl<T: NdFloat> Dropout<T> {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Self {
        Dropout { rate, rng, mask: None }
    }

    pub fn forward(&mut self, x: &Array3<T>, train: bool) -> Array3<T> {
        if !train || self.rate == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let scale = cast::<T>(1.0 / keep);
        let rng = &mut self.rng;
        let mask = Array3::from_shape_simple_fn(x.dim(), || {
            if rng.gen_bool(keep) {
                scale
            } else {
                T::zero()
            }
        });
        let y = x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn backward(&self, dy: &Array3<T>) -> Array3<T> {
        match &self.mask {
            Some(mask) => dy * mask,
            None => dy.clone(),
        }
    }
}
