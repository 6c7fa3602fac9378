//! 2D convolution and transposed convolution on (C, H, W) tensors, batch
//! size one, implemented as im2col / col2im plus GEMM.

use ndarray::{Array1, Array2, Array3, NdFloat};
use rand::Rng;

use super::{cast, ParamView};

pub fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

pub fn deconv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input - 1) * stride + k - 2 * pad
}

/// Unfold (C,H,W) into (C*k*k, OH*OW) patches.
pub fn im2col<T: NdFloat>(
    x: &Array3<T>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array2<T> {
    let (c, h, w) = x.dim();
    let oh = conv_out_size(h, k, stride, pad);
    let ow = conv_out_size(w, k, stride, pad);
    let mut cols = Array2::zeros((c * k * k, oh * ow));
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[[row, oy * ow + ox]] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Fold (C*k*k, OH*OW) patch gradients back into a (C,H,W) tensor,
/// accumulating overlaps.
pub fn col2im<T: NdFloat>(
    cols: &Array2<T>,
    dims: (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
) -> Array3<T> {
    let (c, h, w) = dims;
    let oh = conv_out_size(h, k, stride, pad);
    let ow = conv_out_size(w, k, stride, pad);
    let mut x = Array3::zeros(dims);
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[[ci, iy as usize, ix as usize]] =
                            x[[ci, iy as usize, ix as usize]] + cols[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
    x
}

pub struct Conv2d<T> {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// (out_ch, in_ch*k*k)
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub dweight: Array2<T>,
    pub dbias: Array1<T>,
    cols: Option<Array2<T>>,
    in_dims: (usize, usize, usize),
}

impl<T: NdFloat> Conv2d<T> {
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let weight = init_normal(rng, (out_ch, in_ch * k * k));
        Conv2d {
            name: name.to_string(),
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            dweight: Array2::zeros(weight.dim()),
            weight,
            bias: Array1::zeros(out_ch),
            dbias: Array1::zeros(out_ch),
            cols: None,
            in_dims: (0, 0, 0),
        }
    }

    pub fn forward(&mut self, x: &Array3<T>) -> Array3<T> {
        assert_eq!(x.dim().0, self.in_ch, "{}: input channels", self.name);
        let (_, h, w) = x.dim();
        let oh = conv_out_size(h, self.k, self.stride, self.pad);
        let ow = conv_out_size(w, self.k, self.stride, self.pad);
        let cols = im2col(x, self.k, self.stride, self.pad);
        let mut y = self.weight.dot(&cols);
        for (mut row, b) in y.outer_iter_mut().zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + *b);
        }
        self.cols = Some(cols);
        self.in_dims = x.dim();
        y.into_shape((self.out_ch, oh, ow)).unwrap()
    }

    pub fn backward(&mut self, dy: &Array3<T>) -> Array3<T> {
        let cols = self.cols.as_ref().expect("forward before backward");
        let (oc, oh, ow) = dy.dim();
        let dy2 = dy
            .view()
            .into_shape((oc, oh * ow))
            .unwrap();
        self.dweight = &self.dweight + &dy2.dot(&cols.t());
        self.dbias = &self.dbias + &dy2.sum_axis(ndarray::Axis(1));
        let dcols = self.weight.t().dot(&dy2);
        col2im(&dcols, self.in_dims, self.k, self.stride, self.pad)
    }

    pub fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        out.push(ParamView {
            name: format!("{prefix}.{}.weight", self.name),
            shape: self.weight.shape().to_vec(),
            value: self.weight.as_slice_mut().unwrap(),
            grad: self.dweight.as_slice_mut().unwrap(),
        });
        out.push(ParamView {
            name: format!("{prefix}.{}.bias", self.name),
            shape: self.bias.shape().to_vec(),
            value: self.bias.as_slice_mut().unwrap(),
            grad: self.dbias.as_slice_mut().unwrap(),
        });
    }
}

pub struct ConvTranspose2d<T> {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// (in_ch, out_ch*k*k): the forward pass is the data-gradient of a
    /// conv that maps out_ch -> in_ch.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub dweight: Array2<T>,
    pub dbias: Array1<T>,
    x_flat: Option<Array2<T>>,
    in_dims: (usize, usize, usize),
}

impl<T: NdFloat> ConvTranspose2d<T> {
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let weight = init_normal(rng, (in_ch, out_ch * k * k));
        ConvTranspose2d {
            name: name.to_string(),
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            dweight: Array2::zeros(weight.dim()),
            weight,
            bias: Array1::zeros(out_ch),
            dbias: Array1::zeros(out_ch),
            x_flat: None,
            in_dims: (0, 0, 0),
        }
    }

    pub fn forward(&mut self, x: &Array3<T>) -> Array3<T> {
        assert_eq!(x.dim().0, self.in_ch, "{}: input channels", self.name);
        let (c, h, w) = x.dim();
        let oh = deconv_out_size(h, self.k, self.stride, self.pad);
        let ow = deconv_out_size(w, self.k, self.stride, self.pad);
        let x2 = x.view().into_shape((c, h * w)).unwrap().to_owned();
        let cols = self.weight.t().dot(&x2);
        let mut y = col2im(&cols, (self.out_ch, oh, ow), self.k, self.stride, self.pad);
        for (mut plane, b) in y.outer_iter_mut().zip(self.bias.iter()) {
            plane.mapv_inplace(|v| v + *b);
        }
        self.x_flat = Some(x2);
        self.in_dims = x.dim();
        y
    }

    pub fn backward(&mut self, dy: &Array3<T>) -> Array3<T> {
        let x2 = self.x_flat.as_ref().expect("forward before backward");
        let dcols = im2col(dy, self.k, self.stride, self.pad);
        self.dweight = &self.dweight + &x2.dot(&dcols.t());
        for (slot, plane) in self.dbias.iter_mut().zip(dy.outer_iter()) {
            *slot = *slot + plane.sum();
        }
        let dx2 = self.weight.dot(&dcols);
        dx2.into_shape(self.in_dims).unwrap()
    }

    pub fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        out.push(ParamView {
            name: format!("{prefix}.{}.weight", self.name),
            shape: self.weight.shape().to_vec(),
            value: self.weight.as_slice_mut().unwrap(),
            grad: self.dweight.as_slice_mut().unwrap(),
        });
        out.push(ParamView {
            name: format!("{prefix}.{}.bias", self.name),
            shape: self.bias.shape().to_vec(),
            value: self.bias.as_slice_mut().unwrap(),
            grad: self.dbias.as_slice_mut().unwrap(),
        });
    }
}

fn init_normal<T: NdFloat, R: Rng>(rng: &mut R, dim: (usize, usize)) -> Array2<T> {
    // N(0, 0.02) via Box-Muller so the stream is identical for f32 and f64
    let next = |rng: &mut R| {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * 0.02
    };
    Array2::from_shape_simple_fn(dim, || cast(next(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd_check<F>(mut f: F, params: &mut [f64], analytic: &[f64], tol: f64)
    where
        F: FnMut(&[f64]) -> f64,
    {
        let h = 1e-5;
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let fp = f(params);
            params[i] = orig - h;
            let fm = f(params);
            params[i] = orig;
            let num = (fp - fm) / (2.0 * h);
            let denom = num.abs().max(analytic[i].abs()).max(1e-8);
            assert!(
                (num - analytic[i]).abs() / denom < tol,
                "param {i}: numeric {num} vs analytic {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn conv_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f64>::new("c", 3, 5, 4, 2, 1, &mut rng);
        let x = Array3::from_shape_simple_fn((3, 8, 8), || 0.5);
        let y = conv.forward(&x);
        assert_eq!(y.dim(), (5, 4, 4));
        let mut deconv = ConvTranspose2d::<f64>::new("d", 5, 2, 4, 2, 1, &mut rng);
        let z = deconv.forward(&y);
        assert_eq!(z.dim(), (2, 8, 8));
    }

    #[test]
    fn conv_weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::<f64>::new("c", 2, 3, 4, 2, 1, &mut rng);
        let x = Array3::from_shape_simple_fn((2, 6, 6), || rng.gen_range(-1.0..1.0));
        // loss = sum(y^2)/2 so dy = y
        let y = conv.forward(&x);
        let _ = conv.backward(&y);
        let analytic_w: Vec<f64> = conv.dweight.iter().cloned().collect();
        let mut w: Vec<f64> = conv.weight.iter().cloned().collect();
        let shape = conv.weight.dim();
        let x2 = x.clone();
        let bias = conv.bias.clone();
        fd_check(
            |p| {
                let mut c2 = Conv2d::<f64>::new("t", 2, 3, 4, 2, 1, &mut ChaCha8Rng::seed_from_u64(0));
                c2.weight = Array2::from_shape_vec(shape, p.to_vec()).unwrap();
                c2.bias = bias.clone();
                let y = c2.forward(&x2);
                y.iter().map(|v| v * v / 2.0).sum()
            },
            &mut w,
            &analytic_w,
            1e-5,
        );
    }

    #[test]
    fn conv_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::<f64>::new("c", 2, 3, 4, 2, 1, &mut rng);
        let x = Array3::from_shape_simple_fn((2, 6, 6), || rng.gen_range(-1.0..1.0));
        let y = conv.forward(&x);
        let dx = conv.backward(&y);
        let analytic: Vec<f64> = dx.iter().cloned().collect();
        let mut xv: Vec<f64> = x.iter().cloned().collect();
        fd_check(
            |p| {
                let xi = Array3::from_shape_vec((2, 6, 6), p.to_vec()).unwrap();
                let cols = im2col(&xi, 4, 2, 1);
                let mut y = conv.weight.dot(&cols);
                for (mut row, b) in y.outer_iter_mut().zip(conv.bias.iter()) {
                    row.mapv_inplace(|v| v + *b);
                }
                y.iter().map(|v| v * v / 2.0).sum()
            },
            &mut xv,
            &analytic,
            1e-5,
        );
    }

    #[test]
    fn deconv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut deconv = ConvTranspose2d::<f64>::new("d", 3, 2, 4, 2, 1, &mut rng);
        let x = Array3::from_shape_simple_fn((3, 4, 4), || rng.gen_range(-1.0..1.0));
        let y = deconv.forward(&x);
        let dx = deconv.backward(&y);
        let analytic_x: Vec<f64> = dx.iter().cloned().collect();
        let analytic_w: Vec<f64> = deconv.dweight.iter().cloned().collect();

        let weight = deconv.weight.clone();
        let bias = deconv.bias.clone();
        let run = |w: &Array2<f64>, xi: &Array3<f64>| -> f64 {
            let x2 = xi.view().into_shape((3, 16)).unwrap().to_owned();
            let cols = w.t().dot(&x2);
            let mut y = col2im(&cols, (2, 8, 8), 4, 2, 1);
            for (mut plane, b) in y.outer_iter_mut().zip(bias.iter()) {
                plane.mapv_inplace(|v| v + *b);
            }
            y.iter().map(|v| v * v / 2.0).sum()
        };

        let mut xv: Vec<f64> = x.iter().cloned().collect();
        fd_check(
            |p| run(&weight, &Array3::from_shape_vec((3, 4, 4), p.to_vec()).unwrap()),
            &mut xv,
            &analytic_x,
            1e-5,
        );
        let wshape = weight.dim();
        let mut wv: Vec<f64> = weight.iter().cloned().collect();
        fd_check(
            |p| run(&Array2::from_shape_vec(wshape, p.to_vec()).unwrap(), &x),
            &mut wv,
            &analytic_w,
            1e-5,
        );
    }
}
