//! Layer types: convolution, transposed convolution, batch norm, relu,
//! max-pool, nearest upsampling.
//!
//! `forward_train` caches per-layer state; `backward` consumes it and
//! accumulates gradients into each [`Param`]. `forward_eval` is pure.

use super::conv::{conv2d, conv2d_backward_data, conv2d_backward_weight};
use super::{Param, ParamVisit};
use crate::{Error, Result};
use ndarray::{Array1, Array4, ArrayD, Ix1, Ix4, s};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn he_normal(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("std is finite");
    let mut a = ArrayD::zeros(shape.to_vec());
    for v in a.iter_mut() {
        *v = dist.sample(rng);
    }
    a
}

fn as4(a: &ArrayD<f64>) -> ndarray::ArrayView4<'_, f64> {
    a.view().into_dimensionality::<Ix4>().expect("4-d param")
}

/// Standard 2-D convolution with square kernel.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub padding: usize,
    kernel: usize,
    cache_x: Option<Array4<f64>>,
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = Param::new(
            format!("{name}.weight"),
            he_normal(rng, &[out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel),
        );
        let bias = with_bias
            .then(|| Param::new(format!("{name}.bias"), ArrayD::zeros(vec![out_ch])));
        Conv2d { weight, bias, stride, padding, kernel, cache_x: None }
    }

    fn bias_view(&self) -> Option<Array1<f64>> {
        self.bias
            .as_ref()
            .map(|b| b.value.view().into_dimensionality::<Ix1>().expect("1-d bias").to_owned())
    }

    pub fn forward_train(&mut self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let y = conv2d(&x.view(), &as4(&self.weight.value), self.bias_view().as_ref(), self.stride, self.padding)?;
        self.cache_x = Some(x.clone());
        Ok(y)
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        conv2d(&x.view(), &as4(&self.weight.value), self.bias_view().as_ref(), self.stride, self.padding)
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Result<Array4<f64>> {
        let x = self.cache_x.take().expect("backward before forward_train");
        let (gw, gb) =
            conv2d_backward_weight(&gy.view(), &x.view(), self.kernel, self.stride, self.padding)?;
        self.weight.grad += &gw.into_dyn();
        if let Some(bias) = self.bias.as_mut() {
            bias.grad += &gb.into_dyn();
        }
        let (_, _, h, w) = x.dim();
        conv2d_backward_data(&gy.view(), &as4(&self.weight.value), self.stride, self.padding, (h, w))
    }
}

impl ParamVisit for Conv2d {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = self.bias.as_mut() {
            f(b);
        }
    }
}

/// Transposed convolution (learnable upsampler). Output side follows
/// stride*(input-1) + kernel - 2*padding. Weight layout `(Cin, Cout, K, K)`.
///
/// All three passes reuse the standard-convolution primitives with roles
/// swapped: this op's forward is that convolution's input-gradient, and vice
/// versa.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub stride: usize,
    pub padding: usize,
    kernel: usize,
    out_ch: usize,
    cache_x: Option<Array4<f64>>,
}

impl ConvTranspose2d {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = Param::new(
            format!("{name}.weight"),
            he_normal(rng, &[in_ch, out_ch, kernel, kernel], in_ch * kernel * kernel),
        );
        ConvTranspose2d { weight, stride, padding, kernel, out_ch, cache_x: None }
    }

    pub fn output_side(&self, input: usize) -> Result<usize> {
        let out = self.stride as isize * (input as isize - 1) + self.kernel as isize
            - 2 * self.padding as isize;
        if out < 1 {
            return Err(Error::contract(format!(
                "transposed conv output side {out} must be positive"
            )));
        }
        Ok(out as usize)
    }

    fn run_forward(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let (_, _, h, w) = x.dim();
        let oh = self.output_side(h)?;
        let ow = self.output_side(w)?;
        conv2d_backward_data(&x.view(), &as4(&self.weight.value), self.stride, self.padding, (oh, ow))
    }

    pub fn forward_train(&mut self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let y = self.run_forward(x)?;
        self.cache_x = Some(x.clone());
        Ok(y)
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        self.run_forward(x)
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Result<Array4<f64>> {
        let x = self.cache_x.take().expect("backward before forward_train");
        // weight grad: the underlying convolution maps gy -> x, so the input
        // and output-gradient arguments swap places
        let (gw, _) =
            conv2d_backward_weight(&x.view(), &gy.view(), self.kernel, self.stride, self.padding)?;
        self.weight.grad += &gw.into_dyn();
        conv2d(&gy.view(), &as4(&self.weight.value), None, self.stride, self.padding)
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }
}

impl ParamVisit for ConvTranspose2d {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
    }
}

/// Per-channel batch normalization over `(B, H, W)`.
///
/// Training normalizes with batch statistics (biased variance) and updates
/// running statistics as a side effect; evaluation normalizes with the stored
/// running statistics and is pure.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    name: String,
    running_mean: Array1<f64>,
    running_var: Array1<f64>,
    eps: f64,
    momentum: f64,
    cache: Option<(Array4<f64>, Array1<f64>)>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(format!("{name}.weight"), ArrayD::ones(vec![channels])),
            beta: Param::new(format!("{name}.bias"), ArrayD::zeros(vec![channels])),
            name: name.to_string(),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: 1e-5,
            momentum: 0.1,
            cache: None,
        }
    }

    pub fn forward_train(&mut self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let (b, c, h, w) = x.dim();
        let m = (b * h * w) as f64;
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut xhat = Array4::zeros((b, c, h, w));
        let mut y = Array4::zeros((b, c, h, w));
        let mut inv_std = Array1::zeros(c);
        for ci in 0..c {
            let ch = x.slice(s![.., ci, .., ..]);
            let mean = ch.sum() / m;
            let var = ch.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[ci] = is;
            let (g, bt) = (gamma[ci], beta[ci]);
            for bi in 0..b {
                for yy in 0..h {
                    for xx in 0..w {
                        let xh = (x[[bi, ci, yy, xx]] - mean) * is;
                        xhat[[bi, ci, yy, xx]] = xh;
                        y[[bi, ci, yy, xx]] = g * xh + bt;
                    }
                }
            }
            self.running_mean[ci] = (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean;
            self.running_var[ci] = (1.0 - self.momentum) * self.running_var[ci] + self.momentum * var;
        }
        self.cache = Some((xhat, inv_std));
        Ok(y)
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let (b, c, h, w) = x.dim();
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = Array4::zeros((b, c, h, w));
        for ci in 0..c {
            let is = 1.0 / (self.running_var[ci] + self.eps).sqrt();
            let (mean, g, bt) = (self.running_mean[ci], gamma[ci], beta[ci]);
            for bi in 0..b {
                for yy in 0..h {
                    for xx in 0..w {
                        y[[bi, ci, yy, xx]] = g * (x[[bi, ci, yy, xx]] - mean) * is + bt;
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Result<Array4<f64>> {
        let (xhat, inv_std) = self.cache.take().expect("backward before forward_train");
        let (b, c, h, w) = gy.dim();
        let m = (b * h * w) as f64;
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap().to_owned();
        let mut gx = Array4::zeros((b, c, h, w));
        for ci in 0..c {
            let gy_ch = gy.slice(s![.., ci, .., ..]);
            let xh_ch = xhat.slice(s![.., ci, .., ..]);
            let sum_gy = gy_ch.sum();
            let sum_gy_xhat = (&gy_ch * &xh_ch).sum();
            self.beta.grad[[ci]] += sum_gy;
            self.gamma.grad[[ci]] += sum_gy_xhat;
            let k = gamma[ci] * inv_std[ci];
            for bi in 0..b {
                for yy in 0..h {
                    for xx in 0..w {
                        gx[[bi, ci, yy, xx]] = k
                            * (gy[[bi, ci, yy, xx]]
                                - sum_gy / m
                                - xhat[[bi, ci, yy, xx]] * sum_gy_xhat / m);
                    }
                }
            }
        }
        Ok(gx)
    }
}

impl ParamVisit for BatchNorm2d {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn for_each_buffer(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        let name = self.name.clone();
        let mut rm = std::mem::take(&mut self.running_mean).into_dyn();
        f(&format!("{name}.running_mean"), &mut rm);
        self.running_mean = rm.into_dimensionality().expect("1-d running mean");
        let mut rv = std::mem::take(&mut self.running_var).into_dyn();
        f(&format!("{name}.running_var"), &mut rv);
        self.running_var = rv.into_dimensionality().expect("1-d running var");
    }
}

/// Rectified linear activation.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    cache_y: Option<Array4<f64>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { cache_y: None }
    }

    pub fn forward_train(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let y = x.mapv(|v| v.max(0.0));
        self.cache_y = Some(y.clone());
        y
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Array4<f64> {
        x.mapv(|v| v.max(0.0))
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let y = self.cache_y.take().expect("backward before forward_train");
        let mut gx = gy.clone();
        ndarray::Zip::from(&mut gx).and(&y).for_each(|g, &yv| {
            if yv <= 0.0 {
                *g = 0.0;
            }
        });
        gx
    }
}

/// 2x2 max-pool with stride 2. Ties go to the first window position in
/// scan order, deterministically.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2d {
    cache_idx: Option<Array4<u8>>,
}

impl MaxPool2d {
    pub fn new() -> Self {
        MaxPool2d { cache_idx: None }
    }

    fn pool(x: &Array4<f64>) -> Result<(Array4<f64>, Array4<u8>)> {
        let (b, c, h, w) = x.dim();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::contract(format!("max-pool needs even sides, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Array4::zeros((b, c, oh, ow));
        let mut idx = Array4::<u8>::zeros((b, c, oh, ow));
        for bi in 0..b {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut win = 0u8;
                        for (k, (dy, dx)) in
                            [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate()
                        {
                            let v = x[[bi, ci, 2 * oy + dy, 2 * ox + dx]];
                            if v > best {
                                best = v;
                                win = k as u8;
                            }
                        }
                        y[[bi, ci, oy, ox]] = best;
                        idx[[bi, ci, oy, ox]] = win;
                    }
                }
            }
        }
        Ok((y, idx))
    }

    pub fn forward_train(&mut self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let (y, idx) = Self::pool(x)?;
        self.cache_idx = Some(idx);
        Ok(y)
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        Ok(Self::pool(x)?.0)
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let idx = self.cache_idx.take().expect("backward before forward_train");
        let (b, c, oh, ow) = gy.dim();
        let mut gx = Array4::zeros((b, c, oh * 2, ow * 2));
        for bi in 0..b {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let k = idx[[bi, ci, oy, ox]] as usize;
                        let (dy, dx) = [(0, 0), (0, 1), (1, 0), (1, 1)][k];
                        gx[[bi, ci, 2 * oy + dy, 2 * ox + dx]] = gy[[bi, ci, oy, ox]];
                    }
                }
            }
        }
        gx
    }
}

/// Parameter-free 2x nearest-neighbor upsampling (each pixel replicated into
/// a 2x2 block). Backward sums each block.
#[derive(Debug, Clone, Default)]
pub struct NearestUpsample;

impl NearestUpsample {
    pub fn forward(x: &Array4<f64>) -> Array4<f64> {
        let (b, c, h, w) = x.dim();
        let mut y = Array4::zeros((b, c, h * 2, w * 2));
        for bi in 0..b {
            for ci in 0..c {
                for yy in 0..h {
                    for xx in 0..w {
                        let v = x[[bi, ci, yy, xx]];
                        y[[bi, ci, 2 * yy, 2 * xx]] = v;
                        y[[bi, ci, 2 * yy, 2 * xx + 1]] = v;
                        y[[bi, ci, 2 * yy + 1, 2 * xx]] = v;
                        y[[bi, ci, 2 * yy + 1, 2 * xx + 1]] = v;
                    }
                }
            }
        }
        y
    }

    pub fn backward(gy: &Array4<f64>) -> Array4<f64> {
        let (b, c, h2, w2) = gy.dim();
        let (h, w) = (h2 / 2, w2 / 2);
        let mut gx = Array4::zeros((b, c, h, w));
        for bi in 0..b {
            for ci in 0..c {
                for yy in 0..h {
                    for xx in 0..w {
                        gx[[bi, ci, yy, xx]] = gy[[bi, ci, 2 * yy, 2 * xx]]
                            + gy[[bi, ci, 2 * yy, 2 * xx + 1]]
                            + gy[[bi, ci, 2 * yy + 1, 2 * xx]]
                            + gy[[bi, ci, 2 * yy + 1, 2 * xx + 1]];
                    }
                }
            }
        }
        gx
    }
}
