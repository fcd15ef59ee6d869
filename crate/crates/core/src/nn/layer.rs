use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Samples per work item when a layer parallelizes over the batch. Fixed so
/// that reductions group samples identically for any thread count.
const GROUP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Softplus => {
                // log(1 + e^x) without overflow
                x.max(0.0) + (-x.abs()).exp().ln_1p()
            }
        }
    }

    /// Applies the activation in place.
    pub fn apply_slice(self, xs: &mut [f64]) {
        match self {
            Activation::Relu => xs.iter_mut().for_each(|x| *x = x.max(0.0)),
            // A select rather than a conditional store, so the loop has no
            // data-dependent branch.
            Activation::LeakyRelu(slope) => xs.iter_mut().for_each(|x| *x = if *x > 0.0 { *x } else { *x * slope }),
            _ => xs.iter_mut().for_each(|x| *x = self.apply(*x)),
        }
    }

    /// Derivative at `x`; the ReLU kink at 0 takes the subgradient 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => {
                let s = Activation::Sigmoid.apply(x);
                s * (1.0 - s)
            }
            Activation::Softplus => Activation::Sigmoid.apply(x),
        }
    }

    /// Whether `f(0) == 0`, i.e. a zeroed unit stays zeroed.
    pub fn preserves_zero(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu(_))
    }

    pub fn name(self) -> String {
        match self {
            Activation::Relu => "relu".into(),
            Activation::LeakyRelu(s) => format!("leaky_relu({s})"),
            Activation::Sigmoid => "sigmoid".into(),
            Activation::Softplus => "softplus".into(),
        }
    }
}

/// Fully connected layer; `weight` is `[out_units, in_units]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape(format!("dense weight {:?} / bias {:?}", weight.shape(), bias.shape())));
        }
        Ok(Dense { weight, bias })
    }

    pub fn out_units(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_units(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// 2-D convolution; `weight` is `[out_channels, in_channels, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        if weight.shape().len() != 4 || bias.shape() != [weight.shape()[0]] || stride == 0 {
            return Err(Error::shape(format!(
                "conv weight {:?} / bias {:?} / stride {stride}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Conv2d { weight, bias, stride, padding })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub(crate) fn geometry(&self, h: usize, w: usize) -> Option<ConvGeometry> {
        let (kh, kw) = self.kernel();
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < kh || wp < kw {
            return None;
        }
        Some(ConvGeometry {
            c: self.in_channels(),
            h,
            w,
            kh,
            kw,
            stride: self.stride,
            pad: self.padding,
            oh: (hp - kh) / self.stride + 1,
            ow: (wp - kw) / self.stride + 1,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate for output row `o` and kernel row `k`, if inside.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        let p = (o * stride + k).checked_sub(pad)?;
        (p < len).then_some(p)
    }

    /// Unfolds one sample `[c, h, w]` into `cols[c*kh*kw, oh*ow]`.
    pub fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    for oy in 0..self.oh {
                        let dst = &mut cols[row + oy * self.ow..row + (oy + 1) * self.ow];
                        match Self::src(oy, ki, self.stride, self.pad, self.h) {
                            None => dst.fill(0.0),
                            Some(iy) => {
                                let src = &x[(c * self.h + iy) * self.w..(c * self.h + iy + 1) * self.w];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = match Self::src(ox, kj, self.stride, self.pad, self.w) {
                                        Some(ix) => src[ix],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatters `cols` back onto `[c, h, w]`, accumulating.
    pub fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    for oy in 0..self.oh {
                        let Some(iy) = Self::src(oy, ki, self.stride, self.pad, self.h) else {
                            continue;
                        };
                        let src = &cols[row + oy * self.ow..row + (oy + 1) * self.ow];
                        let dst = &mut x[(c * self.h + iy) * self.w..(c * self.h + iy + 1) * self.w];
                        for (ox, v) in src.iter().enumerate() {
                            if let Some(ix) = Self::src(ox, kj, self.stride, self.pad, self.w) {
                                dst[ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adds the response of a single input channel `x_c` (`[h, w]`) through
    /// the kernel slice `kernel[:, c]` into `out[oc, oh, ow]`, scaled by `sign`.
    pub fn accumulate_channel(&self, x_c: &[f64], weight: &Tensor, channel: usize, sign: f64, out: &mut [f64]) {
        let ic = weight.shape()[1];
        let oc = weight.shape()[0];
        let p = self.positions();
        let wd = weight.data();
        for o in 0..oc {
            let kbase = (o * ic + channel) * self.kh * self.kw;
            let dst = &mut out[o * p..(o + 1) * p];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let k = sign * wd[kbase + ki * self.kw + kj];
                    if k == 0.0 {
                        continue;
                    }
                    for oy in 0..self.oh {
                        let Some(iy) = Self::src(oy, ki, self.stride, self.pad, self.h) else {
                            continue;
                        };
                        let row = &x_c[iy * self.w..(iy + 1) * self.w];
                        let drow = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if self.stride == 1 && self.pad == 0 {
                            for (d, &v) in drow.iter_mut().zip(&row[kj..kj + self.ow]) {
                                *d += k * v;
                            }
                        } else {
                            for (ox, d) in drow.iter_mut().enumerate() {
                                if let Some(ix) = Self::src(ox, kj, self.stride, self.pad, self.w) {
                                    *d += k * row[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Batch normalization evaluated with its running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `(scale, shift)` so that `y = scale * x + shift`.
    pub fn affine(&self) -> (Vec<f64>, Vec<f64>) {
        let mut scale = Vec::with_capacity(self.channels());
        let mut shift = Vec::with_capacity(self.channels());
        for c in 0..self.channels() {
            let s = self.gamma.data()[c] / (self.running_var.data()[c] + self.eps).sqrt();
            scale.push(s);
            shift.push(self.beta.data()[c] - s * self.running_mean.data()[c]);
        }
        (scale, shift)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Activation(Activation),
    /// Non-overlapping max pooling with square windows (stride = size).
    MaxPool2d {
        size: usize,
    },
    /// Identity at inference; the rate only matters when units are sliced.
    Dropout {
        rate: f64,
    },
    Flatten,
}

impl Layer {
    pub fn name(&self) -> String {
        match self {
            Layer::Dense(d) => format!("dense({}->{})", d.in_units(), d.out_units()),
            Layer::Conv2d(c) => format!("conv2d({}->{})", c.in_channels(), c.out_channels()),
            Layer::BatchNorm(b) => format!("batchnorm({})", b.channels()),
            Layer::Activation(a) => a.name(),
            Layer::MaxPool2d { size } => format!("maxpool({size})"),
            Layer::Dropout { rate } => format!("dropout({rate})"),
            Layer::Flatten => "flatten".into(),
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, Layer::Dense(_) | Layer::Conv2d(_))
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || Error::shape(format!("layer {} cannot take per-sample input {input:?}", self.name()));
        match self {
            Layer::Dense(d) => {
                if input != [d.in_units()] {
                    return Err(bad());
                }
                Ok(vec![d.out_units()])
            }
            Layer::Conv2d(c) => {
                let [ch, h, w] = input else { return Err(bad()) };
                if *ch != c.in_channels() {
                    return Err(bad());
                }
                let g = c.geometry(*h, *w).ok_or_else(bad)?;
                Ok(vec![c.out_channels(), g.oh, g.ow])
            }
            Layer::BatchNorm(b) => {
                if input.first() != Some(&b.channels()) {
                    return Err(bad());
                }
                Ok(input.to_vec())
            }
            Layer::Activation(_) => Ok(input.to_vec()),
            Layer::Dropout { rate } => {
                if !(0.0..=1.0).contains(rate) {
                    return Err(Error::shape(format!("dropout rate {rate} outside [0, 1]")));
                }
                Ok(input.to_vec())
            }
            Layer::MaxPool2d { size } => {
                let [ch, h, w] = input else { return Err(bad()) };
                if *size == 0 || *h < *size || *w < *size {
                    return Err(bad());
                }
                Ok(vec![*ch, h / size, w / size])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Trainable parameters, in a fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            _ => Vec::new(),
        }
    }

    /// Every stored parameter including non-trainable BN statistics.
    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::BatchNorm(b) => 4 * b.channels(),
            _ => self.params().iter().map(|t| t.len()).sum(),
        }
    }

    /// Applies the layer to a batch whose shape was validated by the model.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let m = x.batch();
        match self {
            Layer::Dense(d) => {
                let (i, o) = (d.in_units(), d.out_units());
                let mut y = vec![0.0; m * o];
                for row in y.chunks_mut(o) {
                    row.copy_from_slice(d.bias.data());
                }
                gemm(m, i, o, 1.0, x.data(), (i, 1), d.weight.data(), (1, i), 1.0, &mut y, o);
                Tensor::from_parts(vec![m, o], y)
            }
            Layer::Conv2d(c) => conv_forward(c, x),
            Layer::BatchNorm(b) => {
                let (scale, shift) = b.affine();
                let (ch, s) = x.channel_layout();
                let mut y = x.data().to_vec();
                for sample in y.chunks_mut(ch * s) {
                    for c in 0..ch {
                        for v in &mut sample[c * s..(c + 1) * s] {
                            *v = scale[c] * *v + shift[c];
                        }
                    }
                }
                Tensor::from_parts(x.shape().to_vec(), y)
            }
            Layer::Activation(a) => x.map(|v| a.apply(v)),
            Layer::Dropout { .. } => x.clone(),
            Layer::Flatten => Tensor::from_parts(vec![m, x.sample_len()], x.data().to_vec()),
            Layer::MaxPool2d { size } => maxpool_forward(*size, x),
        }
    }

    /// Like [`Layer::forward`], reusing `x`'s buffer where the layer acts
    /// elementwise.
    pub fn forward_owned(&self, mut x: Tensor) -> Tensor {
        match self {
            Layer::Activation(a) => {
                a.apply_slice(x.data_mut());
                x
            }
            Layer::Dropout { .. } => x,
            Layer::Flatten => {
                let (m, n) = (x.batch(), x.sample_len());
                Tensor::from_parts(vec![m, n], x.into_data())
            }
            _ => self.forward(&x),
        }
    }

    /// Back-propagates `gy` (gradient w.r.t. this layer's output) to the input.
    /// When `grads` is given, parameter gradients are accumulated into it in
    /// `params()` order.
    pub fn backward(&self, x: &Tensor, gy: &Tensor, grads: Option<&mut [Tensor]>) -> Tensor {
        let m = x.batch();
        match self {
            Layer::Dense(d) => {
                let (i, o) = (d.in_units(), d.out_units());
                if let Some(g) = grads {
                    let (gw, gb) = g.split_at_mut(1);
                    gemm(o, m, i, 1.0, gy.data(), (1, o), x.data(), (i, 1), 1.0, gw[0].data_mut(), i);
                    for row in gy.data().chunks(o) {
                        for (b, v) in gb[0].data_mut().iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                }
                let mut gx = vec![0.0; m * i];
                gemm(m, o, i, 1.0, gy.data(), (o, 1), d.weight.data(), (i, 1), 0.0, &mut gx, i);
                Tensor::from_parts(x.shape().to_vec(), gx)
            }
            Layer::Conv2d(c) => conv_backward(c, x, gy, grads),
            Layer::BatchNorm(b) => {
                let (scale, _) = b.affine();
                let (ch, s) = x.channel_layout();
                if let Some(g) = grads {
                    let inv: Vec<f64> = (0..ch).map(|c| 1.0 / (b.running_var.data()[c] + b.eps).sqrt()).collect();
                    let mut gg = vec![0.0; ch];
                    let mut gbeta = vec![0.0; ch];
                    for (xs, gs) in x.data().chunks(ch * s).zip(gy.data().chunks(ch * s)) {
                        for c in 0..ch {
                            let mu = b.running_mean.data()[c];
                            for k in c * s..(c + 1) * s {
                                gg[c] += gs[k] * (xs[k] - mu) * inv[c];
                                gbeta[c] += gs[k];
                            }
                        }
                    }
                    for c in 0..ch {
                        g[0].data_mut()[c] += gg[c];
                        g[1].data_mut()[c] += gbeta[c];
                    }
                }
                let mut gx = gy.data().to_vec();
                for sample in gx.chunks_mut(ch * s) {
                    for c in 0..ch {
                        for v in &mut sample[c * s..(c + 1) * s] {
                            *v *= scale[c];
                        }
                    }
                }
                Tensor::from_parts(x.shape().to_vec(), gx)
            }
            Layer::Activation(a) => {
                let gx = x
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&xv, &g)| if g == 0.0 { 0.0 } else { g * a.derivative(xv) })
                    .collect();
                Tensor::from_parts(x.shape().to_vec(), gx)
            }
            Layer::Dropout { .. } => gy.clone(),
            Layer::Flatten => Tensor::from_parts(x.shape().to_vec(), gy.data().to_vec()),
            Layer::MaxPool2d { size } => maxpool_backward(*size, x, gy),
        }
    }
}

fn conv_forward(c: &Conv2d, x: &Tensor) -> Tensor {
    let [m, _, h, w] = x.shape() else { unreachable!("validated conv input") };
    let (m, h, w) = (*m, *h, *w);
    let g = c.geometry(h, w).expect("validated conv geometry");
    let (oc, p, k) = (c.out_channels(), g.positions(), g.patch());
    let in_len = x.sample_len();
    let mut y = vec![0.0; m * oc * p];
    y.par_chunks_mut(oc * p).enumerate().for_each_init(
        || vec![0.0; k * p],
        |cols, (s, out)| {
            g.im2col(&x.data()[s * in_len..(s + 1) * in_len], cols);
            for (o, row) in out.chunks_mut(p).enumerate() {
                row.fill(c.bias.data()[o]);
            }
            gemm(oc, k, p, 1.0, c.weight.data(), (k, 1), cols, (p, 1), 1.0, out, p);
        },
    );
    Tensor::from_parts(vec![m, oc, g.oh, g.ow], y)
}

fn conv_backward(c: &Conv2d, x: &Tensor, gy: &Tensor, grads: Option<&mut [Tensor]>) -> Tensor {
    let [m, _, h, w] = x.shape() else { unreachable!("validated conv input") };
    let (m, h, w) = (*m, *h, *w);
    let g = c.geometry(h, w).expect("validated conv geometry");
    let (oc, p, k) = (c.out_channels(), g.positions(), g.patch());
    let in_len = x.sample_len();
    let out_len = oc * p;
    let want_params = grads.is_some();
    let mut gx = vec![0.0; m * in_len];

    // Each group of samples produces its own parameter-gradient partial;
    // partials are summed afterwards in group order.
    let partials: Vec<(Vec<f64>, Vec<f64>)> = gx
        .par_chunks_mut(GROUP * in_len)
        .enumerate()
        .map(|(gi, gx_group)| {
            let mut cols = vec![0.0; k * p];
            let mut gcols = vec![0.0; k * p];
            let mut gw = if want_params { vec![0.0; oc * k] } else { Vec::new() };
            let mut gb = if want_params { vec![0.0; oc] } else { Vec::new() };
            for (j, gxs) in gx_group.chunks_mut(in_len).enumerate() {
                let s = gi * GROUP + j;
                let gys = &gy.data()[s * out_len..(s + 1) * out_len];
                gemm(k, oc, p, 1.0, c.weight.data(), (1, k), gys, (p, 1), 0.0, &mut gcols, p);
                g.col2im(&gcols, gxs);
                if want_params {
                    g.im2col(&x.data()[s * in_len..(s + 1) * in_len], &mut cols);
                    gemm(oc, p, k, 1.0, gys, (p, 1), &cols, (1, p), 1.0, &mut gw, k);
                    for (o, row) in gys.chunks(p).enumerate() {
                        gb[o] += row.iter().sum::<f64>();
                    }
                }
            }
            (gw, gb)
        })
        .collect();

    if let Some(gr) = grads {
        for (gw, gb) in &partials {
            for (a, b) in gr[0].data_mut().iter_mut().zip(gw) {
                *a += b;
            }
            for (a, b) in gr[1].data_mut().iter_mut().zip(gb) {
                *a += b;
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), gx)
}

/// Index (within the sample) of the first maximum of each pooling window.
fn maxpool_argmax(size: usize, c: usize, h: usize, w: usize, xs: &[f64], mut visit: impl FnMut(usize, usize)) {
    let (oh, ow) = (h / size, w / size);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (ch * h + oy * size) * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = (ch * h + oy * size + dy) * w + ox * size + dx;
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                }
                visit((ch * oh + oy) * ow + ox, best);
            }
        }
    }
}

fn maxpool_forward(size: usize, x: &Tensor) -> Tensor {
    let [m, c, h, w] = *x.shape() else { unreachable!("validated pool input") };
    let (oh, ow) = (h / size, w / size);
    let mut y = vec![0.0; m * c * oh * ow];
    for (s, ys) in y.chunks_mut(c * oh * ow).enumerate() {
        let xs = x.sample(s);
        maxpool_argmax(size, c, h, w, xs, |o, i| ys[o] = xs[i]);
    }
    Tensor::from_parts(vec![m, c, oh, ow], y)
}

fn maxpool_backward(size: usize, x: &Tensor, gy: &Tensor) -> Tensor {
    let [m, c, h, w] = *x.shape() else { unreachable!("validated pool input") };
    let mut gx = vec![0.0; x.len()];
    let out_len = gy.sample_len();
    for s in 0..m {
        let xs = x.sample(s);
        let gys = &gy.data()[s * out_len..(s + 1) * out_len];
        let gxs = &mut gx[s * x.sample_len()..(s + 1) * x.sample_len()];
        maxpool_argmax(size, c, h, w, xs, |o, i| gxs[i] += gys[o]);
    }
    Tensor::from_parts(x.shape().to_vec(), gx)
}

/// Calls `visit(output_index, input_index)` for every pooling window winner
/// of one sample. Used by relevance propagation.
pub(crate) fn maxpool_winners(size: usize, shape: &[usize], xs: &[f64], visit: impl FnMut(usize, usize)) {
    let [c, h, w] = *shape else { unreachable!("validated pool input") };
    maxpool_argmax(size, c, h, w, xs, visit);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_on_ones_image_gives_four() {
        let conv = Conv2d::new(Tensor::filled(&[1, 1, 2, 2], 1.0), Tensor::zeros(&[1]), 1, 0).unwrap();
        let x = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let y = Layer::Conv2d(conv).forward(&x);
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn padded_strided_conv_matches_direct_sum() {
        let w: Vec<f64> = (0..2 * 2 * 3 * 3).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let conv = Conv2d::new(
            Tensor::new(vec![2, 2, 3, 3], w.clone()).unwrap(),
            Tensor::new(vec![2], vec![0.5, -1.0]).unwrap(),
            2,
            1,
        )
        .unwrap();
        let xv: Vec<f64> = (0..2 * 5 * 5).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Tensor::new(vec![1, 2, 5, 5], xv.clone()).unwrap();
        let y = Layer::Conv2d(conv).forward(&x);
        assert_eq!(y.shape(), &[1, 2, 3, 3]);
        for o in 0..2 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut acc = [0.5, -1.0][o];
                    for c in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let iy = (oy * 2 + ki) as isize - 1;
                                let ix = (ox * 2 + kj) as isize - 1;
                                if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                    acc += w[((o * 2 + c) * 3 + ki) * 3 + kj]
                                        * xv[(c * 5 + iy as usize) * 5 + ix as usize];
                                }
                            }
                        }
                    }
                    let got = y.data()[(o * 3 + oy) * 3 + ox];
                    assert!((got - acc).abs() < 1e-12, "{got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn single_channel_accumulation_matches_full_conv() {
        let w: Vec<f64> = (0..3 * 2 * 2 * 2).map(|i| (i as f64 * 0.9).cos()).collect();
        let conv = Conv2d::new(Tensor::new(vec![3, 2, 2, 2], w).unwrap(), Tensor::zeros(&[3]), 1, 0).unwrap();
        let xv: Vec<f64> = (0..2 * 4 * 4).map(|i| (i as f64 * 0.3).sin()).collect();
        let x = Tensor::new(vec![1, 2, 4, 4], xv.clone()).unwrap();
        let full = Layer::Conv2d(conv.clone()).forward(&x);
        let g = conv.geometry(4, 4).unwrap();
        let mut acc = vec![0.0; full.len()];
        for c in 0..2 {
            g.accumulate_channel(&xv[c * 16..(c + 1) * 16], &conv.weight, c, 1.0, &mut acc);
        }
        for (a, b) in acc.iter().zip(full.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_floors_and_routes_gradient_to_first_max() {
        let x = Tensor::new(vec![1, 1, 3, 3], vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 9.0, 9.0, 9.0]).unwrap();
        let layer = Layer::MaxPool2d { size: 2 };
        let y = layer.forward(&x);
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[1.0]);
        let gx = layer.backward(&x, &Tensor::filled(&[1, 1, 1, 1], 2.0), None);
        assert_eq!(gx.data()[0], 2.0);
        assert_eq!(gx.sum(), 2.0);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
        assert_eq!(Activation::LeakyRelu(0.01).derivative(-1.0), 0.01);
        assert!((Activation::Softplus.apply(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(Activation::Softplus.apply(800.0).is_finite());
    }
}
