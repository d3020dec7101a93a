//! Layer kinds and their forward/backward kernels.
//!
//! Activations are batched: the leading extent is the batch size and the
//! remaining extents are the per-sample shape. Spatial layers expect
//! `(batch, channels, length)` or `(batch, channels, height, width)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    Conv2d {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Conv1d {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
    },
    AvgPoolGlobal,
    Flatten,
    /// Nearest-neighbour upsampling along every spatial axis.
    Upsample {
        factor: usize,
    },
}

/// Auxiliary state a layer keeps between forward and backward.
#[derive(Debug, Clone, Default)]
pub(crate) enum LayerCache {
    #[default]
    None,
    ArgMax(Vec<usize>),
}

impl LayerKind {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerKind::Dense {
            inputs,
            outputs,
            bias: true,
        }
    }

    pub fn conv2d(c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerKind::Conv2d {
            c_in,
            c_out,
            kernel,
            stride,
            padding,
        }
    }

    pub fn conv1d(c_in: usize, c_out: usize, kernel: usize, padding: usize) -> Self {
        LayerKind::Conv1d {
            c_in,
            c_out,
            kernel,
            stride: 1,
            padding,
        }
    }

    /// Shapes of the parameter tensors in storage order (weight, then bias).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerKind::Dense { inputs, outputs, bias } => {
                let mut v = vec![vec![outputs, inputs]];
                if bias {
                    v.push(vec![outputs]);
                }
                v
            }
            LayerKind::Conv2d {
                c_in, c_out, kernel, ..
            } => vec![vec![c_out, c_in, kernel, kernel], vec![c_out]],
            LayerKind::Conv1d {
                c_in, c_out, kernel, ..
            } => vec![vec![c_out, c_in, kernel], vec![c_out]],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            LayerKind::Dense { inputs, outputs, .. } => (inputs, outputs),
            LayerKind::Conv2d {
                c_in, c_out, kernel, ..
            } => (c_in * kernel * kernel, c_out * kernel * kernel),
            LayerKind::Conv1d {
                c_in, c_out, kernel, ..
            } => (c_in * kernel, c_out * kernel),
            _ => (0, 0),
        }
    }

    /// Fresh parameters: weights uniform in `[-a, a]` with
    /// `a = sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Tensor> {
        let (fan_in, fan_out) = self.fans();
        let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        self.param_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                if i == 0 {
                    let mut t = Tensor::zeros(shape);
                    for v in t.data_mut() {
                        *v = rng.random_range(-bound..=bound);
                    }
                    t
                } else {
                    Tensor::zeros(shape)
                }
            })
            .collect()
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerKind::Dense { inputs, outputs, .. } => {
                if input != [inputs] {
                    return Err(format!("dense expects [{inputs}], got {input:?}"));
                }
                Ok(vec![outputs])
            }
            LayerKind::Conv2d {
                c_in,
                c_out,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = input else {
                    return Err(format!("conv2d expects [c, h, w], got {input:?}"));
                };
                if *c != c_in {
                    return Err(format!("conv2d expects {c_in} channels, got {c}"));
                }
                let ho = conv_extent(*h, kernel, stride, padding)?;
                let wo = conv_extent(*w, kernel, stride, padding)?;
                Ok(vec![c_out, ho, wo])
            }
            LayerKind::Conv1d {
                c_in,
                c_out,
                kernel,
                stride,
                padding,
            } => {
                let [c, l] = input else {
                    return Err(format!("conv1d expects [c, l], got {input:?}"));
                };
                if *c != c_in {
                    return Err(format!("conv1d expects {c_in} channels, got {c}"));
                }
                Ok(vec![c_out, conv_extent(*l, kernel, stride, padding)?])
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::MaxPool { kernel } => {
                if input.len() < 2 || kernel == 0 {
                    return Err(format!("maxpool needs spatial input, got {input:?}"));
                }
                let mut out = vec![input[0]];
                for &d in &input[1..] {
                    if d < kernel {
                        return Err(format!("maxpool({kernel}) on extent {d}"));
                    }
                    out.push(d / kernel);
                }
                Ok(out)
            }
            LayerKind::AvgPoolGlobal => {
                if input.is_empty() {
                    return Err("avgpool on empty shape".into());
                }
                Ok(vec![input[0]])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::Upsample { factor } => {
                if input.len() < 2 || factor == 0 {
                    return Err(format!("upsample needs spatial input, got {input:?}"));
                }
                let mut out = vec![input[0]];
                out.extend(input[1..].iter().map(|d| d * factor));
                Ok(out)
            }
        }
    }

    /// Forward FLOPs for a batch with the given per-sample input shape.
    ///
    /// Dense counts `2·in·out` per sample, convolutions `2·k^d·c_in` per
    /// output element; element-wise and pooling layers count one per input
    /// element. Bias additions are not counted.
    pub fn flops(&self, input: &[usize], batch: usize) -> u128 {
        let batch = batch as u128;
        let numel: u128 = input.iter().map(|&d| d as u128).product();
        match *self {
            LayerKind::Dense { inputs, outputs, .. } => batch * 2 * inputs as u128 * outputs as u128,
            LayerKind::Conv2d {
                c_in, c_out, kernel, ..
            } => {
                let out = self.output_shape(input).unwrap_or_default();
                let spatial: u128 = out.iter().skip(1).map(|&d| d as u128).product();
                batch * spatial * c_out as u128 * 2 * (kernel * kernel * c_in) as u128
            }
            LayerKind::Conv1d {
                c_in, c_out, kernel, ..
            } => {
                let out = self.output_shape(input).unwrap_or_default();
                let spatial: u128 = out.iter().skip(1).map(|&d| d as u128).product();
                batch * spatial * c_out as u128 * 2 * (kernel * c_in) as u128
            }
            LayerKind::Relu
            | LayerKind::MaxPool { .. }
            | LayerKind::AvgPoolGlobal
            | LayerKind::Flatten
            | LayerKind::Upsample { .. } => batch * numel,
        }
    }

    pub(crate) fn forward(&self, x: &Tensor, params: &[&Tensor]) -> (Tensor, LayerCache) {
        match *self {
            LayerKind::Dense { inputs, outputs, .. } => (dense_forward(x, params, inputs, outputs), LayerCache::None),
            LayerKind::Conv2d { stride, padding, .. } => (conv2d_forward(x, params, stride, padding), LayerCache::None),
            LayerKind::Conv1d { stride, padding, .. } => (conv1d_forward(x, params, stride, padding), LayerCache::None),
            LayerKind::Relu => {
                let data = x.data().iter().map(|&v| v.max(0.0)).collect();
                (tensor(x.shape().to_vec(), data), LayerCache::None)
            }
            LayerKind::MaxPool { kernel } => {
                let (y, arg) = maxpool_forward(x, kernel);
                (y, LayerCache::ArgMax(arg))
            }
            LayerKind::AvgPoolGlobal => (avgpool_forward(x), LayerCache::None),
            LayerKind::Flatten => {
                let b = x.batch();
                let rest = x.numel() / b;
                (tensor(vec![b, rest], x.data().to_vec()), LayerCache::None)
            }
            LayerKind::Upsample { factor } => (upsample_forward(x, factor), LayerCache::None),
        }
    }

    /// Returns the input gradient and one gradient per parameter tensor.
    pub(crate) fn backward(
        &self,
        x: &Tensor,
        cache: &LayerCache,
        gy: &Tensor,
        params: &[&Tensor],
    ) -> (Tensor, Vec<Tensor>) {
        match *self {
            LayerKind::Dense { inputs, outputs, .. } => dense_backward(x, gy, params, inputs, outputs),
            LayerKind::Conv2d { stride, padding, .. } => conv2d_backward(x, gy, params, stride, padding),
            LayerKind::Conv1d { stride, padding, .. } => conv1d_backward(x, gy, params, stride, padding),
            LayerKind::Relu => {
                let data = x
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
                    .collect();
                (tensor(x.shape().to_vec(), data), Vec::new())
            }
            LayerKind::MaxPool { .. } => {
                let LayerCache::ArgMax(arg) = cache else {
                    unreachable!("maxpool backward without cached argmax");
                };
                let mut gx = Tensor::zeros(x.shape().to_vec());
                let gxd = gx.data_mut();
                for (&src, &g) in arg.iter().zip(gy.data()) {
                    gxd[src] += g;
                }
                (gx, Vec::new())
            }
            LayerKind::AvgPoolGlobal => (avgpool_backward(x, gy), Vec::new()),
            LayerKind::Flatten => (tensor(x.shape().to_vec(), gy.data().to_vec()), Vec::new()),
            LayerKind::Upsample { factor } => (upsample_backward(x, gy, factor), Vec::new()),
        }
    }
}

fn conv_extent(n: usize, k: usize, stride: usize, pad: usize) -> std::result::Result<usize, String> {
    if stride == 0 || k == 0 {
        return Err("kernel and stride must be positive".into());
    }
    if n + 2 * pad < k {
        return Err(format!("kernel {k} larger than padded extent {}", n + 2 * pad));
    }
    Ok((n + 2 * pad - k) / stride + 1)
}

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("kernel produced inconsistent shape")
}

fn dense_forward(x: &Tensor, params: &[&Tensor], inputs: usize, outputs: usize) -> Tensor {
    let b = x.batch();
    let w = params[0].data();
    let bias = params.get(1).map(|t| t.data());
    let xd = x.data();
    let mut y = vec![0.0; b * outputs];
    for n in 0..b {
        let row = &xd[n * inputs..(n + 1) * inputs];
        for o in 0..outputs {
            let wr = &w[o * inputs..(o + 1) * inputs];
            let mut acc = bias.map_or(0.0, |bb| bb[o]);
            for (a, c) in wr.iter().zip(row) {
                acc += a * c;
            }
            y[n * outputs + o] = acc;
        }
    }
    tensor(vec![b, outputs], y)
}

fn dense_backward(x: &Tensor, gy: &Tensor, params: &[&Tensor], inputs: usize, outputs: usize) -> (Tensor, Vec<Tensor>) {
    let b = x.batch();
    let w = params[0].data();
    let xd = x.data();
    let g = gy.data();
    let mut gw = vec![0.0; outputs * inputs];
    let mut gb = vec![0.0; outputs];
    let mut gx = vec![0.0; b * inputs];
    for n in 0..b {
        let row = &xd[n * inputs..(n + 1) * inputs];
        let gxr = &mut gx[n * inputs..(n + 1) * inputs];
        for o in 0..outputs {
            let go = g[n * outputs + o];
            if go == 0.0 {
                continue;
            }
            gb[o] += go;
            let wr = &w[o * inputs..(o + 1) * inputs];
            let gwr = &mut gw[o * inputs..(o + 1) * inputs];
            for i in 0..inputs {
                gwr[i] += go * row[i];
                gxr[i] += go * wr[i];
            }
        }
    }
    let mut grads = vec![tensor(vec![outputs, inputs], gw)];
    if params.len() > 1 {
        grads.push(tensor(vec![outputs], gb));
    }
    (tensor(x.shape().to_vec(), gx), grads)
}

/// Output positions `j0..j1` whose kernel tap `u` lands inside `[0, l)`,
/// i.e. `0 <= j·stride + u − pad < l`.
fn tap_range(u: usize, pad: usize, stride: usize, l: usize, lo: usize) -> (usize, usize) {
    let j0 = if u >= pad { 0 } else { (pad - u).div_ceil(stride) };
    let j1 = if l + pad > u {
        ((l + pad - u - 1) / stride + 1).min(lo)
    } else {
        0
    };
    (j0, j1.max(j0))
}

fn conv1d_forward(x: &Tensor, params: &[&Tensor], stride: usize, pad: usize) -> Tensor {
    let (b, c_in, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let wshape = params[0].shape();
    let (c_out, k) = (wshape[0], wshape[2]);
    let lo = (l + 2 * pad - k) / stride + 1;
    let w = params[0].data();
    let bias = params[1].data();
    let xd = x.data();
    let mut y = vec![0.0; b * c_out * lo];
    for n in 0..b {
        for o in 0..c_out {
            let out = &mut y[(n * c_out + o) * lo..(n * c_out + o + 1) * lo];
            out.fill(bias[o]);
            for c in 0..c_in {
                let xr = &xd[(n * c_in + c) * l..(n * c_in + c + 1) * l];
                let wr = &w[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                for (u, &wv) in wr.iter().enumerate() {
                    let (j0, j1) = tap_range(u, pad, stride, l, lo);
                    if stride == 1 {
                        let src = &xr[j0 + u - pad..j1 + u - pad];
                        for (acc, &xv) in out[j0..j1].iter_mut().zip(src) {
                            *acc += wv * xv;
                        }
                    } else {
                        for j in j0..j1 {
                            out[j] += wv * xr[j * stride + u - pad];
                        }
                    }
                }
            }
        }
    }
    tensor(vec![b, c_out, lo], y)
}

fn conv1d_backward(x: &Tensor, gy: &Tensor, params: &[&Tensor], stride: usize, pad: usize) -> (Tensor, Vec<Tensor>) {
    let (b, c_in, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let wshape = params[0].shape().to_vec();
    let (c_out, k) = (wshape[0], wshape[2]);
    let lo = gy.shape()[2];
    let w = params[0].data();
    let xd = x.data();
    let g = gy.data();
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; c_out];
    let mut gx = vec![0.0; xd.len()];
    for n in 0..b {
        for o in 0..c_out {
            let gr = &g[(n * c_out + o) * lo..(n * c_out + o + 1) * lo];
            gb[o] += gr.iter().sum::<f64>();
            for c in 0..c_in {
                let xoff = (n * c_in + c) * l;
                let woff = (o * c_in + c) * k;
                for u in 0..k {
                    let (j0, j1) = tap_range(u, pad, stride, l, lo);
                    let wv = w[woff + u];
                    let mut acc = 0.0;
                    if stride == 1 {
                        let start = xoff + j0 + u - pad;
                        let xs = &xd[start..start + (j1 - j0)];
                        for (&gv, &xv) in gr[j0..j1].iter().zip(xs) {
                            acc += gv * xv;
                        }
                        for (gxv, &gv) in gx[start..start + (j1 - j0)].iter_mut().zip(&gr[j0..j1]) {
                            *gxv += gv * wv;
                        }
                    } else {
                        for (j, &gv) in gr.iter().enumerate().take(j1).skip(j0) {
                            let p = xoff + j * stride + u - pad;
                            acc += gv * xd[p];
                            gx[p] += gv * wv;
                        }
                    }
                    gw[woff + u] += acc;
                }
            }
        }
    }
    (
        tensor(x.shape().to_vec(), gx),
        vec![tensor(wshape, gw), tensor(vec![c_out], gb)],
    )
}

fn conv2d_forward(x: &Tensor, params: &[&Tensor], stride: usize, pad: usize) -> Tensor {
    let s = x.shape();
    let (b, c_in, h, wd) = (s[0], s[1], s[2], s[3]);
    let wshape = params[0].shape();
    let (c_out, k) = (wshape[0], wshape[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let w = params[0].data();
    let bias = params[1].data();
    let xd = x.data();
    let mut y = vec![0.0; b * c_out * ho * wo];
    for n in 0..b {
        for o in 0..c_out {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = bias[o];
                    for c in 0..c_in {
                        for u in 0..k {
                            let r = (i * stride + u) as isize - pad as isize;
                            if r < 0 || r as usize >= h {
                                continue;
                            }
                            for v in 0..k {
                                let q = (j * stride + v) as isize - pad as isize;
                                if q < 0 || q as usize >= wd {
                                    continue;
                                }
                                acc += w[((o * c_in + c) * k + u) * k + v]
                                    * xd[((n * c_in + c) * h + r as usize) * wd + q as usize];
                            }
                        }
                    }
                    y[((n * c_out + o) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    tensor(vec![b, c_out, ho, wo], y)
}

fn conv2d_backward(x: &Tensor, gy: &Tensor, params: &[&Tensor], stride: usize, pad: usize) -> (Tensor, Vec<Tensor>) {
    let s = x.shape();
    let (b, c_in, h, wd) = (s[0], s[1], s[2], s[3]);
    let wshape = params[0].shape().to_vec();
    let (c_out, k) = (wshape[0], wshape[2]);
    let (ho, wo) = (gy.shape()[2], gy.shape()[3]);
    let w = params[0].data();
    let xd = x.data();
    let g = gy.data();
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; c_out];
    let mut gx = vec![0.0; xd.len()];
    for n in 0..b {
        for o in 0..c_out {
            for i in 0..ho {
                for j in 0..wo {
                    let gv = g[((n * c_out + o) * ho + i) * wo + j];
                    gb[o] += gv;
                    if gv == 0.0 {
                        continue;
                    }
                    for c in 0..c_in {
                        for u in 0..k {
                            let r = (i * stride + u) as isize - pad as isize;
                            if r < 0 || r as usize >= h {
                                continue;
                            }
                            for v in 0..k {
                                let q = (j * stride + v) as isize - pad as isize;
                                if q < 0 || q as usize >= wd {
                                    continue;
                                }
                                let wi = ((o * c_in + c) * k + u) * k + v;
                                let xi = ((n * c_in + c) * h + r as usize) * wd + q as usize;
                                gw[wi] += gv * xd[xi];
                                gx[xi] += gv * w[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        tensor(x.shape().to_vec(), gx),
        vec![tensor(wshape, gw), tensor(vec![c_out], gb)],
    )
}

/// Splits a batched spatial tensor into (batch * channels, spatial extents).
fn spatial_dims(x: &Tensor) -> (usize, &[usize]) {
    let s = x.shape();
    (s[0] * s[1], &s[2..])
}

fn maxpool_forward(x: &Tensor, k: usize) -> (Tensor, Vec<usize>) {
    let (planes, sp) = spatial_dims(x);
    let xd = x.data();
    match *sp {
        [l] => {
            let lo = l / k;
            let mut y = Vec::with_capacity(planes * lo);
            let mut arg = Vec::with_capacity(planes * lo);
            for p in 0..planes {
                for j in 0..lo {
                    let mut best = p * l + j * k;
                    for u in 1..k {
                        let idx = p * l + j * k + u;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    y.push(xd[best]);
                    arg.push(best);
                }
            }
            (tensor(vec![x.shape()[0], x.shape()[1], lo], y), arg)
        }
        [h, w] => {
            let (ho, wo) = (h / k, w / k);
            let mut y = Vec::with_capacity(planes * ho * wo);
            let mut arg = Vec::with_capacity(planes * ho * wo);
            for p in 0..planes {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut best = p * h * w + (i * k) * w + j * k;
                        for u in 0..k {
                            for v in 0..k {
                                let idx = p * h * w + (i * k + u) * w + j * k + v;
                                if xd[idx] > xd[best] {
                                    best = idx;
                                }
                            }
                        }
                        y.push(xd[best]);
                        arg.push(best);
                    }
                }
            }
            (tensor(vec![x.shape()[0], x.shape()[1], ho, wo], y), arg)
        }
        _ => unreachable!("maxpool shape validated at graph construction"),
    }
}

fn avgpool_forward(x: &Tensor) -> Tensor {
    if x.shape().len() == 2 {
        return x.clone();
    }
    let (planes, sp) = spatial_dims(x);
    let area: usize = sp.iter().product();
    let data = x
        .data()
        .chunks(area)
        .map(|c| c.iter().sum::<f64>() / area as f64)
        .collect::<Vec<_>>();
    debug_assert_eq!(data.len(), planes);
    tensor(vec![x.shape()[0], x.shape()[1]], data)
}

fn avgpool_backward(x: &Tensor, gy: &Tensor) -> Tensor {
    if x.shape().len() == 2 {
        return gy.clone();
    }
    let (_, sp) = spatial_dims(x);
    let area: usize = sp.iter().product();
    let mut gx = Vec::with_capacity(x.numel());
    for &g in gy.data() {
        gx.extend(std::iter::repeat_n(g / area as f64, area));
    }
    tensor(x.shape().to_vec(), gx)
}

fn upsample_forward(x: &Tensor, f: usize) -> Tensor {
    let (planes, sp) = spatial_dims(x);
    let xd = x.data();
    match *sp {
        [l] => {
            let mut y = Vec::with_capacity(planes * l * f);
            for p in 0..planes {
                for j in 0..l * f {
                    y.push(xd[p * l + j / f]);
                }
            }
            tensor(vec![x.shape()[0], x.shape()[1], l * f], y)
        }
        [h, w] => {
            let mut y = Vec::with_capacity(planes * h * w * f * f);
            for p in 0..planes {
                for i in 0..h * f {
                    for j in 0..w * f {
                        y.push(xd[p * h * w + (i / f) * w + j / f]);
                    }
                }
            }
            tensor(vec![x.shape()[0], x.shape()[1], h * f, w * f], y)
        }
        _ => unreachable!("upsample shape validated at graph construction"),
    }
}

fn upsample_backward(x: &Tensor, gy: &Tensor, f: usize) -> Tensor {
    let (planes, sp) = spatial_dims(x);
    let g = gy.data();
    let mut gx = vec![0.0; x.numel()];
    match *sp {
        [l] => {
            for p in 0..planes {
                for j in 0..l * f {
                    gx[p * l + j / f] += g[p * l * f + j];
                }
            }
        }
        [h, w] => {
            for p in 0..planes {
                for i in 0..h * f {
                    for j in 0..w * f {
                        gx[p * h * w + (i / f) * w + j / f] += g[(p * h * f + i) * w * f + j];
                    }
                }
            }
        }
        _ => unreachable!("upsample shape validated at graph construction"),
    }
    tensor(x.shape().to_vec(), gx)
}

impl serde::Serialize for LayerKind {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for LayerKind {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerKind::Dense { inputs, outputs, bias } => {
                if bias {
                    write!(f, "dense({inputs},{outputs})")
                } else {
                    write!(f, "dense({inputs},{outputs},nobias)")
                }
            }
            LayerKind::Conv2d {
                c_in,
                c_out,
                kernel,
                stride,
                padding,
            } => write!(f, "conv2d({c_in},{c_out},{kernel},{stride},{padding})"),
            LayerKind::Conv1d {
                c_in,
                c_out,
                kernel,
                stride,
                padding,
            } => write!(f, "conv1d({c_in},{c_out},{kernel},{stride},{padding})"),
            LayerKind::Relu => f.write_str("relu"),
            LayerKind::MaxPool { kernel } => write!(f, "maxpool({kernel})"),
            LayerKind::AvgPoolGlobal => f.write_str("avgpool"),
            LayerKind::Flatten => f.write_str("flatten"),
            LayerKind::Upsample { factor } => write!(f, "upsample({factor})"),
        }
    }
}

/// Parses layer specs such as `dense(16,32)`, `conv2d(3,8,3,1,1)`,
/// `conv1d(1,8,3,1,1)`, `relu`, `maxpool(2)`, `avgpool`, `flatten`,
/// `upsample(2)`. Case-insensitive, whitespace ignored.
impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_ascii_lowercase();
        let bad = || Error::InvalidArgument(format!("unrecognised layer spec {s:?}"));
        let (name, args) = match compact.find('(') {
            Some(open) => {
                let inner = compact[open + 1..].strip_suffix(')').ok_or_else(bad)?;
                (&compact[..open], inner.split(',').collect::<Vec<_>>())
            }
            None => (compact.as_str(), Vec::new()),
        };
        let mut bias = true;
        let mut nums = Vec::new();
        for a in &args {
            match *a {
                "nobias" | "false" if name == "dense" => bias = false,
                _ => nums.push(a.parse::<usize>().map_err(|_| bad())?),
            }
        }
        let kind = match (name, nums.as_slice()) {
            ("dense" | "linear", &[i, o]) => LayerKind::Dense {
                inputs: i,
                outputs: o,
                bias,
            },
            ("conv2d", &[ci, co, k]) => LayerKind::conv2d(ci, co, k, 1, 0),
            ("conv2d", &[ci, co, k, st, p]) => LayerKind::conv2d(ci, co, k, st, p),
            ("conv1d", &[ci, co, k]) => LayerKind::conv1d(ci, co, k, 0),
            ("conv1d", &[ci, co, k, st, p]) => LayerKind::Conv1d {
                c_in: ci,
                c_out: co,
                kernel: k,
                stride: st,
                padding: p,
            },
            ("relu", []) => LayerKind::Relu,
            ("maxpool", &[k]) => LayerKind::MaxPool { kernel: k },
            ("avgpool" | "gap", []) => LayerKind::AvgPoolGlobal,
            ("flatten", []) => LayerKind::Flatten,
            ("upsample", &[f]) => LayerKind::Upsample { factor: f },
            _ => return Err(bad()),
        };
        let dims_ok = match kind {
            LayerKind::Dense { inputs, outputs, .. } => inputs > 0 && outputs > 0,
            LayerKind::Conv2d {
                c_in,
                c_out,
                kernel,
                stride,
                ..
            }
            | LayerKind::Conv1d {
                c_in,
                c_out,
                kernel,
                stride,
                ..
            } => c_in > 0 && c_out > 0 && kernel > 0 && stride > 0,
            LayerKind::MaxPool { kernel } => kernel > 0,
            LayerKind::Upsample { factor } => factor > 0,
            _ => true,
        };
        if !dims_ok {
            return Err(Error::InvalidArgument(format!("layer spec {s:?} has a zero extent")));
        }
        Ok(kind)
    }
}
