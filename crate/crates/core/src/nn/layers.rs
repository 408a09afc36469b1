//! Feed-forward layers of the recognizer.

use rand::Rng;

use super::init::he_uniform;
use super::tensor::Tensor;
use super::{BackwardCtx, Layer};
use crate::error::{Error, Result};

fn missing_cache() -> Error {
    Error::BackwardWithoutForward
}

/// 3x3 convolution, stride 1, zero "same" padding, optional ReLU.
#[derive(Debug, Clone)]
pub struct Conv2d {
    name: String,
    pub weight: Tensor,
    pub bias: Tensor,
    relu: bool,
    cache: Option<(Tensor, Tensor)>,
}

impl Conv2d {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, relu: bool, rng: &mut impl Rng) -> Self {
        let fan_in = in_channels * 9;
        Self {
            name: name.to_string(),
            weight: he_uniform(&[out_channels, in_channels, 3, 3], fan_in, rng),
            bias: Tensor::zeros(&[out_channels]),
            relu,
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Output columns `[lo, hi)` valid for kernel column `kx`; the source column is `x + kx - 1`.
#[inline]
fn col_range(kx: usize, w: usize) -> (usize, usize) {
    (usize::from(kx == 0), if kx == 2 { w - 1 } else { w })
}

impl Layer for Conv2d {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Tensor, _train: bool) -> Result<Tensor> {
        input.expect_rank(4, "conv")?;
        let s = input.shape();
        let (n, cin, h, w) = (s[0], s[1], s[2], s[3]);
        if cin != self.in_channels() {
            return Err(Error::DimensionMismatch(format!(
                "{}: expected {} input channels, got {cin}",
                self.name,
                self.in_channels()
            )));
        }
        let cout = self.out_channels();
        let plane = h * w;
        let x = input.data();
        let wt = self.weight.data();
        let mut out = vec![0.0; n * cout * plane];
        for b in 0..n {
            for co in 0..cout {
                let o = &mut out[(b * cout + co) * plane..(b * cout + co + 1) * plane];
                o.iter_mut().for_each(|v| *v = self.bias.data()[co]);
                for ci in 0..cin {
                    let src = &x[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                    for ky in 0..3 {
                        let (y_lo, y_hi) = (usize::from(ky == 0), if ky == 2 { h - 1 } else { h });
                        for kx in 0..3 {
                            let wv = wt[((co * cin + ci) * 3 + ky) * 3 + kx];
                            let (x_lo, x_hi) = col_range(kx, w);
                            for y in y_lo..y_hi {
                                let sy = y + ky - 1;
                                let orow = &mut o[y * w + x_lo..y * w + x_hi];
                                let srow = &src[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                                for (ov, sv) in orow.iter_mut().zip(srow) {
                                    *ov += wv * sv;
                                }
                            }
                        }
                    }
                }
                if self.relu {
                    o.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
        }
        let out = Tensor::from_vec(&[n, cout, h, w], out)?;
        self.cache = Some((input.clone(), out.clone()));
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor, ctx: BackwardCtx) -> Result<Option<Tensor>> {
        let (input, output) = self.cache.as_ref().ok_or_else(missing_cache)?;
        let s = input.shape();
        let (n, cin, h, w) = (s[0], s[1], s[2], s[3]);
        let cout = self.out_channels();
        let plane = h * w;
        let mut g = grad_out.data().to_vec();
        if self.relu {
            for (gv, &ov) in g.iter_mut().zip(output.data()) {
                if ov <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        let x = input.data();
        if ctx.param_grads {
            let mut db = vec![0.0; cout];
            let mut dw = vec![0.0; self.weight.len()];
            for b in 0..n {
                for co in 0..cout {
                    let go = &g[(b * cout + co) * plane..(b * cout + co + 1) * plane];
                    db[co] += go.iter().sum::<f64>();
                    for ci in 0..cin {
                        let src = &x[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                        for ky in 0..3 {
                            let (y_lo, y_hi) = (usize::from(ky == 0), if ky == 2 { h - 1 } else { h });
                            for kx in 0..3 {
                                let (x_lo, x_hi) = col_range(kx, w);
                                let mut acc = 0.0;
                                for y in y_lo..y_hi {
                                    let sy = y + ky - 1;
                                    let grow = &go[y * w + x_lo..y * w + x_hi];
                                    let srow = &src[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                                    acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                                }
                                dw[((co * cin + ci) * 3 + ky) * 3 + kx] += acc;
                            }
                        }
                    }
                }
            }
            accumulate(self.weight.grad_mut(), &dw);
            accumulate(self.bias.grad_mut(), &db);
        }
        if !ctx.input_grad {
            return Ok(None);
        }
        let wt = self.weight.data();
        let mut dx = vec![0.0; x.len()];
        for b in 0..n {
            for co in 0..cout {
                let go = &g[(b * cout + co) * plane..(b * cout + co + 1) * plane];
                for ci in 0..cin {
                    let dst = &mut dx[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                    for ky in 0..3 {
                        let (y_lo, y_hi) = (usize::from(ky == 0), if ky == 2 { h - 1 } else { h });
                        for kx in 0..3 {
                            let wv = wt[((co * cin + ci) * 3 + ky) * 3 + kx];
                            let (x_lo, x_hi) = col_range(kx, w);
                            for y in y_lo..y_hi {
                                let sy = y + ky - 1;
                                let grow = &go[y * w + x_lo..y * w + x_hi];
                                let drow = &mut dst[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                                for (dv, gv) in drow.iter_mut().zip(grow) {
                                    *dv += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Some(Tensor::from_vec(s, dx)?))
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

pub(crate) fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
#[derive(Debug, Clone)]
pub struct MaxPool2 {
    name: String,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2 {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            cache: None,
        }
    }
}

impl Layer for MaxPool2 {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Tensor, _train: bool) -> Result<Tensor> {
        input.expect_rank(4, "max pool")?;
        let s = input.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::InputTooSmall {
                what: "pooling input side",
                found: h.min(w),
                minimum: 2,
            });
        }
        let x = input.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut arg = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let base = p * h * w;
            for y in 0..oh {
                for xo in 0..ow {
                    let cands = [
                        base + 2 * y * w + 2 * xo,
                        base + 2 * y * w + 2 * xo + 1,
                        base + (2 * y + 1) * w + 2 * xo,
                        base + (2 * y + 1) * w + 2 * xo + 1,
                    ];
                    let mut best = cands[0];
                    for &i in &cands[1..] {
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    out.push(x[best]);
                    arg.push(best);
                }
            }
        }
        self.cache = Some((s.to_vec(), arg));
        Tensor::from_vec(&[n, c, oh, ow], out)
    }

    fn backward(&mut self, grad_out: &Tensor, ctx: BackwardCtx) -> Result<Option<Tensor>> {
        let (shape, arg) = self.cache.as_ref().ok_or_else(missing_cache)?;
        if !ctx.input_grad {
            return Ok(None);
        }
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (&i, &g) in arg.iter().zip(grad_out.data()) {
            d[i] += g;
        }
        Ok(Some(dx))
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Per-channel batch normalization. Rank-4 inputs normalize over axis 1
/// (`[N, C, H, W]`), rank-3 inputs over the last axis (`[N, T, F]`).
#[derive(Debug, Clone)]
pub struct BatchNorm {
    name: String,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    shape: Vec<usize>,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: 0.9,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn channel_of(shape: &[usize]) -> Result<Box<dyn Fn(usize) -> usize>> {
        match *shape {
            [_, c, h, w] => Ok(Box::new(move |i| (i / (h * w)) % c)),
            [_, _, f] => Ok(Box::new(move |i| i % f)),
            _ => Err(Error::DimensionMismatch(format!(
                "batch norm expects rank 3 or 4, got {shape:?}"
            ))),
        }
    }

    fn channel_count(shape: &[usize]) -> usize {
        if shape.len() == 4 {
            shape[1]
        } else {
            shape[shape.len() - 1]
        }
    }
}

impl Layer for BatchNorm {
    fn name(&self) -> &str {
        &self.name
    }

    /// `train` selects batch statistics (and updates the running averages);
    /// otherwise the running averages are used.
    fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        let shape = input.shape().to_vec();
        let chan = Self::channel_of(&shape)?;
        let c = self.channels();
        if Self::channel_count(&shape) != c {
            return Err(Error::DimensionMismatch(format!(
                "{}: expected {c} channels, got shape {shape:?}",
                self.name
            )));
        }
        let x = input.data();
        let per_channel = (x.len() / c) as f64;
        let (mean, var) = if train {
            let mut mean = vec![0.0; c];
            for (i, &v) in x.iter().enumerate() {
                mean[chan(i)] += v;
            }
            mean.iter_mut().for_each(|m| *m /= per_channel);
            let mut var = vec![0.0; c];
            for (i, &v) in x.iter().enumerate() {
                let ch = chan(i);
                var[ch] += (v - mean[ch]).powi(2);
            }
            var.iter_mut().for_each(|v| *v /= per_channel);
            let m = self.momentum;
            for ch in 0..c {
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = m * *rm + (1.0 - m) * mean[ch];
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = m * *rv + (1.0 - m) * var[ch];
            }
            (mean, var)
        } else {
            (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let (g, b) = (self.gamma.data(), self.beta.data());
        let mut x_hat = Vec::with_capacity(x.len());
        let mut out = Vec::with_capacity(x.len());
        for (i, &v) in x.iter().enumerate() {
            let ch = chan(i);
            let xh = (v - mean[ch]) * inv_std[ch];
            x_hat.push(xh);
            out.push(g[ch] * xh + b[ch]);
        }
        self.cache = Some(BnCache {
            shape: shape.clone(),
            x_hat,
            inv_std,
            batch_stats: train,
        });
        Tensor::from_vec(&shape, out)
    }

    fn backward(&mut self, grad_out: &Tensor, ctx: BackwardCtx) -> Result<Option<Tensor>> {
        let cache = self.cache.as_ref().ok_or_else(missing_cache)?;
        let chan = Self::channel_of(&cache.shape)?;
        let c = self.channels();
        let dy = grad_out.data();
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for (i, (&g, &xh)) in dy.iter().zip(&cache.x_hat).enumerate() {
            let ch = chan(i);
            sum_dy[ch] += g;
            sum_dy_xhat[ch] += g * xh;
        }
        if ctx.param_grads {
            accumulate(self.gamma.grad_mut(), &sum_dy_xhat);
            accumulate(self.beta.grad_mut(), &sum_dy);
        }
        if !ctx.input_grad {
            return Ok(None);
        }
        let gamma = self.gamma.data();
        let m = (dy.len() / c) as f64;
        let dx: Vec<f64> = dy
            .iter()
            .zip(&cache.x_hat)
            .enumerate()
            .map(|(i, (&g, &xh))| {
                let ch = chan(i);
                let scale = gamma[ch] * cache.inv_std[ch];
                if cache.batch_stats {
                    scale * (g - sum_dy[ch] / m - xh * sum_dy_xhat[ch] / m)
                } else {
                    scale * g
                }
            })
            .collect();
        Ok(Some(Tensor::from_vec(&cache.shape, dx)?))
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("gamma", &self.gamma), ("beta", &self.beta)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("gamma", &mut self.gamma), ("beta", &mut self.beta)]
    }

    fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ]
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Fully connected layer over the last axis.
#[derive(Debug, Clone)]
pub struct Dense {
    name: String,
    pub weight: Tensor,
    pub bias: Tensor,
    relu: bool,
    cache: Option<(Tensor, Vec<f64>)>,
}

impl Dense {
    pub fn new(name: &str, inputs: usize, outputs: usize, relu: bool, rng: &mut impl Rng) -> Self {
        Self {
            name: name.to_string(),
            weight: he_uniform(&[outputs, inputs], inputs, rng),
            bias: Tensor::zeros(&[outputs]),
            relu,
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Layer for Dense {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Tensor, _train: bool) -> Result<Tensor> {
        let (fin, fout) = (self.inputs(), self.outputs());
        let shape = input.shape();
        if shape.last() != Some(&fin) {
            return Err(Error::DimensionMismatch(format!(
                "{}: expected last axis {fin}, got shape {shape:?}",
                self.name
            )));
        }
        let rows = input.len() / fin;
        let (w, b) = (self.weight.data(), self.bias.data());
        let mut out = Vec::with_capacity(rows * fout);
        for r in 0..rows {
            let x = &input.data()[r * fin..(r + 1) * fin];
            for o in 0..fout {
                let wr = &w[o * fin..(o + 1) * fin];
                let v = b[o] + wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                out.push(if self.relu { v.max(0.0) } else { v });
            }
        }
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().expect("non-empty shape") = fout;
        self.cache = Some((input.clone(), out.clone()));
        Tensor::from_vec(&out_shape, out)
    }

    fn backward(&mut self, grad_out: &Tensor, ctx: BackwardCtx) -> Result<Option<Tensor>> {
        let (input, output) = self.cache.as_ref().ok_or_else(missing_cache)?;
        let (fin, fout) = (self.inputs(), self.outputs());
        let rows = input.len() / fin;
        let mut g = grad_out.data().to_vec();
        if self.relu {
            for (gv, &ov) in g.iter_mut().zip(output) {
                if ov <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        if ctx.param_grads {
            let mut dw = vec![0.0; fin * fout];
            let mut db = vec![0.0; fout];
            for r in 0..rows {
                let x = &input.data()[r * fin..(r + 1) * fin];
                for o in 0..fout {
                    let go = g[r * fout + o];
                    if go == 0.0 {
                        continue;
                    }
                    db[o] += go;
                    for (d, &xv) in dw[o * fin..(o + 1) * fin].iter_mut().zip(x) {
                        *d += go * xv;
                    }
                }
            }
            accumulate(self.weight.grad_mut(), &dw);
            accumulate(self.bias.grad_mut(), &db);
        }
        if !ctx.input_grad {
            return Ok(None);
        }
        let w = self.weight.data();
        let mut dx = vec![0.0; input.len()];
        for r in 0..rows {
            let d = &mut dx[r * fin..(r + 1) * fin];
            for o in 0..fout {
                let go = g[r * fout + o];
                if go == 0.0 {
                    continue;
                }
                for (dv, &wv) in d.iter_mut().zip(&w[o * fin..(o + 1) * fin]) {
                    *dv += go * wv;
                }
            }
        }
        Ok(Some(Tensor::from_vec(input.shape(), dx)?))
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Log-softmax over the last axis.
#[derive(Debug, Clone)]
pub struct LogSoftmax {
    name: String,
    cache: Option<Tensor>,
}

impl LogSoftmax {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            cache: None,
        }
    }
}

impl Layer for LogSoftmax {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Tensor, _train: bool) -> Result<Tensor> {
        let c = *input.shape().last().ok_or(Error::EmptyInput)?;
        let mut out = input.data().to_vec();
        for row in out.chunks_mut(c) {
            let lse = crate::ctc::log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let out = Tensor::from_vec(input.shape(), out)?;
        self.cache = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor, ctx: BackwardCtx) -> Result<Option<Tensor>> {
        let out = self.cache.as_ref().ok_or_else(missing_cache)?;
        if !ctx.input_grad {
            return Ok(None);
        }
        let c = *out.shape().last().expect("cached output has a shape");
        let mut dx = vec![0.0; out.len()];
        for ((d, y), g) in dx
            .chunks_mut(c)
            .zip(out.data().chunks(c))
            .zip(grad_out.data().chunks(c))
        {
            let gsum: f64 = g.iter().sum();
            for k in 0..c {
                d[k] = g[k] - y[k].exp() * gsum;
            }
        }
        Ok(Some(Tensor::from_vec(out.shape(), dx)?))
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Turns a `[N, C, H, W]` feature map into a `[N, W, C*H]` sequence whose
/// time axis runs from the rightmost column to the leftmost (right-to-left
/// reading order). Feature index is `c * H + h`.
#[derive(Debug, Clone)]
pub struct SequenceFold {
    name: String,
    cache: Option<Vec<usize>>,
}

impl SequenceFold {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            cache: None,
        }
    }
}

impl Layer for SequenceFold {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Tensor, _train: bool) -> Result<Tensor> {
        input.expect_rank(4, "sequence fold")?;
        let s = input.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let f = c * h;
        let x = input.data();
        let mut out = vec![0.0; n * w * f];
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    let row = &x[((b * c + ch) * h + y) * w..((b * c + ch) * h + y + 1) * w];
                    for (col, &v) in row.iter().enumerate() {
                        let t = w - 1 - col;
                        out[(b * w + t) * f + ch * h + y] = v;
                    }
                }
            }
        }
        self.cache = Some(s.to_vec());
        Tensor::from_vec(&[n, w, f], out)
    }

    fn backward(&mut self, grad_out: &Tensor, ctx: BackwardCtx) -> Result<Option<Tensor>> {
        let s = self.cache.as_ref().ok_or_else(missing_cache)?;
        if !ctx.input_grad {
            return Ok(None);
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let f = c * h;
        let g = grad_out.data();
        let mut dx = vec![0.0; n * c * h * w];
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for col in 0..w {
                        let t = w - 1 - col;
                        dx[((b * c + ch) * h + y) * w + col] = g[(b * w + t) * f + ch * h + y];
                    }
                }
            }
        }
        Ok(Some(Tensor::from_vec(s, dx)?))
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}
