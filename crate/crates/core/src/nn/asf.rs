//! Simplified adaptive scale fusion for detection features.

use rand::Rng;

use super::init::he_uniform;
use super::layers::accumulate;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Fuses `S` same-shape feature maps `[N, Cf, H, W]` with per-pixel
/// attention: the maps are concatenated on channels, a 1x1 convolution
/// yields `S` logits per pixel, a softmax across scales turns them into
/// weights, and the output is the weighted sum of the inputs.
#[derive(Debug, Clone)]
pub struct Asf {
    /// `[S, S * Cf]`
    pub weight: Tensor,
    /// `[S]`
    pub bias: Tensor,
    cache: Option<AsfCache>,
}

#[derive(Debug, Clone)]
struct AsfCache {
    inputs: Vec<Tensor>,
    /// `[N, S, H*W]`
    weights: Vec<f64>,
}

impl Asf {
    pub fn new(scales: usize, channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: he_uniform(&[scales, scales * channels], scales * channels, rng),
            bias: Tensor::zeros(&[scales]),
            cache: None,
        }
    }

    pub fn scales(&self) -> usize {
        self.bias.len()
    }

    pub fn channels(&self) -> usize {
        self.weight.shape()[1] / self.scales()
    }

    /// Attention weights `[N, S, H, W]` from the last forward pass.
    pub fn last_weights(&self) -> Option<&[f64]> {
        self.cache.as_ref().map(|c| c.weights.as_slice())
    }

    pub fn forward(&mut self, features: &[Tensor]) -> Result<Tensor> {
        let s_count = self.scales();
        if features.len() != s_count {
            return Err(Error::DimensionMismatch(format!(
                "fusion expects {s_count} feature maps, got {}",
                features.len()
            )));
        }
        let shape = features[0].shape().to_vec();
        features[0].expect_rank(4, "scale fusion")?;
        if let Some(bad) = features.iter().find(|f| f.shape() != shape.as_slice()) {
            return Err(Error::DimensionMismatch(format!(
                "fusion inputs must share a shape: {shape:?} vs {:?}",
                bad.shape()
            )));
        }
        let (n, cf, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if cf != self.channels() {
            return Err(Error::DimensionMismatch(format!(
                "fusion expects {} channels, got {cf}",
                self.channels()
            )));
        }
        let plane = h * w;
        let wt = self.weight.data();
        let mut weights = vec![0.0; n * s_count * plane];
        let mut out = vec![0.0; n * cf * plane];
        let mut logits = vec![0.0; s_count];
        for b in 0..n {
            for p in 0..plane {
                for (s, z) in logits.iter_mut().enumerate() {
                    let mut acc = self.bias.data()[s];
                    for (sp, f) in features.iter().enumerate() {
                        for c in 0..cf {
                            acc += wt[s * s_count * cf + sp * cf + c] * f.data()[(b * cf + c) * plane + p];
                        }
                    }
                    *z = acc;
                }
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for (s, z) in logits.iter().enumerate() {
                    // An infinite logit dominates outright.
                    let e = if max.is_infinite() {
                        if *z == max {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        (z - max).exp()
                    };
                    weights[(b * s_count + s) * plane + p] = e;
                    denom += e;
                }
                for s in 0..s_count {
                    weights[(b * s_count + s) * plane + p] /= denom;
                }
                for c in 0..cf {
                    let idx = (b * cf + c) * plane + p;
                    out[idx] = (0..s_count)
                        .map(|s| weights[(b * s_count + s) * plane + p] * features[s].data()[idx])
                        .sum();
                }
            }
        }
        self.cache = Some(AsfCache {
            inputs: features.to_vec(),
            weights,
        });
        Tensor::from_vec(&shape, out)
    }

    /// Accumulates parameter gradients and returns one gradient per input map.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Vec<Tensor>> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardWithoutForward)?;
        let shape = cache.inputs[0].shape().to_vec();
        let (n, cf, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let s_count = self.scales();
        let plane = h * w;
        let g = grad_out.data();
        let wt = self.weight.data();
        let mut dfeat: Vec<Vec<f64>> = vec![vec![0.0; n * cf * plane]; s_count];
        let mut dw = vec![0.0; self.weight.len()];
        let mut db = vec![0.0; s_count];
        let mut dweight = vec![0.0; s_count];
        let mut dz = vec![0.0; s_count];
        for b in 0..n {
            for p in 0..plane {
                for s in 0..s_count {
                    let ws = cache.weights[(b * s_count + s) * plane + p];
                    let mut acc = 0.0;
                    for c in 0..cf {
                        let idx = (b * cf + c) * plane + p;
                        dfeat[s][idx] += ws * g[idx];
                        acc += g[idx] * cache.inputs[s].data()[idx];
                    }
                    dweight[s] = acc;
                }
                let mean: f64 = (0..s_count)
                    .map(|s| cache.weights[(b * s_count + s) * plane + p] * dweight[s])
                    .sum();
                for s in 0..s_count {
                    dz[s] = cache.weights[(b * s_count + s) * plane + p] * (dweight[s] - mean);
                    db[s] += dz[s];
                }
                for s in 0..s_count {
                    for sp in 0..s_count {
                        for c in 0..cf {
                            let idx = (b * cf + c) * plane + p;
                            let k = s * s_count * cf + sp * cf + c;
                            dw[k] += dz[s] * cache.inputs[sp].data()[idx];
                            dfeat[sp][idx] += dz[s] * wt[k];
                        }
                    }
                }
            }
        }
        accumulate(self.weight.grad_mut(), &dw);
        accumulate(self.bias.grad_mut(), &db);
        dfeat
            .into_iter()
            .map(|d| Tensor::from_vec(&shape, d))
            .collect()
    }
}
