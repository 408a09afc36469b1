//! The recognizer: convolutional feature extractor, sequence fold,
//! bidirectional LSTMs and a per-frame log-softmax over the vocabulary.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv2d, Dense, LogSoftmax, MaxPool2, SequenceFold};
use super::lstm::BiLstm;
use super::tensor::Tensor;
use super::{BackwardCtx, Layer};
use crate::error::{Error, Result};

/// Names of the configurable layers, in order.
pub const LAYER_NAMES: [&str; 13] = [
    "conv1", "pool1", "bn1", "conv2", "pool2", "bn2", "conv3", "bn3", "dense1", "bn4", "bilstm1",
    "bilstm2", "output",
];

/// Alias accepted by [`Model::freeze`] for the whole convolutional block.
pub const CONV_BLOCK: &str = "conv_block";

const CONV_BLOCK_LAYERS: [&str; 8] = [
    "conv1", "pool1", "bn1", "conv2", "pool2", "bn2", "conv3", "bn3",
];

/// Longest sentence (in words) trained at a curriculum stage: 1, then 2, 4, 6, ...
pub fn stage_max_words(stage: usize) -> usize {
    if stage == 0 {
        1
    } else {
        2 * stage
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3x3 same-padded convolution with ReLU.
    Conv { filters: usize },
    /// 2x2 stride-2 max pooling.
    MaxPool,
    BatchNorm,
    /// Per-timestep dense layer with ReLU.
    Dense { units: usize },
    /// Bidirectional LSTM returning sequences; `units` per direction.
    BiLstm { units: usize },
    /// Dense projection followed by log-softmax.
    Softmax { classes: usize },
}

impl LayerSpec {
    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool => "maxpool",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::BiLstm { .. } => "bilstm",
            LayerSpec::Softmax { .. } => "softmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_height: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// The full-size layer stack: conv 32/64/128, dense 64, BiLSTM 128 and
    /// 256 per direction, softmax over `classes` (vocabulary plus blank).
    pub fn table_one(input_height: usize, classes: usize) -> Self {
        use LayerSpec::*;
        Self {
            input_height,
            layers: vec![
                Conv { filters: 32 },
                MaxPool,
                BatchNorm,
                Conv { filters: 64 },
                MaxPool,
                BatchNorm,
                Conv { filters: 128 },
                BatchNorm,
                Dense { units: 64 },
                BatchNorm,
                BiLstm { units: 128 },
                BiLstm { units: 256 },
                Softmax { classes },
            ],
        }
    }

    /// Same sequence with every width divided by `divisor` (at least 1).
    pub fn scaled(&self, divisor: usize) -> Self {
        let d = divisor.max(1);
        let shrink = |v: usize| (v / d).max(1);
        let layers = self
            .layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Conv { filters } => LayerSpec::Conv {
                    filters: shrink(filters),
                },
                LayerSpec::Dense { units } => LayerSpec::Dense {
                    units: shrink(units),
                },
                LayerSpec::BiLstm { units } => LayerSpec::BiLstm {
                    units: shrink(units),
                },
                other => other,
            })
            .collect();
        Self {
            input_height: self.input_height,
            layers,
        }
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Softmax { classes }) => *classes,
            _ => 0,
        }
    }

    /// Checks the descriptor sequence against the reference stack.
    pub fn validate(&self) -> Result<()> {
        let want = Self::table_one(self.input_height, self.classes());
        let kinds = |s: &ModelSpec| s.layers.iter().map(LayerSpec::kind).collect::<Vec<_>>();
        if kinds(self) != kinds(&want) {
            return Err(Error::InvalidArgument(format!(
                "layer sequence {:?} differs from the reference stack {:?}",
                kinds(self),
                kinds(&want)
            )));
        }
        let zero_width = self.layers.iter().any(|l| {
            matches!(
                l,
                LayerSpec::Conv { filters: 0 } | LayerSpec::Dense { units: 0 } | LayerSpec::BiLstm { units: 0 }
            )
        });
        if zero_width {
            return Err(Error::InvalidArgument("zero layer width".into()));
        }
        if self.classes() < 2 {
            return Err(Error::InvalidArgument(
                "softmax needs at least one symbol plus blank".into(),
            ));
        }
        if self.input_height < 8 {
            return Err(Error::InputTooSmall {
                what: "input height",
                found: self.input_height,
                minimum: 8,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum NetLayer {
    Conv(Conv2d),
    Pool(MaxPool2),
    Norm(BatchNorm),
    Fold(SequenceFold),
    Dense(Dense),
    BiLstm(BiLstm),
    LogSoftmax(LogSoftmax),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $body:expr) => {
        match $self {
            NetLayer::Conv($l) => $body,
            NetLayer::Pool($l) => $body,
            NetLayer::Norm($l) => $body,
            NetLayer::Fold($l) => $body,
            NetLayer::Dense($l) => $body,
            NetLayer::BiLstm($l) => $body,
            NetLayer::LogSoftmax($l) => $body,
        }
    };
}

impl NetLayer {
    fn as_layer(&self) -> &dyn Layer {
        dispatch!(self, l => l)
    }

    fn as_layer_mut(&mut self) -> &mut dyn Layer {
        dispatch!(self, l => l)
    }
}

/// A network built from a [`ModelSpec`], plus the training state that
/// travels with it in checkpoints (frozen set, curriculum stage, seed).
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<NetLayer>,
    frozen: BTreeSet<String>,
    stage: usize,
    seed: u64,
    forwarded: bool,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut channels = 1;
        let mut height = spec.input_height;
        let mut features = 0;
        let mut names = LAYER_NAMES.iter();
        let mut folded = false;
        for l in &spec.layers {
            let name = names.next().expect("validated layer count");
            match *l {
                LayerSpec::Conv { filters } => {
                    layers.push(NetLayer::Conv(Conv2d::new(name, channels, filters, true, &mut rng)));
                    channels = filters;
                }
                LayerSpec::MaxPool => {
                    layers.push(NetLayer::Pool(MaxPool2::new(name)));
                    height /= 2;
                }
                LayerSpec::BatchNorm => {
                    let width = if folded { features } else { channels };
                    layers.push(NetLayer::Norm(BatchNorm::new(name, width)));
                }
                LayerSpec::Dense { units } => {
                    if !folded {
                        layers.push(NetLayer::Fold(SequenceFold::new("fold")));
                        features = channels * height;
                        folded = true;
                    }
                    layers.push(NetLayer::Dense(Dense::new(name, features, units, true, &mut rng)));
                    features = units;
                }
                LayerSpec::BiLstm { units } => {
                    layers.push(NetLayer::BiLstm(BiLstm::new(name, features, units, &mut rng)));
                    features = 2 * units;
                }
                LayerSpec::Softmax { classes } => {
                    layers.push(NetLayer::Dense(Dense::new(name, features, classes, false, &mut rng)));
                    layers.push(NetLayer::LogSoftmax(LogSoftmax::new("log_softmax")));
                }
            }
        }
        Ok(Self {
            spec,
            layers,
            frozen: BTreeSet::new(),
            stage: 0,
            seed,
            forwarded: false,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn classes(&self) -> usize {
        self.spec.classes()
    }

    pub fn input_height(&self) -> usize {
        self.spec.input_height
    }

    /// Frames produced for an input of the given width.
    pub fn frames_for_width(width: usize) -> usize {
        width / 4
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn set_stage(&mut self, stage: usize) {
        self.stage = stage;
    }

    pub fn max_words(&self) -> usize {
        stage_max_words(self.stage)
    }

    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    pub fn is_frozen(&self, layer: &str) -> bool {
        self.frozen.contains(layer)
    }

    fn resolve(names: &[&str]) -> Result<Vec<&'static str>> {
        let mut out = Vec::new();
        for &n in names {
            if n == CONV_BLOCK {
                out.extend(CONV_BLOCK_LAYERS);
            } else if let Some(&known) = LAYER_NAMES.iter().find(|&&k| k == n) {
                out.push(known);
            } else {
                return Err(Error::UnknownLayer {
                    name: n.to_string(),
                    valid: format!("{}, {CONV_BLOCK}", LAYER_NAMES.join(", ")),
                });
            }
        }
        Ok(out)
    }

    pub fn freeze(&mut self, names: &[&str]) -> Result<()> {
        for n in Self::resolve(names)? {
            self.frozen.insert(n.to_string());
        }
        Ok(())
    }

    pub fn unfreeze(&mut self, names: &[&str]) -> Result<()> {
        for n in Self::resolve(names)? {
            self.frozen.remove(n);
        }
        Ok(())
    }

    /// Log-probabilities `[N, W/4, classes]` for a batch `[N, 1, H, W]`.
    /// `train` selects batch statistics in unfrozen batch-norm layers.
    pub fn forward(&mut self, batch: &Tensor, train: bool) -> Result<Tensor> {
        batch.expect_rank(4, "model")?;
        let s = batch.shape();
        if s[1] != 1 {
            return Err(Error::DimensionMismatch(format!(
                "model expects one input channel, got {}",
                s[1]
            )));
        }
        if s[2] != self.spec.input_height {
            return Err(Error::HeightMismatch {
                expected: self.spec.input_height,
                found: s[2],
            });
        }
        if s[3] < 8 {
            return Err(Error::InputTooSmall {
                what: "input width",
                found: s[3],
                minimum: 8,
            });
        }
        self.forwarded = false;
        let mut x = batch.clone();
        for layer in &mut self.layers {
            let name = layer.as_layer().name().to_string();
            let layer_train = train && !self.frozen.contains(&name);
            x = layer.as_layer_mut().forward(&x, layer_train)?;
        }
        self.forwarded = true;
        Ok(x)
    }

    /// Back-propagates `grad` (with respect to the log-probabilities) and
    /// accumulates gradients for every unfrozen parameter.
    pub fn backward(&mut self, grad: &Tensor) -> Result<()> {
        if !self.forwarded {
            return Err(Error::BackwardWithoutForward);
        }
        let trainable = |l: &NetLayer, frozen: &BTreeSet<String>| {
            !l.as_layer().params().is_empty() && !frozen.contains(l.as_layer().name())
        };
        let Some(first) = self.layers.iter().position(|l| trainable(l, &self.frozen)) else {
            return Ok(());
        };
        let mut g = grad.clone();
        for i in (first..self.layers.len()).rev() {
            let param_grads = trainable(&self.layers[i], &self.frozen);
            let ctx = BackwardCtx {
                input_grad: i > first,
                param_grads,
            };
            match self.layers[i].as_layer_mut().backward(&g, ctx)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }

    /// Drops cached activations (the next backward needs a fresh forward).
    pub fn clear_cache(&mut self) {
        self.forwarded = false;
        for l in &mut self.layers {
            l.as_layer_mut().clear_cache();
        }
    }

    /// Parameters as `("layer.param", tensor)` in a fixed order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .flat_map(|l| {
                let layer = l.as_layer();
                let name = layer.name();
                layer
                    .params()
                    .into_iter()
                    .map(move |(p, t)| (format!("{name}.{p}"), t))
            })
            .collect()
    }

    /// Parameters with their layer's frozen flag.
    pub fn params_mut(&mut self) -> Vec<(String, bool, &mut Tensor)> {
        let frozen = &self.frozen;
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let layer = l.as_layer_mut();
                let name = layer.name().to_string();
                let is_frozen = frozen.contains(&name);
                layer
                    .params_mut()
                    .into_iter()
                    .map(move |(p, t)| (format!("{name}.{p}"), is_frozen, t))
            })
            .collect()
    }

    /// Batch-norm running statistics as `("layer.buffer", tensor)`.
    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .flat_map(|l| {
                let layer = l.as_layer();
                let name = layer.name();
                layer
                    .buffers()
                    .into_iter()
                    .map(move |(p, t)| (format!("{name}.{p}"), t))
            })
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let layer = l.as_layer_mut();
                let name = layer.name().to_string();
                layer
                    .buffers_mut()
                    .into_iter()
                    .map(move |(p, t)| (format!("{name}.{p}"), t))
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Removes every gradient buffer.
    pub fn clear_grads(&mut self) {
        for (_, _, t) in self.params_mut() {
            t.clear_grad();
        }
    }

    /// Euclidean norm over all present gradient buffers.
    pub fn grad_norm(&self) -> f64 {
        self.params()
            .iter()
            .filter_map(|(_, t)| t.grad())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`;
    /// returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for (_, _, t) in self.params_mut() {
                if t.grad().is_some() {
                    t.grad_mut().iter_mut().for_each(|g| *g *= scale);
                }
            }
        }
        norm
    }

    /// Multiplies every gradient buffer by `factor`.
    pub fn scale_grads(&mut self, factor: f64) {
        for (_, _, t) in self.params_mut() {
            if t.grad().is_some() {
                t.grad_mut().iter_mut().for_each(|g| *g *= factor);
            }
        }
    }
}
