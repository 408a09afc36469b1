//! Minimal double-precision network stack with hand-written backward passes.
//!
//! Layers cache what they need during `forward` and consume it in
//! `backward`; parameter gradients accumulate into each tensor's gradient
//! buffer until cleared.

pub mod adam;
pub mod asf;
pub mod checkpoint;
pub mod init;
pub mod layers;
pub mod lstm;
pub mod model;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use asf::Asf;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use layers::{BatchNorm, Conv2d, Dense, LogSoftmax, MaxPool2, SequenceFold};
pub use lstm::{BiLstm, Lstm};
pub use model::{stage_max_words, LayerSpec, Model, ModelSpec, CONV_BLOCK, LAYER_NAMES};
pub use tensor::Tensor;

use crate::error::Result;

/// Which gradients a backward call should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardCtx {
    pub input_grad: bool,
    pub param_grads: bool,
}

impl BackwardCtx {
    pub fn full() -> Self {
        Self {
            input_grad: true,
            param_grads: true,
        }
    }
}

pub trait Layer {
    fn name(&self) -> &str;

    fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor>;

    /// Returns the input gradient when `ctx.input_grad` is set; accumulates
    /// parameter gradients when `ctx.param_grads` is set.
    fn backward(&mut self, grad_out: &Tensor, ctx: BackwardCtx) -> Result<Option<Tensor>>;

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        Vec::new()
    }

    /// Non-trainable state that still belongs in a checkpoint.
    fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        Vec::new()
    }

    fn clear_cache(&mut self);
}
