//! Handwritten text-line OCR building blocks.
//!
//! The crate covers the full line pipeline at desk scale:
//!
//! * [`imaging`]: rasters, Otsu binarization, morphology, augmentation noise,
//!   right-to-left concatenation and connected components.
//! * [`dbpost`]: differentiable-binarization maps, supervision targets and
//!   losses, and map-to-polygon box formation.
//! * [`nn`]: a small double-precision network stack (convolution, pooling,
//!   batch normalization, dense, bidirectional LSTM, scale fusion) with
//!   hand-written backward passes, Adam and checkpointing.
//! * [`ctc`]: CTC loss with gradients plus greedy and prefix beam decoding.
//! * [`datagen`]: a procedural glyph atlas and a duplicate-free sentence
//!   generator with a curriculum schedule.
//! * [`metrics`]: CRR/WRR and IoU-matched detection precision/recall.
//! * [`cli`]: batch commands gluing everything together.
//!
//! Rasters use the ink-high convention: 1.0 is ink, 0.0 is background.

pub mod cli;
pub mod ctc;
pub mod datagen;
pub mod dbpost;
pub mod error;
pub mod gradcheck;
pub mod imaging;
pub mod metrics;
pub mod nn;

pub use error::{Error, Result};
