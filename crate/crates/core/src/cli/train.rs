//! Curriculum training and transcript evaluation.

use serde::Serialize;

use super::config::{Decoder, RunConfig, Schedule};
use crate::ctc::{beam_decode, ctc_loss, greedy_decode, LogProbSeq};
use crate::datagen::{curriculum, GeneratorConfig, GlyphAtlas, SampleSpec, SentenceGenerator, Split, GLYPH_HEIGHT};
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::metrics::{ScoredSample, Transcript};
use crate::nn::{stage_max_words, Adam, Model, ModelSpec, Tensor, CONV_BLOCK};

/// One training phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Phase {
    /// Stage recorded in the checkpoint.
    pub stage: usize,
    pub max_words: usize,
    pub freeze_conv: bool,
    pub steps: usize,
}

/// Phases implied by the schedule.
pub fn plan(cfg: &RunConfig) -> Vec<Phase> {
    match cfg.schedule {
        Schedule::Curriculum => cfg
            .stages
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let c = curriculum(s);
                Phase {
                    stage: s,
                    max_words: c.max_words,
                    freeze_conv: c.freeze_conv,
                    steps: cfg.steps_for(i),
                }
            })
            .collect(),
        Schedule::Direct => {
            let last = *cfg.stages.last().expect("validated non-empty");
            let steps = (0..cfg.stages.len()).map(|i| cfg.steps_for(i)).sum();
            vec![Phase {
                stage: last,
                max_words: stage_max_words(last),
                freeze_conv: false,
                steps,
            }]
        }
    }
}

pub fn model_spec(cfg: &RunConfig) -> ModelSpec {
    // symbols + space + blank
    ModelSpec::table_one(GLYPH_HEIGHT, cfg.alphabet_size + 2).scaled(cfg.width_divisor)
}

/// Seed of the sample stream of one phase.
pub fn phase_seed(seed: u64, stage: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stage as u64 + 1)
        .rotate_left(17)
}

/// `[1, 1, H, W]` batch from an image.
pub fn image_tensor(img: &GrayImage) -> Result<Tensor> {
    Tensor::from_vec(&[1, 1, img.height(), img.width()], img.data().to_vec())
}

/// Mean loss of every optimizer step of one phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseCurve {
    pub phase: Phase,
    pub losses: Vec<f64>,
}

impl PhaseCurve {
    /// Mean of the first and last `window` losses.
    pub fn head_tail(&self, window: usize) -> (f64, f64) {
        let n = self.losses.len();
        let w = window.min(n).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        (mean(&self.losses[..w.min(n)]), mean(&self.losses[n.saturating_sub(w)..]))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{},{l:.10}\n", i + 1));
        }
        out
    }
}

/// Prepares the model for a phase: stage bookkeeping and freezing.
pub fn enter_phase(model: &mut Model, phase: &Phase) -> Result<()> {
    model.set_stage(phase.stage);
    if phase.freeze_conv {
        model.freeze(&[CONV_BLOCK])?;
    } else {
        model.unfreeze(&[CONV_BLOCK])?;
    }
    Ok(())
}

/// Runs one phase. `on_step(step, loss)` sees every optimizer step.
pub fn train_phase(
    model: &mut Model,
    adam: &mut Adam,
    atlas: &GlyphAtlas,
    cfg: &RunConfig,
    phase: &Phase,
    mut on_step: impl FnMut(usize, f64),
) -> Result<PhaseCurve> {
    enter_phase(model, phase)?;
    let mut gen = SentenceGenerator::new(GeneratorConfig {
        alphabet_size: cfg.alphabet_size,
        max_words: phase.max_words,
        fixed_words: None,
        augment_ratio: cfg.augment_ratio,
        split: Split::Train,
        seed: phase_seed(cfg.seed, phase.stage),
    })?;
    let mut losses = Vec::with_capacity(phase.steps);
    let scale = 1.0 / cfg.batch_size as f64;
    for step in 0..phase.steps {
        model.clear_grads();
        let mut total = 0.0;
        for _ in 0..cfg.batch_size {
            let spec = match gen.next_spec() {
                Ok(s) => s,
                Err(Error::EpochExhausted { .. }) => {
                    gen.start_epoch();
                    gen.next_spec()?
                }
                Err(e) => return Err(e),
            };
            let (loss, grad) = sample_loss(model, atlas, &spec, cfg.word_spacing)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: phase.stage,
                    step,
                    batch_seed: spec.seed,
                });
            }
            total += loss;
            let g = grad.data().iter().map(|v| v * scale).collect();
            model.backward(&Tensor::from_vec(grad.shape(), g)?)?;
        }
        if cfg.grad_clip > 0.0 {
            model.clip_grad_norm(cfg.grad_clip);
        }
        adam.step(model);
        let mean = total * scale;
        on_step(step, mean);
        losses.push(mean);
    }
    model.clear_cache();
    Ok(PhaseCurve {
        phase: *phase,
        losses,
    })
}

/// CTC loss and its gradient with respect to the model output for one
/// sample (forward in training mode).
pub fn sample_loss(model: &mut Model, atlas: &GlyphAtlas, spec: &SampleSpec, spacing: usize) -> Result<(f64, Tensor)> {
    let img = spec.render(atlas, spacing)?;
    let out = model.forward(&image_tensor(&img)?, true)?;
    let s = out.shape().to_vec();
    let lp = LogProbSeq::new(s[1], s[2], out.data().to_vec())?;
    let (loss, grad) = ctc_loss(&lp, &spec.targets(atlas))?;
    Ok((loss, Tensor::from_vec(&s, grad)?))
}

/// Log-probabilities of one image in inference mode.
pub fn infer(model: &mut Model, img: &GrayImage) -> Result<LogProbSeq> {
    let out = model.forward(&image_tensor(img)?, false)?;
    let s = out.shape().to_vec();
    model.clear_cache();
    LogProbSeq::new(s[1], s[2], out.data().to_vec())
}

/// Decodes one image to a transcript.
pub fn recognize(model: &mut Model, atlas: &GlyphAtlas, img: &GrayImage, decoder: Decoder, beam_width: usize) -> Result<Transcript> {
    let lp = infer(model, img)?;
    let classes = match decoder {
        Decoder::Greedy => greedy_decode(&lp),
        Decoder::Beam => beam_decode(&lp, beam_width)?.0,
    };
    Ok(normalize_transcript(&atlas.decode(&classes)))
}

/// Collapses runs of separators and trims them, so any decoded class string
/// becomes a valid transcript.
pub fn normalize_transcript(text: &str) -> Transcript {
    let words: Vec<&str> = text.split(' ').filter(|w| !w.is_empty()).collect();
    Transcript::from_words(&words)
}

/// Decodes every spec and pairs it with its reference.
pub fn score_specs(
    model: &mut Model,
    atlas: &GlyphAtlas,
    specs: &[SampleSpec],
    spacing: usize,
    decoder: Decoder,
    beam_width: usize,
) -> Result<Vec<ScoredSample>> {
    specs
        .iter()
        .map(|spec| {
            let img = spec.render(atlas, spacing)?;
            Ok(ScoredSample {
                words: spec.words.len(),
                mode: spec.augment,
                reference: spec.transcript(atlas)?,
                hypothesis: recognize(model, atlas, &img, decoder, beam_width)?,
            })
        })
        .collect()
}
