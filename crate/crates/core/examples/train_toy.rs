//! Stage-0 toy training followed by a held-out one-word evaluation.
//!
//! `cargo run --release --example train_toy -- [steps] [width_divisor] [batch]`

use std::time::Instant;

use scriptline::cli::config::{Decoder, RunConfig};
use scriptline::cli::train::{model_spec, plan, score_specs, train_phase};
use scriptline::datagen::{evaluation_set, AugmentKind, GlyphAtlas};
use scriptline::metrics::EvalReport;
use scriptline::nn::{Adam, Model};

fn main() -> scriptline::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let cfg = RunConfig {
        alphabet_size: 10,
        stages: vec![0],
        steps: vec![args.first().copied().unwrap_or(200)],
        width_divisor: args.get(1).copied().unwrap_or(4),
        batch_size: args.get(2).copied().unwrap_or(8),
        ..RunConfig::default()
    };
    cfg.validate()?;
    let atlas = GlyphAtlas::build(cfg.atlas_seed, cfg.alphabet_size)?;
    let mut model = Model::new(model_spec(&cfg), cfg.seed)?;
    let mut adam = Adam::new(cfg.adam);
    println!("parameters: {}", model.param_count());
    let t0 = Instant::now();
    for phase in plan(&cfg) {
        train_phase(&mut model, &mut adam, &atlas, &cfg, &phase, |step, loss| {
            if (step + 1) % 50 == 0 {
                println!("step {:5}  loss {loss:8.4}  {:6.1}s", step + 1, t0.elapsed().as_secs_f64());
            }
        })?;
    }
    let specs = evaluation_set(cfg.alphabet_size, 1, 200, &[AugmentKind::None], cfg.eval_seed)?;
    let scored = score_specs(&mut model, &atlas, &specs, cfg.word_spacing, Decoder::Greedy, 1)?;
    let report = EvalReport::from_samples(&scored, "greedy")?;
    println!("held-out 1-word: CRR {:.2}  WRR {:.2}  ({:.1}s total)", report.crr, report.wrr, t0.elapsed().as_secs_f64());
    Ok(())
}
