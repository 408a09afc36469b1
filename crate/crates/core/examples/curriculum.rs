//! Staged curriculum against direct long-sentence training on the same
//! step budget, scored on held-out sentences of every length.
//!
//! `cargo run --release --example curriculum -- [seed] [steps_s0,steps_s1,...] [eval_count]`

use std::time::Instant;

use scriptline::cli::config::{Decoder, RunConfig, Schedule};
use scriptline::cli::train::{model_spec, plan, score_specs, train_phase};
use scriptline::cli::commands::{generated_eval_specs, markdown_grid};
use scriptline::datagen::GlyphAtlas;
use scriptline::metrics::EvalReport;
use scriptline::nn::{Adam, Model};

fn run(cfg: &RunConfig, atlas: &GlyphAtlas) -> scriptline::Result<EvalReport> {
    let t0 = Instant::now();
    let mut model = Model::new(model_spec(cfg), cfg.seed)?;
    let mut adam = Adam::new(cfg.adam);
    for phase in plan(cfg) {
        let curve = train_phase(&mut model, &mut adam, atlas, cfg, &phase, |_, _| {})?;
        let (a, b) = curve.head_tail(100);
        println!(
            "  stage {} (max {} words, {} steps): loss {a:.3} -> {b:.3}  [{:.0}s]",
            phase.stage,
            phase.max_words,
            phase.steps,
            t0.elapsed().as_secs_f64()
        );
    }
    let specs = generated_eval_specs(cfg)?;
    let scored = score_specs(&mut model, atlas, &specs, cfg.word_spacing, Decoder::Greedy, 1)?;
    EvalReport::from_samples(&scored, "greedy")
}

fn main() -> scriptline::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.first().map_or(1, |s| s.parse().expect("seed"));
    let steps = args
        .get(1)
        .map_or(vec![600, 200, 200, 200], |s| s.split(',').map(|v| v.parse().expect("steps")).collect());
    let eval_count = args.get(2).map_or(50, |s| s.parse().expect("eval count"));
    let base = RunConfig {
        alphabet_size: 10,
        seed,
        steps,
        eval_count,
        ..RunConfig::default()
    };
    base.validate()?;
    let atlas = GlyphAtlas::build(base.atlas_seed, base.alphabet_size)?;
    for schedule in [Schedule::Curriculum, Schedule::Direct] {
        println!("{schedule:?}");
        let report = run(&RunConfig { schedule, ..base.clone() }, &atlas)?;
        print!("{}", markdown_grid(&report));
    }
    Ok(())
}
