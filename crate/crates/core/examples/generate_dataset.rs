//! Renders a few generated sentences to PGM with a JSONL manifest.
//!
//! `cargo run --example generate_dataset -- [out_dir]`

use std::path::PathBuf;

use scriptline::cli::commands::cmd_gen;
use scriptline::cli::config::RunConfig;
use scriptline::datagen::{curriculum, GlyphAtlas, Split};

fn main() -> scriptline::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("scriptline_demo_data"));
    let cfg = RunConfig {
        alphabet_size: 12,
        gen_max_words: 3,
        ..RunConfig::default()
    };
    let atlas = GlyphAtlas::build(cfg.atlas_seed, cfg.alphabet_size)?;
    println!("alphabet: {}", (0..atlas.alphabet_size()).filter_map(|l| atlas.symbol(l)).collect::<String>());
    let rows = cmd_gen(&cfg, 8, Split::Train, &out, true)?;
    for r in &rows {
        println!("{}  {:>6}  {}", r.image, r.augment.as_str(), r.transcript.as_str());
    }
    for s in 0..4 {
        let c = curriculum(s);
        println!("stage {s}: up to {} words, conv frozen: {}", c.max_words, c.freeze_conv);
    }
    println!("written to {}", out.display());
    Ok(())
}
