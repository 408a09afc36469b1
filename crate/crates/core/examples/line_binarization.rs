//! Otsu binarization of a rendered line and its connected components.

use scriptline::datagen::{GlyphAtlas, SampleSpec, AugmentKind, DEFAULT_WORD_SPACING};
use scriptline::imaging::{binarize, connected_components, otsu_threshold, salt_pepper, Connectivity};

fn main() -> scriptline::Result<()> {
    let atlas = GlyphAtlas::build(42, 10)?;
    let spec = SampleSpec {
        words: vec![vec![0, 1, 2, 3, 4, 5, 6], vec![7, 8, 9, 0, 1, 2, 3, 4]],
        augment: AugmentKind::None,
        seed: 1,
    };
    let line = salt_pepper(&spec.render(&atlas, DEFAULT_WORD_SPACING)?, 0.03, 7);
    let t = otsu_threshold(&line)?;
    let bin = binarize(&line, t);
    let comps = connected_components(&bin, Connectivity::Eight);
    println!("line {}x{}, Otsu threshold {t:.3}, {} ink pixels", line.width(), line.height(), bin.count_ink());
    let big: Vec<_> = comps.areas.iter().enumerate().filter(|(_, &a)| a >= 20).collect();
    println!("{} components, {} with at least 20 pixels", comps.count, big.len());
    for (i, a) in big.iter().take(5) {
        let b = comps.boxes[*i];
        println!("  component {}: {a} px in x {}..={} y {}..={}", i + 1, b.min_x, b.max_x, b.min_y, b.max_y);
    }
    Ok(())
}
