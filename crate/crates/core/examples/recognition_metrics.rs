//! CRR and WRR on a few transcripts.

use scriptline::metrics::{crr, levenshtein, wrr, Transcript};

fn main() -> scriptline::Result<()> {
    let refs = [Transcript::new("ابتثجحخ دذرزسشص")?, Transcript::new("ضطظعغفق")?];
    let hyps = [Transcript::new("ابتثجخ دذرزسشص")?, Transcript::new("ضطظعغفق")?];
    for (r, h) in refs.iter().zip(&hyps) {
        println!("{} -> {}: {} edits", r.as_str(), h.as_str(), levenshtein(&r.chars(), &h.chars()));
    }
    println!("CRR {:.2}  WRR {:.2}", crr(&refs, &hyps)?, wrr(&refs, &hyps)?);
    Ok(())
}
