//! CTC loss on a hand-made sequence and greedy against beam decoding.

use scriptline::ctc::{beam_decode, ctc_loss, greedy_decode, LogProbSeq};

fn main() -> scriptline::Result<()> {
    // classes: a, b, blank
    let probs = [
        [0.6, 0.1, 0.3],
        [0.4, 0.1, 0.5],
        [0.1, 0.5, 0.4],
        [0.1, 0.4, 0.5],
    ];
    let data: Vec<f64> = probs.iter().flatten().map(|p: &f64| p.ln()).collect();
    let lp = LogProbSeq::new(4, 3, data)?;
    for labels in [vec![0, 1], vec![0], vec![1], vec![0, 0]] {
        let (nll, _) = ctc_loss(&lp, &labels)?;
        println!("P({labels:?}) = {:.4}", (-nll).exp());
    }
    println!("greedy: {:?}", greedy_decode(&lp));
    for w in [1, 2, 4, 16] {
        let (best, mass) = beam_decode(&lp, w)?;
        println!("beam {w:>2}: {best:?} with mass {:.4}", mass.exp());
    }
    Ok(())
}
