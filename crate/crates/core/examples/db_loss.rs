//! DB supervision targets and the three-term loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scriptline::dbpost::{approx_binary_map, db_loss, make_targets, DbParams, TextPolygon};
use scriptline::imaging::GrayImage;

fn main() -> scriptline::Result<()> {
    let p = DbParams::default();
    let gt = [TextPolygon::rect(6.0, 6.0, 58.0, 20.0, 1.0)?];
    let t = make_targets(&gt, 64, 28, p.shrink_ratio, p.t_min, p.t_max)?;
    println!("shrunk positives: {} px, threshold band: {} px", t.prob_target.count_ink(), t.thresh_mask.count_ink());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noisy = |base: &GrayImage, rng: &mut ChaCha8Rng| {
        GrayImage::from_fn(64, 28, |x, y| (base.get(x, y) + rng.gen_range(-0.2..0.2)).clamp(0.01, 0.99))
    };
    let ideal_p = t.prob_target.to_gray();
    let ideal_t = GrayImage::from_vec(64, 28, t.thresh_target.data().to_vec())?;
    for (name, prob, thresh) in [
        ("ideal", ideal_p.clone(), ideal_t.clone()),
        ("noisy", noisy(&ideal_p, &mut rng), noisy(&ideal_t, &mut rng)),
        ("flat", GrayImage::new(64, 28, 0.5), GrayImage::new(64, 28, 0.5)),
    ] {
        let bin = approx_binary_map(&prob, &thresh, p.k)?;
        let l = db_loss(&prob, &thresh, &bin, &t, p.alpha, p.beta, p.neg_ratio)?;
        println!("{name:>5}: total {:.4} = Ls {:.4} + {} Lb {:.4} + {} Lt {:.4}", l.total, l.ls, p.alpha, l.lb, p.beta, l.lt);
    }
    Ok(())
}
