//! Adaptive scale fusion of three feature maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scriptline::nn::{Asf, Tensor};

fn main() -> scriptline::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (c, h, w) = (4, 6, 8);
    let maps: Vec<Tensor> = (0..3)
        .map(|s| Tensor::from_vec(&[1, c, h, w], (0..c * h * w).map(|_| rng.gen_range(0.0..1.0) * (s + 1) as f64).collect()))
        .collect::<Result<_, _>>()?;
    let mut asf = Asf::new(3, c, &mut rng);
    let fused = asf.forward(&maps)?;
    let weights = asf.last_weights().expect("after forward");
    let plane = h * w;
    for s in 0..3 {
        let mean = weights[s * plane..(s + 1) * plane].iter().sum::<f64>() / plane as f64;
        println!("scale {s}: mean attention {mean:.3}");
    }
    println!("fused shape {:?}", fused.shape());
    let grads = asf.backward(&Tensor::full(fused.shape(), 1.0))?;
    println!("input gradients: {:?}", grads.iter().map(|g| g.shape().to_vec()).collect::<Vec<_>>());
    Ok(())
}
