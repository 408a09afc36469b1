//! Model construction, freezing, and a bit-exact checkpoint round trip.

use scriptline::nn::{decode_checkpoint, encode_checkpoint, Adam, AdamConfig, Model, ModelSpec, Tensor, CONV_BLOCK};

fn main() -> scriptline::Result<()> {
    let spec = ModelSpec::table_one(32, 12);
    println!("full-size stack: {} parameters", Model::new(spec.clone(), 1)?.param_count());
    let mut model = Model::new(spec.scaled(4), 1)?;
    println!("scaled stack: {} parameters", model.param_count());
    model.set_stage(1);
    model.freeze(&[CONV_BLOCK])?;
    let x = Tensor::full(&[1, 1, 32, 64], 0.25);
    let y = model.forward(&x, false)?;
    println!("output {:?} (frames x classes)", y.shape());
    let bytes = encode_checkpoint(&model, &Adam::new(AdamConfig::default()))?;
    let (mut back, _) = decode_checkpoint(&bytes)?;
    let same = back.forward(&x, false)?.data() == y.data();
    println!("{} bytes, frozen {:?}, identical output after reload: {same}", bytes.len(), back.frozen());
    Ok(())
}
