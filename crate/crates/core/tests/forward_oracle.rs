//! Straight-line re-implementation of the recognizer forward pass, compared
//! against `Model::forward` on a small instance.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scriptline::nn::{Model, ModelSpec, Tensor};

type Params = HashMap<String, Vec<f64>>;

/// `[c][h][w]` activations of one sample.
type Map = Vec<Vec<Vec<f64>>>;

fn conv_relu(x: &Map, w: &[f64], b: &[f64], cout: usize) -> Map {
    let (cin, h, wd) = (x.len(), x[0].len(), x[0][0].len());
    let mut out = vec![vec![vec![0.0; wd]; h]; cout];
    for o in 0..cout {
        for y in 0..h {
            for xx in 0..wd {
                let mut s = b[o];
                for i in 0..cin {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                continue;
                            }
                            s += w[((o * cin + i) * 3 + ky) * 3 + kx] * x[i][sy as usize][sx as usize];
                        }
                    }
                }
                out[o][y][xx] = s.max(0.0);
            }
        }
    }
    out
}

fn pool(x: &Map) -> Map {
    x.iter()
        .map(|ch| {
            (0..ch.len() / 2)
                .map(|y| {
                    (0..ch[0].len() / 2)
                        .map(|xx| {
                            let v = [ch[2 * y][2 * xx], ch[2 * y][2 * xx + 1], ch[2 * y + 1][2 * xx], ch[2 * y + 1][2 * xx + 1]];
                            v.into_iter().fold(f64::NEG_INFINITY, f64::max)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Per-channel statistics: batch statistics when `train`, else the buffers.
fn bn_maps(xs: &mut [Map], p: &Params, name: &str, train: bool) {
    let c = xs[0].len();
    for ch in 0..c {
        let vals: Vec<f64> = xs.iter().flat_map(|x| x[ch].iter().flatten().copied()).collect();
        let (mean, var) = stats(&vals, p, name, ch, train);
        let (g, b) = (p[&format!("{name}.gamma")][ch], p[&format!("{name}.beta")][ch]);
        for x in xs.iter_mut() {
            for row in &mut x[ch] {
                for v in row {
                    *v = g * (*v - mean) / (var + 1e-5).sqrt() + b;
                }
            }
        }
    }
}

fn stats(vals: &[f64], p: &Params, name: &str, ch: usize, train: bool) -> (f64, f64) {
    if train {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    } else {
        (p[&format!("{name}.running_mean")][ch], p[&format!("{name}.running_var")][ch])
    }
}

/// `[t][f]` sequences.
type Seq = Vec<Vec<f64>>;

fn bn_seqs(xs: &mut [Seq], p: &Params, name: &str, train: bool) {
    let f = xs[0][0].len();
    for k in 0..f {
        let vals: Vec<f64> = xs.iter().flat_map(|s| s.iter().map(|r| r[k])).collect();
        let (mean, var) = stats(&vals, p, name, k, train);
        let (g, b) = (p[&format!("{name}.gamma")][k], p[&format!("{name}.beta")][k]);
        for s in xs.iter_mut() {
            for r in s.iter_mut() {
                r[k] = g * (r[k] - mean) / (var + 1e-5).sqrt() + b;
            }
        }
    }
}

fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    (0..b.len())
        .map(|o| b[o] + (0..x.len()).map(|i| w[o * x.len() + i] * x[i]).sum::<f64>())
        .collect()
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn lstm(seq: &Seq, p: &Params, prefix: &str, reverse: bool) -> Seq {
    let (wih, whh, bias) = (&p[&format!("{prefix}.w_ih")], &p[&format!("{prefix}.w_hh")], &p[&format!("{prefix}.bias")]);
    let hid = bias.len() / 4;
    let mut h = vec![0.0; hid];
    let mut c = vec![0.0; hid];
    let mut out = vec![Vec::new(); seq.len()];
    let order: Vec<usize> = if reverse { (0..seq.len()).rev().collect() } else { (0..seq.len()).collect() };
    for t in order {
        let a = affine(&seq[t], wih, bias);
        let r = affine(&h, whh, &vec![0.0; 4 * hid]);
        let z: Vec<f64> = a.iter().zip(&r).map(|(x, y)| x + y).collect();
        for j in 0..hid {
            let (i, f, g, o) = (sig(z[j]), sig(z[hid + j]), z[2 * hid + j].tanh(), sig(z[3 * hid + j]));
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        out[t] = h.clone();
    }
    out
}

fn bilstm(seq: &Seq, p: &Params, name: &str) -> Seq {
    let f = lstm(seq, p, &format!("{name}.fwd"), false);
    let b = lstm(seq, p, &format!("{name}.bwd"), true);
    f.into_iter().zip(b).map(|(mut x, y)| { x.extend(y); x }).collect()
}

fn oracle(p: &Params, spec: &ModelSpec, input: &[Map], train: bool) -> Vec<Seq> {
    use scriptline::nn::LayerSpec::*;
    let widths: Vec<usize> = spec
        .layers
        .iter()
        .filter_map(|l| match l {
            Conv { filters } => Some(*filters),
            _ => None,
        })
        .collect();
    let mut xs: Vec<Map> = input.to_vec();
    for (i, (conv, pooled)) in [("conv1", true), ("conv2", true), ("conv3", false)].into_iter().enumerate() {
        xs = xs
            .iter()
            .map(|x| conv_relu(x, &p[&format!("{conv}.weight")], &p[&format!("{conv}.bias")], widths[i]))
            .collect();
        if pooled {
            xs = xs.iter().map(pool).collect();
        }
        bn_maps(&mut xs, p, &format!("bn{}", i + 1), train);
    }
    // fold right to left: time t reads column W-1-t, feature c*H+h
    let mut seqs: Vec<Seq> = xs
        .iter()
        .map(|x| {
            let (c, h, w) = (x.len(), x[0].len(), x[0][0].len());
            (0..w)
                .map(|t| (0..c * h).map(|f| x[f / h][f % h][w - 1 - t]).collect())
                .collect()
        })
        .collect();
    for s in &mut seqs {
        for r in s.iter_mut() {
            *r = affine(r, &p["dense1.weight"], &p["dense1.bias"]).into_iter().map(|v| v.max(0.0)).collect();
        }
    }
    bn_seqs(&mut seqs, p, "bn4", train);
    seqs.iter()
        .map(|s| {
            let s = bilstm(&bilstm(s, p, "bilstm1"), p, "bilstm2");
            s.iter()
                .map(|r| {
                    let z = affine(r, &p["output.weight"], &p["output.bias"]);
                    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    z.iter().map(|v| v - lse).collect()
                })
                .collect()
        })
        .collect()
}

fn setup(seed: u64) -> (Model, Tensor, Vec<Map>) {
    let (n, h, w) = (2, 8, 16);
    let mut model = Model::new(ModelSpec::table_one(h, 5).scaled(8), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    // non-trivial affine and running statistics
    for (name, t) in model.buffers_mut() {
        let var = name.ends_with("running_var");
        t.data_mut().iter_mut().for_each(|v| *v = if var { rng.gen_range(0.5..2.0) } else { rng.gen_range(-0.3..0.3) });
    }
    for (name, _, t) in model.params_mut() {
        if name.ends_with("gamma") || name.ends_with("beta") || name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
        }
    }
    let data: Vec<f64> = (0..n * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    let maps = (0..n)
        .map(|b| (0..1).map(|_| (0..h).map(|y| data[(b * h + y) * w..(b * h + y + 1) * w].to_vec()).collect()).collect())
        .collect();
    (model, Tensor::from_vec(&[n, 1, h, w], data).unwrap(), maps)
}

fn all_tensors(model: &Model) -> Params {
    model
        .params()
        .into_iter()
        .chain(model.buffers())
        .map(|(k, t)| (k, t.data().to_vec()))
        .collect()
}

fn compare(got: &Tensor, want: &[Seq]) {
    let s = got.shape();
    assert_eq!(s, &[want.len(), want[0].len(), want[0][0].len()]);
    let flat: Vec<f64> = want.iter().flatten().flatten().copied().collect();
    let worst = got.data().iter().zip(&flat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-12, "max abs deviation {worst:e}");
}

#[test]
fn inference_forward_matches_oracle() {
    let (mut model, x, maps) = setup(11);
    let p = all_tensors(&model);
    let got = model.forward(&x, false).unwrap();
    compare(&got, &oracle(&p, model.spec(), &maps, false));
}

#[test]
fn training_forward_matches_oracle() {
    let (mut model, x, maps) = setup(11);
    let p = all_tensors(&model);
    let got = model.forward(&x, true).unwrap();
    compare(&got, &oracle(&p, model.spec(), &maps, true));
}

#[test]
fn training_forward_updates_running_stats_with_momentum() {
    let (mut model, x, maps) = setup(5);
    let before = all_tensors(&model);
    model.forward(&x, true).unwrap();
    let after = all_tensors(&model);
    // bn1 sees the pooled conv1 maps; rebuild its batch mean per channel
    let w = &before["conv1.weight"];
    let c = before["bn1.gamma"].len();
    let pooled: Vec<Map> = maps.iter().map(|m| pool(&conv_relu(m, w, &before["conv1.bias"], c))).collect();
    for ch in 0..c {
        let vals: Vec<f64> = pooled.iter().flat_map(|m| m[ch].iter().flatten().copied()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let want = 0.9 * before["bn1.running_mean"][ch] + 0.1 * mean;
        assert!((after["bn1.running_mean"][ch] - want).abs() < 1e-12);
    }
}
