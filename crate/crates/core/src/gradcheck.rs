//! Finite-difference verification of every hand-written backward pass.
//!
//! Each check builds a scalar loss `L = sum(r * op(x))` with a random
//! projection `r`, computes the analytic gradient through the operation's
//! backward pass, and compares it with central differences on a seeded
//! sample of coordinates of every input and parameter.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ctc::{ctc_loss, LogProbSeq};
use crate::dbpost::{approx_binary_backward, approx_binary_map};
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::nn::{
    Asf, BackwardCtx, BatchNorm, BiLstm, Conv2d, Dense, Layer, LogSoftmax, Lstm, MaxPool2, Model, ModelSpec,
    SequenceFold, Tensor,
};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
/// Denominator floor: gradients below it are compared absolutely. Central
/// differences at `STEP` carry roughly `1e-10 * |L|` of rounding noise.
pub const FLOOR: f64 = 1e-3;
/// Coordinates sampled per tensor.
pub const SAMPLES_PER_TENSOR: usize = 24;

pub const CHECKS: [&str; 14] = [
    "conv",
    "maxpool",
    "batchnorm4d",
    "batchnorm3d",
    "batchnorm_eval",
    "dense",
    "lstm",
    "bilstm",
    "fold",
    "log_softmax",
    "asf",
    "approx_binary_map",
    "ctc",
    "model",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub seed: u64,
    pub coordinates: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares `analytic` against central differences of `loss` at the given
/// coordinates of `x`.
pub fn check_gradient(
    name: &str,
    seed: u64,
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    mut loss: impl FnMut(&[f64]) -> f64,
) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for &i in coords {
        let orig = xp[i];
        xp[i] = orig + STEP;
        let up = loss(&xp);
        xp[i] = orig - STEP;
        let down = loss(&xp);
        xp[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let e = rel_err(analytic[i], numeric);
        worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
    }
    CheckResult {
        name: name.to_string(),
        seed,
        coordinates: coords.len(),
        max_rel_err: worst,
        passed: worst < TOLERANCE,
    }
}

fn pick(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= SAMPLES_PER_TENSOR {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, SAMPLES_PER_TENSOR).into_vec();
        v.sort_unstable();
        v
    }
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, random_vec(n, rng)).expect("valid shape")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn merge(name: &str, seed: u64, parts: Vec<CheckResult>) -> CheckResult {
    let worst = parts.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    CheckResult {
        name: name.to_string(),
        seed,
        coordinates: parts.iter().map(|p| p.coordinates).sum(),
        max_rel_err: worst,
        passed: parts.iter().all(|p| p.passed),
    }
}

/// Checks input and parameter gradients of a layer under `L = sum(r * y)`.
pub fn check_layer<L: Layer + Clone>(name: &str, seed: u64, layer: &L, input_shape: &[usize], train: bool, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let x = random_tensor(input_shape, rng);
    let mut probe = layer.clone();
    let y = probe.forward(&x, train)?;
    let r = random_tensor(y.shape(), rng);
    let dx = probe
        .backward(&r, BackwardCtx::full())?
        .ok_or_else(|| Error::InvalidArgument("layer returned no input gradient".into()))?;
    let mut parts = Vec::new();
    let coords = pick(x.len(), rng);
    parts.push(check_gradient(name, seed, x.data(), dx.data(), &coords, |xv| {
        let mut l = layer.clone();
        let xt = Tensor::from_vec(input_shape, xv.to_vec()).expect("same shape");
        dot(l.forward(&xt, train).expect("forward").data(), r.data())
    }));
    let param_count = layer.params().len();
    for k in 0..param_count {
        let (values, grad) = {
            let (_, t) = probe.params()[k];
            (t.data().to_vec(), t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        };
        let coords = pick(values.len(), rng);
        parts.push(check_gradient(name, seed, &values, &grad, &coords, |pv| {
            let mut l = layer.clone();
            l.params_mut()[k].1.data_mut().copy_from_slice(pv);
            dot(l.forward(&x, train).expect("forward").data(), r.data())
        }));
    }
    Ok(merge(name, seed, parts))
}

fn check_asf(seed: u64, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (s, shape) = (3, [2usize, 2, 3, 4]);
    let asf = Asf::new(s, shape[1], rng);
    let feats: Vec<Tensor> = (0..s).map(|_| random_tensor(&shape, rng)).collect();
    let mut probe = asf.clone();
    let y = probe.forward(&feats)?;
    let r = random_tensor(y.shape(), rng);
    let grads = probe.backward(&r)?;
    let mut parts = Vec::new();
    for (i, g) in grads.iter().enumerate() {
        let coords = pick(g.len(), rng);
        parts.push(check_gradient("asf", seed, feats[i].data(), g.data(), &coords, |v| {
            let mut f = feats.clone();
            f[i] = Tensor::from_vec(&shape, v.to_vec()).expect("same shape");
            dot(asf.clone().forward(&f).expect("forward").data(), r.data())
        }));
    }
    for (k, (values, grad)) in [
        (probe.weight.data().to_vec(), probe.weight.grad().unwrap_or(&[]).to_vec()),
        (probe.bias.data().to_vec(), probe.bias.grad().unwrap_or(&[]).to_vec()),
    ]
    .into_iter()
    .enumerate()
    {
        let coords = pick(values.len(), rng);
        parts.push(check_gradient("asf", seed, &values, &grad, &coords, |v| {
            let mut a = asf.clone();
            let t = if k == 0 { &mut a.weight } else { &mut a.bias };
            t.data_mut().copy_from_slice(v);
            dot(a.forward(&feats).expect("forward").data(), r.data())
        }));
    }
    Ok(merge("asf", seed, parts))
}

fn check_approx_binary(seed: u64, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (w, h, k) = (6, 5, 50.0);
    // keep k(P - T) in a range where the logistic is not saturated
    let p: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.3..0.7)).collect();
    let t: Vec<f64> = p.iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect();
    let r = random_vec(w * h, rng);
    let pi = GrayImage::from_vec(w, h, p.clone())?;
    let ti = GrayImage::from_vec(w, h, t.clone())?;
    let bin = approx_binary_map(&pi, &ti, k)?;
    let (gp, gt) = approx_binary_backward(&bin, &r);
    let eval = |pv: &[f64], tv: &[f64]| {
        let pi = GrayImage::from_vec(w, h, pv.to_vec()).expect("in range");
        let ti = GrayImage::from_vec(w, h, tv.to_vec()).expect("in range");
        dot(approx_binary_map(&pi, &ti, k).expect("same dims").map.data(), &r)
    };
    let all: Vec<usize> = (0..w * h).collect();
    Ok(merge(
        "approx_binary_map",
        seed,
        vec![
            check_gradient("approx_binary_map", seed, &p, &gp, &all, |v| eval(v, &t)),
            check_gradient("approx_binary_map", seed, &t, &gt, &all, |v| eval(&p, v)),
        ],
    ))
}

fn check_ctc(seed: u64, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let (t_len, classes) = (6, 4);
    let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..classes - 1)).collect();
    let lp = LogProbSeq::from_logits(t_len, classes, &random_vec(t_len * classes, rng))?;
    let (_, grad) = ctc_loss(&lp, &labels)?;
    let all: Vec<usize> = (0..t_len * classes).collect();
    Ok(check_gradient("ctc", seed, lp.data(), &grad, &all, |v| {
        let seq = LogProbSeq::new(t_len, classes, v.to_vec()).expect("finite");
        ctc_loss(&seq, &labels).expect("feasible").0
    }))
}

fn check_model(seed: u64, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let spec = ModelSpec::table_one(8, 5).scaled(16);
    let model = Model::new(spec, seed)?;
    let x = random_tensor(&[2, 1, 8, 16], rng);
    let mut probe = model.clone();
    let y = probe.forward(&x, true)?;
    let r = random_tensor(y.shape(), rng);
    probe.backward(&r)?;
    let loss = |m: &mut Model| dot(m.forward(&x, true).expect("forward").data(), r.data());
    let mut parts = Vec::new();
    let n_params = probe.params().len();
    for k in 0..n_params {
        let (values, grad) = {
            let (_, t) = &probe.params()[k];
            (t.data().to_vec(), t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        };
        let coords = pick(values.len(), rng);
        parts.push(check_gradient("model", seed, &values, &grad, &coords, |v| {
            let mut m = model.clone();
            m.params_mut()[k].2.data_mut().copy_from_slice(v);
            loss(&mut m)
        }));
    }
    Ok(merge("model", seed, parts))
}

/// Runs one registered check.
pub fn run_check(name: &str, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ name.len() as u64);
    match name {
        "conv" => {
            let l = Conv2d::new("conv", 2, 3, true, &mut rng);
            check_layer(name, seed, &l, &[2, 2, 5, 6], true, &mut rng)
        }
        "maxpool" => check_layer(name, seed, &MaxPool2::new("pool"), &[2, 3, 4, 6], true, &mut rng),
        "batchnorm4d" | "batchnorm3d" | "batchnorm_eval" => {
            let (shape, channels): (&[usize], usize) = if name == "batchnorm3d" {
                (&[2, 5, 3], 3)
            } else {
                (&[3, 2, 3, 3], 2)
            };
            let mut l = BatchNorm::new("bn", channels);
            for t in [&mut l.gamma, &mut l.beta, &mut l.running_mean] {
                t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            }
            l.running_var.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.5..2.0));
            check_layer(name, seed, &l, shape, name != "batchnorm_eval", &mut rng)
        }
        "dense" => {
            let l = Dense::new("dense", 5, 4, true, &mut rng);
            check_layer(name, seed, &l, &[2, 3, 5], true, &mut rng)
        }
        "lstm" => {
            let l = Lstm::new("lstm", 3, 4, false, &mut rng);
            check_layer(name, seed, &l, &[2, 5, 3], true, &mut rng)
        }
        "bilstm" => {
            let l = BiLstm::new("bilstm", 3, 3, &mut rng);
            check_layer(name, seed, &l, &[2, 4, 3], true, &mut rng)
        }
        "fold" => check_layer(name, seed, &SequenceFold::new("fold"), &[2, 3, 2, 4], true, &mut rng),
        "log_softmax" => check_layer(name, seed, &LogSoftmax::new("ls"), &[2, 3, 5], true, &mut rng),
        "asf" => check_asf(seed, &mut rng),
        "approx_binary_map" => check_approx_binary(seed, &mut rng),
        "ctc" => check_ctc(seed, &mut rng),
        "model" => check_model(seed, &mut rng),
        other => Err(Error::InvalidArgument(format!(
            "unknown gradient check {other:?}; valid: all, {}",
            CHECKS.join(", ")
        ))),
    }
}

/// Runs `scope` ("all" or one check name) for each seed.
pub fn run_scope(scope: &str, seeds: &[u64]) -> Result<Vec<CheckResult>> {
    let names: Vec<&str> = if scope == "all" {
        CHECKS.to_vec()
    } else if CHECKS.contains(&scope) {
        vec![scope]
    } else {
        return Err(Error::InvalidArgument(format!(
            "unknown gradient check {scope:?}; valid: all, {}",
            CHECKS.join(", ")
        )));
    };
    let mut out = Vec::new();
    for name in names {
        for &seed in seeds {
            out.push(run_check(name, seed)?);
        }
    }
    Ok(out)
}

/// Worst error per check, one line each.
pub fn format_table(results: &[CheckResult]) -> String {
    let mut lines = vec![format!("{:<20} {:>6} {:>12} {:>7}", "check", "seeds", "worst_rel", "status")];
    let mut names: Vec<&str> = Vec::new();
    for r in results {
        if !names.contains(&r.name.as_str()) {
            names.push(&r.name);
        }
    }
    for name in names {
        let rows: Vec<&CheckResult> = results.iter().filter(|r| r.name == name).collect();
        let worst = rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
        let ok = rows.iter().all(|r| r.passed);
        lines.push(format!(
            "{:<20} {:>6} {:>12.3e} {:>7}",
            name,
            rows.len(),
            worst,
            if ok { "pass" } else { "FAIL" }
        ));
    }
    lines.join("\n") + "\n"
}
