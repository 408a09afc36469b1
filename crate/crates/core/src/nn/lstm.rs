//! Unidirectional and bidirectional LSTM layers over `[N, T, F]` sequences.

use rand::Rng;

use super::init::{orthogonal, xavier_uniform};
use super::layers::accumulate;
use super::tensor::Tensor;
use super::{BackwardCtx, Layer};
use crate::error::{Error, Result};

/// LSTM with gate order input, forget, cell, output. Weights: `w_ih`
/// `[4H, In]`, `w_hh` `[4H, H]`, `bias` `[4H]`. With `reverse` set the
/// sequence is consumed from the last step to the first; outputs stay
/// aligned with their input steps.
#[derive(Debug, Clone)]
pub struct Lstm {
    name: String,
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
    reverse: bool,
    cache: Option<LstmCache>,
}

#[derive(Debug, Clone)]
struct LstmCache {
    input: Tensor,
    /// Per (n, t): gate activations i, f, g, o, each `H` wide.
    gates: Vec<f64>,
    /// Per (n, t): cell state after the step.
    cells: Vec<f64>,
    /// Per (n, t): hidden output.
    hidden: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Lstm {
    pub fn new(name: &str, inputs: usize, hidden: usize, reverse: bool, rng: &mut impl Rng) -> Self {
        let w_ih = xavier_uniform(&[4 * hidden, inputs], inputs, 4 * hidden, rng);
        let mut whh = Vec::with_capacity(4 * hidden * hidden);
        for _ in 0..4 {
            whh.extend(orthogonal(hidden, hidden, rng));
        }
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Self {
            name: name.to_string(),
            w_ih,
            w_hh: Tensor::from_vec(&[4 * hidden, hidden], whh).expect("valid shape"),
            bias: Tensor::from_vec(&[4 * hidden], bias).expect("valid shape"),
            reverse,
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn is_reverse(&self) -> bool {
        self.reverse
    }

    fn order(&self, t_len: usize) -> Vec<usize> {
        if self.reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        }
    }
}

impl Layer for Lstm {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Tensor, _train: bool) -> Result<Tensor> {
        input.expect_rank(3, "lstm")?;
        let s = input.shape();
        let (n, t_len, fin) = (s[0], s[1], s[2]);
        if fin != self.inputs() {
            return Err(Error::DimensionMismatch(format!(
                "{}: expected {} features, got {fin}",
                self.name,
                self.inputs()
            )));
        }
        let h = self.hidden();
        let (wih, whh, bias) = (self.w_ih.data(), self.w_hh.data(), self.bias.data());
        let x = input.data();
        let mut gates = vec![0.0; n * t_len * 4 * h];
        let mut cells = vec![0.0; n * t_len * h];
        let mut hidden = vec![0.0; n * t_len * h];
        let mut pre = vec![0.0; 4 * h];
        for b in 0..n {
            let mut h_prev = vec![0.0; h];
            let mut c_prev = vec![0.0; h];
            for t in self.order(t_len) {
                let xt = &x[(b * t_len + t) * fin..(b * t_len + t + 1) * fin];
                for (r, p) in pre.iter_mut().enumerate() {
                    let wi = &wih[r * fin..(r + 1) * fin];
                    let wh = &whh[r * h..(r + 1) * h];
                    *p = bias[r]
                        + wi.iter().zip(xt).map(|(a, b)| a * b).sum::<f64>()
                        + wh.iter().zip(&h_prev).map(|(a, b)| a * b).sum::<f64>();
                }
                let off = (b * t_len + t) * h;
                let g = &mut gates[(b * t_len + t) * 4 * h..(b * t_len + t + 1) * 4 * h];
                for j in 0..h {
                    let ig = sigmoid(pre[j]);
                    let fg = sigmoid(pre[h + j]);
                    let gg = pre[2 * h + j].tanh();
                    let og = sigmoid(pre[3 * h + j]);
                    let c = fg * c_prev[j] + ig * gg;
                    let hv = og * c.tanh();
                    g[j] = ig;
                    g[h + j] = fg;
                    g[2 * h + j] = gg;
                    g[3 * h + j] = og;
                    cells[off + j] = c;
                    hidden[off + j] = hv;
                }
                h_prev.copy_from_slice(&hidden[off..off + h]);
                c_prev.copy_from_slice(&cells[off..off + h]);
            }
        }
        let out = Tensor::from_vec(&[n, t_len, h], hidden.clone())?;
        self.cache = Some(LstmCache {
            input: input.clone(),
            gates,
            cells,
            hidden,
        });
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor, ctx: BackwardCtx) -> Result<Option<Tensor>> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardWithoutForward)?;
        let s = cache.input.shape();
        let (n, t_len, fin) = (s[0], s[1], s[2]);
        let h = self.hidden();
        let x = cache.input.data();
        let (wih, whh) = (self.w_ih.data(), self.w_hh.data());
        let go = grad_out.data();
        let mut dwih = vec![0.0; 4 * h * fin];
        let mut dwhh = vec![0.0; 4 * h * h];
        let mut db = vec![0.0; 4 * h];
        let mut dx = vec![0.0; x.len()];
        let mut da = vec![0.0; 4 * h];
        let zero = vec![0.0; h];
        for b in 0..n {
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            let order = self.order(t_len);
            for (k, &t) in order.iter().enumerate().rev() {
                let prev = if k > 0 { Some(order[k - 1]) } else { None };
                let off = (b * t_len + t) * h;
                let (h_prev, c_prev) = match prev {
                    Some(p) => {
                        let po = (b * t_len + p) * h;
                        (&cache.hidden[po..po + h], &cache.cells[po..po + h])
                    }
                    None => (&zero[..], &zero[..]),
                };
                let g = &cache.gates[(b * t_len + t) * 4 * h..(b * t_len + t + 1) * 4 * h];
                for j in 0..h {
                    let (ig, fg, gg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let tc = cache.cells[off + j].tanh();
                    let dh = go[off + j] + dh_next[j];
                    let d_o = dh * tc;
                    let dc = dh * og * (1.0 - tc * tc) + dc_next[j];
                    da[j] = dc * gg * ig * (1.0 - ig);
                    da[h + j] = dc * c_prev[j] * fg * (1.0 - fg);
                    da[2 * h + j] = dc * ig * (1.0 - gg * gg);
                    da[3 * h + j] = d_o * og * (1.0 - og);
                    dc_next[j] = dc * fg;
                }
                let xt = &x[(b * t_len + t) * fin..(b * t_len + t + 1) * fin];
                if ctx.param_grads {
                    for r in 0..4 * h {
                        let a = da[r];
                        if a == 0.0 {
                            continue;
                        }
                        db[r] += a;
                        for (d, &xv) in dwih[r * fin..(r + 1) * fin].iter_mut().zip(xt) {
                            *d += a * xv;
                        }
                        for (d, &hv) in dwhh[r * h..(r + 1) * h].iter_mut().zip(h_prev) {
                            *d += a * hv;
                        }
                    }
                }
                dh_next.iter_mut().for_each(|v| *v = 0.0);
                let dxt = &mut dx[(b * t_len + t) * fin..(b * t_len + t + 1) * fin];
                for r in 0..4 * h {
                    let a = da[r];
                    if a == 0.0 {
                        continue;
                    }
                    for (d, &w) in dh_next.iter_mut().zip(&whh[r * h..(r + 1) * h]) {
                        *d += a * w;
                    }
                    if ctx.input_grad {
                        for (d, &w) in dxt.iter_mut().zip(&wih[r * fin..(r + 1) * fin]) {
                            *d += a * w;
                        }
                    }
                }
            }
        }
        if ctx.param_grads {
            accumulate(self.w_ih.grad_mut(), &dwih);
            accumulate(self.w_hh.grad_mut(), &dwhh);
            accumulate(self.bias.grad_mut(), &db);
        }
        if ctx.input_grad {
            Ok(Some(Tensor::from_vec(s, dx)?))
        } else {
            Ok(None)
        }
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("w_ih", &self.w_ih), ("w_hh", &self.w_hh), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("w_ih", &mut self.w_ih),
            ("w_hh", &mut self.w_hh),
            ("bias", &mut self.bias),
        ]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Forward and reverse LSTMs over the same input, outputs concatenated as
/// `[forward, backward]` along the feature axis.
#[derive(Debug, Clone)]
pub struct BiLstm {
    name: String,
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new(name: &str, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            name: name.to_string(),
            fwd: Lstm::new("fwd", inputs, hidden, false, rng),
            bwd: Lstm::new("bwd", inputs, hidden, true, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }
}

impl Layer for BiLstm {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        let a = self.fwd.forward(input, train)?;
        let b = self.bwd.forward(input, train)?;
        let h = self.hidden();
        let s = a.shape();
        let rows = s[0] * s[1];
        let mut out = Vec::with_capacity(rows * 2 * h);
        for r in 0..rows {
            out.extend_from_slice(&a.data()[r * h..(r + 1) * h]);
            out.extend_from_slice(&b.data()[r * h..(r + 1) * h]);
        }
        Tensor::from_vec(&[s[0], s[1], 2 * h], out)
    }

    fn backward(&mut self, grad_out: &Tensor, ctx: BackwardCtx) -> Result<Option<Tensor>> {
        let h = self.hidden();
        let s = grad_out.shape().to_vec();
        if s.len() != 3 || s[2] != 2 * h {
            return Err(Error::DimensionMismatch(format!(
                "{}: gradient shape {s:?} does not match output width {}",
                self.name,
                2 * h
            )));
        }
        let rows = s[0] * s[1];
        let mut ga = Vec::with_capacity(rows * h);
        let mut gb = Vec::with_capacity(rows * h);
        for r in 0..rows {
            let row = &grad_out.data()[r * 2 * h..(r + 1) * 2 * h];
            ga.extend_from_slice(&row[..h]);
            gb.extend_from_slice(&row[h..]);
        }
        let da = self.fwd.backward(&Tensor::from_vec(&[s[0], s[1], h], ga)?, ctx)?;
        let db = self.bwd.backward(&Tensor::from_vec(&[s[0], s[1], h], gb)?, ctx)?;
        match (da, db) {
            (Some(mut a), Some(b)) => {
                accumulate(a.data_mut(), b.data());
                Ok(Some(a))
            }
            _ => Ok(None),
        }
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("fwd.w_ih", &self.fwd.w_ih),
            ("fwd.w_hh", &self.fwd.w_hh),
            ("fwd.bias", &self.fwd.bias),
            ("bwd.w_ih", &self.bwd.w_ih),
            ("bwd.w_hh", &self.bwd.w_hh),
            ("bwd.bias", &self.bwd.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("fwd.w_ih", &mut self.fwd.w_ih),
            ("fwd.w_hh", &mut self.fwd.w_hh),
            ("fwd.bias", &mut self.fwd.bias),
            ("bwd.w_ih", &mut self.bwd.w_ih),
            ("bwd.w_hh", &mut self.bwd.w_hh),
            ("bwd.bias", &mut self.bwd.bias),
        ]
    }

    fn clear_cache(&mut self) {
        self.fwd.clear_cache();
        self.bwd.clear_cache();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reverse_time(t: &Tensor) -> Tensor {
        let s = t.shape();
        let (n, tl, f) = (s[0], s[1], s[2]);
        let mut out = vec![0.0; t.len()];
        for b in 0..n {
            for i in 0..tl {
                let src = &t.data()[(b * tl + i) * f..(b * tl + i + 1) * f];
                out[(b * tl + tl - 1 - i) * f..(b * tl + tl - i) * f].copy_from_slice(src);
            }
        }
        Tensor::from_vec(s, out).unwrap()
    }

    #[test]
    fn reverse_direction_matches_forward_on_reversed_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut fwd = Lstm::new("f", 3, 4, false, &mut rng);
        let mut bwd = fwd.clone();
        bwd.reverse = true;
        let x = Tensor::from_vec(&[2, 5, 3], (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let a = bwd.forward(&x, true).unwrap();
        let b = reverse_time(&fwd.forward(&reverse_time(&x), true).unwrap());
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn forget_bias_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Lstm::new("l", 2, 3, false, &mut rng);
        assert_eq!(&l.bias.data()[3..6], &[1.0, 1.0, 1.0]);
        assert!(l.bias.data()[..3].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn bilstm_concatenates_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bi = BiLstm::new("b", 3, 2, &mut rng);
        let x = Tensor::from_vec(&[1, 4, 3], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let out = bi.forward(&x, true).unwrap();
        assert_eq!(out.shape(), &[1, 4, 4]);
        let f = bi.fwd.forward(&x, true).unwrap();
        assert_eq!(&out.data()[0..2], &f.data()[0..2]);
    }

    #[test]
    fn backward_without_forward_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut l = Lstm::new("l", 2, 2, false, &mut rng);
        let g = Tensor::zeros(&[1, 1, 2]);
        assert!(matches!(
            l.backward(&g, BackwardCtx::full()),
            Err(Error::BackwardWithoutForward)
        ));
    }
}
