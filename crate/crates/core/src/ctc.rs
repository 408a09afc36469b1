//! Connectionist Temporal Classification.
//!
//! Log-probabilities are laid out frame-major (`T x C`); the blank symbol is
//! the last class, `C - 1`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// `T x C` frame-major log probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbSeq {
    frames: usize,
    classes: usize,
    data: Vec<f64>,
}

impl LogProbSeq {
    pub fn new(frames: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least one frame and two classes, got {frames}x{classes}"
            )));
        }
        if data.len() != frames * classes {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {frames}x{classes} log probabilities",
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidArgument("log probabilities must be finite or -inf".into()));
        }
        Ok(Self {
            frames,
            classes,
            data,
        })
    }

    /// Row-wise log-softmax of raw scores.
    pub fn from_logits(frames: usize, classes: usize, logits: &[f64]) -> Result<Self> {
        let mut data = logits.to_vec();
        for row in data.chunks_mut(classes) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        Self::new(frames, classes, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn blank(&self) -> usize {
        self.classes - 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.classes + c]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.classes..(t + 1) * self.classes]
    }

    /// Largest deviation of a frame's log-sum-exp from zero.
    pub fn normalization_error(&self) -> f64 {
        self.data
            .chunks(self.classes)
            .map(|row| log_sum_exp(row).abs())
            .fold(0.0, f64::max)
    }
}

/// Log of zero probability.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

#[inline]
fn lse2(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(LOG_ZERO, f64::max);
    if m == LOG_ZERO {
        return LOG_ZERO;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Minimum number of frames needed to emit `labels`.
pub fn required_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_labels(labels: &[usize], blank: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= blank) {
        Some(&l) => Err(Error::LabelOutOfAlphabet {
            label: l,
            alphabet: blank,
        }),
        None => Ok(()),
    }
}

/// Negative log-likelihood of `labels` and its gradient with respect to the
/// log probabilities, via the forward-backward recursions in log space.
pub fn ctc_loss(lp: &LogProbSeq, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let blank = lp.blank();
    check_labels(labels, blank)?;
    let t_len = lp.frames();
    let need = required_frames(labels);
    if t_len < need {
        return Err(Error::SequenceTooShort {
            frames: t_len,
            required: need,
        });
    }
    let s_len = 2 * labels.len() + 1;
    let ext = |s: usize| if s % 2 == 0 { blank } else { labels[s / 2] };
    // skip transition s-2 -> s allowed for distinct consecutive labels
    let can_skip = |s: usize| s >= 2 && s % 2 == 1 && ext(s) != ext(s - 2);

    let mut alpha = vec![LOG_ZERO; t_len * s_len];
    alpha[0] = lp.get(0, blank);
    if s_len > 1 {
        alpha[1] = lp.get(0, ext(1));
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut a = prev[s];
            if s >= 1 {
                a = lse2(a, prev[s - 1]);
            }
            if can_skip(s) {
                a = lse2(a, prev[s - 2]);
            }
            cur[s] = if a == LOG_ZERO {
                LOG_ZERO
            } else {
                a + lp.get(t, ext(s))
            };
        }
    }

    let mut beta = vec![LOG_ZERO; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = lp.get(t_len - 1, ext(s_len - 1));
    if s_len > 1 {
        beta[last + s_len - 2] = lp.get(t_len - 1, ext(s_len - 2));
    }
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        for s in 0..s_len {
            let mut b = next[s];
            if s + 1 < s_len {
                b = lse2(b, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = lse2(b, next[s + 2]);
            }
            cur[s] = if b == LOG_ZERO {
                LOG_ZERO
            } else {
                b + lp.get(t, ext(s))
            };
        }
    }

    let log_z = if s_len > 1 {
        lse2(alpha[last + s_len - 1], alpha[last + s_len - 2])
    } else {
        alpha[last]
    };
    let mut grad = vec![0.0; t_len * lp.classes()];
    if log_z == LOG_ZERO {
        return Ok((f64::INFINITY, grad));
    }
    for t in 0..t_len {
        for s in 0..s_len {
            let a = alpha[t * s_len + s];
            let b = beta[t * s_len + s];
            if a == LOG_ZERO || b == LOG_ZERO {
                continue;
            }
            let c = ext(s);
            let occ = (a + b - lp.get(t, c) - log_z).exp();
            grad[t * lp.classes() + c] -= occ;
        }
    }
    Ok((-log_z, grad))
}

/// Removes repeats and blanks from a frame-level path.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &c in path {
        if Some(c) != prev && c != blank {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

/// Best-path decoding; argmax ties go to the lowest class index.
pub fn greedy_decode(lp: &LogProbSeq) -> Vec<usize> {
    let path: Vec<usize> = (0..lp.frames())
        .map(|t| {
            let row = lp.frame(t);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    collapse(&path, lp.blank())
}

#[derive(Debug, Clone, Copy)]
struct PrefixMass {
    blank: f64,
    symbol: f64,
}

impl PrefixMass {
    const ZERO: Self = Self {
        blank: LOG_ZERO,
        symbol: LOG_ZERO,
    };

    fn total(self) -> f64 {
        lse2(self.blank, self.symbol)
    }
}

/// Prefix beam search over collapse classes.
///
/// Each prefix tracks the log mass of alignments ending in blank and in its
/// last symbol; after every frame the `beam_width` heaviest prefixes survive
/// (ties favour the lexicographically smaller prefix). Returns the heaviest
/// final prefix with its log mass.
pub fn beam_decode(lp: &LogProbSeq, beam_width: usize) -> Result<(Vec<usize>, f64)> {
    if beam_width == 0 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    let blank = lp.blank();
    let mut beams: Vec<(Vec<usize>, PrefixMass)> = vec![(
        Vec::new(),
        PrefixMass {
            blank: 0.0,
            symbol: LOG_ZERO,
        },
    )];
    for t in 0..lp.frames() {
        let frame = lp.frame(t);
        let mut next: BTreeMap<Vec<usize>, PrefixMass> = BTreeMap::new();
        for (prefix, mass) in &beams {
            let total = mass.total();
            let entry = next.entry(prefix.clone()).or_insert(PrefixMass::ZERO);
            entry.blank = lse2(entry.blank, total + frame[blank]);
            let last = prefix.last().copied();
            for (c, &p) in frame.iter().enumerate().take(blank) {
                if p == LOG_ZERO {
                    continue;
                }
                let mut extended = prefix.clone();
                extended.push(c);
                let e = next.entry(extended).or_insert(PrefixMass::ZERO);
                if last == Some(c) {
                    // a repeat needs a blank in between to extend
                    e.symbol = lse2(e.symbol, mass.blank + p);
                    let same = next.get_mut(prefix).expect("inserted above");
                    same.symbol = lse2(same.symbol, mass.symbol + p);
                } else {
                    e.symbol = lse2(e.symbol, total + p);
                }
            }
        }
        let mut ranked: Vec<(Vec<usize>, PrefixMass)> = next.into_iter().collect();
        ranked.sort_by(|a, b| b.1.total().total_cmp(&a.1.total()).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(beam_width);
        beams = ranked;
    }
    let (best, mass) = beams
        .into_iter()
        .next()
        .expect("beam always holds at least one prefix");
    Ok((best, mass.total()))
}
