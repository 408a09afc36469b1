//! Recognition and detection scoring.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::datagen::AugmentKind;
use crate::dbpost::{raster_iou, TextPolygon};
use crate::error::{Error, Result};

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = diag + usize::from(x != y);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(row[j + 1] + 1);
        }
    }
    row[b.len()]
}

/// Decoded or reference text: words separated by single spaces.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Transcript(String);

impl Transcript {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.starts_with(' ') || text.ends_with(' ') || text.contains("  ") {
            return Err(Error::InvalidArgument(format!(
                "transcript {text:?} has stray spaces"
            )));
        }
        Ok(Self(text))
    }

    /// Joins words with single spaces, dropping empty words.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        let joined = words
            .iter()
            .map(AsRef::as_ref)
            .filter(|w| !w.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        Self(joined)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn chars(&self) -> Vec<char> {
        self.0.chars().collect()
    }

    pub fn words(&self) -> Vec<&str> {
        self.0.split(' ').filter(|w| !w.is_empty()).collect()
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Transcript {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Transcript::new(s)
    }
}

impl From<Transcript> for String {
    fn from(t: Transcript) -> String {
        t.0
    }
}

fn check_lengths(refs: &[Transcript], hyps: &[Transcript]) -> Result<()> {
    if refs.len() != hyps.len() {
        return Err(Error::LengthMismatch {
            refs: refs.len(),
            hyps: hyps.len(),
        });
    }
    Ok(())
}

/// Character recognition rate in percent, spaces included, floored at 0.
pub fn crr(refs: &[Transcript], hyps: &[Transcript]) -> Result<f64> {
    check_lengths(refs, hyps)?;
    let (mut dist, mut len) = (0usize, 0usize);
    for (r, h) in refs.iter().zip(hyps) {
        let (rc, hc) = (r.chars(), h.chars());
        dist += levenshtein(&rc, &hc);
        len += rc.len();
    }
    if len == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(((1.0 - dist as f64 / len as f64) * 100.0).max(0.0))
}

/// Number of exactly matched tokens in a minimal-cost alignment; among
/// equal-cost alignments the one with most matches wins.
pub fn aligned_matches<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    // (edits, -matches) ordered lexicographically
    let mut prev: Vec<(usize, isize)> = (0..=b.len()).map(|j| (j, 0)).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![(i + 1, 0isize); b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            let diag = if x == y {
                (prev[j].0, prev[j].1 - 1)
            } else {
                (prev[j].0 + 1, prev[j].1)
            };
            let up = (prev[j + 1].0 + 1, prev[j + 1].1);
            let left = (cur[j].0 + 1, cur[j].1);
            cur[j + 1] = diag.min(up).min(left);
        }
        prev = cur;
    }
    (-prev[b.len()].1) as usize
}

/// Word recognition rate in percent: reference words reproduced exactly
/// under a minimal word-level edit alignment.
pub fn wrr(refs: &[Transcript], hyps: &[Transcript]) -> Result<f64> {
    check_lengths(refs, hyps)?;
    let (mut matched, mut total) = (0usize, 0usize);
    for (r, h) in refs.iter().zip(hyps) {
        let (rw, hw) = (r.words(), h.words());
        matched += aligned_matches(&rw, &hw);
        total += rw.len();
    }
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(matched as f64 / total as f64 * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub true_positives: usize,
    pub predictions: usize,
    pub ground_truth: usize,
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn geometry_key(p: &TextPolygon) -> Vec<(f64, f64)> {
    let mut k: Vec<(f64, f64)> = p.points().iter().map(|q| (q.x, q.y)).collect();
    k.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    k
}

fn cmp_key(a: &[(f64, f64)], b: &[(f64, f64)]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1));
        if o.is_ne() {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// Greedy one-to-one matching in descending IoU order.
pub fn match_detections(gt: &[TextPolygon], pred: &[TextPolygon], iou_thresh: f64) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (g, gp) in gt.iter().enumerate() {
        for (p, pp) in pred.iter().enumerate() {
            let iou = raster_iou(gp, pp);
            if iou >= iou_thresh && iou > 0.0 {
                pairs.push((g, p, iou));
            }
        }
    }
    // ties resolve by polygon geometry, not list position, so the result
    // does not depend on input order
    let gk: Vec<Vec<(f64, f64)>> = gt.iter().map(geometry_key).collect();
    let pk: Vec<Vec<(f64, f64)>> = pred.iter().map(geometry_key).collect();
    pairs.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| cmp_key(&gk[a.0], &gk[b.0]))
            .then_with(|| cmp_key(&pk[a.1], &pk[b.1]))
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let mut gt_used = vec![false; gt.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut matches = Vec::new();
    for (g, p, iou) in pairs {
        if !gt_used[g] && !pred_used[p] {
            gt_used[g] = true;
            pred_used[p] = true;
            matches.push((g, p, iou));
        }
    }
    matches
}

/// Precision, recall and F-measure in percent. Empty prediction or ground
/// truth sets score 0 on the undefined ratio.
pub fn detection_prf(gt: &[TextPolygon], pred: &[TextPolygon], iou_thresh: f64) -> Result<DetectionScore> {
    if !(iou_thresh > 0.0 && iou_thresh < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "IoU threshold must be in (0, 1), got {iou_thresh}"
        )));
    }
    let tp = match_detections(gt, pred, iou_thresh).len();
    let ratio = |n: usize| if n == 0 { 0.0 } else { tp as f64 / n as f64 * 100.0 };
    let precision = ratio(pred.len());
    let recall = ratio(gt.len());
    Ok(DetectionScore {
        precision,
        recall,
        f_measure: harmonic_mean(precision, recall),
        true_positives: tp,
        predictions: pred.len(),
        ground_truth: gt.len(),
    })
}

/// Column label of an augmentation mode in reports.
pub fn mode_label(kind: AugmentKind) -> &'static str {
    match kind {
        AugmentKind::None => "Solid",
        AugmentKind::Salt => "Salted",
        AugmentKind::Bold => "Bolded",
        AugmentKind::Rotate => "Rotated",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub words: usize,
    pub mode: AugmentKind,
    pub samples: usize,
    pub crr: f64,
    pub wrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub crr: f64,
    pub wrr: f64,
    pub samples: usize,
    pub decoder: String,
    pub buckets: Vec<BucketRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionScore>,
    pub notes: Vec<String>,
}

/// One scored sample.
#[derive(Debug, Clone)]
pub struct ScoredSample {
    pub words: usize,
    pub mode: AugmentKind,
    pub reference: Transcript,
    pub hypothesis: Transcript,
}

impl EvalReport {
    pub fn from_samples(samples: &[ScoredSample], decoder: &str) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        let refs: Vec<Transcript> = samples.iter().map(|s| s.reference.clone()).collect();
        let hyps: Vec<Transcript> = samples.iter().map(|s| s.hypothesis.clone()).collect();
        let mut grouped: BTreeMap<(usize, AugmentKind), (Vec<Transcript>, Vec<Transcript>)> =
            BTreeMap::new();
        for s in samples {
            let e = grouped.entry((s.words, s.mode)).or_default();
            e.0.push(s.reference.clone());
            e.1.push(s.hypothesis.clone());
        }
        let buckets = grouped
            .into_iter()
            .map(|((words, mode), (r, h))| {
                Ok(BucketRow {
                    words,
                    mode,
                    samples: r.len(),
                    crr: crr(&r, &h)?,
                    wrr: wrr(&r, &h)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            crr: crr(&refs, &hyps)?,
            wrr: wrr(&refs, &hyps)?,
            samples: samples.len(),
            decoder: decoder.to_string(),
            buckets,
            detection: None,
            notes: vec![
                "CRR: character edit distance including word separators, floored at 0".into(),
                "WRR: exact word matches under a minimal word-level edit alignment".into(),
            ],
        })
    }

    pub fn bucket(&self, words: usize, mode: AugmentKind) -> Option<&BucketRow> {
        self.buckets.iter().find(|b| b.words == words && b.mode == mode)
    }

    /// Word count x {Solid, Salted, Bolded} x {CRR, WRR}; missing cells are empty.
    pub fn to_csv(&self) -> String {
        let modes = [AugmentKind::None, AugmentKind::Salt, AugmentKind::Bold];
        let mut out = String::from("words");
        for m in modes {
            let l = mode_label(m);
            out.push_str(&format!(",{l} CRR,{l} WRR"));
        }
        out.push('\n');
        let mut counts: Vec<usize> = self.buckets.iter().map(|b| b.words).collect();
        counts.dedup();
        for words in counts {
            out.push_str(&words.to_string());
            for m in modes {
                match self.bucket(words, m) {
                    Some(b) => out.push_str(&format!(",{:.2},{:.2}", b.crr, b.wrr)),
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbpost::TextPolygon;

    fn t(s: &str) -> Transcript {
        Transcript::new(s).unwrap()
    }

    #[test]
    fn levenshtein_basics() {
        let k: Vec<char> = "kitten".chars().collect();
        let s: Vec<char> = "sitting".chars().collect();
        assert_eq!(levenshtein(&k, &s), 3);
        assert_eq!(levenshtein(&k, &k), 0);
        assert_eq!(levenshtein::<char>(&[], &s), 7);
    }

    #[test]
    fn kitten_sitting_full_table() {
        // explicit (m+1) x (n+1) table as an independent check
        let a: Vec<char> = "kitten".chars().collect();
        let b: Vec<char> = "sitting".chars().collect();
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 0..=a.len() {
            d[i][0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let c = usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + c);
            }
        }
        assert_eq!(d[6][7], levenshtein(&a, &b));
    }

    #[test]
    fn transcript_validation() {
        assert!(Transcript::new(" ab").is_err());
        assert!(Transcript::new("ab ").is_err());
        assert!(Transcript::new("a  b").is_err());
        assert_eq!(Transcript::from_words(&["ab", "", "cd"]).as_str(), "ab cd");
    }

    #[test]
    fn crr_cases() {
        assert_eq!(crr(&[t("abc de")], &[t("abc de")]).unwrap(), 100.0);
        let v = crr(&[t("abcdefghij")], &[t("abcdefghiX")]).unwrap();
        assert!((v - 90.0).abs() < 1e-12);
        assert_eq!(crr(&[t("ab")], &[t("xyzuvw")]).unwrap(), 0.0);
        assert!(matches!(crr(&[t("ab")], &[]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(crr(&[t("")], &[t("")]), Err(Error::EmptyInput)));
    }

    #[test]
    fn wrr_cases() {
        assert_eq!(wrr(&[t("ab cd")], &[t("ab cd")]).unwrap(), 100.0);
        let v = wrr(&[t("ab cd ef")], &[t("ab xx ef")]).unwrap();
        assert!((v - 200.0 / 3.0).abs() < 1e-12);
        let refs = [t("one"), t("two"), t("six"), t("ten")];
        let hyps = [t("one"), t("tw"), t("six"), t("")];
        assert_eq!(wrr(&refs, &hyps).unwrap(), 50.0);
        // a dropped word does not misalign the rest
        assert!((wrr(&[t("a b c d")], &[t("a c d")]).unwrap() - 75.0).abs() < 1e-12);
    }

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> TextPolygon {
        TextPolygon::rect(x0, y0, x1, y1, 1.0).unwrap()
    }

    /// Two ground-truth lines; one prediction at IoU 0.9, one at 0.6 on the
    /// same line, one spurious.
    pub(crate) fn detection_fixture() -> (Vec<TextPolygon>, Vec<TextPolygon>) {
        let gt = vec![rect(0.0, 0.0, 10.0, 10.0), rect(0.0, 30.0, 20.0, 36.0)];
        let pred = vec![
            rect(0.0, 0.0, 10.0, 6.0),
            rect(50.0, 50.0, 55.0, 55.0),
            rect(0.0, 0.0, 10.0, 9.0),
        ];
        (gt, pred)
    }

    #[test]
    fn detection_fixture_scores() {
        let (gt, pred) = detection_fixture();
        assert!((raster_iou(&gt[0], &pred[2]) - 0.9).abs() < 1e-12);
        assert!((raster_iou(&gt[0], &pred[0]) - 0.6).abs() < 1e-12);
        let m = match_detections(&gt, &pred, 0.5);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].0, m[0].1), (0, 2));
        let s = detection_prf(&gt, &pred, 0.5).unwrap();
        assert!((s.precision - 100.0 / 3.0).abs() < 1e-9);
        assert!((s.recall - 50.0).abs() < 1e-9);
        assert!((s.f_measure - 40.0).abs() < 1e-9);
    }

    #[test]
    fn detection_edge_cases() {
        let (gt, _) = detection_fixture();
        let perfect = detection_prf(&gt, &gt, 0.5).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f_measure), (100.0, 100.0, 100.0));
        let none = detection_prf(&gt, &[], 0.5).unwrap();
        assert_eq!((none.precision, none.recall, none.f_measure), (0.0, 0.0, 0.0));
        assert!(detection_prf(&gt, &gt, 1.0).is_err());
    }

    #[test]
    fn table_three_f_measure_is_the_harmonic_mean() {
        // printed P and R give 80.21, not the printed 79.07
        let f = harmonic_mean(81.66, 78.82);
        assert!((f - 80.215).abs() < 1e-3);
        assert!((f - 79.07).abs() > 1.0);
    }

    #[test]
    fn report_buckets_and_csv() {
        let s = |w, mode, r: &str, h: &str| ScoredSample {
            words: w,
            mode,
            reference: t(r),
            hypothesis: t(h),
        };
        let samples = vec![
            s(1, AugmentKind::None, "abcd", "abcd"),
            s(1, AugmentKind::Salt, "abcd", "abce"),
            s(2, AugmentKind::None, "ab cd", "ab cd"),
        ];
        let rep = EvalReport::from_samples(&samples, "greedy").unwrap();
        assert_eq!(rep.buckets.len(), 3);
        assert_eq!(rep.bucket(1, AugmentKind::Salt).unwrap().crr, 75.0);
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "words,Solid CRR,Solid WRR,Salted CRR,Salted WRR,Bolded CRR,Bolded WRR");
        assert_eq!(lines[1], "1,100.00,100.00,75.00,0.00,,");
        assert_eq!(lines[2], "2,100.00,100.00,,,,");
        assert!(EvalReport::from_samples(&[], "greedy").is_err());
        let json = serde_json::to_string(&rep).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }
}
