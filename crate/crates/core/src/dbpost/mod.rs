//! Differentiable binarization: the soft binary map, its supervision targets
//! and losses, and box formation from a predicted map.

pub mod geometry;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::imaging::{binarize, connected_components, BinaryImage, Connectivity, GrayImage};

pub use geometry::{offset_polygon, raster_iou, Point, TextPolygon};

/// Soft binary map `1 / (1 + exp(-k (P - T)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxBinMap {
    pub map: GrayImage,
    pub k: f64,
}

/// Numerically stable logistic.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_dims(a: &GrayImage, b: &GrayImage, what: &str) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )))
    }
}

pub fn approx_binary_map(prob: &GrayImage, thresh: &GrayImage, k: f64) -> Result<ApproxBinMap> {
    check_dims(prob, thresh, "probability vs threshold map")?;
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("steepness k must be positive, got {k}")));
    }
    let data = prob
        .data()
        .iter()
        .zip(thresh.data())
        .map(|(&p, &t)| logistic(k * (p - t)))
        .collect();
    Ok(ApproxBinMap {
        map: GrayImage::from_vec(prob.width(), prob.height(), data)?,
        k,
    })
}

/// Backpropagates `grad_out` (dL/dB) to `(dL/dP, dL/dT)` using
/// `dB/dP = k B (1 - B) = -dB/dT`.
pub fn approx_binary_backward(bin: &ApproxBinMap, grad_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let gp: Vec<f64> = bin
        .map
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&b, &g)| g * bin.k * b * (1.0 - b))
        .collect();
    let gt = gp.iter().map(|g| -g).collect();
    (gp, gt)
}

/// Constants of the differentiable-binarization stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbParams {
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
    pub neg_ratio: f64,
    pub shrink_ratio: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub bin_thresh: f64,
    pub box_score_thresh: f64,
    pub unclip_ratio: f64,
    pub min_area: f64,
}

impl Default for DbParams {
    fn default() -> Self {
        Self {
            k: 50.0,
            alpha: 1.0,
            beta: 10.0,
            neg_ratio: 3.0,
            shrink_ratio: 0.4,
            t_min: 0.3,
            t_max: 0.7,
            bin_thresh: 0.3,
            box_score_thresh: 0.5,
            unclip_ratio: 1.5,
            min_area: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionTargets {
    /// Shrunk text regions, shared by the probability and binary-map terms.
    pub prob_target: BinaryImage,
    pub thresh_target: GrayImage,
    /// Band between the shrunk and the expanded polygon.
    pub thresh_mask: BinaryImage,
    pub shrink_ratio: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// Indices of input polygons dropped because the inward offset collapsed.
    pub skipped: Vec<usize>,
}

/// Offset distance `A (1 - r^2) / L`.
pub fn shrink_distance(poly: &TextPolygon, shrink_ratio: f64) -> f64 {
    poly.area() * (1.0 - shrink_ratio * shrink_ratio) / poly.perimeter()
}

pub fn make_targets(
    gt: &[TextPolygon],
    width: usize,
    height: usize,
    shrink_ratio: f64,
    t_min: f64,
    t_max: f64,
) -> Result<SupervisionTargets> {
    if !(shrink_ratio > 0.0 && shrink_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "shrink ratio must be in (0, 1), got {shrink_ratio}"
        )));
    }
    if !(t_min < t_max) || t_min < 0.0 || t_max > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= t_min < t_max <= 1, got {t_min}, {t_max}"
        )));
    }
    let mut prob_target = BinaryImage::new(width, height);
    let mut thresh_mask = BinaryImage::new(width, height);
    let mut thresh_target = GrayImage::new(width, height, t_min);
    let mut skipped = Vec::new();

    for (idx, poly) in gt.iter().enumerate() {
        let d = shrink_distance(poly, shrink_ratio);
        let shrunk = match offset_polygon(poly, -d) {
            Ok(p) => p,
            Err(_) => {
                skipped.push(idx);
                continue;
            }
        };
        let expanded = offset_polygon(poly, d)?;
        let inner = shrunk.rasterize(width, height);
        let (x0, y0, x1, y1) = expanded.pixel_span(width, height);
        for y in y0..y1 {
            for x in x0..x1 {
                let c = Point::new(x as f64 + 0.5, y as f64 + 0.5);
                if !expanded.contains(c) || inner.get(x, y) {
                    continue;
                }
                thresh_mask.set(x, y, true);
                let dist = poly.boundary_distance(c);
                let v = (t_max - (t_max - t_min) * dist / d).clamp(t_min, t_max);
                if v > thresh_target.get(x, y) {
                    thresh_target.set(x, y, v);
                }
            }
        }
        shrunk.rasterize_into(&mut prob_target);
    }
    // a band pixel of one polygon may fall inside another's shrunk core
    for y in 0..height {
        for x in 0..width {
            if prob_target.get(x, y) && thresh_mask.get(x, y) {
                thresh_mask.set(x, y, false);
            }
        }
    }
    Ok(SupervisionTargets {
        prob_target,
        thresh_target,
        thresh_mask,
        shrink_ratio,
        t_min,
        t_max,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbLoss {
    pub total: f64,
    /// Probability-map term.
    pub ls: f64,
    /// Binary-map term.
    pub lb: f64,
    /// Threshold-map term.
    pub lt: f64,
    /// No positives and an empty threshold mask.
    pub degenerate: bool,
}

/// Which loss term is consuming a target raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Probability,
    Binary,
}

const BCE_EPS: f64 = 1e-12;

fn bce(p: f64, target: bool) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if target {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Indices of the `keep` highest-loss negatives (ties by lower index).
pub fn hard_negatives(losses: &[f64], target: &BinaryImage, keep: usize) -> Vec<usize> {
    let mut neg: Vec<usize> = (0..losses.len())
        .filter(|&i| target.data()[i] == 0)
        .collect();
    neg.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    neg.truncate(keep);
    neg
}

/// Balanced BCE with hard-negative mining.
fn balanced_bce(pred: &GrayImage, target: &BinaryImage, neg_ratio: f64) -> f64 {
    let losses: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| bce(p, t != 0))
        .collect();
    let positives = target.count_ink();
    let negatives = losses.len() - positives;
    let keep = ((positives as f64 * neg_ratio).floor() as usize).min(negatives);
    if positives + keep == 0 {
        return 0.0;
    }
    let pos_sum: f64 = losses
        .iter()
        .zip(target.data())
        .filter(|(_, &t)| t != 0)
        .map(|(l, _)| l)
        .sum();
    let neg_sum: f64 = hard_negatives(&losses, target, keep)
        .iter()
        .map(|&i| losses[i])
        .sum();
    (pos_sum + neg_sum) / (positives + keep) as f64
}

pub fn db_loss(
    prob: &GrayImage,
    thresh: &GrayImage,
    bin: &ApproxBinMap,
    targets: &SupervisionTargets,
    alpha: f64,
    beta: f64,
    neg_ratio: f64,
) -> Result<DbLoss> {
    db_loss_observed(prob, thresh, bin, targets, alpha, beta, neg_ratio, |_, _| {})
}

/// [`db_loss`] with a hook that sees the target raster each BCE term reads.
#[allow(clippy::too_many_arguments)]
pub fn db_loss_observed(
    prob: &GrayImage,
    thresh: &GrayImage,
    bin: &ApproxBinMap,
    targets: &SupervisionTargets,
    alpha: f64,
    beta: f64,
    neg_ratio: f64,
    mut observe: impl FnMut(LossTerm, &BinaryImage),
) -> Result<DbLoss> {
    check_dims(prob, thresh, "probability vs threshold map")?;
    check_dims(prob, &bin.map, "probability vs binary map")?;
    let target = &targets.prob_target;
    if target.width() != prob.width() || target.height() != prob.height() {
        return Err(Error::DimensionMismatch("targets vs maps".into()));
    }
    if target.count_ink() == 0 && targets.thresh_mask.count_ink() == 0 {
        return Ok(DbLoss {
            total: 0.0,
            ls: 0.0,
            lb: 0.0,
            lt: 0.0,
            degenerate: true,
        });
    }

    observe(LossTerm::Probability, target);
    let ls = balanced_bce(prob, target, neg_ratio);
    observe(LossTerm::Binary, target);
    let lb = balanced_bce(&bin.map, target, neg_ratio);

    let mask = targets.thresh_mask.data();
    let (mut abs_sum, mut count) = (0.0, 0usize);
    for ((&t, &tt), &m) in thresh
        .data()
        .iter()
        .zip(targets.thresh_target.data())
        .zip(mask)
    {
        if m != 0 {
            abs_sum += (t - tt).abs();
            count += 1;
        }
    }
    let lt = if count == 0 { 0.0 } else { abs_sum / count as f64 };
    // beta == 0 must make the total independent of T, even if lt is odd
    let lt_term = if beta == 0.0 { 0.0 } else { beta * lt };
    Ok(DbLoss {
        total: ls + alpha * lb + lt_term,
        ls,
        lb,
        lt,
        degenerate: false,
    })
}

/// Box formation from a probability or approximate binary map.
pub fn box_formation(map: &GrayImage, params: &DbParams) -> Result<Vec<TextPolygon>> {
    let DbParams {
        bin_thresh,
        box_score_thresh,
        unclip_ratio,
        min_area,
        ..
    } = *params;
    if !(0.0..=1.0).contains(&bin_thresh) || !(0.0..=1.0).contains(&box_score_thresh) {
        return Err(Error::InvalidArgument("thresholds must lie in [0, 1]".into()));
    }
    if !(unclip_ratio > 0.0) {
        return Err(Error::InvalidArgument("unclip ratio must be positive".into()));
    }
    let mask = binarize(map, bin_thresh);
    let comps = connected_components(&mask, Connectivity::Eight);
    let mut out: Vec<TextPolygon> = Vec::new();
    let mut sums = vec![0.0f64; comps.count];
    for (i, &l) in comps.labels.iter().enumerate() {
        if l != 0 {
            sums[l as usize - 1] += map.data()[i];
        }
    }
    for id in 1..=comps.count as u32 {
        let idx = id as usize - 1;
        let score = sums[idx] / comps.areas[idx] as f64;
        if score < box_score_thresh {
            continue;
        }
        let bx = comps.boxes[idx];
        // top-most then left-most pixel of the component
        let start = (bx.min_x..=bx.max_x)
            .find(|&x| comps.label(x, bx.min_y) == id)
            .map(|x| (x, bx.min_y))
            .expect("component box contains its pixels");
        let component = comps.mask(id);
        let contour = geometry::trace_contour(&component, start);
        let corners: Vec<Point> = contour
            .iter()
            .flat_map(|&(x, y)| {
                let (x, y) = (x as f64, y as f64);
                [
                    Point::new(x, y),
                    Point::new(x + 1.0, y),
                    Point::new(x + 1.0, y + 1.0),
                    Point::new(x, y + 1.0),
                ]
            })
            .collect();
        let Some(rect) = geometry::min_area_rect(&corners) else {
            continue;
        };
        let rect = TextPolygon::new(rect.to_vec(), score.clamp(0.0, 1.0))?;
        let area = rect.area();
        if area < min_area {
            continue;
        }
        let d = area * unclip_ratio / rect.perimeter();
        out.push(offset_polygon(&rect, d)?);
    }
    out.sort_by(|a, b| b.score().total_cmp(&a.score()));
    Ok(out)
}

#[derive(Deserialize)]
struct PolygonRow {
    points: Vec<[f64; 2]>,
    score: f64,
}

/// One JSON object per line: `{"points": [[x,y],...], "score": s}`.
pub fn polygons_to_jsonl(polys: &[TextPolygon]) -> String {
    let mut s = String::new();
    for p in polys {
        s.push_str("{\"points\": [");
        for (i, pt) in p.points().iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "[{:.6}, {:.6}]", pt.x, pt.y);
        }
        let _ = writeln!(s, "], \"score\": {:.6}}}", p.score());
    }
    s
}

pub fn polygons_from_jsonl(text: &str, origin: &Path) -> Result<Vec<TextPolygon>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg,
        };
        let row: PolygonRow = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let poly = TextPolygon::new(
            row.points.iter().map(|&[x, y]| Point::new(x, y)).collect(),
            row.score,
        )
        .map_err(|e| parse_err(e.to_string()))?;
        out.push(poly);
    }
    Ok(out)
}

pub fn read_polygons(path: impl AsRef<Path>) -> Result<Vec<TextPolygon>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    polygons_from_jsonl(&text, path)
}

pub fn write_polygons(path: impl AsRef<Path>, polys: &[TextPolygon]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, polygons_to_jsonl(polys)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(w: usize, h: usize, v: f64) -> GrayImage {
        GrayImage::new(w, h, v)
    }

    #[test]
    fn binary_map_midpoint_and_saturation() {
        let p = constant(3, 2, 0.4);
        let b = approx_binary_map(&p, &p, 50.0).unwrap();
        assert!(b.map.data().iter().all(|&v| v == 0.5));
        let sat = approx_binary_map(&constant(2, 2, 1.0), &constant(2, 2, 0.0), 50.0).unwrap();
        assert!(sat.map.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let low = approx_binary_map(&constant(2, 2, 0.0), &constant(2, 2, 1.0), 50.0).unwrap();
        assert!(low.map.data().iter().all(|&v| v > 0.0 && v < 1e-21));
        // 1 / (1 + e^-5) evaluated to 20 digits
        let mid = approx_binary_map(&constant(1, 1, 0.6), &constant(1, 1, 0.5), 50.0).unwrap();
        assert!((mid.map.data()[0] - 0.993_307_149_075_715_2).abs() < 1e-14);
    }

    #[test]
    fn binary_map_rejects_bad_inputs() {
        assert!(matches!(
            approx_binary_map(&constant(2, 2, 0.0), &constant(3, 2, 0.0), 50.0),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(approx_binary_map(&constant(2, 2, 0.0), &constant(2, 2, 0.0), 0.0).is_err());
    }

    #[test]
    fn binary_map_derivative_matches_finite_differences() {
        let k = 50.0;
        for &(p, t) in &[(0.55, 0.5), (0.3, 0.7), (0.5, 0.52), (0.9, 0.1)] {
            let b = logistic(k * (p - t));
            let analytic = k * b * (1.0 - b);
            let h = 1e-6;
            let fd = (logistic(k * (p + h - t)) - logistic(k * (p - h - t))) / (2.0 * h);
            let denom = analytic.abs().max(1e-300);
            assert!(((analytic - fd) / denom).abs() < 1e-6, "p={p} t={t}");
        }
    }

    fn square_fixture() -> TextPolygon {
        TextPolygon::rect(5.0, 5.0, 15.0, 15.0, 1.0).unwrap()
    }

    #[test]
    fn shrink_distance_of_square() {
        let d = shrink_distance(&square_fixture(), 0.4);
        assert!((d - 2.1).abs() < 1e-12);
        let shrunk = offset_polygon(&square_fixture(), -d).unwrap();
        let xs: Vec<f64> = shrunk.points().iter().map(|p| p.x).collect();
        assert!((xs.iter().cloned().fold(f64::MIN, f64::max) - 12.9).abs() < 1e-9);
        assert!((xs.iter().cloned().fold(f64::MAX, f64::min) - 7.1).abs() < 1e-9);
    }

    #[test]
    fn targets_for_square() {
        let t = make_targets(&[square_fixture()], 20, 20, 0.4, 0.3, 0.7).unwrap();
        assert!(t.skipped.is_empty());
        // shrunk square [7.1, 12.9]: pixel centers 7.5..12.5 -> 6x6
        assert_eq!(t.prob_target.count_ink(), 36);
        assert!(t.prob_target.is_subset_of(&square_fixture().rasterize(20, 20)));
        for y in 0..20 {
            for x in 0..20 {
                let v = t.thresh_target.get(x, y);
                assert!((0.3..=0.7).contains(&v));
                if t.thresh_mask.get(x, y) {
                    assert!(!t.prob_target.get(x, y));
                    let c = Point::new(x as f64 + 0.5, y as f64 + 0.5);
                    let dist = square_fixture().boundary_distance(c);
                    let expected = (0.7 - 0.4 * dist / 2.1).clamp(0.3, 0.7);
                    assert!((v - expected).abs() < 1e-12);
                    if dist >= 2.1 {
                        assert_eq!(v, 0.3);
                    }
                } else {
                    assert_eq!(v, 0.3);
                }
            }
        }
    }

    #[test]
    fn threshold_target_endpoints() {
        // a polygon whose edge passes through pixel centers
        let poly = TextPolygon::rect(4.5, 4.5, 14.5, 14.5, 1.0).unwrap();
        let t = make_targets(&[poly], 20, 20, 0.4, 0.3, 0.7).unwrap();
        assert_eq!(t.thresh_target.get(4, 9), 0.7);
        assert!(t.thresh_mask.get(4, 9));
        let max = t.thresh_target.data().iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 0.7);
    }

    #[test]
    fn shrink_ratio_near_one_keeps_polygon() {
        let t = make_targets(&[square_fixture()], 20, 20, 0.999_999, 0.3, 0.7).unwrap();
        assert_eq!(t.prob_target, square_fixture().rasterize(20, 20));
    }

    #[test]
    fn degenerate_polygon_is_skipped() {
        // a sliver whose inward offset inverts it
        let sliver = TextPolygon::new(
            vec![Point::new(0.0, 0.0), Point::new(10.0, 0.0), Point::new(10.0, 0.05)],
            1.0,
        )
        .unwrap();
        let t = make_targets(&[sliver, square_fixture()], 20, 20, 0.1, 0.3, 0.7).unwrap();
        assert_eq!(t.skipped, vec![0]);
        assert!(t.prob_target.count_ink() > 0);
    }

    fn perfect_inputs() -> (GrayImage, GrayImage, ApproxBinMap, SupervisionTargets) {
        let targets = make_targets(&[square_fixture()], 20, 20, 0.4, 0.3, 0.7).unwrap();
        let prob = targets.prob_target.to_gray();
        let thresh = targets.thresh_target.clone();
        let sat = GrayImage::from_fn(20, 20, |x, y| {
            if targets.prob_target.get(x, y) {
                1.0
            } else {
                0.0
            }
        });
        (prob, thresh, ApproxBinMap { map: sat, k: 50.0 }, targets)
    }

    #[test]
    fn loss_vanishes_on_perfect_prediction() {
        let (p, t, b, targets) = perfect_inputs();
        let l = db_loss(&p, &t, &b, &targets, 1.0, 10.0, 3.0).unwrap();
        assert!(l.total < 1e-10, "{l:?}");
        assert!(l.ls >= 0.0 && l.lb >= 0.0 && l.lt >= 0.0);
    }

    #[test]
    fn beta_zero_ignores_threshold_map() {
        let (p, t, b, targets) = perfect_inputs();
        let base = db_loss(&p, &t, &b, &targets, 1.0, 0.0, 3.0).unwrap().total;
        let noisy = GrayImage::from_fn(20, 20, |x, y| ((x * 7 + y * 3) % 10) as f64 / 10.0);
        let other = db_loss(&p, &noisy, &b, &targets, 1.0, 0.0, 3.0).unwrap().total;
        assert_eq!(base, other);
    }

    #[test]
    fn degenerate_targets_give_zero_loss() {
        let targets = make_targets(&[], 6, 6, 0.4, 0.3, 0.7).unwrap();
        let p = constant(6, 6, 0.7);
        let b = approx_binary_map(&p, &constant(6, 6, 0.3), 50.0).unwrap();
        let l = db_loss(&p, &constant(6, 6, 0.3), &b, &targets, 1.0, 10.0, 3.0).unwrap();
        assert!(l.degenerate);
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn hard_negative_selection_matches_sort_oracle() {
        // 4x4 with 2 positives; neg_ratio 3 keeps the 6 worst negatives
        let target = BinaryImage::from_fn(4, 4, |x, y| (x, y) == (1, 1) || (x, y) == (2, 1));
        let probs = [
            0.05, 0.90, 0.20, 0.35, //
            0.60, 0.70, 0.80, 0.10, //
            0.45, 0.15, 0.55, 0.25, //
            0.65, 0.30, 0.02, 0.85,
        ];
        let pred = GrayImage::from_vec(4, 4, probs.to_vec()).unwrap();
        let losses: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| bce(p, target.data()[i] != 0))
            .collect();
        let mut kept = hard_negatives(&losses, &target, 6);
        kept.sort_unstable();
        // oracle: negatives with the six largest predicted probabilities
        let mut neg: Vec<(f64, usize)> = (0..16)
            .filter(|&i| target.data()[i] == 0)
            .map(|i| (probs[i], i))
            .collect();
        neg.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut oracle: Vec<usize> = neg[..6].iter().map(|&(_, i)| i).collect();
        oracle.sort_unstable();
        assert_eq!(kept, oracle);
        assert_eq!(oracle, vec![1, 4, 8, 10, 12, 15]);

        let expected = (losses[5] + losses[6] + oracle.iter().map(|&i| losses[i]).sum::<f64>()) / 8.0;
        assert!((balanced_bce(&pred, &target, 3.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn both_bce_terms_read_the_same_raster() {
        let (p, t, b, targets) = perfect_inputs();
        let mut seen: Vec<(LossTerm, *const BinaryImage, BinaryImage)> = Vec::new();
        db_loss_observed(&p, &t, &b, &targets, 1.0, 10.0, 3.0, |term, raster| {
            seen.push((term, raster as *const _, raster.clone()));
        })
        .unwrap();
        assert_eq!(seen.len(), 2);
        assert_eq!(seen[0].0, LossTerm::Probability);
        assert_eq!(seen[1].0, LossTerm::Binary);
        assert!(std::ptr::eq(seen[0].1, seen[1].1));
        assert_eq!(seen[0].2, seen[1].2);
    }

    fn rect_map(w: usize, h: usize, rects: &[(usize, usize, usize, usize, f64)]) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            rects
                .iter()
                .find(|&&(x0, y0, rw, rh, _)| x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh)
                .map_or(0.0, |r| r.4)
        })
    }

    #[test]
    fn blank_map_yields_nothing() {
        let polys = box_formation(&constant(40, 20, 0.0), &DbParams::default()).unwrap();
        assert!(polys.is_empty());
    }

    #[test]
    fn single_rectangle_fixture() {
        let map = rect_map(64, 32, &[(17, 12, 30, 8, 1.0)]);
        let polys = box_formation(&map, &DbParams::default()).unwrap();
        assert_eq!(polys.len(), 1);
        assert_eq!(polys[0].score(), 1.0);
        let d = 240.0 * 1.5 / 76.0;
        let expected = TextPolygon::rect(17.0 - d, 12.0 - d, 47.0 + d, 20.0 + d, 1.0).unwrap();
        assert!(raster_iou(&polys[0], &expected) >= 0.9);
        assert!((polys[0].area() - (30.0 + 2.0 * d) * (8.0 + 2.0 * d)).abs() < 1e-6);
    }

    #[test]
    fn score_filter_and_ordering() {
        let map = rect_map(80, 40, &[(5, 5, 20, 6, 1.0), (40, 20, 20, 6, 0.4)]);
        let polys = box_formation(&map, &DbParams::default()).unwrap();
        assert_eq!(polys.len(), 1);
        assert_eq!(polys[0].score(), 1.0);
        let both = box_formation(
            &map,
            &DbParams {
                box_score_thresh: 0.3,
                ..DbParams::default()
            },
        )
        .unwrap();
        assert_eq!(both.len(), 2);
        assert!(both[0].score() >= both[1].score());
    }

    #[test]
    fn tiny_components_are_dropped() {
        let map = rect_map(20, 20, &[(3, 3, 2, 2, 1.0)]);
        assert!(box_formation(&map, &DbParams::default()).unwrap().is_empty());
    }

    #[test]
    fn polygon_jsonl_round_trip_and_errors() {
        let polys = vec![
            TextPolygon::rect(1.0, 2.0, 3.5, 4.25, 0.75).unwrap(),
            TextPolygon::rect(10.0, 2.0, 30.0, 9.0, 1.0).unwrap(),
        ];
        let text = polygons_to_jsonl(&polys);
        assert!(text.lines().next().unwrap().contains("[1.000000, 2.000000]"));
        let back = polygons_from_jsonl(&text, Path::new("mem")).unwrap();
        assert_eq!(back, polys);
        let bad = format!("{text}{{\"points\": [[0,0]], \"score\": 1}}\n");
        match polygons_from_jsonl(&bad, Path::new("mem")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(polygons_from_jsonl("", Path::new("mem")).unwrap().is_empty());
    }
}
