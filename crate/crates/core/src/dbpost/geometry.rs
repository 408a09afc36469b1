//! Planar polygon helpers used by target construction and box formation.
//!
//! Coordinates are continuous map coordinates: pixel `(x, y)` covers the unit
//! square `[x, x+1] x [y, y+1]` and its center is `(x + 0.5, y + 0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::BinaryImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Shoelace area; positive for counterclockwise vertex order.
pub fn signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| points[i].cross(points[(i + 1) % n]))
        .sum::<f64>()
        / 2.0
}

pub fn perimeter(points: &[Point]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| points[(i + 1) % n].sub(points[i]).norm())
        .sum()
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = b.sub(a).cross(c.sub(a));
    let d2 = b.sub(a).cross(d.sub(a));
    let d3 = d.sub(c).cross(a.sub(c));
    let d4 = d.sub(c).cross(b.sub(c));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// No two non-adjacent edges properly cross.
pub fn is_simple(points: &[Point]) -> bool {
    let n = points.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(
                points[i],
                points[(i + 1) % n],
                points[j],
                points[(j + 1) % n],
            ) {
                return false;
            }
        }
    }
    true
}

/// Crossing-number point containment.
pub fn contains(points: &[Point], p: Point) -> bool {
    let n = points.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (points[i], points[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    let t = if len2 == 0.0 {
        0.0
    } else {
        (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0)
    };
    p.sub(a.add(ab.scale(t))).norm()
}

/// Euclidean distance from `p` to the polygon outline.
pub fn boundary_distance(points: &[Point], p: Point) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| point_segment_distance(p, points[i], points[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// A detected or ground-truth text region.
#[derive(Debug, Clone, PartialEq)]
pub struct TextPolygon {
    points: Vec<Point>,
    score: f64,
}

impl TextPolygon {
    /// Validates the outline and normalizes it to counterclockwise order.
    pub fn new(mut points: Vec<Point>, score: f64) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "polygon needs at least 3 vertices, got {}",
                points.len()
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidArgument(format!("score {score} outside [0, 1]")));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidArgument("non-finite vertex".into()));
        }
        let area = signed_area(&points);
        if area == 0.0 {
            return Err(Error::InvalidArgument("polygon has zero area".into()));
        }
        if area < 0.0 {
            points.reverse();
        }
        Ok(Self { points, score })
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64, score: f64) -> Result<Self> {
        Self::new(
            vec![
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
            ],
            score,
        )
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score.clamp(0.0, 1.0);
        self
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.points)
    }

    pub fn perimeter(&self) -> f64 {
        perimeter(&self.points)
    }

    pub fn contains(&self, p: Point) -> bool {
        contains(&self.points, p)
    }

    pub fn boundary_distance(&self, p: Point) -> f64 {
        boundary_distance(&self.points, p)
    }

    /// Marks every pixel whose center lies inside the polygon.
    pub fn rasterize(&self, width: usize, height: usize) -> BinaryImage {
        let mut out = BinaryImage::new(width, height);
        self.rasterize_into(&mut out);
        out
    }

    pub fn rasterize_into(&self, out: &mut BinaryImage) {
        let (w, h) = (out.width(), out.height());
        let (x0, y0, x1, y1) = self.pixel_span(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                if self.contains(Point::new(x as f64 + 0.5, y as f64 + 0.5)) {
                    out.set(x, y, true);
                }
            }
        }
    }

    /// Half-open pixel range covering the polygon, clipped to the grid.
    pub(crate) fn pixel_span(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let (mut lx, mut ly) = (f64::INFINITY, f64::INFINITY);
        let (mut hx, mut hy) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            lx = lx.min(p.x);
            ly = ly.min(p.y);
            hx = hx.max(p.x);
            hy = hy.max(p.y);
        }
        let clip = |v: f64, max: usize| (v.max(0.0) as usize).min(max);
        (
            clip(lx.floor(), width),
            clip(ly.floor(), height),
            clip(hx.ceil(), width),
            clip(hy.ceil(), height),
        )
    }
}

/// Offsets every edge along its outward normal by `delta` (negative shrinks).
///
/// Vertices are re-joined at the intersection of neighbouring offset edges;
/// miters longer than `2 |delta|` are truncated by a corner cap.
pub fn offset_polygon(poly: &TextPolygon, delta: f64) -> Result<TextPolygon> {
    if delta == 0.0 {
        return Ok(poly.clone());
    }
    let pts = poly.points();
    let n = pts.len();
    let dirs: Vec<Point> = (0..n)
        .map(|i| {
            let d = pts[(i + 1) % n].sub(pts[i]);
            let len = d.norm();
            if len == 0.0 {
                d
            } else {
                d.scale(1.0 / len)
            }
        })
        .collect();
    // outward normal of a counterclockwise polygon
    let normal = |d: Point| Point::new(d.y, -d.x);
    let cap = 2.0 * delta.abs();

    let mut out = Vec::with_capacity(n + 4);
    for i in 0..n {
        let prev = (i + n - 1) % n;
        let (d0, d1) = (dirs[prev], dirs[i]);
        let a0 = pts[prev].add(normal(d0).scale(delta));
        let a1 = pts[i].add(normal(d1).scale(delta));
        let denom = d0.cross(d1);
        let miter = if denom.abs() < 1e-12 {
            a1
        } else {
            let t = a1.sub(a0).cross(d1) / denom;
            a0.add(d0.scale(t))
        };
        let m = miter.sub(pts[i]);
        let mlen = m.norm();
        if mlen > cap && denom.abs() >= 1e-12 {
            let u = m.scale(1.0 / mlen);
            let cut = pts[i].add(u.scale(cap));
            // intersection of the cut line with each offset edge line
            let on_line = |a: Point, d: Point| {
                let t = cut.sub(a).dot(u) / d.dot(u);
                a.add(d.scale(t))
            };
            out.push(on_line(a0, d0));
            out.push(on_line(a1, d1));
        } else {
            out.push(miter);
        }
    }

    let degenerate = |why: &str| Error::DegenerateOffset(why.to_string());
    if signed_area(&out) <= 0.0 {
        return Err(degenerate("offset polygon has non-positive area"));
    }
    if delta < 0.0 {
        // every surviving edge must keep the direction of its source edge
        if out.len() == n {
            for i in 0..n {
                let e = out[(i + 1) % n].sub(out[i]);
                if e.dot(dirs[i]) <= 1e-9 {
                    return Err(degenerate("edge collapsed under inward offset"));
                }
            }
        }
        if !is_simple(&out) {
            return Err(degenerate("inward offset self-intersects"));
        }
    }
    TextPolygon::new(out, poly.score())
}

/// Andrew's monotone chain. Counterclockwise, collinear points dropped.
/// Strict left turn a -> b -> c, treating near-collinear triples (relative
/// to the edge lengths) as straight.
fn left_turn(a: Point, b: Point, c: Point) -> bool {
    let (u, v) = (b.sub(a), c.sub(a));
    u.cross(v) > 1e-9 * u.norm() * v.norm()
}

pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && !left_turn(lower[lower.len() - 2], lower[lower.len() - 1], p) {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && !left_turn(upper[upper.len() - 2], upper[upper.len() - 1], p) {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Minimum-area enclosing rectangle of a point set (rotating calipers over
/// the hull edges). Returned counterclockwise.
pub fn min_area_rect(points: &[Point]) -> Option<[Point; 4]> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return None;
    }
    let n = hull.len();
    let mut best: Option<(f64, [Point; 4])> = None;
    for i in 0..n {
        let e = hull[(i + 1) % n].sub(hull[i]);
        let len = e.norm();
        if len == 0.0 {
            continue;
        }
        let u = e.scale(1.0 / len);
        let v = Point::new(-u.y, u.x);
        let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let (pu, pv) = (p.dot(u), p.dot(v));
            umin = umin.min(pu);
            umax = umax.max(pu);
            vmin = vmin.min(pv);
            vmax = vmax.max(pv);
        }
        let area = (umax - umin) * (vmax - vmin);
        if best.as_ref().map_or(true, |(a, _)| area < *a - 1e-9) {
            let corner = |a: f64, b: f64| u.scale(a).add(v.scale(b));
            best = Some((
                area,
                [
                    corner(umin, vmin),
                    corner(umax, vmin),
                    corner(umax, vmax),
                    corner(umin, vmax),
                ],
            ));
        }
    }
    best.map(|(_, r)| r)
}

/// Moore-neighbour boundary trace of the component containing `start`.
///
/// `start` must be the top-most, then left-most, ink pixel of the component.
/// Returns boundary pixels in traversal order.
pub fn trace_contour(mask: &BinaryImage, start: (usize, usize)) -> Vec<(usize, usize)> {
    // clockwise as displayed (y down): W, NW, N, NE, E, SE, S, SW
    const RING: [(isize, isize); 8] = [
        (-1, 0),
        (-1, -1),
        (0, -1),
        (1, -1),
        (1, 0),
        (1, 1),
        (0, 1),
        (-1, 1),
    ];
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let ink = |x: isize, y: isize| x >= 0 && y >= 0 && x < w && y < h && mask.get(x as usize, y as usize);

    let s = (start.0 as isize, start.1 as isize);
    let mut contour = vec![start];
    let mut cur = s;
    // the west neighbour of the top-left pixel is background
    let mut back_dir = 0usize;
    let start_back = back_dir;
    let limit = 4 * mask.width() * mask.height() + 8;
    for _ in 0..limit {
        let mut found = None;
        for k in 1..=8 {
            let dir = (back_dir + k) % 8;
            let (dx, dy) = RING[dir];
            if ink(cur.0 + dx, cur.1 + dy) {
                found = Some((dir, (back_dir + k - 1) % 8));
                break;
            }
        }
        let Some((dir, prev_dir)) = found else {
            break; // isolated pixel
        };
        let (pdx, pdy) = RING[prev_dir];
        let back_pixel = (cur.0 + pdx, cur.1 + pdy);
        let next = (cur.0 + RING[dir].0, cur.1 + RING[dir].1);
        // direction from `next` back to the last background pixel examined
        let rel = (back_pixel.0 - next.0, back_pixel.1 - next.1);
        back_dir = RING.iter().position(|&d| d == rel).unwrap_or(0);
        if next == s && back_dir == start_back {
            break;
        }
        cur = next;
        contour.push((cur.0 as usize, cur.1 as usize));
    }
    contour
}

/// Intersection over union of two polygons rasterized on a unit grid
/// covering both.
pub fn raster_iou(a: &TextPolygon, b: &TextPolygon) -> f64 {
    let (mut lx, mut ly) = (f64::INFINITY, f64::INFINITY);
    let (mut hx, mut hy) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in a.points().iter().chain(b.points()) {
        lx = lx.min(p.x);
        ly = ly.min(p.y);
        hx = hx.max(p.x);
        hy = hy.max(p.y);
    }
    let (ox, oy) = (lx.floor(), ly.floor());
    let (w, h) = ((hx.ceil() - ox) as usize, (hy.ceil() - oy) as usize);
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let p = Point::new(ox + x as f64 + 0.5, oy + y as f64 + 0.5);
            let (ia, ib) = (a.contains(p), b.contains(p));
            inter += usize::from(ia && ib);
            union += usize::from(ia || ib);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, side: f64) -> TextPolygon {
        TextPolygon::rect(x0, y0, x0 + side, y0 + side, 1.0).unwrap()
    }

    fn regular_hexagon(r: f64) -> TextPolygon {
        let pts = (0..6)
            .map(|i| {
                let a = std::f64::consts::PI / 3.0 * i as f64;
                Point::new(20.0 + r * a.cos(), 20.0 + r * a.sin())
            })
            .collect();
        TextPolygon::new(pts, 1.0).unwrap()
    }

    #[test]
    fn orientation_is_normalized() {
        let cw = TextPolygon::new(
            vec![
                Point::new(0.0, 0.0),
                Point::new(0.0, 1.0),
                Point::new(1.0, 1.0),
                Point::new(1.0, 0.0),
            ],
            0.5,
        )
        .unwrap();
        assert!(cw.area() > 0.0);
        assert!(TextPolygon::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0)], 1.0).is_err());
    }

    #[test]
    fn offset_zero_is_identity() {
        let sq = square(3.0, 4.0, 10.0);
        assert_eq!(offset_polygon(&sq, 0.0).unwrap(), sq);
    }

    #[test]
    fn offset_square_outward_and_inward() {
        let sq = square(5.0, 5.0, 10.0);
        let grown = offset_polygon(&sq, 2.0).unwrap();
        assert!((grown.area() - 196.0).abs() < 1e-9);
        let expected = [(3.0, 3.0), (17.0, 3.0), (17.0, 17.0), (3.0, 17.0)];
        for (p, e) in grown.points().iter().zip(expected) {
            assert!((p.x - e.0).abs() < 1e-9 && (p.y - e.1).abs() < 1e-9);
        }
        let shrunk = offset_polygon(&sq, -2.1).unwrap();
        assert!((shrunk.area() - 5.8 * 5.8).abs() < 1e-9);
        assert!(matches!(
            offset_polygon(&sq, -5.0),
            Err(Error::DegenerateOffset(_))
        ));
        assert!(matches!(
            offset_polygon(&sq, -7.0),
            Err(Error::DegenerateOffset(_))
        ));
    }

    #[test]
    fn offset_hexagon_respects_steiner_bound() {
        let hex = regular_hexagon(6.0);
        let grown = offset_polygon(&hex, 1.0).unwrap();
        assert!(grown.area() >= hex.area() + hex.perimeter() * 1.0 - 1e-9);
        // miter joins of a regular hexagon: exact area A + P d + 6 tan(30deg) d^2
        let exact = hex.area() + hex.perimeter() + 6.0 * (std::f64::consts::PI / 6.0).tan();
        assert!((grown.area() - exact).abs() < 1e-9);
    }

    #[test]
    fn sharp_corner_is_capped() {
        let spike = TextPolygon::new(
            vec![Point::new(0.0, 0.0), Point::new(20.0, 1.0), Point::new(0.0, 2.0)],
            1.0,
        )
        .unwrap();
        let grown = offset_polygon(&spike, 1.0).unwrap();
        assert!(grown.points().len() > 3);
        // the bisector at the tip is +x, so the cap bounds how far the tip moves
        let max_x = grown.points().iter().map(|p| p.x).fold(f64::MIN, f64::max);
        assert!((max_x - 22.0).abs() < 1e-9, "max x {max_x}");
    }

    #[test]
    fn hull_and_min_rect_of_rotated_rectangle() {
        let angle: f64 = 0.3;
        let (s, c) = angle.sin_cos();
        let mut pts = Vec::new();
        for i in 0..=12 {
            for j in 0..=4 {
                let (u, v) = (i as f64, j as f64);
                pts.push(Point::new(c * u - s * v, s * u + c * v));
            }
        }
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        let rect = min_area_rect(&pts).unwrap();
        assert!((signed_area(&rect) - 48.0).abs() < 1e-9);
    }

    #[test]
    fn contour_of_block_and_ring() {
        let block = BinaryImage::from_fn(6, 5, |x, y| (1..4).contains(&x) && (1..4).contains(&y));
        let c = trace_contour(&block, (1, 1));
        assert_eq!(c.len(), 8);
        assert!(!c.contains(&(2, 2)));
        let single = BinaryImage::from_fn(3, 3, |x, y| x == 1 && y == 1);
        assert_eq!(trace_contour(&single, (1, 1)), vec![(1, 1)]);
        let line = BinaryImage::from_fn(5, 1, |_, _| true);
        let c = trace_contour(&line, (0, 0));
        assert!(c.contains(&(4, 0)));
    }

    #[test]
    fn raster_iou_of_nested_rects() {
        let a = TextPolygon::rect(0.0, 0.0, 10.0, 10.0, 1.0).unwrap();
        let b = TextPolygon::rect(0.0, 0.0, 10.0, 9.0, 1.0).unwrap();
        assert!((raster_iou(&a, &b) - 0.9).abs() < 1e-12);
        assert_eq!(raster_iou(&a, &a), 1.0);
        let far = TextPolygon::rect(50.0, 50.0, 52.0, 52.0, 1.0).unwrap();
        assert_eq!(raster_iou(&a, &far), 0.0);
    }

    #[test]
    fn rasterize_counts_pixel_centers() {
        let r = TextPolygon::rect(2.0, 1.0, 6.0, 4.0, 1.0).unwrap();
        assert_eq!(r.rasterize(10, 10).count_ink(), 12);
        // clipped at the grid edge
        let big = TextPolygon::rect(-5.0, -5.0, 3.0, 3.0, 1.0).unwrap();
        assert_eq!(big.rasterize(10, 10).count_ink(), 9);
    }
}
