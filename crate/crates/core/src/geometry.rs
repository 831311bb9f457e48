//! Room polygon machinery.
//!
//! Rooms are approximated by minimum rotated rectangles, optionally cut by the
//! structural walls (keeping the largest piece) and painted into a label map
//! largest-first so that smaller rooms win where rooms overlap.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::ops::{Add, Mul, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LabelVocabulary;
use crate::raster::{Grid, NormFrame};
use crate::skeleton::{Segment, WallSet};

/// Default half-width of the corridor removed around each wall, normalized units.
pub const DEFAULT_WALL_EPS: f64 = 0.004;
/// Resolution (longest side, pixels) of the local raster used to cut rooms.
pub const CUT_RESOLUTION: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn rotate(self, theta: f64) -> Point {
        let (s, c) = theta.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b - a).cross(c - a)
}

/// Closed polygon stored counter-clockwise (positive shoelace area).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Polygon {
    ring: Vec<Point>,
}

impl TryFrom<Vec<Point>> for Polygon {
    type Error = Error;
    fn try_from(ring: Vec<Point>) -> Result<Self> {
        Polygon::new(ring)
    }
}

impl From<Polygon> for Vec<Point> {
    fn from(p: Polygon) -> Self {
        p.ring
    }
}

impl Polygon {
    /// Drops repeated consecutive points and reorders the ring counter-clockwise.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Numeric("polygon vertex is not finite".into()));
        }
        let mut ring: Vec<Point> = Vec::with_capacity(points.len());
        for p in points {
            if ring.last() != Some(&p) {
                ring.push(p);
            }
        }
        while ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        if ring.len() < 3 {
            return Err(Error::Degenerate(format!(
                "polygon needs at least 3 distinct vertices, got {}",
                ring.len()
            )));
        }
        let area = shoelace(&ring);
        if area == 0.0 {
            return Err(Error::Degenerate("polygon has zero area".into()));
        }
        if area < 0.0 {
            ring.reverse();
        }
        Ok(Self { ring })
    }

    pub fn ring(&self) -> &[Point] {
        &self.ring
    }

    pub fn area(&self) -> f64 {
        shoelace(&self.ring)
    }

    pub fn centroid(&self) -> Point {
        let a = self.area();
        let mut c = Point::default();
        for (p, q) in self.edges() {
            let k = p.cross(q);
            c = c + (p + q) * k;
        }
        c * (1.0 / (6.0 * a))
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.ring.len();
        (0..n).map(move |i| (self.ring[i], self.ring[(i + 1) % n]))
    }

    /// Axis-aligned bounds as (min, max).
    pub fn bounds(&self) -> (Point, Point) {
        self.ring.iter().fold(
            (
                Point::new(f64::INFINITY, f64::INFINITY),
                Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
            ),
            |(lo, hi), p| {
                (
                    Point::new(lo.x.min(p.x), lo.y.min(p.y)),
                    Point::new(hi.x.max(p.x), hi.y.max(p.y)),
                )
            },
        )
    }

    /// Even-odd point containment.
    pub fn contains(&self, p: Point) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn is_convex(&self) -> bool {
        let n = self.ring.len();
        (0..n).all(|i| orient(self.ring[i], self.ring[(i + 1) % n], self.ring[(i + 2) % n]) >= 0.0)
    }

    /// No two non-adjacent edges touch.
    pub fn is_simple(&self) -> bool {
        let edges: Vec<(Point, Point)> = self.edges().collect();
        let n = edges.len();
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_touch(edges[i].0, edges[i].1, edges[j].0, edges[j].1) {
                    return false;
                }
            }
        }
        true
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Result<Polygon> {
        Polygon::new(self.ring.iter().copied().map(f).collect())
    }
}

fn shoelace(ring: &[Point]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| ring[i].cross(ring[(i + 1) % n]))
        .sum::<f64>()
        / 2.0
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_touch(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    Segment::new(a.into(), b.into()).distance_to(p.into())
}

fn segment_distance(a: Point, b: Point, c: Point, d: Point) -> f64 {
    if segments_touch(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

/// Exactly four corners, counter-clockwise, forming a rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedRect {
    pub corners: [Point; 4],
}

impl RotatedRect {
    pub fn area(&self) -> f64 {
        shoelace(&self.corners)
    }

    pub fn width(&self) -> f64 {
        (self.corners[1] - self.corners[0]).norm()
    }

    pub fn height(&self) -> f64 {
        (self.corners[3] - self.corners[0]).norm()
    }

    /// Checks side lengths and right angles to 1e-9 relative.
    pub fn validate(&self) -> Result<()> {
        let c = &self.corners;
        let side = |i: usize| c[(i + 1) % 4] - c[i];
        for i in 0..2 {
            let (a, b) = (side(i).norm(), side(i + 2).norm());
            if (a - b).abs() > 1e-9 * a.max(b) {
                return Err(Error::Validation(
                    "rectangle has unequal opposite sides".into(),
                ));
            }
        }
        for i in 0..4 {
            let (a, b) = (side(i), side((i + 1) % 4));
            if a.dot(b).abs() > 1e-9 * a.norm() * b.norm() {
                return Err(Error::Validation(
                    "rectangle corner is not a right angle".into(),
                ));
            }
        }
        if self.area() <= 0.0 {
            return Err(Error::Validation(
                "rectangle is not counter-clockwise".into(),
            ));
        }
        Ok(())
    }

    pub fn to_polygon(&self) -> Polygon {
        Polygon::new(self.corners.to_vec()).expect("rotated rect is a valid polygon")
    }
}

/// Monotone-chain convex hull, counter-clockwise, collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Result<Polygon> {
    let mut pts: Vec<Point> = points.to_vec();
    if pts.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::Numeric("hull input is not finite".into()));
    }
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::Degenerate(format!(
            "convex hull needs 3 distinct points, got {}",
            pts.len()
        )));
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        return Err(Error::Degenerate("all points are collinear".into()));
    }
    Polygon::new(hull)
}

/// Minimum-area enclosing rectangle of a polygon.
pub fn min_rotated_rect(poly: &Polygon) -> Result<RotatedRect> {
    min_rotated_rect_of_points(poly.ring())
}

/// Rotating calipers over the convex hull.
///
/// For every hull edge direction the three other supporting lines (far side
/// along the edge, far side along the normal, near side along the edge) are
/// advanced monotonically, so the whole sweep is linear in the hull size.
pub fn min_rotated_rect_of_points(points: &[Point]) -> Result<RotatedRect> {
    let hull = convex_hull(points)?;
    let h = hull.ring();
    let n = h.len();
    let next = |i: usize| (i + 1) % n;

    let frame = |i: usize| {
        let u = h[next(i)] - h[i];
        let u = u * (1.0 / u.norm());
        (u, Point::new(-u.y, u.x))
    };

    let (u0, n0) = frame(0);
    let argmax = |f: &dyn Fn(Point) -> f64| {
        (0..n)
            .max_by(|&a, &b| f(h[a]).total_cmp(&f(h[b])))
            .expect("hull is not empty")
    };
    let mut right = argmax(&|p| p.dot(u0));
    let mut top = argmax(&|p| p.dot(n0));
    let mut left = argmax(&|p| -p.dot(u0));

    let mut best: Option<(f64, [Point; 4])> = None;
    for i in 0..n {
        let (u, nrm) = frame(i);
        while h[next(right)].dot(u) > h[right].dot(u) {
            right = next(right);
        }
        while h[next(top)].dot(nrm) > h[top].dot(nrm) {
            top = next(top);
        }
        while h[next(left)].dot(u) < h[left].dot(u) {
            left = next(left);
        }
        let (s_lo, s_hi) = (h[left].dot(u), h[right].dot(u));
        let (t_lo, t_hi) = (h[i].dot(nrm), h[top].dot(nrm));
        let area = (s_hi - s_lo) * (t_hi - t_lo);
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            let at = |s: f64, t: f64| u * s + nrm * t;
            best = Some((
                area,
                [
                    at(s_lo, t_lo),
                    at(s_hi, t_lo),
                    at(s_hi, t_hi),
                    at(s_lo, t_hi),
                ],
            ));
        }
    }
    let (_, corners) = best.expect("hull has edges");
    Ok(RotatedRect { corners })
}

/// Raster covering a polygon's bounding box with square pixels.
struct LocalRaster {
    origin: Point,
    pixel: f64,
    cols: usize,
    rows: usize,
}

impl LocalRaster {
    fn covering(poly: &Polygon, resolution: usize) -> Self {
        let (lo, hi) = poly.bounds();
        let pixel = (hi.x - lo.x).max(hi.y - lo.y) / resolution as f64;
        Self {
            origin: lo,
            pixel,
            cols: (((hi.x - lo.x) / pixel).ceil() as usize).clamp(1, resolution),
            rows: (((hi.y - lo.y) / pixel).ceil() as usize).clamp(1, resolution),
        }
    }

    fn center(&self, c: usize, r: usize) -> Point {
        self.origin + Point::new(c as f64 + 0.5, r as f64 + 0.5) * self.pixel
    }

    fn lattice(&self, i: i64, j: i64) -> Point {
        self.origin + Point::new(i as f64, j as f64) * self.pixel
    }
}

/// Calls `paint(col, row)` for every pixel whose centre lies inside `ring`
/// (even-odd rule). `ring` is in continuous pixel coordinates.
pub fn scanline_fill(
    ring: &[Point],
    cols: usize,
    rows: usize,
    mut paint: impl FnMut(usize, usize),
) {
    let n = ring.len();
    let mut xs = Vec::new();
    for r in 0..rows {
        let y = r as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            if (a.y > y) != (b.y > y) {
                xs.push(a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // centres c + 0.5 in [x_in, x_out)
            let first = (pair[0] - 0.5).ceil().max(0.0);
            let last = (pair[1] - 0.5).ceil().min(cols as f64);
            let (mut c, end) = (first as usize, last.max(first) as usize);
            while c < end {
                paint(c, r);
                c += 1;
            }
        }
    }
}

/// Integer pixels on the line between two pixel-space points (Bresenham).
pub fn line_pixels(p0: Point, p1: Point) -> Vec<(i64, i64)> {
    let (mut x0, mut y0) = (p0.x.floor() as i64, p0.y.floor() as i64);
    let (x1, y1) = (p1.x.floor() as i64, p1.y.floor() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push((x0, y0));
        if x0 == x1 && y0 == y1 {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Outer boundary of the 4-connected pixel region containing `start`, which
/// must be the region's first pixel in raster order. Vertices are lattice
/// points; only direction changes are emitted.
fn trace_outline(inside: &dyn Fn(i64, i64) -> bool, start: (i64, i64)) -> Vec<(i64, i64)> {
    let origin = start;
    let (mut vx, mut vy) = origin;
    let (mut dx, mut dy) = (1i64, 0i64);
    let mut out = vec![origin];
    loop {
        // right-hand normal in y-down coordinates
        let (rx, ry) = (-dy, dx);
        let ahead_right = inside(
            (2 * vx + dx + rx).div_euclid(2),
            (2 * vy + dy + ry).div_euclid(2),
        );
        let ahead_left = inside(
            (2 * vx + dx - rx).div_euclid(2),
            (2 * vy + dy - ry).div_euclid(2),
        );
        let (ndx, ndy) = if !ahead_right {
            (rx, ry)
        } else if ahead_left {
            (dy, -dx)
        } else {
            (dx, dy)
        };
        if (ndx, ndy) != (dx, dy) && (vx, vy) != origin {
            out.push((vx, vy));
        }
        dx = ndx;
        dy = ndy;
        vx += dx;
        vy += dy;
        if (vx, vy) == origin {
            return out;
        }
    }
}

/// Sutherland-Hodgman clip of `subject` against a convex `clip` polygon.
fn clip_convex(subject: &[Point], clip: &Polygon) -> Vec<Point> {
    let mut out = subject.to_vec();
    for (a, b) in clip.edges() {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let m = input.len();
        for k in 0..m {
            let (p, q) = (input[k], input[(k + 1) % m]);
            let (sp, sq) = (orient(a, b, p), orient(a, b, q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push(p + (q - p) * t);
            }
        }
    }
    out
}

/// One connected piece of a polygon left after removing wall corridors.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub polygon: Polygon,
    /// Raster area: pixel count times pixel area.
    pub area: f64,
    /// Mean of the piece's pixel centres.
    pub centroid: Point,
}

fn wall_touches(poly: &Polygon, seg: &Segment, reach: f64) -> bool {
    let (a, b) = (Point::from(seg.p0), Point::from(seg.p1));
    poly.contains(a)
        || poly.contains(b)
        || poly
            .edges()
            .any(|(p, q)| segment_distance(a, b, p, q) <= reach)
}

/// Splits `poly` along `wall_eps`-wide corridors around the walls.
///
/// Walls that do not come within `wall_eps` of the polygon leave it whole.
/// Otherwise the polygon is rasterized on a local grid (512 pixels along its
/// longer side), corridor pixels are removed (a corridor is always at least
/// one pixel wide so it separates 4-connected regions) and each 4-connected
/// remainder becomes one piece. A piece's polygon is the outer boundary of its
/// pixels, clipped to `poly` when `poly` is convex; holes are not represented.
/// Pieces are returned in raster order of their first pixel.
pub fn cut_pieces(poly: &Polygon, walls: &WallSet, wall_eps: f64) -> Vec<Piece> {
    let relevant: Vec<&Segment> = walls
        .segments
        .iter()
        .filter(|s| wall_touches(poly, s, wall_eps))
        .collect();
    if relevant.is_empty() {
        return vec![Piece {
            polygon: poly.clone(),
            area: poly.area(),
            centroid: poly.centroid(),
        }];
    }

    let grid = LocalRaster::covering(poly, CUT_RESOLUTION);
    let (cols, rows) = (grid.cols, grid.rows);
    let mut free = vec![false; cols * rows];
    let local_ring: Vec<Point> = poly
        .ring()
        .iter()
        .map(|&p| (p - grid.origin) * (1.0 / grid.pixel))
        .collect();
    scanline_fill(&local_ring, cols, rows, |c, r| free[r * cols + c] = true);

    let reach = wall_eps.max(grid.pixel * std::f64::consts::FRAC_1_SQRT_2);
    for seg in &relevant {
        let (a, b) = (Point::from(seg.p0), Point::from(seg.p1));
        let to_col = |x: f64| ((x - grid.origin.x) / grid.pixel).floor();
        let to_row = |y: f64| ((y - grid.origin.y) / grid.pixel).floor();
        let c0 = to_col(a.x.min(b.x) - reach).max(0.0) as usize;
        let c1 = (to_col(a.x.max(b.x) + reach).max(-1.0) + 1.0).min(cols as f64) as usize;
        let r0 = to_row(a.y.min(b.y) - reach).max(0.0) as usize;
        let r1 = (to_row(a.y.max(b.y) + reach).max(-1.0) + 1.0).min(rows as f64) as usize;
        for r in r0..r1 {
            for c in c0..c1 {
                if free[r * cols + c] && point_segment_distance(grid.center(c, r), a, b) <= reach {
                    free[r * cols + c] = false;
                }
            }
        }
    }

    let mut label = vec![0usize; cols * rows];
    let mut next = 0;
    let mut pieces = Vec::new();
    for start in 0..cols * rows {
        if !free[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        let mut stack = vec![start];
        let (mut count, mut sx, mut sy) = (0usize, 0.0, 0.0);
        while let Some(i) = stack.pop() {
            let (c, r) = (i % cols, i / cols);
            count += 1;
            let ctr = grid.center(c, r);
            sx += ctr.x;
            sy += ctr.y;
            let mut visit = |j: usize| {
                if free[j] && label[j] == 0 {
                    label[j] = next;
                    stack.push(j);
                }
            };
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < cols {
                visit(i + 1);
            }
            if r > 0 {
                visit(i - cols);
            }
            if r + 1 < rows {
                visit(i + cols);
            }
        }
        let id = next;
        let inside = |c: i64, r: i64| {
            c >= 0
                && r >= 0
                && (c as usize) < cols
                && (r as usize) < rows
                && label[r as usize * cols + c as usize] == id
        };
        let outline: Vec<Point> =
            trace_outline(&inside, ((start % cols) as i64, (start / cols) as i64))
                .into_iter()
                .map(|(i, j)| grid.lattice(i, j))
                .collect();
        let ring = if poly.is_convex() {
            clip_convex(&outline, poly)
        } else {
            outline
        };
        if let Ok(polygon) = Polygon::new(ring) {
            pieces.push(Piece {
                polygon,
                area: count as f64 * grid.pixel * grid.pixel,
                centroid: Point::new(sx / count as f64, sy / count as f64),
            });
        }
    }
    pieces
}

/// The pieces of `poly` after cutting along the walls.
pub fn cut_by_walls(poly: &Polygon, walls: &WallSet, wall_eps: f64) -> Vec<Polygon> {
    cut_pieces(poly, walls, wall_eps)
        .into_iter()
        .map(|p| p.polygon)
        .collect()
}

/// Keeps the largest wall-cut piece of a rectangle.
///
/// Equal areas resolve to the piece with the smaller centroid (x, then y).
/// If the corridors swallow the whole rectangle it is returned unchanged.
pub fn refine_by_structure(rect: &RotatedRect, walls: &WallSet, wall_eps: f64) -> Polygon {
    let poly = rect.to_polygon();
    cut_pieces(&poly, walls, wall_eps)
        .into_iter()
        .max_by(|a, b| {
            a.area
                .total_cmp(&b.area)
                .then_with(|| b.centroid.x.total_cmp(&a.centroid.x))
                .then_with(|| b.centroid.y.total_cmp(&a.centroid.y))
        })
        .map_or(poly, |p| p.polygon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub id: u32,
    pub room_type: String,
    pub polygon: Polygon,
}

/// Rooms plus the walls that conditioned them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorPlan {
    pub rooms: Vec<Room>,
    pub walls: WallSet,
}

impl FloorPlan {
    pub fn validate(&self, vocab: &LabelVocabulary) -> Result<()> {
        let mut ids = BTreeSet::new();
        for (i, room) in self.rooms.iter().enumerate() {
            if !ids.insert(room.id) {
                return Err(Error::Validation(format!(
                    "room {i}: duplicate room id {}",
                    room.id
                )));
            }
            if vocab.room_type_index(&room.room_type).is_none() {
                return Err(Error::Validation(format!(
                    "room {i}: unknown room type {:?}",
                    room.room_type
                )));
            }
        }
        self.walls.validate()
    }

    pub fn load(path: impl AsRef<Path>, vocab: &LabelVocabulary) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: FloorPlan = serde_json::from_str(&text)?;
        plan.validate(vocab)?;
        Ok(plan)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Replaces every room by its minimum rotated rectangle, optionally
    /// keeping only the largest wall-cut piece.
    pub fn approximate(&self, refine: Option<f64>) -> Result<FloorPlan> {
        let rooms = self
            .rooms
            .iter()
            .map(|room| {
                let rect = min_rotated_rect(&room.polygon)?;
                let polygon = match refine {
                    Some(eps) => refine_by_structure(&rect, &self.walls, eps),
                    None => rect.to_polygon(),
                };
                Ok(Room {
                    id: room.id,
                    room_type: room.room_type.clone(),
                    polygon,
                })
            })
            .collect::<Result<_>>()?;
        Ok(FloorPlan {
            rooms,
            walls: self.walls.clone(),
        })
    }
}

/// Paints a plan into a label map.
///
/// Background first, then rooms by descending area (ties by room id) so
/// smaller rooms overwrite larger ones, then one-pixel wall lines.
pub fn rasterize_floorplan(
    plan: &FloorPlan,
    vocab: &LabelVocabulary,
    width: usize,
    height: usize,
) -> Result<Grid> {
    let palette: BTreeMap<u8, String> = vocab
        .grid_labels
        .iter()
        .map(|(name, &v)| (v, name.clone()))
        .collect();
    let mut grid = Grid::filled(width, height, vocab.background_label(), palette)?;
    let frame = NormFrame::new(width, height);

    let mut order: Vec<&Room> = plan.rooms.iter().collect();
    order.sort_by(|a, b| {
        b.polygon
            .area()
            .partial_cmp(&a.polygon.area())
            .unwrap_or(Ordering::Equal)
            .then(a.id.cmp(&b.id))
    });
    for room in order {
        let label = vocab.room_label(&room.room_type).ok_or_else(|| {
            Error::Validation(format!(
                "room {}: no grid label for {:?}",
                room.id, room.room_type
            ))
        })?;
        let ring: Vec<Point> = room
            .polygon
            .ring()
            .iter()
            .map(|p| {
                let (x, y) = frame.to_pixel(p.x, p.y);
                Point::new(x, y)
            })
            .collect();
        scanline_fill(&ring, width, height, |c, r| grid.set(c, r, label));
    }

    let structure = vocab.structure_label();
    for seg in &plan.walls.segments {
        let (x0, y0) = frame.to_pixel(seg.p0[0], seg.p0[1]);
        let (x1, y1) = frame.to_pixel(seg.p1[0], seg.p1[1]);
        for (c, r) in line_pixels(Point::new(x0, y0), Point::new(x1, y1)) {
            if c >= 0 && r >= 0 && (c as usize) < width && (r as usize) < height {
                grid.set(c as usize, r as usize, structure);
            }
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Polygon {
        Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ])
        .unwrap()
    }

    fn wall(p0: [f64; 2], p1: [f64; 2]) -> WallSet {
        WallSet {
            source_size: [512, 512],
            segments: vec![Segment::new(p0, p1)],
        }
    }

    #[test]
    fn polygon_normalizes_orientation() {
        let cw = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 0.0),
        ])
        .unwrap();
        assert_eq!(cw.ring().len(), 4);
        assert_eq!(cw.area(), 1.0);
        assert!(Polygon::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0)]).is_err());
        assert!(Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(2.0, 2.0)
        ])
        .is_err());
    }

    #[test]
    fn hull_drops_interior_points() {
        let mut pts = square().ring().to_vec();
        pts.push(Point::new(0.5, 0.5));
        let hull = convex_hull(&pts).unwrap();
        assert_eq!(hull.ring().len(), 4);
        assert_eq!(hull.area(), 1.0);
        let collinear = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(2.0, 2.0),
        ];
        assert!(matches!(convex_hull(&collinear), Err(Error::Degenerate(_))));
        assert!(convex_hull(&[Point::new(0.0, 0.0); 5]).is_err());
    }

    #[test]
    fn mrr_of_rectangle_is_itself() {
        let rect = Polygon::new(vec![
            Point::new(-1.0, -0.5),
            Point::new(2.0, -0.5),
            Point::new(2.0, 0.25),
            Point::new(-1.0, 0.25),
        ])
        .unwrap();
        let mrr = min_rotated_rect(&rect).unwrap();
        mrr.validate().unwrap();
        assert!((mrr.area() - rect.area()).abs() < 1e-12);
        for c in mrr.corners {
            assert!(rect.ring().iter().any(|p| (*p - c).norm() < 1e-12));
        }
    }

    #[test]
    fn mrr_of_diamond_is_the_diamond() {
        let diamond = Polygon::new(vec![
            Point::new(0.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(2.0, 1.0),
            Point::new(1.0, 2.0),
        ])
        .unwrap();
        let mrr = min_rotated_rect(&diamond).unwrap();
        assert!((mrr.area() - 2.0).abs() < 1e-12);
        mrr.validate().unwrap();
    }

    #[test]
    fn trace_outline_of_l_shape() {
        let cells = [(0, 0), (0, 1), (1, 1)];
        let inside = |c: i64, r: i64| cells.contains(&(c, r));
        let ring = trace_outline(&inside, (0, 0));
        let pts: Vec<Point> = ring
            .iter()
            .map(|&(i, j)| Point::new(i as f64, j as f64))
            .collect();
        let poly = Polygon::new(pts).unwrap();
        assert_eq!(poly.ring().len(), 6);
        assert_eq!(poly.area(), 3.0);
    }

    #[test]
    fn cut_without_walls_is_identity() {
        let sq = square();
        assert_eq!(
            cut_by_walls(&sq, &WallSet::empty(8, 8), DEFAULT_WALL_EPS),
            vec![sq.clone()]
        );
        let far = wall([5.0, 5.0], [6.0, 5.0]);
        assert_eq!(cut_by_walls(&sq, &far, DEFAULT_WALL_EPS), vec![sq]);
    }

    #[test]
    fn bisected_square_has_two_pieces() {
        let eps = DEFAULT_WALL_EPS;
        let pieces = cut_pieces(&square(), &wall([0.6, -0.5], [0.6, 1.5]), eps);
        assert_eq!(pieces.len(), 2);
        let mut areas: Vec<f64> = pieces.iter().map(|p| p.area).collect();
        areas.sort_by(f64::total_cmp);
        assert!((areas[0] - (0.4 - eps)).abs() < 0.01, "{areas:?}");
        assert!((areas[1] - (0.6 - eps)).abs() < 0.01, "{areas:?}");
        for p in &pieces {
            assert!((p.polygon.area() - p.area).abs() < 1e-3);
        }
    }

    #[test]
    fn refine_keeps_largest_piece() {
        let rect = min_rotated_rect(&square()).unwrap();
        let poly = refine_by_structure(&rect, &wall([0.6, -0.5], [0.6, 1.5]), DEFAULT_WALL_EPS);
        assert!(poly.area() > 0.58 && poly.area() < 0.6);
        assert!(poly.centroid().x < 0.6);
        let untouched = refine_by_structure(&rect, &WallSet::empty(4, 4), DEFAULT_WALL_EPS);
        assert_eq!(untouched.area(), 1.0);
    }

    #[test]
    fn refine_tie_prefers_smaller_centroid() {
        let rect = min_rotated_rect(&square()).unwrap();
        let poly = refine_by_structure(&rect, &wall([0.5, -0.5], [0.5, 1.5]), DEFAULT_WALL_EPS);
        assert!(poly.centroid().x < 0.5);
    }

    #[test]
    fn line_pixels_endpoints() {
        let px = line_pixels(Point::new(0.5, 0.5), Point::new(4.5, 2.5));
        assert_eq!(px.first(), Some(&(0, 0)));
        assert_eq!(px.last(), Some(&(4, 2)));
        assert_eq!(px.len(), 5);
    }

    #[test]
    fn scanline_counts_centres() {
        let ring = [
            Point::new(1.0, 1.0),
            Point::new(4.0, 1.0),
            Point::new(4.0, 3.0),
            Point::new(1.0, 3.0),
        ];
        let mut hits = Vec::new();
        scanline_fill(&ring, 10, 10, |c, r| hits.push((c, r)));
        assert_eq!(hits.len(), 6);
        assert!(hits.contains(&(1, 1)) && hits.contains(&(3, 2)));
    }
}
