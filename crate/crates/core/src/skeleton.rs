//! Skeleton graph extraction and straight wall segments.
//!
//! A thinned mask is traced into a graph whose nodes are endpoints and
//! junction clusters and whose edges carry the pixel path between them. Each
//! edge path is then split into straight pieces by recursive max-deviation
//! subdivision, short pieces are dropped and the remainder is mapped into the
//! normalized frame shared with room geometry.

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{thin, BinaryMask, NormFrame};

pub type Pixel = (usize, usize);

/// Default maximum deviation of a pixel path from its chord, in pixels.
pub const DEFAULT_SPLIT_TOLERANCE: f64 = 1.5;
/// Default minimum segment length kept after splitting, in pixels.
pub const DEFAULT_MIN_LENGTH: f64 = 4.0;

const NEIGHBOURS: [(i64, i64); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonNode {
    /// Every pixel merged into this node (one for endpoints, a cluster for junctions).
    pub pixels: Vec<Pixel>,
    /// Representative pixel; edge paths start and end here.
    pub center: Pixel,
}

impl SkeletonNode {
    pub fn is_junction(&self, graph: &SkeletonGraph, index: usize) -> bool {
        graph.degree(index) >= 3 || self.pixels.len() > 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonEdge {
    pub a: usize,
    pub b: usize,
    /// 8-connected pixel path from `nodes[a].center` to `nodes[b].center`.
    pub path: Vec<Pixel>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkeletonGraph {
    pub nodes: Vec<SkeletonNode>,
    pub edges: Vec<SkeletonEdge>,
}

impl SkeletonGraph {
    /// Number of edge ends incident to a node; self-loops count twice.
    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .map(|e| usize::from(e.a == node) + usize::from(e.b == node))
            .sum()
    }
}

fn neighbours(mask: &BinaryMask, (x, y): Pixel) -> impl Iterator<Item = Pixel> + '_ {
    NEIGHBOURS.iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        mask.get_signed(nx, ny)
            .then_some((nx as usize, ny as usize))
    })
}

struct Tracer<'a> {
    mask: &'a BinaryMask,
    node_of: Vec<Option<usize>>,
    visited: Vec<bool>,
    nodes: Vec<SkeletonNode>,
    // BFS parent links inside each node cluster, rooted at the centre
    parents: Vec<Vec<(Pixel, Option<Pixel>)>>,
    edges: Vec<SkeletonEdge>,
}

impl<'a> Tracer<'a> {
    fn idx(&self, (x, y): Pixel) -> usize {
        y * self.mask.width() + x
    }

    fn add_node(&mut self, pixels: Vec<Pixel>) -> usize {
        let n = pixels.len() as f64;
        let cx = pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n;
        let cy = pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n;
        let center = *pixels
            .iter()
            .min_by(|a, b| {
                let da = (a.0 as f64 - cx).powi(2) + (a.1 as f64 - cy).powi(2);
                let db = (b.0 as f64 - cx).powi(2) + (b.1 as f64 - cy).powi(2);
                da.total_cmp(&db)
            })
            .expect("node has pixels");
        let id = self.nodes.len();
        for &p in &pixels {
            let i = self.idx(p);
            self.node_of[i] = Some(id);
        }
        // BFS tree within the cluster
        let members: BTreeSet<Pixel> = pixels.iter().copied().collect();
        let mut parent = vec![(center, None)];
        let mut seen = BTreeSet::from([center]);
        let mut queue = VecDeque::from([center]);
        while let Some(p) = queue.pop_front() {
            for q in neighbours(self.mask, p) {
                if members.contains(&q) && seen.insert(q) {
                    parent.push((q, Some(p)));
                    queue.push_back(q);
                }
            }
        }
        self.parents.push(parent);
        self.nodes.push(SkeletonNode { pixels, center });
        id
    }

    /// Pixels from the node centre to `target` (both inclusive).
    fn route_from_center(&self, node: usize, target: Pixel) -> Vec<Pixel> {
        let parent = &self.parents[node];
        let lookup = |p: Pixel| {
            parent
                .iter()
                .find(|(q, _)| *q == p)
                .and_then(|(_, par)| *par)
        };
        let mut route = vec![target];
        let mut cur = target;
        while let Some(prev) = lookup(cur) {
            route.push(prev);
            cur = prev;
        }
        route.reverse();
        route
    }

    /// Walks from node pixel `start` through its non-node neighbour `first`.
    fn trace(&mut self, node: usize, start: Pixel, first: Pixel) {
        let mut path = self.route_from_center(node, start);
        let mut prev = start;
        let mut cur = first;
        loop {
            path.push(cur);
            let i = self.idx(cur);
            if let Some(end) = self.node_of[i] {
                let mut tail = self.route_from_center(end, cur);
                tail.reverse();
                path.extend(tail.into_iter().skip(1));
                self.edges.push(SkeletonEdge {
                    a: node,
                    b: end,
                    path,
                });
                return;
            }
            self.visited[i] = true;
            let next = neighbours(self.mask, cur).find(|&q| {
                q != prev && (self.node_of[self.idx(q)].is_some() || !self.visited[self.idx(q)])
            });
            match next {
                Some(q) => {
                    prev = cur;
                    cur = q;
                }
                // dead end on a non-thinned blob: close the edge where it stops
                None => {
                    let end = self.add_node(vec![cur]);
                    self.edges.push(SkeletonEdge {
                        a: node,
                        b: end,
                        path,
                    });
                    return;
                }
            }
        }
    }

    fn trace_from_node(&mut self, node: usize) {
        let pixels = self.nodes[node].pixels.clone();
        for c in pixels {
            let candidates: Vec<Pixel> = neighbours(self.mask, c).collect();
            for p in candidates {
                let i = self.idx(p);
                if self.node_of[i].is_none() && !self.visited[i] {
                    self.trace(node, c, p);
                }
            }
        }
    }
}

/// Traces a thinned mask into a skeleton graph.
///
/// Pixels with exactly two 8-neighbours are path pixels; every other
/// foreground pixel is a node pixel. Adjacent pixels with three or more
/// neighbours merge into a single junction node. Endpoints that touch another
/// node directly get a two-node edge, and closed loops without any node get a
/// node at their first pixel in raster order and a self-loop edge.
pub fn extract_graph(mask: &BinaryMask) -> SkeletonGraph {
    let (w, h) = (mask.width(), mask.height());
    let degree = |p: Pixel| neighbours(mask, p).count();
    let mut tracer = Tracer {
        mask,
        node_of: vec![None; w * h],
        visited: vec![false; w * h],
        nodes: Vec::new(),
        parents: Vec::new(),
        edges: Vec::new(),
    };

    // node discovery in raster order
    for p in mask.foreground() {
        if tracer.node_of[tracer.idx(p)].is_some() {
            continue;
        }
        let d = degree(p);
        if d == 2 {
            continue;
        }
        if d < 2 {
            tracer.add_node(vec![p]);
            continue;
        }
        let mut cluster = vec![p];
        let mut seen = BTreeSet::from([p]);
        let mut stack = vec![p];
        while let Some(q) = stack.pop() {
            for r in neighbours(mask, q) {
                if degree(r) >= 3 && seen.insert(r) {
                    cluster.push(r);
                    stack.push(r);
                }
            }
        }
        cluster.sort_by_key(|&(x, y)| (y, x));
        tracer.add_node(cluster);
    }

    let node_count = tracer.nodes.len();
    for node in 0..node_count {
        tracer.trace_from_node(node);
    }

    // nodes touching each other without any path pixel in between
    let mut direct = BTreeSet::new();
    for node in 0..node_count {
        for &c in &tracer.nodes[node].pixels {
            for q in neighbours(mask, c) {
                if let Some(other) = tracer.node_of[tracer.idx(q)] {
                    if other > node && direct.insert((node, other)) {
                        let mut path = tracer.route_from_center(node, c);
                        let mut tail = tracer.route_from_center(other, q);
                        tail.reverse();
                        path.extend(tail);
                        tracer.edges.push(SkeletonEdge {
                            a: node,
                            b: other,
                            path,
                        });
                    }
                }
            }
        }
    }

    // isolated loops
    for p in mask.foreground() {
        let i = tracer.idx(p);
        if tracer.node_of[i].is_none() && !tracer.visited[i] {
            let node = tracer.add_node(vec![p]);
            tracer.trace_from_node(node);
        }
    }

    SkeletonGraph {
        nodes: tracer.nodes,
        edges: tracer.edges,
    }
}

/// A straight segment between two points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct Segment {
    pub p0: [f64; 2],
    pub p1: [f64; 2],
}

impl From<[[f64; 2]; 2]> for Segment {
    fn from([p0, p1]: [[f64; 2]; 2]) -> Self {
        Self { p0, p1 }
    }
}

impl From<Segment> for [[f64; 2]; 2] {
    fn from(s: Segment) -> Self {
        [s.p0, s.p1]
    }
}

impl Segment {
    pub fn new(p0: [f64; 2], p1: [f64; 2]) -> Self {
        Self { p0, p1 }
    }

    pub fn length(&self) -> f64 {
        (self.p1[0] - self.p0[0]).hypot(self.p1[1] - self.p0[1])
    }

    /// Euclidean distance from `p` to the closest point of the segment.
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        let (dx, dy) = (self.p1[0] - self.p0[0], self.p1[1] - self.p0[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p[0] - self.p0[0]) * dx + (p[1] - self.p0[1]) * dy) / len2).clamp(0.0, 1.0)
        };
        (p[0] - self.p0[0] - t * dx).hypot(p[1] - self.p0[1] - t * dy)
    }
}

/// Breakpoint indices of a recursive max-deviation subdivision.
///
/// The result always starts with 0 and ends with `path.len() - 1`; every
/// sub-path between consecutive breakpoints stays within `tolerance` of the
/// chord joining its ends.
pub fn split_indices(path: &[[f64; 2]], tolerance: f64) -> Vec<usize> {
    if path.len() < 2 {
        return (0..path.len()).collect();
    }
    let last = path.len() - 1;
    let mut breaks = vec![0, last];
    let mut stack = vec![(0, last)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let chord = Segment::new(path[lo], path[hi]);
        let (worst, dev) =
            (lo + 1..hi)
                .map(|k| (k, chord.distance_to(path[k])))
                .fold(
                    (lo, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if dev > tolerance {
            breaks.push(worst);
            stack.push((lo, worst));
            stack.push((worst, hi));
        }
    }
    breaks.sort_unstable();
    breaks
}

/// Splits a pixel path into straight segments (pixel coordinates).
pub fn split_straight(path: &[Pixel], tolerance: f64) -> Vec<Segment> {
    let points: Vec<[f64; 2]> = path.iter().map(|&(x, y)| [x as f64, y as f64]).collect();
    split_indices(&points, tolerance)
        .windows(2)
        .map(|w| Segment::new(points[w[0]], points[w[1]]))
        .collect()
}

/// Keeps segments at least `min_length` long, preserving order.
pub fn filter_short(segments: &[Segment], min_length: f64) -> Vec<Segment> {
    segments
        .iter()
        .filter(|s| s.length() >= min_length)
        .copied()
        .collect()
}

/// Straight wall segments in normalized `[-1, 1]` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallSet {
    pub source_size: [usize; 2],
    pub segments: Vec<Segment>,
}

impl WallSet {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            source_size: [width, height],
            segments: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.segments.iter().enumerate() {
            let len = s.length();
            if len.is_nan() || len <= 0.0 {
                return Err(Error::Validation(format!(
                    "wall segment {i} has zero length"
                )));
            }
            let inside = [s.p0, s.p1]
                .iter()
                .flatten()
                .all(|v| (-1.0..=1.0).contains(v));
            if !inside {
                return Err(Error::Validation(format!(
                    "wall segment {i} leaves the [-1, 1] frame"
                )));
            }
        }
        Ok(())
    }

    pub fn frame(&self) -> NormFrame {
        NormFrame::new(self.source_size[0], self.source_size[1])
    }

    /// Structural corners: both endpoints of every segment, in segment order.
    pub fn corners(&self) -> Vec<[f64; 2]> {
        self.segments.iter().flat_map(|s| [s.p0, s.p1]).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let walls: WallSet = serde_json::from_str(&text)?;
        walls.validate()?;
        Ok(walls)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Split and filter settings for [`vectorize_walls`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VectorizeOptions {
    pub tolerance: f64,
    pub min_length: f64,
}

impl Default for VectorizeOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_SPLIT_TOLERANCE,
            min_length: DEFAULT_MIN_LENGTH,
        }
    }
}

/// thin -> extract_graph -> split_straight -> filter_short -> normalize.
pub fn vectorize_walls(mask: &BinaryMask, options: VectorizeOptions) -> WallSet {
    let thinned = thin(mask);
    let graph = extract_graph(&thinned);
    let frame = NormFrame::new(mask.width(), mask.height());
    let to_norm = |p: [f64; 2]| {
        let (x, y) = frame.to_norm(p[0] + 0.5, p[1] + 0.5);
        [x, y]
    };
    let segments = graph
        .edges
        .iter()
        .flat_map(|e| split_straight(&e.path, options.tolerance))
        .filter(|s| s.length() > 0.0)
        .collect::<Vec<_>>();
    let segments = filter_short(&segments, options.min_length)
        .into_iter()
        .map(|s| Segment::new(to_norm(s.p0), to_norm(s.p1)))
        .collect();
    WallSet {
        source_size: [mask.width(), mask.height()],
        segments,
    }
}
