//! Slow, direct reference implementations for checking the optimized code in
//! `floorplan-core`. Nothing here shares logic with the library.

use floorplan_core::geometry::Point;
use floorplan_core::raster::BinaryMask;
use rand::Rng;

/// Number of 8-connected foreground components, by stack flood fill.
pub fn components8(mask: &BinaryMask) -> usize {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut count = 0;
    for y0 in 0..h {
        for x0 in 0..w {
            if !mask.get(x0, y0) || seen[y0 * w + x0] {
                continue;
            }
            count += 1;
            let mut stack = vec![(x0, y0)];
            seen[y0 * w + x0] = true;
            while let Some((x, y)) = stack.pop() {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if mask.get(nx, ny) && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
        }
    }
    count
}

/// A few filled ellipses and rectangles, sometimes touching.
pub fn random_blob_mask(rng: &mut impl Rng, width: usize, height: usize) -> BinaryMask {
    let mut bits = vec![false; width * height];
    let blobs = rng.random_range(1..=4);
    for _ in 0..blobs {
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let rx = rng.random_range(1.0..(width as f64 / 3.0).max(1.5));
        let ry = rng.random_range(1.0..(height as f64 / 3.0).max(1.5));
        let ellipse = rng.random_bool(0.6);
        for y in 0..height {
            for x in 0..width {
                let u = (x as f64 + 0.5 - cx) / rx;
                let v = (y as f64 + 0.5 - cy) / ry;
                let inside = if ellipse {
                    u * u + v * v <= 1.0
                } else {
                    u.abs() <= 1.0 && v.abs() <= 1.0
                };
                if inside {
                    bits[y * width + x] = true;
                }
            }
        }
    }
    BinaryMask::from_bits(width, height, bits).expect("sizes match")
}

/// Star-shaped, hence simple, polygon with `n` vertices around a random
/// centre, vertices in counter-clockwise angular order.
pub fn random_star_polygon(rng: &mut impl Rng, n: usize) -> Vec<Point> {
    let cx = rng.random_range(-1.0..1.0);
    let cy = rng.random_range(-1.0..1.0);
    let mut angles: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    angles.sort_by(f64::total_cmp);
    angles
        .into_iter()
        .map(|a| {
            let r = rng.random_range(0.2..2.0);
            Point::new(cx + r * a.cos(), cy + r * a.sin())
        })
        .collect()
}

/// Area of the axis-aligned box of `points` after rotating by `-theta`.
pub fn box_area_at(points: &[Point], theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        let u = c * p.x + s * p.y;
        let v = -s * p.x + c * p.y;
        lo[0] = lo[0].min(u);
        hi[0] = hi[0].max(u);
        lo[1] = lo[1].min(v);
        hi[1] = hi[1].max(v);
    }
    (hi[0] - lo[0]) * (hi[1] - lo[1])
}

/// Smallest bounding-box area over orientations `0, step, 2 step, ..` below
/// 90 degrees.
pub fn sweep_min_area(points: &[Point], step_deg: f64) -> f64 {
    let steps = (90.0 / step_deg).round() as usize;
    (0..steps)
        .map(|k| box_area_at(points, (k as f64 * step_deg).to_radians()))
        .fold(f64::INFINITY, f64::min)
}

/// Sweep at `step_deg`, then around every grid local minimum keep halving the
/// step with a three-point search until it drops below 1e-9 degrees.
pub fn refined_sweep_min_area(points: &[Point], step_deg: f64) -> f64 {
    let steps = (90.0 / step_deg).round() as usize;
    let area = |deg: f64| box_area_at(points, deg.to_radians());
    let grid: Vec<f64> = (0..steps).map(|k| area(k as f64 * step_deg)).collect();
    let mut best = f64::INFINITY;
    for k in 0..steps {
        let prev = grid[(k + steps - 1) % steps];
        let next = grid[(k + 1) % steps];
        if grid[k] > prev || grid[k] > next {
            continue;
        }
        let mut center = k as f64 * step_deg;
        let mut h = step_deg;
        let mut value = grid[k];
        while h > 1e-9 {
            for cand in [center - h, center + h] {
                let a = area(cand);
                if a < value {
                    value = a;
                    center = cand;
                }
            }
            h /= 2.0;
        }
        best = best.min(value);
    }
    best
}

/// Masks exactly as described in words: corners attend within their room
/// (CSA), to every corner (GSA), to corners of other rooms joined by a door
/// (RCA), and to every structural corner (SCA).
pub struct BruteMasks {
    pub csa: Vec<Vec<bool>>,
    pub gsa: Vec<Vec<bool>>,
    pub rca: Vec<Vec<bool>>,
    pub sca: Vec<Vec<bool>>,
}

pub fn brute_masks(rooms: usize, doors: &[(usize, usize)], structural: usize) -> BruteMasks {
    let mut csa = Vec::new();
    let mut gsa = Vec::new();
    let mut rca = Vec::new();
    let mut sca = Vec::new();
    for room_p in 0..rooms {
        for _corner_p in 0..4 {
            let mut c = Vec::new();
            let mut g = Vec::new();
            let mut r = Vec::new();
            for room_q in 0..rooms {
                for _corner_q in 0..4 {
                    c.push(room_p == room_q);
                    g.push(true);
                    let door = doors.iter().any(|&(a, b)| {
                        (a == room_p && b == room_q) || (a == room_q && b == room_p)
                    });
                    r.push(room_p != room_q && door);
                }
            }
            csa.push(c);
            gsa.push(g);
            rca.push(r);
            sca.push(vec![true; structural]);
        }
    }
    BruteMasks { csa, gsa, rca, sca }
}

/// Row-by-row softmax attention over the allowed keys with scalar loops.
pub fn scalar_attention(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    mask: &[Vec<bool>],
) -> Vec<Vec<f64>> {
    let d = q.first().map_or(0, Vec::len).max(1) as f64;
    let width = v.first().map_or(0, Vec::len);
    q.iter()
        .enumerate()
        .map(|(i, qi)| {
            let allowed: Vec<usize> = (0..k.len()).filter(|&j| mask[i][j]).collect();
            let mut out = vec![0.0; width];
            if allowed.is_empty() {
                return out;
            }
            let scores: Vec<f64> = allowed
                .iter()
                .map(|&j| {
                    let mut dot = 0.0;
                    for t in 0..qi.len() {
                        dot += qi[t] * k[j][t];
                    }
                    dot / d.sqrt()
                })
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = weights.iter().sum();
            for (w, &j) in weights.iter().zip(&allowed) {
                for t in 0..width {
                    out[t] += w / z * v[j][t];
                }
            }
            out
        })
        .collect()
}

/// Parameters of one edge-aware attention convolution in plain vectors.
pub struct ScalarGat {
    /// out x in
    pub weight: Vec<Vec<f64>>,
    pub att_target: Vec<f64>,
    pub att_source: Vec<f64>,
    pub att_edge: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Direct evaluation of one convolution on an undirected graph with
/// self-loops: for every node, softmax over itself and its neighbours of
/// `leaky(a_t . W h_i + a_s . W h_j + a_e . e_ij)`, then the weighted sum of
/// `W h_j` plus bias. Self-loops carry a zero edge feature.
pub fn scalar_gat_layer(
    layer: &ScalarGat,
    h: &[Vec<f64>],
    edges: &[(usize, usize, [f64; 3])],
) -> Vec<Vec<f64>> {
    let proj: Vec<Vec<f64>> = h
        .iter()
        .map(|x| {
            layer
                .weight
                .iter()
                .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let leaky = |x: f64| if x > 0.0 { x } else { 0.2 * x };
    (0..h.len())
        .map(|i| {
            let mut nbrs: Vec<(usize, [f64; 3])> = vec![(i, [0.0; 3])];
            for &(a, b, e) in edges {
                if a == i {
                    nbrs.push((b, e));
                }
                if b == i {
                    nbrs.push((a, e));
                }
            }
            let logits: Vec<f64> = nbrs
                .iter()
                .map(|(j, e)| {
                    leaky(
                        dot(&layer.att_target, &proj[i])
                            + dot(&layer.att_source, &proj[*j])
                            + dot(&layer.att_edge, e),
                    )
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = w.iter().sum();
            let mut out = layer.bias.clone();
            for ((j, _), wj) in nbrs.iter().zip(&w) {
                for (o, p) in out.iter_mut().zip(&proj[*j]) {
                    *o += wj / z * p;
                }
            }
            out
        })
        .collect()
}

/// Fraction of an `n x n` grid of sample points over `[lo, hi]^2` that fall
/// inside the polygon, by the winding-number test.
pub fn sampled_area(ring: &[Point], lo: f64, hi: f64, n: usize) -> f64 {
    let step = (hi - lo) / n as f64;
    let mut inside = 0usize;
    for iy in 0..n {
        for ix in 0..n {
            let p = Point::new(lo + (ix as f64 + 0.5) * step, lo + (iy as f64 + 0.5) * step);
            if winding_number(ring, p) != 0 {
                inside += 1;
            }
        }
    }
    inside as f64 * step * step
}

pub fn winding_number(ring: &[Point], p: Point) -> i32 {
    let mut wn = 0;
    for i in 0..ring.len() {
        let a = ring[i];
        let b = ring[(i + 1) % ring.len()];
        let side = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
        if a.y <= p.y {
            if b.y > p.y && side > 0.0 {
                wn += 1;
            }
        } else if b.y <= p.y && side < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Intersection over union of one label by direct counting; `None` when the
/// label appears in neither grid.
pub fn naive_iou(pred: &[u8], truth: &[u8], label: u8) -> Option<f64> {
    let mut inter = 0;
    let mut union = 0;
    for (&p, &t) in pred.iter().zip(truth) {
        if p == label && t == label {
            inter += 1;
        }
        if p == label || t == label {
            union += 1;
        }
    }
    (union > 0).then(|| inter as f64 / union as f64)
}
