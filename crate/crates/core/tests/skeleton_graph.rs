use std::collections::BTreeSet;

use floorplan_core::raster::{thin, BinaryMask};
use floorplan_core::skeleton::{
    extract_graph, filter_short, split_indices, split_straight, vectorize_walls, Segment,
    VectorizeOptions,
};
use floorplan_testkit::random_blob_mask;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn perpendicular(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return (p[0] - a[0]).hypot(p[1] - a[1]);
    }
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

fn thinned_blob(seed: u64, w: usize, h: usize) -> BinaryMask {
    thin(&random_blob_mask(
        &mut ChaCha8Rng::seed_from_u64(seed),
        w,
        h,
    ))
}

proptest! {
    #[test]
    fn paths_and_nodes_cover_the_skeleton(seed in any::<u64>(), w in 4usize..48, h in 4usize..48) {
        let m = thinned_blob(seed, w, h);
        let g = extract_graph(&m);
        let path_sum: usize = g.edges.iter().map(|e| e.path.len() - 1).sum();
        let node_pixels: usize = g.nodes.iter().map(|n| n.pixels.len()).sum();
        prop_assert!(path_sum + node_pixels >= m.count());
        let mut covered: BTreeSet<(usize, usize)> = BTreeSet::new();
        for n in &g.nodes {
            covered.extend(n.pixels.iter().copied());
        }
        for e in &g.edges {
            covered.extend(e.path.iter().copied());
        }
        let fg: BTreeSet<(usize, usize)> = m.foreground().collect();
        prop_assert_eq!(covered, fg);
    }

    #[test]
    fn edge_paths_are_eight_connected(seed in any::<u64>(), w in 4usize..48, h in 4usize..48) {
        let m = thinned_blob(seed, w, h);
        let g = extract_graph(&m);
        for e in &g.edges {
            prop_assert_eq!(e.path[0], g.nodes[e.a].center);
            prop_assert_eq!(*e.path.last().unwrap(), g.nodes[e.b].center);
            for pair in e.path.windows(2) {
                let dx = pair[0].0.abs_diff(pair[1].0);
                let dy = pair[0].1.abs_diff(pair[1].1);
                prop_assert!(dx <= 1 && dy <= 1 && dx + dy > 0);
            }
        }
    }

    #[test]
    fn split_respects_tolerance(
        pts in proptest::collection::vec((0usize..40, 0usize..40), 2..60),
        tol in 0.3f64..4.0,
    ) {
        let path: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x as f64, y as f64]).collect();
        let idx = split_indices(&path, tol);
        prop_assert_eq!(idx[0], 0);
        prop_assert_eq!(*idx.last().unwrap(), path.len() - 1);
        for w in idx.windows(2) {
            prop_assert!(w[0] < w[1]);
            for p in &path[w[0]..=w[1]] {
                prop_assert!(perpendicular(*p, path[w[0]], path[w[1]]) <= tol + 1e-12);
            }
        }
    }

    #[test]
    fn vectorized_coordinates_stay_in_frame(seed in any::<u64>(), w in 2usize..64, h in 2usize..64) {
        let m = random_blob_mask(&mut ChaCha8Rng::seed_from_u64(seed), w, h);
        let walls = vectorize_walls(&m, VectorizeOptions::default());
        for s in &walls.segments {
            for v in s.p0.iter().chain(s.p1.iter()) {
                prop_assert!((-1.0..=1.0).contains(v));
            }
            prop_assert!(s.length() > 0.0);
        }
    }

    #[test]
    fn filter_keeps_order_and_long_segments(lens in proptest::collection::vec(0.5f64..20.0, 0..20), min in 0.0f64..10.0) {
        let segs: Vec<Segment> = lens.iter().map(|&l| Segment::new([0.0, 0.0], [l, 0.0])).collect();
        let kept: Vec<f64> = filter_short(&segs, min).iter().map(Segment::length).collect();
        let expected: Vec<f64> = lens.iter().copied().filter(|&l| l >= min).collect();
        prop_assert_eq!(kept, expected);
    }
}

#[test]
fn straight_bar_is_one_segment() {
    let rows = ["..........", "##########", ".........."];
    let mask = BinaryMask::from_ascii(&rows).unwrap();
    let g = extract_graph(&mask);
    assert_eq!(g.nodes.len(), 2);
    assert_eq!(g.edges.len(), 1);
    let drawn: BTreeSet<(usize, usize)> = mask.foreground().collect();
    let path: BTreeSet<(usize, usize)> = g.edges[0].path.iter().copied().collect();
    assert_eq!(path, drawn);
    let segs = split_straight(&g.edges[0].path, 1.5);
    assert_eq!(filter_short(&segs, 4.0).len(), 1);
}

#[test]
fn plus_sign_is_four_segments() {
    let mut rows = vec![".".repeat(15); 15];
    rows[7] = format!(".{}.", "#".repeat(13));
    for (y, row) in rows.iter_mut().enumerate() {
        if (1..14).contains(&y) {
            row.replace_range(7..8, "#");
        }
    }
    let rows: Vec<&str> = rows.iter().map(String::as_str).collect();
    let mask = BinaryMask::from_ascii(&rows).unwrap();
    let g = extract_graph(&mask);
    assert_eq!(g.nodes.len(), 5);
    assert_eq!(g.edges.len(), 4);
    assert_eq!(g.nodes.iter().filter(|n| n.center == (7, 7)).count(), 1);
    let segs: Vec<Segment> = g
        .edges
        .iter()
        .flat_map(|e| split_straight(&e.path, 1.0))
        .collect();
    assert_eq!(filter_short(&segs, 3.0).len(), 4);
    let walls = vectorize_walls(
        &mask,
        VectorizeOptions {
            tolerance: 1.0,
            min_length: 3.0,
        },
    );
    assert_eq!(walls.segments.len(), 4);
}

#[test]
fn l_path_splits_at_its_corner() {
    let mut path: Vec<(usize, usize)> = (0..10).map(|x| (x, 0)).collect();
    path.extend((1..=10).map(|y| (9, y)));
    let segs = split_straight(&path, 1.0);
    assert_eq!(segs.len(), 2);
    assert_eq!(segs[0].p1, [9.0, 0.0]);
    assert_eq!(segs[1].p0, [9.0, 0.0]);
    // brute force: the corner is the pixel farthest from the end-to-end chord
    let pts: Vec<[f64; 2]> = path.iter().map(|&(x, y)| [x as f64, y as f64]).collect();
    let far = (0..pts.len())
        .max_by(|&i, &j| {
            perpendicular(pts[i], pts[0], pts[pts.len() - 1]).total_cmp(&perpendicular(
                pts[j],
                pts[0],
                pts[pts.len() - 1],
            ))
        })
        .unwrap();
    assert_eq!(path[far], (9, 0));
}

#[test]
fn hundred_thinned_blobs_are_covered() {
    for seed in 0..100 {
        let m = thinned_blob(seed, 40, 40);
        let g = extract_graph(&m);
        let path_sum: usize = g.edges.iter().map(|e| e.path.len() - 1).sum();
        let node_pixels: usize = g.nodes.iter().map(|n| n.pixels.len()).sum();
        assert!(path_sum + node_pixels >= m.count(), "seed {seed}");
    }
}
