use std::collections::BTreeMap;

use floorplan_core::eval::{evaluate, evaluate_corpus, Aggregation, IouTally, Variant};
use floorplan_core::graph::LabelVocabulary;
use floorplan_core::raster::Grid;
use floorplan_testkit::naive_iou;
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

fn vocab() -> LabelVocabulary {
    LabelVocabulary {
        zoning_types: vec!["Z".into()],
        room_types: vec!["A".into(), "B".into()],
        grid_labels: BTreeMap::from([
            ("background".into(), 0),
            ("structure".into(), 1),
            ("A".into(), 2),
            ("B".into(), 3),
        ]),
    }
}

fn grid(w: usize, cells: &[u8]) -> Grid {
    Grid::from_cells(w, cells.len() / w, cells.to_vec(), vocab().palette()).unwrap()
}

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

#[test]
fn four_pixel_case_is_exact() {
    let v = vocab();
    let pred = grid(4, &[0, 2, 1, 2]);
    let truth = grid(4, &[0, 0, 1, 2]);
    let t = IouTally::from_pair(&pred, &truth, &v).unwrap();
    // background 1/2, structure 1, A 1/2, B absent
    let want = [
        (Variant::All, ratio(2, 3)),
        (Variant::WoBackground, ratio(3, 4)),
        (Variant::StructureOnly, ratio(1, 1)),
        (Variant::BackgroundOnly, ratio(1, 2)),
        (Variant::WoStructure, ratio(1, 2)),
    ];
    for (variant, value) in want {
        assert_eq!(t.exact_variant(variant, &v), Some(value), "{variant:?}");
    }
    let r = t.report(&v);
    assert_eq!(r.per_class["B"], None);
    assert!((r.variant(Variant::All).unwrap() - 2.0 / 3.0).abs() < 1e-15);
}

fn labels() -> impl Strategy<Value = (usize, Vec<u8>, Vec<u8>)> {
    (1usize..8, 1usize..8).prop_flat_map(|(w, h)| {
        (
            Just(w),
            proptest::collection::vec(0u8..4, w * h),
            proptest::collection::vec(0u8..4, w * h),
        )
    })
}

proptest! {
    #[test]
    fn iou_is_symmetric((w, a, b) in labels()) {
        let v = vocab();
        let (ga, gb) = (grid(w, &a), grid(w, &b));
        let ab = IouTally::from_pair(&ga, &gb, &v).unwrap();
        let ba = IouTally::from_pair(&gb, &ga, &v).unwrap();
        for variant in Variant::ALL {
            prop_assert_eq!(ab.exact_variant(variant, &v), ba.exact_variant(variant, &v));
        }
    }

    #[test]
    fn per_class_matches_direct_count((w, a, b) in labels()) {
        let r = evaluate(&grid(w, &a), &grid(w, &b), &vocab()).unwrap();
        for (name, label) in vocab().grid_labels {
            let want = naive_iou(&a, &b, label);
            let got = r.per_class[&name];
            prop_assert_eq!(got.is_some(), want.is_some());
            if let (Some(g), Some(w)) = (got, want) {
                prop_assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn all_lies_between_class_extremes((w, a, b) in labels()) {
        let r = evaluate(&grid(w, &a), &grid(w, &b), &vocab()).unwrap();
        let defined: Vec<f64> = r.per_class.values().flatten().copied().collect();
        let lo = defined.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = defined.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let all = r.variant(Variant::All).unwrap();
        prop_assert!(lo - 1e-12 <= all && all <= hi + 1e-12);
    }

    #[test]
    fn identical_grids_score_one((w, a, _b) in labels()) {
        let g = grid(w, &a);
        let r = evaluate(&g, &g, &vocab()).unwrap();
        prop_assert_eq!(r.variant(Variant::All), Some(1.0));
    }
}

#[test]
fn corpus_micro_sums_counts() {
    let v = vocab();
    let p1 = grid(2, &[2, 2]);
    let t1 = grid(2, &[2, 0]);
    let p2 = grid(2, &[2, 2, 2, 2]);
    let t2 = grid(2, &[2, 2, 2, 2]);
    let pairs = vec![(p1, t1), (p2, t2)];
    let micro = evaluate_corpus(&pairs, &v, Aggregation::Micro).unwrap();
    // A: (1 + 4) / (2 + 4); background: 0 / 1
    assert!((micro.per_class["A"].unwrap() - 5.0 / 6.0).abs() < 1e-15);
    assert_eq!(micro.per_class["background"], Some(0.0));
    let macro_ = evaluate_corpus(&pairs, &v, Aggregation::Macro).unwrap();
    assert!((macro_.per_class["A"].unwrap() - 0.75).abs() < 1e-15);
}

#[test]
fn corpus_reports_the_mismatched_pair() {
    let v = vocab();
    let ok = (grid(2, &[0, 2]), grid(2, &[0, 2]));
    let bad = (grid(2, &[0, 2]), grid(3, &[0, 2, 2]));
    let err = evaluate_corpus(&[ok, bad], &v, Aggregation::Micro).unwrap_err();
    assert!(err.to_string().contains("pair 1"), "{err}");
}
