use floorplan_core::graph::{AccessGraph, LabelVocabulary};
use floorplan_core::roomtype::synthetic::{
    bijective_dataset, label_majority, majority_dataset, random_graph, vocabulary,
};
use floorplan_core::roomtype::{
    cross_entropy, evaluate_graphs, gat_layer_forward, loss_and_gradient, model_forward,
    model_forward_graph, train, write_history_csv, GatConfig, GatParams, MessageGraph,
};
use floorplan_testkit::{scalar_gat_layer, ScalarGat};
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(layers: usize, dropout: f64) -> GatConfig {
    GatConfig {
        num_layers: layers,
        hidden_dim: 6,
        dropout_rate: dropout,
        ..GatConfig::default()
    }
}

fn five_node_case(seed: u64) -> (LabelVocabulary, AccessGraph, MessageGraph, Vec<usize>) {
    let vocab = vocabulary(3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = random_graph(&vocab, 5, &mut rng);
    label_majority(&mut g, &vocab);
    let mg = MessageGraph::from_graph(&g, &vocab).unwrap();
    let targets = g.room_type_targets(&vocab).unwrap();
    (vocab, g, mg, targets)
}

fn check_gradient(config: &GatConfig, dropout_seed: Option<u64>) {
    let (vocab, _, mg, targets) = five_node_case(4);
    let params = GatParams::init(
        config,
        vocab.zoning_types.len(),
        vocab.room_types.len(),
        &mut ChaCha8Rng::seed_from_u64(9),
    );
    let rng = || dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let mut r = rng();
    let (_, grads) = loss_and_gradient(&mg, &targets, &params, config, r.as_mut());
    let analytic = grads.to_flat();
    let flat = params.to_flat();
    let loss_at = |flat: &[f64]| {
        let mut p = params.clone();
        p.set_flat(flat);
        let mut r = rng();
        cross_entropy(
            &model_forward_graph(&mg, &p, config, r.as_mut()).unwrap(),
            &targets,
        )
    };
    let h = 1e-5;
    let mut checked = 0;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[i] += h;
        minus[i] -= h;
        let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        let scale = numeric.abs().max(analytic[i].abs());
        if scale < 1e-7 {
            continue;
        }
        let rel = (numeric - analytic[i]).abs() / scale;
        assert!(
            rel < 1e-4,
            "parameter {i}: analytic {} numeric {numeric}",
            analytic[i]
        );
        checked += 1;
    }
    assert!(
        checked > flat.len() / 4,
        "only {checked} gradients were non-zero"
    );
}

#[test]
fn gradients_match_finite_differences() {
    check_gradient(&small_config(2, 0.0), None);
}

#[test]
fn gradients_match_finite_differences_under_fixed_dropout() {
    check_gradient(&small_config(2, 0.3), Some(17));
}

#[test]
fn layer_matches_scalar_oracle() {
    let (vocab, g, mg, _) = five_node_case(8);
    let config = small_config(1, 0.0);
    let params = GatParams::init(
        &config,
        vocab.zoning_types.len(),
        vocab.room_types.len(),
        &mut ChaCha8Rng::seed_from_u64(1),
    );
    let layer = &params.layers[0];
    let got = gat_layer_forward(&mg.features, &mg.edges, &mg.edge_features, layer).unwrap();

    let rows = |a: &Array2<f64>| a.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    let scalar = ScalarGat {
        weight: rows(&layer.weight),
        att_target: layer.att_target.to_vec(),
        att_source: layer.att_source.to_vec(),
        att_edge: layer.att_edge.to_vec(),
        bias: layer.bias.to_vec(),
    };
    let features = rows(&mg.features);
    let edges: Vec<(usize, usize, [f64; 3])> = g
        .edge_positions()
        .into_iter()
        .map(|(a, b, kind)| {
            let mut e = [0.0; 3];
            e[kind.index()] = 1.0;
            (a, b, e)
        })
        .collect();
    let want = scalar_gat_layer(&scalar, &features, &edges);
    for (i, row) in want.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert!(
                (got[[i, j]] - v).abs() < 1e-12,
                "({i},{j}) {} vs {v}",
                got[[i, j]]
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn predictions_follow_node_order(seed in any::<u64>(), n in 2usize..9) {
        let vocab = vocabulary(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&vocab, n, &mut rng);
        let config = small_config(2, 0.0);
        let params = GatParams::init(&config, 3, 4, &mut rng);
        let base = model_forward(&g, &vocab, &params, &config, false).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let shuffled = AccessGraph {
            nodes: perm.iter().map(|&k| g.nodes[k].clone()).collect(),
            edges: g.edges.clone(),
        };
        let out = model_forward(&shuffled, &vocab, &params, &config, false).unwrap();
        for (row, &k) in perm.iter().enumerate() {
            for c in 0..4 {
                prop_assert!((out[[row, c]] - base[[k, c]]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_dropout_makes_training_and_inference_agree() {
    let (vocab, g, _, _) = five_node_case(2);
    let config = small_config(3, 0.0);
    let params = GatParams::init(&config, 3, 4, &mut ChaCha8Rng::seed_from_u64(5));
    let a = model_forward(&g, &vocab, &params, &config, true).unwrap();
    let b = model_forward(&g, &vocab, &params, &config, false).unwrap();
    assert_eq!(a, b);
}

#[test]
fn only_output_bias_gives_constant_logits() {
    let (vocab, g, _, _) = five_node_case(2);
    let config = small_config(2, 0.0);
    let mut params = GatParams::init(&config, 3, 4, &mut ChaCha8Rng::seed_from_u64(5));
    let bias = ndarray::arr1(&[0.5, -1.0, 2.0, 0.25]);
    params = params.zeros_like();
    params.out_bias = bias.clone();
    let logits = model_forward(&g, &vocab, &params, &config, false).unwrap();
    for row in logits.rows() {
        assert_eq!(row, bias);
    }
}

#[test]
fn training_is_bit_deterministic() {
    let vocab = vocabulary(3, 3);
    let data = majority_dataset(&vocab, 12, 4..=8, 1);
    let config = GatConfig {
        max_epochs: 6,
        batch_size: 4,
        hidden_dim: 8,
        ..GatConfig::default()
    };
    let a = train(&data[..9], &data[9..], &vocab, &config).unwrap();
    let b = train(&data[..9], &data[9..], &vocab, &config).unwrap();
    let bits = |p: &GatParams| p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.params), bits(&b.params));
    assert_eq!(a.history, b.history);

    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_history_csv(&a.history, &pa).unwrap();
    write_history_csv(&b.history, &pb).unwrap();
    let text = std::fs::read_to_string(&pa).unwrap();
    assert_eq!(text, std::fs::read_to_string(&pb).unwrap());
    assert_eq!(text.lines().count(), a.history.len() + 1);
}

#[test]
fn learns_a_zoning_to_room_bijection() {
    let vocab = vocabulary(4, 4);
    let data = bijective_dataset(&vocab, 40, 4..=10, 7);
    let config = GatConfig {
        max_epochs: 50,
        early_stop_tolerance: 50,
        ..GatConfig::default()
    };
    let out = train(&data[..30], &data[30..], &vocab, &config).unwrap();
    assert!(
        out.history.iter().any(|r| r.mean_val_acc == 1.0),
        "best accuracy {}",
        out.best().mean_val_acc
    );
}

#[test]
fn fits_a_small_neighbourhood_task() {
    let vocab = vocabulary(3, 3);
    let data = majority_dataset(&vocab, 10, 4..=8, 3);
    let config = GatConfig {
        num_layers: 2,
        dropout_rate: 0.0,
        learning_rate: 1e-2,
        batch_size: 10,
        max_epochs: 200,
        early_stop_tolerance: 200,
        ..GatConfig::default()
    };
    let out = train(&data, &[], &vocab, &config).unwrap();
    let prepared: Vec<(MessageGraph, Vec<usize>)> = data
        .iter()
        .map(|g| {
            (
                MessageGraph::from_graph(g, &vocab).unwrap(),
                g.room_type_targets(&vocab).unwrap(),
            )
        })
        .collect();
    let (_, acc) = evaluate_graphs(&prepared, &out.params, &config).unwrap();
    assert!(acc >= 0.95, "training accuracy {acc}");
}
