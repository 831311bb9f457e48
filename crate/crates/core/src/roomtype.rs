//! Room-type prediction from zoning types with an edge-aware graph attention
//! network.
//!
//! Node features are one-hot zoning types, edge features one-hot connection
//! types. `num_layers` attention convolutions (all fed the same edge
//! features) are followed by a head that concatenates the raw node features
//! with the last convolution output, applies a hidden linear layer and maps to
//! room-type logits. ReLU and dropout sit between hidden layers. Everything is
//! `f64` and gradients are derived by hand.

use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::graph::{one_hot_features, AccessGraph, ConnectionType, LabelVocabulary};

pub const CHECKPOINT_KIND: &str = "roomtype-gat";
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_tolerance: usize,
    pub seed: u64,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            num_layers: 3,
            hidden_dim: 64,
            dropout_rate: 0.1,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            early_stop_tolerance: 5,
            seed: 0,
        }
    }
}

impl GatConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.num_layers >= 1
            && self.hidden_dim >= 1
            && self.batch_size >= 1
            && self.max_epochs >= 1
            && self.early_stop_tolerance >= 1
            && self.learning_rate > 0.0;
        if !positive {
            return Err(Error::Argument("GAT settings must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Argument("dropout rate must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One attention convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    /// out x in
    pub weight: Array2<f64>,
    /// Scores the receiving node.
    pub att_target: Array1<f64>,
    /// Scores the neighbour.
    pub att_source: Array1<f64>,
    /// Scores the connection type.
    pub att_edge: Array1<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatParams {
    pub layers: Vec<GatLayer>,
    /// hidden x (input + hidden)
    pub hidden_weight: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    /// output x hidden
    pub out_weight: Array2<f64>,
    pub out_bias: Array1<f64>,
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

fn glorot_vec(rng: &mut impl Rng, len: usize) -> Array1<f64> {
    let limit = (6.0 / (len + 1) as f64).sqrt();
    Array1::from_shape_fn(len, |_| rng.random_range(-limit..limit))
}

impl GatParams {
    pub fn init(
        config: &GatConfig,
        input_dim: usize,
        output_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let h = config.hidden_dim;
        let layers = (0..config.num_layers)
            .map(|l| {
                let fan_in = if l == 0 { input_dim } else { h };
                GatLayer {
                    weight: glorot(rng, h, fan_in),
                    att_target: glorot_vec(rng, h),
                    att_source: glorot_vec(rng, h),
                    att_edge: glorot_vec(rng, ConnectionType::ALL.len()),
                    bias: Array1::zeros(h),
                }
            })
            .collect();
        Self {
            layers,
            hidden_weight: glorot(rng, h, input_dim + h),
            hidden_bias: Array1::zeros(h),
            out_weight: glorot(rng, output_dim, h),
            out_bias: Array1::zeros(output_dim),
        }
    }

    /// [`GatParams::init`] driven by a fresh generator seeded with `seed`.
    pub fn random(config: &GatConfig, input_dim: usize, output_dim: usize, seed: u64) -> Self {
        Self::init(
            config,
            input_dim,
            output_dim,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.out_weight.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(|v| *v = 0.0);
        z
    }

    fn visit_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(&mut f);
            l.att_target.iter_mut().for_each(&mut f);
            l.att_source.iter_mut().for_each(&mut f);
            l.att_edge.iter_mut().for_each(&mut f);
            l.bias.iter_mut().for_each(&mut f);
        }
        self.hidden_weight.iter_mut().for_each(&mut f);
        self.hidden_bias.iter_mut().for_each(&mut f);
        self.out_weight.iter_mut().for_each(&mut f);
        self.out_bias.iter_mut().for_each(&mut f);
    }

    /// All parameters in a fixed order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.clone().visit_mut(|v| out.push(*v));
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        self.visit_mut(|v| {
            *v = flat[pos];
            pos += 1;
        });
        assert_eq!(pos, flat.len(), "flat parameter length mismatch");
    }

    pub fn to_checkpoint(&self, config: &GatConfig) -> Result<Checkpoint> {
        let meta = CheckpointConfig {
            gat: config.clone(),
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
        };
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, &meta)?;
        for (l, layer) in self.layers.iter().enumerate() {
            ck.put2(format!("gat.{l}.weight"), &layer.weight);
            ck.put1(format!("gat.{l}.att_target"), &layer.att_target);
            ck.put1(format!("gat.{l}.att_source"), &layer.att_source);
            ck.put1(format!("gat.{l}.att_edge"), &layer.att_edge);
            ck.put1(format!("gat.{l}.bias"), &layer.bias);
        }
        ck.put2("head.hidden.weight", &self.hidden_weight);
        ck.put1("head.hidden.bias", &self.hidden_bias);
        ck.put2("head.out.weight", &self.out_weight);
        ck.put1("head.out.bias", &self.out_bias);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, GatConfig)> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let meta: CheckpointConfig = ck.config()?;
        meta.gat.validate()?;
        let h = meta.gat.hidden_dim;
        let layers = (0..meta.gat.num_layers)
            .map(|l| {
                let fan_in = if l == 0 { meta.input_dim } else { h };
                Ok(GatLayer {
                    weight: ck.take2(&format!("gat.{l}.weight"), h, fan_in)?,
                    att_target: ck.take1(&format!("gat.{l}.att_target"), h)?,
                    att_source: ck.take1(&format!("gat.{l}.att_source"), h)?,
                    att_edge: ck.take1(&format!("gat.{l}.att_edge"), ConnectionType::ALL.len())?,
                    bias: ck.take1(&format!("gat.{l}.bias"), h)?,
                })
            })
            .collect::<Result<_>>()?;
        let params = Self {
            layers,
            hidden_weight: ck.take2("head.hidden.weight", h, meta.input_dim + h)?,
            hidden_bias: ck.take1("head.hidden.bias", h)?,
            out_weight: ck.take2("head.out.weight", meta.output_dim, h)?,
            out_bias: ck.take1("head.out.bias", meta.output_dim)?,
        };
        Ok((params, meta.gat))
    }

    pub fn save(&self, config: &GatConfig, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint(config)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, GatConfig)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    gat: GatConfig,
    input_dim: usize,
    output_dim: usize,
}

/// Directed message-passing structure of one graph or a disjoint batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageGraph {
    pub features: Array2<f64>,
    /// (source, target) pairs: both directions of every edge in edge-list
    /// order, then one self-loop per node.
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Array2<f64>,
    /// Node ranges of the member graphs.
    pub graph_ranges: Vec<std::ops::Range<usize>>,
}

impl MessageGraph {
    pub fn from_graph(graph: &AccessGraph, vocab: &LabelVocabulary) -> Result<Self> {
        Self::batch(&[graph], vocab)
    }

    pub fn batch(graphs: &[&AccessGraph], vocab: &LabelVocabulary) -> Result<Self> {
        let mut feats = Vec::new();
        let mut edges = Vec::new();
        let mut edge_rows: Vec<[f64; 3]> = Vec::new();
        let mut ranges = Vec::new();
        let mut offset = 0;
        for g in graphs {
            let (x, e) = one_hot_features(g, vocab)?;
            let n = x.nrows();
            for (k, (a, b, _)) in g.edge_positions().into_iter().enumerate() {
                let row = [e[[k, 0]], e[[k, 1]], e[[k, 2]]];
                edges.push((offset + a, offset + b));
                edge_rows.push(row);
                edges.push((offset + b, offset + a));
                edge_rows.push(row);
            }
            for i in 0..n {
                edges.push((offset + i, offset + i));
                edge_rows.push([0.0; 3]);
            }
            feats.push(x);
            ranges.push(offset..offset + n);
            offset += n;
        }
        let views: Vec<_> = feats.iter().map(|f| f.view()).collect();
        let features = if views.is_empty() {
            Array2::zeros((0, vocab.zoning_types.len()))
        } else {
            concatenate(Axis(0), &views).expect("equal widths")
        };
        let edge_features = Array2::from_shape_fn((edge_rows.len(), 3), |(k, c)| edge_rows[k][c]);
        Ok(Self {
            features,
            edges,
            edge_features,
            graph_ranges: ranges,
        })
    }
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn ensure_finite(a: &Array2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains NaN or infinity")))
    }
}

struct LayerCache {
    input: Array2<f64>,
    z: Array2<f64>,
    raw: Vec<f64>,
    alpha: Vec<f64>,
}

fn layer_forward_cached(
    h: &Array2<f64>,
    edges: &[(usize, usize)],
    edge_features: &Array2<f64>,
    layer: &GatLayer,
) -> (Array2<f64>, LayerCache) {
    let n = h.nrows();
    let z = h.dot(&layer.weight.t());
    let s = z.dot(&layer.att_target);
    let t = z.dot(&layer.att_source);
    let q = edge_features.dot(&layer.att_edge);
    let raw: Vec<f64> = edges
        .iter()
        .enumerate()
        .map(|(k, &(src, dst))| s[dst] + t[src] + q[k])
        .collect();
    let mut max = vec![f64::NEG_INFINITY; n];
    for (k, &(_, dst)) in edges.iter().enumerate() {
        max[dst] = max[dst].max(leaky(raw[k]));
    }
    let mut alpha: Vec<f64> = edges
        .iter()
        .enumerate()
        .map(|(k, &(_, dst))| (leaky(raw[k]) - max[dst]).exp())
        .collect();
    let mut total = vec![0.0; n];
    for (k, &(_, dst)) in edges.iter().enumerate() {
        total[dst] += alpha[k];
    }
    for (k, &(_, dst)) in edges.iter().enumerate() {
        alpha[k] /= total[dst];
    }
    let mut out = Array2::zeros((n, z.ncols()));
    for (k, &(src, dst)) in edges.iter().enumerate() {
        out.row_mut(dst).scaled_add(alpha[k], &z.row(src));
    }
    out += &layer.bias;
    (
        out,
        LayerCache {
            input: h.clone(),
            z,
            raw,
            alpha,
        },
    )
}

fn layer_backward(
    grad_out: &Array2<f64>,
    cache: &LayerCache,
    edges: &[(usize, usize)],
    edge_features: &Array2<f64>,
    layer: &GatLayer,
    grads: &mut GatLayer,
) -> Array2<f64> {
    let n = grad_out.nrows();
    let z = &cache.z;
    grads.bias += &grad_out.sum_axis(Axis(0));
    let mut dz = Array2::<f64>::zeros(z.raw_dim());
    let dalpha: Vec<f64> = edges
        .iter()
        .map(|&(src, dst)| grad_out.row(dst).dot(&z.row(src)))
        .collect();
    let mut weighted = vec![0.0; n];
    for (k, &(src, dst)) in edges.iter().enumerate() {
        dz.row_mut(src)
            .scaled_add(cache.alpha[k], &grad_out.row(dst));
        weighted[dst] += cache.alpha[k] * dalpha[k];
    }
    let mut ds = Array1::<f64>::zeros(n);
    let mut dt = Array1::<f64>::zeros(n);
    for (k, &(src, dst)) in edges.iter().enumerate() {
        let du = cache.alpha[k] * (dalpha[k] - weighted[dst]);
        let draw = if cache.raw[k] > 0.0 {
            du
        } else {
            LEAKY_SLOPE * du
        };
        ds[dst] += draw;
        dt[src] += draw;
        grads.att_edge.scaled_add(draw, &edge_features.row(k));
    }
    grads.att_target += &z.t().dot(&ds);
    grads.att_source += &z.t().dot(&dt);
    let ds2 = ds.insert_axis(Axis(1));
    let dt2 = dt.insert_axis(Axis(1));
    dz += &ds2.dot(&layer.att_target.view().insert_axis(Axis(0)));
    dz += &dt2.dot(&layer.att_source.view().insert_axis(Axis(0)));
    grads.weight += &dz.t().dot(&cache.input);
    dz.dot(&layer.weight)
}

/// One attention convolution: `h'_i = sum_j alpha_ij W h_j + b`, where
/// `alpha_i.` is the softmax over in-neighbours (self-loop included) of
/// `LeakyReLU(a_t . W h_i + a_s . W h_j + a_e . e_ij)`.
pub fn gat_layer_forward(
    h: &Array2<f64>,
    edges: &[(usize, usize)],
    edge_features: &Array2<f64>,
    layer: &GatLayer,
) -> Result<Array2<f64>> {
    ensure_finite(h, "node features")?;
    ensure_finite(edge_features, "edge features")?;
    Ok(layer_forward_cached(h, edges, edge_features, layer).0)
}

/// Attention coefficient of every directed edge.
pub fn attention_coefficients(
    h: &Array2<f64>,
    edges: &[(usize, usize)],
    edge_features: &Array2<f64>,
    layer: &GatLayer,
) -> Vec<f64> {
    layer_forward_cached(h, edges, edge_features, layer).1.alpha
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    layer_pre: Vec<Array2<f64>>,
    layer_masks: Vec<Option<Array2<f64>>>,
    concat: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden_mask: Option<Array2<f64>>,
    hidden_out: Array2<f64>,
}

fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut impl Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_fn(shape, |_| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

fn relu_dropout(
    pre: &Array2<f64>,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, Option<Array2<f64>>) {
    let mut act = pre.mapv(|v| v.max(0.0));
    let mask = match rng {
        Some(rng) if rate > 0.0 => {
            let m = dropout_mask(act.dim(), rate, rng);
            act *= &m;
            Some(m)
        }
        _ => None,
    };
    (act, mask)
}

fn forward_cached(
    mg: &MessageGraph,
    params: &GatParams,
    config: &GatConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, ForwardCache) {
    let mut h = mg.features.clone();
    let mut layers = Vec::new();
    let mut layer_pre = Vec::new();
    let mut layer_masks = Vec::new();
    for layer in &params.layers {
        let (pre, cache) = layer_forward_cached(&h, &mg.edges, &mg.edge_features, layer);
        let (act, mask) = relu_dropout(&pre, config.dropout_rate, rng.as_deref_mut());
        layers.push(cache);
        layer_pre.push(pre);
        layer_masks.push(mask);
        h = act;
    }
    let concat = concatenate(Axis(1), &[mg.features.view(), h.view()]).expect("same rows");
    let hidden_pre = concat.dot(&params.hidden_weight.t()) + &params.hidden_bias;
    let (hidden_out, hidden_mask) = relu_dropout(&hidden_pre, config.dropout_rate, rng);
    let logits = hidden_out.dot(&params.out_weight.t()) + &params.out_bias;
    (
        logits,
        ForwardCache {
            layers,
            layer_pre,
            layer_masks,
            concat,
            hidden_pre,
            hidden_mask,
            hidden_out,
        },
    )
}

/// Room-type logits for every node. Dropout is active only when `rng` is given.
pub fn model_forward_graph(
    mg: &MessageGraph,
    params: &GatParams,
    config: &GatConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Array2<f64>> {
    ensure_finite(&mg.features, "node features")?;
    let logits = forward_cached(mg, params, config, rng).0;
    ensure_finite(&logits, "logits")?;
    Ok(logits)
}

/// Logits for one access graph. `train_mode` enables dropout driven by a
/// generator seeded from `config.seed`.
pub fn model_forward(
    graph: &AccessGraph,
    vocab: &LabelVocabulary,
    params: &GatParams,
    config: &GatConfig,
    train_mode: bool,
) -> Result<Array2<f64>> {
    let mg = MessageGraph::from_graph(graph, vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    model_forward_graph(&mg, params, config, train_mode.then_some(&mut rng))
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.mapv(|v| (v - max).exp()).sum().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Mean cross-entropy over nodes.
pub fn cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> f64 {
    let logp = log_softmax_rows(logits);
    -targets
        .iter()
        .enumerate()
        .map(|(i, &t)| logp[[i, t]])
        .sum::<f64>()
        / targets.len() as f64
}

/// Mean cross-entropy and its gradient with respect to every parameter.
pub fn loss_and_gradient(
    mg: &MessageGraph,
    targets: &[usize],
    params: &GatParams,
    config: &GatConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> (f64, GatParams) {
    let (logits, cache) = forward_cached(mg, params, config, rng);
    let n = targets.len() as f64;
    let logp = log_softmax_rows(&logits);
    let loss = -targets
        .iter()
        .enumerate()
        .map(|(i, &t)| logp[[i, t]])
        .sum::<f64>()
        / n;
    let mut dlogits = logp.mapv(f64::exp);
    for (i, &t) in targets.iter().enumerate() {
        dlogits[[i, t]] -= 1.0;
    }
    dlogits /= n;

    let mut grads = params.zeros_like();
    grads.out_weight = dlogits.t().dot(&cache.hidden_out);
    grads.out_bias = dlogits.sum_axis(Axis(0));
    let mut d = dlogits.dot(&params.out_weight);
    if let Some(m) = &cache.hidden_mask {
        d *= m;
    }
    d.zip_mut_with(&cache.hidden_pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
    grads.hidden_weight = d.t().dot(&cache.concat);
    grads.hidden_bias = d.sum_axis(Axis(0));
    let dconcat = d.dot(&params.hidden_weight);
    let input_dim = mg.features.ncols();
    let mut dh = dconcat.slice(s![.., input_dim..]).to_owned();

    for l in (0..params.layers.len()).rev() {
        if let Some(m) = &cache.layer_masks[l] {
            dh *= m;
        }
        dh.zip_mut_with(&cache.layer_pre[l], |g, &p| {
            if p <= 0.0 {
                *g = 0.0
            }
        });
        dh = layer_backward(
            &dh,
            &cache.layers[l],
            &mg.edges,
            &mg.edge_features,
            &params.layers[l],
            &mut grads.layers[l],
        );
    }
    (loss, grads)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of matching labels in one graph.
pub fn graph_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Argument(format!(
            "accuracy needs equal non-empty label lists, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Predicted room-type indices per node.
pub fn predict_indices(
    graph: &AccessGraph,
    vocab: &LabelVocabulary,
    params: &GatParams,
    config: &GatConfig,
) -> Result<Vec<usize>> {
    let logits = model_forward(graph, vocab, params, config, false)?;
    Ok(logits.rows().into_iter().map(argmax).collect())
}

/// Copy of `graph` with every node's room type set to the argmax prediction.
pub fn predict_room_types(
    graph: &AccessGraph,
    vocab: &LabelVocabulary,
    params: &GatParams,
    config: &GatConfig,
) -> Result<AccessGraph> {
    if params.output_dim() != vocab.room_types.len() {
        return Err(Error::Validation(format!(
            "model predicts {} room types, vocabulary has {}",
            params.output_dim(),
            vocab.room_types.len()
        )));
    }
    let pred = predict_indices(graph, vocab, params, config)?;
    let mut out = graph.clone();
    for (node, p) in out.nodes.iter_mut().zip(pred) {
        node.room_type = Some(vocab.room_types[p].clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub mean_val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: GatParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }
}

/// Writes epoch, train_loss, val_loss, mean_val_acc rows.
pub fn write_history_csv(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::Validation(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for rec in history {
        w.serialize(rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean validation loss over all nodes and mean per-graph accuracy.
pub fn evaluate_graphs(
    graphs: &[(MessageGraph, Vec<usize>)],
    params: &GatParams,
    config: &GatConfig,
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut nodes = 0usize;
    let mut acc_sum = 0.0;
    for (mg, targets) in graphs {
        let logits = model_forward_graph(mg, params, config, None)?;
        loss_sum += cross_entropy(&logits, targets) * targets.len() as f64;
        nodes += targets.len();
        let pred: Vec<usize> = logits.rows().into_iter().map(argmax).collect();
        acc_sum += graph_accuracy(&pred, targets)?;
    }
    Ok((loss_sum / nodes as f64, acc_sum / graphs.len() as f64))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grads[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grads[i] * grads[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

fn prepare(
    graphs: &[AccessGraph],
    vocab: &LabelVocabulary,
) -> Result<Vec<(MessageGraph, Vec<usize>)>> {
    graphs
        .iter()
        .map(|g| {
            let targets = g.room_type_targets(vocab)?;
            if targets.is_empty() {
                return Err(Error::Argument("graph without nodes in dataset".into()));
            }
            Ok((MessageGraph::from_graph(g, vocab)?, targets))
        })
        .collect()
}

/// Mini-batch Adam on mean node cross-entropy with early stopping on the
/// validation loss. An empty validation set validates on the training set.
pub fn train(
    train_set: &[AccessGraph],
    val_set: &[AccessGraph],
    vocab: &LabelVocabulary,
    config: &GatConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let train_data = prepare(train_set, vocab)?;
    let val_data = if val_set.is_empty() {
        train_data.clone()
    } else {
        prepare(val_set, vocab)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = GatParams::init(
        config,
        vocab.zoning_types.len(),
        vocab.room_types.len(),
        &mut rng,
    );
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len(), config.learning_rate);

    let mut history = Vec::new();
    let mut best: Option<(f64, GatParams, usize)> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut node_sum = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let graphs: Vec<&AccessGraph> = chunk.iter().map(|&i| &train_set[i]).collect();
            let mg = MessageGraph::batch(&graphs, vocab)?;
            let targets: Vec<usize> = chunk
                .iter()
                .flat_map(|&i| train_data[i].1.iter().copied())
                .collect();
            let (loss, grads) = loss_and_gradient(&mg, &targets, &params, config, Some(&mut rng));
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training loss diverged at epoch {epoch}"
                )));
            }
            loss_sum += loss * targets.len() as f64;
            node_sum += targets.len();
            adam.update(&mut flat, &grads.to_flat());
            params.set_flat(&flat);
        }
        let (val_loss, mean_val_acc) = evaluate_graphs(&val_data, &params, config)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / node_sum as f64,
            val_loss,
            mean_val_acc,
        });
        match &best {
            Some((b, _, _)) if val_loss >= *b => {
                stale += 1;
                if stale >= config.early_stop_tolerance {
                    break;
                }
            }
            _ => {
                best = Some((val_loss, params.clone(), epoch));
                stale = 0;
            }
        }
    }
    let (_, params, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
    })
}

/// Deterministic shuffle-and-split; at least one graph lands in each side
/// when there are two or more.
pub fn split_dataset(
    graphs: Vec<AccessGraph>,
    val_fraction: f64,
    seed: u64,
) -> (Vec<AccessGraph>, Vec<AccessGraph>) {
    let mut graphs = graphs;
    graphs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    if graphs.len() < 2 {
        return (graphs, Vec::new());
    }
    let n_val = ((graphs.len() as f64 * val_fraction).round() as usize).clamp(1, graphs.len() - 1);
    let val = graphs.split_off(graphs.len() - n_val);
    (graphs, val)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub layers: usize,
    pub val_loss: f64,
    pub mean_val_acc: f64,
}

/// Trains one model per layer count; reports the best-epoch validation numbers.
pub fn layer_sweep(
    train_set: &[AccessGraph],
    val_set: &[AccessGraph],
    vocab: &LabelVocabulary,
    base: &GatConfig,
    layers: &[usize],
) -> Result<Vec<SweepRow>> {
    layers
        .iter()
        .map(|&n| {
            let config = GatConfig {
                num_layers: n,
                ..base.clone()
            };
            let outcome = train(train_set, val_set, vocab, &config)?;
            let best = outcome.best();
            Ok(SweepRow {
                layers: n,
                val_loss: best.val_loss,
                mean_val_acc: best.mean_val_acc,
            })
        })
        .collect()
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:>15} {:>9} {:>13}\n",
        "#GATConv layers", "val loss", "mean val acc"
    );
    for r in rows {
        out.push_str(&format!(
            "{:>15} {:>9.2} {:>13.2}\n",
            r.layers, r.val_loss, r.mean_val_acc
        ));
    }
    out
}

/// Rule-based synthetic access graphs for exercising the trainer.
pub mod synthetic {
    use std::collections::BTreeMap;

    use rand::Rng;

    use super::*;
    use crate::graph::{GraphEdge, GraphNode};

    /// `zones` zoning types Z0.. and `rooms` room types R0.., grid labels 2...
    pub fn vocabulary(zones: usize, rooms: usize) -> LabelVocabulary {
        let room_types: Vec<String> = (0..rooms).map(|i| format!("R{i}")).collect();
        let mut grid_labels = BTreeMap::from([
            ("background".to_string(), 0u8),
            ("structure".to_string(), 1u8),
        ]);
        for (i, r) in room_types.iter().enumerate() {
            grid_labels.insert(r.clone(), (i + 2) as u8);
        }
        LabelVocabulary {
            zoning_types: (0..zones).map(|i| format!("Z{i}")).collect(),
            room_types,
            grid_labels,
        }
    }

    /// Connected random graph: a random spanning tree plus a few chords.
    pub fn random_graph(vocab: &LabelVocabulary, nodes: usize, rng: &mut impl Rng) -> AccessGraph {
        let graph_nodes = (0..nodes)
            .map(|i| GraphNode {
                id: i as u32,
                zoning: vocab.zoning_types[rng.random_range(0..vocab.zoning_types.len())].clone(),
                room_type: None,
                polygon: None,
            })
            .collect();
        let mut pairs = std::collections::BTreeSet::new();
        let mut edges = Vec::new();
        let mut push = |a: usize, b: usize, rng: &mut dyn rand::RngCore| {
            if a != b && pairs.insert((a.min(b), a.max(b))) {
                edges.push(GraphEdge {
                    a: a as u32,
                    b: b as u32,
                    kind: ConnectionType::ALL[rng.random_range(0..3)],
                });
            }
        };
        for i in 1..nodes {
            let j = rng.random_range(0..i);
            push(j, i, rng);
        }
        for _ in 0..nodes / 3 {
            let (a, b) = (rng.random_range(0..nodes), rng.random_range(0..nodes));
            push(a, b, rng);
        }
        AccessGraph {
            nodes: graph_nodes,
            edges,
        }
    }

    /// Room type index equals zoning index.
    pub fn label_bijective(graph: &mut AccessGraph, vocab: &LabelVocabulary) {
        for n in &mut graph.nodes {
            let z = vocab.zoning_index(&n.zoning).expect("known zoning");
            n.room_type = Some(vocab.room_types[z].clone());
        }
    }

    /// Most frequent zoning index among the node and its neighbours; ties go
    /// to the lowest index.
    pub fn majority_rule(graph: &AccessGraph, vocab: &LabelVocabulary) -> Vec<usize> {
        let n = graph.nodes.len();
        let zones: Vec<usize> = graph
            .nodes
            .iter()
            .map(|node| vocab.zoning_index(&node.zoning).expect("known zoning"))
            .collect();
        let mut counts = vec![vec![0usize; vocab.zoning_types.len()]; n];
        for i in 0..n {
            counts[i][zones[i]] += 1;
        }
        for (a, b, _) in graph.edge_positions() {
            counts[a][zones[b]] += 1;
            counts[b][zones[a]] += 1;
        }
        counts
            .iter()
            .map(|c| {
                let mut best = 0;
                for (k, &v) in c.iter().enumerate() {
                    if v > c[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    pub fn label_majority(graph: &mut AccessGraph, vocab: &LabelVocabulary) {
        let labels = majority_rule(graph, vocab);
        for (node, t) in graph.nodes.iter_mut().zip(labels) {
            node.room_type = Some(vocab.room_types[t].clone());
        }
    }

    pub fn bijective_dataset(
        vocab: &LabelVocabulary,
        count: usize,
        nodes: std::ops::RangeInclusive<usize>,
        seed: u64,
    ) -> Vec<AccessGraph> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let n = rng.random_range(nodes.clone());
                let mut g = random_graph(vocab, n, &mut rng);
                label_bijective(&mut g, vocab);
                g
            })
            .collect()
    }

    pub fn majority_dataset(
        vocab: &LabelVocabulary,
        count: usize,
        nodes: std::ops::RangeInclusive<usize>,
        seed: u64,
    ) -> Vec<AccessGraph> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let n = rng.random_range(nodes.clone());
                let mut g = random_graph(vocab, n, &mut rng);
                label_majority(&mut g, vocab);
                g
            })
            .collect()
    }
}
