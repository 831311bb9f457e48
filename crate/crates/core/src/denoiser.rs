//! Structure-conditioned corner denoiser.
//!
//! Every room is four corner tokens. A stack of blocks mixes them with three
//! masked self-attentions (same room, all corners, door-connected rooms) and a
//! cross-attention from room corners to wall-endpoint tokens, then a
//! feed-forward layer. A continuous head predicts coordinate noise for the
//! early steps and a bit head predicts 8-bit coordinate codes for the last
//! `discrete_steps` steps.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::geometry::{min_rotated_rect_of_points, FloorPlan, Point, Polygon, Room};
use crate::graph::{AccessGraph, ConnectionType, LabelVocabulary};
use crate::skeleton::WallSet;

pub const CHECKPOINT_KIND: &str = "corner-denoiser";
pub const CORNERS_PER_ROOM: usize = 4;
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub model_dim: usize,
    pub num_blocks: usize,
    pub encoder_layers: usize,
    pub ffn_dim: usize,
    pub num_room_types: usize,
    pub total_steps: usize,
    pub discrete_steps: usize,
    pub bits: usize,
    /// Let relational attention follow entrance and passage edges too.
    #[serde(default)]
    pub rca_all_connections: bool,
}

impl DenoiserConfig {
    pub fn new(num_room_types: usize) -> Self {
        Self {
            model_dim: 128,
            num_blocks: 4,
            encoder_layers: 2,
            ffn_dim: 256,
            num_room_types,
            total_steps: 1000,
            discrete_steps: 32,
            bits: 8,
            rca_all_connections: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.ffn_dim == 0 || self.num_room_types == 0 {
            return Err(Error::Argument(
                "denoiser dimensions must be positive".into(),
            ));
        }
        if self.total_steps == 0 {
            return Err(Error::Argument(
                "at least one diffusion step is required".into(),
            ));
        }
        if self.discrete_steps > self.total_steps {
            return Err(Error::Argument(format!(
                "discrete steps {} exceed total steps {}",
                self.discrete_steps, self.total_steps
            )));
        }
        if !(1..=16).contains(&self.bits) {
            return Err(Error::Argument("bit depth must lie in 1..=16".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::cosine(self.total_steps, self.discrete_steps)
    }
}

/// Cumulative signal fractions `alpha_bar[0..=T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub total_steps: usize,
    pub discrete_steps: usize,
    pub alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Cosine schedule with per-step betas capped at 0.999.
    pub fn cosine(total_steps: usize, discrete_steps: usize) -> Result<Self> {
        if total_steps == 0 || discrete_steps > total_steps {
            return Err(Error::Argument(format!(
                "invalid schedule: {total_steps} steps, {discrete_steps} discrete"
            )));
        }
        let f = |t: usize| {
            let u = (t as f64 / total_steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
            (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let mut alpha_bar = vec![1.0];
        for t in 1..=total_steps {
            let beta = (1.0 - f(t) / f(t - 1)).clamp(1e-8, MAX_BETA);
            alpha_bar.push(alpha_bar[t - 1] * (1.0 - beta));
        }
        Ok(Self {
            total_steps,
            discrete_steps,
            alpha_bar,
        })
    }

    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha_bar[t] / self.alpha_bar[t - 1]
    }
}

/// `sqrt(alpha_bar[t]) x0 + sqrt(1 - alpha_bar[t]) eps` with seeded Gaussian
/// `eps`.
pub fn add_noise(
    coords: &Array2<f64>,
    t: usize,
    schedule: &DiffusionSchedule,
    seed: u64,
) -> Result<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (noised, _) = add_noise_with(coords, t, schedule, &mut rng)?;
    Ok(noised)
}

fn add_noise_with(
    coords: &Array2<f64>,
    t: usize,
    schedule: &DiffusionSchedule,
    rng: &mut impl Rng,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if t > schedule.total_steps {
        return Err(Error::Argument(format!(
            "step {t} outside 0..={}",
            schedule.total_steps
        )));
    }
    let ab = schedule.alpha_bar[t];
    let eps = gaussian(coords.dim(), rng);
    let noised = if t == 0 {
        coords.clone()
    } else {
        coords * ab.sqrt() + &eps * (1.0 - ab).sqrt()
    };
    Ok((noised, eps))
}

fn gaussian(shape: (usize, usize), rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
}

/// Boolean masks over room-corner tokens (`4 * rooms`) and structural tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaskSet {
    pub csa: Array2<bool>,
    pub gsa: Array2<bool>,
    pub rca: Array2<bool>,
    pub sca: Array2<bool>,
}

impl AttentionMaskSet {
    pub fn corner_count(&self) -> usize {
        self.csa.nrows()
    }

    pub fn structural_count(&self) -> usize {
        self.sca.ncols()
    }

    /// Masks after reordering rooms so that new room `k` is old room `perm[k]`.
    pub fn permute_rooms(&self, perm: &[usize]) -> Self {
        let corner =
            |p: usize| perm[p / CORNERS_PER_ROOM] * CORNERS_PER_ROOM + p % CORNERS_PER_ROOM;
        let square =
            |m: &Array2<bool>| Array2::from_shape_fn(m.dim(), |(p, q)| m[[corner(p), corner(q)]]);
        Self {
            csa: square(&self.csa),
            gsa: square(&self.gsa),
            rca: square(&self.rca),
            sca: Array2::from_shape_fn(self.sca.dim(), |(p, k)| self.sca[[corner(p), k]]),
        }
    }
}

/// Builds the four masks for `graph.len()` rooms and `structural_count` wall
/// endpoint tokens. Relational attention follows door edges, or every edge
/// when `all_connections` is set.
pub fn build_masks(
    graph: &AccessGraph,
    structural_count: usize,
    all_connections: bool,
) -> AttentionMaskSet {
    let rooms = graph.len();
    let n = rooms * CORNERS_PER_ROOM;
    let mut linked = vec![vec![false; rooms]; rooms];
    for (a, b, kind) in graph.edge_positions() {
        if a != b && (all_connections || kind == ConnectionType::Door) {
            linked[a][b] = true;
            linked[b][a] = true;
        }
    }
    let room = |p: usize| p / CORNERS_PER_ROOM;
    AttentionMaskSet {
        csa: Array2::from_shape_fn((n, n), |(p, q)| room(p) == room(q)),
        gsa: Array2::from_elem((n, n), true),
        rca: Array2::from_shape_fn((n, n), |(p, q)| linked[room(p)][room(q)]),
        sca: Array2::from_elem((n, structural_count), true),
    }
}

/// Scaled dot-product attention restricted to allowed keys. Disallowed keys
/// are never read; a row with no allowed key yields zeros.
pub fn masked_attention(
    queries: ArrayView2<f64>,
    keys: ArrayView2<f64>,
    values: ArrayView2<f64>,
    mask: ArrayView2<bool>,
) -> Result<Array2<f64>> {
    if queries.ncols() != keys.ncols()
        || keys.nrows() != values.nrows()
        || mask.dim() != (queries.nrows(), keys.nrows())
    {
        return Err(Error::Argument(format!(
            "attention shapes disagree: q {:?}, k {:?}, v {:?}, mask {:?}",
            queries.dim(),
            keys.dim(),
            values.dim(),
            mask.dim()
        )));
    }
    let finite = |a: &ArrayView2<f64>| a.iter().all(|v| v.is_finite());
    if !finite(&queries) || !finite(&keys) || !finite(&values) {
        return Err(Error::Numeric(
            "attention input contains NaN or infinity".into(),
        ));
    }
    let scale = 1.0 / (queries.ncols().max(1) as f64).sqrt();
    let mut out = Array2::zeros((queries.nrows(), values.ncols()));
    let mut scores = Vec::new();
    for (i, q) in queries.rows().into_iter().enumerate() {
        scores.clear();
        for j in 0..keys.nrows() {
            if mask[[i, j]] {
                scores.push((j, q.dot(&keys.row(j)) * scale));
            }
        }
        if scores.is_empty() {
            continue;
        }
        let max = scores.iter().fold(f64::NEG_INFINITY, |m, &(_, s)| m.max(s));
        let total: f64 = scores.iter().map(|&(_, s)| (s - max).exp()).sum();
        let mut row = out.row_mut(i);
        for &(j, s) in &scores {
            row.scaled_add((s - max).exp() / total, &values.row(j));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn: Attention,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub csa: Attention,
    pub gsa: Attention,
    pub rca: Attention,
    pub sca: Attention,
    pub ffn: FeedForward,
}

/// Weights are stored input-major: a layer maps `x` to `x.dot(w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub corner_in: Array2<f64>,
    pub corner_bias: Array1<f64>,
    pub room_type_embed: Array2<f64>,
    pub corner_index_embed: Array2<f64>,
    pub time_proj: Array2<f64>,
    pub time_bias: Array1<f64>,
    pub struct_in: Array2<f64>,
    pub struct_bias: Array1<f64>,
    pub encoder: Vec<EncoderLayer>,
    pub blocks: Vec<Block>,
    pub noise_head: Array2<f64>,
    pub noise_bias: Array1<f64>,
    pub bit_head: Array2<f64>,
    pub bit_bias: Array1<f64>,
}

fn normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let std = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        std * Distribution::<f64>::sample(&StandardNormal, &mut *rng)
    })
}

impl Attention {
    fn random(d: usize, rng: &mut impl Rng) -> Self {
        Self {
            wq: normal(rng, d, d),
            wk: normal(rng, d, d),
            wv: normal(rng, d, d),
            wo: normal(rng, d, d),
        }
    }

    fn apply(
        &self,
        x: &Array2<f64>,
        ctx: &Array2<f64>,
        mask: ArrayView2<bool>,
    ) -> Result<Array2<f64>> {
        let q = x.dot(&self.wq);
        let k = ctx.dot(&self.wk);
        let v = ctx.dot(&self.wv);
        Ok(masked_attention(q.view(), k.view(), v.view(), mask)?.dot(&self.wo))
    }
}

impl FeedForward {
    fn random(d: usize, f: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: normal(rng, d, f),
            b1: Array1::zeros(f),
            w2: normal(rng, f, d),
            b2: Array1::zeros(d),
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let h = (x.dot(&self.w1) + &self.b1).mapv(|v| v.max(0.0));
        h.dot(&self.w2) + &self.b2
    }
}

fn layer_norm(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.mapv(|v| (v - mean).powi(2)).sum() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

fn time_embedding(t: usize, d: usize) -> Array1<f64> {
    let half = d / 2;
    let mut out = Array1::zeros(d);
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        out[2 * k] = (t as f64 * freq).sin();
        out[2 * k + 1] = (t as f64 * freq).cos();
    }
    out
}

impl DenoiserParams {
    pub fn random(config: &DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        let f = config.ffn_dim;
        let rng = &mut rng;
        Ok(Self {
            corner_in: normal(rng, 2, d),
            corner_bias: Array1::zeros(d),
            room_type_embed: normal(rng, config.num_room_types, d),
            corner_index_embed: normal(rng, CORNERS_PER_ROOM, d),
            time_proj: normal(rng, d, d),
            time_bias: Array1::zeros(d),
            struct_in: normal(rng, 4, d),
            struct_bias: Array1::zeros(d),
            encoder: (0..config.encoder_layers)
                .map(|_| EncoderLayer {
                    attn: Attention::random(d, rng),
                    ffn: FeedForward::random(d, f, rng),
                })
                .collect(),
            blocks: (0..config.num_blocks)
                .map(|_| Block {
                    csa: Attention::random(d, rng),
                    gsa: Attention::random(d, rng),
                    rca: Attention::random(d, rng),
                    sca: Attention::random(d, rng),
                    ffn: FeedForward::random(d, f, rng),
                })
                .collect(),
            noise_head: normal(rng, d, 2),
            noise_bias: Array1::zeros(2),
            bit_head: normal(rng, d, 2 * config.bits),
            bit_bias: Array1::zeros(2 * config.bits),
        })
    }

    pub fn to_checkpoint(&self, config: &DenoiserConfig) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, config)?;
        ck.put2("embed.corner.weight", &self.corner_in);
        ck.put1("embed.corner.bias", &self.corner_bias);
        ck.put2("embed.room_type", &self.room_type_embed);
        ck.put2("embed.corner_index", &self.corner_index_embed);
        ck.put2("embed.time.weight", &self.time_proj);
        ck.put1("embed.time.bias", &self.time_bias);
        ck.put2("embed.structural.weight", &self.struct_in);
        ck.put1("embed.structural.bias", &self.struct_bias);
        let put_attn = |ck: &mut Checkpoint, p: &str, a: &Attention| {
            ck.put2(format!("{p}.q"), &a.wq);
            ck.put2(format!("{p}.k"), &a.wk);
            ck.put2(format!("{p}.v"), &a.wv);
            ck.put2(format!("{p}.o"), &a.wo);
        };
        let put_ffn = |ck: &mut Checkpoint, p: &str, f: &FeedForward| {
            ck.put2(format!("{p}.w1"), &f.w1);
            ck.put1(format!("{p}.b1"), &f.b1);
            ck.put2(format!("{p}.w2"), &f.w2);
            ck.put1(format!("{p}.b2"), &f.b2);
        };
        for (l, layer) in self.encoder.iter().enumerate() {
            put_attn(&mut ck, &format!("encoder.{l}.attn"), &layer.attn);
            put_ffn(&mut ck, &format!("encoder.{l}.ffn"), &layer.ffn);
        }
        for (b, block) in self.blocks.iter().enumerate() {
            put_attn(&mut ck, &format!("block.{b}.csa"), &block.csa);
            put_attn(&mut ck, &format!("block.{b}.gsa"), &block.gsa);
            put_attn(&mut ck, &format!("block.{b}.rca"), &block.rca);
            put_attn(&mut ck, &format!("block.{b}.sca"), &block.sca);
            put_ffn(&mut ck, &format!("block.{b}.ffn"), &block.ffn);
        }
        ck.put2("head.noise.weight", &self.noise_head);
        ck.put1("head.noise.bias", &self.noise_bias);
        ck.put2("head.bits.weight", &self.bit_head);
        ck.put1("head.bits.bias", &self.bit_bias);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, DenoiserConfig)> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let config: DenoiserConfig = ck.config()?;
        config.validate()?;
        let d = config.model_dim;
        let f = config.ffn_dim;
        let attn = |p: &str| -> Result<Attention> {
            Ok(Attention {
                wq: ck.take2(&format!("{p}.q"), d, d)?,
                wk: ck.take2(&format!("{p}.k"), d, d)?,
                wv: ck.take2(&format!("{p}.v"), d, d)?,
                wo: ck.take2(&format!("{p}.o"), d, d)?,
            })
        };
        let ffn = |p: &str| -> Result<FeedForward> {
            Ok(FeedForward {
                w1: ck.take2(&format!("{p}.w1"), d, f)?,
                b1: ck.take1(&format!("{p}.b1"), f)?,
                w2: ck.take2(&format!("{p}.w2"), f, d)?,
                b2: ck.take1(&format!("{p}.b2"), d)?,
            })
        };
        let params = Self {
            corner_in: ck.take2("embed.corner.weight", 2, d)?,
            corner_bias: ck.take1("embed.corner.bias", d)?,
            room_type_embed: ck.take2("embed.room_type", config.num_room_types, d)?,
            corner_index_embed: ck.take2("embed.corner_index", CORNERS_PER_ROOM, d)?,
            time_proj: ck.take2("embed.time.weight", d, d)?,
            time_bias: ck.take1("embed.time.bias", d)?,
            struct_in: ck.take2("embed.structural.weight", 4, d)?,
            struct_bias: ck.take1("embed.structural.bias", d)?,
            encoder: (0..config.encoder_layers)
                .map(|l| {
                    Ok(EncoderLayer {
                        attn: attn(&format!("encoder.{l}.attn"))?,
                        ffn: ffn(&format!("encoder.{l}.ffn"))?,
                    })
                })
                .collect::<Result<_>>()?,
            blocks: (0..config.num_blocks)
                .map(|b| {
                    Ok(Block {
                        csa: attn(&format!("block.{b}.csa"))?,
                        gsa: attn(&format!("block.{b}.gsa"))?,
                        rca: attn(&format!("block.{b}.rca"))?,
                        sca: attn(&format!("block.{b}.sca"))?,
                        ffn: ffn(&format!("block.{b}.ffn"))?,
                    })
                })
                .collect::<Result<_>>()?,
            noise_head: ck.take2("head.noise.weight", d, 2)?,
            noise_bias: ck.take1("head.noise.bias", 2)?,
            bit_head: ck.take2("head.bits.weight", d, 2 * config.bits)?,
            bit_bias: ck.take1("head.bits.bias", 2 * config.bits)?,
        };
        Ok((params, config))
    }

    pub fn save(&self, config: &DenoiserConfig, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint(config)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, DenoiserConfig)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// One token per wall endpoint, `[x, y, x_other, y_other]`, in segment order
/// (`p0` then `p1`).
pub fn structural_tokens(walls: &WallSet) -> Array2<f64> {
    let mut out = Array2::zeros((2 * walls.segments.len(), 4));
    for (k, seg) in walls.segments.iter().enumerate() {
        let (a, b) = (seg.p0, seg.p1);
        out.row_mut(2 * k)
            .assign(&Array1::from(vec![a[0], a[1], b[0], b[1]]));
        out.row_mut(2 * k + 1)
            .assign(&Array1::from(vec![b[0], b[1], a[0], a[1]]));
    }
    out
}

/// Embeds wall endpoints and runs the full self-attention encoder over them.
pub fn structural_encode(walls: &WallSet, params: &DenoiserParams) -> Result<Array2<f64>> {
    let tokens = structural_tokens(walls);
    let d = params.struct_in.ncols();
    if tokens.nrows() == 0 {
        return Ok(Array2::zeros((0, d)));
    }
    let mut x = tokens.dot(&params.struct_in) + &params.struct_bias;
    let all = Array2::from_elem((x.nrows(), x.nrows()), true);
    for layer in &params.encoder {
        let n = layer_norm(&x);
        x += &layer.attn.apply(&n, &n, all.view())?;
        x += &layer.ffn.apply(&layer_norm(&x));
    }
    Ok(x)
}

/// Corner coordinates (`4 * rooms` rows, corner `j` of room `i` at row
/// `4 i + j`) and the room-type index of every room.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserState {
    pub coords: Array2<f64>,
    pub room_types: Vec<usize>,
}

impl DenoiserState {
    pub fn permute_rooms(&self, perm: &[usize]) -> Self {
        let mut coords = Array2::zeros(self.coords.dim());
        for (new, &old) in perm.iter().enumerate() {
            coords
                .slice_mut(s![new * 4..new * 4 + 4, ..])
                .assign(&self.coords.slice(s![old * 4..old * 4 + 4, ..]));
        }
        Self {
            coords,
            room_types: perm.iter().map(|&o| self.room_types[o]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutput {
    /// Predicted noise, one `(dx, dy)` row per corner.
    Noise(Array2<f64>),
    /// Per-bit logits, `bits` for x then `bits` for y, most significant first.
    BitLogits(Array2<f64>),
}

impl StepOutput {
    pub fn matrix(&self) -> &Array2<f64> {
        match self {
            StepOutput::Noise(m) | StepOutput::BitLogits(m) => m,
        }
    }
}

fn check_step_inputs(
    state: &DenoiserState,
    walls_encoded: &Array2<f64>,
    masks: &AttentionMaskSet,
    params: &DenoiserParams,
) -> Result<()> {
    let n = state.room_types.len() * CORNERS_PER_ROOM;
    let d = params.corner_in.ncols();
    if state.coords.dim() != (n, 2) {
        return Err(Error::Argument(format!(
            "expected {n} corner rows, got {:?}",
            state.coords.dim()
        )));
    }
    if masks.corner_count() != n || masks.structural_count() != walls_encoded.nrows() {
        return Err(Error::Argument(format!(
            "masks cover {} corners and {} structural tokens, inputs have {n} and {}",
            masks.corner_count(),
            masks.structural_count(),
            walls_encoded.nrows()
        )));
    }
    if walls_encoded.ncols() != d {
        return Err(Error::Argument(format!(
            "structural tokens have width {}, model width is {d}",
            walls_encoded.ncols()
        )));
    }
    if let Some(&bad) = state
        .room_types
        .iter()
        .find(|&&r| r >= params.room_type_embed.nrows())
    {
        return Err(Error::Argument(format!(
            "room type index {bad} out of range"
        )));
    }
    Ok(())
}

/// Final normalised token features before either head.
fn trunk(
    state: &DenoiserState,
    t: usize,
    walls_encoded: &Array2<f64>,
    masks: &AttentionMaskSet,
    params: &DenoiserParams,
) -> Result<Array2<f64>> {
    check_step_inputs(state, walls_encoded, masks, params)?;
    let d = params.corner_in.ncols();
    let time = time_embedding(t, d).dot(&params.time_proj) + &params.time_bias;
    let mut x = state.coords.dot(&params.corner_in) + &params.corner_bias + &time;
    for (p, mut row) in x.rows_mut().into_iter().enumerate() {
        row += &params
            .room_type_embed
            .row(state.room_types[p / CORNERS_PER_ROOM]);
        row += &params.corner_index_embed.row(p % CORNERS_PER_ROOM);
    }
    for block in &params.blocks {
        let n = layer_norm(&x);
        let mut mixed = block.csa.apply(&n, &n, masks.csa.view())?;
        mixed += &block.gsa.apply(&n, &n, masks.gsa.view())?;
        mixed += &block.rca.apply(&n, &n, masks.rca.view())?;
        if walls_encoded.nrows() > 0 {
            mixed += &block.sca.apply(&n, walls_encoded, masks.sca.view())?;
        }
        x += &mixed;
        x += &block.ffn.apply(&layer_norm(&x));
    }
    Ok(layer_norm(&x))
}

/// One denoiser evaluation. Steps above `discrete_steps` use the noise head,
/// the rest the bit head.
pub fn denoise_step(
    state: &DenoiserState,
    t: usize,
    walls_encoded: &Array2<f64>,
    masks: &AttentionMaskSet,
    params: &DenoiserParams,
    config: &DenoiserConfig,
) -> Result<StepOutput> {
    if t == 0 || t > config.total_steps {
        return Err(Error::Argument(format!(
            "step {t} outside 1..={}",
            config.total_steps
        )));
    }
    let h = trunk(state, t, walls_encoded, masks, params)?;
    let out = if t > config.discrete_steps {
        StepOutput::Noise(h.dot(&params.noise_head) + &params.noise_bias)
    } else {
        StepOutput::BitLogits(h.dot(&params.bit_head) + &params.bit_bias)
    };
    if out.matrix().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "denoiser output at step {t} is not finite"
        )));
    }
    Ok(out)
}

/// Maps `[-1, 1]` to `0..2^bits - 1`.
pub fn quantize(v: f64, bits: usize) -> u32 {
    let levels = ((1u32 << bits) - 1) as f64;
    ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * levels).round() as u32
}

pub fn dequantize(code: u32, bits: usize) -> f64 {
    let levels = ((1u32 << bits) - 1) as f64;
    code as f64 / levels * 2.0 - 1.0
}

fn to_bits(code: u32, bits: usize) -> impl Iterator<Item = bool> {
    (0..bits).rev().map(move |b| (code >> b) & 1 == 1)
}

fn from_bits(bits: &[bool]) -> u32 {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as u32)
}

fn coords_from_bits(bits: &Array2<bool>, depth: usize) -> Array2<f64> {
    Array2::from_shape_fn((bits.nrows(), 2), |(p, c)| {
        let row: Vec<bool> = bits.row(p).slice(s![c * depth..(c + 1) * depth]).to_vec();
        dequantize(from_bits(&row), depth)
    })
}

fn bits_from_coords(coords: &Array2<f64>, depth: usize) -> Array2<bool> {
    let mut out = Array2::from_elem((coords.nrows(), 2 * depth), false);
    for p in 0..coords.nrows() {
        for c in 0..2 {
            for (b, bit) in to_bits(quantize(coords[[p, c]], depth), depth).enumerate() {
                out[[p, c * depth + b]] = bit;
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inputs of one sampling run.
pub struct SampleRequest<'a> {
    pub graph: &'a AccessGraph,
    pub walls: &'a WallSet,
    pub vocab: &'a LabelVocabulary,
    pub seed: u64,
}

/// Raw corner coordinates after the full reverse process, clamped to `[-1, 1]`.
pub fn sample_corners(
    req: &SampleRequest,
    params: &DenoiserParams,
    config: &DenoiserConfig,
) -> Result<Array2<f64>> {
    config.validate()?;
    let schedule = config.schedule()?;
    let room_types = req
        .graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let name = n.room_type.as_deref().ok_or_else(|| {
                Error::Validation(format!("node {i} (id {}) has no room type", n.id))
            })?;
            req.vocab
                .room_type_index(name)
                .ok_or_else(|| Error::Validation(format!("node {i}: unknown room type {name:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let walls_encoded = structural_encode(req.walls, params)?;
    let masks = build_masks(req.graph, walls_encoded.nrows(), config.rca_all_connections);
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut state = DenoiserState {
        coords: gaussian((room_types.len() * CORNERS_PER_ROOM, 2), &mut rng),
        room_types,
    };
    if state.room_types.is_empty() {
        return Ok(state.coords);
    }

    for t in (config.discrete_steps + 1..=config.total_steps).rev() {
        let eps = match denoise_step(&state, t, &walls_encoded, &masks, params, config)? {
            StepOutput::Noise(e) => e,
            StepOutput::BitLogits(_) => unreachable!("continuous phase"),
        };
        let ab = schedule.alpha_bar[t];
        let ab_prev = schedule.alpha_bar[t - 1];
        let beta = schedule.beta(t);
        let x = &state.coords;
        let x0 = ((x - &(&eps * (1.0 - ab).sqrt())) / ab.sqrt()).mapv(|v| v.clamp(-1.0, 1.0));
        let mean = &x0 * (ab_prev.sqrt() * beta / (1.0 - ab))
            + x * ((1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab));
        state.coords = if t > 1 {
            let var = beta * (1.0 - ab_prev) / (1.0 - ab);
            mean + gaussian(x.dim(), &mut rng) * var.sqrt()
        } else {
            mean
        };
    }

    if config.discrete_steps > 0 {
        let depth = config.bits;
        let mut bits = bits_from_coords(&state.coords, depth);
        for t in (1..=config.discrete_steps).rev() {
            state.coords = coords_from_bits(&bits, depth);
            let logits = match denoise_step(&state, t, &walls_encoded, &masks, params, config)? {
                StepOutput::BitLogits(l) => l,
                StepOutput::Noise(_) => unreachable!("discrete phase"),
            };
            bits = if t > 1 {
                logits.mapv(|l| rng.random::<f64>() < sigmoid(l))
            } else {
                logits.mapv(|l| l > 0.0)
            };
        }
        state.coords = coords_from_bits(&bits, depth);
    }
    Ok(state.coords.mapv(|v| v.clamp(-1.0, 1.0)))
}

fn quad(points: Vec<Point>) -> Option<Polygon> {
    Polygon::new(points)
        .ok()
        .filter(|p| p.ring().len() == CORNERS_PER_ROOM && p.is_simple())
}

fn clamp_point(p: Point) -> Point {
    Point::new(p.x.clamp(-1.0, 1.0), p.y.clamp(-1.0, 1.0))
}

/// Four counter-clockwise corners for one sampled room: the clamped minimum
/// rotated rectangle, else the angle-sorted corners, else a small square at
/// their mean.
pub fn room_polygon(corners: &[Point]) -> Polygon {
    if let Ok(rect) = min_rotated_rect_of_points(corners) {
        if let Some(p) = quad(rect.corners.iter().copied().map(clamp_point).collect()) {
            return p;
        }
    }
    let n = corners.len() as f64;
    let c = Point::new(
        corners.iter().map(|p| p.x).sum::<f64>() / n,
        corners.iter().map(|p| p.y).sum::<f64>() / n,
    );
    let mut sorted: Vec<Point> = corners.iter().copied().map(clamp_point).collect();
    sorted.sort_by(|a, b| {
        let ta = (a.y - c.y).atan2(a.x - c.x);
        let tb = (b.y - c.y).atan2(b.x - c.x);
        ta.total_cmp(&tb)
    });
    if let Some(p) = quad(sorted) {
        return p;
    }
    let h = 0.01;
    let cx = c.x.clamp(-1.0 + h, 1.0 - h);
    let cy = c.y.clamp(-1.0 + h, 1.0 - h);
    Polygon::new(vec![
        Point::new(cx - h, cy - h),
        Point::new(cx + h, cy - h),
        Point::new(cx + h, cy + h),
        Point::new(cx - h, cy + h),
    ])
    .expect("square is valid")
}

/// Runs the reverse process and turns each room's corners into a polygon.
pub fn sample(
    req: &SampleRequest,
    params: &DenoiserParams,
    config: &DenoiserConfig,
) -> Result<FloorPlan> {
    let coords = sample_corners(req, params, config)?;
    let rooms = req
        .graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let corners: Vec<Point> = (0..CORNERS_PER_ROOM)
                .map(|j| {
                    let r = i * CORNERS_PER_ROOM + j;
                    Point::new(coords[[r, 0]], coords[[r, 1]])
                })
                .collect();
            Room {
                id: node.id,
                room_type: node.room_type.clone().unwrap_or_default(),
                polygon: room_polygon(&corners),
            }
        })
        .collect();
    Ok(FloorPlan {
        rooms,
        walls: req.walls.clone(),
    })
}

/// One supervised example for the head-only training harness.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub state: DenoiserState,
    pub walls_encoded: Array2<f64>,
    pub masks: AttentionMaskSet,
}

/// Output-head parameters, the only ones the harness updates.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub noise_head: Array2<f64>,
    pub noise_bias: Array1<f64>,
    pub bit_head: Array2<f64>,
    pub bit_bias: Array1<f64>,
}

impl HeadParams {
    pub fn of(params: &DenoiserParams) -> Self {
        Self {
            noise_head: params.noise_head.clone(),
            noise_bias: params.noise_bias.clone(),
            bit_head: params.bit_head.clone(),
            bit_bias: params.bit_bias.clone(),
        }
    }

    pub fn install(&self, params: &mut DenoiserParams) {
        params.noise_head.assign(&self.noise_head);
        params.noise_bias.assign(&self.noise_bias);
        params.bit_head.assign(&self.bit_head);
        params.bit_bias.assign(&self.bit_bias);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.noise_head
            .iter()
            .chain(&self.noise_bias)
            .chain(&self.bit_head)
            .chain(&self.bit_bias)
            .copied()
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for v in self
            .noise_head
            .iter_mut()
            .chain(self.noise_bias.iter_mut())
            .chain(self.bit_head.iter_mut())
            .chain(self.bit_bias.iter_mut())
        {
            *v = it.next().expect("flat vector too short");
        }
        assert!(it.next().is_none(), "flat vector too long");
    }
}

/// Loss at one step with fixed corruption. Continuous steps use mean squared
/// noise error; discrete steps use mean bit cross-entropy against the clean
/// codes, with each input bit flipped with probability `(1 - alpha_bar) / 2`.
#[derive(Debug, Clone)]
pub struct Corruption {
    pub t: usize,
    input: Array2<f64>,
    target: Array2<f64>,
}

impl Corruption {
    pub fn draw(
        example: &TrainingExample,
        t: usize,
        schedule: &DiffusionSchedule,
        bits: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let clean = &example.state.coords;
        if t > schedule.discrete_steps {
            let (noised, eps) = add_noise_with(clean, t, schedule, rng)?;
            Ok(Self {
                t,
                input: noised,
                target: eps,
            })
        } else {
            let code = bits_from_coords(clean, bits);
            let flip = (1.0 - schedule.alpha_bar[t]) / 2.0;
            let noisy = code.mapv(|b| if rng.random::<f64>() < flip { !b } else { b });
            Ok(Self {
                t,
                input: coords_from_bits(&noisy, bits),
                target: code.mapv(|b| if b { 1.0 } else { 0.0 }),
            })
        }
    }
}

/// Loss and its gradient with respect to the head parameters.
pub fn head_loss_and_gradient(
    example: &TrainingExample,
    corruption: &Corruption,
    params: &DenoiserParams,
    config: &DenoiserConfig,
) -> Result<(f64, HeadParams)> {
    let state = DenoiserState {
        coords: corruption.input.clone(),
        room_types: example.state.room_types.clone(),
    };
    let h = trunk(
        &state,
        corruption.t,
        &example.walls_encoded,
        &example.masks,
        params,
    )?;
    let mut grads = HeadParams::of(params);
    grads.set_flat(&vec![0.0; grads.to_flat().len()]);
    let target = &corruption.target;
    let count = target.len() as f64;
    if corruption.t > config.discrete_steps {
        let pred = h.dot(&params.noise_head) + &params.noise_bias;
        let diff = &pred - target;
        let loss = diff.mapv(|v| v * v).sum() / count;
        let dpred = diff * (2.0 / count);
        grads.noise_head = h.t().dot(&dpred);
        grads.noise_bias = dpred.sum_axis(Axis(0));
        Ok((loss, grads))
    } else {
        let logits = h.dot(&params.bit_head) + &params.bit_bias;
        let mut loss = 0.0;
        for (&l, &y) in logits.iter().zip(target) {
            // log(1 + e^l) - y l, computed stably
            loss += l.max(0.0) + (-l.abs()).exp().ln_1p() - y * l;
        }
        loss /= count;
        let dlogits = (logits.mapv(sigmoid) - target) / count;
        grads.bit_head = h.t().dot(&dlogits);
        grads.bit_bias = dlogits.sum_axis(Axis(0));
        Ok((loss, grads))
    }
}

/// Plain gradient descent on the heads over freshly corrupted examples.
/// Returns the loss of every update.
pub fn train_heads(
    params: &mut DenoiserParams,
    config: &DenoiserConfig,
    examples: &[TrainingExample],
    updates: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if examples.is_empty() {
        return Err(Error::Argument("no training examples".into()));
    }
    let schedule = config.schedule()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut heads = HeadParams::of(params);
    let mut losses = Vec::with_capacity(updates);
    for u in 0..updates {
        let example = &examples[u % examples.len()];
        let t = rng.random_range(1..=config.total_steps);
        let corruption = Corruption::draw(example, t, &schedule, config.bits, &mut rng)?;
        let (loss, grads) = head_loss_and_gradient(example, &corruption, params, config)?;
        let mut flat = heads.to_flat();
        for (p, g) in flat.iter_mut().zip(grads.to_flat()) {
            *p -= learning_rate * g;
        }
        heads.set_flat(&flat);
        heads.install(params);
        losses.push(loss);
    }
    Ok(losses)
}
