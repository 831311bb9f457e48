use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use floorplan_core::denoiser::{self, DenoiserConfig, DenoiserParams, SampleRequest};
use floorplan_core::eval::{evaluate_corpus, Aggregation, IoUReport};
use floorplan_core::geometry::{rasterize_floorplan, FloorPlan};
use floorplan_core::graph::{load_access_graph, AccessGraph, LabelVocabulary};
use floorplan_core::raster::{load_mask, Grid};
use floorplan_core::roomtype::{self, GatConfig, GatParams};
use floorplan_core::skeleton::{vectorize_walls, VectorizeOptions, WallSet};
use serde::Deserialize;

use crate::config::{pick, require, PipelineConfig};
use crate::{
    ApproxMrrArgs, AutocompleteArgs, Command, EvaluateArgs, ExtractWallsArgs, InitDenoiserArgs,
    InitRoomtypeArgs, PredictRoomtypeArgs, RenderArgs, RenderFormat, SampleArgs, SamplerFlags,
    SynthGraphsArgs, SynthRule, TrainRoomtypeArgs, VectorizeFlags,
};

type Outcome<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

pub fn run(command: Command, config: &PipelineConfig) -> Outcome<()> {
    match command {
        Command::ExtractWalls(a) => extract_walls(a, config),
        Command::ApproxMrr(a) => approx_mrr(a, config),
        Command::TrainRoomtype(a) => train_roomtype(a, config),
        Command::PredictRoomtype(a) => predict_roomtype(a, config),
        Command::Sample(a) => sample(a, config),
        Command::Autocomplete(a) => autocomplete(a, config),
        Command::Evaluate(a) => evaluate(a, config),
        Command::Render(a) => render(a, config),
        Command::InitRoomtype(a) => init_roomtype(a, config),
        Command::InitDenoiser(a) => init_denoiser(a, config),
        Command::SynthGraphs(a) => synth_graphs(a),
    }
}

fn load_vocab(config: &PipelineConfig, flag: Option<PathBuf>) -> Outcome<LabelVocabulary> {
    let path = require(config.vocab.clone(), flag, "vocab")?;
    LabelVocabulary::load(&path).map_err(err)
}

fn wall_labels(labels: &[u8]) -> BTreeSet<u8> {
    if labels.is_empty() {
        (1..=255).collect()
    } else {
        labels.iter().copied().collect()
    }
}

fn vectorize_options(flags: &VectorizeFlags, config: &PipelineConfig) -> Outcome<VectorizeOptions> {
    let options = VectorizeOptions {
        tolerance: pick(config.split_tolerance, flags.split_tolerance),
        min_length: pick(config.min_length, flags.min_length),
    };
    if !(options.tolerance > 0.0 && options.min_length >= 0.0) {
        return Err("split tolerance must be positive and min length non-negative".into());
    }
    Ok(options)
}

fn positive_eps(eps: f64) -> Outcome<f64> {
    if eps.is_finite() && eps > 0.0 {
        Ok(eps)
    } else {
        Err(format!("wall eps must be positive, got {eps}"))
    }
}

fn write_text(path: &Path, text: &str) -> Outcome<()> {
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn extract_walls(a: ExtractWallsArgs, config: &PipelineConfig) -> Outcome<()> {
    let mask_path = require(config.mask.clone(), a.mask, "mask")?;
    let mask = load_mask(&mask_path, &wall_labels(&a.labels)).map_err(err)?;
    let walls = vectorize_walls(&mask, vectorize_options(&a.vectorize, config)?);
    walls.save(&a.out).map_err(err)?;
    println!("{} wall segments", walls.segments.len());
    Ok(())
}

fn approx_mrr(a: ApproxMrrArgs, config: &PipelineConfig) -> Outcome<()> {
    let vocab = load_vocab(config, a.vocab)?;
    let mut plan = FloorPlan::load(&a.plan, &vocab).map_err(err)?;
    if let Some(w) = &a.walls {
        plan.walls = WallSet::load(w).map_err(err)?;
    }
    let eps = positive_eps(pick(config.wall_eps, a.wall_eps))?;
    let out = plan
        .approximate((!a.no_refine).then_some(eps))
        .map_err(err)?;
    out.save(&a.out).map_err(err)
}

fn load_graph_dir(dir: &Path, vocab: &LabelVocabulary) -> Outcome<Vec<AccessGraph>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| format!("cannot list {}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name().is_some_and(|n| n != "vocab.json")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(format!("no graph files in {}", dir.display()));
    }
    paths
        .iter()
        .map(|p| {
            let g = load_access_graph(p, vocab).map_err(|e| format!("{}: {e}", p.display()))?;
            g.room_type_targets(vocab)
                .map_err(|e| format!("{}: {e}", p.display()))?;
            Ok(g)
        })
        .collect()
}

fn train_roomtype(a: TrainRoomtypeArgs, config: &PipelineConfig) -> Outcome<()> {
    let vocab = load_vocab(config, a.vocab)?;
    let graphs = load_graph_dir(&a.data, &vocab)?;
    let (train, val) = match &a.val_data {
        Some(dir) => (graphs, load_graph_dir(dir, &vocab)?),
        None => roomtype::split_dataset(graphs, a.val_fraction, a.seed),
    };
    if a.layers.is_empty() {
        return Err("--layers needs at least one value".into());
    }
    let base = GatConfig {
        num_layers: a.layers[0],
        hidden_dim: a.hidden,
        dropout_rate: a.dropout,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        early_stop_tolerance: a.patience,
        seed: a.seed,
    };
    base.validate().map_err(err)?;

    if a.layers.len() > 1 {
        let rows = roomtype::layer_sweep(&train, &val, &vocab, &base, &a.layers).map_err(err)?;
        let table = roomtype::sweep_table(&rows);
        print!("{table}");
        if let Some(path) = &a.table {
            write_text(path, &table)?;
        }
        return Ok(());
    }

    let out = a
        .out
        .ok_or("--out is required when training a single model")?;
    let outcome = roomtype::train(&train, &val, &vocab, &base).map_err(err)?;
    outcome.params.save(&base, &out).map_err(err)?;
    if let Some(path) = &a.history {
        roomtype::write_history_csv(&outcome.history, path).map_err(err)?;
    }
    let best = outcome.best();
    println!(
        "best epoch {}: val loss {:.4}, mean val acc {:.4}",
        best.epoch, best.val_loss, best.mean_val_acc
    );
    Ok(())
}

fn load_gat(path: &Path, vocab: &LabelVocabulary) -> Outcome<(GatParams, GatConfig)> {
    let (params, gat) = GatParams::load(path).map_err(err)?;
    if params.input_dim() != vocab.zoning_types.len()
        || params.output_dim() != vocab.room_types.len()
    {
        return Err(format!(
            "checkpoint maps {} zoning types to {} room types; vocabulary has {} and {}",
            params.input_dim(),
            params.output_dim(),
            vocab.zoning_types.len(),
            vocab.room_types.len()
        ));
    }
    Ok((params, gat))
}

fn predict_roomtype(a: PredictRoomtypeArgs, config: &PipelineConfig) -> Outcome<()> {
    let vocab = load_vocab(config, a.vocab)?;
    let graph_path = require(config.graph.clone(), a.graph, "graph")?;
    let graph = load_access_graph(&graph_path, &vocab).map_err(err)?;
    let params_path = require(config.roomtype_params.clone(), a.params, "params")?;
    let (params, gat) = load_gat(&params_path, &vocab)?;
    let typed = roomtype::predict_room_types(&graph, &vocab, &params, &gat).map_err(err)?;
    typed.save(&a.out).map_err(err)
}

struct Sampler {
    params: DenoiserParams,
    config: DenoiserConfig,
    seed: u64,
    max_rooms: Option<usize>,
}

impl Sampler {
    fn load(
        path: &Path,
        flags: &SamplerFlags,
        vocab: &LabelVocabulary,
        config: &PipelineConfig,
    ) -> Outcome<Self> {
        let (params, mut dconfig) = DenoiserParams::load(path).map_err(err)?;
        if dconfig.num_room_types != vocab.room_types.len() {
            return Err(format!(
                "denoiser knows {} room types, vocabulary has {}",
                dconfig.num_room_types,
                vocab.room_types.len()
            ));
        }
        if let Some(t) = config.steps.or(flags.steps) {
            dconfig.total_steps = t;
        }
        if let Some(t) = config.discrete_steps.or(flags.discrete_steps) {
            dconfig.discrete_steps = t;
        }
        dconfig.validate().map_err(err)?;
        Ok(Self {
            params,
            config: dconfig,
            seed: pick(config.seed, flags.seed),
            max_rooms: config.max_rooms.or(flags.max_rooms),
        })
    }

    fn run(
        &self,
        graph: &AccessGraph,
        walls: &WallSet,
        vocab: &LabelVocabulary,
    ) -> Outcome<FloorPlan> {
        if let Some(max) = self.max_rooms {
            if graph.len() > max {
                return Err(format!(
                    "graph has {} rooms, more than --max-rooms {max}",
                    graph.len()
                ));
            }
        }
        let req = SampleRequest {
            graph,
            walls,
            vocab,
            seed: self.seed,
        };
        denoiser::sample(&req, &self.params, &self.config).map_err(err)
    }
}

fn sample(a: SampleArgs, config: &PipelineConfig) -> Outcome<()> {
    let vocab = load_vocab(config, a.vocab)?;
    let graph_path = require(config.graph.clone(), a.graph, "graph")?;
    let graph = load_access_graph(&graph_path, &vocab).map_err(err)?;
    let walls = WallSet::load(&a.walls).map_err(err)?;
    let params_path = require(config.denoiser_params.clone(), a.params, "params")?;
    let sampler = Sampler::load(&params_path, &a.sampler, &vocab, config)?;
    sampler
        .run(&graph, &walls, &vocab)?
        .save(&a.out)
        .map_err(err)
}

fn autocomplete(a: AutocompleteArgs, config: &PipelineConfig) -> Outcome<()> {
    let stage = |name: &'static str| move |e: String| format!("stage {name}: {e}");

    let (vocab, graph, gat, sampler, out_dir) = (|| {
        let vocab = load_vocab(config, a.vocab.clone())?;
        let graph_path = require(config.graph.clone(), a.graph.clone(), "graph")?;
        let graph = load_access_graph(&graph_path, &vocab).map_err(err)?;
        let gat_path = require(
            config.roomtype_params.clone(),
            a.roomtype_params.clone(),
            "roomtype-params",
        )?;
        let gat = load_gat(&gat_path, &vocab)?;
        let den_path = require(
            config.denoiser_params.clone(),
            a.denoiser_params.clone(),
            "denoiser-params",
        )?;
        let sampler = Sampler::load(&den_path, &a.sampler, &vocab, config)?;
        let out_dir = require(config.out_dir.clone(), a.out_dir.clone(), "out-dir")?;
        Ok((vocab, graph, gat, sampler, out_dir))
    })()
    .map_err(stage("load"))?;

    let mask_path = require(config.mask.clone(), a.mask.clone(), "mask").map_err(stage("load"))?;
    let (walls, mask_size) = (|| {
        let mask = load_mask(&mask_path, &wall_labels(&a.labels)).map_err(err)?;
        let walls = vectorize_walls(&mask, vectorize_options(&a.vectorize, config)?);
        Ok::<_, String>((walls, [mask.width(), mask.height()]))
    })()
    .map_err(stage("extract-walls"))?;

    let typed = roomtype::predict_room_types(&graph, &vocab, &gat.0, &gat.1)
        .map_err(err)
        .map_err(stage("predict-roomtype"))?;

    let sampled = sampler
        .run(&typed, &walls, &vocab)
        .map_err(stage("sample"))?;

    let plan = if a.no_refine {
        sampled
    } else {
        let eps = positive_eps(pick(config.wall_eps, a.wall_eps)).map_err(stage("refine"))?;
        sampled
            .approximate(Some(eps))
            .map_err(err)
            .map_err(stage("refine"))?
    };

    let [w, h] = match (config.raster_size, a.raster_size.as_deref()) {
        (Some(s), _) => s,
        (None, Some(&[w, h])) => [w, h],
        (None, Some(_)) => return Err("--raster-size takes WIDTH,HEIGHT".into()),
        (None, None) => mask_size,
    };
    let grid = rasterize_floorplan(&plan, &vocab, w, h)
        .map_err(err)
        .map_err(stage("rasterize"))?;

    (|| {
        fs::create_dir_all(&out_dir)
            .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
        plan.save(out_dir.join("plan.json")).map_err(err)?;
        grid.write_png(out_dir.join("labels.png")).map_err(err)?;
        write_text(
            &out_dir.join("overlay.svg"),
            &crate::svg::overlay(&plan, &vocab, w, h),
        )
    })()
    .map_err(stage("write"))?;
    println!(
        "{} rooms, {} wall segments -> {}",
        plan.rooms.len(),
        plan.walls.segments.len(),
        out_dir.display()
    );
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    pred: PathBuf,
    truth: PathBuf,
}

fn evaluate(a: EvaluateArgs, config: &PipelineConfig) -> Outcome<()> {
    let vocab = load_vocab(config, a.vocab)?;
    let text = fs::read_to_string(&a.manifest)
        .map_err(|e| format!("cannot read {}: {e}", a.manifest.display()))?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| format!("invalid manifest: {e}"))?;
    if entries.is_empty() {
        return Err("manifest lists no pairs".into());
    }
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let pairs = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let load = |p: &Path| {
                Grid::load(base.join(p), vocab.palette()).map_err(|err| format!("pair {i}: {err}"))
            };
            Ok((load(&e.pred)?, load(&e.truth)?))
        })
        .collect::<Outcome<Vec<_>>>()?;
    let aggregation = if pick(config.macro_average, a.macro_average) {
        Aggregation::Macro
    } else {
        Aggregation::Micro
    };
    let report = evaluate_corpus(&pairs, &vocab, aggregation).map_err(err)?;
    let table = IoUReport::table(&[("prediction", &report)]);
    print!("{table}");
    if let Some(path) = &a.out {
        let json = serde_json::to_string_pretty(&report).map_err(err)?;
        write_text(path, &json)?;
    }
    if let Some(path) = &a.table {
        write_text(path, &table)?;
    }
    Ok(())
}

fn render(a: RenderArgs, config: &PipelineConfig) -> Outcome<()> {
    let vocab = load_vocab(config, a.vocab)?;
    let plan = FloorPlan::load(&a.plan, &vocab).map_err(err)?;
    let format = match a.format {
        Some(f) => f,
        None => match a.out.extension().and_then(|x| x.to_str()) {
            Some("svg") => RenderFormat::Svg,
            Some("png") => RenderFormat::Png,
            _ => return Err("cannot tell the format from --out; pass --format".into()),
        },
    };
    match format {
        RenderFormat::Png => rasterize_floorplan(&plan, &vocab, a.width, a.height)
            .and_then(|g| g.write_png(&a.out))
            .map_err(err),
        RenderFormat::Svg => {
            if a.width == 0 || a.height == 0 {
                return Err("render size must be positive".into());
            }
            write_text(
                &a.out,
                &crate::svg::overlay(&plan, &vocab, a.width, a.height),
            )
        }
    }
}

fn init_roomtype(a: InitRoomtypeArgs, config: &PipelineConfig) -> Outcome<()> {
    let vocab = load_vocab(config, a.vocab)?;
    let gat = GatConfig {
        num_layers: a.layers,
        hidden_dim: a.hidden,
        seed: a.seed,
        ..GatConfig::default()
    };
    gat.validate().map_err(err)?;
    let params = GatParams::random(
        &gat,
        vocab.zoning_types.len(),
        vocab.room_types.len(),
        a.seed,
    );
    params.save(&gat, &a.out).map_err(err)
}

fn init_denoiser(a: InitDenoiserArgs, config: &PipelineConfig) -> Outcome<()> {
    let vocab = load_vocab(config, a.vocab)?;
    let dconfig = DenoiserConfig {
        model_dim: a.model_dim,
        num_blocks: a.blocks,
        encoder_layers: a.encoder_layers,
        ffn_dim: a.ffn_dim,
        num_room_types: vocab.room_types.len(),
        total_steps: a.steps,
        discrete_steps: a.discrete_steps,
        bits: a.bits,
        rca_all_connections: a.rca_all_connections,
    };
    let params = DenoiserParams::random(&dconfig, a.seed).map_err(err)?;
    params.save(&dconfig, &a.out).map_err(err)
}

fn synth_graphs(a: SynthGraphsArgs) -> Outcome<()> {
    use roomtype::synthetic;
    if a.min_nodes == 0 || a.min_nodes > a.max_nodes || a.zones == 0 || a.count == 0 {
        return Err("need 0 < min-nodes <= max-nodes and positive zones and count".into());
    }
    let vocab = synthetic::vocabulary(a.zones, a.zones);
    let range = a.min_nodes..=a.max_nodes;
    let graphs = match a.rule {
        SynthRule::Bijective => synthetic::bijective_dataset(&vocab, a.count, range, a.seed),
        SynthRule::Majority => synthetic::majority_dataset(&vocab, a.count, range, a.seed),
    };
    fs::create_dir_all(&a.out).map_err(|e| format!("cannot create {}: {e}", a.out.display()))?;
    vocab.save(a.out.join("vocab.json")).map_err(err)?;
    for (i, g) in graphs.iter().enumerate() {
        g.save(a.out.join(format!("graph_{i:04}.json")))
            .map_err(err)?;
    }
    println!("{} graphs written to {}", graphs.len(), a.out.display());
    Ok(())
}
