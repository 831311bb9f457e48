//! `floorplan`: wall extraction, room-type prediction, conditioned corner
//! sampling, rectangle approximation and IoU scoring from the command line.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "floorplan",
    version,
    about = "Floor plan auto-completion toolkit"
)]
struct Cli {
    /// JSON pipeline settings; values present there replace the matching flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Vectorize a structural-wall mask into wall segments.
    ExtractWalls(ExtractWallsArgs),
    /// Replace every room of a plan by its minimum rotated rectangle.
    ApproxMrr(ApproxMrrArgs),
    /// Train the room-type classifier, or sweep over layer counts.
    TrainRoomtype(TrainRoomtypeArgs),
    /// Fill in room types of an access graph.
    PredictRoomtype(PredictRoomtypeArgs),
    /// Sample room polygons for a typed access graph and a wall set.
    Sample(SampleArgs),
    /// Walls mask + access graph to a finished plan, label map and overlay.
    Autocomplete(AutocompleteArgs),
    /// Score predicted label maps against ground truth.
    Evaluate(EvaluateArgs),
    /// Draw a plan as a label-map PNG or an SVG overlay.
    Render(RenderArgs),
    /// Write a randomly initialised room-type checkpoint.
    InitRoomtype(InitRoomtypeArgs),
    /// Write a randomly initialised denoiser checkpoint.
    InitDenoiser(InitDenoiserArgs),
    /// Write a synthetic labelled graph dataset and its vocabulary.
    SynthGraphs(SynthGraphsArgs),
}

#[derive(Args)]
struct VectorizeFlags {
    /// Maximum deviation in pixels before a wall path is split.
    #[arg(long, default_value_t = floorplan_core::skeleton::DEFAULT_SPLIT_TOLERANCE)]
    split_tolerance: f64,
    /// Segments shorter than this many pixels are dropped.
    #[arg(long, default_value_t = floorplan_core::skeleton::DEFAULT_MIN_LENGTH)]
    min_length: f64,
}

#[derive(Args)]
struct ExtractWallsArgs {
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Pixel values counted as wall; default is every non-zero value.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<u8>,
    #[command(flatten)]
    vectorize: VectorizeFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ApproxMrrArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Wall set replacing the one stored in the plan.
    #[arg(long)]
    walls: Option<PathBuf>,
    /// Keep whole rectangles instead of the largest wall-cut piece.
    #[arg(long)]
    no_refine: bool,
    #[arg(long, default_value_t = floorplan_core::geometry::DEFAULT_WALL_EPS)]
    wall_eps: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainRoomtypeArgs {
    /// Directory of access-graph JSON files with room types.
    #[arg(long)]
    data: PathBuf,
    /// Separate validation directory; otherwise a split of --data is used.
    #[arg(long)]
    val_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// One value trains a model; several run a sweep and print a table.
    #[arg(long, value_delimiter = ',', default_value = "3")]
    layers: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path (single-model mode).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch CSV (single-model mode).
    #[arg(long)]
    history: Option<PathBuf>,
    /// Where to also write the sweep table.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct PredictRoomtypeArgs {
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SamplerFlags {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Total diffusion steps; default comes from the checkpoint.
    #[arg(long)]
    steps: Option<usize>,
    /// Final steps run on quantised bits; default comes from the checkpoint.
    #[arg(long)]
    discrete_steps: Option<usize>,
    /// Refuse graphs with more rooms than this.
    #[arg(long)]
    max_rooms: Option<usize>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    walls: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[command(flatten)]
    sampler: SamplerFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AutocompleteArgs {
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Access graph with zoning types; room types are predicted.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    roomtype_params: Option<PathBuf>,
    #[arg(long)]
    denoiser_params: Option<PathBuf>,
    /// Pixel values of the mask counted as wall; default is every non-zero value.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<u8>,
    #[command(flatten)]
    vectorize: VectorizeFlags,
    #[command(flatten)]
    sampler: SamplerFlags,
    /// Skip cutting rooms by the structural walls.
    #[arg(long)]
    no_refine: bool,
    #[arg(long, default_value_t = floorplan_core::geometry::DEFAULT_WALL_EPS)]
    wall_eps: f64,
    /// Output label map size as WIDTH,HEIGHT; default is the mask size.
    #[arg(long, value_delimiter = ',')]
    raster_size: Option<Vec<usize>>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// JSON list of {"pred": path, "truth": path}; relative paths resolve
    /// against the manifest's directory.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Average per-pair scores instead of summing pixel counts.
    #[arg(long = "macro")]
    macro_average: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RenderFormat {
    Png,
    Svg,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    /// Defaults to the extension of --out.
    #[arg(long, value_enum)]
    format: Option<RenderFormat>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InitRoomtypeArgs {
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InitDenoiserArgs {
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    model_dim: usize,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long, default_value_t = 2)]
    encoder_layers: usize,
    #[arg(long, default_value_t = 256)]
    ffn_dim: usize,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 32)]
    discrete_steps: usize,
    #[arg(long, default_value_t = 8)]
    bits: usize,
    /// Relational attention also follows entrance and passage edges.
    #[arg(long)]
    rca_all_connections: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthRule {
    /// Room type equals zoning type.
    Bijective,
    /// Room type is the most common zoning type around the node.
    Majority,
}

#[derive(Args)]
struct SynthGraphsArgs {
    #[arg(long, value_enum)]
    rule: SynthRule,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 5)]
    min_nodes: usize,
    #[arg(long, default_value_t = 12)]
    max_nodes: usize,
    #[arg(long, default_value_t = 4)]
    zones: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving vocab.json and graph_NNNN.json files.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match cli.config.as_deref().map(config::PipelineConfig::load) {
        Some(Ok(c)) => c,
        Some(Err(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
        None => config::PipelineConfig::default(),
    };
    match commands::run(cli.command, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
