use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plaf_cli::{
    build, ingest, query, stats, synth, BuildArgs, CliError, DryRun, EmbeddingSource, IngestArgs, Outcome,
    QueryArgs, StatsArgs, SynthArgs,
};
use plaf_core::query::DEFAULT_THRESHOLD;
use plaf_core::synth::SyntheticSceneSpec;
use plaf_core::{AssignmentPolicy, FusionConfig};

/// Mask-indexed 2D semantic memory and index-and-reference 3D semantic maps.
#[derive(Debug, Parser)]
#[command(name = "plaf", version)]
struct Cli {
    /// Emit one machine-readable JSON document on stdout.
    #[arg(long, global = true)]
    json: bool,

    /// Worker threads for data-parallel stages.
    #[arg(long, global = true, env = "PLAF_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene with known ground truth.
    Synth(SynthCmd),
    /// Turn a dense feature map plus masks into a .plaf2d frame.
    Ingest(IngestCmd),
    /// Fuse .plaf2d frames and cameras into a .plaf3d map.
    Build(BuildCmd),
    /// Score a map or frame against a text embedding.
    Query(QueryCmd),
    /// Storage costs and histograms of an artifact or a hypothetical shape.
    Stats(StatsCmd),
}

#[derive(Debug, Args)]
struct SynthCmd {
    #[arg(long, default_value_t = 5)]
    objects: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 96)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Standard deviation of per-channel feature noise.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct IngestCmd {
    /// Raw f32 feature raster with a `.json` sidecar.
    #[arg(long)]
    features: PathBuf,
    /// Raw or run-length encoded masks with a `.json` sidecar.
    #[arg(long)]
    masks: PathBuf,
    #[arg(long, default_value = "smallest-mask")]
    policy: AssignmentPolicy,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BuildCmd {
    /// A .plaf2d frame; repeat in fusion order.
    #[arg(long = "frame", required = true)]
    frames: Vec<PathBuf>,
    /// Camera document for the frame at the same position.
    #[arg(long = "camera", required = true)]
    cameras: Vec<PathBuf>,
    /// Cosine similarity needed to merge into an existing pool entry.
    #[arg(long, default_value_t = 0.9)]
    tau: f64,
    /// Dedup voxel edge in meters.
    #[arg(long, default_value_t = 0.02)]
    voxel: f64,
    /// Lift every n-th pixel row and column.
    #[arg(long, default_value_t = 4)]
    stride: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct QueryCmd {
    /// A .plaf3d map or .plaf2d frame.
    target: PathBuf,
    /// Embedding file with a `.json` sidecar.
    #[arg(long, conflicts_with = "vector", required_unless_present = "vector")]
    embedding: Option<PathBuf>,
    /// Inline embedding as comma-separated floats.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    vector: Option<Vec<f32>>,
    /// Label reported for an inline vector.
    #[arg(long, default_value = "query")]
    label: String,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD, allow_hyphen_values = true)]
    theta: f64,
    #[arg(long)]
    topk: Option<usize>,
    /// PLY for maps, PGM (plus a raw .f32 raster) for frames.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsCmd {
    /// A .plaf2d or .plaf3d artifact.
    #[arg(required_unless_present = "dry_run", conflicts_with = "dry_run")]
    artifact: Option<PathBuf>,
    /// Price a hypothetical shape without data.
    #[arg(long)]
    dry_run: bool,
    #[arg(long, requires = "dry_run")]
    height: Option<u64>,
    #[arg(long, requires = "dry_run")]
    width: Option<u64>,
    /// Mask count K.
    #[arg(long, requires = "dry_run")]
    k: Option<u64>,
    /// Feature dimension C.
    #[arg(long, requires = "dry_run")]
    dim: Option<u64>,
    /// Point count N.
    #[arg(long, requires = "dry_run")]
    n: Option<u64>,
    /// Pool size M.
    #[arg(long, requires = "dry_run")]
    m: Option<u64>,
    #[arg(long, requires = "dry_run")]
    bf: Option<u64>,
    #[arg(long, requires = "dry_run")]
    bi: Option<u64>,
    #[arg(long, requires = "dry_run")]
    br: Option<u64>,
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Synth(c) => synth(&SynthArgs {
            spec: SyntheticSceneSpec {
                object_count: c.objects,
                dim: c.dim,
                height: c.height,
                width: c.width,
                frame_count: c.frames,
                noise: c.noise,
                seed: c.seed,
            },
            out: c.out.clone(),
        }),
        Command::Ingest(c) => ingest(&IngestArgs {
            features: c.features.clone(),
            masks: c.masks.clone(),
            policy: c.policy,
            out: c.out.clone(),
        }),
        Command::Build(c) => build(&BuildArgs {
            frames: c.frames.clone(),
            cameras: c.cameras.clone(),
            config: FusionConfig {
                similarity_threshold: c.tau,
                voxel_size: c.voxel,
                pixel_stride: c.stride,
            },
            out: c.out.clone(),
        }),
        Command::Query(c) => query(&QueryArgs {
            target: c.target.clone(),
            embedding: match (&c.embedding, &c.vector) {
                (Some(p), _) => EmbeddingSource::File(p.clone()),
                (None, Some(v)) => EmbeddingSource::Inline {
                    label: c.label.clone(),
                    values: v.clone(),
                },
                (None, None) => unreachable!("clap requires one embedding source"),
            },
            threshold: c.theta,
            top_k: c.topk,
            out: c.out.clone(),
        }),
        Command::Stats(c) => stats(&match &c.artifact {
            Some(p) => StatsArgs::Artifact(p.clone()),
            None => StatsArgs::DryRun(DryRun {
                height: c.height,
                width: c.width,
                masks: c.k,
                dim: c.dim,
                points: c.n,
                pool: c.m,
                bf: c.bf,
                bi: c.bi,
                br: c.br,
            }),
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            let mut text = if cli.json {
                serde_json::to_string_pretty(&outcome.json_document()).expect("JSON values serialize")
            } else {
                outcome.lines.join("\n")
            };
            text.push('\n');
            // A closed pipe (e.g. `| head`) is not an error.
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
