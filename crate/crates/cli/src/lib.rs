//! Command implementations behind the `plaf` binary.
//!
//! Every command returns an [`Outcome`]: a JSON document for `--json`, the
//! human-readable lines printed otherwise, and any warnings.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use plaf_core::frame2d::build_frame;
use plaf_core::lift3d::build_map;
use plaf_core::query::{export_heatmap_2d, export_ply, query_2d, query_3d, score_pool};
use plaf_core::storage::container::{FRAME_MAGIC, MAP_MAGIC};
use plaf_core::storage::ingest::{read_camera, read_embedding, read_feature_map, read_masks};
use plaf_core::storage::{
    frame_file_size, human_bytes, read_frame, read_map, write_frame, write_map, MapLayout, StorageModel,
    StorageReport,
};
use plaf_core::synth::{generate, write_scene, SyntheticSceneSpec, MANIFEST_NAME};
use plaf_core::types::RefWidth;
use plaf_core::{AssignmentPolicy, FeatureVector, FusionConfig, TextQuery};
use serde::Serialize;
use serde_json::{json, Value};

pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const INPUT_MISSING: i32 = 3;
    pub const FORMAT: i32 = 4;
    pub const INVALID_DATA: i32 = 5;
    pub const DIMENSION_MISMATCH: i32 = 6;
    pub const OVERFLOW: i32 = 7;
    pub const IO: i32 = 8;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] plaf_core::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use plaf_core::Error as E;
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Core(e) if e.is_not_found() => exit::INPUT_MISSING,
            CliError::Core(e) => match e {
                E::BadMagic { .. }
                | E::UnsupportedVersion(_)
                | E::Truncated { .. }
                | E::TrailingBytes { .. }
                | E::Json { .. } => exit::FORMAT,
                E::InvalidInput(_)
                | E::Invalid(_)
                | E::EmptyMask { .. }
                | E::TooManyMasks { .. }
                | E::DegenerateDescriptor { .. } => exit::INVALID_DATA,
                E::DimensionMismatch { .. } => exit::DIMENSION_MISMATCH,
                E::Overflow(_) => exit::OVERFLOW,
                E::Io { .. } => exit::IO,
            },
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub json: Value,
    pub lines: Vec<String>,
    pub warnings: Vec<String>,
}

impl Outcome {
    /// The JSON document with warnings folded in.
    pub fn json_document(&self) -> Value {
        let mut doc = self.json.clone();
        if let Value::Object(map) = &mut doc {
            map.insert("warnings".into(), json!(self.warnings));
        }
        doc
    }
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn percent(ratio: f64) -> String {
    format!("{:.2}%", ratio * 100.0)
}

/// Per-artifact storage summary lines.
fn storage_lines(report: &StorageReport) -> Vec<String> {
    let mut lines = Vec::new();
    if let (Some(d), Some(m), Some(r)) = (
        report.dense_2d_bytes,
        report.mask_indexed_2d_bytes,
        report.ratio_2d,
    ) {
        lines.push(format!(
            "2D storage (dense / mask-indexed / ratio): {} / {} / {}",
            human_bytes(d),
            human_bytes(m),
            percent(r)
        ));
        lines.push(format!("  dense {d} B, mask-indexed {m} B, ratio {r:.7}"));
    }
    if let (Some(d), Some(m), Some(r)) = (
        report.dense_3d_bytes,
        report.index_ref_3d_bytes,
        report.ratio_3d,
    ) {
        lines.push(format!(
            "3D storage (dense / index-and-reference / ratio): {} / {} / {}",
            human_bytes(d),
            human_bytes(m),
            percent(r)
        ));
        lines.push(format!("  dense {d} B, index-and-reference {m} B, ratio {r:.7}"));
    }
    lines
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Bucket {
    /// Inclusive lower bound.
    pub lo: u64,
    /// Inclusive upper bound.
    pub hi: u64,
    pub count: usize,
}

/// Power-of-two histogram: `[0, 0]`, `[1, 1]`, `[2, 3]`, `[4, 7]`, ...
pub fn log2_histogram(values: impl IntoIterator<Item = u64>) -> Vec<Bucket> {
    let mut counts: Vec<usize> = Vec::new();
    for v in values {
        let b = if v == 0 { 0 } else { 64 - v.leading_zeros() as usize };
        if counts.len() <= b {
            counts.resize(b + 1, 0);
        }
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c > 0)
        .map(|(b, count)| {
            let (lo, hi) = if b == 0 { (0, 0) } else { (1u64 << (b - 1), (1u64 << (b - 1)) * 2 - 1) };
            Bucket { lo, hi, count }
        })
        .collect()
}

fn histogram_line(name: &str, h: &[Bucket]) -> String {
    let parts: Vec<String> = h
        .iter()
        .map(|b| {
            if b.lo == b.hi {
                format!("{}:{}", b.lo, b.count)
            } else {
                format!("{}-{}:{}", b.lo, b.hi, b.count)
            }
        })
        .collect();
    format!("{name}: {}", parts.join(" "))
}

// ---- synth ----

pub struct SynthArgs {
    pub spec: SyntheticSceneSpec,
    pub out: PathBuf,
}

pub fn synth(args: &SynthArgs) -> Result<Outcome> {
    let scene = generate(&args.spec)?;
    let manifest = write_scene(&scene, &args.out)?;
    let masks: usize = manifest.frames.iter().map(|f| f.mask_objects.len()).sum();
    let lines = vec![
        format!(
            "wrote {} frames and {} object embeddings to {}",
            manifest.frames.len(),
            manifest.objects.len(),
            args.out.display()
        ),
        format!(
            "{}x{} pixels, C={}, noise {}, seed {}, {} masks in total",
            args.spec.height, args.spec.width, args.spec.dim, args.spec.noise, args.spec.seed, masks
        ),
    ];
    Ok(Outcome {
        json: json!({
            "command": "synth",
            "out": args.out,
            "manifest": args.out.join(MANIFEST_NAME),
            "scene": manifest,
            "masks": masks,
        }),
        lines,
        warnings: Vec::new(),
    })
}

// ---- ingest ----

pub struct IngestArgs {
    pub features: PathBuf,
    pub masks: PathBuf,
    pub policy: AssignmentPolicy,
    pub out: PathBuf,
}

pub fn ingest(args: &IngestArgs) -> Result<Outcome> {
    let feat = read_feature_map(&args.features)?;
    let masks = read_masks(&args.masks)?;
    let frame = build_frame(&feat, &masks, args.policy)?;
    write_frame(&frame, &args.out)?;

    let model = StorageModel {
        dim: frame.dim() as u64,
        height: frame.height() as u64,
        width: frame.width() as u64,
        masks: frame.mask_count() as u64,
        ..Default::default()
    };
    let report = model.report();
    let dropped = masks.len() - frame.mask_count();
    let mut warnings = Vec::new();
    if masks.is_empty() {
        warnings.push(format!("{} holds no masks; every pixel is background", args.masks.display()));
    }
    if dropped > 0 {
        warnings.push(format!("{dropped} fully occluded masks were dropped"));
    }
    let file_bytes = frame_file_size(model.height, model.width, model.masks, model.dim);
    let mut lines = vec![format!(
        "wrote {}: {}x{} pixels, C={}, K={} ({} of {} input masks kept), {} bytes",
        args.out.display(),
        frame.height(),
        frame.width(),
        frame.dim(),
        frame.mask_count(),
        frame.mask_count(),
        masks.len(),
        file_bytes
    )];
    lines.extend(storage_lines(&report));
    Ok(Outcome {
        json: json!({
            "command": "ingest",
            "out": args.out,
            "feature_source": { "height": feat.height(), "width": feat.width(), "dim": feat.dim() },
            "height": frame.height(),
            "width": frame.width(),
            "dim": frame.dim(),
            "input_masks": masks.len(),
            "masks": frame.mask_count(),
            "dropped_masks": dropped,
            "policy": args.policy.to_string(),
            "file_bytes": file_bytes,
            "storage": report,
        }),
        lines,
        warnings,
    })
}

// ---- build ----

pub struct BuildArgs {
    pub frames: Vec<PathBuf>,
    pub cameras: Vec<PathBuf>,
    pub config: FusionConfig,
    pub out: PathBuf,
}

pub fn build(args: &BuildArgs) -> Result<Outcome> {
    if args.frames.is_empty() {
        return Err(CliError::Usage("at least one --frame is required".into()));
    }
    if args.frames.len() != args.cameras.len() {
        return Err(CliError::Usage(format!(
            "{} frames but {} cameras; pass one --camera per --frame",
            args.frames.len(),
            args.cameras.len()
        )));
    }
    let mut pairs = Vec::with_capacity(args.frames.len());
    for (f, c) in args.frames.iter().zip(&args.cameras) {
        pairs.push((read_frame(f)?, read_camera(c)?));
    }
    let (pool, cloud, report) = build_map(&pairs, args.config)?;
    write_map(&pool, &cloud, &args.out)?;
    let layout = MapLayout::new(cloud.len() as u64, pool.len() as u64, pool.dim() as u64);

    let mut warnings = Vec::new();
    if cloud.is_empty() {
        warnings.push("no points were lifted; the map is empty".to_string());
    }
    let mut lines = vec![
        format!(
            "wrote {}: {} frames, {} masks fused into M={} pool entries, N={} points, {} bytes",
            args.out.display(),
            pairs.len(),
            report.masks_ingested,
            report.pool_size,
            report.points,
            layout.file_size()
        ),
        format!(
            "tau={} voxel={} stride={}",
            args.config.similarity_threshold, args.config.voxel_size, args.config.pixel_stride
        ),
    ];
    lines.extend(storage_lines(&report.storage));
    let mut json = to_value(&report);
    if let Value::Object(map) = &mut json {
        map.insert("command".into(), json!("build"));
        map.insert("out".into(), json!(args.out));
        map.insert("file_bytes".into(), json!(layout.file_size()));
    }
    Ok(Outcome { json, lines, warnings })
}

// ---- artifact detection ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    Frame,
    Map,
}

/// Classifies a container by its magic bytes.
pub fn sniff(path: &Path) -> Result<Artifact> {
    let mut file = File::open(path).map_err(|e| plaf_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut magic = [0u8; 8];
    let mut n = 0;
    while n < 8 {
        match file.read(&mut magic[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) => {
                return Err(plaf_core::Error::Io {
                    path: path.to_path_buf(),
                    source: e,
                }
                .into())
            }
        }
    }
    if n < 8 {
        return Err(plaf_core::Error::Truncated {
            what: format!("{} header", path.display()),
            expected: 8,
            found: n as u64,
        }
        .into());
    }
    match magic {
        FRAME_MAGIC => Ok(Artifact::Frame),
        MAP_MAGIC => Ok(Artifact::Map),
        found => Err(plaf_core::Error::BadMagic { expected: MAP_MAGIC, found }.into()),
    }
}

// ---- query ----

pub enum EmbeddingSource {
    File(PathBuf),
    Inline { label: String, values: Vec<f32> },
}

pub struct QueryArgs {
    pub target: PathBuf,
    pub embedding: EmbeddingSource,
    pub threshold: f64,
    pub top_k: Option<usize>,
    pub out: Option<PathBuf>,
}

const REPORTED_TOP: usize = 10;

pub fn query(args: &QueryArgs) -> Result<Outcome> {
    let (label, embedding) = match &args.embedding {
        EmbeddingSource::File(p) => read_embedding(p)?,
        EmbeddingSource::Inline { label, values } => {
            (label.clone(), FeatureVector::new(values.clone())?)
        }
    };
    let q = TextQuery::new(label.clone(), embedding)?
        .with_threshold(args.threshold)?
        .with_top_k(args.top_k)?;
    let kind = sniff(&args.target)?;
    let (result, extra, targets) = match kind {
        Artifact::Map => {
            let (pool, cloud) = read_map(&args.target)?;
            let entry_scores = score_pool(&pool, &q)?;
            let result = query_3d(&pool, &cloud, &q)?;
            let mut points_per_entry = vec![0usize; pool.len()];
            for &r in cloud.refs() {
                points_per_entry[r as usize] += 1;
            }
            let entries: Vec<Value> = entry_scores
                .iter()
                .zip(&points_per_entry)
                .enumerate()
                .map(|(m, (s, n))| json!({ "entry": m, "score": s, "points": n }))
                .collect();
            if let Some(out) = &args.out {
                export_ply(&result, &cloud, out)?;
            }
            (result, json!({ "target": "map", "pool_size": pool.len(), "entries": entries }), "points")
        }
        Artifact::Frame => {
            let frame = read_frame(&args.target)?;
            let result = query_2d(&frame, &q)?;
            if let Some(out) = &args.out {
                export_heatmap_2d(&result, &frame, out)?;
            }
            (
                result,
                json!({ "target": "frame", "height": frame.height(), "width": frame.width(), "masks": frame.mask_count() }),
                "pixels",
            )
        }
    };
    let top: Vec<Value> = result
        .selected
        .iter()
        .take(REPORTED_TOP)
        .map(|&i| json!({ "index": i, "score": result.scores[i] }))
        .collect();
    let mut lines = vec![format!(
        "query \"{label}\": {} of {} {targets} selected (theta={}, topk={})",
        result.selected.len(),
        result.scores.len(),
        args.threshold,
        args.top_k.map_or("none".to_string(), |k| k.to_string())
    )];
    if let Some(&best) = result.selected.first() {
        lines.push(format!("best score {} at {targets} index {best}", result.scores[best]));
    }
    if let Some(out) = &args.out {
        lines.push(format!("wrote {}", out.display()));
    }
    let mut json = json!({
        "command": "query",
        "label": label,
        "threshold": args.threshold,
        "top_k": args.top_k,
        "targets": result.scores.len(),
        "selected_count": result.selected.len(),
        "top": top,
        "out": args.out,
    });
    if let (Value::Object(map), Value::Object(more)) = (&mut json, extra) {
        map.extend(more);
    }
    let mut warnings = Vec::new();
    if result.selected.is_empty() {
        warnings.push(format!("no {targets} reached theta={}", args.threshold));
    }
    Ok(Outcome { json, lines, warnings })
}

// ---- stats ----

#[derive(Debug, Clone, Default)]
pub struct DryRun {
    pub height: Option<u64>,
    pub width: Option<u64>,
    pub masks: Option<u64>,
    pub dim: Option<u64>,
    pub points: Option<u64>,
    pub pool: Option<u64>,
    pub bf: Option<u64>,
    pub bi: Option<u64>,
    pub br: Option<u64>,
}

pub enum StatsArgs {
    Artifact(PathBuf),
    DryRun(DryRun),
}

pub fn stats(args: &StatsArgs) -> Result<Outcome> {
    match args {
        StatsArgs::DryRun(d) => dry_run_stats(d),
        StatsArgs::Artifact(path) => match sniff(path)? {
            Artifact::Frame => frame_stats(path),
            Artifact::Map => map_stats(path),
        },
    }
}

fn dry_run_stats(d: &DryRun) -> Result<Outcome> {
    let defaults = StorageModel::default();
    let model = StorageModel {
        dim: d.dim.unwrap_or(0),
        bf: d.bf.unwrap_or(defaults.bf),
        bi: d.bi.unwrap_or(defaults.bi),
        br: d.br.unwrap_or_else(|| {
            d.pool.map_or(defaults.br, |m| RefWidth::for_pool_size(m as usize).bytes())
        }),
        height: d.height.unwrap_or(0),
        width: d.width.unwrap_or(0),
        masks: d.masks.unwrap_or(0),
        points: d.points.unwrap_or(0),
        pool: d.pool.unwrap_or(0),
    };
    let report = model.report();
    let nothing = report.dense_2d_bytes.is_none() && report.dense_3d_bytes.is_none();
    if nothing {
        // Surface the first missing or invalid quantity.
        let err = model
            .dense_2d_cost()
            .and(model.dense_3d_cost())
            .expect_err("no cost was computable");
        return Err(err.into());
    }
    let mut lines = vec!["dry run (no data allocated)".to_string()];
    lines.extend(storage_lines(&report));
    Ok(Outcome {
        json: json!({ "command": "stats", "mode": "dry-run", "storage": report }),
        lines,
        warnings: Vec::new(),
    })
}

fn frame_stats(path: &Path) -> Result<Outcome> {
    let frame = read_frame(path)?;
    let model = StorageModel {
        dim: frame.dim() as u64,
        height: frame.height() as u64,
        width: frame.width() as u64,
        masks: frame.mask_count() as u64,
        ..Default::default()
    };
    let report = model.report();
    let id_hist = frame.id_histogram();
    let background = id_hist[0];
    let areas: Vec<u64> = id_hist[1..].iter().map(|&a| a as u64).collect();
    let hist = log2_histogram(areas.iter().copied());
    let mut lines = vec![format!(
        "{}: frame {}x{}, C={}, K={}, background {} px",
        path.display(),
        frame.height(),
        frame.width(),
        frame.dim(),
        frame.mask_count(),
        background
    )];
    lines.extend(storage_lines(&report));
    lines.push(histogram_line("mask area histogram (px)", &hist));
    Ok(Outcome {
        json: json!({
            "command": "stats",
            "mode": "frame",
            "path": path,
            "height": frame.height(),
            "width": frame.width(),
            "dim": frame.dim(),
            "masks": frame.mask_count(),
            "background_pixels": background,
            "mask_areas": areas,
            "mask_area_histogram": hist,
            "file_bytes": frame_file_size(model.height, model.width, model.masks, model.dim),
            "storage": report,
        }),
        lines,
        warnings: Vec::new(),
    })
}

fn map_stats(path: &Path) -> Result<Outcome> {
    let (pool, cloud) = read_map(path)?;
    let layout = MapLayout::new(cloud.len() as u64, pool.len() as u64, pool.dim() as u64);
    let model = StorageModel {
        dim: pool.dim() as u64,
        br: layout.ref_width.bytes(),
        points: cloud.len() as u64,
        pool: pool.len() as u64,
        ..Default::default()
    };
    let report = model.report();
    let mut per_entry = vec![0u64; pool.len()];
    for &r in cloud.refs() {
        per_entry[r as usize] += 1;
    }
    let ref_hist = log2_histogram(per_entry.iter().copied());
    let obs_hist = log2_histogram(pool.counts().iter().map(|&c| u64::from(c)));
    let mut lines = vec![format!(
        "{}: map N={} points, M={} pool entries, C={}, {}-byte references",
        path.display(),
        cloud.len(),
        pool.len(),
        pool.dim(),
        layout.ref_width.bytes()
    )];
    lines.extend(storage_lines(&report));
    lines.push(histogram_line("points per pool entry", &ref_hist));
    lines.push(histogram_line("observations per pool entry", &obs_hist));
    Ok(Outcome {
        json: json!({
            "command": "stats",
            "mode": "map",
            "path": path,
            "points": cloud.len(),
            "pool_size": pool.len(),
            "dim": pool.dim(),
            "reference_bytes": layout.ref_width.bytes(),
            "points_per_entry": per_entry,
            "points_per_entry_histogram": ref_hist,
            "observations": pool.counts(),
            "observations_histogram": obs_hist,
            "file_bytes": layout.file_size(),
            "storage": report,
        }),
        lines,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_buckets() {
        let h = log2_histogram([0, 1, 2, 3, 4, 9]);
        assert_eq!(
            h,
            vec![
                Bucket { lo: 0, hi: 0, count: 1 },
                Bucket { lo: 1, hi: 1, count: 1 },
                Bucket { lo: 2, hi: 3, count: 2 },
                Bucket { lo: 4, hi: 7, count: 1 },
                Bucket { lo: 8, hi: 15, count: 1 },
            ]
        );
    }

    #[test]
    fn dry_run_matches_storage_model() {
        let out = dry_run_stats(&DryRun {
            height: Some(480),
            width: Some(640),
            masks: Some(200),
            dim: Some(1024),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(out.json["storage"]["mask_indexed_2d_bytes"], 1_433_600);
        assert!(out.lines[1].contains("1.26 GB / 1.43 MB / 0.11%"));
    }

    #[test]
    fn empty_dry_run_is_an_error() {
        assert!(dry_run_stats(&DryRun::default()).is_err());
    }

    #[test]
    fn exit_codes_are_distinct() {
        use plaf_core::Error as E;
        let errs = [
            CliError::Usage("x".into()),
            E::Io { path: "p".into(), source: std::io::ErrorKind::NotFound.into() }.into(),
            E::UnsupportedVersion(9).into(),
            E::InvalidInput("x".into()).into(),
            E::DimensionMismatch { what: "x", expected: 1, found: 2 }.into(),
            E::Overflow("x").into(),
            E::Io { path: "p".into(), source: std::io::ErrorKind::PermissionDenied.into() }.into(),
        ];
        let mut codes: Vec<i32> = errs.iter().map(CliError::exit_code).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), errs.len());
        assert!(!codes.contains(&exit::OK));
    }
}
