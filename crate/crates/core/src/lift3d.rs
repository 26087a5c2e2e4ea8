//! Lifting mask-indexed frames into an index-and-reference 3D map.
//!
//! Each frame's mask descriptors are normalized and merged into a shared
//! [`FeaturePool`] by sequential greedy cosine clustering. Pixels are
//! back-projected through depth, intrinsics and pose, and every resulting
//! point stores only the pool index of its mask. Points are deduplicated on a
//! voxel grid where the latest observation of a voxel wins.
//!
//! Back-projection of independent frames runs in parallel; the pool is only
//! ever mutated in frame order, so a map is bit-identical for a fixed input
//! order regardless of thread count.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;
use crate::storage::{StorageModel, StorageReport};
use crate::types::{
    dot, normalized, CameraFrame, FeaturePool, MaskIndexedFrame, RefWidth, SemanticPointCloud,
};

/// Frames back-projected concurrently before being folded into the map.
const BACKPROJECT_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FusionConfig {
    /// Minimum cosine similarity for merging into an existing pool entry.
    pub similarity_threshold: f64,
    /// Edge length of the dedup voxel grid in meters.
    pub voxel_size: f64,
    /// Only every `pixel_stride`-th row and column is lifted.
    pub pixel_stride: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            similarity_threshold: 0.9,
            voxel_size: 0.02,
            pixel_stride: 4,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err(Error::InvalidInput(format!(
                "similarity threshold must lie in [0, 1], got {}",
                self.similarity_threshold
            )));
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "voxel size must be positive, got {}",
                self.voxel_size
            )));
        }
        if self.pixel_stride == 0 {
            return Err(Error::InvalidInput("pixel stride must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftedPoint {
    pub position: Vector3<f64>,
    pub mask_id: u16,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BackProjection {
    /// Lifted points in row-major pixel order.
    pub points: Vec<LiftedPoint>,
    pub skipped_background: usize,
    pub skipped_invalid_depth: usize,
}

fn valid_depth(d: f32) -> bool {
    d.is_finite() && d > 0.0
}

/// Lifts every `stride`-th pixel that has a mask and a valid depth into the
/// world frame.
pub fn back_project(cam: &CameraFrame, index_map: &[u16], stride: usize) -> Result<BackProjection> {
    let (height, width) = (cam.height(), cam.width());
    if index_map.len() != height * width {
        return Err(Error::DimensionMismatch {
            what: "index map for camera",
            expected: height * width,
            found: index_map.len(),
        });
    }
    if stride == 0 {
        return Err(Error::InvalidInput("pixel stride must be positive".into()));
    }
    let rows: Vec<usize> = (0..height).step_by(stride).collect();
    let per_row = par::map_slice(&rows, |&v| {
        let mut out = BackProjection::default();
        for u in (0..width).step_by(stride) {
            let id = index_map[v * width + u];
            if id == 0 {
                out.skipped_background += 1;
                continue;
            }
            let d = cam.depth_at(u, v);
            if !valid_depth(d) {
                out.skipped_invalid_depth += 1;
                continue;
            }
            let p = cam.intrinsics().unproject(u, v, f64::from(d));
            out.points.push(LiftedPoint {
                position: cam.pose().transform(&p),
                mask_id: id,
            });
        }
        out
    });
    let mut all = BackProjection::default();
    for r in per_row {
        all.points.extend(r.points);
        all.skipped_background += r.skipped_background;
        all.skipped_invalid_depth += r.skipped_invalid_depth;
    }
    Ok(all)
}

/// Continuous pixel coordinates of a world point (pixel `(u, v)` has its
/// center at `(u + 0.5, v + 0.5)`), or `None` behind the camera.
pub fn project(cam: &CameraFrame, world: &Vector3<f64>) -> Option<(f64, f64)> {
    let p = cam.pose().inverse_transform(world);
    (p.z > 0.0).then(|| cam.intrinsics().project(&p))
}

/// Outcome of fusing one unit descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fused {
    Merged(usize),
    Inserted(usize),
}

impl Fused {
    pub fn index(self) -> usize {
        match self {
            Fused::Merged(i) | Fused::Inserted(i) => i,
        }
    }
}

/// Greedy step: merge `unit` into the most similar entry if its cosine is at
/// least `threshold`, otherwise append it. Ties go to the lowest index.
pub fn fuse_descriptor(pool: &mut FeaturePool, unit: &[f32], threshold: f64) -> Result<Fused> {
    let best = par::argmax(pool.len(), |m| dot(pool.descriptor(m), unit));
    match best {
        Some((m, sim)) if sim >= threshold => {
            let n = pool.count(m);
            let old = pool.descriptor(m);
            let w = f64::from(n);
            let mean: Vec<f32> = old
                .iter()
                .zip(unit)
                .map(|(&a, &b)| ((w * f64::from(a) + f64::from(b)) / (w + 1.0)) as f32)
                .collect();
            // An identical observation leaves the unit entry untouched.
            let merged = if mean == old {
                mean
            } else {
                normalized(&mean).ok_or(Error::DegenerateDescriptor { index: m })?
            };
            let count = n.checked_add(1).ok_or(Error::Overflow("observation count"))?;
            pool.replace(m, &merged, count);
            Ok(Fused::Merged(m))
        }
        _ => {
            if pool.len() >= u32::MAX as usize {
                return Err(Error::Overflow("pool size"));
            }
            Ok(Fused::Inserted(pool.push(unit, 1)))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FrameReport {
    pub new_entries: usize,
    pub merged_entries: usize,
    pub points_added: usize,
    /// Points that landed in an occupied voxel and overwrote it.
    pub points_replaced: usize,
    pub skipped_background: usize,
    pub skipped_invalid_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildReport {
    pub config: FusionConfig,
    pub frames: Vec<FrameReport>,
    pub masks_ingested: usize,
    pub points: usize,
    pub pool_size: usize,
    pub dim: usize,
    pub reference_bytes: u64,
    /// Bytes of point positions, which the semantic costs exclude.
    pub position_bytes: u64,
    pub storage: StorageReport,
}

/// Incremental map construction; [`build_map`] is a fold over frames.
#[derive(Debug, Clone)]
pub struct MapBuilder {
    config: FusionConfig,
    pool: FeaturePool,
    cloud: SemanticPointCloud,
    voxels: HashMap<[i64; 3], usize>,
    frames: Vec<FrameReport>,
    masks_ingested: usize,
}

impl MapBuilder {
    pub fn new(dim: usize, config: FusionConfig) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::InvalidInput("feature dimension must be positive".into()));
        }
        Ok(MapBuilder {
            config,
            pool: FeaturePool::empty(dim),
            cloud: SemanticPointCloud::new(),
            voxels: HashMap::new(),
            frames: Vec::new(),
            masks_ingested: 0,
        })
    }

    pub fn pool(&self) -> &FeaturePool {
        &self.pool
    }

    pub fn cloud(&self) -> &SemanticPointCloud {
        &self.cloud
    }

    pub fn fuse_frame(&mut self, frame: &MaskIndexedFrame, cam: &CameraFrame) -> Result<FrameReport> {
        self.check_frame(frame, cam)?;
        let lifted = back_project(cam, frame.index_map(), self.config.pixel_stride)?;
        self.fuse_lifted(frame, lifted)
    }

    fn check_frame(&self, frame: &MaskIndexedFrame, cam: &CameraFrame) -> Result<()> {
        if frame.dim() != self.pool.dim() {
            return Err(Error::DimensionMismatch {
                what: "frame feature dim",
                expected: self.pool.dim(),
                found: frame.dim(),
            });
        }
        if frame.height() != cam.height() || frame.width() != cam.width() {
            return Err(Error::DimensionMismatch {
                what: "camera pixels",
                expected: frame.height() * frame.width(),
                found: cam.height() * cam.width(),
            });
        }
        Ok(())
    }

    fn fuse_lifted(&mut self, frame: &MaskIndexedFrame, lifted: BackProjection) -> Result<FrameReport> {
        let mut report = FrameReport {
            skipped_background: lifted.skipped_background,
            skipped_invalid_depth: lifted.skipped_invalid_depth,
            ..Default::default()
        };
        let k = frame.mask_count();
        let mut refs = Vec::with_capacity(k + 1);
        refs.push(0u32);
        for id in 1..=k as u16 {
            let unit = normalized(frame.feature(id))
                .ok_or(Error::DegenerateDescriptor { index: usize::from(id) })?;
            let fused = fuse_descriptor(&mut self.pool, &unit, self.config.similarity_threshold)?;
            match fused {
                Fused::Merged(_) => report.merged_entries += 1,
                Fused::Inserted(_) => report.new_entries += 1,
            }
            refs.push(fused.index() as u32);
        }
        self.masks_ingested += k;

        let v = self.config.voxel_size;
        for p in lifted.points {
            let key = [
                (p.position.x / v).floor() as i64,
                (p.position.y / v).floor() as i64,
                (p.position.z / v).floor() as i64,
            ];
            let pos = [p.position.x as f32, p.position.y as f32, p.position.z as f32];
            let r = refs[usize::from(p.mask_id)];
            match self.voxels.get(&key) {
                Some(&i) => {
                    self.cloud.set(i, pos, r);
                    report.points_replaced += 1;
                }
                None => {
                    let i = self.cloud.push(pos, r);
                    self.voxels.insert(key, i);
                    report.points_added += 1;
                }
            }
        }
        self.frames.push(report.clone());
        Ok(report)
    }

    pub fn report(&self) -> BuildReport {
        let ref_width = RefWidth::for_pool_size(self.pool.len());
        let model = StorageModel {
            dim: self.pool.dim() as u64,
            br: ref_width.bytes(),
            points: self.cloud.len() as u64,
            pool: self.pool.len() as u64,
            ..Default::default()
        };
        BuildReport {
            config: self.config,
            frames: self.frames.clone(),
            masks_ingested: self.masks_ingested,
            points: self.cloud.len(),
            pool_size: self.pool.len(),
            dim: self.pool.dim(),
            reference_bytes: ref_width.bytes(),
            position_bytes: self.cloud.len() as u64 * 12,
            storage: model.report(),
        }
    }

    pub fn finish(self) -> (FeaturePool, SemanticPointCloud, BuildReport) {
        let report = self.report();
        (self.pool, self.cloud, report)
    }
}

/// Fuses `frames` in order into a pool and point cloud.
pub fn build_map(
    frames: &[(MaskIndexedFrame, CameraFrame)],
    config: FusionConfig,
) -> Result<(FeaturePool, SemanticPointCloud, BuildReport)> {
    let Some((first, _)) = frames.first() else {
        return Err(Error::InvalidInput("at least one frame is required".into()));
    };
    let mut builder = MapBuilder::new(first.dim(), config)?;
    for (frame, cam) in frames {
        builder.check_frame(frame, cam)?;
    }
    for batch in frames.chunks(BACKPROJECT_BATCH) {
        let lifted = par::map_slice(batch, |(frame, cam)| {
            back_project(cam, frame.index_map(), config.pixel_stride)
        });
        for ((frame, _), l) in batch.iter().zip(lifted) {
            builder.fuse_lifted(frame, l?)?;
        }
    }
    Ok(builder.finish())
}
