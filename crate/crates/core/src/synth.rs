//! Deterministic synthetic scenes with known ground truth.
//!
//! A scene is a box-shaped room holding axis-aligned box objects. Each object
//! owns a unit descriptor; descriptors are mutually orthogonal (Gram-Schmidt
//! over seeded Gaussian vectors). Cameras sit on a circle looking at the
//! room center; each frame is ray cast per pixel center, giving exact depth,
//! one mask per visible object, and features equal to the object descriptor
//! plus Gaussian noise inside objects (pure noise on walls and floor).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::storage::ingest::{write_camera, write_embedding, write_feature_map, write_masks, MaskEncoding};
use crate::types::{CameraFrame, DenseFeatureMap, FeatureVector, Intrinsics, MaskSet, Pose};

const ROOM_HALF_EXTENT: f64 = 2.5;
const ROOM_HEIGHT: f64 = 2.5;
const CAMERA_RADIUS: f64 = 2.2;
const CAMERA_HEIGHT: f64 = 1.6;
const LOOK_AT: [f64; 3] = [0.0, 0.0, 0.4];
const HORIZONTAL_FOV_DEG: f64 = 75.0;
const PLACEMENT_RADIUS: f64 = 1.2;
/// Minimum free space between any two objects.
const OBJECT_GAP: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub object_count: usize,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub frame_count: usize,
    /// Standard deviation of per-channel feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            object_count: 5,
            dim: 32,
            height: 96,
            width: 128,
            frame_count: 8,
            noise: 0.05,
            seed: 7,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < self.object_count {
            return Err(Error::InvalidInput(format!(
                "feature dim {} cannot hold {} orthogonal object descriptors",
                self.dim, self.object_count
            )));
        }
        if self.object_count == 0 || self.height == 0 || self.width == 0 || self.frame_count == 0 {
            return Err(Error::InvalidInput(
                "object count, image size and frame count must be positive".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidInput(format!("noise must be >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub label: String,
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub descriptor: Vec<f32>,
}

impl SceneObject {
    /// True if `p` lies inside the box grown by `tol` on every side.
    pub fn contains(&self, p: [f64; 3], tol: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - tol && p[a] <= self.max[a] + tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub features: DenseFeatureMap,
    pub masks: MaskSet,
    pub camera: CameraFrame,
    /// Object index of each mask, in mask order.
    pub mask_objects: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub spec: SyntheticSceneSpec,
    pub objects: Vec<SceneObject>,
    pub frames: Vec<SynthFrame>,
}

impl SyntheticScene {
    /// Index of the object whose (slightly grown) box contains `p`.
    pub fn object_at(&self, p: [f64; 3], tol: f64) -> Option<usize> {
        self.objects.iter().position(|o| o.contains(p, tol))
    }
}

/// `count` orthonormal vectors of length `dim` from seeded Gaussian draws.
pub fn orthonormal_descriptors(rng: &mut impl Rng, count: usize, dim: usize) -> Result<Vec<Vec<f32>>> {
    if dim < count {
        return Err(Error::InvalidInput(format!(
            "cannot draw {count} orthogonal vectors in {dim} dimensions"
        )));
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        // Two passes of Gram-Schmidt keep the result orthogonal to 1e-15.
        for _ in 0..2 {
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    Ok(basis
        .into_iter()
        .map(|b| b.into_iter().map(|x| x as f32).collect())
        .collect())
}

fn place_objects(rng: &mut ChaCha8Rng, count: usize) -> Result<Vec<([f64; 3], [f64; 3])>> {
    let mut boxes: Vec<([f64; 3], [f64; 3])> = Vec::with_capacity(count);
    let mut attempts = 0;
    while boxes.len() < count {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::InvalidInput(format!(
                "could not place {count} non-overlapping objects in the room"
            )));
        }
        let (sx, sy, sz) = (
            rng.random_range(0.3..0.6),
            rng.random_range(0.3..0.6),
            rng.random_range(0.3..1.0),
        );
        let r = PLACEMENT_RADIUS * rng.random::<f64>().sqrt();
        let a = rng.random_range(0.0..2.0 * PI);
        let (cx, cy) = (r * a.cos(), r * a.sin());
        let min = [cx - sx / 2.0, cy - sy / 2.0, 0.0];
        let max = [cx + sx / 2.0, cy + sy / 2.0, sz];
        let clear = boxes.iter().all(|(bmin, bmax)| {
            min[0] > bmax[0] + OBJECT_GAP
                || max[0] < bmin[0] - OBJECT_GAP
                || min[1] > bmax[1] + OBJECT_GAP
                || max[1] < bmin[1] - OBJECT_GAP
        });
        if clear {
            boxes.push((min, max));
        }
    }
    Ok(boxes)
}

/// Entry and exit ray parameters of an axis-aligned box.
fn slab(origin: &Vector3<f64>, dir: &Vector3<f64>, min: [f64; 3], max: [f64; 3]) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < min[a] || origin[a] > max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut ta, mut tb) = ((min[a] - origin[a]) * inv, (max[a] - origin[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some((t0, t1))
}

fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Result<Pose> {
    let forward = (target - eye).normalize();
    let right = forward.cross(&Vector3::z()).normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_columns(&[right, down, forward]);
    Pose::new(rotation, eye)
}

fn camera_pose(frame: usize, frame_count: usize) -> Result<Pose> {
    let a = 2.0 * PI * frame as f64 / frame_count as f64 + 0.3;
    let eye = Vector3::new(CAMERA_RADIUS * a.cos(), CAMERA_RADIUS * a.sin(), CAMERA_HEIGHT);
    look_at(eye, Vector3::from(LOOK_AT))
}

fn intrinsics(spec: &SyntheticSceneSpec) -> Intrinsics {
    let f = 0.5 * spec.width as f64 / (HORIZONTAL_FOV_DEG.to_radians() / 2.0).tan();
    Intrinsics {
        fx: f,
        fy: f,
        cx: spec.width as f64 / 2.0,
        cy: spec.height as f64 / 2.0,
    }
}

fn render_frame(
    spec: &SyntheticSceneSpec,
    objects: &[SceneObject],
    index: usize,
) -> Result<SynthFrame> {
    let (h, w, c) = (spec.height, spec.width, spec.dim);
    let k = intrinsics(spec);
    let pose = camera_pose(index, spec.frame_count)?;
    let eye = *pose.translation();
    let room_min = [-ROOM_HALF_EXTENT, -ROOM_HALF_EXTENT, 0.0];
    let room_max = [ROOM_HALF_EXTENT, ROOM_HALF_EXTENT, ROOM_HEIGHT];

    // Per pixel: object hit (if any) and camera depth. Rays have unit camera z,
    // so the ray parameter is the depth.
    let mut labels = vec![None; h * w];
    let mut depth = vec![0.0f32; h * w];
    for v in 0..h {
        for u in 0..w {
            let ray_cam = k.unproject(u, v, 1.0);
            let dir = pose.rotation() * ray_cam;
            let mut best = slab(&eye, &dir, room_min, room_max).map_or(f64::NAN, |(_, t1)| t1);
            let mut hit = None;
            for (oi, o) in objects.iter().enumerate() {
                if let Some((t0, _)) = slab(&eye, &dir, o.min, o.max) {
                    if t0 > 0.0 && (best.is_nan() || t0 < best) {
                        best = t0;
                        hit = Some(oi);
                    }
                }
            }
            labels[v * w + u] = hit;
            depth[v * w + u] = best as f32;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut data = Vec::with_capacity(h * w * c);
    for label in &labels {
        for ch in 0..c {
            let base = label.map_or(0.0, |oi| objects[oi].descriptor[ch]);
            let n: f64 = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            data.push((f64::from(base) + n) as f32);
        }
    }

    let mut masks = Vec::new();
    let mut mask_objects = Vec::new();
    for oi in 0..objects.len() {
        let m: Vec<bool> = labels.iter().map(|l| *l == Some(oi)).collect();
        if m.contains(&true) {
            masks.push(m);
            mask_objects.push(oi);
        }
    }
    Ok(SynthFrame {
        features: DenseFeatureMap::new(h, w, c, data)?,
        masks: MaskSet::new(h, w, masks)?,
        camera: CameraFrame::new(h, w, depth, k, pose)?,
        mask_objects,
    })
}

pub fn generate(spec: &SyntheticSceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let boxes = place_objects(&mut rng, spec.object_count)?;
    let descriptors = orthonormal_descriptors(&mut rng, spec.object_count, spec.dim)?;
    let objects: Vec<SceneObject> = boxes
        .into_iter()
        .zip(descriptors)
        .enumerate()
        .map(|(i, ((min, max), descriptor))| SceneObject {
            label: format!("object_{i}"),
            min,
            max,
            descriptor,
        })
        .collect();
    let frames = par::map_range(spec.frame_count, |i| render_frame(spec, &objects, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticScene {
        spec: *spec,
        objects,
        frames,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestObject {
    pub label: String,
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub embedding: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub features: PathBuf,
    pub masks: PathBuf,
    pub camera: PathBuf,
    pub mask_objects: Vec<usize>,
}

/// Index of everything [`write_scene`] produced; paths are relative to the
/// output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub spec: SyntheticSceneSpec,
    pub objects: Vec<ManifestObject>,
    pub frames: Vec<ManifestFrame>,
}

pub const MANIFEST_NAME: &str = "scene.json";

/// Writes all frame inputs, object embeddings and `scene.json` into `dir`.
pub fn write_scene(scene: &SyntheticScene, dir: impl AsRef<Path>) -> Result<SceneManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut objects = Vec::new();
    for o in &scene.objects {
        let name = PathBuf::from(format!("{}.emb.f32", o.label));
        write_embedding(dir.join(&name), &o.label, &FeatureVector::new(o.descriptor.clone())?)?;
        objects.push(ManifestObject {
            label: o.label.clone(),
            min: o.min,
            max: o.max,
            embedding: name,
        });
    }
    let mut frames = Vec::new();
    for (i, f) in scene.frames.iter().enumerate() {
        let entry = ManifestFrame {
            features: PathBuf::from(format!("frame_{i:03}.feat.f32")),
            masks: PathBuf::from(format!("frame_{i:03}.masks.rle")),
            camera: PathBuf::from(format!("frame_{i:03}.camera.json")),
            mask_objects: f.mask_objects.clone(),
        };
        write_feature_map(dir.join(&entry.features), &f.features)?;
        write_masks(dir.join(&entry.masks), &f.masks, MaskEncoding::Rle)?;
        write_camera(dir.join(&entry.camera), &format!("frame_{i:03}.depth.f32"), &f.camera)?;
        frames.push(entry);
    }
    let manifest = SceneManifest {
        spec: scene.spec,
        objects,
        frames,
    };
    let path = dir.join(MANIFEST_NAME);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
