//! Shared domain types.
//!
//! Every type here is immutable once built through its checked constructor and
//! can be shared freely between threads. `validate` style methods never abort:
//! they enumerate every violated invariant so callers can report all of them.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of masks a 16-bit index map can address (0 is background).
pub const MAX_MASKS: usize = u16::MAX as usize;

/// Tolerance on unit-norm pool descriptors.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

/// Tolerance on orthonormality of pose rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// A single violated invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ZeroDimension(&'static str),
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    TooManyMasks(usize),
    IndexOutOfRange {
        index: u16,
        mask_count: usize,
        first_pixel: usize,
        pixels: usize,
    },
    UnreferencedMaskId(usize),
    NonFiniteFeature {
        row: usize,
        col: usize,
    },
    NonUnitDescriptor {
        entry: usize,
        norm: f64,
    },
    ZeroObservationCount {
        entry: usize,
    },
    PoolRefOutOfRange {
        point: usize,
        reference: u32,
        pool_size: usize,
    },
    NonFinitePosition {
        point: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroDimension(what) => write!(f, "zero {what}"),
            Violation::ShapeMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what} length {found} does not match expected {expected}"),
            Violation::TooManyMasks(k) => {
                write!(f, "{k} masks exceed the 16-bit index capacity")
            }
            Violation::IndexOutOfRange {
                index,
                mask_count,
                first_pixel,
                pixels,
            } => write!(
                f,
                "index out of range: {index} > K={mask_count} at {pixels} pixel(s), first at {first_pixel}"
            ),
            Violation::UnreferencedMaskId(id) => write!(f, "unreferenced mask ID {id}"),
            Violation::NonFiniteFeature { row, col } => {
                write!(f, "non-finite feature at row {row}, column {col}")
            }
            Violation::NonUnitDescriptor { entry, norm } => {
                write!(f, "pool descriptor {entry} has norm {norm}, expected 1")
            }
            Violation::ZeroObservationCount { entry } => {
                write!(f, "pool entry {entry} has zero observations")
            }
            Violation::PoolRefOutOfRange {
                point,
                reference,
                pool_size,
            } => write!(
                f,
                "point {point} references pool entry {reference} but M={pool_size}"
            ),
            Violation::NonFinitePosition { point } => {
                write!(f, "point {point} has a non-finite position")
            }
        }
    }
}

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidInput(format!(
            "non-finite value at element {i}"
        ))),
        None => Ok(()),
    }
}

/// One `C`-dimensional embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("feature vector must have C >= 1".into()));
        }
        check_finite(&values)?;
        Ok(FeatureVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Unit-length copy, or `None` for the zero vector.
    pub fn normalized(&self) -> Option<FeatureVector> {
        normalized(&self.0).map(FeatureVector)
    }
}

impl AsRef<[f32]> for FeatureVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub(crate) fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalized(a: &[f32]) -> Option<Vec<f32>> {
    let n = norm(a);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(a.iter().map(|&x| (f64::from(x) / n) as f32).collect())
}

/// `height x width x dim` feature grid, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl DenseFeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::InvalidInput(format!(
                "feature map dimensions must be positive, got {height}x{width}x{dim}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(dim))
            .ok_or(Error::Overflow("feature map size"))?;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "feature map data",
                expected,
                found: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(DenseFeatureMap {
            height,
            width,
            dim,
            data,
        })
    }

    /// Builds a map by evaluating `f(row, col)` for every pixel.
    pub fn from_fn(
        height: usize,
        width: usize,
        dim: usize,
        mut f: impl FnMut(usize, usize) -> Vec<f32>,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * dim);
        for r in 0..height {
            for c in 0..width {
                let v = f(r, c);
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        what: "pixel feature",
                        expected: dim,
                        found: v.len(),
                    });
                }
                data.extend_from_slice(&v);
            }
        }
        Self::new(height, width, dim, data)
    }

    pub(crate) fn from_parts_unchecked(
        height: usize,
        width: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * dim);
        DenseFeatureMap {
            height,
            width,
            dim,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.dim;
        &self.data[start..start + self.dim]
    }
}

/// `K` binary `height x width` masks; every mask has at least one foreground pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    height: usize,
    width: usize,
    masks: Vec<Vec<bool>>,
}

impl MaskSet {
    pub fn new(height: usize, width: usize, masks: Vec<Vec<bool>>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        let pixels = height * width;
        for (k, m) in masks.iter().enumerate() {
            if m.len() != pixels {
                return Err(Error::DimensionMismatch {
                    what: "mask raster",
                    expected: pixels,
                    found: m.len(),
                });
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::EmptyMask { index: k });
            }
        }
        Ok(MaskSet {
            height,
            width,
            masks,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn mask(&self, k: usize) -> &[bool] {
        &self.masks[k]
    }

    pub fn masks(&self) -> &[Vec<bool>] {
        &self.masks
    }

    /// Foreground pixel count of every mask.
    pub fn areas(&self) -> Vec<usize> {
        self.masks
            .iter()
            .map(|m| m.iter().filter(|&&b| b).count())
            .collect()
    }
}

/// Mask-indexed semantic memory of one image: a 16-bit index per pixel
/// (0 = background, `1..=K` = mask ID) and one feature row per mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskIndexedFrame {
    height: usize,
    width: usize,
    dim: usize,
    index_map: Vec<u16>,
    table: Vec<f32>,
}

impl MaskIndexedFrame {
    /// Checked constructor; fails with every violated invariant.
    pub fn new(
        height: usize,
        width: usize,
        dim: usize,
        index_map: Vec<u16>,
        table: Vec<f32>,
    ) -> Result<Self> {
        let frame = Self::from_raw_parts(height, width, dim, index_map, table);
        let report = frame.validate();
        if report.is_empty() {
            Ok(frame)
        } else {
            Err(Error::Invalid(report))
        }
    }

    /// Assembles a frame without checking it. Use [`validate`](Self::validate)
    /// to inspect the result.
    pub fn from_raw_parts(
        height: usize,
        width: usize,
        dim: usize,
        index_map: Vec<u16>,
        table: Vec<f32>,
    ) -> Self {
        MaskIndexedFrame {
            height,
            width,
            dim,
            index_map,
            table,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of masks `K` (rows in the feature table).
    pub fn mask_count(&self) -> usize {
        self.table.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn index_map(&self) -> &[u16] {
        &self.index_map
    }

    pub fn table(&self) -> &[f32] {
        &self.table
    }

    /// Feature row of mask `id` (1-based).
    pub fn feature(&self, id: u16) -> &[f32] {
        let start = (usize::from(id) - 1) * self.dim;
        &self.table[start..start + self.dim]
    }

    /// Pixel count per mask ID; entry 0 counts background.
    pub fn id_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.mask_count() + 1];
        for &i in &self.index_map {
            if let Some(h) = hist.get_mut(usize::from(i)) {
                *h += 1;
            }
        }
        hist
    }

    /// Enumerates every violated invariant; empty iff the frame is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut report = Vec::new();
        if self.height == 0 {
            report.push(Violation::ZeroDimension("height"));
        }
        if self.width == 0 {
            report.push(Violation::ZeroDimension("width"));
        }
        if self.dim == 0 {
            report.push(Violation::ZeroDimension("feature dimension"));
        }
        let pixels = self.height * self.width;
        if self.index_map.len() != pixels {
            report.push(Violation::ShapeMismatch {
                what: "index map",
                expected: pixels,
                found: self.index_map.len(),
            });
        }
        if self.dim > 0 && !self.table.len().is_multiple_of(self.dim) {
            report.push(Violation::ShapeMismatch {
                what: "feature table",
                expected: self.mask_count() * self.dim,
                found: self.table.len(),
            });
        }
        let k = self.mask_count();
        if k > MAX_MASKS {
            report.push(Violation::TooManyMasks(k));
        }

        // Per out-of-range index value: (first pixel, count).
        let mut out_of_range: Vec<(u16, usize, usize)> = Vec::new();
        let mut seen = vec![false; k + 1];
        for (p, &i) in self.index_map.iter().enumerate() {
            let iu = usize::from(i);
            if iu > k {
                match out_of_range.iter_mut().find(|e| e.0 == i) {
                    Some(e) => e.2 += 1,
                    None => out_of_range.push((i, p, 1)),
                }
            } else {
                seen[iu] = true;
            }
        }
        out_of_range.sort_by_key(|e| e.0);
        for (index, first_pixel, count) in out_of_range {
            report.push(Violation::IndexOutOfRange {
                index,
                mask_count: k,
                first_pixel,
                pixels: count,
            });
        }
        for (id, &s) in seen.iter().enumerate().skip(1) {
            if !s {
                report.push(Violation::UnreferencedMaskId(id));
            }
        }
        if self.dim > 0 {
            for (row, values) in self.table.chunks(self.dim).enumerate() {
                for (col, v) in values.iter().enumerate() {
                    if !v.is_finite() {
                        report.push(Violation::NonFiniteFeature { row, col });
                    }
                }
            }
        }
        report
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "intrinsics need finite values and positive focal lengths, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Camera-frame point for pixel `(u, v)` at depth `d`, through the pixel center.
    pub fn unproject(&self, u: usize, v: usize, depth: f64) -> Vector3<f64> {
        let x = (u as f64 + 0.5 - self.cx) * depth / self.fx;
        let y = (v as f64 + 0.5 - self.cy) * depth / self.fy;
        Vector3::new(x, y, depth)
    }

    /// Continuous pixel coordinates `(x, y)` of a camera-frame point; the
    /// center of pixel `(u, v)` is `(u + 0.5, v + 0.5)`.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }
}

/// Rigid world-from-camera transform. Serialized as a row-major 4x4 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 4]; 4]", into = "[[f64; 4]; 4]")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("pose has non-finite entries".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if ortho > ROTATION_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "pose rotation is not orthonormal (max deviation {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "pose rotation has determinant {det}, expected +1"
            )));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::from(t),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Camera-frame point to world frame.
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World-frame point to camera frame.
    pub fn inverse_transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }
}

impl TryFrom<[[f64; 4]; 4]> for Pose {
    type Error = Error;

    fn try_from(rows: [[f64; 4]; 4]) -> Result<Self> {
        if rows[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidInput(format!(
                "pose bottom row must be [0, 0, 0, 1], got {:?}",
                rows[3]
            )));
        }
        let rotation = Matrix3::from_fn(|r, c| rows[r][c]);
        let translation = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
        Pose::new(rotation, translation)
    }
}

impl From<Pose> for [[f64; 4]; 4] {
    fn from(p: Pose) -> Self {
        let m = p.to_matrix();
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }
}

/// Depth image with intrinsics and pose for one view. Depth is in meters;
/// values `<= 0` or non-finite mark invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    height: usize,
    width: usize,
    depth: Vec<f32>,
    intrinsics: Intrinsics,
    pose: Pose,
}

impl CameraFrame {
    pub fn new(
        height: usize,
        width: usize,
        depth: Vec<f32>,
        intrinsics: Intrinsics,
        pose: Pose,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("depth image must be non-empty".into()));
        }
        if depth.len() != height * width {
            return Err(Error::DimensionMismatch {
                what: "depth image",
                expected: height * width,
                found: depth.len(),
            });
        }
        intrinsics.validate()?;
        Ok(CameraFrame {
            height,
            width,
            depth,
            intrinsics,
            pose,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> &[f32] {
        &self.depth
    }

    pub fn depth_at(&self, u: usize, v: usize) -> f32 {
        self.depth[v * self.width + u]
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }
}

/// Deduplicated unit-norm descriptors with per-entry observation counts.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePool {
    dim: usize,
    descriptors: Vec<f32>,
    counts: Vec<u32>,
}

impl FeaturePool {
    pub fn empty(dim: usize) -> Self {
        FeaturePool {
            dim,
            descriptors: Vec::new(),
            counts: Vec::new(),
        }
    }

    pub fn new(dim: usize, descriptors: Vec<f32>, counts: Vec<u32>) -> Result<Self> {
        let pool = Self::from_raw_parts(dim, descriptors, counts);
        let report = pool.validate();
        if report.is_empty() {
            Ok(pool)
        } else {
            Err(Error::Invalid(report))
        }
    }

    pub fn from_raw_parts(dim: usize, descriptors: Vec<f32>, counts: Vec<u32>) -> Self {
        FeaturePool {
            dim,
            descriptors,
            counts,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn descriptor(&self, m: usize) -> &[f32] {
        &self.descriptors[m * self.dim..(m + 1) * self.dim]
    }

    pub fn descriptors(&self) -> &[f32] {
        &self.descriptors
    }

    pub fn count(&self, m: usize) -> u32 {
        self.counts[m]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub(crate) fn push(&mut self, descriptor: &[f32], count: u32) -> usize {
        debug_assert_eq!(descriptor.len(), self.dim);
        self.descriptors.extend_from_slice(descriptor);
        self.counts.push(count);
        self.counts.len() - 1
    }

    pub(crate) fn replace(&mut self, m: usize, descriptor: &[f32], count: u32) {
        self.descriptors[m * self.dim..(m + 1) * self.dim].copy_from_slice(descriptor);
        self.counts[m] = count;
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut report = Vec::new();
        if self.dim == 0 {
            report.push(Violation::ZeroDimension("feature dimension"));
            return report;
        }
        if self.descriptors.len() != self.counts.len() * self.dim {
            report.push(Violation::ShapeMismatch {
                what: "pool descriptors",
                expected: self.counts.len() * self.dim,
                found: self.descriptors.len(),
            });
            return report;
        }
        for m in 0..self.len() {
            let d = self.descriptor(m);
            if let Some(col) = d.iter().position(|v| !v.is_finite()) {
                report.push(Violation::NonFiniteFeature { row: m, col });
                continue;
            }
            let n = norm(d);
            if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
                report.push(Violation::NonUnitDescriptor { entry: m, norm: n });
            }
            if self.counts[m] == 0 {
                report.push(Violation::ZeroObservationCount { entry: m });
            }
        }
        report
    }
}

/// On-disk width of a point's pool reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefWidth {
    U16,
    U32,
}

impl RefWidth {
    /// 16-bit while the pool fits, 32-bit once `M > 65535`.
    pub fn for_pool_size(m: usize) -> Self {
        if m > usize::from(u16::MAX) {
            RefWidth::U32
        } else {
            RefWidth::U16
        }
    }

    pub fn bytes(self) -> u64 {
        match self {
            RefWidth::U16 => 2,
            RefWidth::U32 => 4,
        }
    }
}

/// Points carrying an integer reference into a [`FeaturePool`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SemanticPointCloud {
    positions: Vec<[f32; 3]>,
    refs: Vec<u32>,
}

impl SemanticPointCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(positions: Vec<[f32; 3]>, refs: Vec<u32>) -> Result<Self> {
        if positions.len() != refs.len() {
            return Err(Error::DimensionMismatch {
                what: "point references",
                expected: positions.len(),
                found: refs.len(),
            });
        }
        Ok(SemanticPointCloud { positions, refs })
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn positions(&self) -> &[[f32; 3]] {
        &self.positions
    }

    pub fn refs(&self) -> &[u32] {
        &self.refs
    }

    pub(crate) fn push(&mut self, position: [f32; 3], pool_ref: u32) -> usize {
        self.positions.push(position);
        self.refs.push(pool_ref);
        self.refs.len() - 1
    }

    pub(crate) fn set(&mut self, i: usize, position: [f32; 3], pool_ref: u32) {
        self.positions[i] = position;
        self.refs[i] = pool_ref;
    }

    /// Checks every reference against a pool of `pool_size` entries.
    pub fn validate(&self, pool_size: usize) -> Vec<Violation> {
        let mut report = Vec::new();
        for (i, (&r, p)) in self.refs.iter().zip(&self.positions).enumerate() {
            if r as usize >= pool_size {
                report.push(Violation::PoolRefOutOfRange {
                    point: i,
                    reference: r,
                    pool_size,
                });
            }
            if !p.iter().all(|c| c.is_finite()) {
                report.push(Violation::NonFinitePosition { point: i });
            }
        }
        report
    }
}
