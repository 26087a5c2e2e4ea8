//! Semantic mapping engine built on mask-indexed feature storage.
//!
//! Dense per-pixel language-aligned features are collapsed into one descriptor
//! per class-agnostic mask (a [`MaskIndexedFrame`]: an `H x W` index map plus a
//! `K x C` feature table). Frames are lifted into 3D with depth and pose, and
//! their descriptors are fused across views into a small [`FeaturePool`] that
//! every point of a [`SemanticPointCloud`] references by integer index. Text
//! embeddings are matched against either representation by cosine similarity.
//!
//! Modules:
//!
//! - [`types`]: shared domain types and invariant validation.
//! - [`frame2d`]: bilinear upsampling, mask-average aggregation, pixel-to-mask
//!   assignment and frame construction.
//! - [`storage`]: storage-cost arithmetic, `.plaf2d` / `.plaf3d` containers and
//!   raw ingest formats.
//! - [`lift3d`]: back-projection, greedy descriptor fusion and voxel dedup.
//! - [`query`]: cosine scoring, thresholding / top-k selection and export.
//! - [`synth`]: deterministic synthetic scenes with known ground truth.
//!
//! Data-parallel loops use rayon when the `parallel` feature is enabled (the
//! default) and fall back to plain iterators otherwise. Results are identical
//! either way.

pub mod error;
pub mod frame2d;
pub mod lift3d;
mod par;
pub mod query;
pub mod storage;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use frame2d::{AssignmentPolicy, DenseReconstruction};
pub use lift3d::{BuildReport, FusionConfig, MapBuilder};
pub use query::{QueryResult, TextQuery};
pub use storage::StorageModel;
pub use types::{
    CameraFrame, DenseFeatureMap, FeaturePool, FeatureVector, Intrinsics, MaskIndexedFrame,
    MaskSet, Pose, SemanticPointCloud, Violation,
};
